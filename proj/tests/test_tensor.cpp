#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "telephonetic/tensor.hpp"

using namespace telephonetic;

namespace {

// ---- Reference implementations (independent of the library internals) ----

// Naive triple-loop matrix product.
std::vector<double> oracle_matmul(const std::vector<double>& a, std::size_t m, std::size_t k,
                                  const std::vector<double>& b, std::size_t n) {
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
            out[i * n + j] = acc;
        }
    return out;
}

// Sliding-window correlation followed by max over positions, one value per
// output channel. Filter laid out as [w][d][f].
std::vector<double> oracle_conv_maxpool(const std::vector<double>& x, std::size_t len, std::size_t d,
                                        const std::vector<double>& filt, std::size_t w, std::size_t f) {
    std::vector<double> out(f);
    for (std::size_t j = 0; j < f; ++j) {
        double best = -1e300;
        for (std::size_t p = 0; p + w <= len; ++p) {
            double s = 0.0;
            for (std::size_t t = 0; t < w; ++t)
                for (std::size_t c = 0; c < d; ++c) s += x[(p + t) * d + c] * filt[(t * d + c) * f + j];
            best = std::max(best, s);
        }
        out[j] = best;
    }
    return out;
}

// Direct negative log softmax (safe only for small logits; used as an oracle
// on bounded random inputs).
double oracle_nll(const std::vector<double>& logits, std::size_t target) {
    double z = 0.0;
    for (double v : logits) z += std::exp(v);
    return std::log(z) - logits[target];
}

// Central-difference gradient check: rebuilds the graph per perturbation on a
// non-recording tape and compares against one analytic backward pass.
void check_gradients(const std::vector<TensorPtr>& params,
                     const std::function<TensorPtr(Tape&)>& build, double tol = 1e-6,
                     double h = 1e-5) {
    Tape tape;
    auto loss = build(tape);
    REQUIRE(loss->size() == 1);
    tape.backward(loss);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        INFO("parameter " << pi << " shape " << p->shape_str());
        REQUIRE(p->has_grad());
        for (std::size_t i = 0; i < p->size(); ++i) {
            double x0 = p->data[i];
            p->data[i] = x0 + h;
            Tape fwd1(false);
            double fp = build(fwd1)->data[0];
            p->data[i] = x0 - h;
            Tape fwd2(false);
            double fm = build(fwd2)->data[0];
            p->data[i] = x0;
            double numeric = (fp - fm) / (2.0 * h);
            double analytic = p->grad[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
            INFO("entry " << i << ": analytic " << analytic << " vs numeric " << numeric);
            REQUIRE(std::abs(numeric - analytic) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("shape validation at construction", "[tensor]") {
    REQUIRE_THROWS_AS(Tensor::from({2, 3}, {1.0, 2.0}), shape_error);
    REQUIRE_THROWS_AS(Tensor::zeros({2, 0, 3}), shape_error);
    auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t->shape_str() == "[2x3]");
    REQUIRE(t->at(1, 2) == 6.0);
    REQUIRE_FALSE(t->has_grad());
    t->ensure_grad();
    REQUIRE(t->grad.size() == 6);
}

TEST_CASE("matmul matches the triple-loop reference", "[tensor]") {
    Rng rng(12345);
    std::size_t m = 7, k = 5, n = 9;
    auto a = Tensor::uniform({m, k}, rng, -2.0, 2.0);
    auto b = Tensor::uniform({k, n}, rng, -2.0, 2.0);
    Tape tape(false);
    auto c = tape.matmul(a, b);
    auto want = oracle_matmul(a->data, m, k, b->data, n);
    REQUIRE(c->shape == std::vector<std::size_t>{m, n});
    for (std::size_t i = 0; i < want.size(); ++i)
        REQUIRE(std::abs(c->data[i] - want[i]) < 1e-12);

    SECTION("matrix-vector form") {
        auto v = Tensor::uniform({k}, rng, -1.0, 1.0);
        auto mv = tape.matmul(a, v);
        auto want_v = oracle_matmul(a->data, m, k, v->data, 1);
        REQUIRE(mv->shape == std::vector<std::size_t>{m});
        for (std::size_t i = 0; i < m; ++i) REQUIRE(std::abs(mv->data[i] - want_v[i]) < 1e-12);
    }

    SECTION("shape mismatch reports both operand shapes") {
        auto bad = Tensor::zeros({4, 2});
        try {
            tape.matmul(a, bad);
            FAIL("expected shape_error");
        } catch (const shape_error& e) {
            std::string msg = e.what();
            REQUIRE(msg.find("[7x5]") != std::string::npos);
            REQUIRE(msg.find("[4x2]") != std::string::npos);
        }
    }
}

TEST_CASE("matmul gradients match central differences", "[tensor]") {
    Rng rng(777);
    auto a = Tensor::uniform({3, 4}, rng, -1.0, 1.0, true);
    auto b = Tensor::uniform({4, 2}, rng, -1.0, 1.0, true);
    auto x = Tensor::uniform({4}, rng, -1.0, 1.0, true);
    check_gradients({a, b}, [&](Tape& t) { return t.sum(t.tanh(t.matmul(a, b))); });
    a->zero_grad();
    check_gradients({a, x}, [&](Tape& t) { return t.sum(t.sigmoid(t.matmul(a, x))); });
}

TEST_CASE("elementwise ops: values and gradients", "[tensor]") {
    Rng rng(31);
    auto a = Tensor::uniform({6}, rng, -1.5, 1.5, true);
    auto b = Tensor::uniform({6}, rng, -1.5, 1.5, true);

    SECTION("forward values") {
        Tape t(false);
        auto s = t.add(a, b);
        auto d = t.sub(a, b);
        auto p = t.mul(a, b);
        auto af = t.affine(a, 2.5, -0.25);
        for (std::size_t i = 0; i < 6; ++i) {
            REQUIRE(s->data[i] == a->data[i] + b->data[i]);
            REQUIRE(d->data[i] == a->data[i] - b->data[i]);
            REQUIRE(p->data[i] == a->data[i] * b->data[i]);
            REQUIRE(af->data[i] == 2.5 * a->data[i] - 0.25);
        }
        auto sg = t.sigmoid(a);
        auto th = t.tanh(a);
        for (std::size_t i = 0; i < 6; ++i) {
            REQUIRE(std::abs(sg->data[i] - 1.0 / (1.0 + std::exp(-a->data[i]))) < 1e-15);
            REQUIRE(std::abs(th->data[i] - std::tanh(a->data[i])) < 1e-15);
        }
        REQUIRE_THROWS_AS(t.add(a, Tensor::zeros({5})), shape_error);
    }

    SECTION("sigmoid is stable at extreme inputs") {
        Tape t(false);
        auto x = Tensor::from({4}, {-745.0, -60.0, 60.0, 745.0});
        auto y = t.sigmoid(x);
        REQUIRE(y->data[0] >= 0.0);
        REQUIRE(y->data[0] < 1e-300);
        REQUIRE(y->data[3] == 1.0);
        for (double v : y->data) REQUIRE(std::isfinite(v));
    }

    SECTION("combined gradient check") {
        check_gradients({a, b}, [&](Tape& t) {
            auto u = t.mul(t.sigmoid(a), t.tanh(b));
            auto v = t.sub(t.affine(a, 0.5, 1.0), b);
            return t.sum(t.add(u, t.mul(v, v)));
        });
    }

    SECTION("relu values and subgradient away from the kink") {
        auto c = Tensor::from({4}, {-2.0, -0.5, 0.75, 3.0}, true);
        Tape t;
        auto y = t.relu(c);
        REQUIRE(y->data == std::vector<double>{0.0, 0.0, 0.75, 3.0});
        check_gradients({c}, [&](Tape& tt) { return tt.sum(tt.relu(c)); });
    }
}

TEST_CASE("conv1d_maxpool matches the sliding-window reference", "[tensor]") {
    Rng rng(99);
    std::size_t len = 11, d = 3, w = 4, f = 5;
    auto x = Tensor::uniform({len, d}, rng, -1.0, 1.0, true);
    auto filt = Tensor::uniform({w, d, f}, rng, -1.0, 1.0, true);
    Tape tape;
    auto out = tape.conv1d_maxpool(x, filt);
    auto want = oracle_conv_maxpool(x->data, len, d, filt->data, w, f);
    REQUIRE(out->shape == std::vector<std::size_t>{f});
    for (std::size_t j = 0; j < f; ++j) REQUIRE(std::abs(out->data[j] - want[j]) < 1e-12);

    SECTION("gradients match central differences") {
        check_gradients({x, filt}, [&](Tape& t) { return t.sum(t.tanh(t.conv1d_maxpool(x, filt))); });
    }

    SECTION("width exceeding the input is a configuration error") {
        auto small = Tensor::zeros({3, d});
        REQUIRE_THROWS_AS(tape.conv1d_maxpool(small, filt), config_error);
    }

    SECTION("channel mismatch is a shape error") {
        auto badf = Tensor::zeros({w, d + 1, f});
        REQUIRE_THROWS_AS(tape.conv1d_maxpool(x, badf), shape_error);
    }
}

TEST_CASE("maxpool ties route gradient to the earliest window", "[tensor]") {
    auto x = Tensor::from({5, 1}, {1, 1, 1, 1, 1}, true);
    auto filt = Tensor::from({2, 1, 1}, {1, 1}, true);
    Tape tape;
    auto out = tape.conv1d_maxpool(x, filt);
    REQUIRE(out->data[0] == 2.0);
    tape.backward(tape.sum(out));
    REQUIRE(x->grad == std::vector<double>{1, 1, 0, 0, 0});
    REQUIRE(filt->grad == std::vector<double>{1, 1});
}

TEST_CASE("embed_rows gathers rows and accumulates repeats", "[tensor]") {
    auto table = Tensor::from({4, 3}, {0, 1, 2, 10, 11, 12, 20, 21, 22, 30, 31, 32}, true);
    Tape tape;
    auto out = tape.embed_rows(table, {2, 0, 2});
    REQUIRE(out->shape == std::vector<std::size_t>{3, 3});
    REQUIRE(out->data == std::vector<double>{20, 21, 22, 0, 1, 2, 20, 21, 22});
    tape.backward(tape.sum(out));
    REQUIRE(table->grad == std::vector<double>{1, 1, 1, 0, 0, 0, 2, 2, 2, 0, 0, 0});
    REQUIRE_THROWS_AS(tape.embed_rows(table, {4}), contract_error);
    REQUIRE_THROWS_AS(tape.embed_rows(table, {-1}), contract_error);
}

TEST_CASE("nll_from_logits matches the direct formula", "[tensor]") {
    Rng rng(40);
    auto logits = Tensor::uniform({12}, rng, -3.0, 3.0, true);
    Tape tape;
    auto loss = tape.nll_from_logits(logits, 7);
    REQUIRE(std::abs(loss->data[0] - oracle_nll(logits->data, 7)) < 1e-12);

    SECTION("large logits stay finite") {
        auto big = Tensor::from({3}, {1000.0, 1001.0, 999.0});
        Tape t(false);
        auto l = t.nll_from_logits(big, 0);
        // Shift-invariant: same as logits {0, 1, -1} with target 0.
        REQUIRE(std::abs(l->data[0] - oracle_nll({0.0, 1.0, -1.0}, 0)) < 1e-12);
    }

    SECTION("gradient equals softmax minus one-hot") {
        tape.backward(loss);
        double z = 0.0;
        for (double v : logits->data) z += std::exp(v);
        for (std::size_t i = 0; i < logits->size(); ++i) {
            double want = std::exp(logits->data[i]) / z - (i == 7 ? 1.0 : 0.0);
            REQUIRE(std::abs(logits->grad[i] - want) < 1e-12);
        }
    }

    SECTION("finite differences agree") {
        auto l2 = Tensor::uniform({6}, rng, -2.0, 2.0, true);
        check_gradients({l2}, [&](Tape& t) { return t.nll_from_logits(l2, 2); });
    }

    REQUIRE_THROWS_AS(tape.nll_from_logits(logits, 12), contract_error);
}

TEST_CASE("slice and concat round-trip with gradients", "[tensor]") {
    Rng rng(5);
    auto a = Tensor::uniform({8}, rng, -1.0, 1.0, true);
    Tape tape(false);
    auto left = tape.slice(a, 0, 3);
    auto right = tape.slice(a, 3, 5);
    auto back = tape.concat({left, right});
    REQUIRE(back->data == a->data);
    REQUIRE_THROWS_AS(tape.slice(a, 6, 3), shape_error);

    check_gradients({a}, [&](Tape& t) {
        auto mid = t.slice(a, 2, 4);
        auto both = t.concat({t.tanh(mid), t.slice(a, 0, 2)});
        return t.sum(t.mul(both, both));
    });
}

TEST_CASE("fan-out accumulates gradients additively", "[tensor]") {
    auto x = Tensor::from({3}, {0.5, -1.25, 2.0}, true);
    Tape tape;
    auto y = tape.sum(tape.mul(x, x));  // x used twice by the same op
    tape.backward(y);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(std::abs(x->grad[i] - 2.0 * x->data[i]) < 1e-12);

    SECTION("three consumers") {
        auto z = Tensor::from({2}, {0.3, 0.7}, true);
        check_gradients({z}, [&](Tape& t) {
            auto s1 = t.sigmoid(z);
            auto s2 = t.tanh(z);
            auto s3 = t.affine(z, 3.0, 0.0);
            return t.sum(t.add(t.mul(s1, s2), t.mul(s3, z)));
        });
    }
}

TEST_CASE("lstm_step matches a scalar reference", "[tensor]") {
    Rng rng(2024);
    std::size_t hidden = 3, din = 2;
    LstmCell cell{Tensor::uniform({4 * hidden, din}, rng, -0.8, 0.8, true),
                  Tensor::uniform({4 * hidden, hidden}, rng, -0.8, 0.8, true),
                  Tensor::uniform({4 * hidden}, rng, -0.8, 0.8, true)};
    auto x = Tensor::uniform({din}, rng, -1.0, 1.0, true);
    auto h = Tensor::uniform({hidden}, rng, -1.0, 1.0, true);
    auto c = Tensor::uniform({hidden}, rng, -1.0, 1.0, true);

    // Reference: explicit per-gate scalar computation.
    std::vector<double> z(4 * hidden, 0.0);
    for (std::size_t r = 0; r < 4 * hidden; ++r) {
        double acc = cell.b->data[r];
        for (std::size_t j = 0; j < din; ++j) acc += cell.W->data[r * din + j] * x->data[j];
        for (std::size_t j = 0; j < hidden; ++j) acc += cell.U->data[r * hidden + j] * h->data[j];
        z[r] = acc;
    }
    std::vector<double> want_h(hidden), want_c(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        double ig = 1.0 / (1.0 + std::exp(-z[j]));
        double fg = 1.0 / (1.0 + std::exp(-z[hidden + j]));
        double gg = std::tanh(z[2 * hidden + j]);
        double og = 1.0 / (1.0 + std::exp(-z[3 * hidden + j]));
        want_c[j] = fg * c->data[j] + ig * gg;
        want_h[j] = og * std::tanh(want_c[j]);
    }

    Tape tape(false);
    auto [hn, cn] = lstm_step(tape, x, h, c, cell);
    for (std::size_t j = 0; j < hidden; ++j) {
        REQUIRE(std::abs(hn->data[j] - want_h[j]) < 1e-12);
        REQUIRE(std::abs(cn->data[j] - want_c[j]) < 1e-12);
    }

    SECTION("gradients through one step") {
        check_gradients({cell.W, cell.U, cell.b, x, h, c}, [&](Tape& t) {
            auto [h2, c2] = lstm_step(t, x, h, c, cell);
            return t.sum(t.add(h2, t.tanh(c2)));
        });
    }

    SECTION("shape guards") {
        LstmCell bad = cell;
        bad.b = Tensor::zeros({4 * hidden + 1});
        Tape t(false);
        REQUIRE_THROWS_AS(lstm_step(t, x, h, c, bad), shape_error);
    }
}

TEST_CASE("highway layer matches a scalar reference", "[tensor]") {
    Rng rng(808);
    std::size_t d = 4;
    HighwayLayer layer{Tensor::uniform({d, d}, rng, -0.7, 0.7, true),
                       Tensor::uniform({d}, rng, -0.7, 0.7, true),
                       Tensor::uniform({d, d}, rng, -0.7, 0.7, true),
                       Tensor::uniform({d}, rng, -0.7, 0.7, true)};
    auto x = Tensor::uniform({d}, rng, -1.0, 1.0, true);

    std::vector<double> want(d);
    for (std::size_t i = 0; i < d; ++i) {
        double lin = layer.b->data[i], gate = layer.bt->data[i];
        for (std::size_t j = 0; j < d; ++j) {
            lin += layer.W->data[i * d + j] * x->data[j];
            gate += layer.Wt->data[i * d + j] * x->data[j];
        }
        double t = 1.0 / (1.0 + std::exp(-gate));
        double g = lin > 0.0 ? lin : 0.0;
        want[i] = t * g + (1.0 - t) * x->data[i];
    }

    Tape tape(false);
    auto y = highway(tape, x, layer);
    for (std::size_t i = 0; i < d; ++i) REQUIRE(std::abs(y->data[i] - want[i]) < 1e-12);

    check_gradients({layer.W, layer.b, layer.Wt, layer.bt, x}, [&](Tape& t) {
        return t.sum(t.tanh(highway(t, x, layer)));
    });
}

TEST_CASE("backward contract checks", "[tensor]") {
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    Tape off(false);
    auto y = off.mul(x, x);
    REQUIRE_THROWS_AS(off.backward(off.sum(y)), contract_error);
    REQUIRE(off.op_count() == 0);

    Tape on;
    auto v = on.mul(x, x);
    REQUIRE_THROWS_AS(on.backward(v), contract_error);  // non-scalar loss
}

TEST_CASE("non-recording tape computes identical forward values", "[tensor]") {
    Rng rng(55);
    auto a = Tensor::uniform({5, 5}, rng, -1.0, 1.0, true);
    auto v = Tensor::uniform({5}, rng, -1.0, 1.0, true);
    Tape rec;
    Tape fwd(false);
    auto y1 = rec.tanh(rec.matmul(a, v));
    auto y2 = fwd.tanh(fwd.matmul(a, v));
    REQUIRE(y1->data == y2->data);
    REQUIRE(rec.op_count() == 2);
    REQUIRE(fwd.op_count() == 0);
}

TEST_CASE("repeated runs are bit-identical", "[tensor]") {
    auto run = [] {
        Rng rng(4242);
        auto w = Tensor::uniform({6, 6}, rng, -0.5, 0.5, true);
        auto x = Tensor::uniform({6}, rng, -1.0, 1.0, true);
        Tape tape;
        auto loss = tape.sum(tape.tanh(tape.matmul(w, tape.sigmoid(tape.matmul(w, x)))));
        tape.backward(loss);
        auto out = w->grad;
        out.push_back(loss->data[0]);
        return out;
    };
    REQUIRE(run() == run());
}
