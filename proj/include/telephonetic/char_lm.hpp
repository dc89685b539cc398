#pragma once

// Character-aware masked word model: character CNN → highway stack → stacked
// BiLSTM → vocabulary softmax at one target position per example. Training
// masks a single randomly chosen word per sentence per epoch and minimizes its
// negative log-likelihood; evaluation reports pseudo-perplexity with every
// position masked once.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "telephonetic/corpus.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/parallel.hpp"
#include "telephonetic/rng.hpp"
#include "telephonetic/tensor.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

struct ModelConfig {
    std::size_t d_char = 16;
    // (width, count) per convolutional filter bank.
    std::vector<std::pair<std::size_t, std::size_t>> filters = {{1, 25}, {2, 50},  {3, 75},
                                                                {4, 100}, {5, 125}, {6, 150}};
    std::size_t n_highway = 2;
    std::size_t n_bilstm = 2;
    std::size_t d_hidden = 150;
    std::size_t max_word_len = 21;
    std::size_t n_chars = 0;  // filled from the character vocabulary
    std::size_t n_words = 0;  // filled from the word vocabulary

    // Concatenated CNN output width == highway width == BiLSTM input width.
    std::size_t conv_dim() const {
        std::size_t total = 0;
        for (const auto& [w, c] : filters) total += c;
        return total;
    }

    void validate() const {
        if (d_char == 0 || d_hidden == 0 || n_highway == 0 || n_bilstm == 0)
            throw config_error("model dimensions must be positive");
        if (filters.empty()) throw config_error("model needs at least one filter bank");
        for (const auto& [w, c] : filters) {
            if (w == 0 || c == 0) throw config_error("filter widths and counts must be positive");
            if (w > max_word_len)
                throw config_error("filter width " + std::to_string(w) +
                                   " exceeds max word length " + std::to_string(max_word_len));
        }
        if (max_word_len < 3) throw config_error("max word length must be >= 3");
        if (n_chars == 0 || n_words == 0)
            throw config_error("vocabulary sizes must be set before building the model");
    }

    bool operator==(const ModelConfig&) const = default;

    std::string serialize() const {
        std::string f;
        for (std::size_t i = 0; i < filters.size(); ++i) {
            if (i) f += ",";
            f += std::to_string(filters[i].first) + ":" + std::to_string(filters[i].second);
        }
        return "d_char=" + std::to_string(d_char) + " filters=" + f +
               " n_highway=" + std::to_string(n_highway) + " n_bilstm=" + std::to_string(n_bilstm) +
               " d_hidden=" + std::to_string(d_hidden) +
               " max_word_len=" + std::to_string(max_word_len) +
               " n_chars=" + std::to_string(n_chars) + " n_words=" + std::to_string(n_words);
    }

    static ModelConfig deserialize(std::string_view text, const std::string& context) {
        ModelConfig cfg;
        cfg.filters.clear();
        for (const auto& field : split_ws(text)) {
            auto eq = field.find('=');
            if (eq == std::string::npos)
                throw format_error(context + ": bad config field '" + field + "'");
            std::string key = field.substr(0, eq);
            std::string val = field.substr(eq + 1);
            if (key == "filters") {
                for (const auto& pair : split(val, ',')) {
                    auto colon = pair.find(':');
                    if (colon == std::string::npos)
                        throw format_error(context + ": bad filter entry '" + pair + "'");
                    cfg.filters.emplace_back(
                        static_cast<std::size_t>(parse_int(pair.substr(0, colon), context)),
                        static_cast<std::size_t>(parse_int(pair.substr(colon + 1), context)));
                }
            } else {
                std::size_t v = static_cast<std::size_t>(parse_int(val, context));
                if (key == "d_char") cfg.d_char = v;
                else if (key == "n_highway") cfg.n_highway = v;
                else if (key == "n_bilstm") cfg.n_bilstm = v;
                else if (key == "d_hidden") cfg.d_hidden = v;
                else if (key == "max_word_len") cfg.max_word_len = v;
                else if (key == "n_chars") cfg.n_chars = v;
                else if (key == "n_words") cfg.n_words = v;
                else throw format_error(context + ": unknown config key '" + key + "'");
            }
        }
        cfg.validate();
        return cfg;
    }
};

struct ModelParams {
    ModelConfig config;
    TensorPtr char_emb;               // [n_chars × d_char]
    std::vector<TensorPtr> conv_w;    // per bank: [width × d_char × count]
    std::vector<TensorPtr> conv_b;    // per bank: [count]
    std::vector<HighwayLayer> highways;
    struct BiLayer {
        LstmCell fwd, bwd;
    };
    std::vector<BiLayer> lstm;
    TensorPtr out_w;                  // [n_words × 2·d_hidden]
    TensorPtr out_b;                  // [n_words]

    // Fixed traversal order; the checkpoint manifest, the optimizer state and
    // the initializer all follow it.
    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        fn("char_emb", char_emb);
        for (std::size_t k = 0; k < conv_w.size(); ++k) {
            fn("conv" + std::to_string(k) + ".w", conv_w[k]);
            fn("conv" + std::to_string(k) + ".b", conv_b[k]);
        }
        for (std::size_t k = 0; k < highways.size(); ++k) {
            std::string base = "highway" + std::to_string(k);
            fn(base + ".w", highways[k].W);
            fn(base + ".b", highways[k].b);
            fn(base + ".wt", highways[k].Wt);
            fn(base + ".bt", highways[k].bt);
        }
        for (std::size_t k = 0; k < lstm.size(); ++k) {
            std::string base = "lstm" + std::to_string(k);
            fn(base + ".fwd.w", lstm[k].fwd.W);
            fn(base + ".fwd.u", lstm[k].fwd.U);
            fn(base + ".fwd.b", lstm[k].fwd.b);
            fn(base + ".bwd.w", lstm[k].bwd.W);
            fn(base + ".bwd.u", lstm[k].bwd.U);
            fn(base + ".bwd.b", lstm[k].bwd.b);
        }
        fn("out.w", out_w);
        fn("out.b", out_b);
    }

    std::vector<std::pair<std::string, TensorPtr>> named_params() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        for_each_param([&](const std::string& name, const TensorPtr& t) { out.emplace_back(name, t); });
        return out;
    }

    std::size_t n_parameters() const {
        std::size_t n = 0;
        for_each_param([&](const std::string&, const TensorPtr& t) { n += t->size(); });
        return n;
    }

    bool finite() const {
        bool ok = true;
        for_each_param([&](const std::string&, const TensorPtr& t) {
            for (double v : t->data)
                if (!std::isfinite(v)) ok = false;
        });
        return ok;
    }

    ModelParams clone() const {
        ModelParams c;
        c.config = config;
        c.char_emb = char_emb->clone_detached();
        for (const auto& t : conv_w) c.conv_w.push_back(t->clone_detached());
        for (const auto& t : conv_b) c.conv_b.push_back(t->clone_detached());
        for (const auto& h : highways)
            c.highways.push_back({h.W->clone_detached(), h.b->clone_detached(),
                                  h.Wt->clone_detached(), h.bt->clone_detached()});
        for (const auto& l : lstm)
            c.lstm.push_back({LstmCell{l.fwd.W->clone_detached(), l.fwd.U->clone_detached(),
                                       l.fwd.b->clone_detached()},
                              LstmCell{l.bwd.W->clone_detached(), l.bwd.U->clone_detached(),
                                       l.bwd.b->clone_detached()}});
        c.out_w = out_w->clone_detached();
        c.out_b = out_b->clone_detached();
        return c;
    }
};

namespace detail {

inline ModelParams build_params(const ModelConfig& cfg, Rng* rng) {
    cfg.validate();
    const double r = 0.05;  // weight init range
    auto weight = [&](std::vector<std::size_t> shape) {
        return rng ? Tensor::uniform(std::move(shape), *rng, -r, r, true)
                   : Tensor::zeros(std::move(shape), true);
    };
    auto bias = [&](std::size_t n) { return Tensor::zeros({n}, true); };

    ModelParams p;
    p.config = cfg;
    p.char_emb = weight({cfg.n_chars, cfg.d_char});
    for (const auto& [w, c] : cfg.filters) {
        p.conv_w.push_back(weight({w, cfg.d_char, c}));
        p.conv_b.push_back(bias(c));
    }
    const std::size_t F = cfg.conv_dim();
    for (std::size_t k = 0; k < cfg.n_highway; ++k) {
        HighwayLayer h{weight({F, F}), bias(F), weight({F, F}), bias(F)};
        // Carry-biased gates keep early training close to the identity.
        if (rng)
            for (double& v : h.bt->data) v = -2.0;
        p.highways.push_back(std::move(h));
    }
    const std::size_t H = cfg.d_hidden;
    for (std::size_t k = 0; k < cfg.n_bilstm; ++k) {
        std::size_t d_in = k == 0 ? F : 2 * H;
        ModelParams::BiLayer layer{LstmCell{weight({4 * H, d_in}), weight({4 * H, H}), bias(4 * H)},
                                   LstmCell{weight({4 * H, d_in}), weight({4 * H, H}), bias(4 * H)}};
        if (rng) {   // positive forget-gate bias (second gate block)
            for (std::size_t i = H; i < 2 * H; ++i) layer.fwd.b->data[i] = 1.0;
            for (std::size_t i = H; i < 2 * H; ++i) layer.bwd.b->data[i] = 1.0;
        }
        p.lstm.push_back(std::move(layer));
    }
    p.out_w = weight({cfg.n_words, 2 * H});
    p.out_b = bias(cfg.n_words);
    return p;
}

}  // namespace detail

// Random initialization: weights uniform in ±0.05 (drawn in manifest order),
// biases zero except the LSTM forget gates (+1) and highway transform gates
// (−2).
inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
    return detail::build_params(cfg, &rng);
}

// All-zero parameters: the output head then scores every word equally, so the
// softmax is exactly uniform — a useful analytic baseline.
inline ModelParams zero_params(const ModelConfig& cfg) { return detail::build_params(cfg, nullptr); }

// One training/evaluation example: a char-encoded sentence with exactly one
// target position (masked with probability p_m) and the target's word id.
struct MaskedExample {
    std::vector<std::vector<int>> char_ids;  // [T][max_word_len]
    std::size_t target = 0;
    int target_word = 0;
    bool masked = true;
};

inline MaskedExample make_masked_example(const Sentence& sentence, const WordVocab& words,
                                         const CharVocab& chars, std::size_t max_word_len, Rng& rng,
                                         double p_m) {
    if (sentence.tokens.empty()) throw contract_error("cannot mask an empty sentence");
    if (p_m < 0.0 || p_m > 1.0) throw config_error("masking probability must lie in [0,1]");
    MaskedExample ex;
    ex.target = static_cast<std::size_t>(rng.uniform_int(sentence.tokens.size()));
    ex.masked = rng.bernoulli(p_m);
    ex.char_ids.reserve(sentence.tokens.size());
    for (const auto& tok : sentence.tokens) ex.char_ids.push_back(chars.encode_chars(tok, max_word_len));
    if (ex.masked) ex.char_ids[ex.target] = chars.encode_chars(WordVocab::MASK_TOKEN, max_word_len);
    ex.target_word = words.id(sentence.tokens[ex.target]);
    return ex;
}

// --- forward pass ---------------------------------------------------------

// Char CNN + highway stack for one word: embed characters, run every filter
// bank with max-over-time pooling, tanh(pool + bias), concatenate, then the
// highway layers.
inline TensorPtr word_repr(Tape& tape, const ModelParams& p, const std::vector<int>& char_ids) {
    auto chars = tape.embed_rows(p.char_emb, char_ids);
    std::vector<TensorPtr> pooled;
    pooled.reserve(p.conv_w.size());
    for (std::size_t k = 0; k < p.conv_w.size(); ++k) {
        auto c = tape.conv1d_maxpool(chars, p.conv_w[k]);
        pooled.push_back(tape.tanh(tape.add(c, p.conv_b[k])));
    }
    auto x = pooled.size() == 1 ? pooled[0] : tape.concat(pooled);
    for (const auto& h : p.highways) x = highway(tape, x, h);
    return x;
}

// Stacked BiLSTM over per-word vectors; returns the top layer's concatenated
// forward/backward state at every position. Both directions recurse over the
// entire sequence, mask token included.
inline std::vector<TensorPtr> bilstm_states(Tape& tape, const ModelParams& p,
                                            std::vector<TensorPtr> xs) {
    const std::size_t T = xs.size();
    const std::size_t H = p.config.d_hidden;
    for (const auto& layer : p.lstm) {
        auto zero = Tensor::zeros({H});
        std::vector<TensorPtr> hf(T), hb(T);
        TensorPtr h = zero, c = zero;
        for (std::size_t t = 0; t < T; ++t) {
            auto [hn, cn] = lstm_step(tape, xs[t], h, c, layer.fwd);
            h = hn;
            c = cn;
            hf[t] = h;
        }
        h = zero;
        c = zero;
        for (std::size_t t = T; t-- > 0;) {
            auto [hn, cn] = lstm_step(tape, xs[t], h, c, layer.bwd);
            h = hn;
            c = cn;
            hb[t] = h;
        }
        for (std::size_t t = 0; t < T; ++t) xs[t] = tape.concat({hf[t], hb[t]});
    }
    return xs;
}

// Vocabulary logits at the example's target position.
inline TensorPtr forward_logits(Tape& tape, const ModelParams& p, const MaskedExample& ex) {
    if (ex.char_ids.empty()) throw contract_error("example has no tokens");
    if (ex.target >= ex.char_ids.size())
        throw contract_error("target position " + std::to_string(ex.target) + " out of range");
    std::vector<TensorPtr> xs;
    xs.reserve(ex.char_ids.size());
    for (const auto& ids : ex.char_ids) xs.push_back(word_repr(tape, p, ids));
    auto states = bilstm_states(tape, p, std::move(xs));
    return tape.add(tape.matmul(p.out_w, states[ex.target]), p.out_b);
}

// −log softmax(logits)[target] for one example.
inline TensorPtr example_nll(Tape& tape, const ModelParams& p, const MaskedExample& ex) {
    if (ex.target_word < 0 || static_cast<std::size_t>(ex.target_word) >= p.config.n_words)
        throw contract_error("target word id out of vocabulary");
    return tape.nll_from_logits(forward_logits(tape, p, ex),
                                static_cast<std::size_t>(ex.target_word));
}

// Mean masked NLL over a batch on one tape (used by the gradient checks; the
// trainer accumulates per-example gradients instead).
inline TensorPtr batch_nll(Tape& tape, const ModelParams& p, const std::vector<MaskedExample>& batch) {
    if (batch.empty()) throw contract_error("empty batch");
    TensorPtr total;
    for (const auto& ex : batch) {
        auto nll = example_nll(tape, p, ex);
        total = total ? tape.add(total, nll) : nll;
    }
    return tape.affine(total, 1.0 / static_cast<double>(batch.size()), 0.0);
}

// --- evaluation ------------------------------------------------------------

// Pseudo-perplexity: every position of every sentence is masked once (always
// masked, no sampling), and PPL = exp(mean NLL). Deterministic.
inline double pseudo_perplexity(const ModelParams& p, const std::vector<Sentence>& sentences,
                                const WordVocab& words, const CharVocab& chars,
                                std::size_t jobs = 1) {
    std::size_t total_tokens = 0;
    for (const auto& s : sentences) total_tokens += s.tokens.size();
    if (total_tokens == 0) throw contract_error("pseudo-perplexity needs a non-empty corpus");

    const auto mask_ids = chars.encode_chars(WordVocab::MASK_TOKEN, p.config.max_word_len);
    double total_nll = 0.0;
    parallel_chunks<double>(
        sentences.size(), 4, jobs,
        [&](std::size_t begin, std::size_t end) {
            double nll = 0.0;
            for (std::size_t si = begin; si < end; ++si) {
                const Sentence& s = sentences[si];
                MaskedExample ex;
                ex.masked = true;
                for (const auto& tok : s.tokens)
                    ex.char_ids.push_back(chars.encode_chars(tok, p.config.max_word_len));
                for (std::size_t i = 0; i < s.tokens.size(); ++i) {
                    auto saved = ex.char_ids[i];
                    ex.char_ids[i] = mask_ids;
                    ex.target = i;
                    ex.target_word = words.id(s.tokens[i]);
                    Tape tape(false);
                    nll += example_nll(tape, p, ex)->data[0];
                    ex.char_ids[i] = std::move(saved);
                }
            }
            return nll;
        },
        [&](std::size_t, double&& chunk_nll) { total_nll += chunk_nll; });
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

// Mean over positions of the top-layer BiLSTM states for an unmasked
// sentence; dimension 2·d_hidden.
inline std::vector<double> sentence_embedding(const ModelParams& p, const Sentence& sentence,
                                              const CharVocab& chars) {
    if (sentence.tokens.empty()) throw contract_error("cannot embed an empty sentence");
    Tape tape(false);
    std::vector<TensorPtr> xs;
    for (const auto& tok : sentence.tokens)
        xs.push_back(word_repr(tape, p, chars.encode_chars(tok, p.config.max_word_len)));
    auto states = bilstm_states(tape, p, std::move(xs));
    std::vector<double> mean(2 * p.config.d_hidden, 0.0);
    for (const auto& st : states)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += st->data[i];
    for (double& v : mean) v /= static_cast<double>(states.size());
    return mean;
}

// --- training ---------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 512;
    double lr = 0.25;
    double momentum = 0.9;
    // Halve the learning rate whenever an epoch fails to improve the best
    // validation PPL by more than this.
    double anneal_threshold = 0.1;
    double p_m = 0.85;
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void validate() const {
        if (batch_size == 0) throw config_error("batch size must be positive");
        if (!(lr > 0.0)) throw config_error("learning rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw config_error("momentum must lie in [0,1)");
        if (p_m < 0.0 || p_m > 1.0) throw config_error("masking probability must lie in [0,1]");
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_nll = 0.0;
    double valid_ppl = 0.0;
    double lr = 0.0;
    double wallclock_s = 0.0;
};

// One line per epoch: epoch, train NLL, valid PPL, lr, seconds; tab-separated.
inline std::string format_metrics(const std::vector<EpochMetrics>& metrics) {
    std::string out;
    for (const auto& m : metrics)
        out += std::to_string(m.epoch) + "\t" + fmt_double(m.train_nll) + "\t" +
               fmt_double(m.valid_ppl) + "\t" + fmt_double(m.lr) + "\t" + fmt_double(m.wallclock_s) +
               "\n";
    return out;
}

struct TrainResult {
    ModelParams best;                  // best-validation checkpoint
    std::vector<EpochMetrics> metrics;
    double initial_valid_ppl = 0.0;
    double best_valid_ppl = 0.0;
    bool diverged = false;
};

// Partial training state after some number of completed epochs. Because every
// epoch's shuffle and masking streams are derived statelessly from (seed,
// epoch), continuing from a saved state reproduces the uninterrupted run bit
// for bit.
struct TrainState {
    ModelParams params;                         // live parameters
    ModelParams best;                           // best-validation parameters so far
    std::vector<std::vector<double>> velocity;  // per tensor, manifest order
    std::vector<EpochMetrics> metrics;
    double lr = 0.0;
    double initial_valid_ppl = 0.0;
    double best_valid_ppl = 0.0;
    std::size_t completed = 0;  // epochs finished
    bool diverged = false;
};

inline void save_train_state(const TrainState& state, const TrainConfig& tcfg,
                             const std::string& path);
inline TrainState load_train_state(const std::string& path, const ModelConfig& mcfg,
                                   const TrainConfig& tcfg);

namespace detail {

// Per-example gradients for [begin,end) of a batch, accumulated on a private
// parameter replica so threads never share gradient buffers. Returns the
// per-parameter gradient blobs plus the summed loss.
struct ChunkGrads {
    std::vector<std::vector<double>> grads;
    double loss_sum = 0.0;
};

inline ChunkGrads batch_chunk_grads(const ModelParams& master,
                                    const std::vector<MaskedExample>& batch, std::size_t begin,
                                    std::size_t end) {
    ModelParams replica = master.clone();
    ChunkGrads out;
    for (std::size_t i = begin; i < end; ++i) {
        Tape tape;
        auto nll = example_nll(tape, replica, batch[i]);
        out.loss_sum += nll->data[0];
        tape.backward(nll);
    }
    replica.for_each_param([&](const std::string&, const TensorPtr& t) {
        if (t->grad.empty())
            out.grads.emplace_back(t->size(), 0.0);
        else
            out.grads.push_back(std::move(t->grad));
    });
    return out;
}

}  // namespace detail

// The visiting order for one epoch: a seeded permutation of [0, n). Every
// sentence index appears exactly once; the trainer walks it linearly.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derived(seed, "epoch-order", {epoch});
    rng.shuffle(order);
    return order;
}

// Trains with SGD + Nesterov momentum. Each epoch shuffles the corpus and
// draws exactly one MaskedExample per sentence. Gradients are averaged over
// the batch with a fixed chunked reduction, so results are bit-identical for
// any `jobs`. The best-validation checkpoint is retained; a non-finite batch
// loss aborts and returns it. With a resume path, the state after every
// completed epoch is persisted and an existing state file is continued from,
// reproducing the uninterrupted run exactly.
inline TrainResult train(const std::vector<Sentence>& train_sents,
                         const std::vector<Sentence>& valid_sents, const WordVocab& words,
                         const CharVocab& chars, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         ModelParams* warm_start = nullptr, const std::string& resume_path = {}) {
    mcfg.validate();
    tcfg.validate();
    if (train_sents.empty() || valid_sents.empty())
        throw contract_error("training needs non-empty train and valid splits");
    if (mcfg.n_words != words.size())
        throw config_error("model word-vocab size " + std::to_string(mcfg.n_words) +
                           " does not match the vocabulary (" + std::to_string(words.size()) + ")");
    if (mcfg.n_chars != chars.size())
        throw config_error("model char-vocab size " + std::to_string(mcfg.n_chars) +
                           " does not match the vocabulary (" + std::to_string(chars.size()) + ")");
    if (warm_start && !(warm_start->config == mcfg))
        throw config_error("warm-start checkpoint config does not match the model config");

    TrainState st;
    if (!resume_path.empty() && std::filesystem::exists(resume_path)) {
        st = load_train_state(resume_path, mcfg, tcfg);
    } else {
        Rng init_rng = Rng::derived(tcfg.seed, "model-init");
        st.params = warm_start ? warm_start->clone() : init_params(mcfg, init_rng);
        st.initial_valid_ppl = pseudo_perplexity(st.params, valid_sents, words, chars, tcfg.jobs);
        st.best = st.params.clone();
        st.best_valid_ppl = st.initial_valid_ppl;
        st.lr = tcfg.lr;
        st.params.for_each_param(
            [&](const std::string&, const TensorPtr& t) { st.velocity.emplace_back(t->size(), 0.0); });
    }

    auto named = st.params.named_params();
    std::vector<std::vector<double>> grad_accum;
    for (const auto& [name, t] : named) grad_accum.emplace_back(t->size(), 0.0);

    for (std::size_t epoch = st.completed + 1; epoch <= tcfg.epochs && !st.diverged; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = epoch_order(train_sents.size(), tcfg.seed, epoch);
        Rng mask_rng = Rng::derived(tcfg.seed, "epoch-mask", {epoch});

        double epoch_nll = 0.0;
        for (std::size_t start = 0; start < order.size() && !st.diverged;
             start += tcfg.batch_size) {
            std::size_t bsize = std::min(tcfg.batch_size, order.size() - start);
            std::vector<MaskedExample> batch;
            batch.reserve(bsize);
            for (std::size_t i = 0; i < bsize; ++i)
                batch.push_back(make_masked_example(train_sents[order[start + i]], words, chars,
                                                    mcfg.max_word_len, mask_rng, tcfg.p_m));

            for (auto& g : grad_accum) std::fill(g.begin(), g.end(), 0.0);
            double batch_loss = 0.0;
            parallel_chunks<detail::ChunkGrads>(
                bsize, 64, tcfg.jobs,
                [&](std::size_t b, std::size_t e) {
                    return detail::batch_chunk_grads(st.params, batch, b, e);
                },
                [&](std::size_t, detail::ChunkGrads&& cg) {
                    batch_loss += cg.loss_sum;
                    for (std::size_t pi = 0; pi < grad_accum.size(); ++pi)
                        for (std::size_t j = 0; j < grad_accum[pi].size(); ++j)
                            grad_accum[pi][j] += cg.grads[pi][j];
                });

            if (!std::isfinite(batch_loss)) {
                st.diverged = true;
                break;
            }
            epoch_nll += batch_loss;

            const double inv_b = 1.0 / static_cast<double>(bsize);
            for (std::size_t pi = 0; pi < named.size(); ++pi) {
                auto& theta = named[pi].second->data;
                auto& v = st.velocity[pi];
                const auto& acc = grad_accum[pi];
                for (std::size_t j = 0; j < theta.size(); ++j) {
                    double g = acc[j] * inv_b;
                    v[j] = tcfg.momentum * v[j] + g;
                    theta[j] -= st.lr * (g + tcfg.momentum * v[j]);  // Nesterov look-ahead
                }
            }
        }
        if (st.diverged) {
            if (!resume_path.empty()) save_train_state(st, tcfg, resume_path);
            break;
        }

        double valid_ppl = pseudo_perplexity(st.params, valid_sents, words, chars, tcfg.jobs);
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        st.metrics.push_back(
            {epoch, epoch_nll / static_cast<double>(order.size()), valid_ppl, st.lr, wall});

        double improvement = st.best_valid_ppl - valid_ppl;
        if (valid_ppl < st.best_valid_ppl) {
            st.best_valid_ppl = valid_ppl;
            st.best = st.params.clone();
        }
        if (improvement <= tcfg.anneal_threshold) st.lr *= 0.5;
        st.completed = epoch;
        if (!resume_path.empty()) save_train_state(st, tcfg, resume_path);
    }

    TrainResult result;
    result.best = std::move(st.best);
    result.metrics = std::move(st.metrics);
    result.initial_valid_ppl = st.initial_valid_ppl;
    result.best_valid_ppl = st.best_valid_ppl;
    result.diverged = st.diverged;
    return result;
}

// --- checkpointing -----------------------------------------------------------

namespace detail {

inline void append_f64_le(std::string& out, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    for (int i = 0; i < 8; ++i) out += static_cast<char>((u >> (8 * i)) & 0xff);
}

inline double read_f64_le(const unsigned char* p) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, sizeof v);
    return v;
}

}  // namespace detail

// Versioned checkpoint: text header (config + manifest of name/shape/offset),
// then a raw little-endian float64 payload. Round-trips bit-exactly.
inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::string payload;
    std::string manifest;
    std::size_t n_params = 0, offset = 0;
    params.for_each_param([&](const std::string& name, const TensorPtr& t) {
        manifest += name + " ";
        for (std::size_t d = 0; d < t->shape.size(); ++d) {
            if (d) manifest += "x";
            manifest += std::to_string(t->shape[d]);
        }
        manifest += " " + std::to_string(offset) + "\n";
        for (double v : t->data) detail::append_f64_le(payload, v);
        offset += 8 * t->size();
        ++n_params;
    });

    std::string out = "telephonetic-ckpt v1\n";
    out += "config " + params.config.serialize() + "\n";
    out += "params " + std::to_string(n_params) + "\n";
    out += manifest;
    out += "payload " + std::to_string(payload.size()) + "\n";
    out += payload;
    write_text_file(path, out);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::string text = read_text_file(path);

    // The header is line-oriented; the payload that follows is raw bytes.
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) throw format_error(path + ": truncated checkpoint header");
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };

    if (next_line() != "telephonetic-ckpt v1")
        throw format_error(path + ": missing 'telephonetic-ckpt v1' header");
    std::string config_line = next_line();
    if (config_line.rfind("config ", 0) != 0) throw format_error(path + ": expected config line");
    ModelConfig cfg = ModelConfig::deserialize(config_line.substr(7), path);

    std::string params_line = next_line();
    if (params_line.rfind("params ", 0) != 0) throw format_error(path + ": expected params line");
    std::size_t n_params = static_cast<std::size_t>(parse_int(params_line.substr(7), path));

    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < n_params; ++i) {
        auto fields = split_ws(next_line());
        if (fields.size() != 3) throw format_error(path + ": bad manifest row");
        Entry e;
        e.name = fields[0];
        for (const auto& d : split(fields[1], 'x'))
            e.shape.push_back(static_cast<std::size_t>(parse_int(d, path)));
        e.offset = static_cast<std::size_t>(parse_int(fields[2], path));
        entries.push_back(std::move(e));
    }

    std::string payload_line = next_line();
    if (payload_line.rfind("payload ", 0) != 0) throw format_error(path + ": expected payload line");
    std::size_t payload_bytes = static_cast<std::size_t>(parse_int(payload_line.substr(8), path));
    if (text.size() - pos != payload_bytes)
        throw format_error(path + ": payload has " + std::to_string(text.size() - pos) +
                           " bytes, header declares " + std::to_string(payload_bytes));

    ModelParams params = zero_params(cfg);
    std::size_t idx = 0, expected_offset = 0;
    const auto* bytes = reinterpret_cast<const unsigned char*>(text.data()) + pos;
    params.for_each_param([&](const std::string& name, const TensorPtr& t) {
        if (idx >= entries.size()) throw format_error(path + ": manifest is missing '" + name + "'");
        const Entry& e = entries[idx++];
        if (e.name != name)
            throw format_error(path + ": manifest entry '" + e.name + "' where '" + name +
                               "' was expected");
        if (e.shape != t->shape)
            throw format_error(path + ": shape mismatch for '" + name + "'");
        if (e.offset != expected_offset)
            throw format_error(path + ": bad offset for '" + name + "'");
        if (e.offset + 8 * t->size() > payload_bytes)
            throw format_error(path + ": payload too small for '" + name + "'");
        for (std::size_t j = 0; j < t->size(); ++j)
            t->data[j] = detail::read_f64_le(bytes + e.offset + 8 * j);
        expected_offset += 8 * t->size();
    });
    if (idx != entries.size()) throw format_error(path + ": manifest has extra entries");
    if (expected_offset != payload_bytes)
        throw format_error(path + ": payload larger than the manifest describes");
    return params;
}

namespace detail {

// The subset of TrainConfig a resumed run must agree on (epochs and jobs may
// legitimately differ between the interrupted and the resuming invocation).
inline std::string train_config_line(const TrainConfig& t) {
    return "batch_size=" + std::to_string(t.batch_size) + " lr=" + fmt_double(t.lr) +
           " momentum=" + fmt_double(t.momentum) +
           " anneal_threshold=" + fmt_double(t.anneal_threshold) + " p_m=" + fmt_double(t.p_m) +
           " seed=" + std::to_string(t.seed);
}

}  // namespace detail

// Versioned training state: checkpoint-style header, one manifest, then three
// consecutive float64 blobs (live parameters, best parameters, velocity).
inline void save_train_state(const TrainState& state, const TrainConfig& tcfg,
                             const std::string& path) {
    std::string manifest;
    std::string payload;
    std::size_t n_params = 0, offset = 0;
    state.params.for_each_param([&](const std::string& name, const TensorPtr& t) {
        manifest += name + " ";
        for (std::size_t d = 0; d < t->shape.size(); ++d) {
            if (d) manifest += "x";
            manifest += std::to_string(t->shape[d]);
        }
        manifest += " " + std::to_string(offset) + "\n";
        for (double v : t->data) detail::append_f64_le(payload, v);
        offset += 8 * t->size();
        ++n_params;
    });
    state.best.for_each_param([&](const std::string&, const TensorPtr& t) {
        for (double v : t->data) detail::append_f64_le(payload, v);
    });
    if (state.velocity.size() != n_params)
        throw contract_error("velocity blob count does not match the parameter manifest");
    std::size_t vi = 0;
    state.params.for_each_param([&](const std::string& name, const TensorPtr& t) {
        if (state.velocity[vi].size() != t->size())
            throw contract_error("velocity size mismatch for '" + name + "'");
        for (double v : state.velocity[vi]) detail::append_f64_le(payload, v);
        ++vi;
    });

    std::string out = "telephonetic-train-state v1\n";
    out += "config " + state.params.config.serialize() + "\n";
    out += "train " + detail::train_config_line(tcfg) + "\n";
    out += "completed " + std::to_string(state.completed) + "\n";
    out += "lr " + fmt_double(state.lr) + "\n";
    out += "initial_valid_ppl " + fmt_double(state.initial_valid_ppl) + "\n";
    out += "best_valid_ppl " + fmt_double(state.best_valid_ppl) + "\n";
    out += std::string("diverged ") + (state.diverged ? "1" : "0") + "\n";
    out += "metrics " + std::to_string(state.metrics.size()) + "\n";
    for (const auto& m : state.metrics)
        out += "m " + std::to_string(m.epoch) + " " + fmt_double(m.train_nll) + " " +
               fmt_double(m.valid_ppl) + " " + fmt_double(m.lr) + " " + fmt_double(m.wallclock_s) +
               "\n";
    out += "params " + std::to_string(n_params) + "\n";
    out += manifest;
    out += "payload " + std::to_string(payload.size()) + "\n";
    out += payload;
    write_text_file(path, out);
}

inline TrainState load_train_state(const std::string& path, const ModelConfig& mcfg,
                                   const TrainConfig& tcfg) {
    std::string text = read_text_file(path);
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) throw format_error(path + ": truncated training state");
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    auto field = [&](const std::string& key) -> std::string {
        std::string line = next_line();
        if (line.rfind(key + " ", 0) != 0)
            throw format_error(path + ": expected '" + key + "' line");
        return line.substr(key.size() + 1);
    };

    if (next_line() != "telephonetic-train-state v1")
        throw format_error(path + ": missing 'telephonetic-train-state v1' header");
    ModelConfig stored = ModelConfig::deserialize(field("config"), path);
    if (!(stored == mcfg))
        throw config_error(path +
                           ": training state was written for a different model configuration; "
                           "delete it to restart");
    if (field("train") != detail::train_config_line(tcfg))
        throw config_error(path +
                           ": training state was written under different training settings; "
                           "delete it to restart");

    TrainState st;
    st.completed = static_cast<std::size_t>(parse_int(field("completed"), path));
    st.lr = parse_double(field("lr"), path);
    st.initial_valid_ppl = parse_double(field("initial_valid_ppl"), path);
    st.best_valid_ppl = parse_double(field("best_valid_ppl"), path);
    std::string div = field("diverged");
    if (div != "0" && div != "1") throw format_error(path + ": diverged flag must be 0 or 1");
    st.diverged = div == "1";

    std::size_t n_metrics = static_cast<std::size_t>(parse_int(field("metrics"), path));
    for (std::size_t i = 0; i < n_metrics; ++i) {
        auto fields = split_ws(field("m"));
        if (fields.size() != 5) throw format_error(path + ": metrics row needs 5 fields");
        EpochMetrics m;
        m.epoch = static_cast<std::size_t>(parse_int(fields[0], path));
        m.train_nll = parse_double(fields[1], path);
        m.valid_ppl = parse_double(fields[2], path);
        m.lr = parse_double(fields[3], path);
        m.wallclock_s = parse_double(fields[4], path);
        st.metrics.push_back(m);
    }

    std::size_t n_params = static_cast<std::size_t>(parse_int(field("params"), path));
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < n_params; ++i) {
        auto fields = split_ws(next_line());
        if (fields.size() != 3) throw format_error(path + ": bad manifest row");
        Entry e;
        e.name = fields[0];
        for (const auto& d : split(fields[1], 'x'))
            e.shape.push_back(static_cast<std::size_t>(parse_int(d, path)));
        e.offset = static_cast<std::size_t>(parse_int(fields[2], path));
        entries.push_back(std::move(e));
    }
    std::size_t payload_bytes = static_cast<std::size_t>(parse_int(field("payload"), path));
    if (text.size() - pos != payload_bytes)
        throw format_error(path + ": payload has " + std::to_string(text.size() - pos) +
                           " bytes, header declares " + std::to_string(payload_bytes));
    if (payload_bytes % 3 != 0)
        throw format_error(path + ": payload must hold three equal blobs");
    const std::size_t blob = payload_bytes / 3;
    const auto* bytes = reinterpret_cast<const unsigned char*>(text.data()) + pos;

    st.params = zero_params(stored);
    st.best = zero_params(stored);
    auto fill = [&](ModelParams& target, std::size_t base) {
        std::size_t idx = 0, expected_offset = 0;
        target.for_each_param([&](const std::string& name, const TensorPtr& t) {
            if (idx >= entries.size())
                throw format_error(path + ": manifest is missing '" + name + "'");
            const Entry& e = entries[idx++];
            if (e.name != name)
                throw format_error(path + ": manifest entry '" + e.name + "' where '" + name +
                                   "' was expected");
            if (e.shape != t->shape) throw format_error(path + ": shape mismatch for '" + name + "'");
            if (e.offset != expected_offset)
                throw format_error(path + ": bad offset for '" + name + "'");
            if (base + e.offset + 8 * t->size() > payload_bytes)
                throw format_error(path + ": payload too small for '" + name + "'");
            for (std::size_t j = 0; j < t->size(); ++j)
                t->data[j] = detail::read_f64_le(bytes + base + e.offset + 8 * j);
            expected_offset += 8 * t->size();
        });
        if (idx != entries.size()) throw format_error(path + ": manifest has extra entries");
        if (expected_offset != blob)
            throw format_error(path + ": blob size does not match the manifest");
    };
    fill(st.params, 0);
    fill(st.best, blob);
    std::size_t voff = 2 * blob;
    st.params.for_each_param([&](const std::string&, const TensorPtr& t) {
        std::vector<double> v(t->size());
        for (std::size_t j = 0; j < v.size(); ++j)
            v[j] = detail::read_f64_le(bytes + voff + 8 * j);
        voff += 8 * t->size();
        st.velocity.push_back(std::move(v));
    });
    return st;
}

}  // namespace telephonetic
