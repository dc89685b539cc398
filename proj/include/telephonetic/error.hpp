#pragma once

#include <stdexcept>
#include <string>

namespace telephonetic {

// Every failure the library reports derives from telephonetic::error so the
// CLI boundary can map exception kind to exit code.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor dimension mismatch; message names the offending shapes.
class shape_error : public error {
public:
    using error::error;
};

// Invalid configuration value (bad probability, k >= N, filter wider than input).
class config_error : public error {
public:
    using error::error;
};

// Malformed input or artifact file; message names the line or sentence.
class format_error : public error {
public:
    using error::error;
};

// Filesystem failure (unreadable, unwritable, truncated).
class io_error : public error {
public:
    using error::error;
};

// API contract violation (non-scalar loss, overlapping spans, misaligned corpora).
class contract_error : public error {
public:
    using error::error;
};

// External speech engine failure (exit status, count mismatch, timeout).
// A dependency parse that is structurally invalid (cycles, multiple roots).
class parse_error : public error {
public:
    using error::error;
};

class engine_error : public error {
public:
    using error::error;
};

}  // namespace telephonetic
