#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <exception>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace sentibench {

// ---------------------------------------------------------------------------
// Errors
//
// All library errors derive from Error. InputError covers everything caused
// by bad input (files, configs, CLI flags) and maps to exit code 2 in the
// CLI; TrainError covers runtime training failures and maps to exit code 3.
// Harness stages tag errors with a stage name as they propagate.
// ---------------------------------------------------------------------------

class Error : public std::exception {
public:
    explicit Error(std::string msg) : msg_(std::move(msg)), full_(msg_) {}

    const char* what() const noexcept override { return full_.c_str(); }

    // First caller wins; nested stages keep the innermost tag.
    void set_stage(const std::string& stage) {
        if (stage_.empty()) {
            stage_ = stage;
            full_ = "[" + stage_ + "] " + msg_;
        }
    }
    const std::string& stage() const { return stage_; }
    const std::string& message() const { return msg_; }

private:
    std::string msg_;
    std::string stage_;
    std::string full_;
};

class InputError : public Error {
public:
    using Error::Error;
};

class IoError : public InputError {
public:
    using InputError::InputError;
};

// Malformed record; carries the 1-based line number.
class ParseError : public InputError {
public:
    ParseError(std::string msg, long line)
        : InputError(std::move(msg) + " (line " + std::to_string(line) + ")"), line_(line) {}
    long line() const { return line_; }

private:
    long line_ = 0;
};

class LabelError : public InputError {
public:
    LabelError(std::string msg, long line)
        : InputError(std::move(msg) + " (line " + std::to_string(line) + ")"), line_(line) {}
    long line() const { return line_; }

private:
    long line_ = 0;
};

class CapacityError : public InputError {
public:
    using InputError::InputError;
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

class FormatError : public InputError {
public:
    using InputError::InputError;
};

class StratifyError : public InputError {
public:
    using InputError::InputError;
};

class ComparisonError : public InputError {
public:
    using InputError::InputError;
};

// Violated call contract (e.g. attention with every position masked,
// metrics over an empty evaluation).
class ContractError : public InputError {
public:
    using InputError::InputError;
};

class TrainError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// mt19937_64 is fully specified by the standard; the distributions are not,
// so the few we need are implemented here. Same seed => same stream,
// independent of the standard library in use.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // splitmix64 scramble so that small seeds (0, 1, 2, ...) do not
        // produce correlated mt19937 states.
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        mt_.seed(z ^ (z >> 31));
    }

    std::uint64_t next_u64() { return mt_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(mt_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = mt_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 mt_;
};

// ---------------------------------------------------------------------------
// Small string helpers
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

// Splits a UTF-8 string into code points. An invalid or truncated sequence
// falls back to a single byte, so this is total on arbitrary bytes.
inline std::vector<std::string> utf8_chars(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if (c >= 0xF0)
            len = 4;
        else if (c >= 0xE0)
            len = 3;
        else if (c >= 0xC0)
            len = 2;
        if (i + len > s.size()) len = 1;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        out.emplace_back(s.substr(i, len));
        i += len;
    }
    return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

}  // namespace sentibench
