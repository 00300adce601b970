#pragma once
// Shared primitives: error types, calendar dates, stable hashing and
// seed derivation. Everything downstream assumes these are cheap values.

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace star {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input files (CSV/JSON), bad numbers, bad dates.
class ParseError : public Error {
public:
    using Error::Error;
};

// Invalid configuration or violated preconditions.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Network / service failures (encoder, chat backend, live retrievers).
class TransportError : public Error {
public:
    using Error::Error;
};

// Sampler blow-ups: non-finite targets, runaway Hamiltonians.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Calendar date stored as days since the civil epoch (1970-01-01).
// Comparable, subtractable, and round-trips through ISO-8601 text.
struct Date {
    std::int32_t days = 0;

    static Date from_ymd(int year, int month, int day);
    static Date parse(std::string_view iso);  // throws ParseError
    std::string to_string() const;

    friend auto operator<=>(const Date&, const Date&) = default;
};

inline int days_between(Date from, Date to) { return to.days - from.days; }

// SplitMix64: used to derive independent sub-seeds from one master seed.
std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over bytes; stable across platforms (std::hash is not).
std::uint64_t fnv1a64(std::string_view bytes);

// Sub-seed for a named stream, e.g. derive_seed(seed, "mask", run_index).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0);

inline double clamp_score(double x) {
    if (x < 0.0) return 0.0;
    if (x > 100.0) return 100.0;
    return x;
}

// Compact decimal rendering ("88.4", "7.25", "100") used wherever
// scores are embedded in prompts or replies, so that both sides of a
// round trip print identically.
std::string format_number(double x);

// Numeric tokens in reading order. Signs are taken only when attached
// ("-7.5" yes, "a - 7" no); other punctuation separates tokens.
std::vector<double> extract_numbers(std::string_view text);

}  // namespace star
