#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace redkit {

using json = nlohmann::json;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

/// 64-bit FNV-1a. Stable across platforms, used for content addressing.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t value);

/// SplitMix64 step; used to derive independent streams from a single seed.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seeded generator whose outputs do not depend on the standard library
/// implementation (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }
    /// Index drawn proportionally to non-negative weights.
    std::size_t categorical(const std::vector<double>& weights);

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);
void append_jsonl(const std::filesystem::path& path, const json& record);
/// Calls `fn` for every non-empty line; line numbers are reported on parse errors.
void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const json&)>& fn);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

std::string read_text_file(const std::filesystem::path& path);
/// Content hash of a file or, for a directory, of its sorted regular files.
std::string hash_path(const std::filesystem::path& path);

std::string iso8601_now();

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

} // namespace redkit
