#pragma once

#include <compare>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace headlamp {

using Token = std::int32_t;
using Tokens = std::vector<Token>;

/// L<layer>-H<head>, both zero-based.
struct HeadId {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadId&) const = default;
    std::string str() const { return "L" + std::to_string(layer) + "-H" + std::to_string(head); }
};

using HeadSet = std::set<HeadId>;

/// Head layout of a model. Flat head index = layer * heads_per_layer + head.
struct ModelShape {
    int n_layers = 0;
    int heads_per_layer = 0;
    int d_model = 0;
    int vocab_size = 0;

    int total_heads() const { return n_layers * heads_per_layer; }
    int flat(HeadId h) const { return h.layer * heads_per_layer + h.head; }
    HeadId head_at(int flat_index) const { return {flat_index / heads_per_layer, flat_index % heads_per_layer}; }
    bool contains(HeadId h) const {
        return h.layer >= 0 && h.layer < n_layers && h.head >= 0 && h.head < heads_per_layer;
    }
    bool operator==(const ModelShape&) const = default;
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. The CLI maps this to exit status 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input that violates an operation's preconditions (lengths, indices, shapes).
class InputError : public Error {
public:
    using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Seeded generator with portable distributions: the standard library's
/// distributions are implementation-defined, which would break cross-platform
/// reproducibility of seeded runs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic child seed from a master seed and a path of integer tags.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags);

/// Index of the maximum element; lowest index wins ties. Empty input throws.
std::size_t argmax(std::span<const double> values);

}  // namespace headlamp
