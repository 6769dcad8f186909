#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace stepconf {

// splitmix64 finalizer; the workhorse mixer behind every stream here.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based random stream. Every draw is a pure function of
/// (root, counter), and substreams derived from the same keys are identical
/// no matter in which order the program evaluates them. That property is
/// what makes corpus generation, rollouts and the closed loop
/// schedule-independent.
class Rng {
public:
    explicit Rng(std::uint64_t root) : root_(root) {}

    Rng derive(std::string_view tag) const { return Rng(mix64(root_ ^ fnv1a64(tag))); }
    Rng derive(std::uint64_t v) const { return Rng(mix64(root_ ^ mix64(v))); }

    std::uint64_t root() const { return root_; }

    std::uint64_t next_u64() { return mix64(root_ ^ mix64(++counter_)); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Modulo bias is irrelevant at our n.
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// Box-Muller, no cached spare: two uniforms per draw, deterministic.
    double normal(double mean = 0.0, double sd = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return mean + sd * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t root_;
    std::uint64_t counter_ = 0;
};

}  // namespace stepconf
