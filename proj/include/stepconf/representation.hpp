#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "stepconf/rng.hpp"
#include "stepconf/trajectory.hpp"

namespace stepconf {

/// Ground-truth-bearing synthetic activation provider. For a trajectory
/// prefix it emits, per layer L,
///
///     h = A_L * phi(prefix) + y * (margin/2) * g_L + eta
///
/// where phi is a deterministic feature hash of the prefix text, A_L a
/// seed-fixed mixing map, g_L the seed-fixed unit class direction,
/// y = +1 on success paths and -1 otherwise, and eta isotropic Gaussian
/// noise with per-coordinate sd noise_sigma/2. Class-conditional means
/// therefore differ by exactly margin * g_L, and the projection onto g_L
/// separates the classes with z-score margin / noise_sigma.
struct RepresentationConfig {
    int dim = 64;
    std::vector<int> layers = {8, 16, 24, 32};
    double margin = 2.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

class RepresentationProvider {
public:
    explicit RepresentationProvider(RepresentationConfig cfg);

    const RepresentationConfig& config() const { return cfg_; }

    /// The unit class direction g_L; throws UnknownLayer outside the
    /// configured layer set.
    const std::vector<double>& direction(int layer) const;

    /// Bag-of-token-hashes of the prefix text (instruction plus every step's
    /// thought/action/observation), L2-normalized. Deterministic and
    /// prefix-sensitive.
    std::vector<double> feature_hash(const Trajectory& prefix) const;

    /// Activation for this prefix at the given layer. Noise comes from the
    /// caller's stream; same inputs and stream yield the identical vector.
    ActivationVector hidden_state(const Trajectory& prefix, int layer,
                                  bool on_success_path, Rng noise_stream) const;

private:
    RepresentationConfig cfg_;
    std::map<int, std::vector<double>> g_;  // unit class direction per layer
    std::map<int, std::vector<double>> A_;  // row-major dim x dim mixing map
};

/// One-off convenience wrapper; prefer a provider when calling repeatedly.
ActivationVector hidden_state(const RepresentationConfig& cfg, const Trajectory& prefix,
                              int layer, bool on_success_path, Rng noise_stream);

}  // namespace stepconf
