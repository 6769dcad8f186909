#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stepconf/env.hpp"
#include "stepconf/representation.hpp"
#include "stepconf/trajectory.hpp"

namespace stepconf {

/// Unit-norm contrastive direction between success and failure activations
/// at one layer.
struct SteeringVector {
    int layer = 0;
    std::vector<double> d;
    int n_success = 0;
    int n_failure = 0;
};

struct InterventionSpec {
    int layer = 0;
    std::vector<int> timesteps = {3};
    double coefficient = 0.025;

    void validate(int horizon) const;
};

/// d = normalize(mean(success) - mean(failure)).
SteeringVector compute_direction(const std::vector<std::vector<double>>& success_acts,
                                 const std::vector<std::vector<double>>& failure_acts,
                                 int layer, int min_per_class = 10);

/// Additive steering: h + coefficient * d at the configured timesteps,
/// unchanged elsewhere. Coefficient 0 is an exact no-op.
ActivationVector apply_intervention(const ActivationVector& h, const InterventionSpec& spec,
                                    const SteeringVector& vec, int t);

/// Synthetic agent whose behavior is causally coupled to its hidden state:
/// at each step the drift hazard is sigmoid(gain * (bias - <h, g_L>)), and a
/// drifted agent issues hallucinated actions forever. Raising the projection
/// onto g_L (e.g. by steering along d ~ g_L) lowers the hazard.
struct CoupledAgentConfig {
    int layer = 8;             // layer whose state drives (and receives) steering
    double hazard_gain = 6.0;
    double hazard_bias = 0.4;

    void validate() const;
};

struct ClosedLoopResult {
    double baseline_success = 0.0;
    double steered_success = 0.0;
    double lift = 0.0;
    double ci_lo = 0.0;  // paired bootstrap 95% CI of the lift
    double ci_hi = 0.0;
    int n_episodes = 0;
};

/// Paired evaluation: both arms replay identical episode seeds and noise
/// streams; only the intervention differs. Lift is the success-rate
/// difference with a seeded 10,000-resample paired-bootstrap 95% CI.
ClosedLoopResult closed_loop_eval(const EnvConfig& env, const RepresentationConfig& rep,
                                  const CoupledAgentConfig& agent, const InterventionSpec& spec,
                                  const SteeringVector& vec, int n_episodes, std::uint64_t seed,
                                  int bootstrap_resamples = 10000);

std::pair<double, double> paired_bootstrap_ci(const std::vector<int>& baseline,
                                              const std::vector<int>& steered,
                                              int n_resamples, std::uint64_t seed);

void save_steering(const SteeringVector& vec, const std::string& source_digest,
                   const std::string& path);
std::pair<SteeringVector, std::string> load_steering(const std::string& path);

}  // namespace stepconf
