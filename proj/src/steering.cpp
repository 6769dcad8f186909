#include "stepconf/steering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "stepconf/digest.hpp"
#include "stepconf/errors.hpp"
#include "stepconf/policy.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

using ordered_json = nlohmann::ordered_json;

void InterventionSpec::validate(int horizon) const {
    if (!std::isfinite(coefficient)) throw ValidationError("steering coefficient must be finite");
    for (int t : timesteps) {
        if (t < 1 || t > horizon) {
            throw ValidationError("intervention timesteps must lie within the horizon");
        }
    }
}

void CoupledAgentConfig::validate() const {
    if (layer < 1) throw ValidationError("coupled agent layer must be >= 1");
    if (hazard_gain < 0.0) throw ValidationError("hazard_gain must be >= 0");
}

SteeringVector compute_direction(const std::vector<std::vector<double>>& success_acts,
                                 const std::vector<std::vector<double>>& failure_acts,
                                 int layer, int min_per_class) {
    if (static_cast<int>(success_acts.size()) < min_per_class ||
        static_cast<int>(failure_acts.size()) < min_per_class) {
        throw InsufficientExamples("need >= " + std::to_string(min_per_class) +
                                   " activations per class, got " +
                                   std::to_string(success_acts.size()) + " success / " +
                                   std::to_string(failure_acts.size()) + " failure");
    }
    const std::size_t dim = success_acts.front().size();
    auto mean_of = [&](const std::vector<std::vector<double>>& acts) {
        std::vector<double> mean(dim, 0.0);
        for (const auto& a : acts) {
            if (a.size() != dim) throw DimensionMismatch("inconsistent activation dims");
            for (std::size_t j = 0; j < dim; ++j) mean[j] += a[j];
        }
        for (double& m : mean) m /= static_cast<double>(acts.size());
        return mean;
    };
    const std::vector<double> mean_s = mean_of(success_acts);
    const std::vector<double> mean_f = mean_of(failure_acts);

    SteeringVector out;
    out.layer = layer;
    out.n_success = static_cast<int>(success_acts.size());
    out.n_failure = static_cast<int>(failure_acts.size());
    out.d.resize(dim);
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        out.d[j] = mean_s[j] - mean_f[j];
        norm_sq += out.d[j] * out.d[j];
    }
    const double norm = std::sqrt(norm_sq);
    if (norm < 1e-12) throw ZeroContrast("class means coincide");
    for (double& v : out.d) v /= norm;
    return out;
}

ActivationVector apply_intervention(const ActivationVector& h, const InterventionSpec& spec,
                                    const SteeringVector& vec, int t) {
    if (vec.layer != spec.layer) {
        throw DimensionMismatch("steering vector layer " + std::to_string(vec.layer) +
                                " != intervention layer " + std::to_string(spec.layer));
    }
    if (h.values.size() != vec.d.size()) {
        throw DimensionMismatch("activation dim " + std::to_string(h.values.size()) +
                                " != direction dim " + std::to_string(vec.d.size()));
    }
    if (spec.coefficient == 0.0) return h;  // exact no-op, bit for bit
    if (std::find(spec.timesteps.begin(), spec.timesteps.end(), t) == spec.timesteps.end()) {
        return h;
    }
    ActivationVector out = h;
    for (std::size_t j = 0; j < out.values.size(); ++j) {
        out.values[j] += spec.coefficient * vec.d[j];
    }
    return out;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// One closed-loop episode; steering is the only difference between arms.
bool run_episode(const EnvConfig& env, const RepresentationProvider& provider,
                 const CoupledAgentConfig& agent, const InterventionSpec& spec,
                 const SteeringVector& vec, bool steered, std::uint64_t seed,
                 std::uint64_t episode) {
    const std::uint64_t task_seed = Rng(seed).derive("cl-task").derive(episode).root();
    auto [state, task, obs0] = reset(env, task_seed);
    const std::vector<double>& g = provider.direction(agent.layer);

    Trajectory traj;
    traj.task = task;
    StepRecord ack;
    ack.t = 0;
    ack.action = "OK";
    ack.observation = obs0;
    traj = append_step(traj, std::move(ack));

    const Rng noise_root = Rng(seed).derive("cl-noise").derive(episode);
    const Rng drift_root = Rng(seed).derive("cl-drift").derive(episode);

    bool drifted = false;
    for (int t = 1; !state.terminated && t <= env.horizon; ++t) {
        const bool on_success_path = oracle_step_success(state, traj, env);
        ActivationVector h = provider.hidden_state(
            traj, agent.layer, on_success_path,
            noise_root.derive(static_cast<std::uint64_t>(t)));
        if (steered) h = apply_intervention(h, spec, vec, t);

        double proj = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) proj += h.values[j] * g[j];
        const double hazard = sigmoid(agent.hazard_gain * (agent.hazard_bias - proj));
        Rng draw = drift_root.derive(static_cast<std::uint64_t>(t));
        if (!drifted && draw.uniform01() < hazard) drifted = true;

        ActionSample sample;
        if (drifted) {
            sample = drift_action(draw.derive("action"));
        } else {
            const std::string action = expert_action(state);
            sample = {"I should " + action + " next.", action};
        }
        StepResult result = env_step(state, sample.action);
        state = std::move(result.state);

        StepRecord step;
        step.t = t;
        step.thought = std::move(sample.thought);
        step.action = std::move(sample.action);
        step.observation = std::move(result.observation);
        traj = append_step(traj, std::move(step));
        if (result.done) break;
    }
    return final_reward(state, env) >= env.effective_success_threshold();
}

}  // namespace

std::pair<double, double> paired_bootstrap_ci(const std::vector<int>& baseline,
                                              const std::vector<int>& steered,
                                              int n_resamples, std::uint64_t seed) {
    if (baseline.empty() || baseline.size() != steered.size()) {
        throw EmptyInput("paired bootstrap needs aligned non-empty arms");
    }
    const std::size_t n = baseline.size();
    std::vector<double> diffs(n);
    for (std::size_t i = 0; i < n; ++i) diffs[i] = steered[i] - baseline[i];

    Rng rng = Rng(seed).derive("bootstrap");
    std::vector<double> means(static_cast<std::size_t>(n_resamples));
    for (int b = 0; b < n_resamples; ++b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += diffs[rng.below(n)];
        means[static_cast<std::size_t>(b)] = sum / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const auto lo = static_cast<std::size_t>(0.025 * (n_resamples - 1));
    const auto hi = static_cast<std::size_t>(0.975 * (n_resamples - 1));
    return {means[lo], means[hi]};
}

ClosedLoopResult closed_loop_eval(const EnvConfig& env, const RepresentationConfig& rep,
                                  const CoupledAgentConfig& agent, const InterventionSpec& spec,
                                  const SteeringVector& vec, int n_episodes, std::uint64_t seed,
                                  int bootstrap_resamples) {
    if (n_episodes < 1) throw ValidationError("closed loop needs >= 1 episode");
    env.validate();
    agent.validate();
    spec.validate(env.horizon);
    const RepresentationProvider provider(rep);
    provider.direction(agent.layer);  // fail early on unknown layers

    std::vector<int> baseline(static_cast<std::size_t>(n_episodes));
    std::vector<int> steered(static_cast<std::size_t>(n_episodes));
    for (int i = 0; i < n_episodes; ++i) {
        const auto ep = static_cast<std::uint64_t>(i);
        baseline[static_cast<std::size_t>(i)] =
            run_episode(env, provider, agent, spec, vec, false, seed, ep) ? 1 : 0;
        steered[static_cast<std::size_t>(i)] =
            run_episode(env, provider, agent, spec, vec, true, seed, ep) ? 1 : 0;
    }

    ClosedLoopResult out;
    out.n_episodes = n_episodes;
    double base_sum = 0.0, steer_sum = 0.0;
    for (int i = 0; i < n_episodes; ++i) {
        base_sum += baseline[static_cast<std::size_t>(i)];
        steer_sum += steered[static_cast<std::size_t>(i)];
    }
    out.baseline_success = base_sum / n_episodes;
    out.steered_success = steer_sum / n_episodes;
    out.lift = out.steered_success - out.baseline_success;
    std::tie(out.ci_lo, out.ci_hi) =
        paired_bootstrap_ci(baseline, steered, bootstrap_resamples, Rng(seed).derive("ci").root());
    return out;
}

void save_steering(const SteeringVector& vec, const std::string& source_digest,
                   const std::string& path) {
    ordered_json doc;
    doc["format"] = "steering-vector-v1";
    doc["layer"] = vec.layer;
    doc["d"] = vec.d;
    doc["n_success"] = vec.n_success;
    doc["n_failure"] = vec.n_failure;
    doc["source_digest"] = source_digest;
    doc["digest"] = content_digest(doc.dump());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SinkFailure("cannot open " + path + " for writing");
    out << doc.dump(2) << '\n';
}

std::pair<SteeringVector, std::string> load_steering(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("cannot open " + path + " for reading");
    try {
        ordered_json doc;
        in >> doc;
        SteeringVector vec;
        vec.layer = doc.at("layer").get<int>();
        vec.d = doc.at("d").get<std::vector<double>>();
        vec.n_success = doc.at("n_success").get<int>();
        vec.n_failure = doc.at("n_failure").get<int>();
        ordered_json without = doc;
        without.erase("digest");
        if (content_digest(without.dump()) != doc.at("digest").get<std::string>()) {
            throw ValidationError("steering vector digest mismatch in " + path);
        }
        return {std::move(vec), doc.at("source_digest").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("bad steering vector: ") + e.what());
    }
}

}  // namespace stepconf
