#include "stepconf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stepconf/errors.hpp"

namespace stepconf {

void SplitPlan::validate() const {
    if (fractions.empty()) throw ValidationError("split plan must have at least one split");
    double total = 0.0;
    for (const auto& [split, frac] : fractions) {
        if (frac < 0.0) throw ValidationError("split fractions must be >= 0");
        total += frac;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("split fractions must sum to 1, got " + std::to_string(total));
    }
}

std::vector<int> SplitPlan::counts(int n_episodes) const {
    validate();
    // Largest remainder: counts are exact for any n.
    std::vector<int> out(fractions.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double exact = fractions[i].second * n_episodes;
        out[i] = static_cast<int>(std::floor(exact + 1e-12));
        assigned += out[i];
        remainders.emplace_back(exact - out[i], i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < n_episodes - assigned; ++k) {
        out[remainders[static_cast<std::size_t>(k) % remainders.size()].second] += 1;
    }
    return out;
}

std::vector<Split> SplitPlan::assign(int n_episodes) const {
    const std::vector<int> n = counts(n_episodes);
    std::vector<Split> out;
    out.reserve(n_episodes);
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        for (int k = 0; k < n[i]; ++k) out.push_back(fractions[i].first);
    }
    return out;
}

const PolicyProfile& episode_profile(const std::vector<WeightedProfile>& profiles,
                                     std::uint64_t master_seed, std::uint64_t episode_index) {
    if (profiles.empty()) throw ValidationError("profile mixture is empty");
    double total = 0.0;
    for (const auto& wp : profiles) {
        if (wp.weight < 0.0) throw ValidationError("profile weights must be >= 0");
        total += wp.weight;
    }
    if (total <= 0.0) throw ValidationError("profile weights must sum to > 0");
    Rng rng = Rng(master_seed).derive("profile").derive(episode_index);
    double u = rng.uniform01() * total;
    for (const auto& wp : profiles) {
        u -= wp.weight;
        if (u < 0.0) return wp.profile;
    }
    return profiles.back().profile;
}

std::optional<std::uint64_t> episode_index_from_id(const std::string& task_id) {
    const auto pos = task_id.rfind("-ep");
    if (pos == std::string::npos) return std::nullopt;
    const auto end = task_id.find('-', pos + 3);
    if (end == std::string::npos || end == pos + 3) return std::nullopt;
    std::uint64_t value = 0;
    for (std::size_t i = pos + 3; i < end; ++i) {
        if (task_id[i] < '0' || task_id[i] > '9') return std::nullopt;
        value = value * 10 + static_cast<std::uint64_t>(task_id[i] - '0');
    }
    return value;
}

std::vector<Trajectory> generate_corpus(const EnvConfig& env,
                                        const std::vector<WeightedProfile>& profiles,
                                        const RepresentationConfig& rep, int n_episodes,
                                        const SplitPlan& plan, std::uint64_t master_seed,
                                        std::uint64_t episode_base) {
    if (n_episodes < 1) throw ValidationError("n_episodes must be >= 1");
    env.validate();
    rep.validate();
    plan.validate();
    for (const auto& wp : profiles) wp.profile.validate(env.horizon);

    const RepresentationProvider provider(rep);
    const std::vector<Split> splits = plan.assign(n_episodes);

    std::vector<Trajectory> corpus;
    corpus.reserve(n_episodes);
    for (int i = 0; i < n_episodes; ++i) {
        const std::uint64_t ep = episode_base + static_cast<std::uint64_t>(i);
        const PolicyProfile& profile = episode_profile(profiles, master_seed, ep);
        const std::uint64_t task_seed = Rng(master_seed).derive("task").derive(ep).root();

        auto [state, task, obs0] = reset(env, task_seed);
        task.split = splits[i];
        char id_buf[32];
        std::snprintf(id_buf, sizeof(id_buf), "-ep%llu", static_cast<unsigned long long>(ep));
        const auto mark = task.id.rfind("-s");
        task.id = task.id.substr(0, mark) + id_buf + task.id.substr(mark);

        Trajectory traj;
        traj.task = task;

        StepRecord ack;
        ack.t = 0;
        ack.action = "OK";
        ack.observation = obs0;
        ack.oracle_success = oracle_step_success(state, traj, env);
        traj = append_step(traj, std::move(ack));

        const Rng ep_policy = Rng(master_seed).derive("episode").derive(ep).derive("policy");
        const Rng ep_noise = Rng(master_seed).derive("episode").derive(ep).derive("noise");

        for (int t = 1; !state.terminated && t <= env.horizon; ++t) {
            ActionSample sample = sample_action(profile, traj, state, ep_policy);
            StepResult result = env_step(state, sample.action);
            state = std::move(result.state);

            StepRecord step;
            step.t = t;
            step.thought = std::move(sample.thought);
            step.action = std::move(sample.action);
            step.observation = std::move(result.observation);
            const bool on_success_path = oracle_step_success(state, traj, env);
            step.oracle_success = on_success_path;
            traj = append_step(traj, std::move(step));

            auto& rec = traj.steps.back();
            for (int layer : rep.layers) {
                rec.activations[layer] = provider.hidden_state(
                    traj, layer, on_success_path,
                    ep_noise.derive(static_cast<std::uint64_t>(t))
                        .derive(static_cast<std::uint64_t>(layer)));
            }
            if (result.done) break;
        }

        traj = finalize(std::move(traj), final_reward(state, env));
        corpus.push_back(std::move(traj));
    }
    return corpus;
}

}  // namespace stepconf
