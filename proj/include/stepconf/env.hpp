#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "stepconf/trajectory.hpp"

namespace stepconf {

enum class EnvKind { Dense, Sparse };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& s);

/// Synthetic text-world configuration. Dense tasks are single-room
/// experiment sequences scored by completed sub-goals; sparse tasks are
/// fetch-and-place across rooms scored 0/1 on the goal predicate.
struct EnvConfig {
    EnvKind kind = EnvKind::Dense;
    int n_subgoals = 6;  // dense only
    int horizon = 10;    // max agent actions per episode
    int n_rooms = 3;
    int n_objects = 6;
    std::uint64_t seed = 0;
    int vocab_offset = 0;  // shifts the object vocabulary; used for OOD corpora
    std::optional<double> success_threshold;  // default: dense 0.99, sparse 1.0

    double effective_success_threshold() const;
    void validate() const;
};

/// One plan step of the task's oracle solution. Navigation steps move the
/// agent; manipulation steps require the right room and count as sub-goals.
struct PlanStep {
    std::string action;
    std::string required_room;  // empty = anywhere
    bool is_navigation = false;
};

/// Immutable per-task world: rooms, objects, instruction, oracle plan.
/// Deterministic function of (EnvConfig, task_seed).
struct World {
    EnvConfig config;
    std::uint64_t task_seed = 0;
    std::vector<std::string> rooms;
    std::vector<std::string> objects;
    std::vector<std::pair<std::string, std::vector<std::string>>> room_contents;
    std::vector<PlanStep> plan;
    std::string start_room;
    std::string instruction_text;
    std::string initial_observation;
    std::string task_id;
    std::string domain_tag;

    int n_plan_subgoals() const;
};

struct EnvState {
    std::shared_ptr<const World> world;
    std::string room;
    std::vector<std::string> inventory;
    int plan_pos = 0;       // completed oracle plan steps
    int subgoals_done = 0;  // completed manipulation steps
    int step_count = 0;     // environment actions executed
    bool terminated = false;
};

struct StepResult {
    EnvState state;
    std::string observation;
    bool done = false;
};

/// Fresh state at the world's start room with nothing done yet.
EnvState initial_state(std::shared_ptr<const World> world);

/// Builds the task world and initial state. Pure function of
/// (config, task_seed); every seed is valid.
std::tuple<EnvState, TaskInstruction, std::string> reset(const EnvConfig& config,
                                                         std::uint64_t task_seed);

/// Executes one action. Matching the next plan step advances progress;
/// known-but-useless actions (looking around, walking to an existing room)
/// change nothing but the step count; anything else gets "Nothing happens."
StepResult env_step(const EnvState& state, const std::string& action);

/// Scalar episode reward; requires a terminated state.
double final_reward(const EnvState& state, const EnvConfig& config);

/// The oracle-optimal next action from this state (inserts a navigation
/// step when the next manipulation's room precondition is unmet).
std::string expert_action(const EnvState& state);

/// Number of actions an expert needs from here to finish the plan.
int remaining_expert_steps(const EnvState& state);

/// Best final reward reachable by an expert within `budget` further actions.
double achievable_reward(const EnvState& state, int budget);

/// True iff an expert continuation from this state still reaches a final
/// reward >= the success threshold within the remaining horizon. The
/// remaining budget is horizon - (actions recorded in the prefix).
bool oracle_step_success(const EnvState& state, const Trajectory& traj_prefix,
                         const EnvConfig& config);

/// Task ids encode the task seed ("...-s<hex>") so prefixes can be replayed
/// from reset. Returns nothing when the id was not produced by this module.
std::optional<std::uint64_t> task_seed_from_id(const std::string& task_id);

}  // namespace stepconf
