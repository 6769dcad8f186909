#include "stepconf/env.hpp"

#include <algorithm>
#include <cstdio>

#include "stepconf/errors.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

namespace {

const std::vector<std::string> kRoomPool = {
    "kitchen", "workshop", "greenhouse", "laboratory", "pantry",
    "library", "cellar", "studio", "hallway", "garage"};

const std::vector<std::string> kObjectPool = {
    "tomato",  "battery", "thermometer", "seed",     "beaker",  "magnet",
    "lens",    "coil",    "funnel",      "crucible", "pipette", "flask",
    "prism",   "stirrer", "burner",      "scale",    "jar",     "tongs",
    "filter",  "vial",    "switchboard", "wire",     "clamp",   "mortar"};

const std::vector<std::string> kReceptaclePool = {
    "yellow box", "purple box", "steel crate", "glass cabinet",
    "wooden shelf", "drying rack", "metal bin", "sample tray"};

std::string pool_name(const std::vector<std::string>& pool, int index) {
    const int p = static_cast<int>(pool.size());
    const int round = index / p;
    std::string name = pool[index % p];
    if (round > 0) name += " " + std::to_string(round + 1);
    return name;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += (i + 1 == items.size()) ? " and " : ", ";
        out += items[i];
    }
    return out;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string ordinal_word(int j, int n) {
    if (j == 0) return "First";
    if (j + 1 == n && n > 1) return "Finally";
    return (j % 2 == 1) ? "Next" : "Then";
}

const std::vector<std::string>* contents_of(const World& w, const std::string& room) {
    for (const auto& [r, contents] : w.room_contents) {
        if (r == room) return &contents;
    }
    return nullptr;
}

std::string describe_room(const EnvState& state) {
    std::vector<std::string> visible;
    if (const auto* contents = contents_of(*state.world, state.room)) {
        for (const auto& obj : *contents) {
            bool held = std::find(state.inventory.begin(), state.inventory.end(), obj) !=
                        state.inventory.end();
            if (!held) visible.push_back(obj);
        }
    }
    if (visible.empty()) {
        return "You are in the " + state.room + ". There is nothing useful here.";
    }
    return "You are in the " + state.room + ". You see " + join(visible) + ".";
}

bool is_known_room(const World& w, const std::string& name) {
    return std::find(w.rooms.begin(), w.rooms.end(), name) != w.rooms.end();
}

// Dense sub-goal action for slot j, cycling a handful of manipulation
// templates over the task's objects.
std::string dense_action(int j, const std::vector<std::string>& objects,
                         const std::string& receptacle) {
    const auto& obj = [&](int k) -> const std::string& {
        return objects[k % objects.size()];
    };
    switch (j % 5) {
        case 0: return "focus on the " + obj(j);
        case 1: return "pick up the " + obj(j);
        case 2: return "use the " + obj(j) + " on the " + obj(j + 1);
        case 3: return "measure the " + obj(j);
        default: return "put the " + obj(j) + " in the " + receptacle;
    }
}

}  // namespace

std::string to_string(EnvKind kind) { return kind == EnvKind::Dense ? "dense" : "sparse"; }

EnvKind env_kind_from_string(const std::string& s) {
    if (s == "dense") return EnvKind::Dense;
    if (s == "sparse") return EnvKind::Sparse;
    throw ValidationError("unknown env kind: " + s);
}

double EnvConfig::effective_success_threshold() const {
    if (success_threshold) return *success_threshold;
    return kind == EnvKind::Dense ? 0.99 : 1.0;
}

void EnvConfig::validate() const {
    if (horizon < 1) throw ValidationError("env.horizon must be >= 1");
    if (n_rooms < 1) throw ValidationError("env.n_rooms must be >= 1");
    if (n_objects < 1) throw ValidationError("env.n_objects must be >= 1");
    if (kind == EnvKind::Dense) {
        if (n_subgoals < 1) throw ValidationError("env.n_subgoals must be >= 1");
        if (horizon < n_subgoals) throw ValidationError("env.horizon must be >= env.n_subgoals");
    }
    if (success_threshold && (*success_threshold < 0.0 || *success_threshold > 1.0)) {
        throw ValidationError("env.success_threshold must be in [0,1]");
    }
}

int World::n_plan_subgoals() const {
    int n = 0;
    for (const auto& step : plan) {
        if (!step.is_navigation) ++n;
    }
    return n;
}

EnvState initial_state(std::shared_ptr<const World> world) {
    EnvState state;
    state.room = world->start_room;
    state.world = std::move(world);
    return state;
}

std::tuple<EnvState, TaskInstruction, std::string> reset(const EnvConfig& config,
                                                         std::uint64_t task_seed) {
    config.validate();
    Rng rng = Rng(config.seed).derive("world").derive(task_seed);

    auto world = std::make_shared<World>();
    world->config = config;
    world->task_seed = task_seed;

    // Distinct picks via partial Fisher-Yates over index windows; the object
    // window slides with vocab_offset so OOD corpora draw different names.
    auto pick_distinct = [](Rng stream, int count, int base, int window) {
        std::vector<int> idx(window);
        for (int i = 0; i < window; ++i) idx[i] = base + i;
        std::vector<int> out;
        for (int i = 0; i < count; ++i) {
            const int j = i + static_cast<int>(stream.below(window - i));
            std::swap(idx[i], idx[j]);
            out.push_back(idx[i]);
        }
        return out;
    };

    const int room_window = std::max<int>(config.n_rooms, static_cast<int>(kRoomPool.size()));
    for (int idx : pick_distinct(rng.derive("rooms"), config.n_rooms, 0, room_window)) {
        world->rooms.push_back(pool_name(kRoomPool, idx));
    }
    world->start_room = world->rooms.front();

    const int obj_window = std::max(config.n_objects, 12);
    for (int idx : pick_distinct(rng.derive("objects"), config.n_objects, config.vocab_offset,
                                 obj_window)) {
        world->objects.push_back(pool_name(kObjectPool, idx));
    }
    const std::string receptacle =
        pool_name(kReceptaclePool,
                  static_cast<int>(rng.derive("receptacle").below(kReceptaclePool.size())) +
                      config.vocab_offset);

    if (config.kind == EnvKind::Dense) {
        // Single-room experiment: n_subgoals ordered manipulations.
        std::string enumeration;
        for (int j = 0; j < config.n_subgoals; ++j) {
            PlanStep step;
            step.action = dense_action(j, world->objects, receptacle);
            step.required_room = world->start_room;
            step.is_navigation = false;
            if (j > 0) enumeration += " ";
            enumeration += ordinal_word(j, config.n_subgoals) + ", " + step.action + ".";
            world->plan.push_back(std::move(step));
        }
        world->instruction_text = "Your task: run the " + world->start_room +
                                  " procedure in this exact order. " + enumeration;
        world->room_contents.emplace_back(world->start_room, world->objects);
        world->room_contents.back().second.push_back(receptacle);
        for (std::size_t r = 1; r < world->rooms.size(); ++r) {
            world->room_contents.emplace_back(world->rooms[r], std::vector<std::string>{});
        }
    } else {
        // Fetch-and-place: one goal object, one target receptacle. The goal
        // never starts in the agent's room and moves rooms to reach the
        // target, so the task always takes real navigation (4 plan steps
        // whenever the world has at least 3 rooms).
        const std::string& goal = world->objects.front();
        const std::size_t n_rooms = world->rooms.size();
        std::string src = world->start_room;
        std::string tgt = world->start_room;
        if (n_rooms >= 2) {
            src = world->rooms[1 + rng.derive("src").below(n_rooms - 1)];
            std::size_t t_idx = rng.derive("tgt").below(n_rooms - 1);
            for (std::size_t i = 0; i < n_rooms; ++i) {
                if (world->rooms[i] == src) continue;
                if (t_idx == 0) {
                    tgt = world->rooms[i];
                    break;
                }
                --t_idx;
            }
        }
        if (src != world->start_room) {
            world->plan.push_back({"go to the " + src, src, true});
        }
        world->plan.push_back({"take the " + goal, src, false});
        if (tgt != src) {
            world->plan.push_back({"go to the " + tgt, tgt, true});
        }
        world->plan.push_back({"put the " + goal + " in the " + receptacle, tgt, false});
        world->instruction_text = "Your task: put the " + goal + " in the " + receptacle +
                                  ". The " + goal + " is in the " + src + ", and the " +
                                  receptacle + " is in the " + tgt + ".";
        for (const auto& room : world->rooms) {
            std::vector<std::string> contents;
            if (room == src) contents.push_back(goal);
            if (room == tgt) contents.push_back(receptacle);
            world->room_contents.emplace_back(room, std::move(contents));
        }
        // Scatter the remaining objects for scenery.
        for (std::size_t i = 1; i < world->objects.size(); ++i) {
            world->room_contents[i % world->room_contents.size()].second.push_back(
                world->objects[i]);
        }
    }

    world->domain_tag = to_string(config.kind) + "-world";
    world->task_id = to_string(config.kind) + "-s" + hex16(task_seed);

    EnvState state = initial_state(world);
    world->initial_observation = describe_room(state);

    TaskInstruction task;
    task.id = world->task_id;
    task.text = world->instruction_text;
    task.domain_tag = world->domain_tag;
    return {state, task, world->initial_observation};
}

StepResult env_step(const EnvState& state, const std::string& action) {
    if (state.terminated) throw TerminatedEpisode("env_step on a terminated episode");
    const World& w = *state.world;

    EnvState next = state;
    next.step_count += 1;

    std::string obs;
    const bool plan_left = state.plan_pos < static_cast<int>(w.plan.size());
    const PlanStep* expected = plan_left ? &w.plan[state.plan_pos] : nullptr;

    // Navigation steps match on the action alone (their room field is the
    // destination); manipulations also require being in the right room.
    if (expected && action == expected->action &&
        (expected->is_navigation || expected->required_room.empty() ||
         expected->required_room == state.room)) {
        next.plan_pos += 1;
        if (expected->is_navigation) {
            next.room = expected->required_room;
            obs = describe_room(next);
        } else {
            next.subgoals_done += 1;
            if (action.rfind("take the ", 0) == 0) {
                next.inventory.push_back(action.substr(9));
            } else if (action.rfind("pick up the ", 0) == 0) {
                next.inventory.push_back(action.substr(12));
            }
            obs = "You " + action + ". That was the right thing to do.";
        }
    } else if (action.rfind("go to the ", 0) == 0 && is_known_room(w, action.substr(10))) {
        next.room = action.substr(10);
        obs = describe_room(next);
    } else if (action == "look around") {
        obs = describe_room(next);
    } else {
        obs = "Nothing happens.";
    }

    if (next.plan_pos == static_cast<int>(w.plan.size()) || next.step_count >= w.config.horizon) {
        next.terminated = true;
    }
    const bool done = next.terminated;
    return {std::move(next), std::move(obs), done};
}

double final_reward(const EnvState& state, const EnvConfig& config) {
    if (!state.terminated) throw EpisodeNotTerminated("final_reward requires a terminated episode");
    if (config.kind == EnvKind::Dense) {
        const int n = std::max(1, config.n_subgoals);
        return static_cast<double>(state.subgoals_done) / static_cast<double>(n);
    }
    return state.plan_pos == static_cast<int>(state.world->plan.size()) ? 1.0 : 0.0;
}

std::string expert_action(const EnvState& state) {
    const World& w = *state.world;
    if (state.plan_pos >= static_cast<int>(w.plan.size())) return "look around";
    const PlanStep& step = w.plan[state.plan_pos];
    if (!step.is_navigation && !step.required_room.empty() && state.room != step.required_room) {
        return "go to the " + step.required_room;
    }
    return step.action;
}

int remaining_expert_steps(const EnvState& state) {
    const World& w = *state.world;
    int n = 0;
    std::string room = state.room;
    for (int i = state.plan_pos; i < static_cast<int>(w.plan.size()); ++i) {
        const PlanStep& step = w.plan[i];
        if (step.is_navigation) {
            n += 1;
        } else {
            if (!step.required_room.empty() && room != step.required_room) n += 1;
            n += 1;
        }
        if (!step.required_room.empty()) room = step.required_room;
    }
    return n;
}

double achievable_reward(const EnvState& state, int budget) {
    const World& w = *state.world;
    int b = std::max(0, budget);
    int subgoals = state.subgoals_done;
    int pos = state.plan_pos;
    std::string room = state.room;
    while (pos < static_cast<int>(w.plan.size())) {
        const PlanStep& step = w.plan[pos];
        int cost = 1;
        if (!step.is_navigation && !step.required_room.empty() && room != step.required_room) {
            cost = 2;
        }
        if (b < cost) break;
        b -= cost;
        pos += 1;
        if (!step.is_navigation) subgoals += 1;
        if (!step.required_room.empty()) room = step.required_room;
    }
    if (w.config.kind == EnvKind::Dense) {
        return static_cast<double>(subgoals) / static_cast<double>(std::max(1, w.config.n_subgoals));
    }
    return pos == static_cast<int>(w.plan.size()) ? 1.0 : 0.0;
}

bool oracle_step_success(const EnvState& state, const Trajectory& traj_prefix,
                         const EnvConfig& config) {
    (void)traj_prefix;  // the budget is carried by the state's step count
    const int budget = config.horizon - state.step_count;
    return achievable_reward(state, budget) >= config.effective_success_threshold();
}

std::optional<std::uint64_t> task_seed_from_id(const std::string& task_id) {
    const auto pos = task_id.rfind("-s");
    if (pos == std::string::npos || pos + 2 >= task_id.size()) return std::nullopt;
    const std::string hex = task_id.substr(pos + 2);
    if (hex.size() != 16) return std::nullopt;
    std::uint64_t value = 0;
    for (char c : hex) {
        int digit;
        if (c >= '0' && c <= '9') digit = c - '0';
        else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
        else return std::nullopt;
        value = (value << 4) | static_cast<std::uint64_t>(digit);
    }
    return value;
}

}  // namespace stepconf
