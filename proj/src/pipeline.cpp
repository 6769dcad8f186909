#include "stepconf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stepconf/digest.hpp"
#include "stepconf/errors.hpp"
#include "stepconf/records.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kOodVocabShift = 12;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::string fmt_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return std::string(buf);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void PipelineConfig::validate() const {
    env.validate();
    rep.validate();
    thresholds.validate();
    train.validate();
    intervention.validate(env.horizon);
    coupled.validate();
    splits.validate();
    if (profiles.empty()) throw ValidationError("at least one policy profile is required");
    for (const auto& wp : profiles) {
        wp.profile.validate(env.horizon);
        if (wp.weight < 0.0) throw ValidationError("profile weights must be >= 0");
    }
    if (splits.fractions.size() != 3) {
        throw ValidationError("splits must define train/calibration/probe-train fractions");
    }
    if (start_timestep < 0) throw ValidationError("start_timestep must be >= 0");
    if (start_timestep > env.horizon) {
        throw ValidationError("start_timestep must not exceed the horizon");
    }
    if (n_episodes < 1) throw ValidationError("n_episodes must be >= 1");
    if (n_test_episodes < 1) throw ValidationError("n_test_episodes must be >= 1");
    if (steer_episodes < 1) throw ValidationError("steer_episodes must be >= 1");
    if (output_dir.empty()) throw ValidationError("output_dir must be set");
}

PipelineConfig default_config() {
    PipelineConfig cfg;
    cfg.env.kind = EnvKind::Dense;
    cfg.env.n_subgoals = 6;
    cfg.env.horizon = 10;
    cfg.env.n_rooms = 3;
    cfg.env.n_objects = 6;

    PolicyProfile expert;
    PolicyProfile noisy;
    noisy.kind = PolicyKind::Noisy;
    noisy.error_rate = 0.25;
    PolicyProfile drifting;
    drifting.kind = PolicyKind::Drifting;
    drifting.drift_onset_min = 2;
    drifting.drift_onset_max = 6;
    cfg.profiles = {{expert, 0.3}, {noisy, 0.3}, {drifting, 0.4}};

    cfg.splits.fractions = {{Split::Train, 0.6}, {Split::Calibration, 0.2},
                            {Split::ProbeTrain, 0.2}};
    cfg.intervention.timesteps = {3};
    cfg.intervention.coefficient = 0.025;
    return cfg;
}

namespace {

std::string profiles_canonical(const std::vector<WeightedProfile>& profiles) {
    std::string out;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (i) out += ",";
        out += to_string(profiles[i].profile.kind) + ":" + fmt(profiles[i].weight);
    }
    return out;
}

}  // namespace

std::string PipelineConfig::canonical_text() const {
    std::ostringstream out;
    out << "env.kind = " << to_string(env.kind) << "\n";
    out << "env.n_subgoals = " << env.n_subgoals << "\n";
    out << "env.horizon = " << env.horizon << "\n";
    out << "env.n_rooms = " << env.n_rooms << "\n";
    out << "env.n_objects = " << env.n_objects << "\n";
    out << "env.seed = " << env.seed << "\n";
    out << "env.vocab_offset = " << env.vocab_offset << "\n";
    out << "env.success_threshold = "
        << (env.success_threshold ? fmt(*env.success_threshold) : std::string("auto")) << "\n";
    out << "rep.dim = " << rep.dim << "\n";
    out << "rep.layers = ";
    for (std::size_t i = 0; i < rep.layers.size(); ++i) {
        if (i) out << ",";
        out << rep.layers[i];
    }
    out << "\n";
    out << "rep.margin = " << fmt(rep.margin) << "\n";
    out << "rep.noise_sigma = " << fmt(rep.noise_sigma) << "\n";
    out << "rep.seed = " << rep.seed << "\n";
    out << "profiles = " << profiles_canonical(profiles) << "\n";
    for (const auto& wp : profiles) {
        if (wp.profile.kind == PolicyKind::Noisy) {
            out << "noisy.error_rate = " << fmt(wp.profile.error_rate) << "\n";
        }
        if (wp.profile.kind == PolicyKind::Drifting) {
            out << "drifting.onset_min = " << wp.profile.drift_onset_min << "\n";
            out << "drifting.onset_max = " << wp.profile.drift_onset_max << "\n";
        }
    }
    out << "budget.n_rollouts = " << budget.n_rollouts << "\n";
    out << "budget.max_rollout_steps = " << budget.max_rollout_steps << "\n";
    out << "budget.seed = " << budget.seed << "\n";
    out << "thresholds.eps_s = " << fmt(thresholds.eps_s) << "\n";
    out << "thresholds.eps_f = " << fmt(thresholds.eps_f) << "\n";
    out << "calibration.min_per_cell = " << min_per_cell << "\n";
    out << "calibration.label_source = "
        << (calibration_label_source == CalibrationLabelSource::OracleStep ? "oracle_step"
                                                                           : "episode_outcome")
        << "\n";
    out << "probe.label_source = "
        << (probe_label_source == ProbeLabelSource::Conformal ? "conformal" : "oracle") << "\n";
    out << "train.learning_rate = " << fmt(train.learning_rate) << "\n";
    out << "train.max_epochs = " << train.max_epochs << "\n";
    out << "train.l2_lambda = " << fmt(train.l2_lambda) << "\n";
    out << "train.val_fraction = " << fmt(train.val_fraction) << "\n";
    out << "train.patience = " << train.patience << "\n";
    out << "train.seed = " << train.seed << "\n";
    out << "intervention.layer = "
        << (intervention_layer_auto ? std::string("auto") : std::to_string(intervention.layer))
        << "\n";
    out << "intervention.timesteps = ";
    for (std::size_t i = 0; i < intervention.timesteps.size(); ++i) {
        if (i) out << ",";
        out << intervention.timesteps[i];
    }
    out << "\n";
    out << "intervention.coefficient = " << fmt(intervention.coefficient) << "\n";
    out << "coupled.hazard_gain = " << fmt(coupled.hazard_gain) << "\n";
    out << "coupled.hazard_bias = " << fmt(coupled.hazard_bias) << "\n";
    out << "splits = ";
    for (std::size_t i = 0; i < splits.fractions.size(); ++i) {
        if (i) out << ",";
        out << fmt(splits.fractions[i].second);
    }
    out << "\n";
    out << "start_timestep = " << start_timestep << "\n";
    out << "n_episodes = " << n_episodes << "\n";
    out << "n_test_episodes = " << n_test_episodes << "\n";
    out << "steer_episodes = " << steer_episodes << "\n";
    out << "compare_dir = " << compare_dir << "\n";
    out << "master_seed = " << master_seed << "\n";
    return out.str();
}

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg = default_config();
    PolicyProfile noisy_params;
    noisy_params.kind = PolicyKind::Noisy;
    noisy_params.error_rate = 0.25;
    PolicyProfile drifting_params;
    drifting_params.kind = PolicyKind::Drifting;
    drifting_params.drift_onset_min = 2;
    drifting_params.drift_onset_max = 6;
    std::optional<std::string> profiles_line;

    auto to_i = [](const std::string& k, const std::string& v) {
        try {
            return std::stoi(trim(v));
        } catch (const std::exception&) {
            throw ValidationError("bad integer for " + k + ": '" + v + "'");
        }
    };
    auto to_u = [](const std::string& k, const std::string& v) -> std::uint64_t {
        try {
            return std::stoull(trim(v));
        } catch (const std::exception&) {
            throw ValidationError("bad unsigned for " + k + ": '" + v + "'");
        }
    };
    auto to_d = [](const std::string& k, const std::string& v) {
        try {
            return std::stod(trim(v));
        } catch (const std::exception&) {
            throw ValidationError("bad real for " + k + ": '" + v + "'");
        }
    };

    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(line_no) + " is not key = value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));

        if (key == "env.kind") cfg.env.kind = env_kind_from_string(value);
        else if (key == "env.n_subgoals") cfg.env.n_subgoals = to_i(key, value);
        else if (key == "env.horizon") cfg.env.horizon = to_i(key, value);
        else if (key == "env.n_rooms") cfg.env.n_rooms = to_i(key, value);
        else if (key == "env.n_objects") cfg.env.n_objects = to_i(key, value);
        else if (key == "env.seed") cfg.env.seed = to_u(key, value);
        else if (key == "env.vocab_offset") cfg.env.vocab_offset = to_i(key, value);
        else if (key == "env.success_threshold") {
            if (value == "auto") cfg.env.success_threshold.reset();
            else cfg.env.success_threshold = to_d(key, value);
        } else if (key == "rep.dim") cfg.rep.dim = to_i(key, value);
        else if (key == "rep.layers") {
            cfg.rep.layers.clear();
            for (const auto& item : split_list(value)) cfg.rep.layers.push_back(to_i(key, item));
        } else if (key == "rep.margin") cfg.rep.margin = to_d(key, value);
        else if (key == "rep.noise_sigma") cfg.rep.noise_sigma = to_d(key, value);
        else if (key == "rep.seed") cfg.rep.seed = to_u(key, value);
        else if (key == "profiles") profiles_line = value;
        else if (key == "noisy.error_rate") noisy_params.error_rate = to_d(key, value);
        else if (key == "drifting.onset_min") drifting_params.drift_onset_min = to_i(key, value);
        else if (key == "drifting.onset_max") drifting_params.drift_onset_max = to_i(key, value);
        else if (key == "budget.n_rollouts") cfg.budget.n_rollouts = to_i(key, value);
        else if (key == "budget.max_rollout_steps") cfg.budget.max_rollout_steps = to_i(key, value);
        else if (key == "budget.seed") cfg.budget.seed = to_u(key, value);
        else if (key == "thresholds.eps_s") cfg.thresholds.eps_s = to_d(key, value);
        else if (key == "thresholds.eps_f") cfg.thresholds.eps_f = to_d(key, value);
        else if (key == "calibration.min_per_cell") cfg.min_per_cell = to_i(key, value);
        else if (key == "calibration.label_source") {
            if (value == "oracle_step") {
                cfg.calibration_label_source = CalibrationLabelSource::OracleStep;
            } else if (value == "episode_outcome") {
                cfg.calibration_label_source = CalibrationLabelSource::EpisodeOutcome;
            } else {
                throw ValidationError("calibration.label_source must be oracle_step or "
                                      "episode_outcome");
            }
        } else if (key == "probe.label_source") {
            if (value == "conformal") cfg.probe_label_source = ProbeLabelSource::Conformal;
            else if (value == "oracle") cfg.probe_label_source = ProbeLabelSource::Oracle;
            else throw ValidationError("probe.label_source must be conformal or oracle");
        } else if (key == "train.learning_rate") cfg.train.learning_rate = to_d(key, value);
        else if (key == "train.max_epochs") cfg.train.max_epochs = to_i(key, value);
        else if (key == "train.l2_lambda") cfg.train.l2_lambda = to_d(key, value);
        else if (key == "train.val_fraction") cfg.train.val_fraction = to_d(key, value);
        else if (key == "train.patience") cfg.train.patience = to_i(key, value);
        else if (key == "train.seed") cfg.train.seed = to_u(key, value);
        else if (key == "intervention.layer") {
            if (value == "auto") {
                cfg.intervention_layer_auto = true;
            } else {
                cfg.intervention_layer_auto = false;
                cfg.intervention.layer = to_i(key, value);
            }
        } else if (key == "intervention.timesteps") {
            cfg.intervention.timesteps.clear();
            for (const auto& item : split_list(value)) {
                cfg.intervention.timesteps.push_back(to_i(key, item));
            }
        } else if (key == "intervention.coefficient") {
            cfg.intervention.coefficient = to_d(key, value);
        } else if (key == "coupled.hazard_gain") cfg.coupled.hazard_gain = to_d(key, value);
        else if (key == "coupled.hazard_bias") cfg.coupled.hazard_bias = to_d(key, value);
        else if (key == "splits") {
            const auto parts = split_list(value);
            if (parts.size() != 3) {
                throw ValidationError("splits must be three fractions: train,calibration,probe");
            }
            cfg.splits.fractions = {{Split::Train, to_d(key, parts[0])},
                                    {Split::Calibration, to_d(key, parts[1])},
                                    {Split::ProbeTrain, to_d(key, parts[2])}};
        } else if (key == "start_timestep") cfg.start_timestep = to_i(key, value);
        else if (key == "n_episodes") cfg.n_episodes = to_i(key, value);
        else if (key == "n_test_episodes") cfg.n_test_episodes = to_i(key, value);
        else if (key == "steer_episodes") cfg.steer_episodes = to_i(key, value);
        else if (key == "compare_dir") cfg.compare_dir = value;
        else if (key == "output_dir") cfg.output_dir = value;
        else if (key == "master_seed") cfg.master_seed = to_u(key, value);
        else throw ValidationError("unknown config key: " + key);
    }

    std::vector<WeightedProfile> profiles;
    const std::string spec_line = profiles_line.value_or("expert:0.3,noisy:0.3,drifting:0.4");
    for (const auto& item : split_list(spec_line)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ValidationError("profiles entries must be kind:weight, got '" + item + "'");
        }
        const PolicyKind kind = policy_kind_from_string(trim(item.substr(0, colon)));
        const double weight = to_d("profiles", item.substr(colon + 1));
        PolicyProfile profile;
        switch (kind) {
            case PolicyKind::Expert: break;
            case PolicyKind::Noisy: profile = noisy_params; break;
            case PolicyKind::Drifting: profile = drifting_params; break;
        }
        profile.kind = kind;
        profiles.push_back({profile, weight});
    }
    cfg.profiles = std::move(profiles);

    cfg.validate();
    return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

namespace {

// All zero seeds are stand-ins for "derive me from the master seed".
PipelineConfig resolve_seeds(PipelineConfig cfg) {
    const Rng master(cfg.master_seed);
    if (cfg.env.seed == 0) cfg.env.seed = master.derive("env").root();
    if (cfg.rep.seed == 0) cfg.rep.seed = master.derive("rep").root();
    if (cfg.budget.seed == 0) cfg.budget.seed = master.derive("reward").root();
    if (cfg.train.seed == 0) cfg.train.seed = master.derive("probe").root();
    for (std::size_t i = 0; i < cfg.profiles.size(); ++i) {
        if (cfg.profiles[i].profile.seed == 0) {
            cfg.profiles[i].profile.seed = master.derive("profile-seed").derive(i).root();
        }
    }
    return cfg;
}

const std::map<std::string, std::vector<std::string>> kStageDeps = {
    {"generate", {}},
    {"reward", {"generate"}},
    {"calibrate", {"reward"}},
    {"label", {"calibrate", "reward"}},
    {"probe", {"label", "reward"}},
    {"steer", {"probe", "label", "reward"}},
    {"report", {"calibrate", "label", "probe", "steer", "reward"}},
};

std::string artifact_path(const std::string& stage) {
    if (stage == "generate") return "corpus.jsonl";
    if (stage == "reward") return "corpus_rewarded.jsonl";
    if (stage == "calibrate") return "calibration.json";
    if (stage == "label") return "labels.jsonl";
    if (stage == "probe") return "probes.json";
    if (stage == "steer") return "steering.json";
    return "report";
}

// The slice of the config a stage's output depends on.
std::string config_subsection(const PipelineConfig& cfg, const std::string& stage) {
    std::ostringstream out;
    const std::string all = cfg.canonical_text();
    auto grab = [&](std::initializer_list<const char*> prefixes) {
        std::istringstream in(all);
        std::string line;
        while (std::getline(in, line)) {
            for (const char* p : prefixes) {
                if (line.rfind(p, 0) == 0) {
                    out << line << "\n";
                    break;
                }
            }
        }
    };
    if (stage == "generate") {
        grab({"env.", "rep.", "profiles", "noisy.", "drifting.", "splits", "n_episodes",
              "n_test_episodes", "master_seed"});
    } else if (stage == "reward") {
        grab({"env.", "profiles", "noisy.", "drifting.", "budget.", "master_seed"});
    } else if (stage == "calibrate") {
        grab({"thresholds.", "calibration.", "start_timestep", "env.kind",
              "env.success_threshold", "env.n_subgoals"});
    } else if (stage == "label") {
        grab({"thresholds.", "start_timestep"});
    } else if (stage == "probe") {
        grab({"train.", "probe.", "rep.layers", "start_timestep", "env.horizon"});
    } else if (stage == "steer") {
        grab({"env.", "rep.", "intervention.", "coupled.", "probe.", "steer_episodes",
              "start_timestep", "master_seed"});
    } else {  // report
        grab({"env.kind", "thresholds.", "calibration.", "probe.", "rep.layers",
              "start_timestep", "compare_dir", "env.horizon", "env.success_threshold",
              "env.n_subgoals"});
    }
    return out.str();
}

std::string dir_digest(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    std::string acc;
    for (const auto& name : names) {
        acc += name + ":" + file_digest((dir / name).string()) + "\n";
    }
    return content_digest(acc);
}

std::string stage_artifact_digest(const fs::path& out_dir, const std::string& stage) {
    const fs::path p = out_dir / artifact_path(stage);
    if (stage == "report") return dir_digest(p);
    return file_digest(p.string());
}

bool stage_artifact_exists(const fs::path& out_dir, const std::string& stage) {
    const fs::path p = out_dir / artifact_path(stage);
    return stage == "report" ? fs::is_directory(p) : fs::is_regular_file(p);
}

// ---------------------------------------------------------------------------
// Label file helpers
// ---------------------------------------------------------------------------

struct LabelRow {
    std::string task_id;
    int t;
    StepLabel label;
};

void write_labels(const std::vector<LabelRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SinkFailure("cannot open " + path + " for writing");
    for (const auto& row : rows) {
        ordered_json rec;
        rec["task_id"] = row.task_id;
        rec["t"] = row.t;
        rec["p_s"] = row.label.pvalues.p_s;
        rec["p_f"] = row.label.pvalues.p_f;
        rec["n_s"] = row.label.pvalues.n_s;
        rec["n_f"] = row.label.pvalues.n_f;
        rec["label"] = to_string(row.label.value);
        out << rec.dump() << '\n';
    }
}

StepLabelMap read_label_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("cannot open " + path + " for reading");
    StepLabelMap map;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const ordered_json rec = ordered_json::parse(line);
            const std::string v = rec.at("label").get<std::string>();
            LabelValue value = LabelValue::Abstain;
            if (v == "success") value = LabelValue::Success;
            else if (v == "failure") value = LabelValue::Failure;
            map[{rec.at("task_id").get<std::string>(), rec.at("t").get<int>()}] = value;
        } catch (const nlohmann::json::exception& e) {
            throw MalformedRecord(std::string("bad label row: ") + e.what(), line_no);
        }
    }
    return map;
}

StepLabelMap oracle_label_map(const std::vector<Trajectory>& corpus) {
    StepLabelMap map;
    for (const auto& traj : corpus) {
        for (const auto& step : traj.steps) {
            if (step.oracle_success) {
                map[{traj.task.id, step.t}] =
                    *step.oracle_success ? LabelValue::Success : LabelValue::Failure;
            }
        }
    }
    return map;
}

std::vector<Trajectory> split_of(const std::vector<Trajectory>& corpus, Split split) {
    std::vector<Trajectory> out;
    for (const auto& traj : corpus) {
        if (traj.task.split == split) out.push_back(traj);
    }
    return out;
}

EnvConfig env_for_split(const PipelineConfig& cfg, Split split) {
    EnvConfig env = cfg.env;
    if (split == Split::TestOod) env.vocab_offset += kOodVocabShift;
    return env;
}

std::vector<int> probe_timesteps(const PipelineConfig& cfg) {
    std::vector<int> out;
    for (int t = cfg.start_timestep; t <= cfg.env.horizon; ++t) out.push_back(t);
    return out;
}

// ---------------------------------------------------------------------------
// Stage implementations
// ---------------------------------------------------------------------------

void stage_generate(const PipelineConfig& cfg, const fs::path& out_dir) {
    std::vector<Trajectory> corpus =
        generate_corpus(cfg.env, cfg.profiles, cfg.rep, cfg.n_episodes, cfg.splits,
                        cfg.master_seed, 0);
    SplitPlan id_plan{{{Split::TestId, 1.0}}};
    auto test_id = generate_corpus(cfg.env, cfg.profiles, cfg.rep, cfg.n_test_episodes, id_plan,
                                   cfg.master_seed, static_cast<std::uint64_t>(cfg.n_episodes));
    SplitPlan ood_plan{{{Split::TestOod, 1.0}}};
    auto test_ood = generate_corpus(
        env_for_split(cfg, Split::TestOod), cfg.profiles, cfg.rep, cfg.n_test_episodes, ood_plan,
        cfg.master_seed, static_cast<std::uint64_t>(cfg.n_episodes + cfg.n_test_episodes));
    corpus.insert(corpus.end(), std::make_move_iterator(test_id.begin()),
                  std::make_move_iterator(test_id.end()));
    corpus.insert(corpus.end(), std::make_move_iterator(test_ood.begin()),
                  std::make_move_iterator(test_ood.end()));
    write_records_file(corpus, (out_dir / "corpus.jsonl").string());
}

void stage_reward(const PipelineConfig& cfg, const fs::path& out_dir) {
    auto corpus = read_records_file((out_dir / "corpus.jsonl").string());
    for (auto& traj : corpus) {
        const auto ep = episode_index_from_id(traj.task.id);
        if (!ep) throw StageFailure("trajectory " + traj.task.id + " has no episode index");
        const PolicyProfile& profile = episode_profile(cfg.profiles, cfg.master_seed, *ep);
        RolloutBudget budget = cfg.budget;
        budget.seed = Rng(cfg.budget.seed).derive("episode").derive(*ep).root();
        const EnvConfig env = env_for_split(cfg, traj.task.split);
        const auto estimates = estimate_trajectory_rewards(traj, profile, env, budget, 0);
        for (const auto& est : estimates) {
            traj.steps[static_cast<std::size_t>(est.t)].r_t = est.r_t;
        }
    }
    write_records_file(corpus, (out_dir / "corpus_rewarded.jsonl").string());
}

std::vector<LabeledStepReward> outcome_steps(const PipelineConfig& cfg,
                                             const std::vector<Trajectory>& trajs) {
    std::vector<LabeledStepReward> out;
    for (const auto& traj : trajs) {
        bool episode_success = false;
        if (cfg.calibration_label_source == CalibrationLabelSource::EpisodeOutcome) {
            episode_success =
                outcome_of(traj, env_for_split(cfg, traj.task.split).effective_success_threshold())
                    .success;
        }
        for (const auto& step : traj.steps) {
            if (step.t < cfg.start_timestep || !step.r_t) continue;
            bool outcome;
            if (cfg.calibration_label_source == CalibrationLabelSource::OracleStep) {
                if (!step.oracle_success) {
                    throw StageFailure("calibration.label_source = oracle_step but " +
                                       traj.task.id + " t=" + std::to_string(step.t) +
                                       " has no oracle_success; use episode_outcome");
                }
                outcome = *step.oracle_success;
            } else {
                outcome = episode_success;
            }
            out.push_back({step.t, *step.r_t, outcome});
        }
    }
    return out;
}

void stage_calibrate(const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto corpus = read_records_file((out_dir / "corpus_rewarded.jsonl").string());
    const auto steps = outcome_steps(cfg, split_of(corpus, Split::Calibration));
    const CalibrationStore store = calibrate(steps, cfg.min_per_cell);
    save_store(store, cfg.thresholds, (out_dir / "calibration.json").string());
}

void stage_label(const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto corpus = read_records_file((out_dir / "corpus_rewarded.jsonl").string());
    auto [store, thr] = load_store((out_dir / "calibration.json").string());
    std::vector<LabelRow> rows;
    for (const auto& traj : corpus) {
        for (const auto& step : traj.steps) {
            if (step.t < cfg.start_timestep || !step.r_t) continue;
            rows.push_back({traj.task.id, step.t, label_step(*step.r_t, step.t, store, thr)});
        }
    }
    write_labels(rows, (out_dir / "labels.jsonl").string());
}

StepLabelMap probe_labels(const PipelineConfig& cfg, const std::vector<Trajectory>& corpus,
                          const fs::path& out_dir) {
    if (cfg.probe_label_source == ProbeLabelSource::Conformal) {
        return read_label_map((out_dir / "labels.jsonl").string());
    }
    return oracle_label_map(corpus);
}

void stage_probe(const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto corpus = read_records_file((out_dir / "corpus_rewarded.jsonl").string());
    const auto labels = probe_labels(cfg, corpus, out_dir);
    const ProbeGrid grid = train_grid(split_of(corpus, Split::ProbeTrain), labels, cfg.rep.layers,
                                      probe_timesteps(cfg), cfg.train);
    save_grid(grid, content_digest(cfg.canonical_text()), (out_dir / "probes.json").string());
}

int choose_intervention_layer(const PipelineConfig& cfg, const ProbeGrid& grid) {
    if (!cfg.intervention_layer_auto) return cfg.intervention.layer;
    // Heuristic: the layer whose probe validates best at the first
    // intervention timestep, then best anywhere, then the first layer.
    const int at_t = cfg.intervention.timesteps.empty() ? 3 : cfg.intervention.timesteps.front();
    int best_layer = 0;
    double best_acc = -1.0;
    for (const auto& [key, cell] : grid) {
        if (key.timestep != at_t || !cell.val_metrics) continue;
        if (cell.val_metrics->accuracy > best_acc) {
            best_acc = cell.val_metrics->accuracy;
            best_layer = key.layer;
        }
    }
    if (best_layer > 0) return best_layer;
    for (const auto& [key, cell] : grid) {
        if (!cell.val_metrics) continue;
        if (cell.val_metrics->accuracy > best_acc) {
            best_acc = cell.val_metrics->accuracy;
            best_layer = key.layer;
        }
    }
    return best_layer > 0 ? best_layer : cfg.rep.layers.front();
}

void stage_steer(const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto corpus = read_records_file((out_dir / "corpus_rewarded.jsonl").string());
    const auto labels = probe_labels(cfg, corpus, out_dir);
    const ProbeGrid grid = load_grid((out_dir / "probes.json").string());
    const int layer = choose_intervention_layer(cfg, grid);

    std::vector<std::vector<double>> success_acts, failure_acts;
    for (const auto& traj : split_of(corpus, Split::ProbeTrain)) {
        for (const auto& step : traj.steps) {
            if (step.t < cfg.start_timestep) continue;
            const auto it = labels.find({traj.task.id, step.t});
            if (it == labels.end() || it->second == LabelValue::Abstain) continue;
            const auto act = step.activations.find(layer);
            if (act == step.activations.end()) continue;
            (it->second == LabelValue::Success ? success_acts : failure_acts)
                .push_back(act->second.values);
        }
    }
    if (success_acts.size() < 10 || failure_acts.size() < 10) {
        throw StageFailure(
            "steering needs >= 10 probe-train activations per conformal class, got " +
            std::to_string(success_acts.size()) + " success / " +
            std::to_string(failure_acts.size()) +
            " failure; sparse-reward corpora usually need "
            "calibration.label_source = episode_outcome or more episodes");
    }
    const SteeringVector vec = compute_direction(success_acts, failure_acts, layer);

    InterventionSpec spec = cfg.intervention;
    spec.layer = layer;
    CoupledAgentConfig agent = cfg.coupled;
    agent.layer = layer;
    const ClosedLoopResult loop =
        closed_loop_eval(cfg.env, cfg.rep, agent, spec, vec, cfg.steer_episodes,
                         Rng(cfg.master_seed).derive("steer").root());

    ordered_json doc;
    doc["format"] = "steering-stage-v1";
    doc["layer"] = vec.layer;
    doc["d"] = vec.d;
    doc["n_success"] = vec.n_success;
    doc["n_failure"] = vec.n_failure;
    doc["source_digest"] = file_digest((out_dir / "corpus_rewarded.jsonl").string());
    doc["intervention"] = {{"timesteps", spec.timesteps}, {"coefficient", spec.coefficient}};
    doc["closed_loop"] = {{"baseline_success", loop.baseline_success},
                          {"steered_success", loop.steered_success},
                          {"lift", loop.lift},
                          {"ci_lo", loop.ci_lo},
                          {"ci_hi", loop.ci_hi},
                          {"n_episodes", loop.n_episodes}};
    doc["digest"] = content_digest(doc.dump());
    std::ofstream out(out_dir / "steering.json", std::ios::binary);
    if (!out) throw SinkFailure("cannot write steering.json");
    out << doc.dump(2) << '\n';
}

// Audit table rows per timestep plus a pooled row.
std::string audit_csv(const CalibrationStore& store, const Thresholds& thr,
                      const std::vector<LabeledStepReward>& heldout, std::string* table_out) {
    std::map<int, std::vector<LabeledStepReward>> by_t;
    for (const auto& step : heldout) by_t[step.t].push_back(step);

    std::string csv = "t,n_true,n_false,fnr,fpr,abstain_rate,bound_fnr,bound_fpr\n";
    std::string table = "    t   n_true  n_false      fnr      fpr  abstain  bound_s  bound_f\n";
    auto add_row = [&](const std::string& name, const AuditResult& a) {
        csv += name + "," + std::to_string(a.n_true) + "," + std::to_string(a.n_false) + "," +
               fmt_fixed(a.fnr, 4) + "," + fmt_fixed(a.fpr, 4) + "," +
               fmt_fixed(a.abstain_rate, 4) + "," + fmt_fixed(thr.eps_s, 4) + "," +
               fmt_fixed(thr.eps_f, 4) + "\n";
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%5s %8d %8d %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                      name.c_str(), a.n_true, a.n_false, a.fnr, a.fpr, a.abstain_rate, thr.eps_s,
                      thr.eps_f);
        table += buf;
    };
    for (const auto& [t, steps] : by_t) {
        add_row(std::to_string(t), audit_error_rates(store, thr, steps));
    }
    add_row("all", audit_error_rates(store, thr, heldout));
    if (table_out) *table_out = table;
    return csv;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SinkFailure("cannot write " + path.string());
    out << text;
}

struct CompareInfo {
    bool available = false;
    std::string kind_this, kind_other;
    double mean_this = 0.0, mean_other = 0.0;
    std::string other_dir;
};

void stage_report(const PipelineConfig& cfg, const fs::path& out_dir) {
    const auto corpus = read_records_file((out_dir / "corpus_rewarded.jsonl").string());
    const auto labels = probe_labels(cfg, corpus, out_dir);
    const ProbeGrid grid = load_grid((out_dir / "probes.json").string());
    auto [store, thr] = load_store((out_dir / "calibration.json").string());

    const fs::path report_dir = out_dir / "report";
    fs::create_directories(report_dir);
    for (const auto& entry : fs::directory_iterator(report_dir)) {
        fs::remove_all(entry.path());  // stale files would corrupt the digest
    }

    const std::vector<int> timesteps = probe_timesteps(cfg);
    const std::string label_note =
        cfg.probe_label_source == ProbeLabelSource::Conformal ? "conformal" : "oracle";

    // (a)+(b) accuracy / F1 grids on both test splits.
    for (const auto& [split, tag] :
         std::vector<std::pair<Split, std::string>>{{Split::TestId, "id"},
                                                    {Split::TestOod, "ood"}}) {
        const GridEvaluation eval = evaluate(grid, split_of(corpus, split), labels);
        std::map<ActivationKey, double> acc, f1;
        for (const auto& [key, m] : eval.cells) {
            acc[key] = 100.0 * m.accuracy;
            f1[key] = m.f1;
        }
        write_text(report_dir / ("accuracy_" + tag + ".csv"),
                   grid_csv(acc, cfg.rep.layers, timesteps, 1));
        write_text(report_dir / ("accuracy_" + tag + ".txt"),
                   "Probe accuracy (%) on " + tag + " test split (" + label_note + " labels)\n" +
                       grid_table(acc, cfg.rep.layers, timesteps, 1) + "macro accuracy: " +
                       fmt_fixed(100.0 * eval.macro_accuracy, 2) + "\n");
        write_text(report_dir / ("f1_" + tag + ".csv"),
                   grid_csv(f1, cfg.rep.layers, timesteps, 2));
        write_text(report_dir / ("f1_" + tag + ".txt"),
                   "Probe F1 (positive class: success) on " + tag + " test split (" + label_note +
                       " labels)\n" + grid_table(f1, cfg.rep.layers, timesteps, 2) +
                       "macro F1: " + fmt_fixed(eval.macro_f1, 3) + "\n");
    }

    // (c) conformal audit on the in-distribution test split.
    const auto heldout = outcome_steps(cfg, split_of(corpus, Split::TestId));
    std::string audit_table;
    const std::string csv = audit_csv(store, thr, heldout, &audit_table);
    write_text(report_dir / "conformal_audit.csv", csv);
    write_text(report_dir / "conformal_audit.txt",
               "Conformal labeling audit on test-id (bounds: eps_s=" + fmt_fixed(thr.eps_s, 3) +
                   ", eps_f=" + fmt_fixed(thr.eps_f, 3) + ")\n" + audit_table);

    // (d) steering lift summary.
    {
        std::ifstream in(out_dir / "steering.json", std::ios::binary);
        if (!in) throw MissingStage("steer stage artifact missing");
        ordered_json doc;
        in >> doc;
        const auto& loop = doc.at("closed_loop");
        std::string txt = "Steering closed-loop evaluation\n";
        txt += "layer: " + std::to_string(doc.at("layer").get<int>()) + "\n";
        txt += "timesteps: ";
        const auto ts = doc.at("intervention").at("timesteps").get<std::vector<int>>();
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (i) txt += ",";
            txt += std::to_string(ts[i]);
        }
        txt += "\ncoefficient: " + fmt(doc.at("intervention").at("coefficient").get<double>()) +
               "\n";
        txt += "episodes (paired): " + std::to_string(loop.at("n_episodes").get<int>()) + "\n";
        txt += "baseline success: " + fmt_fixed(loop.at("baseline_success").get<double>(), 4) +
               "\n";
        txt += "steered success:  " + fmt_fixed(loop.at("steered_success").get<double>(), 4) +
               "\n";
        txt += "lift: " + fmt_fixed(loop.at("lift").get<double>(), 4) + "\n";
        txt += "lift 95% CI (paired bootstrap): [" + fmt_fixed(loop.at("ci_lo").get<double>(), 4) +
               ", " + fmt_fixed(loop.at("ci_hi").get<double>(), 4) + "]\n";
        write_text(report_dir / "steering.txt", txt);
        write_text(report_dir / "steering.csv",
                   "layer,coefficient,n_episodes,baseline,steered,lift,ci_lo,ci_hi\n" +
                       std::to_string(doc.at("layer").get<int>()) + "," +
                       fmt(doc.at("intervention").at("coefficient").get<double>()) + "," +
                       std::to_string(loop.at("n_episodes").get<int>()) + "," +
                       fmt_fixed(loop.at("baseline_success").get<double>(), 4) + "," +
                       fmt_fixed(loop.at("steered_success").get<double>(), 4) + "," +
                       fmt_fixed(loop.at("lift").get<double>(), 4) + "," +
                       fmt_fixed(loop.at("ci_lo").get<double>(), 4) + "," +
                       fmt_fixed(loop.at("ci_hi").get<double>(), 4) + "\n");
    }

    // (e) dense-vs-sparse comparison when a sibling run is configured.
    if (!cfg.compare_dir.empty()) {
        const fs::path other(cfg.compare_dir);
        if (!fs::is_regular_file(other / "probes.json") ||
            !fs::is_regular_file(other / "config.txt")) {
            throw MissingStage("compare_dir " + cfg.compare_dir +
                               " holds no completed run (probes.json/config.txt)");
        }
        std::string other_kind = "unknown";
        {
            std::ifstream in(other / "config.txt");
            std::string line;
            while (std::getline(in, line)) {
                if (line.rfind("env.kind = ", 0) == 0) other_kind = line.substr(11);
            }
        }
        auto mean_val_acc = [](const ProbeGrid& g) {
            double sum = 0.0;
            int n = 0;
            for (const auto& [key, cell] : g) {
                if (cell.val_metrics) {
                    sum += cell.val_metrics->accuracy;
                    ++n;
                }
            }
            return n ? sum / n : 0.0;
        };
        const ProbeGrid other_grid = load_grid((other / "probes.json").string());
        const double mine = mean_val_acc(grid);
        const double theirs = mean_val_acc(other_grid);
        std::string txt = "Probe accuracy by reward structure (mean over grid cells)\n";
        txt += to_string(cfg.env.kind) + " (this run):  " + fmt_fixed(mine, 4) + "\n";
        txt += other_kind + " (" + cfg.compare_dir + "): " + fmt_fixed(theirs, 4) + "\n";
        const bool dense_wins = (to_string(cfg.env.kind) == "dense" ? mine : theirs) >=
                                (to_string(cfg.env.kind) == "dense" ? theirs : mine);
        txt += std::string("denser rewards scored ") + (dense_wins ? ">=" : "<") +
               " sparser rewards on this pair of runs\n";
        write_text(report_dir / "dense_vs_sparse.txt", txt);
    }

    write_text(report_dir / "notes.txt",
               "Notes\n"
               "- probe train/test labels: " + label_note + " (probe.label_source)\n" +
                   "- calibration outcomes: " +
                   (cfg.calibration_label_source == CalibrationLabelSource::OracleStep
                        ? "per-step oracle ground truth"
                        : "episode-level outcome applied to all steps") +
                   "\n"
                   "- F1 positive class: success\n"
                   "- the OOD split is a stand-in: unseen task seeds plus a shifted object "
                   "vocabulary\n"
                   "- abstained steps are excluded from probe datasets and error-rate "
                   "numerators\n");
}

void execute_stage(const PipelineConfig& cfg, const std::string& stage, const fs::path& out_dir) {
    if (stage == "generate") stage_generate(cfg, out_dir);
    else if (stage == "reward") stage_reward(cfg, out_dir);
    else if (stage == "calibrate") stage_calibrate(cfg, out_dir);
    else if (stage == "label") stage_label(cfg, out_dir);
    else if (stage == "probe") stage_probe(cfg, out_dir);
    else if (stage == "steer") stage_steer(cfg, out_dir);
    else if (stage == "report") stage_report(cfg, out_dir);
    else throw ValidationError("unknown stage: " + stage);
}

std::string utc_now() {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
}

RunManifest run_until(const PipelineConfig& raw, const std::string& target, bool force,
                      bool require_upstream_cached) {
    raw.validate();
    const PipelineConfig cfg = resolve_seeds(raw);
    const fs::path out_dir(raw.output_dir);
    fs::create_directories(out_dir);
    write_text(out_dir / "config.txt", raw.canonical_text());

    RunManifest prev;
    try {
        prev = load_manifest(raw.output_dir);
    } catch (const Error&) {
        // first run in this directory
    }

    RunManifest manifest;
    manifest.tool_version = kToolVersion;
    manifest.config_digest = content_digest(raw.canonical_text());
    manifest.created_utc = utc_now();

    for (const auto& stage : kStageNames) {
        std::string upstream;
        for (const auto& dep : kStageDeps.at(stage)) {
            upstream += manifest.stages.at(dep).digest + ",";
        }
        const std::string input_key =
            content_digest(stage + "|" + config_subsection(raw, stage) + "|" + upstream);

        const bool only_reuse = require_upstream_cached && stage != target;

        StageInfo info;
        info.path = artifact_path(stage);
        info.input_key = input_key;

        const bool reusable = stage_artifact_exists(out_dir, stage) &&
                              prev.stages.count(stage) > 0 &&
                              prev.stages.at(stage).input_key == input_key &&
                              prev.stages.at(stage).digest ==
                                  stage_artifact_digest(out_dir, stage);
        if (only_reuse) {
            if (!stage_artifact_exists(out_dir, stage)) {
                throw MissingStage("stage '" + stage + "' has no artifact in " + raw.output_dir +
                                   "; run it first");
            }
            info.digest = stage_artifact_digest(out_dir, stage);
            info.cached = true;
        } else if (reusable && !force) {
            info.digest = prev.stages.at(stage).digest;
            info.cached = true;
        } else {
            try {
                execute_stage(cfg, stage, out_dir);
            } catch (const Error& e) {
                throw StageFailure("stage '" + stage + "' failed: " + e.what());
            }
            info.digest = stage_artifact_digest(out_dir, stage);
            info.cached = false;
        }
        manifest.stages[stage] = info;
        // Persist after every stage so a failed run resumes from its
        // completed artifacts.
        save_manifest(manifest, raw.output_dir);
        if (stage == target) break;
    }
    // Single-stage runs keep the other recorded stages so later full runs
    // can still reuse their artifacts.
    bool merged = false;
    for (const auto& [name, info] : prev.stages) {
        if (manifest.stages.count(name) == 0) {
            manifest.stages[name] = info;
            merged = true;
        }
    }
    if (merged) save_manifest(manifest, raw.output_dir);
    return manifest;
}

}  // namespace

RunManifest run(const PipelineConfig& config, bool force) {
    return run_until(config, "report", force, false);
}

RunManifest run_stage(const PipelineConfig& config, const std::string& stage, bool force) {
    if (std::find(kStageNames.begin(), kStageNames.end(), stage) == kStageNames.end()) {
        throw ValidationError("unknown stage: " + stage);
    }
    // Upstream stages must already have artifacts; only the target runs.
    return run_until(config, stage, force, true);
}

RunManifest load_manifest(const std::string& output_dir) {
    const fs::path path = fs::path(output_dir) / "manifest.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("no manifest at " + path.string());
    try {
        ordered_json doc;
        in >> doc;
        RunManifest out;
        out.tool_version = doc.at("tool_version").get<std::string>();
        out.config_digest = doc.at("config_digest").get<std::string>();
        out.created_utc = doc.at("created_utc").get<std::string>();
        for (const auto& [name, s] : doc.at("stages").items()) {
            StageInfo info;
            info.path = s.at("path").get<std::string>();
            info.digest = s.at("digest").get<std::string>();
            info.input_key = s.at("input_key").get<std::string>();
            info.cached = s.at("cached").get<bool>();
            out.stages[name] = info;
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("bad manifest: ") + e.what());
    }
}

void save_manifest(const RunManifest& manifest, const std::string& output_dir) {
    ordered_json doc;
    doc["tool_version"] = manifest.tool_version;
    doc["config_digest"] = manifest.config_digest;
    doc["created_utc"] = manifest.created_utc;
    ordered_json stages = ordered_json::object();
    for (const auto& name : kStageNames) {
        const auto it = manifest.stages.find(name);
        if (it == manifest.stages.end()) continue;
        stages[name] = {{"path", it->second.path},
                        {"digest", it->second.digest},
                        {"input_key", it->second.input_key},
                        {"cached", it->second.cached}};
    }
    doc["stages"] = std::move(stages);
    write_text(fs::path(output_dir) / "manifest.json", doc.dump(2) + "\n");
}

std::vector<std::string> verify_manifest(const RunManifest& manifest,
                                         const std::string& output_dir) {
    std::vector<std::string> bad;
    const fs::path out_dir(output_dir);
    for (const auto& [name, info] : manifest.stages) {
        try {
            if (!stage_artifact_exists(out_dir, name) ||
                stage_artifact_digest(out_dir, name) != info.digest) {
                bad.push_back(name);
            }
        } catch (const Error&) {
            bad.push_back(name);
        }
    }
    return bad;
}

CorpusSummary ingest(const std::string& path, const std::string& name,
                     const std::string& output_dir, bool as_corpus) {
    const auto corpus = read_records_file(path);  // full validation

    CorpusSummary summary;
    summary.name = name;
    summary.n_trajectories = static_cast<int>(corpus.size());
    for (const auto& traj : corpus) {
        summary.split_counts[to_string(traj.task.split)] += 1;
        summary.domain_counts[traj.task.domain_tag] += 1;
        for (const auto& step : traj.steps) {
            summary.n_steps += 1;
            if (step.r_t) summary.steps_with_reward += 1;
            for (const auto& [layer, vec] : step.activations) {
                summary.activation_dims[layer] = vec.dim();
            }
        }
    }

    const fs::path out_dir(output_dir);
    const fs::path dataset_dir = out_dir / "datasets";
    fs::create_directories(dataset_dir);
    auto copy_to = [&](const fs::path& dst_path) {
        std::ifstream src(path, std::ios::binary);
        std::ofstream dst(dst_path, std::ios::binary);
        if (!src || !dst) throw SinkFailure("cannot write " + dst_path.string());
        dst << src.rdbuf();
    };
    copy_to(dataset_dir / (name + ".jsonl"));
    if (as_corpus) {
        copy_to(out_dir / "corpus.jsonl");
        // Traces that already carry step rewards can skip the reward stage.
        if (summary.steps_with_reward > 0) {
            copy_to(out_dir / "corpus_rewarded.jsonl");
        }
    }
    return summary;
}

std::string summary_text(const CorpusSummary& summary) {
    std::ostringstream out;
    out << "dataset: " << summary.name << "\n";
    out << "trajectories: " << summary.n_trajectories << "\n";
    out << "steps: " << summary.n_steps << "\n";
    out << "splits:";
    for (const auto& [split, n] : summary.split_counts) out << " " << split << "=" << n;
    out << "\n";
    out << "domains:";
    for (const auto& [tag, n] : summary.domain_counts) out << " " << tag << "=" << n;
    out << "\n";
    out << "activation dims:";
    for (const auto& [layer, dim] : summary.activation_dims) {
        out << " L" << layer << "=" << dim;
    }
    out << "\n";
    out << "steps with step-reward: " << summary.steps_with_reward << " / " << summary.n_steps
        << "\n";
    return out.str();
}

}  // namespace stepconf
