// Python bindings for the stepconf core: trajectory model, record IO,
// synthetic environments, Monte Carlo step rewards, conformal labeling,
// linear probes, steering, and the pipeline runner.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stepconf/conformal.hpp"
#include "stepconf/corpus.hpp"
#include "stepconf/env.hpp"
#include "stepconf/errors.hpp"
#include "stepconf/pipeline.hpp"
#include "stepconf/probe.hpp"
#include "stepconf/records.hpp"
#include "stepconf/representation.hpp"
#include "stepconf/reward.hpp"
#include "stepconf/rng.hpp"
#include "stepconf/steering.hpp"

namespace py = pybind11;
using namespace stepconf;

PYBIND11_MODULE(stepconf, m) {
    m.doc() = "step-wise conformal labeling, probing and steering for sequential agents";
    m.attr("__version__") = kToolVersion;

    // Translators run newest-first, so the derived ValidationError must be
    // registered after the base Error to take precedence.
    py::register_exception<Error>(m, "StepconfError", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

    // --- trajectory model ---------------------------------------------------
    py::enum_<Split>(m, "Split")
        .value("TRAIN", Split::Train)
        .value("CALIBRATION", Split::Calibration)
        .value("PROBE_TRAIN", Split::ProbeTrain)
        .value("TEST_ID", Split::TestId)
        .value("TEST_OOD", Split::TestOod);

    py::class_<TaskInstruction>(m, "TaskInstruction")
        .def(py::init<>())
        .def_readwrite("id", &TaskInstruction::id)
        .def_readwrite("text", &TaskInstruction::text)
        .def_readwrite("domain_tag", &TaskInstruction::domain_tag)
        .def_readwrite("split", &TaskInstruction::split);

    py::class_<ActivationVector>(m, "ActivationVector")
        .def(py::init<>())
        .def_readwrite("values", &ActivationVector::values)
        .def_property_readonly("dim", &ActivationVector::dim);

    py::class_<StepRecord>(m, "StepRecord")
        .def(py::init<>())
        .def_readwrite("t", &StepRecord::t)
        .def_readwrite("thought", &StepRecord::thought)
        .def_readwrite("action", &StepRecord::action)
        .def_readwrite("observation", &StepRecord::observation)
        .def_readwrite("activations", &StepRecord::activations)
        .def_readwrite("oracle_success", &StepRecord::oracle_success)
        .def_readwrite("r_t", &StepRecord::r_t);

    py::class_<Trajectory>(m, "Trajectory")
        .def(py::init<>())
        .def_readwrite("task", &Trajectory::task)
        .def_readwrite("steps", &Trajectory::steps)
        .def_readwrite("final_reward", &Trajectory::final_reward)
        .def_readwrite("finalized", &Trajectory::finalized)
        .def("__len__", [](const Trajectory& t) { return t.steps.size(); });

    m.def("append_step", &append_step, py::arg("traj"), py::arg("step"));
    m.def("prefix", &prefix, py::arg("traj"), py::arg("t"));
    m.def("finalize", &finalize, py::arg("traj"), py::arg("final_reward"));
    m.def("write_records", &write_records_file, py::arg("corpus"), py::arg("path"),
          "Write a corpus as line-delimited records; returns the line count.");
    m.def("read_records", &read_records_file, py::arg("path"));

    // --- environments and policies -------------------------------------------
    py::enum_<EnvKind>(m, "EnvKind")
        .value("DENSE", EnvKind::Dense)
        .value("SPARSE", EnvKind::Sparse);

    py::class_<EnvConfig>(m, "EnvConfig")
        .def(py::init<>())
        .def_readwrite("kind", &EnvConfig::kind)
        .def_readwrite("n_subgoals", &EnvConfig::n_subgoals)
        .def_readwrite("horizon", &EnvConfig::horizon)
        .def_readwrite("n_rooms", &EnvConfig::n_rooms)
        .def_readwrite("n_objects", &EnvConfig::n_objects)
        .def_readwrite("seed", &EnvConfig::seed)
        .def_readwrite("vocab_offset", &EnvConfig::vocab_offset)
        .def_readwrite("success_threshold", &EnvConfig::success_threshold)
        .def("effective_success_threshold", &EnvConfig::effective_success_threshold);

    py::class_<EnvState>(m, "EnvState")
        .def_readonly("room", &EnvState::room)
        .def_readonly("inventory", &EnvState::inventory)
        .def_readonly("plan_pos", &EnvState::plan_pos)
        .def_readonly("subgoals_done", &EnvState::subgoals_done)
        .def_readonly("step_count", &EnvState::step_count)
        .def_readonly("terminated", &EnvState::terminated);

    m.def("reset", &reset, py::arg("config"), py::arg("task_seed"));
    m.def(
        "env_step",
        [](const EnvState& state, const std::string& action) {
            StepResult res = env_step(state, action);
            return py::make_tuple(res.state, res.observation, res.done);
        },
        py::arg("state"), py::arg("action"));
    m.def("final_reward", &final_reward, py::arg("state"), py::arg("config"));
    m.def("expert_action", &expert_action, py::arg("state"));
    m.def("oracle_step_success", &oracle_step_success, py::arg("state"), py::arg("traj_prefix"),
          py::arg("config"));

    py::enum_<PolicyKind>(m, "PolicyKind")
        .value("EXPERT", PolicyKind::Expert)
        .value("NOISY", PolicyKind::Noisy)
        .value("DRIFTING", PolicyKind::Drifting);

    py::class_<PolicyProfile>(m, "PolicyProfile")
        .def(py::init<>())
        .def_readwrite("kind", &PolicyProfile::kind)
        .def_readwrite("error_rate", &PolicyProfile::error_rate)
        .def_readwrite("drift_onset_min", &PolicyProfile::drift_onset_min)
        .def_readwrite("drift_onset_max", &PolicyProfile::drift_onset_max)
        .def_readwrite("seed", &PolicyProfile::seed);

    m.def(
        "sample_action",
        [](const PolicyProfile& profile, const Trajectory& traj, const EnvState& state,
           std::uint64_t stream_seed) {
            const ActionSample s = sample_action(profile, traj, state, Rng(stream_seed));
            return py::make_tuple(s.thought, s.action);
        },
        py::arg("profile"), py::arg("traj"), py::arg("state"), py::arg("stream_seed"));

    // --- representation provider ---------------------------------------------
    py::class_<RepresentationConfig>(m, "RepresentationConfig")
        .def(py::init<>())
        .def_readwrite("dim", &RepresentationConfig::dim)
        .def_readwrite("layers", &RepresentationConfig::layers)
        .def_readwrite("margin", &RepresentationConfig::margin)
        .def_readwrite("noise_sigma", &RepresentationConfig::noise_sigma)
        .def_readwrite("seed", &RepresentationConfig::seed);

    py::class_<RepresentationProvider>(m, "RepresentationProvider")
        .def(py::init<RepresentationConfig>())
        .def("direction", &RepresentationProvider::direction, py::arg("layer"),
             py::return_value_policy::copy)
        .def("feature_hash", &RepresentationProvider::feature_hash, py::arg("prefix"))
        .def(
            "hidden_state",
            [](const RepresentationProvider& p, const Trajectory& prefix, int layer,
               bool on_success_path, std::uint64_t stream_seed) {
                return p.hidden_state(prefix, layer, on_success_path, Rng(stream_seed));
            },
            py::arg("prefix"), py::arg("layer"), py::arg("on_success_path"),
            py::arg("stream_seed"));

    // --- corpus generation ----------------------------------------------------
    py::class_<WeightedProfile>(m, "WeightedProfile")
        .def(py::init<>())
        .def(py::init([](PolicyProfile profile, double weight) {
                 return WeightedProfile{std::move(profile), weight};
             }),
             py::arg("profile"), py::arg("weight"))
        .def_readwrite("profile", &WeightedProfile::profile)
        .def_readwrite("weight", &WeightedProfile::weight);

    py::class_<SplitPlan>(m, "SplitPlan")
        .def(py::init<>())
        .def(py::init([](std::vector<std::pair<Split, double>> fractions) {
                 return SplitPlan{std::move(fractions)};
             }),
             py::arg("fractions"))
        .def_readwrite("fractions", &SplitPlan::fractions)
        .def("counts", &SplitPlan::counts, py::arg("n_episodes"));

    m.def("generate_corpus", &generate_corpus, py::arg("env"), py::arg("profiles"),
          py::arg("rep"), py::arg("n_episodes"), py::arg("plan"), py::arg("master_seed"),
          py::arg("episode_base") = 0);

    // --- Monte Carlo step rewards ----------------------------------------------
    py::class_<RolloutBudget>(m, "RolloutBudget")
        .def(py::init<>())
        .def_readwrite("n_rollouts", &RolloutBudget::n_rollouts)
        .def_readwrite("max_rollout_steps", &RolloutBudget::max_rollout_steps)
        .def_readwrite("seed", &RolloutBudget::seed);

    py::class_<RewardEstimate>(m, "RewardEstimate")
        .def_readonly("t", &RewardEstimate::t)
        .def_readonly("r_t", &RewardEstimate::r_t)
        .def_readonly("n_samples", &RewardEstimate::n_samples)
        .def_readonly("std_err", &RewardEstimate::std_err)
        .def_readonly("is_final_step", &RewardEstimate::is_final_step);

    m.def("estimate_step_reward", &estimate_step_reward, py::arg("prefix"), py::arg("policy"),
          py::arg("env"), py::arg("budget"));
    m.def("estimate_trajectory_rewards", &estimate_trajectory_rewards, py::arg("traj"),
          py::arg("policy"), py::arg("env"), py::arg("budget"), py::arg("start_step") = 0);

    // --- conformal labeling -----------------------------------------------------
    m.def("nonconformity", &nonconformity, py::arg("r_t"));
    m.def("p_value", &p_value, py::arg("alpha_x"), py::arg("sorted_cal_scores"));
    m.def("p_value_classical", &p_value_classical, py::arg("alpha_x"), py::arg("scores"));

    py::class_<LabeledStepReward>(m, "LabeledStepReward")
        .def(py::init([](int t, double r_t, bool outcome) {
                 return LabeledStepReward{t, r_t, outcome};
             }),
             py::arg("t"), py::arg("r_t"), py::arg("outcome"))
        .def_readwrite("t", &LabeledStepReward::t)
        .def_readwrite("r_t", &LabeledStepReward::r_t)
        .def_readwrite("outcome", &LabeledStepReward::outcome);

    py::class_<CalibrationStore>(m, "CalibrationStore")
        .def_property_readonly("frozen", &CalibrationStore::frozen)
        .def_property_readonly("min_per_cell", &CalibrationStore::min_per_cell)
        .def("has_cell", &CalibrationStore::has_cell, py::arg("t"));

    py::class_<Thresholds>(m, "Thresholds")
        .def(py::init<>())
        .def(py::init([](double eps_s, double eps_f) { return Thresholds{eps_s, eps_f}; }),
             py::arg("eps_s"), py::arg("eps_f"))
        .def_readwrite("eps_s", &Thresholds::eps_s)
        .def_readwrite("eps_f", &Thresholds::eps_f);

    py::enum_<LabelValue>(m, "LabelValue")
        .value("SUCCESS", LabelValue::Success)
        .value("FAILURE", LabelValue::Failure)
        .value("ABSTAIN", LabelValue::Abstain);

    py::class_<PValuePair>(m, "PValuePair")
        .def_readonly("p_s", &PValuePair::p_s)
        .def_readonly("p_f", &PValuePair::p_f)
        .def_readonly("n_s", &PValuePair::n_s)
        .def_readonly("n_f", &PValuePair::n_f);

    py::class_<StepLabel>(m, "StepLabel")
        .def_readonly("value", &StepLabel::value)
        .def_readonly("pvalues", &StepLabel::pvalues);

    m.def("calibrate", &calibrate, py::arg("labeled_steps"), py::arg("min_per_cell") = 20);
    m.def("label_step", &label_step, py::arg("r_t"), py::arg("t"), py::arg("store"),
          py::arg("thresholds"));

    py::class_<AuditResult>(m, "AuditResult")
        .def_readonly("fnr", &AuditResult::fnr)
        .def_readonly("fpr", &AuditResult::fpr)
        .def_readonly("abstain_rate", &AuditResult::abstain_rate)
        .def_readonly("n", &AuditResult::n);

    m.def("audit_error_rates", &audit_error_rates, py::arg("store"), py::arg("thresholds"),
          py::arg("heldout"));
    m.def("save_store", &save_store, py::arg("store"), py::arg("thresholds"), py::arg("path"));
    m.def("load_store", &load_store, py::arg("path"));

    // --- probes -------------------------------------------------------------------
    py::class_<ActivationKey>(m, "ActivationKey")
        .def(py::init([](int layer, int timestep) { return ActivationKey{layer, timestep}; }),
             py::arg("layer"), py::arg("timestep"))
        .def_readwrite("layer", &ActivationKey::layer)
        .def_readwrite("timestep", &ActivationKey::timestep);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("l2_lambda", &TrainConfig::l2_lambda)
        .def_readwrite("val_fraction", &TrainConfig::val_fraction)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("seed", &TrainConfig::seed);

    py::class_<ProbeParams>(m, "ProbeParams")
        .def_readonly("key", &ProbeParams::key)
        .def_readonly("W", &ProbeParams::W)
        .def_readonly("b", &ProbeParams::b)
        .def_readonly("mean", &ProbeParams::mean)
        .def_readonly("scale", &ProbeParams::scale);

    py::class_<ProbeMetrics>(m, "ProbeMetrics")
        .def_readonly("accuracy", &ProbeMetrics::accuracy)
        .def_readonly("f1", &ProbeMetrics::f1)
        .def_readonly("n_test", &ProbeMetrics::n_test);

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<>())
        .def(py::init([](std::vector<std::vector<double>> X, std::vector<int> y) {
                 return Dataset{std::move(X), std::move(y)};
             }),
             py::arg("X"), py::arg("y"))
        .def_readwrite("X", &Dataset::X)
        .def_readwrite("y", &Dataset::y);

    m.def("train_probe", &train_probe, py::arg("dataset"), py::arg("key"), py::arg("config"));
    m.def(
        "predict",
        [](const ProbeParams& params, const ActivationVector& h) {
            const Prediction pred = predict(params, h);
            return py::make_tuple(pred.score, pred.label);
        },
        py::arg("params"), py::arg("h"));

    // --- steering -------------------------------------------------------------------
    py::class_<SteeringVector>(m, "SteeringVector")
        .def_readonly("layer", &SteeringVector::layer)
        .def_readonly("d", &SteeringVector::d)
        .def_readonly("n_success", &SteeringVector::n_success)
        .def_readonly("n_failure", &SteeringVector::n_failure);

    py::class_<InterventionSpec>(m, "InterventionSpec")
        .def(py::init<>())
        .def_readwrite("layer", &InterventionSpec::layer)
        .def_readwrite("timesteps", &InterventionSpec::timesteps)
        .def_readwrite("coefficient", &InterventionSpec::coefficient);

    py::class_<CoupledAgentConfig>(m, "CoupledAgentConfig")
        .def(py::init<>())
        .def_readwrite("layer", &CoupledAgentConfig::layer)
        .def_readwrite("hazard_gain", &CoupledAgentConfig::hazard_gain)
        .def_readwrite("hazard_bias", &CoupledAgentConfig::hazard_bias);

    py::class_<ClosedLoopResult>(m, "ClosedLoopResult")
        .def_readonly("baseline_success", &ClosedLoopResult::baseline_success)
        .def_readonly("steered_success", &ClosedLoopResult::steered_success)
        .def_readonly("lift", &ClosedLoopResult::lift)
        .def_readonly("ci_lo", &ClosedLoopResult::ci_lo)
        .def_readonly("ci_hi", &ClosedLoopResult::ci_hi)
        .def_readonly("n_episodes", &ClosedLoopResult::n_episodes);

    m.def("compute_direction", &compute_direction, py::arg("success_acts"),
          py::arg("failure_acts"), py::arg("layer"), py::arg("min_per_class") = 10);
    m.def("apply_intervention", &apply_intervention, py::arg("h"), py::arg("spec"),
          py::arg("vec"), py::arg("t"));
    m.def("closed_loop_eval", &closed_loop_eval, py::arg("env"), py::arg("rep"), py::arg("agent"),
          py::arg("spec"), py::arg("vec"), py::arg("n_episodes"), py::arg("seed"),
          py::arg("bootstrap_resamples") = 10000);

    // --- pipeline ----------------------------------------------------------------------
    m.def("default_config_text",
          []() { return default_config().canonical_text(); });
    m.def(
        "run_pipeline",
        [](const std::string& config_path, const std::string& output_dir, bool force) {
            PipelineConfig cfg =
                config_path.empty() ? default_config() : parse_config_file(config_path);
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            const RunManifest manifest = run(cfg, force);
            py::dict out;
            out["tool_version"] = manifest.tool_version;
            out["config_digest"] = manifest.config_digest;
            py::dict stages;
            for (const auto& [name, info] : manifest.stages) {
                py::dict s;
                s["path"] = info.path;
                s["digest"] = info.digest;
                s["cached"] = info.cached;
                stages[name.c_str()] = s;
            }
            out["stages"] = stages;
            return out;
        },
        py::arg("config_path") = "", py::arg("output_dir") = "", py::arg("force") = false,
        "Run all pipeline stages; returns the manifest as a dict.");
}
