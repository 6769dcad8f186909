#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stepconf/conformal.hpp"
#include "stepconf/corpus.hpp"
#include "stepconf/env.hpp"
#include "stepconf/probe.hpp"
#include "stepconf/reward.hpp"
#include "stepconf/steering.hpp"

namespace stepconf {

inline constexpr const char* kToolVersion = "0.1.0";

/// How calibration steps get their success/failure outcome: per-step oracle
/// ground truth (synthetic corpora) or the episode outcome applied to every
/// step (the only label external traces reliably carry).
enum class CalibrationLabelSource { OracleStep, EpisodeOutcome };
/// Which labels probe datasets use: conformal StepLabels or oracle truth.
enum class ProbeLabelSource { Conformal, Oracle };

struct PipelineConfig {
    EnvConfig env;
    RepresentationConfig rep;
    std::vector<WeightedProfile> profiles;
    RolloutBudget budget;
    Thresholds thresholds;
    TrainConfig train;
    InterventionSpec intervention;
    bool intervention_layer_auto = true;  // pick the best-probed layer at step 3
    CoupledAgentConfig coupled;
    SplitPlan splits;  // train / calibration / probe-train fractions
    int min_per_cell = 20;
    int start_timestep = 2;
    int n_episodes = 320;
    int n_test_episodes = 80;  // per test split (test-id and test-ood)
    int steer_episodes = 2000;
    CalibrationLabelSource calibration_label_source = CalibrationLabelSource::OracleStep;
    ProbeLabelSource probe_label_source = ProbeLabelSource::Conformal;
    std::string compare_dir;  // optional: other run to compare env kinds against
    std::string output_dir = "out";
    std::uint64_t master_seed = 1;

    void validate() const;
    /// Canonical key=value rendering; digests and cache keys hash this.
    std::string canonical_text() const;
};

PipelineConfig default_config();

/// Parses the key=value config document ('#' comments, dotted keys).
/// Unknown keys are validation errors.
PipelineConfig parse_config_text(const std::string& text);
PipelineConfig parse_config_file(const std::string& path);

struct StageInfo {
    std::string path;       // artifact path relative to output_dir
    std::string digest;     // content digest of the artifact
    std::string input_key;  // digest of (config subsection + upstream digests)
    bool cached = false;    // artifact reused from a previous run
};

struct RunManifest {
    std::string tool_version;
    std::string config_digest;
    std::string created_utc;
    std::map<std::string, StageInfo> stages;
};

inline const std::vector<std::string> kStageNames = {
    "generate", "reward", "calibrate", "label", "probe", "steer", "report"};

/// Executes all stages, persisting artifacts under config.output_dir. Stages
/// whose artifacts exist with matching digests and input keys are skipped
/// unless force is set. Returns the manifest (also written to manifest.json).
RunManifest run(const PipelineConfig& config, bool force = false);

/// Runs a single named stage (upstream artifacts must already exist).
RunManifest run_stage(const PipelineConfig& config, const std::string& stage, bool force = false);

RunManifest load_manifest(const std::string& output_dir);
void save_manifest(const RunManifest& manifest, const std::string& output_dir);

/// Verifies that every artifact referenced by the manifest exists and
/// matches its digest; returns the offending stage names.
std::vector<std::string> verify_manifest(const RunManifest& manifest,
                                         const std::string& output_dir);

struct CorpusSummary {
    std::string name;
    int n_trajectories = 0;
    int n_steps = 0;
    std::map<std::string, int> split_counts;
    std::map<int, int> activation_dims;  // layer -> dim
    int steps_with_reward = 0;
    std::map<std::string, int> domain_counts;
};

/// Validates an external record file and registers it under
/// output_dir/datasets/<name>.jsonl. With as_corpus set it also installs the
/// file as the run's corpus artifacts (corpus.jsonl, and
/// corpus_rewarded.jsonl when the steps carry r_t), so the calibrate, label
/// and probe stages can run directly on externally produced traces.
CorpusSummary ingest(const std::string& path, const std::string& name,
                     const std::string& output_dir, bool as_corpus = false);

std::string summary_text(const CorpusSummary& summary);

}  // namespace stepconf
