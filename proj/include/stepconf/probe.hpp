#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stepconf/conformal.hpp"
#include "stepconf/trajectory.hpp"

namespace stepconf {

/// Per-(layer, timestep) linear classifier y^ = sigma(W h + b) on
/// standardized activations, with the standardization captured alongside the
/// weights.
struct ProbeParams {
    ActivationKey key;
    std::vector<double> W;
    double b = 0.0;
    std::vector<double> mean;   // training-fold feature means
    std::vector<double> scale;  // training-fold feature scales, > 0
};

struct TrainConfig {
    double learning_rate = 0.1;
    int max_epochs = 500;
    double l2_lambda = 1e-3;
    double val_fraction = 0.2;
    int patience = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Metrics over non-Abstain examples; positive class is Success (label 1).
struct ProbeMetrics {
    double accuracy = 0.0;
    double f1 = 0.0;
    int n_test = 0;
};

struct Dataset {
    std::vector<std::vector<double>> X;
    std::vector<int> y;  // 1 = Success, 0 = Failure
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad_W;
    double grad_b = 0.0;
};

/// Mean binary cross-entropy + l2_lambda * |W|^2 / 2 on standardized
/// features, with exact analytic gradients.
LossGrad loss_and_gradient(const ProbeParams& params, const Dataset& batch, double l2_lambda);

/// Full-batch gradient descent with early stopping on validation loss.
/// Features are standardized on the training fold; the seed only affects the
/// validation split. Returns the best checkpoint and its validation metrics.
std::pair<ProbeParams, ProbeMetrics> train_probe(const Dataset& dataset, ActivationKey key,
                                                 const TrainConfig& cfg);

struct Prediction {
    double score = 0.0;  // in (0,1)
    LabelValue label = LabelValue::Success;  // Success iff score >= 0.5
};

Prediction predict(const ProbeParams& params, const ActivationVector& h);

ProbeMetrics compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred);

/// Labels for probe datasets, keyed by (task_id, step index).
using StepLabelMap = std::map<std::pair<std::string, int>, LabelValue>;

/// Pulls one Dataset per (layer, timestep) out of a corpus: the activation
/// at that layer of every step at that timestep whose label is not Abstain.
std::map<ActivationKey, Dataset> collect_grid_datasets(const std::vector<Trajectory>& corpus,
                                                       const StepLabelMap& labels,
                                                       const std::vector<int>& layers,
                                                       const std::vector<int>& timesteps);

struct ProbeCell {
    std::optional<ProbeParams> params;
    std::optional<ProbeMetrics> val_metrics;
    std::string error;  // non-empty when the cell could not be trained
};

using ProbeGrid = std::map<ActivationKey, ProbeCell>;

/// One probe per (layer, t) with enough two-class data; cells that cannot
/// be trained are reported with their error, never silently filled.
ProbeGrid train_grid(const std::vector<Trajectory>& corpus, const StepLabelMap& labels,
                     const std::vector<int>& layers, const std::vector<int>& timesteps,
                     const TrainConfig& cfg);

struct GridEvaluation {
    std::map<ActivationKey, ProbeMetrics> cells;
    std::map<ActivationKey, std::string> errors;  // per-cell evaluation failures
    double macro_accuracy = 0.0;
    double macro_f1 = 0.0;
};

GridEvaluation evaluate(const ProbeGrid& grid, const std::vector<Trajectory>& test_corpus,
                        const StepLabelMap& labels);

/// Grid persistence and the layer x timestep report tables.
void save_grid(const ProbeGrid& grid, const std::string& config_digest, const std::string& path);
ProbeGrid load_grid(const std::string& path);

std::string grid_csv(const std::map<ActivationKey, double>& values,
                     const std::vector<int>& layers, const std::vector<int>& timesteps,
                     int decimals);
std::string grid_table(const std::map<ActivationKey, double>& values,
                       const std::vector<int>& layers, const std::vector<int>& timesteps,
                       int decimals);

}  // namespace stepconf
