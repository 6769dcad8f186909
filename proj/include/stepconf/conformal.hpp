#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stepconf/trajectory.hpp"

namespace stepconf {

/// Nonconformity scores of a step reward against the success and failure
/// populations: alpha_s = 1 - r_t, alpha_f = r_t.
std::pair<double, double> nonconformity(double r_t);

/// Inductive conformal p-value: (#{j : alpha_x <= alpha_j} + 1) / (n + 1),
/// ties counted inclusively, computed by binary search on the sorted
/// calibration scores.
double p_value(double alpha_x, const std::vector<double>& sorted_cal_scores);

/// Classical conformal p-value by exhaustive rank count over an unsorted
/// score sequence. Reference oracle for the binary-search path.
double p_value_classical(double alpha_x, const std::vector<double>& scores);

struct LabeledStepReward {
    int t = 0;
    double r_t = 0.0;
    bool outcome = false;  // true: success step
};

struct CalibrationCell {
    std::vector<double> success_scores;  // sorted ascending alpha_s values
    std::vector<double> failure_scores;  // sorted ascending alpha_f values
};

/// Frozen per-timestep score populations with a pooled fallback. Immutable
/// once frozen; safe for concurrent readers.
class CalibrationStore {
public:
    CalibrationStore() = default;

    bool frozen() const { return frozen_; }
    int min_per_cell() const { return min_per_cell_; }
    const std::map<int, CalibrationCell>& per_timestep() const { return per_timestep_; }
    const CalibrationCell& pooled() const { return pooled_; }

    /// The cell used when labeling at timestep t: the per-timestep cell when
    /// both its populations reach min_per_cell, otherwise the pooled one.
    const CalibrationCell& cell_for(int t) const;
    bool has_cell(int t) const { return per_timestep_.count(t) > 0; }

    friend CalibrationStore calibrate(const std::vector<LabeledStepReward>&, int);
    friend CalibrationStore make_store(std::map<int, CalibrationCell> cells,
                                       CalibrationCell pooled, int min_per_cell);

private:
    std::map<int, CalibrationCell> per_timestep_;
    CalibrationCell pooled_;
    int min_per_cell_ = 20;
    bool frozen_ = false;
};

/// Builds a frozen store from labeled step rewards. Success populations hold
/// alpha_s of outcome-true steps, failure populations alpha_f of
/// outcome-false steps. Per-timestep cells exist only where both classes
/// reach min_per_cell; the pooled fallback always exists.
CalibrationStore calibrate(const std::vector<LabeledStepReward>& labeled_steps,
                           int min_per_cell = 20);

/// Assembles a frozen store from already-built cells (used by load paths
/// and tests).
CalibrationStore make_store(std::map<int, CalibrationCell> cells, CalibrationCell pooled,
                            int min_per_cell);

struct Thresholds {
    double eps_s = 0.1;
    double eps_f = 0.1;

    void validate() const;
};

enum class LabelValue { Success, Failure, Abstain };

std::string to_string(LabelValue v);

struct PValuePair {
    double p_s = 0.0;
    double p_f = 0.0;
    int n_s = 0;  // calibration sizes behind each p-value
    int n_f = 0;
};

struct StepLabel {
    LabelValue value = LabelValue::Abstain;
    PValuePair pvalues;
};

/// Dual-population labeling rule: Success iff p_s >= eps_s and p_f < eps_f;
/// Failure iff p_f >= eps_f and p_s < eps_s; Abstain when both or neither
/// condition holds.
StepLabel label_step(double r_t, int t, const CalibrationStore& store, const Thresholds& thr);

struct AuditResult {
    double fnr = 0.0;           // outcome-true steps labeled Failure
    double fpr = 0.0;           // outcome-false steps labeled Success
    double abstain_rate = 0.0;  // abstentions, never counted as errors
    int n = 0;
    int n_true = 0;
    int n_false = 0;
};

AuditResult audit_error_rates(const CalibrationStore& store, const Thresholds& thr,
                              const std::vector<LabeledStepReward>& heldout);

/// Store persistence: JSON document with thresholds, min_per_cell, per-cell
/// sorted score arrays and a content digest.
void save_store(const CalibrationStore& store, const Thresholds& thr, const std::string& path);
std::pair<CalibrationStore, Thresholds> load_store(const std::string& path);

}  // namespace stepconf
