#include "stepconf/conformal.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "stepconf/digest.hpp"
#include "stepconf/errors.hpp"

namespace stepconf {

using ordered_json = nlohmann::ordered_json;

std::pair<double, double> nonconformity(double r_t) {
    if (!(r_t >= 0.0 && r_t <= 1.0)) {
        throw OutOfRangeReward("r_t must be in [0,1], got " + std::to_string(r_t));
    }
    return {1.0 - r_t, r_t};
}

double p_value(double alpha_x, const std::vector<double>& sorted_cal_scores) {
    if (sorted_cal_scores.empty()) throw EmptyCalibration("empty calibration score set");
    // #{j : alpha_x <= alpha_j} via the first element >= alpha_x.
    const auto it = std::lower_bound(sorted_cal_scores.begin(), sorted_cal_scores.end(), alpha_x);
    const auto count = static_cast<double>(sorted_cal_scores.end() - it);
    return (count + 1.0) / (static_cast<double>(sorted_cal_scores.size()) + 1.0);
}

double p_value_classical(double alpha_x, const std::vector<double>& scores) {
    if (scores.empty()) throw EmptyInput("empty score sequence");
    std::size_t count = 0;
    for (double alpha : scores) {
        if (alpha_x <= alpha) ++count;
    }
    return (static_cast<double>(count) + 1.0) / (static_cast<double>(scores.size()) + 1.0);
}

const CalibrationCell& CalibrationStore::cell_for(int t) const {
    const auto it = per_timestep_.find(t);
    return it != per_timestep_.end() ? it->second : pooled_;
}

CalibrationStore calibrate(const std::vector<LabeledStepReward>& labeled_steps,
                           int min_per_cell) {
    if (min_per_cell < 1) throw ValidationError("min_per_cell must be >= 1");
    CalibrationStore store;
    store.min_per_cell_ = min_per_cell;

    std::map<int, CalibrationCell> raw;
    for (const auto& step : labeled_steps) {
        const auto [alpha_s, alpha_f] = nonconformity(step.r_t);
        auto& cell = raw[step.t];
        if (step.outcome) {
            cell.success_scores.push_back(alpha_s);
            store.pooled_.success_scores.push_back(alpha_s);
        } else {
            cell.failure_scores.push_back(alpha_f);
            store.pooled_.failure_scores.push_back(alpha_f);
        }
    }
    if (static_cast<int>(store.pooled_.success_scores.size()) < min_per_cell ||
        static_cast<int>(store.pooled_.failure_scores.size()) < min_per_cell) {
        throw InsufficientCalibration(
            "need at least " + std::to_string(min_per_cell) + " scores per class, got " +
            std::to_string(store.pooled_.success_scores.size()) + " success / " +
            std::to_string(store.pooled_.failure_scores.size()) + " failure");
    }

    for (auto& [t, cell] : raw) {
        if (static_cast<int>(cell.success_scores.size()) >= min_per_cell &&
            static_cast<int>(cell.failure_scores.size()) >= min_per_cell) {
            std::sort(cell.success_scores.begin(), cell.success_scores.end());
            std::sort(cell.failure_scores.begin(), cell.failure_scores.end());
            store.per_timestep_.emplace(t, std::move(cell));
        }
    }
    std::sort(store.pooled_.success_scores.begin(), store.pooled_.success_scores.end());
    std::sort(store.pooled_.failure_scores.begin(), store.pooled_.failure_scores.end());
    store.frozen_ = true;
    return store;
}

CalibrationStore make_store(std::map<int, CalibrationCell> cells, CalibrationCell pooled,
                            int min_per_cell) {
    CalibrationStore store;
    store.per_timestep_ = std::move(cells);
    store.pooled_ = std::move(pooled);
    store.min_per_cell_ = min_per_cell;
    auto freeze_cell = [](CalibrationCell& cell) {
        for (const auto& scores : {&cell.success_scores, &cell.failure_scores}) {
            for (double s : *scores) {
                if (!(s >= 0.0 && s <= 1.0)) {
                    throw ValidationError("calibration scores must lie in [0,1]");
                }
            }
        }
        std::sort(cell.success_scores.begin(), cell.success_scores.end());
        std::sort(cell.failure_scores.begin(), cell.failure_scores.end());
    };
    for (auto& [t, cell] : store.per_timestep_) freeze_cell(cell);
    freeze_cell(store.pooled_);
    store.frozen_ = true;
    return store;
}

void Thresholds::validate() const {
    if (!(eps_s > 0.0 && eps_s < 1.0) || !(eps_f > 0.0 && eps_f < 1.0)) {
        throw ValidationError("thresholds must lie in the open interval (0,1)");
    }
}

std::string to_string(LabelValue v) {
    switch (v) {
        case LabelValue::Success: return "success";
        case LabelValue::Failure: return "failure";
        case LabelValue::Abstain: return "abstain";
    }
    return "abstain";
}

StepLabel label_step(double r_t, int t, const CalibrationStore& store, const Thresholds& thr) {
    if (!store.frozen()) throw StoreNotFrozen("labeling requires a frozen calibration store");
    thr.validate();
    const auto [alpha_s, alpha_f] = nonconformity(r_t);
    const CalibrationCell& cell = store.cell_for(t);

    StepLabel out;
    out.pvalues.p_s = p_value(alpha_s, cell.success_scores);
    out.pvalues.p_f = p_value(alpha_f, cell.failure_scores);
    out.pvalues.n_s = static_cast<int>(cell.success_scores.size());
    out.pvalues.n_f = static_cast<int>(cell.failure_scores.size());

    if (out.pvalues.p_s >= thr.eps_s && out.pvalues.p_f < thr.eps_f) {
        out.value = LabelValue::Success;
    } else if (out.pvalues.p_f >= thr.eps_f && out.pvalues.p_s < thr.eps_s) {
        out.value = LabelValue::Failure;
    } else {
        out.value = LabelValue::Abstain;  // the rule defines neither branch here
    }
    return out;
}

AuditResult audit_error_rates(const CalibrationStore& store, const Thresholds& thr,
                              const std::vector<LabeledStepReward>& heldout) {
    AuditResult out;
    int false_negatives = 0;
    int false_positives = 0;
    int abstains = 0;
    for (const auto& step : heldout) {
        const StepLabel label = label_step(step.r_t, step.t, store, thr);
        out.n += 1;
        if (step.outcome) out.n_true += 1; else out.n_false += 1;
        if (label.value == LabelValue::Abstain) {
            abstains += 1;
        } else if (step.outcome && label.value == LabelValue::Failure) {
            false_negatives += 1;
        } else if (!step.outcome && label.value == LabelValue::Success) {
            false_positives += 1;
        }
    }
    out.fnr = out.n_true > 0 ? static_cast<double>(false_negatives) / out.n_true : 0.0;
    out.fpr = out.n_false > 0 ? static_cast<double>(false_positives) / out.n_false : 0.0;
    out.abstain_rate = out.n > 0 ? static_cast<double>(abstains) / out.n : 0.0;
    return out;
}

namespace {

ordered_json store_document(const CalibrationStore& store, const Thresholds& thr) {
    ordered_json doc;
    doc["format"] = "calibration-store-v1";
    doc["thresholds"] = {{"eps_s", thr.eps_s}, {"eps_f", thr.eps_f}};
    doc["min_per_cell"] = store.min_per_cell();
    doc["pooled"] = {{"success", store.pooled().success_scores},
                     {"failure", store.pooled().failure_scores}};
    ordered_json cells = ordered_json::array();
    for (const auto& [t, cell] : store.per_timestep()) {
        cells.push_back({{"t", t},
                         {"success", cell.success_scores},
                         {"failure", cell.failure_scores}});
    }
    doc["cells"] = std::move(cells);
    return doc;
}

}  // namespace

void save_store(const CalibrationStore& store, const Thresholds& thr, const std::string& path) {
    if (!store.frozen()) throw StoreNotFrozen("cannot persist an unfrozen store");
    ordered_json doc = store_document(store, thr);
    doc["digest"] = content_digest(doc.dump());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SinkFailure("cannot open " + path + " for writing");
    out << doc.dump(2) << '\n';
}

std::pair<CalibrationStore, Thresholds> load_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("cannot open " + path + " for reading");
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("bad calibration store: ") + e.what());
    }
    Thresholds thr;
    try {
        thr.eps_s = doc.at("thresholds").at("eps_s").get<double>();
        thr.eps_f = doc.at("thresholds").at("eps_f").get<double>();
        const int min_per_cell = doc.at("min_per_cell").get<int>();
        CalibrationCell pooled;
        pooled.success_scores = doc.at("pooled").at("success").get<std::vector<double>>();
        pooled.failure_scores = doc.at("pooled").at("failure").get<std::vector<double>>();
        std::map<int, CalibrationCell> cells;
        for (const auto& c : doc.at("cells")) {
            CalibrationCell cell;
            cell.success_scores = c.at("success").get<std::vector<double>>();
            cell.failure_scores = c.at("failure").get<std::vector<double>>();
            cells.emplace(c.at("t").get<int>(), std::move(cell));
        }
        const std::string recorded = doc.at("digest").get<std::string>();
        ordered_json without = doc;
        without.erase("digest");
        if (content_digest(without.dump()) != recorded) {
            throw ValidationError("calibration store digest mismatch in " + path);
        }
        return {make_store(std::move(cells), std::move(pooled), min_per_cell), thr};
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("bad calibration store: ") + e.what());
    }
}

}  // namespace stepconf
