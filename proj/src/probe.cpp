#include "stepconf/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "stepconf/digest.hpp"
#include "stepconf/errors.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ValidationError("train.learning_rate must be > 0");
    if (max_epochs < 1) throw ValidationError("train.max_epochs must be >= 1");
    if (l2_lambda < 0.0) throw ValidationError("train.l2_lambda must be >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ValidationError("train.val_fraction must be in (0,1)");
    }
    if (patience < 0) throw ValidationError("train.patience must be >= 0");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct CoreLossGrad {
    double loss;
    std::vector<double> grad_W;
    double grad_b;
};

// Loss and gradients on already-standardized features.
CoreLossGrad core_loss_grad(const std::vector<std::vector<double>>& Xs,
                            const std::vector<int>& y, const std::vector<double>& W, double b,
                            double l2_lambda) {
    const std::size_t n = Xs.size();
    const std::size_t dim = W.size();
    CoreLossGrad out{0.0, std::vector<double>(dim, 0.0), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        for (std::size_t j = 0; j < dim; ++j) z += W[j] * Xs[i][j];
        out.loss += softplus(z) - y[i] * z;  // BCE with the stable formulation
        const double err = sigmoid(z) - y[i];
        for (std::size_t j = 0; j < dim; ++j) out.grad_W[j] += err * Xs[i][j];
        out.grad_b += err;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.loss *= inv_n;
    out.grad_b *= inv_n;
    double w_sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        out.grad_W[j] = out.grad_W[j] * inv_n + l2_lambda * W[j];
        w_sq += W[j] * W[j];
    }
    out.loss += 0.5 * l2_lambda * w_sq;
    return out;
}

std::vector<double> standardize_row(const std::vector<double>& x, const std::vector<double>& mean,
                                    const std::vector<double>& scale) {
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
    return out;
}

double val_loss_only(const std::vector<std::vector<double>>& Xs, const std::vector<int>& y,
                     const std::vector<double>& W, double b) {
    double loss = 0.0;
    for (std::size_t i = 0; i < Xs.size(); ++i) {
        double z = b;
        for (std::size_t j = 0; j < W.size(); ++j) z += W[j] * Xs[i][j];
        loss += softplus(z) - y[i] * z;
    }
    return loss / static_cast<double>(Xs.size());
}

}  // namespace

LossGrad loss_and_gradient(const ProbeParams& params, const Dataset& batch, double l2_lambda) {
    if (batch.X.empty() || batch.X.size() != batch.y.size()) {
        throw DimensionMismatch("batch features and labels must be non-empty and aligned");
    }
    const std::size_t dim = params.W.size();
    std::vector<std::vector<double>> Xs;
    Xs.reserve(batch.X.size());
    for (const auto& x : batch.X) {
        if (x.size() != dim) {
            throw DimensionMismatch("example dim " + std::to_string(x.size()) +
                                    " != probe dim " + std::to_string(dim));
        }
        Xs.push_back(standardize_row(x, params.mean, params.scale));
    }
    CoreLossGrad core = core_loss_grad(Xs, batch.y, params.W, params.b, l2_lambda);
    return {core.loss, std::move(core.grad_W), core.grad_b};
}

std::pair<ProbeParams, ProbeMetrics> train_probe(const Dataset& dataset, ActivationKey key,
                                                 const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = dataset.X.size();
    if (n == 0 || dataset.y.size() != n) {
        throw DegenerateDataset("dataset is empty or misaligned");
    }
    const std::size_t dim = dataset.X.front().size();

    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
        if (dataset.X[i].size() != dim) throw DimensionMismatch("inconsistent feature dims");
        if (dataset.y[i] != 0 && dataset.y[i] != 1) {
            throw DegenerateDataset("labels must be 0 or 1");
        }
        (dataset.y[i] == 1 ? pos : neg).push_back(i);
    }
    if (pos.size() < 2 || neg.size() < 2) {
        throw DegenerateDataset("need >= 2 examples per class, got " +
                                std::to_string(pos.size()) + " success / " +
                                std::to_string(neg.size()) + " failure");
    }

    // Stratified validation split; the seed only moves examples between folds.
    Rng shuffle_rng = Rng(cfg.seed).derive("val-split");
    auto shuffle = [&](std::vector<std::size_t>& idx) {
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::swap(idx[i - 1], idx[shuffle_rng.below(i)]);
        }
    };
    shuffle(pos);
    shuffle(neg);
    const auto n_val_pos = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        std::floor(cfg.val_fraction * pos.size())));
    const auto n_val_neg = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        std::floor(cfg.val_fraction * neg.size())));
    std::vector<std::size_t> val_idx(pos.begin(), pos.begin() + n_val_pos);
    val_idx.insert(val_idx.end(), neg.begin(), neg.begin() + n_val_neg);
    std::vector<std::size_t> train_idx(pos.begin() + n_val_pos, pos.end());
    train_idx.insert(train_idx.end(), neg.begin() + n_val_neg, neg.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    // Standardization from the training fold only.
    std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
    for (std::size_t i : train_idx) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += dataset.X[i][j];
    }
    for (double& m : mean) m /= static_cast<double>(train_idx.size());
    for (std::size_t i : train_idx) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = dataset.X[i][j] - mean[j];
            scale[j] += d * d;
        }
    }
    bool any_varying = false;
    for (double& s : scale) {
        s = std::sqrt(s / static_cast<double>(train_idx.size()));
        if (s > 0.0) {
            any_varying = true;
        } else {
            s = 1.0;  // constant feature: pass through centered
        }
    }
    if (!any_varying) throw DegenerateDataset("all features are constant");

    auto standardized = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::vector<double>> Xs;
        std::vector<int> ys;
        Xs.reserve(idx.size());
        ys.reserve(idx.size());
        for (std::size_t i : idx) {
            Xs.push_back(standardize_row(dataset.X[i], mean, scale));
            ys.push_back(dataset.y[i]);
        }
        return std::make_pair(std::move(Xs), std::move(ys));
    };
    auto [Xtr, ytr] = standardized(train_idx);
    auto [Xval, yval] = standardized(val_idx);

    std::vector<double> W(dim, 0.0);
    double b = 0.0;
    double lr = cfg.learning_rate;
    CoreLossGrad current = core_loss_grad(Xtr, ytr, W, b, cfg.l2_lambda);

    std::vector<double> best_W = W;
    double best_b = b;
    double best_val = val_loss_only(Xval, yval, W, b);
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        // Accept only steps that do not increase the training loss; halve the
        // rate otherwise. The objective is convex, so this terminates.
        std::vector<double> W_next(dim);
        double b_next = 0.0;
        CoreLossGrad next{};
        bool accepted = false;
        for (int tries = 0; tries < 40; ++tries) {
            for (std::size_t j = 0; j < dim; ++j) W_next[j] = W[j] - lr * current.grad_W[j];
            b_next = b - lr * current.grad_b;
            next = core_loss_grad(Xtr, ytr, W_next, b_next, cfg.l2_lambda);
            if (next.loss <= current.loss) {
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if (!accepted) break;  // at numerical optimum
        W = std::move(W_next);
        b = b_next;
        current = std::move(next);

        const double val = val_loss_only(Xval, yval, W, b);
        if (val < best_val) {
            best_val = val;
            best_W = W;
            best_b = b;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best > cfg.patience) break;
        }
    }

    ProbeParams params;
    params.key = key;
    params.W = std::move(best_W);
    params.b = best_b;
    params.mean = std::move(mean);
    params.scale = std::move(scale);

    std::vector<int> y_pred;
    y_pred.reserve(yval.size());
    for (std::size_t i = 0; i < Xval.size(); ++i) {
        double z = params.b;
        for (std::size_t j = 0; j < dim; ++j) z += params.W[j] * Xval[i][j];
        y_pred.push_back(sigmoid(z) >= 0.5 ? 1 : 0);
    }
    return {std::move(params), compute_metrics(yval, y_pred)};
}

Prediction predict(const ProbeParams& params, const ActivationVector& h) {
    if (h.values.size() != params.W.size()) {
        throw DimensionMismatch("activation dim " + std::to_string(h.values.size()) +
                                " != probe dim " + std::to_string(params.W.size()));
    }
    double z = params.b;
    for (std::size_t j = 0; j < params.W.size(); ++j) {
        z += params.W[j] * (h.values[j] - params.mean[j]) / params.scale[j];
    }
    const double score = sigmoid(z);
    return {score, score >= 0.5 ? LabelValue::Success : LabelValue::Failure};
}

ProbeMetrics compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.empty() || y_true.size() != y_pred.size()) {
        throw EmptyCell("metrics need aligned non-empty labels");
    }
    int correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == y_pred[i]) ++correct;
        if (y_pred[i] == 1 && y_true[i] == 1) ++tp;
        if (y_pred[i] == 1 && y_true[i] == 0) ++fp;
        if (y_pred[i] == 0 && y_true[i] == 1) ++fn;
    }
    ProbeMetrics out;
    out.n_test = static_cast<int>(y_true.size());
    out.accuracy = static_cast<double>(correct) / out.n_test;
    const int denom = 2 * tp + fp + fn;
    out.f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
    return out;
}

std::map<ActivationKey, Dataset> collect_grid_datasets(const std::vector<Trajectory>& corpus,
                                                       const StepLabelMap& labels,
                                                       const std::vector<int>& layers,
                                                       const std::vector<int>& timesteps) {
    std::map<ActivationKey, Dataset> out;
    for (const auto& traj : corpus) {
        for (const auto& step : traj.steps) {
            if (std::find(timesteps.begin(), timesteps.end(), step.t) == timesteps.end()) continue;
            const auto it = labels.find({traj.task.id, step.t});
            if (it == labels.end() || it->second == LabelValue::Abstain) continue;
            const int y = it->second == LabelValue::Success ? 1 : 0;
            for (int layer : layers) {
                const auto act = step.activations.find(layer);
                if (act == step.activations.end()) continue;
                Dataset& ds = out[{layer, step.t}];
                ds.X.push_back(act->second.values);
                ds.y.push_back(y);
            }
        }
    }
    return out;
}

ProbeGrid train_grid(const std::vector<Trajectory>& corpus, const StepLabelMap& labels,
                     const std::vector<int>& layers, const std::vector<int>& timesteps,
                     const TrainConfig& cfg) {
    const auto datasets = collect_grid_datasets(corpus, labels, layers, timesteps);
    ProbeGrid grid;
    for (int layer : layers) {
        for (int t : timesteps) {
            const ActivationKey key{layer, t};
            ProbeCell cell;
            const auto it = datasets.find(key);
            if (it == datasets.end()) {
                cell.error = "no labeled examples";
            } else {
                TrainConfig cell_cfg = cfg;
                cell_cfg.seed = Rng(cfg.seed)
                                    .derive("cell")
                                    .derive(static_cast<std::uint64_t>(layer))
                                    .derive(static_cast<std::uint64_t>(t))
                                    .root();
                try {
                    auto [params, metrics] = train_probe(it->second, key, cell_cfg);
                    cell.params = std::move(params);
                    cell.val_metrics = metrics;
                } catch (const Error& e) {
                    cell.error = e.what();
                }
            }
            grid.emplace(key, std::move(cell));
        }
    }
    return grid;
}

GridEvaluation evaluate(const ProbeGrid& grid, const std::vector<Trajectory>& test_corpus,
                        const StepLabelMap& labels) {
    std::vector<int> layers, timesteps;
    for (const auto& [key, cell] : grid) {
        if (std::find(layers.begin(), layers.end(), key.layer) == layers.end()) {
            layers.push_back(key.layer);
        }
        if (std::find(timesteps.begin(), timesteps.end(), key.timestep) == timesteps.end()) {
            timesteps.push_back(key.timestep);
        }
    }
    const auto datasets = collect_grid_datasets(test_corpus, labels, layers, timesteps);

    GridEvaluation out;
    double acc_sum = 0.0, f1_sum = 0.0;
    int cells = 0;
    for (const auto& [key, cell] : grid) {
        if (!cell.params) {
            out.errors[key] = cell.error.empty() ? "untrained cell" : cell.error;
            continue;
        }
        const auto it = datasets.find(key);
        if (it == datasets.end() || it->second.X.empty()) {
            out.errors[key] = "EmptyCell: no labeled test examples";
            continue;
        }
        std::vector<int> y_pred;
        y_pred.reserve(it->second.X.size());
        for (const auto& x : it->second.X) {
            ActivationVector h;
            h.values = x;
            y_pred.push_back(predict(*cell.params, h).label == LabelValue::Success ? 1 : 0);
        }
        const ProbeMetrics metrics = compute_metrics(it->second.y, y_pred);
        out.cells.emplace(key, metrics);
        acc_sum += metrics.accuracy;
        f1_sum += metrics.f1;
        ++cells;
    }
    if (cells > 0) {
        out.macro_accuracy = acc_sum / cells;
        out.macro_f1 = f1_sum / cells;
    }
    return out;
}

void save_grid(const ProbeGrid& grid, const std::string& config_digest, const std::string& path) {
    ordered_json doc;
    doc["format"] = "probe-grid-v1";
    doc["config_digest"] = config_digest;
    ordered_json cells = ordered_json::array();
    for (const auto& [key, cell] : grid) {
        ordered_json c;
        c["layer"] = key.layer;
        c["t"] = key.timestep;
        if (cell.params) {
            c["W"] = cell.params->W;
            c["b"] = cell.params->b;
            c["mean"] = cell.params->mean;
            c["scale"] = cell.params->scale;
        }
        if (cell.val_metrics) {
            c["val"] = {{"accuracy", cell.val_metrics->accuracy},
                        {"f1", cell.val_metrics->f1},
                        {"n", cell.val_metrics->n_test}};
        }
        if (!cell.error.empty()) c["error"] = cell.error;
        cells.push_back(std::move(c));
    }
    doc["cells"] = std::move(cells);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SinkFailure("cannot open " + path + " for writing");
    out << doc.dump(2) << '\n';
}

ProbeGrid load_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("cannot open " + path + " for reading");
    ordered_json doc;
    try {
        in >> doc;
        ProbeGrid grid;
        for (const auto& c : doc.at("cells")) {
            ActivationKey key{c.at("layer").get<int>(), c.at("t").get<int>()};
            ProbeCell cell;
            if (c.contains("W")) {
                ProbeParams params;
                params.key = key;
                params.W = c.at("W").get<std::vector<double>>();
                params.b = c.at("b").get<double>();
                params.mean = c.at("mean").get<std::vector<double>>();
                params.scale = c.at("scale").get<std::vector<double>>();
                cell.params = std::move(params);
            }
            if (c.contains("val")) {
                ProbeMetrics m;
                m.accuracy = c.at("val").at("accuracy").get<double>();
                m.f1 = c.at("val").at("f1").get<double>();
                m.n_test = c.at("val").at("n").get<int>();
                cell.val_metrics = m;
            }
            if (c.contains("error")) cell.error = c.at("error").get<std::string>();
            grid.emplace(key, std::move(cell));
        }
        return grid;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("bad probe grid: ") + e.what());
    }
}

std::string grid_csv(const std::map<ActivationKey, double>& values,
                     const std::vector<int>& layers, const std::vector<int>& timesteps,
                     int decimals) {
    std::string out = "layer";
    for (int t : timesteps) out += ",t=" + std::to_string(t);
    out += "\n";
    char buf[64];
    for (int layer : layers) {
        out += std::to_string(layer);
        for (int t : timesteps) {
            out += ",";
            const auto it = values.find({layer, t});
            if (it != values.end()) {
                std::snprintf(buf, sizeof(buf), "%.*f", decimals, it->second);
                out += buf;
            }
        }
        out += "\n";
    }
    return out;
}

std::string grid_table(const std::map<ActivationKey, double>& values,
                       const std::vector<int>& layers, const std::vector<int>& timesteps,
                       int decimals) {
    char buf[64];
    std::string out = "Layer";
    for (int t : timesteps) {
        std::snprintf(buf, sizeof(buf), "%8s", ("t=" + std::to_string(t)).c_str());
        out += buf;
    }
    out += "\n";
    for (int layer : layers) {
        std::snprintf(buf, sizeof(buf), "%5d", layer);
        out += buf;
        for (int t : timesteps) {
            const auto it = values.find({layer, t});
            if (it != values.end()) {
                std::snprintf(buf, sizeof(buf), "%8.*f", decimals, it->second);
            } else {
                std::snprintf(buf, sizeof(buf), "%8s", "-");
            }
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace stepconf
