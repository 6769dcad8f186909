#include "stepconf/representation.hpp"

#include <cmath>

#include "stepconf/errors.hpp"

namespace stepconf {

void RepresentationConfig::validate() const {
    if (dim < 2) throw ValidationError("rep.dim must be >= 2");
    if (layers.empty()) throw ValidationError("rep.layers must be non-empty");
    for (int layer : layers) {
        if (layer < 1) throw ValidationError("rep.layers entries must be >= 1");
    }
    if (margin < 0.0) throw ValidationError("rep.margin must be >= 0");
    if (noise_sigma <= 0.0) throw ValidationError("rep.noise_sigma must be > 0");
}

RepresentationProvider::RepresentationProvider(RepresentationConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int dim = cfg_.dim;
    for (int layer : cfg_.layers) {
        Rng g_rng = Rng(cfg_.seed).derive("g").derive(static_cast<std::uint64_t>(layer));
        std::vector<double> g(dim);
        double norm_sq = 0.0;
        for (int i = 0; i < dim; ++i) {
            g[i] = g_rng.normal();
            norm_sq += g[i] * g[i];
        }
        const double inv_norm = 1.0 / std::sqrt(norm_sq);
        for (double& v : g) v *= inv_norm;
        g_[layer] = std::move(g);

        // Entries ~ N(0, 1/dim) keep |A phi| ~ 1 for unit phi. The map's
        // range is projected orthogonal to g so the prefix features add
        // covariate structure without polluting the class direction.
        Rng a_rng = Rng(cfg_.seed).derive("A").derive(static_cast<std::uint64_t>(layer));
        std::vector<double> A(static_cast<std::size_t>(dim) * dim);
        const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
        for (auto& v : A) v = a_rng.normal(0.0, sd);
        const std::vector<double>& gl = g_[layer];
        for (int j = 0; j < dim; ++j) {
            double gta = 0.0;
            for (int i = 0; i < dim; ++i) gta += gl[i] * A[static_cast<std::size_t>(i) * dim + j];
            for (int i = 0; i < dim; ++i) A[static_cast<std::size_t>(i) * dim + j] -= gl[i] * gta;
        }
        A_[layer] = std::move(A);
    }
}

const std::vector<double>& RepresentationProvider::direction(int layer) const {
    auto it = g_.find(layer);
    if (it == g_.end()) {
        throw UnknownLayer("layer " + std::to_string(layer) + " is not in the configured set");
    }
    return it->second;
}

std::vector<double> RepresentationProvider::feature_hash(const Trajectory& prefix) const {
    std::vector<double> phi(cfg_.dim, 0.0);
    auto add_text = [&](const std::string& text) {
        std::size_t start = 0;
        while (start < text.size()) {
            while (start < text.size() && text[start] == ' ') ++start;
            std::size_t end = start;
            while (end < text.size() && text[end] != ' ') ++end;
            if (end > start) {
                const std::uint64_t h =
                    fnv1a64(std::string_view(text).substr(start, end - start));
                const int idx = static_cast<int>(h % static_cast<std::uint64_t>(cfg_.dim));
                phi[idx] += (h >> 63) ? 1.0 : -1.0;
            }
            start = end;
        }
    };
    add_text(prefix.task.text);
    for (const auto& step : prefix.steps) {
        add_text(step.thought);
        add_text(step.action);
        add_text(step.observation);
    }
    double norm_sq = 0.0;
    for (double v : phi) norm_sq += v * v;
    if (norm_sq > 0.0) {
        const double inv_norm = 1.0 / std::sqrt(norm_sq);
        for (double& v : phi) v *= inv_norm;
    }
    return phi;
}

ActivationVector RepresentationProvider::hidden_state(const Trajectory& prefix, int layer,
                                                      bool on_success_path,
                                                      Rng noise_stream) const {
    const std::vector<double>& g = direction(layer);
    const std::vector<double>& A = A_.at(layer);
    const std::vector<double> phi = feature_hash(prefix);
    const int dim = cfg_.dim;
    const double y = on_success_path ? 1.0 : -1.0;
    const double signal = y * cfg_.margin / 2.0;
    const double noise_sd = cfg_.noise_sigma / 2.0;

    ActivationVector h;
    h.values.resize(dim);
    for (int i = 0; i < dim; ++i) {
        double mixed = 0.0;
        const double* row = &A[static_cast<std::size_t>(i) * dim];
        for (int j = 0; j < dim; ++j) mixed += row[j] * phi[j];
        h.values[i] = mixed + signal * g[i] + noise_stream.normal(0.0, noise_sd);
    }
    return h;
}

ActivationVector hidden_state(const RepresentationConfig& cfg, const Trajectory& prefix,
                              int layer, bool on_success_path, Rng noise_stream) {
    RepresentationProvider provider(cfg);
    return provider.hidden_state(prefix, layer, on_success_path, std::move(noise_stream));
}

}  // namespace stepconf
