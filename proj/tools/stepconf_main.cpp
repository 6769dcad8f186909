// stepconf: generate synthetic agent corpora, estimate step-wise rewards by
// Monte Carlo rollout, calibrate conformal success/failure labels, train
// linear probes per (layer, timestep), extract steering directions, and
// report the result grids. `run` executes every stage with artifact caching.
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stepconf/errors.hpp"
#include "stepconf/pipeline.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string output_dir;
    std::string seed;
    bool force = false;
    double eps_s = -1.0;
    double eps_f = -1.0;
    int steer_layer = 0;
    std::string steer_steps;
    double steer_coeff = std::nan("");
};

stepconf::PipelineConfig load_config(const GlobalOpts& opts) {
    stepconf::PipelineConfig cfg =
        opts.config_path.empty() ? stepconf::default_config()
                                 : stepconf::parse_config_file(opts.config_path);
    if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
    if (!opts.seed.empty()) cfg.master_seed = std::stoull(opts.seed);
    if (opts.eps_s > 0.0) cfg.thresholds.eps_s = opts.eps_s;
    if (opts.eps_f > 0.0) cfg.thresholds.eps_f = opts.eps_f;
    if (opts.steer_layer > 0) {
        cfg.intervention.layer = opts.steer_layer;
        cfg.intervention_layer_auto = false;
    }
    if (!opts.steer_steps.empty()) {
        cfg.intervention.timesteps.clear();
        std::string cur;
        for (char c : opts.steer_steps + ",") {
            if (c == ',') {
                if (!cur.empty()) cfg.intervention.timesteps.push_back(std::stoi(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
    }
    if (!std::isnan(opts.steer_coeff)) cfg.intervention.coefficient = opts.steer_coeff;
    cfg.validate();
    return cfg;
}

void print_manifest(const stepconf::RunManifest& manifest) {
    std::printf("run complete (tool %s, config %s)\n", manifest.tool_version.c_str(),
                manifest.config_digest.c_str());
    for (const auto& name : stepconf::kStageNames) {
        const auto it = manifest.stages.find(name);
        if (it == manifest.stages.end()) continue;
        std::printf("  %-9s %-22s %s%s\n", name.c_str(), it->second.path.c_str(),
                    it->second.digest.c_str(), it->second.cached ? "  (cached)" : "");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"step-wise conformal labeling, probing and steering pipeline"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("--config", opts.config_path, "pipeline config file (key = value lines)");
    app.add_option("--output", opts.output_dir, "output directory (overrides config)");
    app.add_option("--seed", opts.seed, "master seed (overrides config)");
    app.add_flag("--force", opts.force, "re-run stages even when cached artifacts match");
    app.add_option("--eps-s", opts.eps_s, "success significance level override");
    app.add_option("--eps-f", opts.eps_f, "failure significance level override");
    app.add_option("--steer-layer", opts.steer_layer, "steered layer (disables auto pick)");
    app.add_option("--steer-steps", opts.steer_steps, "intervention timesteps, comma separated");
    app.add_option("--steer-coeff", opts.steer_coeff, "steering coefficient");

    for (const auto& stage : stepconf::kStageNames) {
        app.add_subcommand(stage, "run the " + stage + " stage")->fallthrough();
    }
    app.add_subcommand("run", "run every stage (with artifact caching)")->fallthrough();

    auto* ingest_cmd = app.add_subcommand("ingest", "validate and register an external corpus");
    ingest_cmd->fallthrough();
    std::string ingest_path, ingest_name;
    bool ingest_as_corpus = false;
    ingest_cmd->add_option("path", ingest_path, "record file to ingest")->required();
    ingest_cmd->add_option("--name", ingest_name, "dataset name (default: file stem)");
    ingest_cmd->add_flag("--as-corpus", ingest_as_corpus,
                         "install as the run's corpus so calibrate/label/probe can use it");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "ingest") {
            std::string dataset = ingest_name;
            if (dataset.empty()) {
                const auto slash = ingest_path.find_last_of('/');
                dataset = slash == std::string::npos ? ingest_path : ingest_path.substr(slash + 1);
                const auto dot = dataset.find_last_of('.');
                if (dot != std::string::npos) dataset = dataset.substr(0, dot);
            }
            const std::string out_dir = opts.output_dir.empty()
                                            ? load_config(opts).output_dir
                                            : opts.output_dir;
            const auto summary =
                stepconf::ingest(ingest_path, dataset, out_dir, ingest_as_corpus);
            std::fputs(stepconf::summary_text(summary).c_str(), stdout);
            return 0;
        }

        const stepconf::PipelineConfig cfg = load_config(opts);
        const stepconf::RunManifest manifest =
            name == "run" ? stepconf::run(cfg, opts.force)
                          : stepconf::run_stage(cfg, name, opts.force);
        print_manifest(manifest);
        return 0;
    } catch (const stepconf::ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 1;
    } catch (const stepconf::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
