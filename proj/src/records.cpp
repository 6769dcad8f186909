#include "stepconf/records.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "stepconf/errors.hpp"

namespace stepconf {

using ordered_json = nlohmann::ordered_json;

std::size_t write_records(const std::vector<Trajectory>& corpus, std::ostream& sink) {
    std::size_t lines = 0;
    for (const auto& traj : corpus) {
        if (!traj.finalized || !traj.final_reward) {
            throw UnfinalizedTrajectory("write_records requires finalized trajectories (task " +
                                        traj.task.id + ")");
        }
        for (std::size_t i = 0; i < traj.steps.size(); ++i) {
            const StepRecord& step = traj.steps[i];
            ordered_json rec;
            rec["task_id"] = traj.task.id;
            rec["split"] = to_string(traj.task.split);
            rec["domain_tag"] = traj.task.domain_tag;
            rec["t"] = step.t;
            rec["thought"] = step.thought;
            rec["action"] = step.action;
            rec["observation"] = step.observation;
            if (step.r_t) rec["r_t"] = *step.r_t;
            if (i + 1 == traj.steps.size()) rec["final_reward"] = *traj.final_reward;
            if (step.oracle_success) rec["oracle_success"] = *step.oracle_success;
            ordered_json acts = ordered_json::object();
            for (const auto& [layer, vec] : step.activations) {
                acts["L" + std::to_string(layer)] = vec.values;
            }
            rec["activations"] = std::move(acts);
            sink << rec.dump() << '\n';
            if (!sink) throw SinkFailure("record sink write failed");
            ++lines;
        }
    }
    return lines;
}

std::size_t write_records_file(const std::vector<Trajectory>& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SinkFailure("cannot open " + path + " for writing");
    return write_records(corpus, out);
}

namespace {

// Raw per-line parse, kept so trajectories can be reassembled afterwards.
struct ParsedRecord {
    long line = 0;
    std::string task_id;
    Split split;
    std::string domain_tag;
    StepRecord step;
    std::optional<double> final_reward;
};

ParsedRecord parse_line(const std::string& text, long line_no) {
    ordered_json rec;
    try {
        rec = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!rec.is_object()) throw MalformedRecord("record is not an object", line_no);

    ParsedRecord out;
    out.line = line_no;
    auto require = [&](const char* field) -> const ordered_json& {
        auto it = rec.find(field);
        if (it == rec.end()) {
            throw MalformedRecord(std::string("missing field '") + field + "'", line_no);
        }
        return *it;
    };
    try {
        out.task_id = require("task_id").get<std::string>();
        out.split = split_from_string(require("split").get<std::string>());
        out.domain_tag = require("domain_tag").get<std::string>();
        out.step.t = require("t").get<int>();
        out.step.thought = require("thought").get<std::string>();
        out.step.action = require("action").get<std::string>();
        out.step.observation = require("observation").get<std::string>();
        if (rec.contains("r_t")) out.step.r_t = rec.at("r_t").get<double>();
        if (rec.contains("final_reward")) out.final_reward = rec.at("final_reward").get<double>();
        if (rec.contains("oracle_success")) {
            out.step.oracle_success = rec.at("oracle_success").get<bool>();
        }
        const auto& acts = require("activations");
        if (!acts.is_object()) throw MalformedRecord("activations must be an object", line_no);
        for (const auto& [key, value] : acts.items()) {
            if (key.size() < 2 || key[0] != 'L') {
                throw MalformedRecord("activation key '" + key + "' is not L<layer>", line_no);
            }
            int layer = 0;
            try {
                layer = std::stoi(key.substr(1));
            } catch (const std::exception&) {
                throw MalformedRecord("activation key '" + key + "' is not L<layer>", line_no);
            }
            ActivationVector vec;
            vec.values = value.get<std::vector<double>>();
            out.step.activations[layer] = std::move(vec);
        }
    } catch (const MalformedRecord&) {
        throw;
    } catch (const ValidationError& e) {
        throw MalformedRecord(e.what(), line_no);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRecord(std::string("bad field type: ") + e.what(), line_no);
    }
    if (out.step.t < 0) throw MalformedRecord("negative timestep", line_no);
    return out;
}

}  // namespace

std::vector<Trajectory> read_records(std::istream& source) {
    // Group by task id preserving first-appearance order so that
    // read(write(corpus)) reproduces the corpus order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<ParsedRecord>> groups;

    std::string line;
    long line_no = 0;
    while (std::getline(source, line)) {
        ++line_no;
        if (line.empty()) continue;
        ParsedRecord rec = parse_line(line, line_no);
        auto [it, inserted] = groups.try_emplace(rec.task_id);
        if (inserted) order.push_back(rec.task_id);
        it->second.push_back(std::move(rec));
    }

    std::map<int, int> layer_dims;  // corpus-wide dimension check
    std::vector<Trajectory> corpus;
    corpus.reserve(order.size());
    for (const auto& task_id : order) {
        auto& recs = groups.at(task_id);
        std::map<int, ParsedRecord*> by_t;
        for (auto& rec : recs) {
            auto [it, inserted] = by_t.emplace(rec.step.t, &rec);
            if (!inserted) {
                throw MalformedRecord("duplicate record for task '" + task_id + "' at t=" +
                                          std::to_string(rec.step.t),
                                      rec.line);
            }
        }

        Trajectory traj;
        traj.task.id = task_id;
        traj.task.split = recs.front().split;
        traj.task.domain_tag = recs.front().domain_tag;
        std::optional<double> final_reward;
        int expected_t = by_t.begin()->first;
        if (expected_t != 0) {
            throw MalformedRecord("task '" + task_id + "' does not start at t=0",
                                  by_t.begin()->second->line);
        }
        for (auto& [t, rec] : by_t) {
            if (t != expected_t) {
                throw MalformedRecord("task '" + task_id + "' missing t=" +
                                          std::to_string(expected_t),
                                      rec->line);
            }
            ++expected_t;
            if (rec->split != traj.task.split || rec->domain_tag != traj.task.domain_tag) {
                throw MalformedRecord("task '" + task_id + "' has inconsistent split/domain",
                                      rec->line);
            }
            for (const auto& [layer, vec] : rec->step.activations) {
                auto [it, inserted] = layer_dims.emplace(layer, vec.dim());
                if (!inserted && it->second != vec.dim()) {
                    throw DimensionMismatch("layer " + std::to_string(layer) +
                                            " has activations of dim " + std::to_string(it->second) +
                                            " and " + std::to_string(vec.dim()));
                }
            }
            if (rec->final_reward) {
                if (final_reward) {
                    throw MalformedRecord("task '" + task_id + "' has multiple final_reward fields",
                                          rec->line);
                }
                final_reward = rec->final_reward;
            }
            traj.steps.push_back(std::move(rec->step));
        }
        if (final_reward) {
            if (!by_t.rbegin()->second->final_reward) {
                throw MalformedRecord("task '" + task_id +
                                      "' carries final_reward before its last step");
            }
            traj.final_reward = final_reward;
            traj.finalized = true;
        }
        corpus.push_back(std::move(traj));
    }
    return corpus;
}

std::vector<Trajectory> read_records_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkFailure("cannot open " + path + " for reading");
    return read_records(in);
}

}  // namespace stepconf
