#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "stepconf/trajectory.hpp"

namespace stepconf {

/// Line-delimited trajectory records: one JSON object per step, UTF-8, reals
/// serialized with full round-trip precision. Field order is fixed so the
/// same corpus always serializes to identical bytes:
///   task_id, split, domain_tag, t, thought, action, observation,
///   r_t (when attached), final_reward (last step only),
///   oracle_success (when known), activations ("L<layer>" -> [reals]).
///
/// This format is the ingestion boundary for externally produced traces.

/// Writes one record per step per trajectory; all trajectories must be
/// finalized. Returns the number of lines written.
std::size_t write_records(const std::vector<Trajectory>& corpus, std::ostream& sink);
std::size_t write_records_file(const std::vector<Trajectory>& corpus, const std::string& path);

/// Reassembles trajectories grouped by task id, steps ordered by t.
/// Activation dimensions are validated per layer across the whole corpus.
std::vector<Trajectory> read_records(std::istream& source);
std::vector<Trajectory> read_records_file(const std::string& path);

}  // namespace stepconf
