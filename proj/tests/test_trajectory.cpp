#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "stepconf/errors.hpp"
#include "stepconf/records.hpp"
#include "stepconf/rng.hpp"
#include "stepconf/trajectory.hpp"

using namespace stepconf;

namespace {

StepRecord make_step(int t, const std::string& action) {
    StepRecord s;
    s.t = t;
    s.thought = "thinking about " + action;
    s.action = action;
    s.observation = "saw " + action;
    return s;
}

Trajectory fixture_trajectory(int n_steps) {
    Trajectory traj;
    traj.task.id = "fix-ep0-s0000000000000001";
    traj.task.text = "do the thing";
    traj.task.domain_tag = "dense-world";
    traj.task.split = Split::Train;
    for (int t = 0; t < n_steps; ++t) {
        traj = append_step(traj, make_step(t, "act" + std::to_string(t)));
    }
    return traj;
}

// Random corpus for round-trip properties.
std::vector<Trajectory> random_corpus(Rng& rng, int n_trajs) {
    std::vector<Trajectory> corpus;
    for (int k = 0; k < n_trajs; ++k) {
        Trajectory traj;
        traj.task.id = "rand-ep" + std::to_string(k) + "-s0000000000000abc";
        traj.task.text = "task " + std::to_string(k);
        traj.task.domain_tag = k % 2 ? "dense-world" : "sparse-world";
        traj.task.split = k % 2 ? Split::Calibration : Split::TestOod;
        const int len = 1 + static_cast<int>(rng.below(6));
        for (int t = 0; t < len; ++t) {
            StepRecord s = make_step(t, "a" + std::to_string(t));
            if (rng.below(2)) s.oracle_success = rng.below(2) == 0;
            if (rng.below(2)) s.r_t = rng.uniform01();
            for (int layer : {8, 16}) {
                ActivationVector v;
                for (int j = 0; j < 4; ++j) v.values.push_back(rng.normal());
                s.activations[layer] = v;
            }
            traj = append_step(traj, std::move(s));
        }
        corpus.push_back(finalize(std::move(traj), rng.uniform01()));
    }
    return corpus;
}

bool steps_equal(const StepRecord& a, const StepRecord& b) {
    if (a.t != b.t || a.thought != b.thought || a.action != b.action ||
        a.observation != b.observation || a.oracle_success != b.oracle_success ||
        a.r_t != b.r_t || a.activations.size() != b.activations.size()) {
        return false;
    }
    for (const auto& [layer, vec] : a.activations) {
        const auto it = b.activations.find(layer);
        if (it == b.activations.end() || it->second.values != vec.values) return false;
    }
    return true;
}

bool corpora_equal(const std::vector<Trajectory>& a, const std::vector<Trajectory>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].task.id != b[i].task.id || a[i].task.domain_tag != b[i].task.domain_tag ||
            a[i].task.split != b[i].task.split || a[i].finalized != b[i].finalized ||
            a[i].final_reward != b[i].final_reward || a[i].steps.size() != b[i].steps.size()) {
            return false;
        }
        for (std::size_t s = 0; s < a[i].steps.size(); ++s) {
            if (!steps_equal(a[i].steps[s], b[i].steps[s])) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("append_step base case and contract violations") {
    Trajectory empty;
    empty.task.id = "t";
    Trajectory one = append_step(empty, make_step(0, "first"));
    CHECK(one.steps.size() == 1);
    CHECK(empty.steps.empty());  // original untouched

    Trajectory two = append_step(one, make_step(1, "second"));
    CHECK_THROWS_AS(append_step(two, make_step(3, "gap")), NonMonotonicTimestep);

    Trajectory done = finalize(two, 0.5);
    CHECK_THROWS_AS(append_step(done, make_step(2, "late")), AlreadyFinalized);
}

TEST_CASE("prefix slices exactly and clears finalization") {
    Trajectory traj = finalize(fixture_trajectory(5), 1.0);

    Trajectory full = prefix(traj, 5);
    CHECK(full.steps.size() == 5);
    CHECK_FALSE(full.finalized);

    Trajectory none = prefix(traj, 0);
    CHECK(none.steps.empty());
    CHECK(none.task.id == traj.task.id);

    Trajectory three = prefix(traj, 3);
    REQUIRE(three.steps.size() == 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(steps_equal(three.steps[t], traj.steps[t]));
    }

    CHECK_THROWS_AS(prefix(traj, 6), IndexOutOfRange);
    CHECK_THROWS_AS(prefix(traj, -1), IndexOutOfRange);
}

TEST_CASE("prefix of prefix equals the shorter prefix") {
    Trajectory traj = fixture_trajectory(7);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int a = static_cast<int>(rng.below(8));
        const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(a) + 1));
        Trajectory via = prefix(prefix(traj, a), b);
        Trajectory direct = prefix(traj, b);
        REQUIRE(via.steps.size() == direct.steps.size());
        for (std::size_t s = 0; s < via.steps.size(); ++s) {
            CHECK(steps_equal(via.steps[s], direct.steps[s]));
        }
    }
}

TEST_CASE("write_records counts lines and rejects unfinalized corpora") {
    Rng rng(3);
    auto corpus = random_corpus(rng, 2);
    corpus[0] = finalize(fixture_trajectory(3), 1.0);
    corpus[1] = finalize([&] {
        Trajectory t = fixture_trajectory(3);
        t.task.id = "fix2-ep1-s0000000000000002";
        return t;
    }(), 0.0);
    std::ostringstream sink;
    CHECK(write_records(corpus, sink) == 6);

    std::vector<Trajectory> bad = {fixture_trajectory(2)};
    std::ostringstream sink2;
    CHECK_THROWS_AS(write_records(bad, sink2), UnfinalizedTrajectory);
}

TEST_CASE("record round-trip is exact on random corpora") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const auto corpus = random_corpus(rng, 1 + static_cast<int>(rng.below(5)));
        std::ostringstream sink;
        write_records(corpus, sink);
        std::istringstream source(sink.str());
        const auto back = read_records(source);
        CHECK(corpora_equal(corpus, back));
    }
}

TEST_CASE("serialization is order-stable byte for byte") {
    Rng rng(7);
    const auto corpus = random_corpus(rng, 4);
    std::ostringstream a, b;
    write_records(corpus, a);
    write_records(corpus, b);
    CHECK(a.str() == b.str());
}

TEST_CASE("malformed records are rejected with line numbers") {
    SUBCASE("missing action") {
        std::istringstream in(
            R"({"task_id":"x","split":"train","domain_tag":"d","t":0,"thought":"","observation":"o","activations":{}})"
            "\n");
        CHECK_THROWS_AS(read_records(in), MalformedRecord);
    }
    SUBCASE("duplicate (task, t)") {
        const std::string rec =
            R"({"task_id":"x","split":"train","domain_tag":"d","t":0,"thought":"","action":"a","observation":"o","activations":{}})";
        std::istringstream in(rec + "\n" + rec + "\n");
        try {
            read_records(in);
            FAIL("expected MalformedRecord");
        } catch (const MalformedRecord& e) {
            CHECK(e.line_number == 2);
        }
    }
    SUBCASE("mixed activation dims") {
        std::istringstream in(
            R"({"task_id":"x","split":"train","domain_tag":"d","t":0,"thought":"","action":"a","observation":"o","final_reward":1.0,"activations":{"L8":[0.0,1.0]}})"
            "\n"
            R"({"task_id":"y","split":"train","domain_tag":"d","t":0,"thought":"","action":"a","observation":"o","final_reward":1.0,"activations":{"L8":[0.0,1.0,2.0]}})"
            "\n");
        CHECK_THROWS_AS(read_records(in), DimensionMismatch);
    }
    SUBCASE("truncated json") {
        std::istringstream in(R"({"task_id":"x","split")" "\n");
        CHECK_THROWS_AS(read_records(in), MalformedRecord);
    }
}

TEST_CASE("outcome_of applies the success threshold") {
    Trajectory traj = finalize(fixture_trajectory(2), 0.75);
    CHECK(outcome_of(traj, 0.75).success);
    CHECK_FALSE(outcome_of(traj, 0.99).success);
    CHECK_THROWS_AS(outcome_of(fixture_trajectory(1), 0.5), UnfinalizedTrajectory);
}
