#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "cgmarl/env.hpp"

using namespace cgmarl;

namespace {

bool same_state(const WorldState& a, const WorldState& b) {
    if (a.agent_pos.size() != b.agent_pos.size()) return false;
    for (size_t i = 0; i < a.agent_pos.size(); ++i) {
        if (a.agent_pos[i].x != b.agent_pos[i].x || a.agent_pos[i].y != b.agent_pos[i].y)
            return false;
        if (a.agent_vel[i].x != b.agent_vel[i].x || a.agent_vel[i].y != b.agent_vel[i].y)
            return false;
    }
    for (size_t k = 0; k < a.landmark_pos.size(); ++k)
        if (a.landmark_pos[k].x != b.landmark_pos[k].x ||
            a.landmark_pos[k].y != b.landmark_pos[k].y)
            return false;
    return a.goal_landmark == b.goal_landmark && a.agent_target == b.agent_target &&
           a.object_pos.x == b.object_pos.x && a.object_pos.y == b.object_pos.y &&
           a.adversary_pos.x == b.adversary_pos.x && a.adversary_pos.y == b.adversary_pos.y &&
           a.comm_symbol == b.comm_symbol && a.step_count == b.step_count;
}

bool same_observations(const std::vector<AgentObservation>& a,
                       const std::vector<AgentObservation>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!(a[i].values == b[i].values) || a[i].role != b[i].role) return false;
    return true;
}

double dist2d(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_CASE("reset is deterministic per seed") {
    for (Scenario s : {Scenario::speaker_listener, Scenario::reference,
                       Scenario::cooperative_push, Scenario::adversary}) {
        const ScenarioSpec spec = ScenarioSpec::defaults(s);
        const ResetResult a = reset(spec, 1234);
        const ResetResult b = reset(spec, 1234);
        CHECK(same_state(a.state, b.state));
        CHECK(same_observations(a.observations, b.observations));
        const ResetResult c = reset(spec, 1235);
        CHECK(!same_state(a.state, c.state));
    }
}

TEST_CASE("trajectories are bit-identical for identical seed and actions") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::adversary);
    Rng action_rng(99);
    std::vector<JointAction> actions;
    for (int t = 0; t < spec.t_max; ++t) {
        JointAction a;
        for (int i = 0; i < spec.n_agents; ++i) a.push_back(action_rng.uniform_int(5));
        actions.push_back(a);
    }
    WorldState s1 = reset(spec, 7).state;
    WorldState s2 = reset(spec, 7).state;
    for (int t = 0; t < spec.t_max; ++t) {
        const StepResult r1 = step(spec, s1, actions[t]);
        const StepResult r2 = step(spec, s2, actions[t]);
        CHECK(r1.reward == r2.reward);
        CHECK(same_state(r1.state, r2.state));
        CHECK(same_observations(r1.observations, r2.observations));
        s1 = r1.state;
        s2 = r2.state;
    }
}

TEST_CASE("speaker sees the goal, listener does not") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::speaker_listener);
    ResetResult rr = reset(spec, 5);

    // Speaker observation carries the goal one-hot.
    const ObsLayout speaker_layout = obs_layout(spec, 0);
    REQUIRE(speaker_layout.fields.size() == 1);
    CHECK(speaker_layout.fields[0].kind == ObsField::Kind::goal_one_hot);
    CHECK(rr.observations[0].values[rr.state.goal_landmark] == 1.0);

    // Toggling the goal leaves the listener observation bit-identical.
    WorldState toggled = rr.state;
    const auto base_obs = observe(spec, rr.state);
    for (int g = 0; g < spec.n_landmarks; ++g) {
        toggled.goal_landmark = g;
        const auto obs = observe(spec, toggled);
        CHECK(obs[1].values == base_obs[1].values);
        if (g != rr.state.goal_landmark) CHECK(!(obs[0].values == base_obs[0].values));
    }
}

TEST_CASE("reference agents observe the partner's target only") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::reference);
    const ResetResult rr = reset(spec, 21);
    const ObsLayout layout = obs_layout(spec, 0);
    const ObsField& goal_field = layout.fields.back();
    REQUIRE(goal_field.kind == ObsField::Kind::teammate_goal_one_hot);
    // Agent 0 sees agent 1's target and vice versa.
    CHECK(rr.observations[0].values[goal_field.offset + rr.state.agent_target[1]] == 1.0);
    CHECK(rr.observations[1].values[goal_field.offset + rr.state.agent_target[0]] == 1.0);
    CHECK(rr.state.agent_target[0] != rr.state.agent_target[1]);

    // Changing agent 0's own target does not change agent 0's observation.
    WorldState toggled = rr.state;
    toggled.agent_target[0] = (rr.state.agent_target[0] + 1) % spec.n_landmarks;
    CHECK(observe(spec, toggled)[0].values == rr.observations[0].values);
}

TEST_CASE("no-op from rest leaves the world still") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::reference);
    const ResetResult rr = reset(spec, 3);
    const JointAction noop{0, 0};
    const StepResult sr = step(spec, rr.state, noop);
    for (int i = 0; i < spec.n_agents; ++i) {
        CHECK(sr.state.agent_pos[i].x == rr.state.agent_pos[i].x);
        CHECK(sr.state.agent_pos[i].y == rr.state.agent_pos[i].y);
        CHECK(sr.state.agent_vel[i].x == 0.0);
        CHECK(sr.state.agent_vel[i].y == 0.0);
    }
}

TEST_CASE("thrust accelerates toward the damped terminal velocity") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::reference);
    WorldState s = reset(spec, 8).state;
    const double vmax = spec.force_mag / (spec.agent_mass * spec.damping) * spec.dt;
    double prev_x = s.agent_pos[0].x;
    double expected_v = 0.0;
    for (int t = 0; t < spec.t_max; ++t) {
        const StepResult sr = step(spec, s, {1, 0});  // agent 0: +x
        s = sr.state;
        CHECK(s.agent_pos[0].x > prev_x);
        prev_x = s.agent_pos[0].x;
        CHECK(s.agent_vel[0].x <= vmax + 1e-12);
        // Closed-form damped integrator: v' = (1-damping) v + F/m dt.
        expected_v = (1.0 - spec.damping) * expected_v +
                     spec.force_mag / spec.agent_mass * spec.dt;
        CHECK(s.agent_vel[0].x == doctest::Approx(expected_v).epsilon(1e-12));
    }
}

TEST_CASE("pushed object needs more than one agent") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::cooperative_push);
    WorldState base;
    base.agent_pos = {{-0.31, 0.0}, {-0.31, 0.12}, {5.0, 5.0}};
    base.agent_vel = {{}, {}, {}};
    base.landmark_pos = {{2.0, 0.0}};
    base.object_pos = {0.0, 0.0};
    base.object_vel = {};
    base.step_count = 0;

    SUBCASE("one agent pushing alone cannot move it") {
        WorldState s = base;
        for (int t = 0; t < spec.t_max; ++t)
            s = step(spec, s, {1, 0, 0}).state;  // only agent 0 pushes +x
        CHECK(std::abs(s.object_pos.x) < 0.02);
        CHECK(std::abs(s.object_pos.y) < 0.02);
    }

    SUBCASE("two agents pushing the same direction move it") {
        WorldState s = base;
        s.agent_pos[1] = {-0.31, 0.08};
        s.agent_pos[0] = {-0.31, -0.04};
        for (int t = 0; t < spec.t_max; ++t)
            s = step(spec, s, {1, 1, 0}).state;  // agents 0 and 1 push +x
        CHECK(s.object_pos.x > 0.1);
    }
}

TEST_CASE("reward semantics per scenario") {
    SUBCASE("listener exactly on the goal landmark scores zero") {
        const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::speaker_listener);
        WorldState s = reset(spec, 17).state;
        s.agent_pos[1] = s.landmark_pos[s.goal_landmark];
        // Keep everyone in bounds so the distance term is the whole reward.
        s.agent_pos[0] = {0.0, 0.0};
        CHECK(reward(spec, s) == 0.0);
    }

    SUBCASE("reference with both agents on their targets scores zero") {
        const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::reference);
        WorldState s = reset(spec, 17).state;
        s.agent_pos[0] = s.landmark_pos[s.agent_target[0]];
        s.agent_pos[1] = s.landmark_pos[s.agent_target[1]];
        CHECK(reward(spec, s) == 0.0);
    }

    SUBCASE("push reward is object-target distance plus time penalty") {
        const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::cooperative_push);
        WorldState s = reset(spec, 17).state;
        s.object_pos = s.landmark_pos[0];
        for (auto& p : s.agent_pos) p = {0.0, 0.0};
        CHECK(reward(spec, s) == doctest::Approx(-spec.time_penalty));
    }

    SUBCASE("adversary scenario rewards agents on target with the adversary far") {
        const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::adversary);
        WorldState s = reset(spec, 17).state;
        s.landmark_pos[0] = {0.5, 0.5};
        for (auto& p : s.agent_pos) p = {0.5, 0.5};
        s.adversary_pos = {-1.4, -1.4};
        CHECK(reward(spec, s) > 0.0);
        CHECK(reward(spec, s) == doctest::Approx(3.0 * spec.arrival_bonus));
    }

    SUBCASE("tagged agents are penalized") {
        const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::adversary);
        WorldState s = reset(spec, 17).state;
        s.landmark_pos[0] = {0.5, 0.5};
        for (auto& p : s.agent_pos) p = {0.5, 0.5};
        s.adversary_pos = {0.5, 0.5};  // on top of everyone
        CHECK(reward(spec, s) ==
              doctest::Approx(3.0 * spec.arrival_bonus - 3.0 * spec.tag_penalty));
    }

    SUBCASE("out-of-bounds drift is penalized quadratically") {
        const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::reference);
        WorldState s = reset(spec, 17).state;
        s.agent_pos[0] = s.landmark_pos[s.agent_target[0]];
        s.agent_pos[1] = s.landmark_pos[s.agent_target[1]];
        const double base = reward(spec, s);
        WorldState far = s;
        far.agent_pos[0] = {2.5, 0.0};
        const double d = dist2d(far.agent_pos[0], far.landmark_pos[far.agent_target[0]]);
        CHECK(reward(spec, far) == doctest::Approx(base - d - 1.0 * 1.0));
    }
}

TEST_CASE("scripted adversary pursues greedily") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::adversary);

    WorldState s = reset(spec, 2).state;
    s.adversary_pos = {0.0, 0.0};
    s.agent_pos = {{1.0, 0.0}, {3.0, 3.0}, {4.0, -4.0}};
    CHECK(scripted_adversary(spec, s) == 1);  // +x

    SUBCASE("equidistant agents break ties by lowest index") {
        s.agent_pos = {{-1.0, 0.0}, {1.0, 0.0}, {5.0, 5.0}};
        CHECK(scripted_adversary(spec, s) == 2);  // toward agent 0: -x
    }

    SUBCASE("pursuit closes distance monotonically after warm-up") {
        WorldState w = reset(spec, 4).state;
        w.adversary_pos = {0.0, 0.0};
        w.adversary_vel = {};
        w.agent_pos = {{5.0, 0.0}, {6.0, 2.0}, {7.0, -3.0}};
        for (auto& v : w.agent_vel) v = {};
        double prev = dist2d(w.adversary_pos, w.agent_pos[0]);
        for (int t = 0; t < 100; ++t) {
            if (w.step_count >= spec.t_max) w.step_count = 0;  // keep simulating
            w = step(spec, w, {0, 0, 0}).state;
            const double d = dist2d(w.adversary_pos, w.agent_pos[0]);
            if (t >= 5) CHECK(d <= prev + 1e-12);
            prev = d;
        }
    }
}

TEST_CASE("episodes end exactly at t_max and refuse further steps") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::reference);
    WorldState s = reset(spec, 6).state;
    for (int t = 0; t < spec.t_max; ++t) {
        const StepResult sr = step(spec, s, {0, 0});
        CHECK(sr.done == (t == spec.t_max - 1));
        s = sr.state;
    }
    CHECK_THROWS_AS(step(spec, s, {0, 0}), std::logic_error);
}

TEST_CASE("observation lengths are constant per agent across a run") {
    for (Scenario sc : {Scenario::speaker_listener, Scenario::reference,
                        Scenario::cooperative_push, Scenario::adversary}) {
        const ScenarioSpec spec = ScenarioSpec::defaults(sc);
        ResetResult rr = reset(spec, 9);
        std::vector<int> lens;
        for (int i = 0; i < spec.n_agents; ++i) {
            lens.push_back(rr.observations[i].values.size());
            CHECK(lens[i] == obs_dim(spec, i));
        }
        WorldState s = rr.state;
        Rng rng(31);
        for (int t = 0; t < spec.t_max; ++t) {
            JointAction a;
            for (int i = 0; i < spec.n_agents; ++i)
                a.push_back(rng.uniform_int(spec.num_actions(i)));
            const StepResult sr = step(spec, s, a);
            for (int i = 0; i < spec.n_agents; ++i)
                CHECK(sr.observations[i].values.size() == lens[i]);
            s = sr.state;
        }
    }
}

TEST_CASE("speaker symbol reaches the listener on the next observation") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::speaker_listener);
    const ResetResult rr = reset(spec, 12);
    const ObsLayout layout = obs_layout(spec, 1);
    const ObsField& comm = layout.fields.back();
    REQUIRE(comm.kind == ObsField::Kind::comm_one_hot);
    // No symbol yet: channel all zero.
    for (int k = 0; k < comm.size; ++k) CHECK(rr.observations[1].values[comm.offset + k] == 0.0);
    const StepResult sr = step(spec, rr.state, {2, 0});
    CHECK(sr.observations[1].values[comm.offset + 2] == 1.0);
}

TEST_CASE("invalid actions and specs are rejected") {
    const ScenarioSpec spec = ScenarioSpec::defaults(Scenario::speaker_listener);
    WorldState s = reset(spec, 1).state;
    CHECK_THROWS_AS(step(spec, s, {5, 0}), std::invalid_argument);  // speaker alphabet is 3
    CHECK_THROWS_AS(step(spec, s, {0}), std::invalid_argument);

    ScenarioSpec bad = spec;
    bad.t_max = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = spec;
    bad.dt = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("global state has the advertised dimension") {
    for (Scenario sc : {Scenario::speaker_listener, Scenario::reference,
                        Scenario::cooperative_push, Scenario::adversary}) {
        const ScenarioSpec spec = ScenarioSpec::defaults(sc);
        const ResetResult rr = reset(spec, 44);
        CHECK(global_state(spec, rr.state).size() == state_dim(spec));
    }
}
