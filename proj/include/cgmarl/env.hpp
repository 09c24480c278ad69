#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cgmarl/numeric.hpp"

namespace cgmarl {

enum class Scenario { speaker_listener, reference, cooperative_push, adversary };

std::string to_string(Scenario s);
std::optional<Scenario> scenario_from_string(const std::string& name);

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// A cooperative particle-world scenario: team size, landmark count, episode
// length and the physics constants of the 2D point-mass integrator.
struct ScenarioSpec {
    Scenario scenario = Scenario::speaker_listener;
    int n_agents = 2;     // cooperative agents only; the adversary is extra
    int n_landmarks = 3;
    int t_max = 25;

    double dt = 0.1;
    double damping = 0.25;
    double contact_stiffness = 100.0;
    double contact_margin = 1e-3;
    // Per-contact forces saturate here; keeps a single pusher strictly below
    // the object's static-friction threshold.
    double contact_force_cap = 1.25;
    double agent_radius = 0.05;
    double landmark_radius = 0.08;
    double object_radius = 0.25;
    double adversary_radius = 0.05;
    double agent_mass = 1.0;
    double object_mass = 2.0;
    double adversary_mass = 1.0;
    double force_mag = 1.0;
    double push_force_threshold = 1.5;  // static friction on the pushed object
    double time_penalty = 0.1;          // cooperative_push per-step cost
    double arrival_bonus = 10.0;        // adversary: per agent on target per step
    double tag_penalty = 5.0;           // adversary: per tagged agent per step
    double oob_limit = 1.5;             // quadratic penalty beyond |coord| > limit
    double oob_coeff = 1.0;

    static ScenarioSpec defaults(Scenario s);
    void validate() const;

    bool agent_can_move(int agent_index) const;
    // Movement agents pick from {no-op, +x, -x, +y, -y}; the speaker picks a
    // symbol from an alphabet of size n_landmarks.
    int num_actions(int agent_index) const;
    int max_num_actions() const;
    std::string role(int agent_index) const;
};

struct WorldState {
    std::vector<Vec2> agent_pos;
    std::vector<Vec2> agent_vel;
    std::vector<Vec2> landmark_pos;
    int goal_landmark = -1;          // speaker_listener
    std::vector<int> agent_target;   // reference: landmark index per agent
    Vec2 object_pos{};               // cooperative_push
    Vec2 object_vel{};
    Vec2 adversary_pos{};            // adversary
    Vec2 adversary_vel{};
    int comm_symbol = -1;            // speaker_listener: last emitted symbol
    int step_count = 0;
};

struct AgentObservation {
    Vector values;
    std::string role;
};

// Observation vectors are flat; the layout describes what each slice means so
// downstream text generation can stay data-driven.
struct ObsField {
    enum class Kind { own_velocity, relative_position, goal_one_hot, teammate_goal_one_hot, comm_one_hot };
    Kind kind;
    std::string label;
    int offset = 0;
    int size = 0;
};

struct ObsLayout {
    std::vector<ObsField> fields;
    int total = 0;
};

ObsLayout obs_layout(const ScenarioSpec& spec, int agent_index);
int obs_dim(const ScenarioSpec& spec, int agent_index);
int max_obs_dim(const ScenarioSpec& spec);

using JointAction = std::vector<int>;

struct StepResult {
    std::vector<AgentObservation> observations;
    double reward = 0.0;
    bool done = false;
    WorldState state;
};

struct ResetResult {
    WorldState state;
    std::vector<AgentObservation> observations;
};

// Entities placed by seeded sampling within [-1,1]^2; goal/target assignments
// sampled; step counter zero.
ResetResult reset(const ScenarioSpec& spec, uint64_t rng_seed);

std::vector<AgentObservation> observe(const ScenarioSpec& spec, const WorldState& state);

// Semi-implicit Euler step with soft contact penalties. Throws
// std::logic_error when called on a finished state.
StepResult step(const ScenarioSpec& spec, const WorldState& state, const JointAction& actions);

// Shared team reward of the current state.
double reward(const ScenarioSpec& spec, const WorldState& state);

// Greedy pursuit of the nearest cooperative agent; ties broken by lowest
// agent index, axis ties resolved toward x.
int scripted_adversary(const ScenarioSpec& spec, const WorldState& state);

// Concatenated entity positions/velocities plus assignment one-hots; the
// centralized mixing input.
Vector global_state(const ScenarioSpec& spec, const WorldState& state);
int state_dim(const ScenarioSpec& spec);

}  // namespace cgmarl
