#include "cgmarl/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgmarl {

namespace {

double dist(const Vec2& a, const Vec2& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Stable softplus(x)/margin penetration used by the MPE-style contact model.
double soft_penetration(double x, double margin) {
    if (x > 0.0) return x + margin * std::log1p(std::exp(-x / margin));
    return margin * std::log1p(std::exp(x / margin));
}

struct Contact {
    Vec2 on_a;  // force applied to entity a; entity b receives the negation
};

Contact contact_force(const ScenarioSpec& spec, const Vec2& pa, const Vec2& pb,
                      double ra, double rb) {
    const double d = dist(pa, pb);
    const double min_d = ra + rb;
    const double pen = soft_penetration(min_d - d, spec.contact_margin);
    double mag = spec.contact_stiffness * pen;
    if (mag > spec.contact_force_cap) mag = spec.contact_force_cap;
    if (d < 1e-12) return {{mag, 0.0}};  // coincident centers: push along +x
    const double nx = (pa.x - pb.x) / d;
    const double ny = (pa.y - pb.y) / d;
    return {{mag * nx, mag * ny}};
}

Vec2 action_force(const ScenarioSpec& spec, int action) {
    switch (action) {
        case 1: return {spec.force_mag, 0.0};
        case 2: return {-spec.force_mag, 0.0};
        case 3: return {0.0, spec.force_mag};
        case 4: return {0.0, -spec.force_mag};
        default: return {0.0, 0.0};
    }
}

void integrate(const ScenarioSpec& spec, Vec2& pos, Vec2& vel, const Vec2& force, double mass) {
    vel.x = vel.x * (1.0 - spec.damping) + force.x / mass * spec.dt;
    vel.y = vel.y * (1.0 - spec.damping) + force.y / mass * spec.dt;
    pos.x += vel.x * spec.dt;
    pos.y += vel.y * spec.dt;
}

bool agents_collide(const ScenarioSpec& spec) {
    return spec.scenario == Scenario::cooperative_push || spec.scenario == Scenario::adversary;
}

void put_one_hot(Vector& v, int offset, int size, int index) {
    for (int i = 0; i < size; ++i) v[offset + i] = (i == index) ? 1.0 : 0.0;
}

void put_vec2(Vector& v, int offset, const Vec2& p) {
    v[offset] = p.x;
    v[offset + 1] = p.y;
}

}  // namespace

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::speaker_listener: return "speaker_listener";
        case Scenario::reference: return "reference";
        case Scenario::cooperative_push: return "cooperative_push";
        case Scenario::adversary: return "adversary";
    }
    return "unknown";
}

std::optional<Scenario> scenario_from_string(const std::string& name) {
    if (name == "speaker_listener") return Scenario::speaker_listener;
    if (name == "reference") return Scenario::reference;
    if (name == "cooperative_push") return Scenario::cooperative_push;
    if (name == "adversary") return Scenario::adversary;
    return std::nullopt;
}

ScenarioSpec ScenarioSpec::defaults(Scenario s) {
    ScenarioSpec spec;
    spec.scenario = s;
    switch (s) {
        case Scenario::speaker_listener:
            spec.n_agents = 2;
            spec.n_landmarks = 3;
            break;
        case Scenario::reference:
            spec.n_agents = 2;
            spec.n_landmarks = 3;
            break;
        case Scenario::cooperative_push:
            spec.n_agents = 3;
            spec.n_landmarks = 1;
            break;
        case Scenario::adversary:
            spec.n_agents = 3;
            spec.n_landmarks = 1;
            break;
    }
    return spec;
}

void ScenarioSpec::validate() const {
    if (n_agents < 2) throw std::invalid_argument("ScenarioSpec: n_agents must be >= 2");
    if (t_max < 1) throw std::invalid_argument("ScenarioSpec: t_max must be >= 1");
    if (dt <= 0.0) throw std::invalid_argument("ScenarioSpec: dt must be positive");
    if (n_landmarks < 1) throw std::invalid_argument("ScenarioSpec: n_landmarks must be >= 1");
    if (agent_radius <= 0.0 || landmark_radius <= 0.0 || object_radius <= 0.0 ||
        adversary_radius <= 0.0)
        throw std::invalid_argument("ScenarioSpec: radii must be positive");
    if (agent_mass <= 0.0 || object_mass <= 0.0 || adversary_mass <= 0.0)
        throw std::invalid_argument("ScenarioSpec: masses must be positive");
    if (scenario == Scenario::speaker_listener && n_agents != 2)
        throw std::invalid_argument("speaker_listener: exactly 2 agents");
    if (scenario == Scenario::reference && n_agents != 2)
        throw std::invalid_argument("reference: exactly 2 agents");
    if (scenario == Scenario::reference && n_landmarks < n_agents)
        throw std::invalid_argument("reference: needs a distinct landmark per agent");
}

bool ScenarioSpec::agent_can_move(int agent_index) const {
    return !(scenario == Scenario::speaker_listener && agent_index == 0);
}

int ScenarioSpec::num_actions(int agent_index) const {
    if (scenario == Scenario::speaker_listener && agent_index == 0) return n_landmarks;
    return 5;
}

int ScenarioSpec::max_num_actions() const {
    int m = 0;
    for (int i = 0; i < n_agents; ++i) m = std::max(m, num_actions(i));
    return m;
}

std::string ScenarioSpec::role(int agent_index) const {
    switch (scenario) {
        case Scenario::speaker_listener: return agent_index == 0 ? "speaker" : "listener";
        case Scenario::reference: return "navigator";
        case Scenario::cooperative_push: return "pusher";
        case Scenario::adversary: return "evader";
    }
    return "agent";
}

ObsLayout obs_layout(const ScenarioSpec& spec, int agent_index) {
    ObsLayout layout;
    int off = 0;
    auto push = [&](ObsField::Kind kind, const std::string& label, int size) {
        layout.fields.push_back({kind, label, off, size});
        off += size;
    };
    switch (spec.scenario) {
        case Scenario::speaker_listener:
            if (agent_index == 0) {
                push(ObsField::Kind::goal_one_hot, "goal", spec.n_landmarks);
            } else {
                push(ObsField::Kind::own_velocity, "self", 2);
                for (int k = 0; k < spec.n_landmarks; ++k)
                    push(ObsField::Kind::relative_position, "landmark " + std::to_string(k), 2);
                push(ObsField::Kind::comm_one_hot, "signal", spec.n_landmarks);
            }
            break;
        case Scenario::reference:
            push(ObsField::Kind::own_velocity, "self", 2);
            for (int k = 0; k < spec.n_landmarks; ++k)
                push(ObsField::Kind::relative_position, "landmark " + std::to_string(k), 2);
            for (int j = 0; j < spec.n_agents; ++j)
                if (j != agent_index)
                    push(ObsField::Kind::relative_position, "teammate " + std::to_string(j), 2);
            push(ObsField::Kind::teammate_goal_one_hot, "teammate goal", spec.n_landmarks);
            break;
        case Scenario::cooperative_push:
            push(ObsField::Kind::own_velocity, "self", 2);
            push(ObsField::Kind::relative_position, "the target", 2);
            push(ObsField::Kind::relative_position, "the object", 2);
            for (int j = 0; j < spec.n_agents; ++j)
                if (j != agent_index)
                    push(ObsField::Kind::relative_position, "teammate " + std::to_string(j), 2);
            break;
        case Scenario::adversary:
            push(ObsField::Kind::own_velocity, "self", 2);
            push(ObsField::Kind::relative_position, "the target", 2);
            for (int j = 0; j < spec.n_agents; ++j)
                if (j != agent_index)
                    push(ObsField::Kind::relative_position, "teammate " + std::to_string(j), 2);
            push(ObsField::Kind::relative_position, "the adversary", 2);
            break;
    }
    layout.total = off;
    return layout;
}

int obs_dim(const ScenarioSpec& spec, int agent_index) {
    return obs_layout(spec, agent_index).total;
}

int max_obs_dim(const ScenarioSpec& spec) {
    int m = 0;
    for (int i = 0; i < spec.n_agents; ++i) m = std::max(m, obs_dim(spec, i));
    return m;
}

std::vector<AgentObservation> observe(const ScenarioSpec& spec, const WorldState& state) {
    std::vector<AgentObservation> out(static_cast<size_t>(spec.n_agents));
    for (int i = 0; i < spec.n_agents; ++i) {
        const ObsLayout layout = obs_layout(spec, i);
        Vector v(layout.total);
        const Vec2 self = state.agent_pos[static_cast<size_t>(i)];
        for (const ObsField& f : layout.fields) {
            switch (f.kind) {
                case ObsField::Kind::own_velocity:
                    put_vec2(v, f.offset, state.agent_vel[static_cast<size_t>(i)]);
                    break;
                case ObsField::Kind::relative_position: {
                    Vec2 target{};
                    if (f.label.rfind("landmark ", 0) == 0) {
                        const int k = std::stoi(f.label.substr(9));
                        target = state.landmark_pos[static_cast<size_t>(k)];
                    } else if (f.label.rfind("teammate ", 0) == 0) {
                        const int j = std::stoi(f.label.substr(9));
                        target = state.agent_pos[static_cast<size_t>(j)];
                    } else if (f.label == "the target") {
                        target = state.landmark_pos[0];
                    } else if (f.label == "the object") {
                        target = state.object_pos;
                    } else if (f.label == "the adversary") {
                        target = state.adversary_pos;
                    }
                    v[f.offset] = target.x - self.x;
                    v[f.offset + 1] = target.y - self.y;
                    break;
                }
                case ObsField::Kind::goal_one_hot:
                    put_one_hot(v, f.offset, f.size, state.goal_landmark);
                    break;
                case ObsField::Kind::teammate_goal_one_hot: {
                    // Each agent observes the other agent's target, never its own.
                    const int other = (i == 0) ? 1 : 0;
                    put_one_hot(v, f.offset, f.size, state.agent_target[static_cast<size_t>(other)]);
                    break;
                }
                case ObsField::Kind::comm_one_hot:
                    put_one_hot(v, f.offset, f.size, state.comm_symbol);
                    break;
            }
        }
        out[static_cast<size_t>(i)] = AgentObservation{std::move(v), spec.role(i)};
    }
    return out;
}

ResetResult reset(const ScenarioSpec& spec, uint64_t rng_seed) {
    spec.validate();
    Rng rng(rng_seed);
    WorldState s;
    s.landmark_pos.resize(static_cast<size_t>(spec.n_landmarks));
    for (auto& p : s.landmark_pos) {
        p.x = rng.uniform(-1.0, 1.0);
        p.y = rng.uniform(-1.0, 1.0);
    }
    s.agent_pos.resize(static_cast<size_t>(spec.n_agents));
    s.agent_vel.assign(static_cast<size_t>(spec.n_agents), Vec2{});
    for (auto& p : s.agent_pos) {
        p.x = rng.uniform(-1.0, 1.0);
        p.y = rng.uniform(-1.0, 1.0);
    }
    switch (spec.scenario) {
        case Scenario::speaker_listener:
            s.goal_landmark = rng.uniform_int(spec.n_landmarks);
            s.comm_symbol = -1;
            break;
        case Scenario::reference: {
            s.agent_target.resize(static_cast<size_t>(spec.n_agents));
            // Distinct landmarks per agent.
            s.agent_target[0] = rng.uniform_int(spec.n_landmarks);
            int second = rng.uniform_int(spec.n_landmarks - 1);
            if (second >= s.agent_target[0]) second += 1;
            s.agent_target[1] = second;
            break;
        }
        case Scenario::cooperative_push:
            s.object_pos.x = rng.uniform(-0.5, 0.5);
            s.object_pos.y = rng.uniform(-0.5, 0.5);
            s.object_vel = {};
            break;
        case Scenario::adversary:
            s.adversary_pos.x = rng.uniform(-1.0, 1.0);
            s.adversary_pos.y = rng.uniform(-1.0, 1.0);
            s.adversary_vel = {};
            break;
    }
    s.step_count = 0;
    return {s, observe(spec, s)};
}

int scripted_adversary(const ScenarioSpec& spec, const WorldState& state) {
    if (spec.scenario != Scenario::adversary)
        throw std::logic_error("scripted_adversary: not an adversary scenario");
    int nearest = 0;
    double best = dist(state.adversary_pos, state.agent_pos[0]);
    for (int i = 1; i < spec.n_agents; ++i) {
        const double d = dist(state.adversary_pos, state.agent_pos[static_cast<size_t>(i)]);
        if (d < best) {
            best = d;
            nearest = i;
        }
    }
    const double dx = state.agent_pos[static_cast<size_t>(nearest)].x - state.adversary_pos.x;
    const double dy = state.agent_pos[static_cast<size_t>(nearest)].y - state.adversary_pos.y;
    if (dx == 0.0 && dy == 0.0) return 0;
    if (std::abs(dx) >= std::abs(dy)) return dx > 0.0 ? 1 : 2;
    return dy > 0.0 ? 3 : 4;
}

double reward(const ScenarioSpec& spec, const WorldState& state) {
    double r = 0.0;
    switch (spec.scenario) {
        case Scenario::speaker_listener:
            r = -dist(state.agent_pos[1], state.landmark_pos[static_cast<size_t>(state.goal_landmark)]);
            break;
        case Scenario::reference:
            for (int i = 0; i < spec.n_agents; ++i)
                r -= dist(state.agent_pos[static_cast<size_t>(i)],
                          state.landmark_pos[static_cast<size_t>(state.agent_target[static_cast<size_t>(i)])]);
            break;
        case Scenario::cooperative_push:
            r = -dist(state.object_pos, state.landmark_pos[0]) - spec.time_penalty;
            break;
        case Scenario::adversary: {
            const double arrive_d = spec.agent_radius + spec.landmark_radius;
            const double tag_d = spec.agent_radius + spec.adversary_radius;
            double mean_d = 0.0;
            for (int i = 0; i < spec.n_agents; ++i) {
                const Vec2& p = state.agent_pos[static_cast<size_t>(i)];
                const double d = dist(p, state.landmark_pos[0]);
                mean_d += d;
                if (d < arrive_d) r += spec.arrival_bonus;
                if (dist(p, state.adversary_pos) < tag_d) r -= spec.tag_penalty;
            }
            r -= mean_d / spec.n_agents;
            break;
        }
    }
    // Quadratic out-of-bounds penalty keeps agents near the arena.
    for (int i = 0; i < spec.n_agents; ++i) {
        const Vec2& p = state.agent_pos[static_cast<size_t>(i)];
        for (double c : {p.x, p.y}) {
            const double over = std::abs(c) - spec.oob_limit;
            if (over > 0.0) r -= spec.oob_coeff * over * over;
        }
    }
    return r;
}

StepResult step(const ScenarioSpec& spec, const WorldState& state, const JointAction& actions) {
    if (state.step_count >= spec.t_max)
        throw std::logic_error("step: episode already finished");
    if (static_cast<int>(actions.size()) != spec.n_agents)
        throw std::invalid_argument("step: need one action per agent");
    for (int i = 0; i < spec.n_agents; ++i)
        if (actions[static_cast<size_t>(i)] < 0 ||
            actions[static_cast<size_t>(i)] >= spec.num_actions(i))
            throw std::invalid_argument("step: action out of range for agent " + std::to_string(i));

    WorldState next = state;
    const size_t n = static_cast<size_t>(spec.n_agents);

    std::vector<Vec2> force(n, Vec2{});
    for (int i = 0; i < spec.n_agents; ++i)
        if (spec.agent_can_move(i)) force[static_cast<size_t>(i)] = action_force(spec, actions[static_cast<size_t>(i)]);

    Vec2 object_force{};
    Vec2 adversary_force{};
    int adversary_action = -1;
    if (spec.scenario == Scenario::adversary) {
        adversary_action = scripted_adversary(spec, state);
        adversary_force = action_force(spec, adversary_action);
    }

    if (agents_collide(spec)) {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) {
                const Contact c = contact_force(spec, state.agent_pos[i], state.agent_pos[j],
                                                spec.agent_radius, spec.agent_radius);
                force[i].x += c.on_a.x;
                force[i].y += c.on_a.y;
                force[j].x -= c.on_a.x;
                force[j].y -= c.on_a.y;
            }
        }
    }
    if (spec.scenario == Scenario::cooperative_push) {
        for (size_t i = 0; i < n; ++i) {
            const Contact c = contact_force(spec, state.agent_pos[i], state.object_pos,
                                            spec.agent_radius, spec.object_radius);
            force[i].x += c.on_a.x;
            force[i].y += c.on_a.y;
            object_force.x -= c.on_a.x;
            object_force.y -= c.on_a.y;
        }
    }
    if (spec.scenario == Scenario::adversary) {
        for (size_t i = 0; i < n; ++i) {
            const Contact c = contact_force(spec, state.agent_pos[i], state.adversary_pos,
                                            spec.agent_radius, spec.adversary_radius);
            force[i].x += c.on_a.x;
            force[i].y += c.on_a.y;
            adversary_force.x -= c.on_a.x;
            adversary_force.y -= c.on_a.y;
        }
    }

    for (size_t i = 0; i < n; ++i) {
        if (!spec.agent_can_move(static_cast<int>(i))) continue;
        integrate(spec, next.agent_pos[i], next.agent_vel[i], force[i], spec.agent_mass);
    }
    if (spec.scenario == Scenario::cooperative_push) {
        const double mag = std::hypot(object_force.x, object_force.y);
        if (mag >= spec.push_force_threshold) {
            integrate(spec, next.object_pos, next.object_vel, object_force, spec.object_mass);
        } else {
            // Below static friction the object holds still.
            next.object_vel = {};
        }
    }
    if (spec.scenario == Scenario::adversary)
        integrate(spec, next.adversary_pos, next.adversary_vel, adversary_force, spec.adversary_mass);

    if (spec.scenario == Scenario::speaker_listener)
        next.comm_symbol = actions[0];

    next.step_count = state.step_count + 1;

    StepResult res;
    res.reward = reward(spec, next);
    res.done = next.step_count >= spec.t_max;
    res.observations = observe(spec, next);
    res.state = std::move(next);
    return res;
}

int state_dim(const ScenarioSpec& spec) {
    int d = spec.n_agents * 4 + spec.n_landmarks * 2;
    switch (spec.scenario) {
        case Scenario::speaker_listener: d += 2 * spec.n_landmarks; break;  // goal + comm
        case Scenario::reference: d += spec.n_agents * spec.n_landmarks; break;
        case Scenario::cooperative_push: d += 4; break;
        case Scenario::adversary: d += 4; break;
    }
    return d;
}

Vector global_state(const ScenarioSpec& spec, const WorldState& state) {
    Vector v(state_dim(spec));
    int off = 0;
    for (int i = 0; i < spec.n_agents; ++i) {
        put_vec2(v, off, state.agent_pos[static_cast<size_t>(i)]);
        put_vec2(v, off + 2, state.agent_vel[static_cast<size_t>(i)]);
        off += 4;
    }
    for (int k = 0; k < spec.n_landmarks; ++k) {
        put_vec2(v, off, state.landmark_pos[static_cast<size_t>(k)]);
        off += 2;
    }
    switch (spec.scenario) {
        case Scenario::speaker_listener:
            put_one_hot(v, off, spec.n_landmarks, state.goal_landmark);
            off += spec.n_landmarks;
            put_one_hot(v, off, spec.n_landmarks, state.comm_symbol);
            off += spec.n_landmarks;
            break;
        case Scenario::reference:
            for (int i = 0; i < spec.n_agents; ++i) {
                put_one_hot(v, off, spec.n_landmarks, state.agent_target[static_cast<size_t>(i)]);
                off += spec.n_landmarks;
            }
            break;
        case Scenario::cooperative_push:
            put_vec2(v, off, state.object_pos);
            put_vec2(v, off + 2, state.object_vel);
            off += 4;
            break;
        case Scenario::adversary:
            put_vec2(v, off, state.adversary_pos);
            put_vec2(v, off + 2, state.adversary_vel);
            off += 4;
            break;
    }
    return v;
}

}  // namespace cgmarl
