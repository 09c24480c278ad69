#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cgmarl/describe.hpp"
#include "cgmarl/env.hpp"
#include "cgmarl/gnn.hpp"
#include "cgmarl/numeric.hpp"
#include "cgmarl/prior.hpp"

namespace cgmarl {

enum class Method { iql, vdn, qmix, ours };

std::string to_string(Method m);
std::optional<Method> method_from_string(const std::string& name);

enum class GraphPriorMode { none, uniform, mock_heuristic, llm };

std::string to_string(GraphPriorMode m);
std::optional<GraphPriorMode> prior_mode_from_string(const std::string& name);

struct TrainConfig {
    long total_timesteps = 2'000'000;
    int buffer_capacity = 10'000;  // episodes
    int batch_size = 32;           // episodes
    double learning_rate = 5e-4;
    double gamma = 0.99;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    long epsilon_anneal_steps = 50'000;
    int target_update_interval = 200;  // learner updates
    int updates_per_episode = 1;
    long eval_interval = 5'000;  // env steps
    int eval_episodes = 10;
    int hidden_dim = 64;  // GNN d
    int gnn_layers = 2;   // GNN L
    int mixing_dim = 32;  // QMIX hypernetwork width
    int qnet_hidden = 64;
    GraphPriorMode prior_mode = GraphPriorMode::none;

    void validate() const;
};

// One stored step, materialized from an episode record. Observations are
// zero-padded to the scenario's max per-agent length. `terminal` marks an
// absorbing end and gates bootstrapping; time-limit truncation leaves it
// false so the target still bootstraps.
struct Transition {
    Matrix obs;       // n x obs_dim
    std::vector<int> actions;
    double reward = 0.0;
    Matrix next_obs;  // n x obs_dim
    bool terminal = false;
    Vector state;
    Vector next_state;
    long episode_id = 0;
};

struct EpisodeRecord {
    Matrix obs_seq;    // (T+1)*n x obs_dim, timestep-major
    Matrix state_seq;  // (T+1) x state_dim
    std::vector<std::vector<int>> actions;  // T x n
    std::vector<double> rewards;            // T
    std::vector<uint8_t> terminal;          // T
    GraphPrior prior;
    long episode_id = 0;
    int n_agents = 0;

    int length() const { return static_cast<int>(rewards.size()); }
};

// Ring buffer of whole episodes.
class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity);

    void add(EpisodeRecord ep);
    int size() const { return static_cast<int>(episodes_.size()); }
    int capacity() const { return capacity_; }
    // Insertion order, oldest first.
    const EpisodeRecord& episode(int idx) const;
    Transition transition(int episode_idx, int t) const;
    // Without replacement when size allows.
    std::vector<int> sample(int batch, Rng& rng) const;

private:
    int capacity_;
    int head_ = 0;
    std::vector<EpisodeRecord> episodes_;
};

struct QNetParams {
    Matrix w1, b1, w2, b2;
};

// QMIX mixing network: state-conditioned hypernetworks produce abs-valued
// mixing weights; the final bias comes from a two-layer state net.
struct MixerParams {
    Matrix hw1_w, hw1_b;  // state -> n*h_mix first-layer weights
    Matrix hb1_w, hb1_b;  // state -> h_mix first-layer bias
    Matrix hw2_w, hw2_b;  // state -> h_mix second-layer weights
    Matrix hb2_v1, hb2_c1, hb2_v2, hb2_c2;  // state -> scalar bias (2 layers)
};

// Q_tot for a batch of rows: q is T x n chosen utilities, s is T x state_dim.
Vector mixer_forward(const MixerParams& p, const Matrix& q, const Matrix& s, int h_mix);

struct LearnerParams {
    bool has_gnn = false;
    bool has_mixer = false;
    GnnParams gnn;
    QNetParams q;
    MixerParams mix;

    std::vector<std::pair<std::string, Matrix*>> entries();
    std::vector<std::pair<std::string, const Matrix*>> entries() const;
};

struct TrainingLog {
    struct Row {
        long step = 0;
        long episode = 0;
        double mean_eval_return = 0.0;
        double loss = 0.0;
        double epsilon = 0.0;
        double fallback_rate = 0.0;
    };
    std::vector<Row> rows;

    void write_csv(const std::string& path) const;
    static std::string csv_header();
};

struct BatchGrads {
    double loss = 0.0;
    std::vector<Matrix> grads;  // aligned with LearnerParams::entries()
};

// One training run: owns the environment loop, replay, online/target
// parameters and the per-episode prior pipeline. Deterministic given
// (spec, method, config, seed) and a deterministic provider.
class Trainer {
public:
    Trainer(const ScenarioSpec& spec, Method method, const TrainConfig& cfg,
            const ProviderConfig& provider_cfg, uint64_t seed,
            const TemplateSet* templates = nullptr);

    // epsilon-greedy per agent over valid actions; ties to the lowest index.
    JointAction select_actions(const Matrix& obs, const Matrix& adjacency, double epsilon,
                               Rng& rng) const;
    // Same policy on precomputed per-agent Q values (n x max_actions).
    JointAction select_from_q(const Matrix& q, double epsilon, Rng& rng) const;
    // Per-agent Q values (n x max_actions) from the online network.
    Matrix q_values(const Matrix& obs, const Matrix& adjacency) const;
    // Joint value of chosen utilities. QMIX mixing for qmix/ours, plain sum
    // for vdn; iql has no joint value.
    double q_tot(const Vector& chosen_qs, const Vector& state) const;

    // Loss and analytic gradients on the given episodes, no update applied.
    BatchGrads compute_batch(const std::vector<int>& episode_indices) const;
    // Samples a batch and applies one Adam step. Empty when the buffer has
    // fewer than batch_size episodes.
    std::optional<double> td_update();
    void sync_targets();

    TrainingLog run_training(const std::string& log_csv_path = "");
    double greedy_eval(int episodes, uint64_t stream);

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    LearnerParams& params() { return online_; }
    const LearnerParams& params() const { return online_; }
    LearnerParams& target_params() { return target_; }
    ReplayBuffer& buffer() { return buffer_; }
    const ReplayBuffer& buffer() const { return buffer_; }
    const ScenarioSpec& spec() const { return spec_; }
    Method method() const { return method_; }
    const TrainConfig& config() const { return cfg_; }
    long env_steps() const { return env_steps_; }
    long episodes_run() const { return episodes_; }
    long updates_run() const { return updates_; }
    long provider_network_requests() const;
    double epsilon_at(long step) const;

    int n_agents() const { return n_; }
    int padded_obs_dim() const { return obs_dim_; }

private:
    struct Rollout {
        EpisodeRecord record;
        double return_sum = 0.0;
        bool fallback = false;
    };
    Rollout rollout_episode(uint64_t reset_seed, bool greedy);
    GraphPrior fetch_prior(const std::vector<AgentObservation>& obs);
    Matrix pad_observations(const std::vector<AgentObservation>& obs) const;
    void init_params(LearnerParams& p, Rng& rng) const;

    ScenarioSpec spec_;
    Method method_;
    TrainConfig cfg_;
    ProviderConfig provider_cfg_;
    const TemplateSet* templates_;
    uint64_t seed_;

    int n_ = 0;
    int obs_dim_ = 0;
    int state_dim_ = 0;
    int max_actions_ = 0;
    int feat_dim_ = 0;

    LearnerParams online_;
    LearnerParams target_;
    std::vector<AdamState> adam_;
    ReplayBuffer buffer_;
    std::unique_ptr<ProviderClient> provider_;

    Rng explore_rng_;
    Rng sample_rng_;
    Rng reset_rng_;

    long env_steps_ = 0;
    long episodes_ = 0;
    long updates_ = 0;
    long fallback_episodes_ = 0;
};

}  // namespace cgmarl
