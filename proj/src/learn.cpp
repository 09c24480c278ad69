#include "cgmarl/learn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cgmarl {

namespace {

void add_row_bias(Matrix& m, const Matrix& b) {
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) m.at(r, c) += b.at(c, 0);
}

Matrix column_sums(const Matrix& m) {
    Matrix out(m.cols, 1, 0.0);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) out.at(c, 0) += m.at(r, c);
    return out;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

struct QNetTrace {
    Matrix x;
    Matrix z1;
    Matrix a1;
};

Matrix qnet_forward(const QNetParams& p, const Matrix& x, QNetTrace* trace) {
    Matrix z1 = matmul_nt(x, p.w1);
    add_row_bias(z1, p.b1);
    Matrix a1 = relu(z1);
    Matrix out = matmul_nt(a1, p.w2);
    add_row_bias(out, p.b2);
    if (trace) {
        trace->x = x;
        trace->z1 = std::move(z1);
        trace->a1 = std::move(a1);
    }
    return out;
}

// Returns gradient w.r.t. the input rows.
Matrix qnet_backward(const QNetParams& p, const QNetTrace& t, const Matrix& d_out,
                     QNetParams& grads) {
    add_inplace(grads.w2, matmul_tn(d_out, t.a1));
    add_inplace(grads.b2, column_sums(d_out));
    const Matrix d_a1 = matmul(d_out, p.w2);
    const Matrix d_z1 = relu_backward(t.z1, d_a1);
    add_inplace(grads.w1, matmul_tn(d_z1, t.x));
    add_inplace(grads.b1, column_sums(d_z1));
    return matmul(d_z1, p.w1);
}

struct MixerTrace {
    Matrix q;       // T x n
    Matrix s;       // T x state_dim
    Matrix w1v;     // T x n*h
    Matrix h_pre;   // T x h
    Matrix w2v;     // T x h
    Matrix v1_pre;  // T x h
};

Vector mixer_forward_impl(const MixerParams& p, const Matrix& q, const Matrix& s, int h_mix,
                          MixerTrace* trace) {
    const int t_rows = q.rows;
    const int n = q.cols;
    Matrix w1v = matmul_nt(s, p.hw1_w);
    add_row_bias(w1v, p.hw1_b);
    Matrix b1 = matmul_nt(s, p.hb1_w);
    add_row_bias(b1, p.hb1_b);
    Matrix h_pre(t_rows, h_mix, 0.0);
    for (int t = 0; t < t_rows; ++t)
        for (int j = 0; j < h_mix; ++j) {
            double acc = b1.at(t, j);
            for (int i = 0; i < n; ++i) acc += q.at(t, i) * std::abs(w1v.at(t, i * h_mix + j));
            h_pre.at(t, j) = acc;
        }
    Matrix w2v = matmul_nt(s, p.hw2_w);
    add_row_bias(w2v, p.hw2_b);
    Matrix v1_pre = matmul_nt(s, p.hb2_v1);
    add_row_bias(v1_pre, p.hb2_c1);
    const Matrix v1 = relu(v1_pre);
    Vector out(t_rows);
    for (int t = 0; t < t_rows; ++t) {
        double acc = p.hb2_c2.at(0, 0);
        for (int j = 0; j < h_mix; ++j) {
            acc += std::abs(w2v.at(t, j)) * elu(h_pre.at(t, j));
            acc += p.hb2_v2.at(0, j) * v1.at(t, j);
        }
        out[t] = acc;
    }
    if (trace) {
        trace->q = q;
        trace->s = s;
        trace->w1v = std::move(w1v);
        trace->h_pre = std::move(h_pre);
        trace->w2v = std::move(w2v);
        trace->v1_pre = std::move(v1_pre);
    }
    return out;
}

// Accumulates parameter grads and returns d loss / d q (T x n).
Matrix mixer_backward(const MixerParams& p, const MixerTrace& t, const Vector& d_qtot,
                      int h_mix, MixerParams& grads) {
    const int t_rows = t.q.rows;
    const int n = t.q.cols;

    Matrix d_w2v(t_rows, h_mix, 0.0);
    Matrix d_hpre(t_rows, h_mix, 0.0);
    Matrix d_v1pre(t_rows, h_mix, 0.0);
    for (int r = 0; r < t_rows; ++r) {
        const double dq = d_qtot[r];
        grads.hb2_c2.at(0, 0) += dq;
        for (int j = 0; j < h_mix; ++j) {
            const double hval = elu(t.h_pre.at(r, j));
            d_w2v.at(r, j) = dq * hval * sign(t.w2v.at(r, j));
            d_hpre.at(r, j) = dq * std::abs(t.w2v.at(r, j)) * elu_grad(t.h_pre.at(r, j));
            const double v1 = t.v1_pre.at(r, j) > 0.0 ? t.v1_pre.at(r, j) : 0.0;
            grads.hb2_v2.at(0, j) += dq * v1;
            d_v1pre.at(r, j) = t.v1_pre.at(r, j) > 0.0 ? dq * p.hb2_v2.at(0, j) : 0.0;
        }
    }
    add_inplace(grads.hw2_w, matmul_tn(d_w2v, t.s));
    add_inplace(grads.hw2_b, column_sums(d_w2v));
    add_inplace(grads.hb2_v1, matmul_tn(d_v1pre, t.s));
    add_inplace(grads.hb2_c1, column_sums(d_v1pre));
    add_inplace(grads.hb1_w, matmul_tn(d_hpre, t.s));
    add_inplace(grads.hb1_b, column_sums(d_hpre));

    Matrix d_q(t_rows, n, 0.0);
    Matrix d_w1v(t_rows, n * h_mix, 0.0);
    for (int r = 0; r < t_rows; ++r)
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < h_mix; ++j) {
                const double w1 = t.w1v.at(r, i * h_mix + j);
                acc += std::abs(w1) * d_hpre.at(r, j);
                d_w1v.at(r, i * h_mix + j) = t.q.at(r, i) * d_hpre.at(r, j) * sign(w1);
            }
            d_q.at(r, i) = acc;
        }
    add_inplace(grads.hw1_w, matmul_tn(d_w1v, t.s));
    add_inplace(grads.hw1_b, column_sums(d_w1v));
    return d_q;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
    const uint32_t len = read_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

constexpr uint32_t kCheckpointMagic = 0x43474D31;  // "CGM1"

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::iql: return "iql";
        case Method::vdn: return "vdn";
        case Method::qmix: return "qmix";
        case Method::ours: return "ours";
    }
    return "unknown";
}

std::optional<Method> method_from_string(const std::string& name) {
    if (name == "iql") return Method::iql;
    if (name == "vdn") return Method::vdn;
    if (name == "qmix") return Method::qmix;
    if (name == "ours") return Method::ours;
    return std::nullopt;
}

std::string to_string(GraphPriorMode m) {
    switch (m) {
        case GraphPriorMode::none: return "none";
        case GraphPriorMode::uniform: return "uniform";
        case GraphPriorMode::mock_heuristic: return "mock_heuristic";
        case GraphPriorMode::llm: return "llm";
    }
    return "unknown";
}

std::optional<GraphPriorMode> prior_mode_from_string(const std::string& name) {
    if (name == "none") return GraphPriorMode::none;
    if (name == "uniform") return GraphPriorMode::uniform;
    if (name == "mock_heuristic") return GraphPriorMode::mock_heuristic;
    if (name == "llm") return GraphPriorMode::llm;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (total_timesteps < 1) throw std::invalid_argument("train: total_timesteps must be >= 1");
    if (buffer_capacity < 1) throw std::invalid_argument("train: buffer_capacity must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be > 0");
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("train: gamma must be in [0,1]");
    if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 || epsilon_end > 1.0)
        throw std::invalid_argument("train: epsilon must be in [0,1]");
    if (epsilon_anneal_steps < 1)
        throw std::invalid_argument("train: epsilon_anneal_steps must be >= 1");
    if (target_update_interval < 1)
        throw std::invalid_argument("train: target_update_interval must be >= 1");
    if (updates_per_episode < 1)
        throw std::invalid_argument("train: updates_per_episode must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("train: eval_interval must be >= 1");
    if (eval_episodes < 1) throw std::invalid_argument("train: eval_episodes must be >= 1");
    if (hidden_dim < 1 || gnn_layers < 1 || mixing_dim < 1 || qnet_hidden < 1)
        throw std::invalid_argument("train: network sizes must be >= 1");
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::add(EpisodeRecord ep) {
    if (static_cast<int>(episodes_.size()) < capacity_) {
        episodes_.push_back(std::move(ep));
    } else {
        episodes_[static_cast<size_t>(head_)] = std::move(ep);
        head_ = (head_ + 1) % capacity_;
    }
}

const EpisodeRecord& ReplayBuffer::episode(int idx) const {
    if (idx < 0 || idx >= size()) throw std::out_of_range("ReplayBuffer::episode");
    if (static_cast<int>(episodes_.size()) < capacity_)
        return episodes_[static_cast<size_t>(idx)];
    return episodes_[static_cast<size_t>((head_ + idx) % capacity_)];
}

Transition ReplayBuffer::transition(int episode_idx, int t) const {
    const EpisodeRecord& ep = episode(episode_idx);
    if (t < 0 || t >= ep.length()) throw std::out_of_range("ReplayBuffer::transition");
    const int n = ep.n_agents;
    const int d = ep.obs_seq.cols;
    Transition tr;
    tr.obs = Matrix(n, d);
    tr.next_obs = Matrix(n, d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) {
            tr.obs.at(i, c) = ep.obs_seq.at(t * n + i, c);
            tr.next_obs.at(i, c) = ep.obs_seq.at((t + 1) * n + i, c);
        }
    tr.actions = ep.actions[static_cast<size_t>(t)];
    tr.reward = ep.rewards[static_cast<size_t>(t)];
    tr.terminal = ep.terminal[static_cast<size_t>(t)] != 0;
    tr.state = Vector(ep.state_seq.cols);
    tr.next_state = Vector(ep.state_seq.cols);
    for (int c = 0; c < ep.state_seq.cols; ++c) {
        tr.state[c] = ep.state_seq.at(t, c);
        tr.next_state[c] = ep.state_seq.at(t + 1, c);
    }
    tr.episode_id = ep.episode_id;
    return tr;
}

std::vector<int> ReplayBuffer::sample(int batch, Rng& rng) const {
    std::vector<int> idx(static_cast<size_t>(size()));
    for (int i = 0; i < size(); ++i) idx[static_cast<size_t>(i)] = i;
    const int take = std::min(batch, size());
    for (int k = 0; k < take; ++k) {
        const int j = k + rng.uniform_int(size() - k);
        std::swap(idx[static_cast<size_t>(k)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(take));
    return idx;
}

Vector mixer_forward(const MixerParams& p, const Matrix& q, const Matrix& s, int h_mix) {
    return mixer_forward_impl(p, q, s, h_mix, nullptr);
}

std::vector<std::pair<std::string, Matrix*>> LearnerParams::entries() {
    std::vector<std::pair<std::string, Matrix*>> out;
    if (has_gnn) {
        out.emplace_back("gnn.enc_w1", &gnn.enc_w1);
        out.emplace_back("gnn.enc_b1", &gnn.enc_b1);
        out.emplace_back("gnn.enc_w2", &gnn.enc_w2);
        out.emplace_back("gnn.enc_b2", &gnn.enc_b2);
        for (size_t l = 0; l < gnn.conv.size(); ++l)
            out.emplace_back("gnn.conv" + std::to_string(l), &gnn.conv[l]);
    }
    out.emplace_back("q.w1", &q.w1);
    out.emplace_back("q.b1", &q.b1);
    out.emplace_back("q.w2", &q.w2);
    out.emplace_back("q.b2", &q.b2);
    if (has_mixer) {
        out.emplace_back("mix.hw1_w", &mix.hw1_w);
        out.emplace_back("mix.hw1_b", &mix.hw1_b);
        out.emplace_back("mix.hb1_w", &mix.hb1_w);
        out.emplace_back("mix.hb1_b", &mix.hb1_b);
        out.emplace_back("mix.hw2_w", &mix.hw2_w);
        out.emplace_back("mix.hw2_b", &mix.hw2_b);
        out.emplace_back("mix.hb2_v1", &mix.hb2_v1);
        out.emplace_back("mix.hb2_c1", &mix.hb2_c1);
        out.emplace_back("mix.hb2_v2", &mix.hb2_v2);
        out.emplace_back("mix.hb2_c2", &mix.hb2_c2);
    }
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> LearnerParams::entries() const {
    auto mutable_entries = const_cast<LearnerParams*>(this)->entries();
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mutable_entries.size());
    for (auto& [name, ptr] : mutable_entries) out.emplace_back(name, ptr);
    return out;
}

std::string TrainingLog::csv_header() {
    return "step,episode,mean_eval_return,loss,epsilon,fallback_rate";
}

void TrainingLog::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("TrainingLog: cannot write " + path);
    out << csv_header() << "\n";
    for (const Row& r : rows)
        out << r.step << "," << r.episode << "," << format_double(r.mean_eval_return) << ","
            << format_double(r.loss) << "," << format_double(r.epsilon) << ","
            << format_double(r.fallback_rate) << "\n";
}

Trainer::Trainer(const ScenarioSpec& spec, Method method, const TrainConfig& cfg,
                 const ProviderConfig& provider_cfg, uint64_t seed,
                 const TemplateSet* templates)
    : spec_(spec),
      method_(method),
      cfg_(cfg),
      provider_cfg_(provider_cfg),
      templates_(templates),
      seed_(seed),
      buffer_(cfg.buffer_capacity),
      explore_rng_(0),
      sample_rng_(0),
      reset_rng_(0) {
    spec_.validate();
    cfg_.validate();
    if (method_ == Method::ours && cfg_.prior_mode == GraphPriorMode::none)
        throw std::invalid_argument("method 'ours' requires a graph prior mode");
    if (method_ != Method::ours && cfg_.prior_mode != GraphPriorMode::none)
        throw std::invalid_argument("baseline methods use prior mode 'none'");

    n_ = spec_.n_agents;
    obs_dim_ = max_obs_dim(spec_);
    state_dim_ = state_dim(spec_);
    max_actions_ = spec_.max_num_actions();
    feat_dim_ = (method_ == Method::ours) ? cfg_.hidden_dim : obs_dim_;

    if (method_ == Method::ours) {
        ProviderConfig pc = provider_cfg_;
        if (cfg_.prior_mode == GraphPriorMode::uniform) pc.kind = ProviderKind::mock_uniform;
        if (cfg_.prior_mode == GraphPriorMode::mock_heuristic)
            pc.kind = ProviderKind::mock_heuristic;
        provider_ = std::make_unique<ProviderClient>(pc);
    }

    Rng master(seed);
    Rng init_rng = master.fork(0);
    explore_rng_ = master.fork(1);
    sample_rng_ = master.fork(2);
    reset_rng_ = master.fork(3);

    init_params(online_, init_rng);
    target_ = online_;

    AdamHyper hyper;
    hyper.lr = cfg_.learning_rate;
    for (auto& [name, mat] : online_.entries())
        adam_.emplace_back(mat->rows, mat->cols, hyper);
}

void Trainer::init_params(LearnerParams& p, Rng& rng) const {
    p.has_gnn = method_ == Method::ours;
    p.has_mixer = method_ == Method::qmix || method_ == Method::ours;
    if (p.has_gnn) {
        GnnConfig gc;
        gc.obs_dim = obs_dim_;
        gc.hidden_dim = cfg_.hidden_dim;
        gc.layers = cfg_.gnn_layers;
        p.gnn = GnnParams::init(gc, rng);
    }
    const int q_in = feat_dim_ + n_;
    p.q.w1 = init_uniform(cfg_.qnet_hidden, q_in, q_in, rng);
    p.q.b1 = init_uniform(cfg_.qnet_hidden, 1, q_in, rng);
    p.q.w2 = init_uniform(max_actions_, cfg_.qnet_hidden, cfg_.qnet_hidden, rng);
    p.q.b2 = init_uniform(max_actions_, 1, cfg_.qnet_hidden, rng);
    if (p.has_mixer) {
        const int h = cfg_.mixing_dim;
        p.mix.hw1_w = init_uniform(n_ * h, state_dim_, state_dim_, rng);
        p.mix.hw1_b = init_uniform(n_ * h, 1, state_dim_, rng);
        p.mix.hb1_w = init_uniform(h, state_dim_, state_dim_, rng);
        p.mix.hb1_b = init_uniform(h, 1, state_dim_, rng);
        p.mix.hw2_w = init_uniform(h, state_dim_, state_dim_, rng);
        p.mix.hw2_b = init_uniform(h, 1, state_dim_, rng);
        p.mix.hb2_v1 = init_uniform(h, state_dim_, state_dim_, rng);
        p.mix.hb2_c1 = init_uniform(h, 1, state_dim_, rng);
        p.mix.hb2_v2 = init_uniform(1, h, h, rng);
        p.mix.hb2_c2 = init_uniform(1, 1, h, rng);
    }
}

Matrix Trainer::pad_observations(const std::vector<AgentObservation>& obs) const {
    Matrix out(n_, obs_dim_, 0.0);
    for (int i = 0; i < n_; ++i) {
        const Vector& v = obs[static_cast<size_t>(i)].values;
        for (int c = 0; c < v.size(); ++c) out.at(i, c) = v[c];
    }
    return out;
}

namespace {
// Appends an agent-index one-hot to each row; rows are grouped agent-major
// within each timestep group.
Matrix with_agent_one_hot(const Matrix& features, int n) {
    Matrix out(features.rows, features.cols + n, 0.0);
    for (int r = 0; r < features.rows; ++r) {
        for (int c = 0; c < features.cols; ++c) out.at(r, c) = features.at(r, c);
        out.at(r, features.cols + (r % n)) = 1.0;
    }
    return out;
}
}  // namespace

Matrix Trainer::q_values(const Matrix& obs, const Matrix& adjacency) const {
    Matrix features;
    if (method_ == Method::ours) {
        const GnnForwardTrace tr = gnn_forward(obs, adjacency, online_.gnn, obs.rows / n_);
        features = gnn_output(tr);
    } else {
        features = obs;
    }
    return qnet_forward(online_.q, with_agent_one_hot(features, n_), nullptr);
}

JointAction Trainer::select_from_q(const Matrix& q, double epsilon, Rng& rng) const {
    if (epsilon < 0.0 || epsilon > 1.0)
        throw std::invalid_argument("select_actions: epsilon must be in [0,1]");
    JointAction actions(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) {
        const int n_act = spec_.num_actions(i);
        if (rng.uniform() < epsilon) {
            actions[static_cast<size_t>(i)] = rng.uniform_int(n_act);
        } else {
            int best = 0;
            for (int a = 1; a < n_act; ++a)
                if (q.at(i, a) > q.at(i, best)) best = a;
            actions[static_cast<size_t>(i)] = best;
        }
    }
    return actions;
}

JointAction Trainer::select_actions(const Matrix& obs, const Matrix& adjacency, double epsilon,
                                    Rng& rng) const {
    return select_from_q(q_values(obs, adjacency), epsilon, rng);
}

double Trainer::q_tot(const Vector& chosen_qs, const Vector& state) const {
    if (method_ == Method::iql)
        throw std::logic_error("q_tot: iql has no joint value");
    if (chosen_qs.size() != n_)
        throw std::invalid_argument("q_tot: need one utility per agent");
    if (method_ == Method::vdn) {
        double sum = 0.0;
        for (int i = 0; i < n_; ++i) sum += chosen_qs[i];
        return sum;
    }
    Matrix q(1, n_);
    q.data = chosen_qs.data;
    Matrix s(1, state.size());
    s.data = state.data;
    return mixer_forward(online_.mix, q, s, cfg_.mixing_dim)[0];
}

BatchGrads Trainer::compute_batch(const std::vector<int>& episode_indices) const {
    LearnerParams grad_holder = online_;
    for (auto& [name, mat] : grad_holder.entries()) *mat = Matrix(mat->rows, mat->cols, 0.0);

    long total_steps = 0;
    for (int idx : episode_indices) total_steps += buffer_.episode(idx).length();
    if (total_steps == 0) return {0.0, {}};
    const double denom = (method_ == Method::iql)
                             ? static_cast<double>(total_steps) * n_
                             : static_cast<double>(total_steps);

    double loss_sum = 0.0;
    for (int idx : episode_indices) {
        const EpisodeRecord& ep = buffer_.episode(idx);
        const int t_len = ep.length();
        const int groups = t_len + 1;

        Matrix features_on, features_tg;
        GnnForwardTrace gnn_tr;
        if (method_ == Method::ours) {
            gnn_tr = gnn_forward(ep.obs_seq, ep.prior.adjacency, online_.gnn, groups);
            features_on = gnn_output(gnn_tr);
            const GnnForwardTrace tgt_tr =
                gnn_forward(ep.obs_seq, ep.prior.adjacency, target_.gnn, groups);
            features_tg = gnn_output(tgt_tr);
        } else {
            features_on = ep.obs_seq;
            features_tg = ep.obs_seq;
        }

        QNetTrace q_tr;
        const Matrix q_on = qnet_forward(online_.q, with_agent_one_hot(features_on, n_), &q_tr);
        const Matrix q_tg =
            qnet_forward(target_.q, with_agent_one_hot(features_tg, n_), nullptr);

        Matrix chosen(t_len, n_, 0.0);
        Matrix next_best(t_len, n_, 0.0);
        for (int t = 0; t < t_len; ++t)
            for (int i = 0; i < n_; ++i) {
                chosen.at(t, i) = q_on.at(t * n_ + i, ep.actions[static_cast<size_t>(t)][static_cast<size_t>(i)]);
                // Double-Q: online argmax over valid actions, target evaluation.
                const int row = (t + 1) * n_ + i;
                int best = 0;
                const int n_act = spec_.num_actions(i);
                for (int a = 1; a < n_act; ++a)
                    if (q_on.at(row, a) > q_on.at(row, best)) best = a;
                next_best.at(t, i) = q_tg.at(row, best);
            }

        Matrix d_out(q_on.rows, q_on.cols, 0.0);
        if (method_ == Method::iql) {
            for (int t = 0; t < t_len; ++t) {
                const double gate = ep.terminal[static_cast<size_t>(t)] ? 0.0 : 1.0;
                for (int i = 0; i < n_; ++i) {
                    const double y =
                        ep.rewards[static_cast<size_t>(t)] + cfg_.gamma * gate * next_best.at(t, i);
                    const double diff = chosen.at(t, i) - y;
                    loss_sum += diff * diff;
                    d_out.at(t * n_ + i, ep.actions[static_cast<size_t>(t)][static_cast<size_t>(i)]) =
                        2.0 * diff / denom;
                }
            }
        } else {
            Matrix s_now(t_len, state_dim_);
            Matrix s_next(t_len, state_dim_);
            for (int t = 0; t < t_len; ++t)
                for (int c = 0; c < state_dim_; ++c) {
                    s_now.at(t, c) = ep.state_seq.at(t, c);
                    s_next.at(t, c) = ep.state_seq.at(t + 1, c);
                }

            Vector qtot(t_len), qtot_next(t_len);
            MixerTrace mix_tr;
            if (method_ == Method::vdn) {
                for (int t = 0; t < t_len; ++t) {
                    double a = 0.0, b = 0.0;
                    for (int i = 0; i < n_; ++i) {
                        a += chosen.at(t, i);
                        b += next_best.at(t, i);
                    }
                    qtot[t] = a;
                    qtot_next[t] = b;
                }
            } else {
                qtot = mixer_forward_impl(online_.mix, chosen, s_now, cfg_.mixing_dim, &mix_tr);
                qtot_next = mixer_forward(target_.mix, next_best, s_next, cfg_.mixing_dim);
            }

            Vector d_qtot(t_len);
            for (int t = 0; t < t_len; ++t) {
                const double gate = ep.terminal[static_cast<size_t>(t)] ? 0.0 : 1.0;
                const double y =
                    ep.rewards[static_cast<size_t>(t)] + cfg_.gamma * gate * qtot_next[t];
                const double diff = qtot[t] - y;
                loss_sum += diff * diff;
                d_qtot[t] = 2.0 * diff / denom;
            }

            Matrix d_chosen(t_len, n_, 0.0);
            if (method_ == Method::vdn) {
                for (int t = 0; t < t_len; ++t)
                    for (int i = 0; i < n_; ++i) d_chosen.at(t, i) = d_qtot[t];
            } else {
                d_chosen = mixer_backward(online_.mix, mix_tr, d_qtot, cfg_.mixing_dim,
                                          grad_holder.mix);
            }
            for (int t = 0; t < t_len; ++t)
                for (int i = 0; i < n_; ++i)
                    d_out.at(t * n_ + i,
                             ep.actions[static_cast<size_t>(t)][static_cast<size_t>(i)]) =
                        d_chosen.at(t, i);
        }

        const Matrix d_input = qnet_backward(online_.q, q_tr, d_out, grad_holder.q);
        if (method_ == Method::ours) {
            Matrix d_features(d_input.rows, feat_dim_);
            for (int r = 0; r < d_input.rows; ++r)
                for (int c = 0; c < feat_dim_; ++c) d_features.at(r, c) = d_input.at(r, c);
            const GnnGrads gg = gnn_backward(gnn_tr, d_features, online_.gnn);
            add_inplace(grad_holder.gnn.enc_w1, gg.enc_w1);
            add_inplace(grad_holder.gnn.enc_b1, gg.enc_b1);
            add_inplace(grad_holder.gnn.enc_w2, gg.enc_w2);
            add_inplace(grad_holder.gnn.enc_b2, gg.enc_b2);
            for (size_t l = 0; l < gg.conv.size(); ++l)
                add_inplace(grad_holder.gnn.conv[l], gg.conv[l]);
        }
    }

    BatchGrads out;
    out.loss = loss_sum / denom;
    for (auto& [name, mat] : grad_holder.entries()) out.grads.push_back(std::move(*mat));
    return out;
}

std::optional<double> Trainer::td_update() {
    if (buffer_.size() < cfg_.batch_size) return std::nullopt;
    const std::vector<int> idx = buffer_.sample(cfg_.batch_size, sample_rng_);
    BatchGrads bg = compute_batch(idx);
    auto entries = online_.entries();
    for (size_t k = 0; k < entries.size(); ++k)
        adam_step(*entries[k].second, bg.grads[k], adam_[k]);
    updates_ += 1;
    if (updates_ % cfg_.target_update_interval == 0) sync_targets();
    return bg.loss;
}

void Trainer::sync_targets() {
    auto src = online_.entries();
    auto dst = target_.entries();
    for (size_t k = 0; k < src.size(); ++k) *dst[k].second = *src[k].second;
}

GraphPrior Trainer::fetch_prior(const std::vector<AgentObservation>& obs) {
    if (method_ != Method::ours) {
        GraphPrior p;
        p.adjacency = Matrix::identity(n_);
        p.provider = "none";
        p.fallback = false;
        return p;
    }
    const TemplateSet& templates = templates_ ? *templates_ : TemplateSet::defaults();
    return prior_for_episode(obs, spec_, *provider_, templates).prior;
}

Trainer::Rollout Trainer::rollout_episode(uint64_t reset_seed, bool greedy) {
    Rollout out;
    ResetResult rr = reset(spec_, reset_seed);
    const GraphPrior prior = fetch_prior(rr.observations);
    out.fallback = prior.fallback;

    EpisodeRecord& rec = out.record;
    rec.prior = prior;
    rec.n_agents = n_;
    rec.obs_seq = Matrix((spec_.t_max + 1) * n_, obs_dim_, 0.0);
    rec.state_seq = Matrix(spec_.t_max + 1, state_dim_, 0.0);

    auto store_obs = [&](int t, const std::vector<AgentObservation>& obs,
                         const WorldState& state) {
        for (int i = 0; i < n_; ++i) {
            const Vector& v = obs[static_cast<size_t>(i)].values;
            for (int c = 0; c < v.size(); ++c) rec.obs_seq.at(t * n_ + i, c) = v[c];
        }
        const Vector s = global_state(spec_, state);
        for (int c = 0; c < state_dim_; ++c) rec.state_seq.at(t, c) = s[c];
    };

    store_obs(0, rr.observations, rr.state);
    WorldState state = std::move(rr.state);
    Matrix obs_now = pad_observations(rr.observations);

    Rng greedy_rng(reset_seed ^ 0x5DEECE66DULL);
    int t = 0;
    while (true) {
        const double eps = greedy ? 0.0 : epsilon_at(env_steps_);
        Rng& rng = greedy ? greedy_rng : explore_rng_;
        const JointAction actions = select_actions(obs_now, prior.adjacency, eps, rng);
        StepResult sr = step(spec_, state, actions);
        if (!greedy) env_steps_ += 1;

        rec.actions.push_back(actions);
        rec.rewards.push_back(sr.reward);
        // Episodes end by time limit only; targets keep bootstrapping.
        rec.terminal.push_back(0);
        out.return_sum += sr.reward;

        t += 1;
        store_obs(t, sr.observations, sr.state);
        obs_now = pad_observations(sr.observations);
        state = std::move(sr.state);
        if (sr.done) break;
    }
    if (t < spec_.t_max) {
        // Early termination: drop the unused preallocated rows.
        rec.obs_seq.rows = (t + 1) * n_;
        rec.obs_seq.data.resize(static_cast<size_t>(rec.obs_seq.rows) * obs_dim_);
        rec.state_seq.rows = t + 1;
        rec.state_seq.data.resize(static_cast<size_t>(rec.state_seq.rows) * state_dim_);
    }
    return out;
}

double Trainer::epsilon_at(long step) const {
    if (step >= cfg_.epsilon_anneal_steps) return cfg_.epsilon_end;
    const double frac = static_cast<double>(step) / static_cast<double>(cfg_.epsilon_anneal_steps);
    return cfg_.epsilon_start + (cfg_.epsilon_end - cfg_.epsilon_start) * frac;
}

double Trainer::greedy_eval(int episodes, uint64_t stream) {
    Rng eval_rng = Rng(seed_).fork(stream);
    double total = 0.0;
    for (int k = 0; k < episodes; ++k)
        total += rollout_episode(eval_rng.next(), true).return_sum;
    return total / episodes;
}

TrainingLog Trainer::run_training(const std::string& log_csv_path) {
    TrainingLog log;
    long next_eval = cfg_.eval_interval;
    double loss_sum = 0.0;
    long loss_count = 0;
    long last_logged_step = -1;

    auto emit_row = [&](long eval_block) {
        TrainingLog::Row row;
        row.step = env_steps_;
        row.episode = episodes_;
        row.mean_eval_return = greedy_eval(cfg_.eval_episodes, 1'000'000 + eval_block);
        row.loss = loss_count ? loss_sum / loss_count : 0.0;
        row.epsilon = epsilon_at(env_steps_);
        row.fallback_rate =
            episodes_ ? static_cast<double>(fallback_episodes_) / episodes_ : 0.0;
        log.rows.push_back(row);
        loss_sum = 0.0;
        loss_count = 0;
        last_logged_step = env_steps_;
    };

    while (env_steps_ < cfg_.total_timesteps) {
        Rollout ro = rollout_episode(reset_rng_.next(), false);
        episodes_ += 1;
        if (ro.fallback) fallback_episodes_ += 1;
        ro.record.episode_id = episodes_;
        buffer_.add(std::move(ro.record));

        if (buffer_.size() >= cfg_.batch_size) {
            for (int u = 0; u < cfg_.updates_per_episode; ++u) {
                if (auto loss = td_update()) {
                    loss_sum += *loss;
                    loss_count += 1;
                }
            }
        }
        while (env_steps_ >= next_eval) {
            emit_row(next_eval / cfg_.eval_interval);
            next_eval += cfg_.eval_interval;
        }
    }
    if (last_logged_step != env_steps_) emit_row(next_eval / cfg_.eval_interval);

    if (!log_csv_path.empty()) log.write_csv(log_csv_path);
    return log;
}

long Trainer::provider_network_requests() const {
    return provider_ ? provider_->network_requests() : 0;
}

void Trainer::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    write_u32(out, kCheckpointMagic);
    write_u32(out, 1);
    write_str(out, to_string(method_));
    write_str(out, to_string(spec_.scenario));
    write_u32(out, static_cast<uint32_t>(n_));
    write_u32(out, static_cast<uint32_t>(obs_dim_));
    write_u32(out, static_cast<uint32_t>(state_dim_));
    write_u32(out, static_cast<uint32_t>(max_actions_));
    write_u32(out, static_cast<uint32_t>(feat_dim_));
    const auto entries = online_.entries();
    write_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, mat] : entries) {
        write_str(out, name);
        write_u32(out, static_cast<uint32_t>(mat->rows));
        write_u32(out, static_cast<uint32_t>(mat->cols));
        out.write(reinterpret_cast<const char*>(mat->data.data()),
                  static_cast<std::streamsize>(mat->data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

void Trainer::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    if (read_u32(in) != kCheckpointMagic)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (read_u32(in) != 1) throw std::runtime_error("checkpoint: unsupported version");
    const std::string method = read_str(in);
    const std::string scenario = read_str(in);
    if (method != to_string(method_) || scenario != to_string(spec_.scenario))
        throw std::runtime_error("checkpoint: trained for " + method + "/" + scenario +
                                 ", requested " + to_string(method_) + "/" +
                                 to_string(spec_.scenario));
    const uint32_t n = read_u32(in);
    const uint32_t od = read_u32(in);
    const uint32_t sd = read_u32(in);
    const uint32_t ma = read_u32(in);
    const uint32_t fd = read_u32(in);
    if (n != static_cast<uint32_t>(n_) || od != static_cast<uint32_t>(obs_dim_) ||
        sd != static_cast<uint32_t>(state_dim_) || ma != static_cast<uint32_t>(max_actions_) ||
        fd != static_cast<uint32_t>(feat_dim_))
        throw std::runtime_error("checkpoint: dimensions do not match config");
    const uint32_t count = read_u32(in);
    auto entries = online_.entries();
    if (count != entries.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (auto& [name, mat] : entries) {
        const std::string got = read_str(in);
        if (got != name)
            throw std::runtime_error("checkpoint: expected parameter " + name + ", got " + got);
        const uint32_t rows = read_u32(in);
        const uint32_t cols = read_u32(in);
        if (rows != static_cast<uint32_t>(mat->rows) || cols != static_cast<uint32_t>(mat->cols))
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(mat->data.data()),
                static_cast<std::streamsize>(mat->data.size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    sync_targets();
}

}  // namespace cgmarl
