#include "cgmarl/gnn.hpp"

#include <stdexcept>

namespace cgmarl {

namespace {

// out[r] += b for every row; b is column-shaped (d x 1).
void add_row_bias(Matrix& m, const Matrix& b) {
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) m.at(r, c) += b.at(c, 0);
}

// Block-diagonal application of A to stacked groups: for each group g,
// out rows [g*n, (g+1)*n) = A * h rows [g*n, (g+1)*n).
Matrix mix_groups(const Matrix& adjacency, const Matrix& h, int groups) {
    const int n = adjacency.rows;
    Matrix out(h.rows, h.cols, 0.0);
    for (int g = 0; g < groups; ++g) {
        const int base = g * n;
        for (int i = 0; i < n; ++i) {
            double* orow = out.data.data() + static_cast<size_t>(base + i) * h.cols;
            for (int j = 0; j < n; ++j) {
                const double w = adjacency.at(i, j);
                if (w == 0.0) continue;
                const double* hrow = h.data.data() + static_cast<size_t>(base + j) * h.cols;
                for (int c = 0; c < h.cols; ++c) orow[c] += w * hrow[c];
            }
        }
    }
    return out;
}

Matrix mix_groups_transposed(const Matrix& adjacency, const Matrix& grad, int groups) {
    const int n = adjacency.rows;
    Matrix out(grad.rows, grad.cols, 0.0);
    for (int g = 0; g < groups; ++g) {
        const int base = g * n;
        for (int j = 0; j < n; ++j) {
            double* orow = out.data.data() + static_cast<size_t>(base + j) * grad.cols;
            for (int i = 0; i < n; ++i) {
                const double w = adjacency.at(i, j);
                if (w == 0.0) continue;
                const double* grow = grad.data.data() + static_cast<size_t>(base + i) * grad.cols;
                for (int c = 0; c < grad.cols; ++c) orow[c] += w * grow[c];
            }
        }
    }
    return out;
}

Matrix column_sums(const Matrix& m) {
    Matrix out(m.cols, 1, 0.0);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) out.at(c, 0) += m.at(r, c);
    return out;
}

}  // namespace

void GnnConfig::validate() const {
    if (obs_dim < 1) throw std::invalid_argument("gnn: obs_dim must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("gnn: hidden_dim must be >= 1");
    if (layers < 1) throw std::invalid_argument("gnn: layer count must be >= 1");
}

GnnParams GnnParams::init(const GnnConfig& cfg, Rng& rng) {
    cfg.validate();
    GnnParams p;
    p.enc_w1 = init_uniform(cfg.hidden_dim, cfg.obs_dim, cfg.obs_dim, rng);
    p.enc_b1 = init_uniform(cfg.hidden_dim, 1, cfg.obs_dim, rng);
    p.enc_w2 = init_uniform(cfg.hidden_dim, cfg.hidden_dim, cfg.hidden_dim, rng);
    p.enc_b2 = init_uniform(cfg.hidden_dim, 1, cfg.hidden_dim, rng);
    p.conv.reserve(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l)
        p.conv.push_back(init_uniform(cfg.hidden_dim, cfg.hidden_dim, cfg.hidden_dim, rng));
    return p;
}

Matrix encode(const Matrix& obs, const GnnParams& params) {
    if (obs.cols != params.obs_dim())
        throw std::invalid_argument("encode: obs dim " + std::to_string(obs.cols) +
                                    " does not match encoder input " +
                                    std::to_string(params.obs_dim()));
    Matrix z1 = matmul_nt(obs, params.enc_w1);
    add_row_bias(z1, params.enc_b1);
    Matrix z2 = matmul_nt(relu(z1), params.enc_w2);
    add_row_bias(z2, params.enc_b2);
    return relu(z2);
}

Vector encode(const Vector& obs, const GnnParams& params) {
    Matrix m(1, obs.size());
    m.data = obs.data;
    Matrix h = encode(m, params);
    return Vector(std::move(h.data));
}

Matrix propagate(const Matrix& h, const Matrix& adjacency, const Matrix& w) {
    if (adjacency.rows != adjacency.cols || adjacency.cols != h.rows)
        throw std::invalid_argument("propagate: adjacency " + adjacency.shape_str() +
                                    " does not match embeddings " + h.shape_str());
    return relu(matmul_nt(matmul(adjacency, h), w));
}

GnnForwardTrace gnn_forward(const Matrix& obs, const Matrix& adjacency,
                            const GnnParams& params, int groups) {
    const int n = adjacency.rows;
    if (adjacency.rows != adjacency.cols)
        throw std::invalid_argument("gnn_forward: adjacency must be square");
    if (groups < 1 || obs.rows != groups * n)
        throw std::invalid_argument("gnn_forward: obs rows " + std::to_string(obs.rows) +
                                    " != groups " + std::to_string(groups) + " * n " +
                                    std::to_string(n));
    GnnForwardTrace t;
    t.obs = obs;
    t.adjacency = adjacency;
    t.groups = groups;

    t.enc_z1 = matmul_nt(obs, params.enc_w1);
    add_row_bias(t.enc_z1, params.enc_b1);
    t.enc_a1 = relu(t.enc_z1);
    t.enc_z2 = matmul_nt(t.enc_a1, params.enc_w2);
    add_row_bias(t.enc_z2, params.enc_b2);
    Matrix h = relu(t.enc_z2);

    const int layers = params.layers();
    t.mixed.reserve(static_cast<size_t>(layers));
    t.pre.reserve(static_cast<size_t>(layers));
    t.post.reserve(static_cast<size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        const Matrix& prev = (l == 0) ? h : t.post[static_cast<size_t>(l - 1)];
        t.mixed.push_back(mix_groups(adjacency, prev, groups));
        t.pre.push_back(matmul_nt(t.mixed.back(), params.conv[static_cast<size_t>(l)]));
        t.post.push_back(relu(t.pre.back()));
    }
    // h^(0) is recoverable as relu(enc_z2); stash it in mixed's source instead
    // of duplicating. Kept implicit: backward recomputes relu(enc_z2) cheaply.
    return t;
}

const Matrix& gnn_output(const GnnForwardTrace& trace) { return trace.post.back(); }

GnnGrads gnn_backward(const GnnForwardTrace& trace, const Matrix& upstream,
                      const GnnParams& params) {
    const int layers = params.layers();
    if (static_cast<int>(trace.post.size()) != layers)
        throw std::invalid_argument("gnn_backward: trace does not match params");
    if (!upstream.same_shape(trace.post.back()))
        throw std::invalid_argument("gnn_backward: upstream shape " + upstream.shape_str() +
                                    " != output shape " + trace.post.back().shape_str());

    GnnGrads g;
    g.conv.assign(static_cast<size_t>(layers), Matrix());

    Matrix d_h = upstream;
    for (int l = layers - 1; l >= 0; --l) {
        const Matrix d_pre = relu_backward(trace.pre[static_cast<size_t>(l)], d_h);
        g.conv[static_cast<size_t>(l)] = matmul_tn(d_pre, trace.mixed[static_cast<size_t>(l)]);
        const Matrix d_mixed = matmul(d_pre, params.conv[static_cast<size_t>(l)]);
        // d(A*H)/dH with A constant per group.
        Matrix d_prev = mix_groups_transposed(trace.adjacency, d_mixed, trace.groups);
        d_h = std::move(d_prev);
    }

    const Matrix d_z2 = relu_backward(trace.enc_z2, d_h);
    g.enc_w2 = matmul_tn(d_z2, trace.enc_a1);
    g.enc_b2 = column_sums(d_z2);
    const Matrix d_a1 = matmul(d_z2, params.enc_w2);
    const Matrix d_z1 = relu_backward(trace.enc_z1, d_a1);
    g.enc_w1 = matmul_tn(d_z1, trace.obs);
    g.enc_b1 = column_sums(d_z1);
    g.obs = matmul(d_z1, params.enc_w1);
    return g;
}

}  // namespace cgmarl
