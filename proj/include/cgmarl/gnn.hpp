#pragma once

#include <vector>

#include "cgmarl/numeric.hpp"

namespace cgmarl {

struct GnnConfig {
    int obs_dim = 0;
    int hidden_dim = 64;  // d
    int layers = 2;       // L

    void validate() const;
};

// Shared two-layer MLP encoder plus L graph-convolution weight matrices.
// Graph-conv layers carry no bias.
struct GnnParams {
    Matrix enc_w1;              // d x obs_dim
    Matrix enc_b1;              // d x 1
    Matrix enc_w2;              // d x d
    Matrix enc_b2;              // d x 1
    std::vector<Matrix> conv;   // L of d x d

    static GnnParams init(const GnnConfig& cfg, Rng& rng);
    int hidden_dim() const { return enc_w1.rows; }
    int obs_dim() const { return enc_w1.cols; }
    int layers() const { return static_cast<int>(conv.size()); }
};

// Cached activations of one forward pass; consumed by gnn_backward.
struct GnnForwardTrace {
    Matrix obs;                 // rows x obs_dim
    Matrix enc_z1, enc_z2;      // pre-activations, rows x d
    Matrix enc_a1;              // rows x d
    std::vector<Matrix> mixed;  // per layer: A-weighted sums, rows x d
    std::vector<Matrix> pre;    // per layer: pre-activations, rows x d
    std::vector<Matrix> post;   // per layer: activations, rows x d
    Matrix adjacency;           // the A used (constant, no gradient)
    int groups = 1;             // rows = groups * n
};

struct GnnGrads {
    Matrix enc_w1, enc_b1, enc_w2, enc_b2;
    std::vector<Matrix> conv;
    Matrix obs;  // produced for completeness; the trainer ignores it
};

// h = relu(W2 * relu(W1 * obs + b1) + b2), applied row-wise.
Matrix encode(const Matrix& obs, const GnnParams& params);
Vector encode(const Vector& obs, const GnnParams& params);

// One graph-convolution layer: relu((A * H) * W^T). H is n x d.
Matrix propagate(const Matrix& h, const Matrix& adjacency, const Matrix& w);

// Full pipeline over `groups` independent agent sets stacked row-wise
// (rows = groups * n, with A applied per group). Training batches a whole
// episode as one call with groups = T + 1.
GnnForwardTrace gnn_forward(const Matrix& obs, const Matrix& adjacency,
                            const GnnParams& params, int groups = 1);

const Matrix& gnn_output(const GnnForwardTrace& trace);
// A trace must outlive the returned reference.
const Matrix& gnn_output(GnnForwardTrace&&) = delete;

// Exact reverse-mode gradients for every parameter. A is a constant input;
// no gradient with respect to it exists or is produced.
GnnGrads gnn_backward(const GnnForwardTrace& trace, const Matrix& upstream,
                      const GnnParams& params);

}  // namespace cgmarl
