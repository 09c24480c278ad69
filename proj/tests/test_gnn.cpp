#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "cgmarl/gnn.hpp"
#include "test_util.hpp"

using namespace cgmarl;

namespace {

GnnParams random_params(const GnnConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    return GnnParams::init(cfg, rng);
}

Matrix gnn_out(const Matrix& obs, const Matrix& a, const GnnParams& p, int groups = 1) {
    const GnnForwardTrace t = gnn_forward(obs, a, p, groups);
    return gnn_output(t);
}

// Straight-line scalar reimplementation of the encoder for one observation.
Vector encode_oracle(const Vector& obs, const GnnParams& p) {
    const int d = p.hidden_dim();
    Vector z1(d), a1(d), z2(d), out(d);
    for (int r = 0; r < d; ++r) {
        double acc = p.enc_b1.at(r, 0);
        for (int c = 0; c < obs.size(); ++c) acc += p.enc_w1.at(r, c) * obs[c];
        z1[r] = acc;
        a1[r] = acc > 0 ? acc : 0;
    }
    for (int r = 0; r < d; ++r) {
        double acc = p.enc_b2.at(r, 0);
        for (int c = 0; c < d; ++c) acc += p.enc_w2.at(r, c) * a1[c];
        z2[r] = acc;
        out[r] = acc > 0 ? acc : 0;
    }
    return out;
}

// True when every pre-activation is safely away from the ReLU kink, so small
// parameter perturbations cannot flip activation signs during the check.
bool away_from_kinks(const GnnForwardTrace& t, double margin) {
    for (const Matrix* m : {&t.enc_z1, &t.enc_z2})
        for (double v : m->data)
            if (std::abs(v) < margin) return false;
    for (const Matrix& m : t.pre)
        for (double v : m.data)
            if (std::abs(v) < margin) return false;
    return true;
}

double weighted_output_sum(const Matrix& obs, const Matrix& a, const GnnParams& p,
                           const Matrix& weights) {
    const GnnForwardTrace t = gnn_forward(obs, a, p);
    const Matrix& out = gnn_output(t);
    double s = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * weights.data[i];
    return s;
}

}  // namespace

TEST_CASE("config validation enforces at least one layer") {
    GnnConfig cfg;
    cfg.obs_dim = 4;
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.layers = 1;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("encoder basics") {
    GnnConfig cfg;
    cfg.obs_dim = 5;
    cfg.hidden_dim = 8;
    cfg.layers = 2;

    SUBCASE("zero parameters give a zero embedding") {
        GnnParams p = random_params(cfg, 1);
        for (auto* m : {&p.enc_w1, &p.enc_b1, &p.enc_w2, &p.enc_b2}) *m = Matrix(m->rows, m->cols, 0.0);
        Rng rng(2);
        const Vector obs(std::vector<double>{1, -2, 3, 0.5, 0});
        const Vector h = encode(obs, p);
        for (double v : h.data) CHECK(v == 0.0);
    }

    SUBCASE("identical observations share identical embeddings") {
        const GnnParams p = random_params(cfg, 3);
        Matrix obs(2, 5);
        Rng rng(4);
        for (int c = 0; c < 5; ++c) {
            const double v = rng.uniform(-1, 1);
            obs.at(0, c) = v;
            obs.at(1, c) = v;
        }
        const Matrix h = encode(obs, p);
        for (int c = 0; c < 8; ++c) CHECK(h.at(0, c) == h.at(1, c));
    }

    SUBCASE("matches the straight-line oracle") {
        const GnnParams p = random_params(cfg, 5);
        Rng rng(6);
        for (int trial = 0; trial < 10; ++trial) {
            Vector obs(5);
            for (int c = 0; c < 5; ++c) obs[c] = rng.uniform(-1, 1);
            const Vector got = encode(obs, p);
            const Vector want = encode_oracle(obs, p);
            for (int c = 0; c < 8; ++c) CHECK(std::abs(got[c] - want[c]) < 1e-12);
        }
    }
}

TEST_CASE("propagate layer semantics") {
    SUBCASE("identity graph and identity weights reduce to relu") {
        Rng rng(7);
        const Matrix h = testutil::random_matrix(3, 4, rng);
        const Matrix out = propagate(h, Matrix::identity(3), Matrix::identity(4));
        CHECK(out == relu(h));
    }

    SUBCASE("all-ones adjacency mixes two agents symmetrically") {
        const Matrix h = Matrix::from_rows({{1, 2}, {3, 4}});
        const Matrix a = Matrix::from_rows({{1, 1}, {1, 1}});
        const Matrix out = propagate(h, a, Matrix::identity(2));
        // Both rows equal the column-wise sums.
        CHECK(out == Matrix::from_rows({{4, 6}, {4, 6}}));
    }

    SUBCASE("masked row keeps an agent local") {
        Rng rng(8);
        GnnConfig cfg;
        cfg.obs_dim = 6;
        cfg.hidden_dim = 8;
        cfg.layers = 2;
        const GnnParams p = random_params(cfg, 9);
        Matrix a(3, 3, 0.7);
        a.at(0, 1) = a.at(0, 2) = 0.0;  // agent 0 sees only itself
        a.at(0, 0) = 1.0;

        const Matrix obs1 = testutil::random_matrix(3, 6, rng);
        Matrix obs2 = obs1;
        for (int c = 0; c < 6; ++c) {
            obs2.at(1, c) = rng.uniform(-1, 1);
            obs2.at(2, c) = rng.uniform(-1, 1);
        }
        const Matrix out1 = gnn_out(obs1, a, p);
        const Matrix out2 = gnn_out(obs2, a, p);
        for (int c = 0; c < 8; ++c) CHECK(out1.at(0, c) == out2.at(0, c));
    }
}

TEST_CASE("gnn_forward output shape follows the config") {
    GnnConfig cfg;
    cfg.obs_dim = 11;
    cfg.hidden_dim = 64;
    cfg.layers = 2;
    const GnnParams p = random_params(cfg, 10);
    Rng rng(11);
    const Matrix obs = testutil::random_matrix(3, 11, rng);
    const Matrix a = testutil::random_matrix(3, 3, rng, 0.0, 1.0);
    const Matrix out = gnn_out(obs, a, p);
    CHECK(out.rows == 3);
    CHECK(out.cols == 64);
}

TEST_CASE("permutation equivariance") {
    GnnConfig cfg;
    cfg.obs_dim = 7;
    cfg.hidden_dim = 16;
    cfg.layers = 2;
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + rng.uniform_int(5);
        const GnnParams p = random_params(cfg, 100 + trial);
        const Matrix obs = testutil::random_matrix(n, 7, rng);
        const Matrix a = testutil::random_matrix(n, n, rng, 0.0, 1.0);

        // Random permutation.
        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

        Matrix obs_p(n, 7);
        Matrix a_p(n, n);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < 7; ++c) obs_p.at(i, c) = obs.at(perm[i], c);
            for (int j = 0; j < n; ++j) a_p.at(i, j) = a.at(perm[i], perm[j]);
        }
        const Matrix out = gnn_out(obs, a, p);
        const Matrix out_p = gnn_out(obs_p, a_p, p);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 16; ++c)
                CHECK(std::abs(out_p.at(i, c) - out.at(perm[i], c)) < 1e-9);
    }
}

TEST_CASE("batched groups match per-group forwards") {
    GnnConfig cfg;
    cfg.obs_dim = 5;
    cfg.hidden_dim = 8;
    cfg.layers = 2;
    const GnnParams p = random_params(cfg, 21);
    Rng rng(22);
    const int n = 3, groups = 4;
    const Matrix obs = testutil::random_matrix(groups * n, 5, rng);
    const Matrix a = testutil::random_matrix(n, n, rng, 0.0, 1.0);
    const Matrix out = gnn_out(obs, a, p, groups);
    for (int g = 0; g < groups; ++g) {
        Matrix slice(n, 5);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 5; ++c) slice.at(i, c) = obs.at(g * n + i, c);
        const Matrix want = gnn_out(slice, a, p);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 8; ++c) CHECK(out.at(g * n + i, c) == want.at(i, c));
    }
}

TEST_CASE("zero upstream gives all-zero gradients") {
    GnnConfig cfg;
    cfg.obs_dim = 5;
    cfg.hidden_dim = 8;
    cfg.layers = 2;
    const GnnParams p = random_params(cfg, 31);
    Rng rng(32);
    const Matrix obs = testutil::random_matrix(3, 5, rng);
    const Matrix a = testutil::random_matrix(3, 3, rng, 0.0, 1.0);
    const GnnForwardTrace t = gnn_forward(obs, a, p);
    const GnnGrads g = gnn_backward(t, Matrix(3, 8, 0.0), p);
    for (const Matrix* m : {&g.enc_w1, &g.enc_b1, &g.enc_w2, &g.enc_b2, &g.obs})
        for (double v : m->data) CHECK(v == 0.0);
    for (const Matrix& m : g.conv)
        for (double v : m.data) CHECK(v == 0.0);
}

TEST_CASE("gnn gradients match central finite differences over 20 seeds") {
    GnnConfig cfg;
    cfg.obs_dim = 6;
    cfg.hidden_dim = 8;
    cfg.layers = 2;
    const int n = 3;
    int done = 0;
    uint64_t seed = 1000;
    while (done < 20) {
        ++seed;
        GnnParams p = random_params(cfg, seed);
        Rng rng(seed * 7 + 1);
        const Matrix obs = testutil::random_matrix(n, cfg.obs_dim, rng);
        const Matrix a = testutil::random_matrix(n, n, rng, 0.0, 1.0);
        const Matrix weights = testutil::random_matrix(n, cfg.hidden_dim, rng);

        const GnnForwardTrace t = gnn_forward(obs, a, p);
        // Resample when an activation sits within 1e-3 of the ReLU kink; the
        // 1e-5 perturbation could then flip it and invalidate the comparison.
        if (!away_from_kinks(t, 1e-3)) continue;
        ++done;

        const GnnGrads analytic = gnn_backward(t, weights, p);
        auto loss = [&] { return weighted_output_sum(obs, a, p, weights); };

        std::vector<std::pair<Matrix*, const Matrix*>> pairs = {
            {&p.enc_w1, &analytic.enc_w1},
            {&p.enc_b1, &analytic.enc_b1},
            {&p.enc_w2, &analytic.enc_w2},
            {&p.enc_b2, &analytic.enc_b2},
            {&p.conv[0], &analytic.conv[0]},
            {&p.conv[1], &analytic.conv[1]},
        };
        for (auto& [param, grad] : pairs) {
            for (size_t i = 0; i < param->data.size(); ++i) {
                const double fd = testutil::central_diff(*param, i, loss, 1e-5);
                const double an = grad->data[i];
                const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
                CHECK(std::abs(fd - an) / denom < 1e-4);
            }
        }
    }
}

TEST_CASE("shape errors are rejected") {
    GnnConfig cfg;
    cfg.obs_dim = 5;
    cfg.hidden_dim = 8;
    cfg.layers = 1;
    const GnnParams p = random_params(cfg, 41);
    Rng rng(42);
    CHECK_THROWS_AS(encode(Matrix(2, 4), p), std::invalid_argument);
    CHECK_THROWS_AS(gnn_forward(Matrix(3, 5), Matrix(2, 2), p), std::invalid_argument);
    const Matrix obs = testutil::random_matrix(3, 5, rng);
    const Matrix a = testutil::random_matrix(3, 3, rng, 0.0, 1.0);
    const GnnForwardTrace t = gnn_forward(obs, a, p);
    CHECK_THROWS_AS(gnn_backward(t, Matrix(2, 8), p), std::invalid_argument);
}
