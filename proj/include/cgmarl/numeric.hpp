#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cgmarl {

// Dense row-major matrix of 64-bit reals. All learned parameters, adjacency
// matrices and stacked embeddings in this project live in this type.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0);

    static Matrix identity(int n);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;
};

struct Vector {
    std::vector<double> data;

    Vector() = default;
    explicit Vector(int n, double fill = 0.0) : data(static_cast<size_t>(n), fill) {}
    explicit Vector(std::vector<double> values) : data(std::move(values)) {}

    int size() const { return static_cast<int>(data.size()); }
    double& operator[](int i) { return data[static_cast<size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<size_t>(i)]; }
};

bool operator==(const Matrix& a, const Matrix& b);
bool operator==(const Vector& a, const Vector& b);

// Throws std::invalid_argument naming both shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T and a^T * b; the backprop hot paths.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
void add_inplace(Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Vector matvec(const Matrix& a, const Vector& x);

// Elementwise max(0, x). Backward passes upstream where x > 0 and zero
// elsewhere; the subgradient at exactly 0 is 0.
Vector relu(const Vector& x);
Vector relu_backward(const Vector& x, const Vector& upstream);
Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& upstream);

double elu(double x);
double elu_grad(double x);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);
void require_finite(const Matrix& m, const char* context);

struct AdamHyper {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter Adam state; m and v match the parameter shape.
struct AdamState {
    Matrix m;
    Matrix v;
    long t = 0;
    AdamHyper hyper;

    AdamState() = default;
    AdamState(int rows, int cols, AdamHyper hp = {});
};

// Standard Adam update with bias correction; increments state.t.
void adam_step(Matrix& param, const Matrix& grad, AdamState& state);

// Small deterministic PRNG (splitmix64). Every source of randomness in the
// project flows through one of these, seeded from the run seed, so identical
// seeds give bit-identical runs on any platform.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    int uniform_int(int n);                 // [0, n)

    // Deterministic sub-stream; distinct stream ids give independent rngs.
    Rng fork(uint64_t stream) const;

private:
    uint64_t state_;
    uint64_t seed_;
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Matrix init_uniform(int rows, int cols, int fan_in, Rng& rng);

}  // namespace cgmarl
