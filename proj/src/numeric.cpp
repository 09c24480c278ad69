#include "cgmarl/numeric.hpp"

#include <cmath>
#include <stdexcept>

namespace cgmarl {

Matrix::Matrix(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimensions");
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n, 0.0);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Matrix();
    Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int r = 0; r < m.rows; ++r) {
        if (static_cast<int>(rows[r].size()) != m.cols)
            throw std::invalid_argument("Matrix::from_rows: ragged rows");
        for (int c = 0; c < m.cols; ++c) m.at(r, c) = rows[r][c];
    }
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

bool operator==(const Vector& a, const Vector& b) { return a.data == b.data; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: dimension mismatch (" + a.shape_str() +
                                    " vs " + b.shape_str() + ")");
    Matrix out(a.rows, b.cols, 0.0);
    // ikj order keeps b row-contiguous in the inner loop.
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* orow = out.data.data() + static_cast<size_t>(i) * out.cols;
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_nt: dimension mismatch (" + a.shape_str() +
                                    " vs " + b.shape_str() + "^T)");
    Matrix out(a.rows, b.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        double* orow = out.data.data() + static_cast<size_t>(i) * out.cols;
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + static_cast<size_t>(j) * b.cols;
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_tn: dimension mismatch (" + a.shape_str() +
                                    "^T vs " + b.shape_str() + ")");
    Matrix out(a.cols, b.cols, 0.0);
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + static_cast<size_t>(k) * a.cols;
        const double* brow = b.data.data() + static_cast<size_t>(k) * b.cols;
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.data.data() + static_cast<size_t>(i) * out.cols;
            for (int j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c) out.at(c, r) = a.at(r, c);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    add_inplace(out, b);
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch (" + a.shape_str() + " vs " +
                                    b.shape_str() + ")");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data) v *= s;
    return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
    if (a.cols != x.size())
        throw std::invalid_argument("matvec: dimension mismatch (" + a.shape_str() +
                                    " vs len " + std::to_string(x.size()) + ")");
    Vector out(a.rows);
    for (int r = 0; r < a.rows; ++r) {
        double acc = 0.0;
        const double* arow = a.data.data() + static_cast<size_t>(r) * a.cols;
        for (int c = 0; c < a.cols; ++c) acc += arow[c] * x[c];
        out[r] = acc;
    }
    return out;
}

Vector relu(const Vector& x) {
    Vector out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Vector relu_backward(const Vector& x, const Vector& upstream) {
    if (x.size() != upstream.size())
        throw std::invalid_argument("relu_backward: length mismatch");
    Vector out(x.size());
    for (int i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
    return out;
}

Matrix relu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Matrix relu_backward(const Matrix& x, const Matrix& upstream) {
    if (!x.same_shape(upstream))
        throw std::invalid_argument("relu_backward: shape mismatch");
    Matrix out(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = x.data[i] > 0.0 ? upstream.data[i] : 0.0;
    return out;
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool all_finite(const Vector& v) {
    for (double x : v.data)
        if (!std::isfinite(x)) return false;
    return true;
}

void require_finite(const Matrix& m, const char* context) {
    if (!all_finite(m))
        throw std::runtime_error(std::string(context) + ": non-finite entries");
}

AdamState::AdamState(int rows, int cols, AdamHyper hp)
    : m(rows, cols, 0.0), v(rows, cols, 0.0), t(0), hyper(hp) {}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state) {
    if (!param.same_shape(grad) || !param.same_shape(state.m))
        throw std::invalid_argument("adam_step: shape mismatch (param " + param.shape_str() +
                                    ", grad " + grad.shape_str() + ", state " +
                                    state.m.shape_str() + ")");
    state.t += 1;
    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t i = 0; i < param.data.size(); ++i) {
        const double g = grad.data[i];
        state.m.data[i] = b1 * state.m.data[i] + (1.0 - b1) * g;
        state.v.data[i] = b2 * state.v.data[i] + (1.0 - b2) * g * g;
        const double mhat = state.m.data[i] / bc1;
        const double vhat = state.v.data[i] / bc2;
        param.data[i] -= state.hyper.lr * mhat / (std::sqrt(vhat) + state.hyper.eps);
    }
}

namespace {
uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace

Rng::Rng(uint64_t seed) : state_(seed), seed_(seed) {
    // Scramble once so seeds 0,1,2,... start well apart.
    splitmix64(state_);
}

uint64_t Rng::next() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    return static_cast<int>(next() % static_cast<uint64_t>(n));
}

Rng Rng::fork(uint64_t stream) const {
    uint64_t s = seed_ ^ (0xA24BAED4963EE407ULL * (stream + 1));
    splitmix64(s);
    return Rng(s);
}

Matrix init_uniform(int rows, int cols, int fan_in, Rng& rng) {
    if (fan_in <= 0) throw std::invalid_argument("init_uniform: fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(-bound, bound);
    return m;
}

}  // namespace cgmarl
