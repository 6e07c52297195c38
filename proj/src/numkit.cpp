#include "flowforget/numkit.hpp"

#include <cmath>
#include <stdexcept>

namespace flowforget {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Vector zeros(std::size_t n) { return Vector(n, 0.0); }

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform: lo > hi");
    return lo + (hi - lo) * next_double();
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
        u = 2.0 * next_double() - 1.0;
        v = 2.0 * next_double() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    std::uint64_t a = splitmix64(x);
    std::uint64_t b = splitmix64(x);
    return a ^ rotl(b, 32);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Vector matvec(const Matrix& m, const Vector& v) {
    if (m.cols != v.size()) throw std::invalid_argument("matvec: dimension mismatch");
    Vector out(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + r * m.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * v[c];
        out[r] = acc;
    }
    return out;
}

Vector matvec_transposed(const Matrix& m, const Vector& v) {
    if (m.rows != v.size()) throw std::invalid_argument("matvec_transposed: dimension mismatch");
    Vector out(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + r * m.cols;
        const double scale = v[r];
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c] * scale;
    }
    return out;
}

Vector sample_gaussian(Rng& rng, std::size_t n, double mean, double std_dev) {
    if (std_dev < 0.0) throw std::invalid_argument("sample_gaussian: std < 0");
    Vector out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) out[i] = mean + std_dev * rng.gaussian();
    return out;
}

double sample_uniform(Rng& rng, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("sample_uniform: lo > hi");
    return rng.uniform(lo, hi);
}

Matrix kaiming_uniform_init(Rng& rng, std::size_t rows, std::size_t cols) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("kaiming_uniform_init: empty shape");
    const double bound = std::sqrt(6.0 / static_cast<double>(cols));
    Matrix m(rows, cols);
    for (auto& x : m.data) x = rng.uniform(-bound, bound);
    return m;
}

double l2_norm(const Vector& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double l2_dist(const Vector& u, const Vector& v) {
    if (u.size() != v.size()) throw std::invalid_argument("l2_dist: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double dot(const Vector& u, const Vector& v) {
    if (u.size() != v.size()) throw std::invalid_argument("dot: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
    return acc;
}

void axpy(double alpha, const Vector& x, Vector& y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(const Vector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double spectral_norm(const Matrix& m) {
    if (m.rows == 0 || m.cols == 0) return 0.0;
    Vector v(m.cols, 1.0 / std::sqrt(static_cast<double>(m.cols)));
    for (int iter = 0; iter < 100; ++iter) {
        Vector w = matvec_transposed(m, matvec(m, v));
        const double n = l2_norm(w);
        if (n == 0.0) return 0.0;
        for (auto& x : w) x /= n;
        v = std::move(w);
    }
    return l2_norm(matvec(m, v));
}

}  // namespace flowforget
