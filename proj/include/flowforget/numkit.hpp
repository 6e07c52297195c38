#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace flowforget {

/// Dense row-major matrix of doubles. Sizes in this project never exceed a
/// few hundred per side, so there is no blocking or sparsity.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
    static Matrix identity(std::size_t n);
};

using Vector = std::vector<double>;

Vector zeros(std::size_t n);

/// Deterministic xoshiro256++ generator, seeded through splitmix64.
/// No global state; one instance per thread of control. The same seed
/// produces the same stream on every platform: uniforms come straight from
/// the 64-bit output and gaussians use the polar method, never
/// std::*_distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform draw in [0, 1).
    double next_double();

    /// Uniform draw in [lo, hi). Requires lo <= hi; lo == hi returns lo.
    double uniform(double lo, double hi);

    /// Standard normal draw (polar method, cached spare).
    double gaussian();

private:
    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// m * v. Throws std::invalid_argument on dimension mismatch.
Vector matvec(const Matrix& m, const Vector& v);

/// m^T * v (rows of m contracted against v).
Vector matvec_transposed(const Matrix& m, const Vector& v);

/// n i.i.d. draws from N(mean, std^2). std must be >= 0.
Vector sample_gaussian(Rng& rng, std::size_t n, double mean, double std_dev);

/// One uniform draw in [lo, hi).
double sample_uniform(Rng& rng, double lo, double hi);

/// rows x cols matrix with entries uniform in [-b, b], b = sqrt(6 / cols)
/// (fan-in convention; cols is the input dimension of the affine map).
Matrix kaiming_uniform_init(Rng& rng, std::size_t rows, std::size_t cols);

double l2_norm(const Vector& v);
double l2_dist(const Vector& u, const Vector& v);

double dot(const Vector& u, const Vector& v);

/// y += alpha * x
void axpy(double alpha, const Vector& x, Vector& y);

bool all_finite(const Vector& v);

/// Largest singular value via 100 power iterations on m^T m, started from
/// the normalized all-ones vector. Deterministic; returns 0 for a zero map.
double spectral_norm(const Matrix& m);

}  // namespace flowforget
