#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>

#include "flowforget/numkit.hpp"

using namespace flowforget;

TEST_CASE("xoshiro256++ matches the independent reference, seed 42") {
    // Golden values from a from-scratch python implementation of
    // splitmix64-seeded xoshiro256++.
    Rng rng(42);
    CHECK(rng.next_u64() == 0xd0764d4f4476689fULL);
    CHECK(rng.next_u64() == 0x519e4174576f3791ULL);
    CHECK(rng.next_u64() == 0xfbe07cfb0c24ed8cULL);
    CHECK(rng.next_u64() == 0xb37d9f600cd835b8ULL);

    Rng r2(42);
    CHECK(r2.next_double() == doctest::Approx(0.81430514512290986).epsilon(1e-16));
    r2.next_double();
    CHECK(r2.next_double() == doctest::Approx(0.98389416817748876).epsilon(1e-16));

    Rng r3(42);
    CHECK(r3.gaussian() == doctest::Approx(0.98139839007249863).epsilon(1e-15));
    CHECK(r3.gaussian() == doctest::Approx(-0.56572010467395595).epsilon(1e-15));
    CHECK(r3.gaussian() == doctest::Approx(1.3403256427520227).epsilon(1e-15));
}

TEST_CASE("rng determinism and stream separation") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        all_equal = all_equal && (x == b.next_u64());
        any_diff = any_diff || (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);

    std::set<std::uint64_t> derived;
    for (std::uint64_t s = 0; s < 64; ++s) derived.insert(derive_seed(99, s));
    CHECK(derived.size() == 64);  // distinct streams
    CHECK(derive_seed(99, 3) == derive_seed(99, 3));
}

TEST_CASE("uniform draw range and degenerate interval") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double v = rng.uniform(-2.0, 3.0);
        CHECK(v >= -2.0);
        CHECK(v < 3.0);
    }
    CHECK(rng.uniform(1.5, 1.5) == 1.5);
    CHECK_THROWS_AS(rng.uniform(2.0, 1.0), std::invalid_argument);
}

TEST_CASE("gaussian moments") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sumsq += g * g;
    }
    const double mean = sum / n;
    const double var = (sumsq - n * mean * mean) / (n - 1);
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("matvec hand values and mismatch errors") {
    Matrix m(2, 2);
    m.at(0, 0) = 1;
    m.at(0, 1) = 2;
    m.at(1, 0) = 3;
    m.at(1, 1) = 4;
    const Vector v{5, 6};
    const Vector mv = matvec(m, v);
    CHECK(mv[0] == 17.0);
    CHECK(mv[1] == 39.0);
    const Vector mtv = matvec_transposed(m, v);
    CHECK(mtv[0] == 23.0);
    CHECK(mtv[1] == 34.0);
    CHECK_THROWS_AS(matvec(m, Vector{1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(matvec_transposed(m, Vector{1}), std::invalid_argument);
}

TEST_CASE("vector helpers") {
    CHECK(l2_norm(Vector{3, 4}) == 5.0);
    CHECK(l2_dist(Vector{1, 1}, Vector{4, 5}) == 5.0);
    CHECK(dot(Vector{1, 2, 3}, Vector{4, 5, 6}) == 32.0);
    Vector y{1, 1};
    axpy(2.0, Vector{3, 4}, y);
    CHECK(y[0] == 7.0);
    CHECK(y[1] == 9.0);
    CHECK(all_finite(Vector{0, 1e308}));
    CHECK_FALSE(all_finite(Vector{0, std::nan("")}));
    CHECK_FALSE(all_finite(Vector{1.0 / 0.0 * 1.0, 0}));
    const Matrix id = Matrix::identity(3);
    CHECK(id.at(1, 1) == 1.0);
    CHECK(id.at(0, 1) == 0.0);
}

TEST_CASE("sampling helpers") {
    Rng rng(11);
    const Vector g = sample_gaussian(rng, 1000, 2.0, 0.0);
    for (double x : g) CHECK(x == 2.0);
    CHECK_THROWS_AS(sample_gaussian(rng, 3, 0.0, -1.0), std::invalid_argument);

    const double bound = std::sqrt(6.0 / 5.0);
    const Matrix k = kaiming_uniform_init(rng, 4, 5);
    for (double x : k.data) {
        CHECK(x >= -bound);
        CHECK(x <= bound);
    }
    bool any_nonzero = false;
    for (double x : k.data) any_nonzero = any_nonzero || x != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("spectral norm") {
    Matrix d(2, 2);
    d.at(0, 0) = 3.0;
    d.at(1, 1) = -1.0;
    CHECK(spectral_norm(d) == doctest::Approx(3.0).epsilon(1e-12));

    Matrix shear(2, 2);
    shear.at(0, 0) = 1;
    shear.at(0, 1) = 1;
    shear.at(1, 1) = 1;
    // golden ratio, the largest singular value of [[1,1],[0,1]]
    CHECK(spectral_norm(shear) == doctest::Approx(1.6180339887498949).epsilon(1e-12));

    CHECK(spectral_norm(Matrix(3, 4)) == 0.0);

    // upper-bounds the action on random vectors
    Rng rng(3);
    Matrix m = kaiming_uniform_init(rng, 6, 6);
    const double sn = spectral_norm(m);
    for (int i = 0; i < 50; ++i) {
        const Vector v = sample_gaussian(rng, 6, 0.0, 1.0);
        CHECK(l2_norm(matvec(m, v)) <= sn * l2_norm(v) * (1.0 + 1e-10));
    }
}
