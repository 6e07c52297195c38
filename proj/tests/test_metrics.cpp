#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowforget/errors.hpp"
#include "flowforget/metrics.hpp"
#include "flowforget/vecfield.hpp"

using namespace flowforget;

namespace {

ToyWorld small_world() {
    WorldConfig cfg;
    cfg.k = 3;
    cfg.latent_dim = 4;
    cfg.obs_dim = 8;
    cfg.n_stages = 1;
    cfg.cluster_std = 0.2;
    cfg.embed_dim = 4;
    cfg.seed = 1;
    return build_toy_world(cfg);
}

const ToyWorld& default_world() {
    static const ToyWorld world = build_toy_world(WorldConfig{});
    return world;
}

AdapterStack zero_stack(const ToyWorld& world) {
    Rng rng(5);
    return init_adapter_stack(world, rng, 32, SolverSpec{});
}

AdapterStack random_stack(const ToyWorld& world, double scale, std::uint64_t seed) {
    AdapterStack stack = zero_stack(world);
    Rng rng(seed);
    for (auto& ad : stack.adapters)
        ad.params = random_field_params(rng, ad.params.dim(), 32, scale);
    return stack;
}

bool reports_equal(const MetricReport& a, const MetricReport& b) {
    return a.id_score == b.id_score && a.id_avg == b.id_avg && a.mmd_retain == b.mmd_retain &&
           a.retention_accuracy == b.retention_accuracy && a.forget_rate == b.forget_rate &&
           a.leakage == b.leakage;
}

}  // namespace

TEST_CASE("id_similarity: self, antipodal, orthogonal, degenerate") {
    ToyWorld world = small_world();
    Rng rng(3);
    Vector x = generate(world, nullptr, sample_identity(world, rng, 0));

    CHECK(id_similarity(world, x, x) == 1.0);

    Vector neg = x;
    for (double& c : neg) c = -c;
    CHECK(id_similarity(world, x, neg) == -1.0);

    // observations whose identity embeddings are (numerically) orthogonal
    // basis vectors: x = E^T e_i with orthonormal rows E
    Vector e0(world.cfg.embed_dim, 0.0), e1(world.cfg.embed_dim, 0.0);
    e0[0] = 1.0;
    e1[1] = 1.0;
    Vector xb = matvec_transposed(world.embed_id, e0);
    Vector xa = matvec_transposed(world.embed_id, e1);
    CHECK(std::abs(id_similarity(world, xb, xa)) < 1e-12);

    Vector zero(world.cfg.obs_dim, 0.0);
    CHECK_THROWS_AS((void)id_similarity(world, x, zero), ConfigError);
}

TEST_CASE("mmd: fixed-instance goldens match the independent oracle") {
    std::vector<Vector> xs = {{0.0, 0.0}, {1.0, 0.0}, {0.5, 0.25}};
    std::vector<Vector> ys = {{0.0, 1.0}, {2.0, 0.0}, {1.5, -0.5}};
    CHECK(mmd(xs, ys) == doctest::Approx(0.15667487191522056).epsilon(1e-12));
    CHECK(mmd_biased(xs, ys) == doctest::Approx(0.45850750296137111).epsilon(1e-12));
    CHECK(mmd(xs, xs) == doctest::Approx(-0.35223159168446172).epsilon(1e-12));
    CHECK(mmd(xs, xs) <= 0.0);
}

TEST_CASE("mmd: biased variant is exactly zero on identical multisets") {
    std::vector<Vector> xs = {{0.0, 0.0}, {1.0, 0.0}, {0.5, 0.25}, {-1.0, 2.0}};
    CHECK(mmd_biased(xs, xs) == 0.0);
    CHECK(std::abs(mmd_biased(xs, xs)) < 1e-10);
}

TEST_CASE("mmd: separated clouds, symmetry, bitwise permutation invariance") {
    Rng rng(42);
    std::vector<Vector> a, b;
    for (int i = 0; i < 200; ++i) a.push_back(sample_gaussian(rng, 4, 0.0, 1.0));
    for (int i = 0; i < 200; ++i) b.push_back(sample_gaussian(rng, 4, 10.0, 1.0));

    const double v = mmd(a, b);
    CHECK(v > 0.5);  // centers 10 sigma apart
    CHECK(v == doctest::Approx(1.0488827688093814).epsilon(1e-12));
    CHECK(mmd(b, a) == v);

    std::vector<Vector> ap(a.rbegin(), a.rend());
    std::vector<Vector> bp(b.begin() + 57, b.end());
    bp.insert(bp.end(), b.begin(), b.begin() + 57);
    CHECK(mmd(ap, bp) == v);

    std::vector<Vector> c;
    for (int i = 0; i < 200; ++i) c.push_back(sample_gaussian(rng, 4, 0.0, 1.0));
    CHECK(std::abs(mmd(a, c)) < 0.05);  // same distribution
}

TEST_CASE("mmd: preconditions") {
    std::vector<Vector> one = {{0.0, 0.0}};
    std::vector<Vector> two = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<Vector> same = {{1.0, 1.0}, {1.0, 1.0}};
    CHECK_THROWS_AS((void)mmd(one, two), ConfigError);
    CHECK_THROWS_AS((void)mmd(two, one), ConfigError);
    CHECK_THROWS_AS((void)mmd_biased({}, two), ConfigError);
    CHECK_THROWS_WITH_AS((void)mmd(same, same), doctest::Contains("degenerate"), ConfigError);
}

TEST_CASE("id_avg: identity stack scores exactly one") {
    ToyWorld world = small_world();
    AdapterStack stack = zero_stack(world);
    GenFn adapted = stack_generator(world, stack);
    Rng rng(21);
    CHECK(id_avg(world, adapted, 0, 5, rng) == 1.0);
}

TEST_CASE("id_avg: n = 1 reduces to a single id_similarity") {
    ToyWorld world = small_world();
    AdapterStack stack = random_stack(world, 0.3, 23);
    GenFn adapted = stack_generator(world, stack);

    Rng ra(77);
    const double avg = id_avg(world, adapted, 1, 1, ra);
    Rng rb(77);
    Vector w = sample_identity(world, rb, 1);
    CHECK(avg == id_similarity(world, generate(world, nullptr, w), adapted(w)));

    Rng rc(77);
    CHECK_THROWS_AS((void)id_avg(world, adapted, 0, 0, rc), ConfigError);
    CHECK_THROWS_AS((void)id_avg(world, adapted, world.cfg.k, 1, rc), ConfigError);
}

TEST_CASE("retention and forget rate on the untouched default world") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    GenFn adapted = stack_generator(world, stack);

    Rng rng(11);
    ClassStats cs = retention_forget_rate(world, adapted, {0}, rng, 50);
    CHECK(cs.retention_accuracy >= 0.99);
    CHECK(cs.forget_rate >= 0.99);  // nothing forgotten yet
    CHECK(cs.retention_accuracy == 1.0);
    CHECK(cs.forget_rate == 1.0);

    Rng r2(11);
    CHECK_THROWS_AS((void)retention_forget_rate(world, adapted, {0}, r2, 9), ConfigError);
    CHECK_THROWS_AS((void)retention_forget_rate(world, adapted, {world.cfg.k}, r2, 10),
                    ConfigError);
}

TEST_CASE("retention: point clusters classify perfectly") {
    WorldConfig cfg;
    cfg.k = 2;
    cfg.latent_dim = 3;
    cfg.obs_dim = 6;
    cfg.n_stages = 1;
    cfg.cluster_std = 0.0;
    cfg.embed_dim = 4;
    cfg.seed = 1;
    ToyWorld world = build_toy_world(cfg);
    GenFn frozen = frozen_generator(world);
    Rng rng(9);
    ClassStats cs = retention_forget_rate(world, frozen, {}, rng, 10);
    CHECK(cs.retention_accuracy == 1.0);
    CHECK(cs.forget_rate == 0.0);
}

TEST_CASE("leakage: uniform prototype distances give exactly 1/k") {
    ToyWorld world = default_world();
    for (auto& p : world.id_prototypes) p = world.id_prototypes[0];
    GenFn frozen = frozen_generator(world);
    Rng rng(15);
    CHECK(leakage(world, frozen, 0, rng, 10) == 0.125);
}

TEST_CASE("leakage: well-separated frozen world stays under 1e-3") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    GenFn adapted = stack_generator(world, stack);
    Rng rng(7);
    const double v = leakage(world, adapted, 0, rng, 200);
    CHECK(v == doctest::Approx(0.00018418148114614574).epsilon(1e-12));
    CHECK(v < 1e-3);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);

    Rng r2(7);
    CHECK_THROWS_AS((void)leakage(world, adapted, 0, r2, 9), ConfigError);
    CHECK_THROWS_AS((void)leakage(world, adapted, world.cfg.k, r2, 10), ConfigError);
}

TEST_CASE("evaluate: identity stack report and determinism") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    GenFn adapted = stack_generator(world, stack);
    std::vector<Vector> w_u;
    Rng wr(13);
    for (int i = 0; i < 2; ++i) w_u.push_back(sample_identity(world, wr, 0));

    MetricReport r = evaluate(world, adapted, {0}, w_u, 99);
    CHECK(r.id_score == 1.0);
    CHECK(r.id_avg == 1.0);
    CHECK(r.mmd_retain == -1e-12);  // floored estimator noise
    CHECK(r.retention_accuracy == 1.0);
    CHECK(r.forget_rate == 1.0);
    CHECK(r.leakage < 1e-3);

    CHECK(reports_equal(r, evaluate(world, adapted, {0}, w_u, 99)));
    CHECK(reports_equal(r, noise_attack_eval(world, adapted, {0}, w_u, 0.0, 99)));
}

TEST_CASE("evaluate: distorted stack moves every metric the right way") {
    const ToyWorld& world = default_world();
    AdapterStack rs = random_stack(world, 0.5, 23);
    std::vector<Vector> w_u;
    Rng wr(13);
    for (int i = 0; i < 2; ++i) w_u.push_back(sample_identity(world, wr, 0));

    MetricReport r = evaluate(world, stack_generator(world, rs), {0}, w_u, 99);
    CHECK(r.mmd_retain > 0.1);
    CHECK(r.retention_accuracy < 0.9);
    CHECK(r.id_score < 0.9);
    CHECK(r.retention_accuracy >= 0.0);
    CHECK(r.forget_rate <= 1.0);
    CHECK(r.leakage >= 0.0);
    CHECK(r.leakage <= 1.0);
}

TEST_CASE("evaluate: input validation") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    GenFn adapted = stack_generator(world, stack);
    std::vector<Vector> w_u = {Vector(world.cfg.latent_dim, 0.1)};

    CHECK_THROWS_AS((void)evaluate(world, adapted, {}, w_u, 1), ConfigError);
    CHECK_THROWS_AS((void)evaluate(world, adapted, {world.cfg.k}, w_u, 1), ConfigError);
    CHECK_THROWS_AS((void)evaluate(world, adapted, {0}, {}, 1), ConfigError);
    CHECK_THROWS_AS((void)evaluate(world, adapted, {0}, {Vector(3, 0.0)}, 1), ConfigError);
    CHECK_THROWS_AS((void)evaluate(world, adapted, {0, 1, 2, 3, 4, 5, 6, 7}, w_u, 1),
                    ConfigError);
    CHECK_THROWS_AS((void)noise_attack_eval(world, adapted, {0}, w_u, -0.5, 1), ConfigError);
    EvalCounts bad;
    bad.n_per_id = 5;
    CHECK_THROWS_AS((void)evaluate(world, adapted, {0}, w_u, 1, bad), ConfigError);
}

TEST_CASE("noise attack: small noise barely moves rates, large noise levels them") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    GenFn adapted = stack_generator(world, stack);
    std::vector<Vector> w_u;
    Rng wr(13);
    for (int i = 0; i < 2; ++i) w_u.push_back(sample_identity(world, wr, 0));

    MetricReport r0 = evaluate(world, adapted, {0}, w_u, 99);
    MetricReport rs = noise_attack_eval(world, adapted, {0}, w_u,
                                        0.1 * world.cfg.cluster_std, 99);
    CHECK(std::abs(rs.forget_rate - r0.forget_rate) <= 0.1);

    MetricReport rh = noise_attack_eval(world, adapted, {0}, w_u, 100.0, 99);
    CHECK(std::abs(rh.retention_accuracy - 1.0 / 8.0) <= 0.1);  // toward 1/k
}

TEST_CASE("trajectory non-crossing: identity flow keeps the full margin") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    Rng rng(17);
    NoncrossReport rep = check_trajectory_noncrossing(world, stack, 0, 1, rng, 10);
    CHECK(rep.pass);
    CHECK(rep.min_margin_ratio == 1.0);  // constant trajectories

    Rng r2(17);
    CHECK_THROWS_WITH_AS(
        (void)check_trajectory_noncrossing(world, stack, 2, 2, r2, 10),
        doctest::Contains("identities must differ"), ConfigError);
    CHECK_THROWS_AS((void)check_trajectory_noncrossing(world, stack, 0, world.cfg.k, r2, 10),
                    ConfigError);
    CHECK_THROWS_AS((void)check_trajectory_noncrossing(world, stack, 0, 1, r2, 0), ConfigError);
}

TEST_CASE("trajectory non-crossing: random smooth fields hold the margin") {
    const ToyWorld& world = default_world();
    AdapterStack rs = random_stack(world, 0.3, 23);
    Rng rng(31);
    NoncrossReport rep = check_trajectory_noncrossing(world, rs, 0, 3, rng, 20);
    CHECK(rep.pass);
    CHECK(rep.min_margin_ratio >= 0.95);

    AdapterStack empty;
    Rng r2(31);
    NoncrossReport none = check_trajectory_noncrossing(world, empty, 0, 1, r2, 5);
    CHECK(none.pass);
    CHECK(none.min_margin_ratio == 1.0);
}

TEST_CASE("smoothness: zero field satisfies the bound exactly") {
    const ToyWorld& world = default_world();
    AdapterStack stack = zero_stack(world);
    Rng rng(19);
    SmoothnessReport rep = check_smoothness(stack, rng, 10, 1e-3);
    CHECK(rep.gronwall_pass);
    CHECK(rep.max_gronwall_ratio == 1.0);  // flow difference == input difference
    CHECK(rep.order_pass);
    CHECK(rep.convergence_order == 2.0);
}

TEST_CASE("smoothness: random field with LT < 2 passes 100 pairs") {
    const ToyWorld& world = default_world();
    AdapterStack rs = random_stack(world, 0.1, 23);
    for (const auto& ad : rs.adapters)
        REQUIRE(lipschitz_upper_bound(ad.params) * ad.spec.horizon() < 2.0);
    Rng rng(29);
    SmoothnessReport rep = check_smoothness(rs, rng, 100, 1e-3);
    CHECK(rep.gronwall_pass);
    CHECK(rep.max_gronwall_ratio <= 1.05);
    CHECK(rep.order_pass);
    CHECK(rep.convergence_order >= 1.8);
    CHECK(rep.convergence_order <= 2.2);

    Rng r2(29);
    CHECK_THROWS_AS((void)check_smoothness(rs, r2, 0, 1e-3), ConfigError);
    CHECK_THROWS_AS((void)check_smoothness(rs, r2, 10, 0.0), ConfigError);
    CHECK_THROWS_AS((void)check_smoothness(rs, r2, 10, -1e-3), ConfigError);

    AdapterStack empty;
    Rng r3(29);
    SmoothnessReport none = check_smoothness(empty, r3, 5, 1e-3);
    CHECK(none.gronwall_pass);
    CHECK(none.order_pass);
    CHECK(none.convergence_order == 2.0);
}

TEST_CASE("theorem checks leave stack and world untouched") {
    const ToyWorld& world = default_world();
    AdapterStack rs = random_stack(world, 0.3, 23);
    const std::uint64_t before = world_checksum(world);
    Vector p_before = rs.adapters[0].params.w2.data;

    Rng rng(37);
    (void)check_trajectory_noncrossing(world, rs, 0, 1, rng, 3);
    (void)check_smoothness(rs, rng, 3, 1e-3);
    CHECK(world_checksum(world) == before);
    CHECK(rs.adapters[0].params.w2.data == p_before);
}
