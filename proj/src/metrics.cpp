#include "flowforget/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>

#include "flowforget/errors.hpp"
#include "flowforget/odeflow.hpp"
#include "flowforget/vecfield.hpp"

namespace flowforget {

namespace {

std::string str_printf(const char* fmt, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    return buf;
}

// dot / sqrt(daa * dbb) instead of dot / (|a| * |b|): sqrt of the exact
// product keeps self-similarity at exactly 1.0 and antipodal at exactly -1.0.
double cosine(const Vector& a, const Vector& b) {
    const double daa = dot(a, a);
    const double dbb = dot(b, b);
    if (daa == 0.0 || dbb == 0.0) throw ConfigError("id_similarity: zero-norm identity embedding");
    return dot(a, b) / std::sqrt(daa * dbb);
}

Vector noised_copy(const Vector& w, double noise_std, Rng& rng) {
    Vector out = w;
    if (noise_std != 0.0) axpy(noise_std, sample_gaussian(rng, w.size(), 0.0, 1.0), out);
    return out;
}

double id_avg_noised(const ToyWorld& world, const GenFn& adapted, std::size_t id, std::size_t n,
                     Rng& rng, double noise_std) {
    if (n == 0) throw ConfigError("id_avg: n must be positive");
    if (id >= world.cfg.k) throw ConfigError("id_avg: identity out of range");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vector w = noised_copy(sample_identity(world, rng, id), noise_std, rng);
        acc += id_similarity(world, generate(world, nullptr, w), adapted(w));
    }
    return acc / static_cast<double>(n);
}

ClassStats class_stats_noised(const ToyWorld& world, const GenFn& adapted,
                              const std::vector<std::size_t>& forgotten_ids, Rng& rng,
                              std::size_t n_per_id, double noise_std) {
    if (n_per_id < 10) throw ConfigError("retention_forget_rate: n_per_id must be >= 10");
    for (std::size_t id : forgotten_ids)
        if (id >= world.cfg.k) throw ConfigError("retention_forget_rate: forgotten id out of range");
    std::size_t retain_hits = 0, retain_total = 0, forget_hits = 0, forget_total = 0;
    for (std::size_t id = 0; id < world.cfg.k; ++id) {
        const bool forgotten =
            std::find(forgotten_ids.begin(), forgotten_ids.end(), id) != forgotten_ids.end();
        for (std::size_t i = 0; i < n_per_id; ++i) {
            const Vector w = noised_copy(sample_identity(world, rng, id), noise_std, rng);
            const bool hit = classify(world, adapted(w)) == id;
            if (forgotten) {
                ++forget_total;
                forget_hits += hit;
            } else {
                ++retain_total;
                retain_hits += hit;
            }
        }
    }
    ClassStats out;
    out.retention_accuracy =
        retain_total ? static_cast<double>(retain_hits) / static_cast<double>(retain_total) : 1.0;
    out.forget_rate =
        forget_total ? static_cast<double>(forget_hits) / static_cast<double>(forget_total) : 0.0;
    return out;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
    auto idx = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(n)));
    return idx < n ? idx : n - 1;
}

double leakage_noised(const ToyWorld& world, const GenFn& adapted, std::size_t forgotten_id,
                      Rng& rng, std::size_t n, double noise_std) {
    if (n < 10) throw ConfigError("leakage: n must be >= 10");
    const std::size_t k = world.cfg.k;
    if (forgotten_id >= k) throw ConfigError("leakage: forgotten id out of range");
    double acc = 0.0;
    std::vector<double> score(k);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t draw = uniform_index(rng, k - 1);
        const std::size_t id = draw < forgotten_id ? draw : draw + 1;
        const Vector w = noised_copy(sample_identity(world, rng, id), noise_std, rng);
        const Vector e = embed_identity(world, adapted(w));
        double smax = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            const double d = l2_dist(e, world.id_prototypes[j]);
            score[j] = -(d * d);
            smax = std::max(smax, score[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            score[j] = std::exp(score[j] - smax);
            z += score[j];
        }
        acc += score[forgotten_id] / z;
    }
    return acc / static_cast<double>(n);
}

// Accumulating kernel terms in sorted order makes every estimate a pure
// function of the input multisets: permutation-invariant and symmetric down
// to the last bit.
double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

double rbf_gamma(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
    std::vector<double> d;
    const std::size_t total = xs.size() + ys.size();
    d.reserve(total * (total - 1) / 2);
    auto at = [&](std::size_t i) -> const Vector& {
        return i < xs.size() ? xs[i] : ys[i - xs.size()];
    };
    for (std::size_t i = 0; i < total; ++i)
        for (std::size_t j = i + 1; j < total; ++j) d.push_back(l2_dist(at(i), at(j)));
    std::sort(d.begin(), d.end());
    const std::size_t m = d.size();
    const double median = (m % 2 == 1) ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
    if (!(median > 0.0))
        throw ConfigError("mmd: pooled sample has zero median distance (degenerate bandwidth)");
    return 1.0 / (2.0 * median * median);
}

double rbf(double gamma, const Vector& a, const Vector& b) {
    const double d = l2_dist(a, b);
    return std::exp(-gamma * d * d);
}

}  // namespace

double id_similarity(const ToyWorld& world, const Vector& x_before, const Vector& x_after) {
    return cosine(embed_identity(world, x_before), embed_identity(world, x_after));
}

double id_avg(const ToyWorld& world, const GenFn& adapted, std::size_t id, std::size_t n,
              Rng& rng) {
    return id_avg_noised(world, adapted, id, n, rng, 0.0);
}

double mmd(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
    if (xs.size() < 2 || ys.size() < 2)
        throw ConfigError("mmd: needs at least two samples per side");
    const double gamma = rbf_gamma(xs, ys);
    std::vector<double> txx, tyy, txy;
    txx.reserve(xs.size() * (xs.size() - 1) / 2);
    tyy.reserve(ys.size() * (ys.size() - 1) / 2);
    txy.reserve(xs.size() * ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j) txx.push_back(rbf(gamma, xs[i], xs[j]));
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t j = i + 1; j < ys.size(); ++j) tyy.push_back(rbf(gamma, ys[i], ys[j]));
    for (const Vector& x : xs)
        for (const Vector& y : ys) txy.push_back(rbf(gamma, x, y));
    const double m = static_cast<double>(xs.size());
    const double n = static_cast<double>(ys.size());
    return 2.0 * sorted_sum(txx) / (m * (m - 1.0)) + 2.0 * sorted_sum(tyy) / (n * (n - 1.0)) -
           2.0 * (sorted_sum(txy) / (m * n));
}

double mmd_biased(const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
    if (xs.empty() || ys.empty()) throw ConfigError("mmd_biased: empty sample");
    const double gamma = rbf_gamma(xs, ys);
    // Full ordered-pair sums on every term: with xs == ys the three sorted
    // sums are bitwise identical and the estimate cancels to exactly zero.
    std::vector<double> txx, tyy, txy;
    txx.reserve(xs.size() * xs.size());
    tyy.reserve(ys.size() * ys.size());
    txy.reserve(xs.size() * ys.size());
    for (const Vector& a : xs)
        for (const Vector& b : xs) txx.push_back(rbf(gamma, a, b));
    for (const Vector& a : ys)
        for (const Vector& b : ys) tyy.push_back(rbf(gamma, a, b));
    for (const Vector& x : xs)
        for (const Vector& y : ys) txy.push_back(rbf(gamma, x, y));
    const double m = static_cast<double>(xs.size());
    const double n = static_cast<double>(ys.size());
    return sorted_sum(txx) / (m * m) + sorted_sum(tyy) / (n * n) -
           2.0 * (sorted_sum(txy) / (m * n));
}

ClassStats retention_forget_rate(const ToyWorld& world, const GenFn& adapted,
                                 const std::vector<std::size_t>& forgotten_ids, Rng& rng,
                                 std::size_t n_per_id) {
    return class_stats_noised(world, adapted, forgotten_ids, rng, n_per_id, 0.0);
}

double leakage(const ToyWorld& world, const GenFn& adapted, std::size_t forgotten_id, Rng& rng,
               std::size_t n) {
    return leakage_noised(world, adapted, forgotten_id, rng, n, 0.0);
}

namespace {

MetricReport eval_core(const ToyWorld& world, const GenFn& adapted,
                       const std::vector<std::size_t>& forgotten_ids,
                       const std::vector<Vector>& w_u_set, double noise_std, std::uint64_t seed,
                       const EvalCounts& counts) {
    if (forgotten_ids.empty()) throw ConfigError("evaluate: forgotten_ids is empty");
    for (std::size_t id : forgotten_ids)
        if (id >= world.cfg.k) throw ConfigError("evaluate: forgotten id out of range");
    if (w_u_set.empty()) throw ConfigError("evaluate: w_u_set is empty");
    for (const Vector& w : w_u_set)
        if (w.size() != world.cfg.latent_dim)
            throw ConfigError("evaluate: latent dimension mismatch in w_u_set");
    if (!std::isfinite(noise_std) || noise_std < 0.0)
        throw ConfigError("noise_std: must be finite and >= 0");
    if (counts.id_avg_n == 0 || counts.mmd_n < 2 || counts.n_per_id < 10 ||
        counts.leakage_n < 10)
        throw ConfigError("evaluate: counts out of range");

    std::vector<std::size_t> retain_ids;
    for (std::size_t id = 0; id < world.cfg.k; ++id)
        if (std::find(forgotten_ids.begin(), forgotten_ids.end(), id) == forgotten_ids.end())
            retain_ids.push_back(id);
    if (retain_ids.empty()) throw ConfigError("evaluate: every identity is forgotten");

    MetricReport r;

    {  // similarity at the actually-unlearned latents
        Rng rng(derive_seed(seed, 20));
        double acc = 0.0;
        for (const Vector& w0 : w_u_set) {
            const Vector w = noised_copy(w0, noise_std, rng);
            acc += id_similarity(world, generate(world, nullptr, w), adapted(w));
        }
        r.id_score = acc / static_cast<double>(w_u_set.size());
    }
    {  // cluster-level similarity over the forgotten identities
        Rng rng(derive_seed(seed, 21));
        double acc = 0.0;
        for (std::size_t id : forgotten_ids)
            acc += id_avg_noised(world, adapted, id, counts.id_avg_n, rng, noise_std);
        r.id_avg = acc / static_cast<double>(forgotten_ids.size());
    }
    {  // nearest-prototype classification
        Rng rng(derive_seed(seed, 22));
        const ClassStats cs =
            class_stats_noised(world, adapted, forgotten_ids, rng, counts.n_per_id, noise_std);
        r.retention_accuracy = cs.retention_accuracy;
        r.forget_rate = cs.forget_rate;
    }
    {  // adapted vs frozen retain outputs, independent draws per side
        Rng rng_a(derive_seed(seed, 23));
        Rng rng_f(derive_seed(seed, 24));
        auto retain_draw = [&](Rng& rng) {
            const std::size_t id = retain_ids[uniform_index(rng, retain_ids.size())];
            return noised_copy(sample_identity(world, rng, id), noise_std, rng);
        };
        std::vector<Vector> adapted_out, frozen_out;
        adapted_out.reserve(counts.mmd_n);
        frozen_out.reserve(counts.mmd_n);
        for (std::size_t i = 0; i < counts.mmd_n; ++i) adapted_out.push_back(adapted(retain_draw(rng_a)));
        for (std::size_t i = 0; i < counts.mmd_n; ++i)
            frozen_out.push_back(generate(world, nullptr, retain_draw(rng_f)));
        r.mmd_retain = std::max(mmd(adapted_out, frozen_out), -1e-12);
    }
    {  // softmax attribution leaking onto the forgotten identities
        Rng rng(derive_seed(seed, 25));
        double acc = 0.0;
        for (std::size_t id : forgotten_ids)
            acc += leakage_noised(world, adapted, id, rng, counts.leakage_n, noise_std);
        r.leakage = acc / static_cast<double>(forgotten_ids.size());
    }
    return r;
}

}  // namespace

MetricReport evaluate(const ToyWorld& world, const GenFn& adapted,
                      const std::vector<std::size_t>& forgotten_ids,
                      const std::vector<Vector>& w_u_set, std::uint64_t seed,
                      const EvalCounts& counts) {
    return eval_core(world, adapted, forgotten_ids, w_u_set, 0.0, seed, counts);
}

MetricReport noise_attack_eval(const ToyWorld& world, const GenFn& adapted,
                               const std::vector<std::size_t>& forgotten_ids,
                               const std::vector<Vector>& w_u_set, double noise_std,
                               std::uint64_t seed, const EvalCounts& counts) {
    return eval_core(world, adapted, forgotten_ids, w_u_set, noise_std, seed, counts);
}

namespace {

SolverSpec fine_grid(double horizon) {
    SolverSpec s;
    s.method = SolverMethod::rk4;
    s.steps = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(horizon / 0.01 - 1e-9)));
    s.step_size = horizon / static_cast<double>(s.steps);
    return s;
}

Vector stage_forward(const AffineStage& st, const Vector& h) {
    Vector v = matvec(st.w, h);
    for (std::size_t t = 0; t < v.size(); ++t) v[t] = std::tanh(v[t] + st.b[t]);
    return v;
}

}  // namespace

NoncrossReport check_trajectory_noncrossing(const ToyWorld& world, const AdapterStack& stack,
                                            std::size_t id_i, std::size_t id_j, Rng& rng,
                                            std::size_t n_pairs) {
    if (id_i == id_j)
        throw ConfigError("check_trajectory_noncrossing: identities must differ");
    if (id_i >= world.cfg.k || id_j >= world.cfg.k)
        throw ConfigError("check_trajectory_noncrossing: identity out of range");
    if (n_pairs == 0) throw ConfigError("check_trajectory_noncrossing: n_pairs must be positive");

    const double inf = std::numeric_limits<double>::infinity();
    double min_ratio = inf;
    std::size_t worst_pair = 0, worst_stage = 0;
    double worst_time = 0.0;
    bool any = false;

    for (std::size_t p = 0; p < n_pairs; ++p) {
        Vector h_i = sample_identity(world, rng, id_i);
        Vector h_j = sample_identity(world, rng, id_j);
        for (std::size_t s = 0; s < world.n_stages(); ++s) {
            Vector v_i = stage_forward(world.synth_stages[s], h_i);
            Vector v_j = stage_forward(world.synth_stages[s], h_j);
            for (const AdapterEntry& ad : stack.adapters) {
                if (ad.stage_index != s) continue;
                const SolverSpec fine = fine_grid(ad.spec.horizon());
                const Trajectory ti = integrate(v_i, ad.params, fine);
                const Trajectory tj = integrate(v_j, ad.params, fine);
                const double d0 = l2_dist(v_i, v_j);
                if (d0 > 0.0) {
                    any = true;
                    const double lip = lipschitz_upper_bound(ad.params);
                    for (std::size_t n = 0; n < ti.states.size(); ++n) {
                        const double dk = l2_dist(ti.states[n], tj.states[n]);
                        const double bound = std::exp(-lip * ti.times[n]) * d0;
                        const double ratio =
                            bound > 0.0 ? dk / bound : (dk > 0.0 ? inf : 1.0);
                        if (ratio < min_ratio) {
                            min_ratio = ratio;
                            worst_pair = p;
                            worst_stage = s;
                            worst_time = ti.times[n];
                        }
                    }
                }
                v_i = ti.states.back();
                v_j = tj.states.back();
            }
            h_i = std::move(v_i);
            h_j = std::move(v_j);
        }
    }

    NoncrossReport rep;
    if (!any) {
        rep.pass = true;
        rep.min_margin_ratio = 1.0;
        rep.detail = "no adapter flows to check";
        return rep;
    }
    rep.min_margin_ratio = min_ratio;
    rep.worst_pair = worst_pair;
    rep.worst_time = worst_time;
    rep.pass = min_ratio >= 0.95;
    rep.detail = str_printf("%s: min dist / (e^{-Lt} d0) = %.6g at pair %zu, stage %zu, t = %.4g",
                            rep.pass ? "ok" : "margin below 0.95", min_ratio, worst_pair,
                            worst_stage, worst_time);
    return rep;
}

SmoothnessReport check_smoothness(const AdapterStack& stack, Rng& rng, std::size_t n_pairs,
                                  double eps) {
    if (n_pairs == 0) throw ConfigError("check_smoothness: n_pairs must be positive");
    if (!std::isfinite(eps) || eps <= 0.0) throw ConfigError("eps: must be finite and > 0");

    SmoothnessReport rep;
    rep.convergence_order = 2.0;
    if (stack.adapters.empty()) {
        rep.detail = "no adapters to check";
        return rep;
    }

    double worst_dev = -1.0;
    for (const AdapterEntry& ad : stack.adapters) {
        const std::size_t dim = ad.params.dim();
        const double lip = lipschitz_upper_bound(ad.params);
        const double horizon = ad.spec.horizon();
        const SolverSpec fine = fine_grid(horizon);
        const double growth = std::exp(lip * horizon);

        for (std::size_t p = 0; p < n_pairs; ++p) {
            const Vector x0 = sample_gaussian(rng, dim, 0.0, 1.0);
            Vector x1 = x0;
            axpy(1.0, sample_gaussian(rng, dim, 0.0, 0.1), x1);
            const double d0 = l2_dist(x0, x1);
            if (d0 == 0.0) continue;
            const double dT = l2_dist(integrate_final(x0, ad.params, fine),
                                      integrate_final(x1, ad.params, fine));
            const double ratio = dT / (growth * d0);
            rep.max_gronwall_ratio = std::max(rep.max_gronwall_ratio, ratio);
            if (!(ratio <= 1.05)) rep.gronwall_pass = false;
        }

        // C^1 probe: the central-difference directional derivative of the
        // flow map must converge at second order as eps halves.
        const Vector xc = sample_gaussian(rng, dim, 0.0, 1.0);
        Vector u = sample_gaussian(rng, dim, 0.0, 1.0);
        const double un = l2_norm(u);
        if (un == 0.0) throw ConfigError("check_smoothness: degenerate direction draw");
        for (double& c : u) c /= un;
        auto central = [&](double e) {
            Vector xp = xc, xm = xc;
            axpy(e, u, xp);
            axpy(-e, u, xm);
            Vector zp = integrate_final(xp, ad.params, fine);
            const Vector zm = integrate_final(xm, ad.params, fine);
            for (std::size_t t = 0; t < zp.size(); ++t) zp[t] = (zp[t] - zm[t]) / (2.0 * e);
            return zp;
        };
        const Vector g1 = central(eps);
        const Vector g2 = central(eps / 2.0);
        const Vector g4 = central(eps / 4.0);
        const double d1 = l2_dist(g1, g2);
        const double d2 = l2_dist(g2, g4);
        double order;
        if (d1 < 1e-10 && d2 < 1e-10) {
            order = 2.0;  // differences at rounding level: flow locally linear
        } else if (d2 == 0.0) {
            order = std::numeric_limits<double>::infinity();
        } else {
            order = std::log2(d1 / d2);
        }
        if (std::abs(order - 2.0) > worst_dev) {
            worst_dev = std::abs(order - 2.0);
            rep.convergence_order = order;
        }
        if (!(order >= 1.8 && order <= 2.2)) rep.order_pass = false;
    }

    rep.detail = str_printf("max Gronwall ratio %.6g (bound 1.05); FD convergence order %.4g",
                            rep.max_gronwall_ratio, rep.convergence_order);
    return rep;
}

}  // namespace flowforget
