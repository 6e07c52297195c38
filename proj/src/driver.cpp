#include "flowforget/driver.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "flowforget/errors.hpp"
#include "flowforget/metrics.hpp"
#include "flowforget/odeflow.hpp"
#include "flowforget/unlearning.hpp"
#include "flowforget/vecfield.hpp"

namespace flowforget {

std::string format_double(double x) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", x);  // nan
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    const char* ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

double parse_f64(const std::string& key, const std::string& value) {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(x))
        throw ConfigError(key + ": not a finite number: '" + value + "'");
    return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    if (value.empty() || value[0] == '-' || value[0] == '+')
        throw ConfigError(key + ": not a non-negative integer: '" + value + "'");
    errno = 0;
    char* end = nullptr;
    const unsigned long long x = std::strtoull(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError(key + ": not a non-negative integer: '" + value + "'");
    return x;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(parse_u64(key, value));
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

void apply_key(DriverConfig& dc, const std::string& key, const std::string& value) {
    RunConfig& rc = dc.run;
    UnlearnConfig& u = rc.unlearn;
    if (key == "world_seed") rc.world.seed = parse_u64(key, value);
    else if (key == "k") rc.world.k = parse_size(key, value);
    else if (key == "latent_dim") rc.world.latent_dim = parse_size(key, value);
    else if (key == "obs_dim") rc.world.obs_dim = parse_size(key, value);
    else if (key == "cluster_std") rc.world.cluster_std = parse_f64(key, value);
    else if (key == "n_stages") rc.world.n_stages = parse_size(key, value);
    else if (key == "embed_dim") rc.world.embed_dim = parse_size(key, value);
    else if (key == "d") u.d = parse_f64(key, value);
    else if (key == "a_max") u.a_max = parse_f64(key, value);
    else if (key == "n_a") u.n_a = parse_size(key, value);
    else if (key == "n_r") u.n_r = parse_size(key, value);
    else if (key == "lambda_l2") u.lambda_l2 = parse_f64(key, value);
    else if (key == "lambda_per") u.lambda_per = parse_f64(key, value);
    else if (key == "lambda_id") u.lambda_id = parse_f64(key, value);
    else if (key == "lambda_u") u.lambda_u = parse_f64(key, value);
    else if (key == "lambda_tc") u.lambda_tc = parse_f64(key, value);
    else if (key == "lambda_r") u.lambda_r = parse_f64(key, value);
    else if (key == "epochs") u.epochs = parse_size(key, value);
    else if (key == "learning_rate") u.learning_rate = parse_f64(key, value);
    else if (key == "solver") u.solver.method = parse_solver(value);
    else if (key == "steps") u.solver.steps = parse_size(key, value);
    else if (key == "step_size") u.solver.step_size = parse_f64(key, value);
    else if (key == "hidden") u.hidden = parse_size(key, value);
    else if (key == "grad_mode") u.grad_mode = parse_gradient_mode(value);
    else if (key == "forget_id") rc.forget_id = parse_size(key, value);
    else if (key == "seeds") rc.seeds = parse_u64_list(key, value);
    else if (key == "mmd_scale") rc.mmd_scale = parse_f64(key, value);
    else if (key == "jobs") rc.jobs = parse_size(key, value);
    else if (key == "discrete_rank") rc.discrete_rank = parse_size(key, value);
    else if (key == "sweep_epochs") rc.sweep_epochs = parse_size(key, value);
    else if (key == "n_per_id") rc.eval.n_per_id = parse_size(key, value);
    else if (key == "mmd_n") rc.eval.mmd_n = parse_size(key, value);
    else if (key == "id_avg_n") rc.eval.id_avg_n = parse_size(key, value);
    else if (key == "leakage_n") rc.eval.leakage_n = parse_size(key, value);
    else if (key == "sweep") {
        static const char* kinds[] = {"step_size", "fixed_horizon", "hidden_dim", "solver",
                                      "lambda"};
        if (std::find_if(std::begin(kinds), std::end(kinds),
                         [&](const char* k) { return value == k; }) == std::end(kinds))
            throw ConfigError(
                "sweep: unknown grid '" + value +
                "' (want step_size|fixed_horizon|hidden_dim|solver|lambda)");
        dc.sweep = value;
    } else if (key == "multi_ids") {
        dc.multi_ids.clear();
        for (std::uint64_t id : parse_u64_list(key, value))
            dc.multi_ids.push_back(static_cast<std::size_t>(id));
    } else {
        throw ConfigError("unknown key '" + key + "'");
    }
}

void validate_config(const DriverConfig& dc) {
    const RunConfig& rc = dc.run;
    if (rc.world.k < 2) throw ConfigError("k: must be >= 2");
    if (rc.world.latent_dim < 1) throw ConfigError("latent_dim: must be >= 1");
    if (rc.world.obs_dim < 1) throw ConfigError("obs_dim: must be >= 1");
    if (!(rc.world.cluster_std > 0)) throw ConfigError("cluster_std: must be > 0");
    if (rc.world.n_stages < 1) throw ConfigError("n_stages: must be >= 1");
    if (rc.world.embed_dim < 1) throw ConfigError("embed_dim: must be >= 1");
    rc.unlearn.validate();
    if (rc.seeds.empty()) throw ConfigError("seeds: must be non-empty");
    if (!(rc.mmd_scale > 0)) throw ConfigError("mmd_scale: must be > 0");
    if (rc.forget_id >= rc.world.k)
        throw ConfigError("forget_id: out of range (k = " + std::to_string(rc.world.k) + ")");
    if (rc.jobs < 1) throw ConfigError("jobs: must be >= 1");
    if (rc.discrete_rank < 1) throw ConfigError("discrete_rank: must be >= 1");
    if (rc.sweep_epochs < 1) throw ConfigError("sweep_epochs: must be >= 1");
    if (rc.eval.n_per_id < 1) throw ConfigError("n_per_id: must be >= 1");
    if (rc.eval.mmd_n < 2) throw ConfigError("mmd_n: must be >= 2");
    if (rc.eval.id_avg_n < 1) throw ConfigError("id_avg_n: must be >= 1");
    if (rc.eval.leakage_n < 1) throw ConfigError("leakage_n: must be >= 1");
    if (dc.multi_ids.size() < 2 || dc.multi_ids.size() > 3)
        throw ConfigError("multi_ids: needs 2 or 3 identities");
    for (std::size_t i = 0; i < dc.multi_ids.size(); ++i) {
        if (dc.multi_ids[i] >= rc.world.k)
            throw ConfigError("multi_ids: id " + std::to_string(dc.multi_ids[i]) +
                              " out of range (k = " + std::to_string(rc.world.k) + ")");
        for (std::size_t j = i + 1; j < dc.multi_ids.size(); ++j)
            if (dc.multi_ids[i] == dc.multi_ids[j])
                throw ConfigError("multi_ids: duplicate id " + std::to_string(dc.multi_ids[i]));
    }
}

template <class T>
std::string join_list(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (!out.emplace(key, value).second)
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
    }
    return out;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

DriverConfig resolve_config(const std::map<std::string, std::string>& file_values,
                            const std::vector<std::string>& overrides) {
    DriverConfig dc;
    for (const auto& [key, value] : file_values) apply_key(dc, key, value);
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override '" + ov + "': expected KEY=VALUE");
        apply_key(dc, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
    validate_config(dc);
    return dc;
}

std::string render_config(const DriverConfig& dc) {
    const RunConfig& rc = dc.run;
    const UnlearnConfig& u = rc.unlearn;
    std::map<std::string, std::string> kv;
    kv["world_seed"] = std::to_string(rc.world.seed);
    kv["k"] = std::to_string(rc.world.k);
    kv["latent_dim"] = std::to_string(rc.world.latent_dim);
    kv["obs_dim"] = std::to_string(rc.world.obs_dim);
    kv["cluster_std"] = format_double(rc.world.cluster_std);
    kv["n_stages"] = std::to_string(rc.world.n_stages);
    kv["embed_dim"] = std::to_string(rc.world.embed_dim);
    kv["d"] = format_double(u.d);
    kv["a_max"] = format_double(u.a_max);
    kv["n_a"] = std::to_string(u.n_a);
    kv["n_r"] = std::to_string(u.n_r);
    kv["lambda_l2"] = format_double(u.lambda_l2);
    kv["lambda_per"] = format_double(u.lambda_per);
    kv["lambda_id"] = format_double(u.lambda_id);
    kv["lambda_u"] = format_double(u.lambda_u);
    kv["lambda_tc"] = format_double(u.lambda_tc);
    kv["lambda_r"] = format_double(u.lambda_r);
    kv["epochs"] = std::to_string(u.epochs);
    kv["learning_rate"] = format_double(u.learning_rate);
    kv["solver"] = solver_name(u.solver.method);
    kv["steps"] = std::to_string(u.solver.steps);
    kv["step_size"] = format_double(u.solver.step_size);
    kv["hidden"] = std::to_string(u.hidden);
    kv["grad_mode"] = gradient_mode_name(u.grad_mode);
    kv["forget_id"] = std::to_string(rc.forget_id);
    kv["seeds"] = join_list(rc.seeds);
    kv["mmd_scale"] = format_double(rc.mmd_scale);
    kv["jobs"] = std::to_string(rc.jobs);
    kv["discrete_rank"] = std::to_string(rc.discrete_rank);
    kv["sweep_epochs"] = std::to_string(rc.sweep_epochs);
    kv["n_per_id"] = std::to_string(rc.eval.n_per_id);
    kv["mmd_n"] = std::to_string(rc.eval.mmd_n);
    kv["id_avg_n"] = std::to_string(rc.eval.id_avg_n);
    kv["leakage_n"] = std::to_string(rc.eval.leakage_n);
    kv["sweep"] = dc.sweep;
    kv["multi_ids"] = join_list(dc.multi_ids);
    std::string out;
    for (const auto& [key, value] : kv) out += key + "=" + value + "\n";
    return out;
}

// --- check suites --------------------------------------------------------------

namespace {

double grad_rel_err(const VectorFieldParams& a, const VectorFieldParams& b) {
    double max_diff = 0.0, max_ref = 0.0;
    const auto ab = a.blocks();
    const auto bb = b.blocks();
    for (std::size_t bi = 0; bi < ab.size(); ++bi)
        for (std::size_t i = 0; i < ab[bi].size(); ++i) {
            max_diff = std::max(max_diff, std::abs(ab[bi][i] - bb[bi][i]));
            max_ref = std::max(max_ref, std::abs(bb[bi][i]));
        }
    return max_diff / (max_ref + 1e-12);
}

double vec_rel_err(const Vector& a, const Vector& b) {
    double max_diff = 0.0, max_ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
        max_ref = std::max(max_ref, std::abs(b[i]));
    }
    return max_diff / (max_ref + 1e-12);
}

void add_row(CheckSuite& suite, const std::string& name, double value, bool pass) {
    suite.rows.push_back(CheckRow{name, value, pass});
    if (!pass) suite.all_pass = false;
}

}  // namespace

CheckSuite run_gradcheck(std::uint64_t seed) {
    CheckSuite suite;
    suite.name = "gradcheck";
    Rng rng(derive_seed(seed, 90));

    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t dim = 2 + inst % 7;
        const std::size_t n = 1 + inst % 8;
        const VectorFieldParams p = random_field_params(rng, dim, 6, 0.5);
        const Vector z0 = sample_gaussian(rng, dim, 0.0, 1.0);
        const Vector gL = sample_gaussian(rng, dim, 0.0, 1.0);
        const SolverSpec spec{SolverMethod::euler, n, 0.2};
        const FlowGradient got = unrolled_gradient(z0, p, spec, gL);

        VectorFieldParams q = p;
        VectorFieldParams fd = VectorFieldParams::zeros_like(p);
        auto qb = q.blocks();
        auto fb = fd.blocks();
        const double eps = 1e-5;
        for (std::size_t b = 0; b < qb.size(); ++b)
            for (std::size_t i = 0; i < qb[b].size(); ++i) {
                const double saved = qb[b][i];
                qb[b][i] = saved + eps;
                const double up = dot(gL, integrate_final(z0, q, spec));
                qb[b][i] = saved - eps;
                const double dn = dot(gL, integrate_final(z0, q, spec));
                qb[b][i] = saved;
                fb[b][i] = (up - dn) / (2 * eps);
            }
        worst = std::max(worst, grad_rel_err(got.d_params, fd));

        Vector fdz(dim, 0.0);
        for (std::size_t j = 0; j < dim; ++j) {
            Vector zp = z0, zm = z0;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            fdz[j] = (dot(gL, integrate_final(zp, p, spec)) -
                      dot(gL, integrate_final(zm, p, spec))) /
                     2e-6;
        }
        worst = std::max(worst, vec_rel_err(got.d_initial, fdz));
    }
    add_row(suite, "unrolled_vs_fd_max_rel", worst, worst < 1e-4);

    // adjoint (rk4 backward) against unrolled (euler) on matched grids: the
    // production pairing. The gap is discretization distance and must shrink
    // as the grid refines.
    const VectorFieldParams p = random_field_params(rng, 8, 8, 0.2);
    const Vector z0 = sample_gaussian(rng, 8, 0.0, 1.0);
    const Vector gL = sample_gaussian(rng, 8, 0.0, 1.0);
    const double horizon = 1.6;
    std::vector<double> errs;
    for (std::size_t n : {4, 8, 16, 32, 64}) {
        const double dt = horizon / static_cast<double>(n);
        const FlowGradient unr = unrolled_gradient(z0, p, {SolverMethod::euler, n, dt}, gL);
        const FlowGradient adj = adjoint_gradient(z0, p, {SolverMethod::rk4, n, dt}, gL);
        const double err = std::max(grad_rel_err(adj.d_params, unr.d_params),
                                    vec_rel_err(adj.d_initial, unr.d_initial));
        errs.push_back(err);
        const bool bound = n != 64 || err < 1e-2;
        add_row(suite, "adjoint_vs_unrolled_N" + std::to_string(n), err, bound);
    }
    double worst_ratio = 0.0;
    for (std::size_t i = 1; i < errs.size(); ++i)
        worst_ratio = std::max(worst_ratio, errs[i] / errs[i - 1]);
    add_row(suite, "adjoint_error_doubling_ratio_max", worst_ratio, worst_ratio < 1.0);
    return suite;
}

CheckSuite run_theorem_checks(const ToyWorld& world, const RunConfig& cfg) {
    CheckSuite suite;
    suite.name = "theorems";
    if (cfg.seeds.empty()) throw ConfigError("seeds: must be non-empty");
    const std::uint64_t seed = cfg.seeds.front();

    for (SolverMethod m : {SolverMethod::euler, SolverMethod::midpoint, SolverMethod::rk4}) {
        Rng ir(derive_seed(seed, 1));
        SolverSpec spec = cfg.unlearn.solver;
        spec.method = m;
        const AdapterStack stack = init_adapter_stack(world, ir, cfg.unlearn.hidden, spec);
        Rng lr(derive_seed(seed, 2));
        double max_abs = 0.0;
        bool bitwise = true;
        for (int i = 0; i < 100; ++i) {
            const Vector w = map_latent(world, sample_gaussian(lr, world.cfg.latent_dim, 0, 1));
            const Vector a = generate(world, &stack, w);
            const Vector f = generate(world, nullptr, w);
            for (std::size_t j = 0; j < a.size(); ++j) {
                max_abs = std::max(max_abs, std::abs(a[j] - f[j]));
                if (a[j] != f[j]) bitwise = false;
            }
        }
        add_row(suite, "identity_at_init_" + solver_name(m), max_abs, bitwise);
    }

    {
        // ten random fields x 100 pairs each; scale 0.1 keeps LT < 2 so the
        // 5% Gronwall slack is meaningful rather than vacuous
        Rng fr(derive_seed(seed, 3));
        AdapterStack fields;
        for (std::size_t i = 0; i < 10; ++i) {
            AdapterEntry e;
            e.stage_index = i % world.n_stages();
            e.params = random_field_params(fr, world.stage_dim(e.stage_index), 8, 0.1);
            e.spec = cfg.unlearn.solver;
            fields.adapters.push_back(std::move(e));
        }
        Rng pr(derive_seed(seed, 4));
        const SmoothnessReport sm = check_smoothness(fields, pr, 100, 1e-3);
        add_row(suite, "gronwall_max_ratio", sm.max_gronwall_ratio, sm.gronwall_pass);
        add_row(suite, "jacobian_convergence_order", sm.convergence_order, sm.order_pass);
    }

    const auto noncross_all = [&](const AdapterStack& stack, std::uint64_t stream_base,
                                  const std::string& label) {
        double min_ratio = std::numeric_limits<double>::infinity();
        bool pass = true;
        for (std::size_t j = 0; j < world.cfg.k; ++j) {
            if (j == cfg.forget_id) continue;
            Rng pr(derive_seed(seed, stream_base + j));
            const NoncrossReport nc =
                check_trajectory_noncrossing(world, stack, cfg.forget_id, j, pr, 15);
            min_ratio = std::min(min_ratio, nc.min_margin_ratio);
            pass = pass && nc.pass;
        }
        add_row(suite, label, min_ratio, pass);
    };

    Rng ir(derive_seed(seed, 1));
    const AdapterStack pre =
        init_adapter_stack(world, ir, cfg.unlearn.hidden, cfg.unlearn.solver);
    noncross_all(pre, 5, "noncrossing_pre_min_ratio");

    const SingleRun run = run_single(world, cfg, seed);
    noncross_all(run.result.stack, 20, "noncrossing_post_min_ratio");
    return suite;
}

// --- artifact writers ------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("out: cannot write '" + path.string() + "'");
    out << content;
    out.close();
    if (!out) throw ConfigError("out: write failed for '" + path.string() + "'");
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

constexpr const char* kMetricCols =
    "id_score,id_avg,mmd_retain,retention_accuracy,forget_rate,leakage";

std::string metric_cells(const MetricReport& m) {
    return format_double(m.id_score) + "," + format_double(m.id_avg) + "," +
           format_double(m.mmd_retain) + "," + format_double(m.retention_accuracy) + "," +
           format_double(m.forget_rate) + "," + format_double(m.leakage);
}

void append_metrics_row(std::string& out, const std::string& run_id, std::uint64_t seed,
                        const MetricReport& m) {
    out += csv_field(run_id) + "," + std::to_string(seed) + "," + metric_cells(m) + "\n";
}

std::string experiment_csv(const ExperimentResult& r) {
    std::string out = std::string("label,x,seed,") + kMetricCols + ",j\n";
    for (const SweepRow& row : r.rows)
        out += csv_field(row.label) + "," + format_double(row.x) + "," +
               std::to_string(row.seed) + "," + metric_cells(row.report) + "," +
               format_double(row.j) + "\n";
    return out;
}

std::string experiment_summary(const ExperimentResult& r) {
    std::string out;
    for (const std::string& line : r.summary) out += line + "\n";
    out += std::string("all_pass: ") + (r.all_pass ? "yes" : "no") + "\n";
    return out;
}

int emit_experiment(const ExperimentResult& r, const fs::path& out_dir) {
    write_file(out_dir / (r.name + ".csv"), experiment_csv(r));
    write_file(out_dir / (r.name + ".summary.txt"), experiment_summary(r));
    for (const std::string& line : r.summary) std::printf("[%s] %s\n", r.name.c_str(), line.c_str());
    std::printf("[%s] wrote %s.csv, %s.summary.txt under %s\n", r.name.c_str(), r.name.c_str(),
                r.name.c_str(), out_dir.string().c_str());
    return r.all_pass ? 0 : 1;
}

int emit_suite(const CheckSuite& suite, const fs::path& out_dir) {
    std::string csv = "name,value,pass\n";
    std::string summary;
    for (const CheckRow& row : suite.rows) {
        csv += csv_field(row.name) + "," + format_double(row.value) + "," +
               (row.pass ? "1" : "0") + "\n";
        summary += std::string(row.pass ? "PASS: " : "FAIL: ") + row.name + " = " +
                   format_double(row.value) + "\n";
        std::printf("%-34s %14.6g  %s\n", row.name.c_str(), row.value,
                    row.pass ? "PASS" : "FAIL");
    }
    summary += std::string("all_pass: ") + (suite.all_pass ? "yes" : "no") + "\n";
    write_file(out_dir / (suite.name + ".csv"), csv);
    write_file(out_dir / (suite.name + ".summary.txt"), summary);
    return suite.all_pass ? 0 : 1;
}

int cmd_unlearn(const ToyWorld& world, const DriverConfig& dc, const fs::path& out_dir) {
    const std::uint64_t seed = dc.run.seeds.front();
    const SingleRun run = run_single(world, dc.run, seed);

    std::string hist = "epoch,l_u,l_tc,l_r,total\n";
    for (const LossHistoryRow& h : run.result.history)
        hist += std::to_string(h.epoch) + "," + format_double(h.l_u) + "," +
                format_double(h.l_tc) + "," + format_double(h.l_r) + "," +
                format_double(h.total) + "\n";
    write_file(out_dir / "loss_history.csv", hist);

    std::string mcsv = std::string("run_id,seed,") + kMetricCols + "\n";
    append_metrics_row(mcsv, "before", seed, run.report_before);
    append_metrics_row(mcsv, "after", seed, run.report);
    write_file(out_dir / "metrics.csv", mcsv);

    for (const AdapterEntry& e : run.result.stack.adapters)
        save_params_file(
            e.params,
            (out_dir / ("adapter_" + std::to_string(e.stage_index) + ".params")).string());

    std::printf("seed %llu: forget_rate %s -> %s, retention %s, mmd_retain %s\n",
                static_cast<unsigned long long>(seed),
                format_double(run.report_before.forget_rate).c_str(),
                format_double(run.report.forget_rate).c_str(),
                format_double(run.report.retention_accuracy).c_str(),
                format_double(run.report.mmd_retain).c_str());
    return 0;
}

int cmd_report(const ToyWorld& world, const DriverConfig& dc, const fs::path& out_dir) {
    const std::vector<std::uint64_t>& seeds = dc.run.seeds;
    std::vector<SingleRun> runs(seeds.size());
    parallel_for(seeds.size(), dc.run.jobs,
                 [&](std::size_t i) { runs[i] = run_single(world, dc.run, seeds[i]); });

    std::string mcsv = std::string("run_id,seed,") + kMetricCols + "\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        append_metrics_row(mcsv, "before", seeds[i], runs[i].report_before);
        append_metrics_row(mcsv, "after", seeds[i], runs[i].report);
    }
    write_file(out_dir / "metrics.csv", mcsv);

    for (std::size_t i = 0; i < seeds.size(); ++i)
        std::printf("seed %llu: forget_rate %s -> %s, retention %s, mmd_retain %s\n",
                    static_cast<unsigned long long>(seeds[i]),
                    format_double(runs[i].report_before.forget_rate).c_str(),
                    format_double(runs[i].report.forget_rate).c_str(),
                    format_double(runs[i].report.retention_accuracy).c_str(),
                    format_double(runs[i].report.mmd_retain).c_str());
    return 0;
}

ExperimentResult run_selected_sweep(const ToyWorld& world, const DriverConfig& dc) {
    if (dc.sweep == "step_size") return run_step_size_sweep(world, dc.run);
    if (dc.sweep == "fixed_horizon") return run_fixed_horizon_sweep(world, dc.run);
    if (dc.sweep == "hidden_dim") return run_hidden_dim_sweep(world, dc.run);
    if (dc.sweep == "solver") return run_solver_sweep(world, dc.run);
    if (dc.sweep == "lambda") return run_lambda_sweep(world, dc.run);
    throw ConfigError("sweep: unknown grid '" + dc.sweep + "'");
}

}  // namespace

int dispatch(const CliOptions& opts) {
    try {
        std::map<std::string, std::string> file_values;
        if (opts.config_path) file_values = load_config_file(*opts.config_path);
        DriverConfig dc = resolve_config(file_values, opts.overrides);
        if (opts.seed) dc.run.seeds = {*opts.seed};
        if (opts.jobs) dc.run.jobs = *opts.jobs;
        if (dc.run.jobs < 1) throw ConfigError("jobs: must be >= 1");

        const fs::path out_dir(opts.out_dir);
        fs::create_directories(out_dir);
        write_file(out_dir / "resolved.cfg", render_config(dc));

        const ToyWorld world = build_toy_world(dc.run.world);
        const std::string& sub = opts.subcommand;
        if (sub == "unlearn") return cmd_unlearn(world, dc, out_dir);
        if (sub == "report") return cmd_report(world, dc, out_dir);
        if (sub == "sweep") return emit_experiment(run_selected_sweep(world, dc), out_dir);
        if (sub == "ablation") return emit_experiment(run_ablation(world, dc.run), out_dir);
        if (sub == "multi-id")
            return emit_experiment(run_multi_identity(world, dc.run, dc.multi_ids), out_dir);
        if (sub == "noise") return emit_experiment(run_noise_attack(world, dc.run), out_dir);
        if (sub == "gradcheck")
            return emit_suite(run_gradcheck(dc.run.seeds.front()), out_dir);
        if (sub == "theorems") return emit_suite(run_theorem_checks(world, dc.run), out_dir);
        throw ConfigError("subcommand: unknown '" + sub + "'");
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace flowforget
