#include "flowforget/vecfield.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "flowforget/errors.hpp"

namespace flowforget {

VectorFieldParams VectorFieldParams::zeros_like(const VectorFieldParams& p) {
    VectorFieldParams g;
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1 = zeros(p.b1.size());
    g.w2 = Matrix(p.w2.rows, p.w2.cols);
    g.b2 = zeros(p.b2.size());
    return g;
}

void VectorFieldParams::add_scaled(const VectorFieldParams& g, double alpha) {
    if (g.w1.data.size() != w1.data.size() || g.b1.size() != b1.size() ||
        g.w2.data.size() != w2.data.size() || g.b2.size() != b2.size()) {
        throw std::invalid_argument("VectorFieldParams::add_scaled: shape mismatch");
    }
    for (std::size_t i = 0; i < w1.data.size(); ++i) w1.data[i] += alpha * g.w1.data[i];
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += alpha * g.b1[i];
    for (std::size_t i = 0; i < w2.data.size(); ++i) w2.data[i] += alpha * g.w2.data[i];
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] += alpha * g.b2[i];
}

std::vector<std::span<double>> VectorFieldParams::blocks() {
    return {std::span<double>(w1.data), std::span<double>(b1), std::span<double>(w2.data),
            std::span<double>(b2)};
}

std::vector<std::span<const double>> VectorFieldParams::blocks() const {
    return {std::span<const double>(w1.data), std::span<const double>(b1),
            std::span<const double>(w2.data), std::span<const double>(b2)};
}

VectorFieldParams init_adapter_params(Rng& rng, std::size_t dim, std::size_t hidden) {
    if (dim < 1 || hidden < 1) throw ConfigError("adapter dims must be >= 1");
    VectorFieldParams p;
    p.w1 = kaiming_uniform_init(rng, hidden, dim + 1);
    p.b1 = zeros(hidden);
    p.w2 = Matrix(dim, hidden);  // zero: the flow starts as the identity
    p.b2 = zeros(dim);
    return p;
}

VectorFieldParams random_field_params(Rng& rng, std::size_t dim, std::size_t hidden,
                                      double scale) {
    VectorFieldParams p = init_adapter_params(rng, dim, hidden);
    const double w2_scale = scale / std::sqrt(static_cast<double>(hidden));
    for (auto& x : p.w2.data) x = w2_scale * rng.gaussian();
    for (auto& x : p.b1) x = scale * rng.gaussian();
    for (auto& x : p.b2) x = scale * rng.gaussian();
    return p;
}

FieldEval field_eval(const VectorFieldParams& p, const Vector& h, double t) {
    if (h.size() != p.dim()) throw std::invalid_argument("field_eval: state dim mismatch");
    FieldEval e;
    e.input.reserve(h.size() + 1);
    e.input = h;
    e.input.push_back(t);
    Vector pre = matvec(p.w1, e.input);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = std::tanh(pre[i] + p.b1[i]);
    e.hidden_post = std::move(pre);
    e.value = matvec(p.w2, e.hidden_post);
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += p.b2[i];
    return e;
}

Vector field_value(const VectorFieldParams& p, const Vector& h, double t) {
    return field_eval(p, h, t).value;
}

Vector vjp_state(const VectorFieldParams& p, const FieldEval& eval, const Vector& a) {
    // s = (1 - post^2) .* (w2^T a); a^T df/dh = w1_state^T s
    Vector s = matvec_transposed(p.w2, a);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double post = eval.hidden_post[i];
        s[i] *= 1.0 - post * post;
    }
    const std::size_t dim = p.dim();
    Vector out(dim, 0.0);
    for (std::size_t r = 0; r < p.w1.rows; ++r) {
        const double* row = p.w1.data.data() + r * p.w1.cols;
        const double scale = s[r];
        for (std::size_t c = 0; c < dim; ++c) out[c] += row[c] * scale;
    }
    return out;
}

VectorFieldParams vjp_params(const VectorFieldParams& p, const FieldEval& eval, const Vector& a) {
    VectorFieldParams g = VectorFieldParams::zeros_like(p);
    g.b2 = a;
    for (std::size_t i = 0; i < p.w2.rows; ++i) {
        double* row = g.w2.data.data() + i * p.w2.cols;
        const double ai = a[i];
        for (std::size_t j = 0; j < p.w2.cols; ++j) row[j] = ai * eval.hidden_post[j];
    }
    Vector s = matvec_transposed(p.w2, a);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double post = eval.hidden_post[i];
        s[i] *= 1.0 - post * post;
    }
    g.b1 = s;
    for (std::size_t r = 0; r < p.w1.rows; ++r) {
        double* row = g.w1.data.data() + r * p.w1.cols;
        const double sr = s[r];
        for (std::size_t c = 0; c < p.w1.cols; ++c) row[c] = sr * eval.input[c];
    }
    return g;
}

double lipschitz_upper_bound(const VectorFieldParams& p) {
    Matrix w1_state(p.w1.rows, p.dim());
    for (std::size_t r = 0; r < p.w1.rows; ++r) {
        for (std::size_t c = 0; c < w1_state.cols; ++c) w1_state.at(r, c) = p.w1.at(r, c);
    }
    return spectral_norm(p.w2) * spectral_norm(w1_state);
}

// ---------------------------------------------------------------------------
// Serialization: text, round-trippable via %.17g
// ---------------------------------------------------------------------------

namespace {

void write_doubles(std::ostream& out, const Vector& v) {
    char buf[64];
    for (double x : v) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        out << buf << "\n";
    }
}

Vector read_doubles(std::istream& in, std::size_t n, const char* what) {
    Vector v(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(in >> v[i])) {
            throw ConfigError(std::string("adapter checkpoint truncated in ") + what);
        }
    }
    return v;
}

}  // namespace

void save_params(const VectorFieldParams& p, std::ostream& out) {
    out << p.dim() << " " << p.hidden() << "\n";
    write_doubles(out, Vector(p.w1.data.begin(), p.w1.data.end()));
    write_doubles(out, p.b1);
    write_doubles(out, Vector(p.w2.data.begin(), p.w2.data.end()));
    write_doubles(out, p.b2);
}

void save_params_file(const VectorFieldParams& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    save_params(p, out);
}

VectorFieldParams load_params(std::istream& in) {
    std::size_t dim = 0, hidden = 0;
    if (!(in >> dim >> hidden) || dim < 1 || hidden < 1) {
        throw ConfigError("adapter checkpoint: bad header");
    }
    VectorFieldParams p;
    p.w1 = Matrix(hidden, dim + 1);
    Vector w1 = read_doubles(in, hidden * (dim + 1), "w1");
    p.w1.data.assign(w1.begin(), w1.end());
    p.b1 = read_doubles(in, hidden, "b1");
    p.w2 = Matrix(dim, hidden);
    Vector w2 = read_doubles(in, dim * hidden, "w2");
    p.w2.data.assign(w2.begin(), w2.end());
    p.b2 = read_doubles(in, dim, "b2");
    return p;
}

VectorFieldParams load_params_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open adapter checkpoint: " + path);
    return load_params(in);
}

}  // namespace flowforget
