#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowforget/numkit.hpp"

namespace flowforget {

/// Parameters of the time-conditioned vector field
///
///     f(h, t) = w2 * tanh(w1 * [h; t] + b1) + b2
///
/// w1 is hidden x (dim + 1): the last column multiplies the scalar time
/// input. w2 is dim x hidden. The same struct doubles as the gradient
/// container since gradients share the shapes.
struct VectorFieldParams {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    std::size_t dim() const { return w2.rows; }
    std::size_t hidden() const { return b1.size(); }
    std::size_t count() const { return w1.data.size() + b1.size() + w2.data.size() + b2.size(); }

    static VectorFieldParams zeros_like(const VectorFieldParams& p);

    /// this += alpha * g (shapes must match).
    void add_scaled(const VectorFieldParams& g, double alpha);

    /// Mutable views over the four blocks, in declaration order. The spans
    /// alias this object; do not resize while they are live.
    std::vector<std::span<double>> blocks();
    std::vector<std::span<const double>> blocks() const;
};

/// Forward evaluation with the intermediates needed by the pullbacks.
struct FieldEval {
    Vector value;        // f(h, t), length dim
    Vector hidden_post;  // tanh(w1 [h;t] + b1), length hidden
    Vector input;        // [h; t], length dim + 1
};

/// Freshly initialized adapter: w1 Kaiming-uniform over fan-in dim+1,
/// b1 = 0, w2 = 0, b2 = 0. The zero output layer makes f identically zero,
/// so the flow starts as the identity map.
VectorFieldParams init_adapter_params(Rng& rng, std::size_t dim, std::size_t hidden);

/// Non-degenerate random field for property suites: w1 Kaiming-uniform,
/// w2 entries gaussian * scale / sqrt(hidden), biases gaussian * scale.
VectorFieldParams random_field_params(Rng& rng, std::size_t dim, std::size_t hidden,
                                      double scale);

FieldEval field_eval(const VectorFieldParams& p, const Vector& h, double t);

/// f(h, t) without retained intermediates.
Vector field_value(const VectorFieldParams& p, const Vector& h, double t);

/// a^T df/dh given a cached forward evaluation. Length dim.
Vector vjp_state(const VectorFieldParams& p, const FieldEval& eval, const Vector& a);

/// a^T df/dtheta given a cached forward evaluation. Same shapes as p.
VectorFieldParams vjp_params(const VectorFieldParams& p, const FieldEval& eval, const Vector& a);

/// Upper bound on the state Lipschitz constant: ||w2||_2 * ||w1_state||_2,
/// where w1_state drops the time column. tanh' <= 1 makes this a true bound.
double lipschitz_upper_bound(const VectorFieldParams& p);

void save_params(const VectorFieldParams& p, std::ostream& out);
void save_params_file(const VectorFieldParams& p, const std::string& path);

/// Parses what save_params wrote. Throws ConfigError on malformed input.
VectorFieldParams load_params(std::istream& in);
VectorFieldParams load_params_file(const std::string& path);

}  // namespace flowforget
