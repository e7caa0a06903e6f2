#ifndef MEDL_TAPE_HPP
#define MEDL_TAPE_HPP

#include "medl/common.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

/**
 * @file tape.hpp
 * @brief Reverse-mode differentiation over dense matrices.
 *
 * Every op appends a node to a `Tape` holding its value and a closure that
 * pushes the node's adjoint back to its inputs. `backward()` replays the tape
 * in reverse. Only the op set needed by the autoencoders is provided.
 */

namespace medl::nn {

/** A trainable matrix owned by a model. */
struct Parameter {
    std::string name;
    Matrix value;
};

class Tape;

/** Handle to a node on a tape. Cheap to copy. */
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : my_tape(tape), my_id(id) {}

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;

    Tape* tape() const { return my_tape; }
    std::size_t id() const { return my_id; }
    bool valid() const { return my_tape != nullptr; }

private:
    Tape* my_tape = nullptr;
    std::size_t my_id = 0;
};

/** Gradients keyed by parameter identity. Parameters the loss never touched are absent (i.e. zero). */
class Gradients {
public:
    bool contains(const Parameter& p) const { return my_grads.count(&p) > 0; }

    /** Gradient for `p`, or a zero matrix of the right shape if absent. */
    Matrix of(const Parameter& p) const;

    void accumulate(const Parameter& p, const Matrix& g);
    void set_zero(const Parameter& p);
    std::size_t size() const { return my_grads.size(); }

private:
    std::unordered_map<const Parameter*, Matrix> my_grads;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /** Record a non-differentiable input. */
    Var constant(Matrix value);

    /** Record a parameter leaf. Frozen parameters do not propagate gradients. */
    Var parameter(Parameter& p);

    void freeze(const Parameter& p) { my_frozen.insert(&p); }
    void unfreeze(const Parameter& p) { my_frozen.erase(&p); }
    bool is_frozen(const Parameter& p) const { return my_frozen.count(&p) > 0; }

    /** Append an op node. `inputs` decide whether the node needs gradients. */
    Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

    const Matrix& value(std::size_t id) const { return my_nodes[id].value; }
    const Matrix& grad(std::size_t id) const { return my_nodes[id].grad; }
    bool requires_grad(std::size_t id) const { return my_nodes[id].requires_grad; }

    /** Add `g` to the adjoint of node `id` (no-op if that node needs no gradient). */
    void accumulate(std::size_t id, const Matrix& g);

    std::size_t size() const { return my_nodes.size(); }

    friend Gradients backward(Tape& tape, Var loss);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Parameter* param = nullptr;
        Backward backward;
    };

    std::deque<Node> my_nodes;
    std::unordered_set<const Parameter*> my_frozen;
    bool my_consumed = false;
};

/**
 * Compute d(loss)/d(parameter) for every parameter recorded on the tape.
 * `loss` must be a 1x1 node of this tape. Frozen parameters get exact zeros.
 * A tape can be differentiated once.
 */
Gradients backward(Tape& tape, Var loss);

// Op set. All shapes are checked; mismatches raise DimensionError.
Var matmul(Var a, Var b);
Var matmul_bt(Var a, Var b); ///< a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);       ///< elementwise
Var add_row(Var a, Var row); ///< a + 1 * row (row is 1 x cols)
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var selu(Var a);
Var softplus(Var a);
Var softmax_rows(Var a);
Var sum(Var a);
/** sum_i weights[i] * terms[i] over 1x1 terms. */
Var linear_combination(std::span<const Var> terms, std::span<const double> weights);

/** (1/n) * sum_i ||pred_i - target_i||^2. */
Var mse(Var pred, const Matrix& target);
/** -(1/n) * sum_i sum_k onehot_ik * log(max(probs_ik, floor)). */
Var cce(Var probs, const Matrix& onehot);

/** Elementwise closed-form KL(N(mu, sigma^2) || N(mu0, sigma0^2)) summed over all entries. */
Var kl_gaussian_sum(Var mu, Var sigma, double mu0, double sigma0);

/** Same reduction, using the expansion with the prior and posterior roles swapped. */
Var kl_gaussian_sum_swapped(Var mu, Var sigma, double mu0, double sigma0);

} // namespace medl::nn

#endif
