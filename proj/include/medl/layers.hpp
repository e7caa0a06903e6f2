#ifndef MEDL_LAYERS_HPP
#define MEDL_LAYERS_HPP

#include "medl/tape.hpp"

#include <optional>
#include <span>
#include <vector>

/**
 * @file layers.hpp
 * @brief Dense layers, batch normalisation and the Adam optimiser.
 */

namespace medl::nn {

enum class Activation { linear, selu, softmax };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/**
 * Fully connected layer computing activation(x * W + b).
 *
 * A tied layer owns no weight matrix of its own: it uses the transpose of
 * its source layer's weights and keeps an independent bias. The owning model
 * passes the source at call time, so layers stay copyable values.
 */
struct DenseLayer {
    Parameter weight; ///< in_dim x out_dim; empty when tied
    Parameter bias;   ///< 1 x out_dim
    Activation activation = Activation::linear;
    bool tied = false;

    Index in_dim(const DenseLayer* source = nullptr) const;
    Index out_dim() const { return bias.value.cols(); }
};

/** LeCun-normal weights (sd = 1/sqrt(in)), zero bias. */
DenseLayer make_dense(Index in_dim, Index out_dim, Activation act, Rng& rng, const std::string& name);

/** Decoder layer reusing the transpose of `source`'s weights. */
DenseLayer make_tied(const DenseLayer& source, Activation act, const std::string& name);

/** Evaluate a layer on plain matrices. `source` is required for tied layers. */
Matrix dense_forward(const DenseLayer& layer, const Matrix& input, const DenseLayer* source = nullptr);

/** Record a layer application on a tape. */
Var dense(Tape& tape, DenseLayer& layer, Var input, DenseLayer* source = nullptr);

Var apply_activation(Var x, Activation act);

enum class Mode { train, eval };

struct BatchNormState {
    Parameter gamma; ///< 1 x d
    Parameter beta;  ///< 1 x d
    RowVector running_mean;
    RowVector running_var;
    double momentum = 0.99;
    double epsilon = 1e-3;

    Index dim() const { return gamma.value.cols(); }
};

BatchNormState make_batchnorm(Index dim, const std::string& name, double momentum = 0.99, double epsilon = 1e-3);

/**
 * Batch normalisation on plain matrices. Train mode normalises with batch
 * statistics and folds them into the running averages; eval mode uses the
 * running averages only.
 */
Matrix batchnorm_forward(BatchNormState& state, const Matrix& input, Mode mode);

/** Eval-mode normalisation with the running statistics. */
Matrix batchnorm_eval(const BatchNormState& state, const Matrix& input);

/**
 * Tape version. In train mode the running statistics are updated only when
 * `update_running` is set, so auxiliary passes can reuse the batch statistics
 * without disturbing them.
 */
Var batch_norm(Tape& tape, BatchNormState& state, Var input, Mode mode, bool update_running = true);

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    long step_count = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
};

/**
 * One bias-corrected Adam update of `params` in place. Moments are matched to
 * parameters by position, so the same parameter list must be passed every step.
 * Throws DivergenceError (naming the parameter) on a non-finite gradient.
 */
void adam_step(AdamState& state, std::span<Parameter* const> params, const Gradients& grads);

} // namespace medl::nn

#endif
