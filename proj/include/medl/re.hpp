#ifndef MEDL_RE_HPP
#define MEDL_RE_HPP

#include "medl/dataio.hpp"
#include "medl/layers.hpp"
#include "medl/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

/**
 * @file re.hpp
 * @brief Random-effects autoencoder: per-batch Gaussian effects modulate the
 * first encoder layer, a latent classifier predicts the batch, and a KL term
 * keeps the effects close to a zero-centred prior.
 */

namespace medl::re {

enum class KlForm {
    standard, ///< KL(q || p)
    swapped   ///< the expansion with q and p exchanged
};

const char* to_string(KlForm k);
KlForm kl_form_from_string(const std::string& s);

struct REConfig {
    std::vector<int> layer_units{512, 132};
    int n_latent_dims = 2;
    int n_batches = 0;
    double lambda_mse = 110;
    double lambda_cce_z = 0.1;
    double lambda_kl = 1e-5;
    double post_loc_init_scale = 0.1;
    double prior_scale = 0.25;
    std::vector<int> classifier_units{5};
    bool batch_norm = true;
    double bn_momentum = 0.99;
    KlForm kl_form = KlForm::standard;
    double learning_rate = 1e-4;
    int batch_size = 512;
    int epochs = 500;
    int patience = 30;
    std::uint64_t seed = 0;

    void validate() const;
};

/**
 * Variational posterior over the per-batch effects: rows are batches, columns
 * are units of the first encoder layer. Scales are softplus(raw), hence positive.
 */
struct REPosterior {
    nn::Parameter mult_loc;
    nn::Parameter mult_raw_scale;
    nn::Parameter add_loc;
    nn::Parameter add_raw_scale;
    double prior_loc = 0.0;
    double prior_scale = 0.25;

    Matrix mult_scale() const;
    Matrix add_scale() const;
    int n_batches() const { return static_cast<int>(mult_loc.value.rows()); }
    Index n_units() const { return mult_loc.value.cols(); }
};

struct REModel {
    REConfig config;
    Index n_genes = 0;
    std::vector<nn::DenseLayer> encoder; ///< hidden layers then the latent layer
    std::vector<nn::BatchNormState> encoder_bn;
    std::vector<nn::DenseLayer> decoder; ///< untied
    std::vector<nn::BatchNormState> decoder_bn;
    REPosterior posterior;
    std::vector<nn::DenseLayer> classifier; ///< latent -> hidden -> batch probabilities
    nn::AdamState optimizer;
    data::MinMaxScaler scaler;
    std::vector<std::string> batch_levels; ///< names of the one-hot columns
    train::TrainReport history;

    std::vector<nn::Parameter*> parameters();
    std::vector<nn::BatchNormState*> norms();
};

REModel make_re_model(const REConfig& cfg, Index n_genes);

/** Posterior KL summed over batches, units and both effect tables, in the configured form. */
double posterior_kl(const REPosterior& post, KlForm form);

/**
 * lambda_mse * MSE(x, xhat) + lambda_cce_z * CCE(z, zhat) + lambda_kl * kl.
 * `kl` is the summed posterior divergence.
 */
train::LossBreakdown re_loss(const Matrix& x, const Matrix& xhat, const Matrix& z, const Matrix& zhat, double kl,
                             const REConfig& cfg);

struct REOutputs {
    Matrix latent;
    Matrix reconstruction;
    Matrix batch_probs;
};

/**
 * Forward pass. Train mode samples each batch's effects once by
 * reparameterisation with `rng` and uses batch statistics in batch norm
 * without touching the running averages; eval mode uses the posterior means
 * and running statistics. `z_onehot` rows must each select one batch.
 */
REOutputs re_forward(const REModel& model, const Matrix& x, const Matrix& z_onehot, nn::Mode mode, Rng* rng = nullptr);

/**
 * Differentiable forward + loss on a tape with the reparameterisation noise
 * supplied explicitly (n_batches x units, for the multiplicative and additive
 * tables). Used by training and by gradient checks.
 */
struct RETapeResult {
    nn::Var total;
    nn::Var mse;
    nn::Var cce;
    nn::Var kl;
};
RETapeResult re_loss_tape(nn::Tape& tape, REModel& model, const Matrix& x, const Matrix& z_onehot,
                          const Matrix& noise_mult, const Matrix& noise_add, bool update_running);

/** Fit with one Adam optimiser, early-stopping on the validation total loss. */
REModel train_re(const train::TrainingData& train_data, const train::TrainingData& val_data, const REConfig& cfg);

/** Eval-mode losses of a dataset. */
train::LossBreakdown evaluate_re(const REModel& model, const train::TrainingData& data);

/** Eval-mode latent. */
Matrix encode_re(const REModel& model, const Matrix& x, const std::vector<int>& batch);

/** Eval-mode reconstruction in scaled units. */
Matrix reconstruct_re(const REModel& model, const Matrix& x, const std::vector<int>& batch);

struct CounterfactualRequest {
    std::vector<Index> cells; ///< rows of the input matrix; empty means all
    std::string target_batch;
};

/**
 * Eval-mode reconstructions of the selected cells with their batch replaced
 * by `target_batch`. Rows follow `req.cells`.
 */
Matrix project_counterfactual(const REModel& model, const Matrix& x, const CounterfactualRequest& req);

} // namespace medl::re

#endif
