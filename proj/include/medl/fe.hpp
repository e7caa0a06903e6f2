#ifndef MEDL_FE_HPP
#define MEDL_FE_HPP

#include "medl/dataio.hpp"
#include "medl/layers.hpp"
#include "medl/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

/**
 * @file fe.hpp
 * @brief Fixed-effects autoencoder: a tied-weight autoencoder whose latent is
 * pushed towards batch invariance by an adversarial batch classifier, plus
 * the ablations without the adversary and/or with a cell-type head.
 */

namespace medl::fe {

enum class Variant { ae, aec, medl_fe, medl_aec_fe };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct FEConfig {
    std::vector<int> layer_units{512, 132};
    int n_latent_dims = 2;
    double lambda_mse = 1.0;
    double lambda_adv = 0.0;
    double lambda_cce_y = 0.0;
    int n_batches = 0;
    int n_targets = 0; ///< 0 disables the cell-type head
    std::vector<int> classifier_units{2};
    bool batch_norm = true;
    double bn_momentum = 0.99;
    double learning_rate = 1e-4;
    double adversary_learning_rate = 1e-4;
    int batch_size = 512;
    int epochs = 500;
    int patience = 30;
    int adv_steps_per_batch = 1;
    std::uint64_t seed = 0;

    /** AE / AEC / MEDL-FE / MEDL-AEC-FE, read off the adversary weight and head size. */
    Variant variant() const;
    void validate() const;
};

/**
 * Encoder hidden layers are dense -> batch norm -> selu, followed by a linear
 * latent layer. The decoder mirrors them with tied weights and ends in a
 * linear output layer. The adversary is one softmax layer on the latent.
 */
struct FEModel {
    FEConfig config;
    Index n_genes = 0;
    std::vector<nn::DenseLayer> encoder;        ///< hidden layers then the latent layer
    std::vector<nn::BatchNormState> encoder_bn; ///< one per hidden layer (empty without batch norm)
    std::vector<nn::DenseLayer> decoder;        ///< mirror of `encoder`, tied
    std::vector<nn::BatchNormState> decoder_bn;
    nn::DenseLayer adversary;            ///< latent -> batch probabilities; empty without an adversary
    std::vector<nn::DenseLayer> y_head;  ///< latent -> hidden -> target probabilities
    nn::AdamState optimizer;             ///< encoder, decoder and y-head
    nn::AdamState adversary_optimizer;
    data::MinMaxScaler scaler;
    train::TrainReport history;

    bool has_adversary() const { return config.lambda_adv > 0; }
    bool has_y_head() const { return config.n_targets > 0; }

    /** Parameters updated by the reconstruction optimizer, in a fixed order. */
    std::vector<nn::Parameter*> autoencoder_parameters();
    std::vector<nn::Parameter*> adversary_parameters();
    std::vector<nn::Parameter*> all_parameters();
    std::vector<nn::BatchNormState*> norms();
};

/** Freshly initialised model for `n_genes` inputs. */
FEModel make_fe_model(const FEConfig& cfg, Index n_genes);

/**
 * Weighted loss: lambda_mse * MSE - lambda_adv * CCE(z, zhat) + lambda_cce_y * CCE(y, yhat).
 * The adversarial term is dropped when lambda_adv is 0 and the target term when
 * `y`/`yhat` are null. Null targets with n_targets > 0 are an error.
 */
train::LossBreakdown fe_loss(const Matrix& x, const Matrix& xhat, const Matrix& z, const Matrix& zhat, const Matrix* y,
                             const Matrix* yhat, const FEConfig& cfg);

/** Outputs of one forward pass on plain matrices. */
struct FEOutputs {
    Matrix latent;
    Matrix reconstruction;
    Matrix batch_probs;  ///< empty without an adversary
    Matrix target_probs; ///< empty without a y-head
};

/** Eval-mode forward pass; batch norm uses its running statistics. */
FEOutputs fe_forward(const FEModel& model, const Matrix& x);

/** Loss nodes of one training-mode pass, recorded on a tape with the adversary frozen. */
struct FETapeResult {
    nn::Var total;
    nn::Var mse;
    nn::Var adv_cce; ///< invalid without an adversary
    nn::Var y_cce;   ///< invalid without a y-head
};

/** `z` and `y` are one-hot; either may be empty when the matching head is absent. */
FETapeResult fe_loss_tape(nn::Tape& tape, FEModel& model, const Matrix& x, const Matrix& z, const Matrix& y,
                          bool update_running);

/** One Adam step of the adversary on CCE(z, zhat) with the autoencoder frozen. */
void fe_adversary_step(FEModel& model, const Matrix& x, const Matrix& z);

/** One Adam step of encoder, decoder and y-head on the weighted loss with the adversary frozen. */
train::LossBreakdown fe_autoencoder_step(FEModel& model, const Matrix& x, const Matrix& z, const Matrix& y);

/**
 * Fit on `train_data`, early-stopping on the validation total loss.
 * Each mini-batch first updates the adversary alone, then the autoencoder
 * with the adversary frozen. The best epoch's weights are restored.
 */
FEModel train_fe(const train::TrainingData& train_data, const train::TrainingData& val_data, const FEConfig& cfg);

/** Total and component losses of a dataset in eval mode. */
train::LossBreakdown evaluate_fe(const FEModel& model, const train::TrainingData& data);

/** Eval-mode latent, n x n_latent_dims. Input must already be scaled. */
Matrix encode_fe(const FEModel& model, const Matrix& x);

/** Eval-mode reconstruction in scaled units. */
Matrix reconstruct_fe(const FEModel& model, const Matrix& x);

} // namespace medl::fe

#endif
