#ifndef MEDL_PIPELINE_HPP
#define MEDL_PIPELINE_HPP

#include "medl/config.hpp"
#include "medl/dataio.hpp"
#include "medl/downstream.hpp"
#include "medl/fe.hpp"
#include "medl/metrics.hpp"
#include "medl/re.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

/**
 * @file pipeline.hpp
 * @brief The stages shared by the command-line tool: data preparation,
 * per-fold scaling, training of each model variant, and the separability,
 * classification and projection analyses over folds.
 */

namespace medl::pipeline {

/** Synthetic data from the config's simulation section and master seed. */
data::SyntheticData simulate(const config::RunConfig& cfg);

/** Filter, normalise, log-transform and select genes; `n_hvg` 0 keeps every surviving gene. */
data::ExpressionDataset preprocess(const config::RunConfig& cfg, const data::ExpressionDataset& raw);

data::FoldSplit split(const config::RunConfig& cfg, const data::ExpressionDataset& processed);

/** One cross-validation round: a min-max scaler fit on its training cells and the scaled data. */
struct FoldData {
    int fold = 0;
    data::FoldRound round;
    data::MinMaxScaler scaler;
    Matrix scaled; ///< every cell, scaled with the training-fold statistics
    data::Categories batches;
    data::Categories targets;
    train::TrainingData train;
    train::TrainingData validation;
    train::TrainingData test;
};

FoldData fold_data(const data::ExpressionDataset& processed, const data::FoldSplit& folds, int fold);

/** Train one of ae, aec, medl_fe, medl_aec_fe on a fold. */
fe::FEModel train_fixed(const config::RunConfig& cfg, const std::string& model, const FoldData& fd);

re::REModel train_random(const config::RunConfig& cfg, const FoldData& fd);

/** Models trained on one fold, by canonical name. */
struct TrainedFold {
    FoldData data;
    std::map<std::string, fe::FEModel> fixed;
    std::optional<re::REModel> random;
};

/**
 * Latent coordinates of every cell for `model` (a model name or "pca").
 * PCA is fit on the fold's scaled training cells.
 */
Matrix latents(const TrainedFold& tf, const std::string& model);

/**
 * ASW, CH and 1/DB of each model's test-fold latent, against batch and
 * target labels, one entry per fold.
 */
metrics::MetricsReport separability(const config::RunConfig& cfg, const data::ExpressionDataset& processed,
                                    const std::vector<TrainedFold>& folds, const std::vector<std::string>& models);

/** Random forests on PCA, MEDL-FE and MEDL-FE + MEDL-RE latents for each configured target label. */
downstream::Experiment2Result classification(const config::RunConfig& cfg, const data::ExpressionDataset& processed,
                                             const data::FoldSplit& split, const std::vector<TrainedFold>& folds);

/**
 * Mean over `cells` of the projection onto `to` minus the projection onto
 * `from`, per gene, in log-expression units.
 */
RowVector counterfactual_difference(const re::REModel& model, const Matrix& scaled, const std::vector<Index>& cells,
                                    const std::string& from, const std::string& to);

/**
 * Projections of the fold's test cells onto every batch, in log-expression
 * units: `cell_id,batch,target_batch,<genes>`.
 */
void write_projections_csv(const re::REModel& model, const data::ExpressionDataset& processed, const FoldData& fd,
                           const std::string& path);

} // namespace medl::pipeline

#endif
