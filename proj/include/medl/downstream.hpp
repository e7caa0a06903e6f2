#ifndef MEDL_DOWNSTREAM_HPP
#define MEDL_DOWNSTREAM_HPP

#include "medl/common.hpp"
#include "medl/dataio.hpp"
#include "medl/kernels.hpp"
#include "medl/metrics.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

/**
 * @file downstream.hpp
 * @brief Consumers of the learned latents: a PCA baseline, latent
 * standardisation, a random forest and the latent-space classification
 * comparison across folds.
 */

namespace medl::downstream {

struct PCAModel {
    RowVector mean;
    Matrix components;          ///< d x k, orthonormal columns
    Vector explained_variance;  ///< k, non-increasing, (n-1) denominator

    Matrix transform(const Matrix& x) const;
};

/**
 * Principal axes from the exact eigendecomposition of the training covariance.
 * Each axis is signed so that its largest-magnitude loading is positive.
 */
PCAModel pca_fit(const Matrix& train, int n_components = 2);

struct Standardizer {
    RowVector mean;
    RowVector sd; ///< population sd; 0 marks a constant column
};

Standardizer fit_standardizer(const Matrix& train);

/** (x - mean) / sd per column; constant columns map to 0. */
Matrix apply_standardizer(const Standardizer& s, const Matrix& x);

struct StandardizedLatents {
    Matrix train;
    Matrix apply;
    std::vector<Standardizer> stats;
};

/**
 * Z-score each latent with statistics from its training rows, then
 * concatenate column-wise in argument order.
 */
StandardizedLatents standardize_latents(const std::vector<Matrix>& train_parts, const std::vector<Matrix>& apply_parts);

struct ForestConfig {
    int n_trees = 100;
    int max_features = 0; ///< 0 means floor(sqrt(d)), at least 1
    bool bootstrap = true;
    int min_samples_split = 2;
    std::uint64_t seed = 0;
};

/** Flat binary tree; a node with feature < 0 is a leaf. */
struct DecisionTree {
    struct Node {
        int feature = -1;
        double threshold = 0; ///< go left when x <= threshold
        int left = -1;
        int right = -1;
        int prediction = 0;
        std::vector<double> class_counts;
    };
    std::vector<Node> nodes;

    int predict(const Eigen::Ref<const RowVector>& x) const;
};

struct RandomForest {
    ForestConfig config;
    int n_classes = 0;
    Index n_features = 0;
    std::vector<DecisionTree> trees;
};

/**
 * Grow `n_trees` CART trees on bootstrap samples, each split maximising the
 * Gini decrease over a fresh random subset of features. Thresholds are the
 * largest left-hand training value, so predictions are unchanged by any
 * increasing transform of a feature. Each tree draws from its own seeded stream.
 */
RandomForest rf_train(const Matrix& x, const std::vector<int>& y, const ForestConfig& cfg,
                      kernels::Execution exec = kernels::Execution::parallel);

/** Majority vote over trees; ties go to the lowest class code. */
std::vector<int> rf_predict(const RandomForest& forest, const Matrix& x);

/** Latents of every cell for one fold's models. Rows follow the dataset. */
struct FoldLatents {
    Matrix pca;
    Matrix fe;
    Matrix re;
};

struct Experiment2Row {
    std::string target;
    std::string latent_space; ///< "PCA", "FE" or "FE+RE"
    std::vector<double> accuracy;
    std::vector<double> balanced_accuracy;
    std::vector<double> chance;
    std::uint64_t fold_hash = 0; ///< hash of the train/test index sets used
};

struct Experiment2Result {
    std::string dataset;
    std::vector<Experiment2Row> rows;

    /** `dataset,target,latent_space,` then mean/ci_lo/ci_hi for accuracy, balanced accuracy and chance. */
    void write_csv(const std::string& path) const;
};

/**
 * For each fold and latent space, fit a forest on the training and validation
 * cells and score it on the test cells. FE+RE is the standardised
 * concatenation of the two latents.
 */
Experiment2Result run_experiment2(const std::string& dataset, const data::FoldSplit& folds,
                                  const std::vector<FoldLatents>& latents,
                                  const std::map<std::string, std::vector<std::string>>& targets,
                                  const ForestConfig& forest, int chance_repeats = 100);

} // namespace medl::downstream

#endif
