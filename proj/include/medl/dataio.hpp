#ifndef MEDL_DATAIO_HPP
#define MEDL_DATAIO_HPP

#include "medl/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

/**
 * @file dataio.hpp
 * @brief Expression datasets: CSV I/O, preprocessing, scaling, fold assignment and simulation.
 */

namespace medl::data {

/** Sorted distinct levels of a label vector plus the per-cell code into them. */
struct Categories {
    std::vector<std::string> levels;
    std::vector<int> codes;

    int size() const { return static_cast<int>(levels.size()); }
};

Categories encode(const std::vector<std::string>& labels);

/** Encode against a fixed level set; unknown labels raise ValueError. */
std::vector<int> encode_with(const std::vector<std::string>& labels, const std::vector<std::string>& levels);

struct ExpressionDataset {
    Matrix counts; ///< cells x genes
    std::vector<std::string> cell_ids;
    std::vector<std::string> gene_ids;
    std::vector<std::string> batch_labels;
    std::vector<std::string> target_labels;
    /// Optional further per-cell label columns, e.g. a donor-level diagnosis.
    std::map<std::string, std::vector<std::string>> extra_labels;
    std::map<std::string, std::string> metadata;

    Index n_cells() const { return counts.rows(); }
    Index n_genes() const { return counts.cols(); }

    /** Label column by name: "batch", "target" or an extra column. */
    const std::vector<std::string>& labels(const std::string& name) const;

    /** Check shapes, uniqueness of IDs and nonnegativity. */
    void validate() const;

    ExpressionDataset subset_cells(const std::vector<Index>& rows) const;
    ExpressionDataset subset_genes(const std::vector<Index>& cols) const;
};

/**
 * Read a counts CSV (`cell_id,<gene>...`) and a labels CSV (`cell_id,batch,target[,extra...]`).
 * Rows follow the labels file; every cell must appear in both files.
 */
ExpressionDataset load_expression_csv(const std::string& counts_path, const std::string& labels_path);

void write_counts_csv(const ExpressionDataset& ds, const std::string& path);
void write_labels_csv(const ExpressionDataset& ds, const std::string& path);

struct PreprocessOptions {
    int min_genes_per_cell = 10;
    int min_cells_per_gene = 3;
    double target_sum = 1e4;
    int n_bins = 20;
};

/** Drop cells expressing fewer than `min_genes` genes, then genes detected in fewer than `min_cells` cells. */
ExpressionDataset filter_cells_and_genes(const ExpressionDataset& ds, int min_genes, int min_cells);

/** Rescale each row to sum to `target_sum` (all-zero rows stay zero). */
Matrix normalize_total(const Matrix& counts, double target_sum);

/**
 * Rank genes by normalised dispersion: variance/mean per gene of `logged`, genes
 * binned by mean into `n_bins` equal-width bins, dispersion z-scored within its
 * bin. Returns the column indices of the top `n_top`, in original column order.
 */
std::vector<Index> select_highly_variable(const Matrix& logged, int n_top, int n_bins = 20);

/** Filter, normalise to target_sum, log1p, keep the top `n_hvg` variable genes. */
ExpressionDataset preprocess(const ExpressionDataset& ds, int n_hvg, const PreprocessOptions& opt = {});

struct MinMaxScaler {
    RowVector min;
    RowVector max;

    bool fitted() const { return min.size() > 0; }
};

MinMaxScaler fit_minmax(const Matrix& train);

/** (x - min)/(max - min) per gene; constant genes map to 0; no clamping. */
Matrix apply_minmax(const MinMaxScaler& scaler, const Matrix& x);

/** Undo `apply_minmax` (constant genes map back to their min). */
Matrix invert_minmax(const MinMaxScaler& scaler, const Matrix& scaled);

struct FoldRound {
    std::vector<Index> train;
    std::vector<Index> validation;
    std::vector<Index> test;
};

struct FoldSplit {
    int k = 5;
    std::vector<int> fold; ///< per cell, in [0, k)

    /** Round r tests on fold r, validates on fold (r+1) mod k and trains on the rest. */
    FoldRound round(int r) const;
    std::vector<Index> members(int f) const;
};

/**
 * Stratify by (batch, target). Members of each stratum are shuffled with the
 * seed and dealt round-robin, continuing the deal across strata so fold sizes
 * stay within one of each other. Strata smaller than k are pooled per batch.
 */
FoldSplit stratified_kfold(const ExpressionDataset& ds, int k, std::uint64_t seed);

void write_folds_csv(const ExpressionDataset& ds, const FoldSplit& split, const std::string& path);
FoldSplit read_folds_csv(const ExpressionDataset& ds, const std::string& path, int k = 5);

struct SyntheticSpec {
    Index n_cells = 2000;
    Index n_genes = 100;
    int n_batches = 2;
    int n_celltypes = 3;
    /// n_celltypes x n_genes log-scale means; generated from the seed when empty.
    Matrix celltype_means;
    double celltype_separation = 1.0;
    double batch_shift_scale = 1.0;
    double batch_scale_spread = 0.0;
    double noise_sd = 0.3;
    /// Per batch, the cell types allowed in it. Empty means every type everywhere.
    std::vector<std::vector<int>> confound;
    /// Batches are split into this many groups (batch index mod n); exposed as the "group" label.
    int n_batch_groups = 2;
    std::uint64_t seed = 0;
};

struct SyntheticTruth {
    Matrix batch_shift; ///< n_batches x n_genes additive log-scale effect
    Matrix batch_scale; ///< n_batches x n_genes multiplicative effect on the cell-type mean
    Matrix celltype_means;
    std::vector<int> batch;
    std::vector<int> celltype;
};

struct SyntheticData {
    ExpressionDataset dataset;
    SyntheticTruth truth;
};

/**
 * Counts = max(0, expm1(eta)) with
 * eta_ig = mu_{t(i),g} * (1 + scale_{b(i),g}) + shift_{b(i),g} + noise.
 * Cell i goes to batch i mod n_batches; types cycle through the batch's allowed list,
 * so every batch has a balanced composition.
 */
SyntheticData synthesize(const SyntheticSpec& spec);

void write_ground_truth_csv(const SyntheticData& sim, const std::string& path);

// CSV helpers shared by the I/O code.
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);
std::string format_double(double v);

} // namespace medl::data

#endif
