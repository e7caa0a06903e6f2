#ifndef MEDL_METRICS_HPP
#define MEDL_METRICS_HPP

#include "medl/common.hpp"
#include "medl/kernels.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

/**
 * @file metrics.hpp
 * @brief Cluster separability (silhouette, Calinski-Harabasz, reciprocal Davies-Bouldin)
 * and classification scores, with per-fold aggregation.
 *
 * All distances are Euclidean. Degenerate configurations that would divide by
 * zero return `infinity` rather than throwing, so metrics can be taken on
 * collapsed latents.
 */

namespace medl::metrics {

inline constexpr double infinity = std::numeric_limits<double>::infinity();

enum class LabelKind { batch, target };

const char* to_string(LabelKind k);

struct LabeledEmbedding {
    Matrix points; ///< n x d
    std::vector<std::string> labels;
    LabelKind label_kind = LabelKind::batch;

    Index size() const { return points.rows(); }
};

/**
 * Mean silhouette width. Points in singleton clusters, and points whose
 * intra- and nearest inter-cluster mean distances are both zero, score 0.
 */
double silhouette_asw(const LabeledEmbedding& emb, kernels::Execution exec = kernels::Execution::parallel);

/** Per-point silhouette values in input order. */
Vector silhouette_samples(const LabeledEmbedding& emb, kernels::Execution exec = kernels::Execution::parallel);

/**
 * Between-cluster over within-cluster dispersion, each divided by its degrees of freedom.
 * Returns `infinity` when the within-cluster dispersion is zero and the between part is not.
 */
double calinski_harabasz(const LabeledEmbedding& emb);

/**
 * 1/DB. A pair of coincident centroids makes DB infinite (result 0);
 * clusters that all have zero spread make DB zero (result `infinity`).
 */
double davies_bouldin_reciprocal(const LabeledEmbedding& emb);

/** Uniform sample of `cap` rows without replacement, kept in original order; identity if n <= cap. */
LabeledEmbedding subsample_cap(const LabeledEmbedding& emb, Index cap, std::uint64_t seed);

struct ClassificationScores {
    double accuracy = 0;
    double balanced_accuracy = 0;
};

/** Balanced accuracy averages recall over the classes present in `y_true`. */
ClassificationScores classification_scores(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred);

/**
 * Expected accuracy of a predictor that ignores its input and draws labels
 * from the empirical class distribution, averaged over `n_repeats` draws.
 */
double chance_accuracy(const std::vector<std::string>& y_true, std::uint64_t seed, int n_repeats = 1);

struct Summary {
    double mean = 0;
    double ci_lo = 0;
    double ci_hi = 0;
    int n_folds = 0;
};

/** Normal-approximation 95% interval: mean +/- 1.96 * sd / sqrt(n) with the n-1 sample sd. */
Summary summarize(const std::vector<double>& values);

/** Per-fold metric values grouped by model, label kind and metric name. */
class MetricsReport {
public:
    struct Key {
        std::string model;
        std::string label_kind;
        std::string metric;

        auto operator<=>(const Key&) const = default;
    };

    void add(const std::string& model, const std::string& label_kind, const std::string& metric, int fold, double value);

    /** ASW, CH and 1/DB of one embedding, subsampled to `cap` first. */
    void add_clustering(const std::string& model, const LabeledEmbedding& emb, int fold, Index cap, std::uint64_t seed);

    const std::map<Key, std::map<int, double>>& values() const { return my_values; }
    Summary summary(const Key& key) const;

    Index sample_cap = 10000;
    std::uint64_t seed = 0;

    /** Long format: `model,label_kind,metric,fold,value`. */
    void write_fold_csv(const std::string& path) const;

    /** `model,label_kind,metric,mean,ci_lo,ci_hi,n_folds`. */
    void write_summary_csv(const std::string& path) const;

private:
    std::map<Key, std::map<int, double>> my_values;
};

} // namespace medl::metrics

#endif
