#ifndef MEDL_TRAINING_HPP
#define MEDL_TRAINING_HPP

#include "medl/common.hpp"
#include "medl/layers.hpp"

#include <map>
#include <string>
#include <vector>

/**
 * @file training.hpp
 * @brief Pieces shared by the fixed- and random-effects training loops:
 * mini-batching, loss bookkeeping, snapshots and the early-stopping record.
 */

namespace medl::train {

/** Named loss components plus their weighted total. */
struct LossBreakdown {
    double total = 0;
    std::map<std::string, double> components;
};

struct EpochRecord {
    int epoch = 0;
    LossBreakdown train; ///< averaged over mini-batches, weighted by batch size
    LossBreakdown validation;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    int stopping_epoch = -1;
    double best_validation_total = 0;
    bool stopped_early = false;
};

/** Cells with their integer batch codes and, optionally, target codes. */
struct TrainingData {
    Matrix x; ///< cells x genes, already scaled
    std::vector<int> batch;
    std::vector<int> target; ///< empty when no target head is trained

    Index size() const { return x.rows(); }
    TrainingData subset(const std::vector<Index>& rows) const;
};

/**
 * Shuffle [0, n) with `seed` and cut it into chunks of `batch_size`.
 * A trailing chunk of one row is merged into its predecessor, since batch
 * normalisation needs at least two rows.
 */
std::vector<std::vector<Index>> minibatches(Index n, int batch_size, std::uint64_t seed);

/** Copies of every parameter value and batch-norm running statistic of a model. */
struct Snapshot {
    std::vector<Matrix> params;
    std::vector<RowVector> running;
};

Snapshot take_snapshot(std::span<nn::Parameter* const> params, std::span<nn::BatchNormState* const> norms);
void restore_snapshot(const Snapshot& snap, std::span<nn::Parameter* const> params,
                      std::span<nn::BatchNormState* const> norms);

/** Throws DivergenceError naming the first non-finite component. */
void check_finite(const LossBreakdown& loss, const std::string& where);

/** Running weighted average of loss breakdowns. */
class LossAccumulator {
public:
    void add(const LossBreakdown& loss, double weight);
    LossBreakdown mean() const;

private:
    LossBreakdown my_sum;
    double my_weight = 0;
};

/**
 * Early-stopping bookkeeping. `update` records an epoch and returns true when
 * it is the new best (strictly lower validation total).
 */
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : my_patience(patience) {}

    bool update(TrainReport& report, const EpochRecord& rec);
    bool should_stop() const { return my_since_best >= my_patience; }

private:
    int my_patience;
    int my_since_best = 0;
};

} // namespace medl::train

#endif
