#include "medl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace medl::train {

TrainingData TrainingData::subset(const std::vector<Index>& rows) const {
    TrainingData out;
    out.x = take_rows(x, rows);
    out.batch = take(batch, rows);
    if (!target.empty()) {
        out.target = take(target, rows);
    }
    return out;
}

std::vector<std::vector<Index>> minibatches(Index n, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) {
        throw ValueError("batch size must be positive, got " + std::to_string(batch_size));
    }
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<Index>> out;
    for (Index start = 0; start < n; start += batch_size) {
        const Index stop = std::min<Index>(n, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + stop);
    }
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

Snapshot take_snapshot(std::span<nn::Parameter* const> params, std::span<nn::BatchNormState* const> norms) {
    Snapshot s;
    for (auto* p : params) {
        s.params.push_back(p->value);
    }
    for (auto* bn : norms) {
        s.running.push_back(bn->running_mean);
        s.running.push_back(bn->running_var);
    }
    return s;
}

void restore_snapshot(const Snapshot& snap, std::span<nn::Parameter* const> params,
                      std::span<nn::BatchNormState* const> norms) {
    if (snap.params.size() != params.size() || snap.running.size() != 2 * norms.size()) {
        throw StateError("snapshot does not match the model it is restored into");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = snap.params[i];
    }
    for (std::size_t i = 0; i < norms.size(); ++i) {
        norms[i]->running_mean = snap.running[2 * i];
        norms[i]->running_var = snap.running[2 * i + 1];
    }
}

void check_finite(const LossBreakdown& loss, const std::string& where) {
    for (const auto& [name, value] : loss.components) {
        if (!std::isfinite(value)) {
            throw DivergenceError(where + ": loss component '" + name + "' is not finite");
        }
    }
    if (!std::isfinite(loss.total)) {
        throw DivergenceError(where + ": total loss is not finite");
    }
}

void LossAccumulator::add(const LossBreakdown& loss, double weight) {
    my_sum.total += weight * loss.total;
    for (const auto& [name, value] : loss.components) {
        my_sum.components[name] += weight * value;
    }
    my_weight += weight;
}

LossBreakdown LossAccumulator::mean() const {
    LossBreakdown out = my_sum;
    if (my_weight > 0) {
        out.total /= my_weight;
        for (auto& [name, value] : out.components) {
            value /= my_weight;
        }
    }
    return out;
}

bool EarlyStopping::update(TrainReport& report, const EpochRecord& rec) {
    report.epochs.push_back(rec);
    report.stopping_epoch = rec.epoch;
    if (report.best_epoch < 0 || rec.validation.total < report.best_validation_total) {
        report.best_epoch = rec.epoch;
        report.best_validation_total = rec.validation.total;
        my_since_best = 0;
        return true;
    }
    ++my_since_best;
    return false;
}

} // namespace medl::train
