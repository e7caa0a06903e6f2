#ifndef MEDL_TESTS_FIXTURES_HPP
#define MEDL_TESTS_FIXTURES_HPP

#include "medl/dataio.hpp"
#include "medl/training.hpp"

#include <cmath>

namespace medl::testing {

/** Scaled log-expression with batch/type codes, split into train/validation/test thirds by index. */
struct SmallSplit {
    data::SyntheticData sim;
    train::TrainingData train;
    train::TrainingData validation;
    train::TrainingData test;
};

inline SmallSplit small_split(const data::SyntheticSpec& spec) {
    SmallSplit out;
    out.sim = data::synthesize(spec);
    Matrix logged = out.sim.dataset.counts.unaryExpr([](double v) { return std::log1p(v); });

    std::vector<Index> tr, va, te;
    for (Index i = 0; i < logged.rows(); ++i) {
        (i % 5 == 3 ? va : i % 5 == 4 ? te : tr).push_back(i);
    }
    auto scaler = data::fit_minmax(take_rows(logged, tr));
    Matrix scaled = data::apply_minmax(scaler, logged);

    train::TrainingData all;
    all.x = scaled;
    all.batch = out.sim.truth.batch;
    all.target = out.sim.truth.celltype;
    out.train = all.subset(tr);
    out.validation = all.subset(va);
    out.test = all.subset(te);
    return out;
}

inline data::SyntheticSpec small_spec(std::uint64_t seed, double shift = 2.0) {
    data::SyntheticSpec spec;
    spec.n_cells = 300;
    spec.n_genes = 20;
    spec.n_batches = 3;
    spec.n_celltypes = 2;
    spec.batch_shift_scale = shift;
    spec.seed = seed;
    return spec;
}

} // namespace medl::testing

#endif
