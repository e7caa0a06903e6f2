#include "doctest.h"

#include "medl/dataio.hpp"
#include "tempdir.hpp"

#include <cmath>
#include <fstream>
#include <set>

using namespace medl;
using namespace medl::data;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

ExpressionDataset toy(Index n, Index m, std::uint64_t seed) {
    Rng rng(seed);
    std::poisson_distribution<int> pois(4.0);
    ExpressionDataset ds;
    ds.counts.resize(n, m);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < m; ++j) {
            ds.counts(i, j) = pois(rng) + 1;
        }
        ds.cell_ids.push_back("c" + std::to_string(i));
        ds.batch_labels.push_back("b" + std::to_string(i % 2));
        ds.target_labels.push_back("t" + std::to_string(i % 3));
    }
    for (Index j = 0; j < m; ++j) {
        ds.gene_ids.push_back("g" + std::to_string(j));
    }
    return ds;
}

} // namespace

TEST_CASE("load_expression_csv round trip and alignment") {
    testing::TempDir dir;
    write_file(dir / "counts.csv", "cell_id,g1,g2,g3\nA,1,0,2.5\nB,3,4,5\n");
    write_file(dir / "labels.csv", "cell_id,batch,target\nB,b1,t1\nA,b0,t0\n");
    auto ds = load_expression_csv((dir / "counts.csv").string(), (dir / "labels.csv").string());
    CHECK(ds.n_cells() == 2);
    CHECK(ds.n_genes() == 3);
    // rows follow the labels file
    CHECK(ds.cell_ids[0] == "B");
    CHECK(ds.counts(0, 2) == 5.0);
    CHECK(ds.counts(1, 2) == 2.5);
    CHECK(ds.batch_labels[1] == "b0");

    write_counts_csv(ds, (dir / "c2.csv").string());
    write_labels_csv(ds, (dir / "l2.csv").string());
    auto again = load_expression_csv((dir / "c2.csv").string(), (dir / "l2.csv").string());
    CHECK(again.counts == ds.counts);
    CHECK(again.cell_ids == ds.cell_ids);
}

TEST_CASE("load_expression_csv error contracts") {
    testing::TempDir dir;
    write_file(dir / "counts.csv", "cell_id,g1\nA,1\nB,2\n");
    SUBCASE("missing label names the cell") {
        write_file(dir / "labels.csv", "cell_id,batch,target\nA,b,t\n");
        try {
            load_expression_csv((dir / "counts.csv").string(), (dir / "labels.csv").string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("'B'") != std::string::npos);
        }
    }
    SUBCASE("negative count gives coordinates") {
        write_file(dir / "neg.csv", "cell_id,g1,g2\nA,1,2\nB,-1,0\n");
        write_file(dir / "labels.csv", "cell_id,batch,target\nA,b,t\nB,b,t\n");
        try {
            load_expression_csv((dir / "neg.csv").string(), (dir / "labels.csv").string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            std::string msg = e.what();
            CHECK(msg.find("row 3") != std::string::npos);
            CHECK(msg.find("column 2") != std::string::npos);
        }
    }
    SUBCASE("non-numeric and duplicate") {
        write_file(dir / "bad.csv", "cell_id,g1\nA,x\n");
        write_file(dir / "labels.csv", "cell_id,batch,target\nA,b,t\n");
        CHECK_THROWS_AS(load_expression_csv((dir / "bad.csv").string(), (dir / "labels.csv").string()), ParseError);
        write_file(dir / "dup.csv", "cell_id,g1\nA,1\nA,2\n");
        CHECK_THROWS_AS(load_expression_csv((dir / "dup.csv").string(), (dir / "labels.csv").string()), ParseError);
    }
    SUBCASE("extra label columns are kept") {
        write_file(dir / "labels.csv", "cell_id,batch,target,diagnosis\nA,b,t,case\nB,b,t,control\n");
        auto ds = load_expression_csv((dir / "counts.csv").string(), (dir / "labels.csv").string());
        CHECK(ds.labels("diagnosis")[1] == "control");
        CHECK_THROWS_AS(ds.labels("nope"), ValueError);
    }
}

TEST_CASE("normalisation and log1p by hand") {
    Matrix c(1, 2);
    c << 1, 3;
    Matrix norm = normalize_total(c, 1e4);
    CHECK(norm(0, 0) == doctest::Approx(2500));
    CHECK(norm(0, 1) == doctest::Approx(7500));

    // the same cell inside a matrix that survives the filters
    auto ds = toy(12, 20, 1);
    ds.counts.row(0).setZero();
    ds.counts.row(0).head(10).setConstant(1.0);
    ds.counts(0, 0) = 1;
    ds.counts(0, 1) = 3;
    // total for row 0 is 1 + 3 + 8 = 12
    auto pre = preprocess(ds, 20);
    CHECK(pre.counts(0, 0) == doctest::Approx(std::log1p(1e4 / 12)));
    CHECK(pre.counts(0, 1) == doctest::Approx(std::log1p(3e4 / 12)));
}

TEST_CASE("filters drop sparse cells and rare genes") {
    auto ds = toy(10, 20, 2);
    ds.counts.row(4).setZero();
    ds.counts.row(4).head(9).setOnes(); // 9 genes expressed
    ds.counts.col(7).setZero();
    ds.counts(0, 7) = 1;
    ds.counts(1, 7) = 1; // detected in 2 cells
    auto f = filter_cells_and_genes(ds, 10, 3);
    CHECK(f.n_cells() == 9);
    CHECK(std::find(f.cell_ids.begin(), f.cell_ids.end(), "c4") == f.cell_ids.end());
    CHECK(f.n_genes() == 19);
    CHECK(std::find(f.gene_ids.begin(), f.gene_ids.end(), "g7") == f.gene_ids.end());
}

TEST_CASE("preprocess invariants") {
    auto ds = toy(40, 30, 3);
    auto filtered = filter_cells_and_genes(ds, 10, 3);
    Matrix norm = normalize_total(filtered.counts, 1e4);
    for (Index i = 0; i < norm.rows(); ++i) {
        CHECK(std::abs(norm.row(i).sum() - 1e4) <= 1e-9 * 1e4);
    }
    auto pre = preprocess(ds, 12);
    CHECK(pre.n_genes() == 12);
    CHECK(pre.counts.minCoeff() >= 0.0);
    CHECK_THROWS_AS(preprocess(ds, 31), ValueError);

    // re-running selection at full width keeps the gene set
    auto hv = select_highly_variable(pre.counts, 12);
    CHECK(hv.size() == 12);
    for (std::size_t j = 0; j < hv.size(); ++j) {
        CHECK(hv[j] == static_cast<Index>(j));
    }
}

TEST_CASE("highly variable selection prefers overdispersed genes") {
    Rng rng(8);
    Matrix x(200, 10);
    std::normal_distribution<double> tight(2.0, 0.05), wide(2.0, 1.0);
    for (Index i = 0; i < 200; ++i) {
        for (Index j = 0; j < 10; ++j) {
            x(i, j) = std::max(0.0, j == 3 || j == 8 ? wide(rng) : tight(rng));
        }
    }
    auto top = select_highly_variable(x, 2, 1);
    CHECK(top == std::vector<Index>{3, 8});
}

TEST_CASE("empty dataset after filtering") {
    auto ds = toy(5, 20, 4);
    ds.counts.setZero();
    CHECK_THROWS_AS(preprocess(ds, 5), ValueError);
}

TEST_CASE("min-max scaler") {
    Matrix train(2, 2);
    train << 2, 5, 4, 5;
    auto s = fit_minmax(train);
    Matrix q(1, 2);
    q << 3, 5;
    Matrix r = apply_minmax(s, q);
    CHECK(r(0, 0) == doctest::Approx(0.5));
    CHECK(r(0, 1) == 0.0);
    q << 5, 5;
    CHECK(apply_minmax(s, q)(0, 0) == doctest::Approx(1.5));
    CHECK_THROWS_AS(apply_minmax(MinMaxScaler{}, q), StateError);
    CHECK(invert_minmax(s, apply_minmax(s, train)).isApprox(train));
}

TEST_CASE("min-max properties on random data") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix x = random_normal(15, 6, 3.0, rng);
        auto s = fit_minmax(x);
        Matrix y = apply_minmax(s, x);
        CHECK(y.minCoeff() >= 0.0);
        CHECK(y.maxCoeff() <= 1.0);
        auto s2 = fit_minmax(y);
        CHECK((apply_minmax(s2, y) - y).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("stratified k-fold examples") {
    ExpressionDataset ds;
    ds.counts = Matrix::Zero(10, 1);
    ds.gene_ids = {"g"};
    for (int i = 0; i < 10; ++i) {
        ds.cell_ids.push_back("c" + std::to_string(i));
        ds.batch_labels.push_back(i < 5 ? "b0" : "b1");
        ds.target_labels.push_back("t");
    }
    auto split = stratified_kfold(ds, 5, 42);
    for (int f = 0; f < 5; ++f) {
        auto mem = split.members(f);
        REQUIRE(mem.size() == 2);
        CHECK(ds.batch_labels[static_cast<std::size_t>(mem[0])] != ds.batch_labels[static_cast<std::size_t>(mem[1])]);
    }
    CHECK(stratified_kfold(ds, 5, 42).fold == split.fold);
    CHECK(stratified_kfold(ds, 5, 43).fold != split.fold);
    CHECK_THROWS_AS(stratified_kfold(ds, 1, 0), ValueError);
    CHECK_THROWS_AS(stratified_kfold(ds.subset_cells({0, 1, 2}), 5, 0), ValueError);
}

TEST_CASE("small stratum lands in distinct folds") {
    ExpressionDataset ds;
    ds.counts = Matrix::Zero(13, 1);
    ds.gene_ids = {"g"};
    for (int i = 0; i < 13; ++i) {
        ds.cell_ids.push_back("c" + std::to_string(i));
        ds.batch_labels.push_back(i < 10 ? "b0" : "b1");
        ds.target_labels.push_back(i < 10 ? "common" : "rare");
    }
    auto split = stratified_kfold(ds, 5, 7);
    std::set<int> folds{split.fold[10], split.fold[11], split.fold[12]};
    CHECK(folds.size() == 3);
}

TEST_CASE("fold rounds partition the cells") {
    auto sim = synthesize({.n_cells = 97, .n_genes = 5, .n_batches = 3, .n_celltypes = 2, .seed = 3});
    auto split = stratified_kfold(sim.dataset, 5, 1);
    for (int r = 0; r < 5; ++r) {
        auto round = split.round(r);
        std::set<Index> all;
        all.insert(round.train.begin(), round.train.end());
        all.insert(round.validation.begin(), round.validation.end());
        all.insert(round.test.begin(), round.test.end());
        CHECK(all.size() == 97);
        CHECK(round.train.size() + round.validation.size() + round.test.size() == 97);
    }
    std::size_t lo = 1000, hi = 0;
    for (int f = 0; f < 5; ++f) {
        lo = std::min(lo, split.members(f).size());
        hi = std::max(hi, split.members(f).size());
    }
    CHECK(hi - lo <= 1);

    testing::TempDir dir;
    write_folds_csv(sim.dataset, split, (dir / "folds.csv").string());
    CHECK(read_folds_csv(sim.dataset, (dir / "folds.csv").string()).fold == split.fold);
}

TEST_CASE("synthesize without random effects") {
    auto sim = synthesize({.n_cells = 60, .n_genes = 8, .n_batches = 3, .n_celltypes = 2, .batch_shift_scale = 0,
                           .batch_scale_spread = 0, .noise_sd = 0, .seed = 5});
    const auto& ds = sim.dataset;
    for (Index i = 0; i < ds.n_cells(); ++i) {
        for (Index k = 0; k < ds.n_cells(); ++k) {
            if (sim.truth.celltype[static_cast<std::size_t>(i)] == sim.truth.celltype[static_cast<std::size_t>(k)]) {
                CHECK(ds.counts.row(i) == ds.counts.row(k));
            }
        }
    }
}

TEST_CASE("synthesize with one batch") {
    auto sim = synthesize({.n_cells = 30, .n_genes = 400, .n_batches = 1, .n_celltypes = 2, .seed = 6});
    CHECK(sim.truth.batch_shift.rows() == 1);
    CHECK(std::abs(sim.truth.batch_shift.mean()) < 0.2);
    CHECK(encode(sim.dataset.batch_labels).size() == 1);
}

TEST_CASE("synthesize recovers the injected shift on average") {
    // means far from zero so the floor never clips
    SyntheticSpec spec{.n_cells = 4000, .n_genes = 50, .n_batches = 2, .n_celltypes = 2,
                       .celltype_means = Matrix::Constant(2, 50, 4.0), .batch_shift_scale = 0.5, .noise_sd = 0.3, .seed = 9};
    spec.celltype_means.row(1).array() += 1.0;
    auto sim = synthesize(spec);
    Matrix logged = sim.dataset.counts.array().log1p().matrix();
    RowVector m0 = RowVector::Zero(spec.n_genes), m1 = RowVector::Zero(spec.n_genes);
    int n0 = 0, n1 = 0;
    for (Index i = 0; i < spec.n_cells; ++i) {
        if (sim.truth.batch[static_cast<std::size_t>(i)] == 0) {
            m0 += logged.row(i);
            ++n0;
        } else {
            m1 += logged.row(i);
            ++n1;
        }
    }
    RowVector observed = m1 / n1 - m0 / n0;
    RowVector injected = sim.truth.batch_shift.row(1) - sim.truth.batch_shift.row(0);
    const double rms = std::sqrt((observed - injected).squaredNorm() / spec.n_genes);
    CHECK(rms < 3 * spec.noise_sd / std::sqrt(static_cast<double>(spec.n_cells)));
}

TEST_CASE("synthesize is deterministic and honours the confound map") {
    SyntheticSpec spec{.n_cells = 90, .n_genes = 6, .n_batches = 3, .n_celltypes = 3, .confound = {{0}, {0, 1}, {2}}, .seed = 2};
    auto a = synthesize(spec);
    auto b = synthesize(spec);
    CHECK(a.dataset.counts == b.dataset.counts);
    for (std::size_t i = 0; i < a.truth.batch.size(); ++i) {
        const auto& allowed = spec.confound[static_cast<std::size_t>(a.truth.batch[i])];
        CHECK(std::find(allowed.begin(), allowed.end(), a.truth.celltype[i]) != allowed.end());
    }
    spec.confound[1].clear();
    CHECK_THROWS_AS(synthesize(spec), ValueError);
}
