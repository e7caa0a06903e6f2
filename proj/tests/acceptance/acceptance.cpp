/**
 * @file acceptance.cpp
 * @brief Acceptance criteria, one pass/fail line each.
 *
 * Usage: `acceptance [--only N] [--cli PATH] [--work DIR]`. `--cli` points at
 * the command-line tool for the determinism run.
 */

#include "medl/checkpoint.hpp"
#include "medl/functions.hpp"
#include "medl/layers.hpp"
#include "medl/pipeline.hpp"
#include "medl/tape.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace medl;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Settings {
    std::string cli;
    fs::path work = fs::temp_directory_path() / "medl_acceptance";
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream ss;
    ss << std::setprecision(precision) << v;
    return ss.str();
}

config::RunConfig synthetic(const std::function<void(config::Json&)>& patch = {}) {
    auto j = config::load_preset("synthetic");
    if (patch) {
        patch(j);
    }
    return config::from_json(j);
}

/** Preprocessed data, folds, and the requested models trained on every fold. */
struct Trained {
    data::SyntheticData sim;
    data::ExpressionDataset ds;
    data::FoldSplit split;
    std::vector<pipeline::TrainedFold> folds;
};

Trained train_all(const config::RunConfig& cfg, const std::vector<std::string>& fixed, bool random,
                  int n_folds = -1) {
    Trained t;
    t.sim = pipeline::simulate(cfg);
    t.ds = pipeline::preprocess(cfg, t.sim.dataset);
    t.split = pipeline::split(cfg, t.ds);
    const int k = n_folds < 0 ? t.split.k : n_folds;
    for (int f = 0; f < k; ++f) {
        pipeline::TrainedFold tf;
        tf.data = pipeline::fold_data(t.ds, t.split, f);
        for (const auto& m : fixed) {
            tf.fixed.emplace(m, pipeline::train_fixed(cfg, m, tf.data));
        }
        if (random) {
            tf.random = pipeline::train_random(cfg, tf.data);
        }
        t.folds.push_back(std::move(tf));
    }
    return t;
}

double mean_asw(const metrics::MetricsReport& report, const std::string& model, const std::string& kind) {
    return report.summary({model, kind, "asw"}).mean;
}

// 1. Analytic gradients against central differences.
Outcome gradients() {
    using namespace nn;
    Rng rng(101);
    std::uniform_int_distribution<int> width(2, 12);
    double worst = 0;
    std::string where;
    int configs = 0;
    auto record = [&](const testing::GradCheck& r, const std::string& what) {
        ++configs;
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            where = what + ":" + r.worst;
        }
    };

    // generic stacks: dense -> batch norm -> selu -> dense, with a softmax head and a tied decoder
    for (int trial = 0; trial < 10; ++trial) {
        const int d0 = width(rng), d1 = width(rng), d2 = width(rng), k = 2 + trial % 3, n = 6 + trial % 4;
        auto l1 = make_dense(d0, d1, Activation::linear, rng, "l1");
        auto bn = make_batchnorm(d1, "bn");
        bn.gamma.value = random_normal(1, d1, 1.0, rng);
        bn.beta.value = random_normal(1, d1, 1.0, rng);
        auto l2 = make_dense(d1, d2, Activation::selu, rng, "l2");
        auto head = make_dense(d2, k, Activation::softmax, rng, "head");
        auto dec = make_tied(l2, Activation::linear, "dec");
        Matrix x = random_normal(n, d0, 1.0, rng);
        std::vector<int> codes;
        for (int i = 0; i < n; ++i) {
            codes.push_back(i % k);
        }
        Matrix z = one_hot(codes, k);
        Matrix target = random_normal(n, d1, 1.0, rng);
        auto build = [&](Tape& t) {
            Var h = selu(batch_norm(t, bn, dense(t, l1, t.constant(x)), Mode::train, false));
            Var code = dense(t, l2, h);
            std::vector<Var> terms{mse(dense(t, dec, code, &l2), target), cce(dense(t, head, code), z)};
            std::vector<double> w{1.0, -0.5};
            return linear_combination(terms, w);
        };
        record(testing::check_gradients(build, {&l1.weight, &l1.bias, &bn.gamma, &bn.beta, &l2.weight, &l2.bias,
                                                &head.weight, &head.bias, &dec.bias}),
               "stack" + std::to_string(trial));
    }

    // full fixed-effects losses of every variant
    for (int trial = 0; trial < 8; ++trial) {
        fe::FEConfig cfg;
        cfg.layer_units = {width(rng), width(rng)};
        cfg.n_batches = 3;
        cfg.lambda_mse = 2.0;
        cfg.lambda_adv = trial & 1 ? 1.0 : 0.0;
        cfg.n_targets = trial & 2 ? 2 : 0;
        cfg.lambda_cce_y = trial & 2 ? 0.5 : 0.0;
        cfg.seed = 200 + trial;
        const Index genes = width(rng);
        auto m = fe::make_fe_model(cfg, genes);
        Matrix x = random_normal(7, genes, 1.0, rng);
        Matrix z = one_hot({0, 1, 2, 0, 1, 2, 0}, 3);
        Matrix y = one_hot({0, 1, 1, 0, 1, 0, 1}, 2);
        record(testing::check_gradients(
                   [&](Tape& t) { return fe::fe_loss_tape(t, m, x, z, cfg.n_targets ? y : Matrix(), false).total; },
                   m.autoencoder_parameters()),
               "fe" + std::to_string(trial));
    }

    // random-effects losses: modulation with fixed noise, KL in both forms
    for (int trial = 0; trial < 6; ++trial) {
        re::REConfig cfg;
        cfg.layer_units = {width(rng), width(rng)};
        cfg.n_batches = 3;
        cfg.lambda_mse = 2.0;
        cfg.lambda_cce_z = 0.5;
        cfg.lambda_kl = trial % 2 ? 1e-5 : 0.7;
        cfg.kl_form = trial < 3 ? re::KlForm::standard : re::KlForm::swapped;
        cfg.batch_norm = trial != 4;
        cfg.seed = 300 + trial;
        const Index genes = width(rng);
        auto m = re::make_re_model(cfg, genes);
        Matrix x = random_normal(9, genes, 1.0, rng);
        Matrix z = one_hot({0, 1, 2, 0, 1, 2, 0, 1, 2}, 3);
        const Index units = cfg.layer_units.front();
        Matrix em = random_normal(3, units, 1.0, rng);
        Matrix ea = random_normal(3, units, 1.0, rng);
        record(testing::check_gradients(
                   [&](Tape& t) { return re::re_loss_tape(t, m, x, z, em, ea, false).total; }, m.parameters()),
               "re" + std::to_string(trial));
    }

    return {configs >= 20 && worst < 1e-4,
            std::to_string(configs) + " configurations, max relative error " + fmt(worst, 3) + " (" + where + ")"};
}

// 2. Closed-form KL against Monte Carlo.
Outcome kl_oracle() {
    Rng rng(202);
    std::uniform_real_distribution<double> mu(-0.5, 0.5), sq(0.25, 1.0), s0(0.75, 1.5);
    std::normal_distribution<double> eps(0.0, 1.0);
    const int samples = 1000000;
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const double m = mu(rng), s = sq(rng), p = s0(rng);
        double acc = 0;
        for (int i = 0; i < samples; ++i) {
            const double e = eps(rng);
            const double u = m + s * e;
            // log q(u) - log p(u) with the shared normalising constant cancelled
            acc += -std::log(s) - 0.5 * e * e + std::log(p) + 0.5 * (u / p) * (u / p);
        }
        worst = std::max(worst, std::abs(acc / samples - nn::kl_gaussian(m, s, 0.0, p)));
    }
    const bool zero = nn::kl_gaussian(0.3, 0.7, 0.3, 0.7) == 0.0 && nn::kl_gaussian(0.0, 0.25, 0.0, 0.25) == 0.0;
    return {worst < 5e-3 && zero, "50 triples, max |closed - MC| " + fmt(worst, 3) + (zero ? ", KL(p||p) = 0" : ", KL(p||p) != 0")};
}

// 3. Metric oracles and hand fixtures.
Outcome metric_oracles() {
    Rng rng(303);
    std::uniform_int_distribution<int> kdist(2, 5), ndist(20, 200), ddist(1, 4);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        metrics::LabeledEmbedding e;
        testing::random_instance(rng, ndist(rng), kdist(rng), ddist(rng), e.points, e.labels);
        auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
        worst = std::max(worst, rel(metrics::silhouette_asw(e), testing::brute_silhouette(e.points, e.labels)));
        worst = std::max(worst, rel(metrics::calinski_harabasz(e), testing::brute_ch(e.points, e.labels)));
        worst = std::max(worst, rel(metrics::davies_bouldin_reciprocal(e), testing::brute_inv_db(e.points, e.labels)));
    }
    metrics::LabeledEmbedding f;
    f.points.resize(4, 1);
    f.points << 0, 1, 10, 11;
    f.labels = {"A", "A", "B", "B"};
    const double asw = metrics::silhouette_asw(f), ch = metrics::calinski_harabasz(f),
                 idb = metrics::davies_bouldin_reciprocal(f);
    const double asw_exact = (19.0 / 21.0 + 17.0 / 19.0) / 2;
    const bool fixtures = std::abs(asw - asw_exact) < 1e-12 && std::abs(asw - 0.899749) < 5e-7 &&
                          std::abs(ch - 200) < 1e-9 && std::abs(idb - 10) < 1e-12;
    return {worst < 1e-9 && fixtures, "100 instances, max relative deviation " + fmt(worst, 3) + "; fixture ASW " +
                                          fmt(asw, 7) + ", CH " + fmt(ch, 7) + ", 1/DB " + fmt(idb, 7)};
}

// 4. Batch and cell-type separability ordering.
Outcome separability() {
    auto cfg = synthetic();
    auto t = train_all(cfg, {"medl_fe"}, true);
    auto report = pipeline::separability(cfg, t.ds, t.folds, {"pca", "medl_fe", "medl_re"});
    const double re = mean_asw(report, "MEDL-AE-RE", "batch"), pca = mean_asw(report, "PCA", "batch"),
                 fe = mean_asw(report, "MEDL-AE-FE", "batch");
    const double fe_t = mean_asw(report, "MEDL-AE-FE", "target"), pca_t = mean_asw(report, "PCA", "target");
    const bool pass = re > pca && pca > fe && re - fe > 0.3 && fe_t > pca_t;
    return {pass, "batch ASW RE " + fmt(re) + " > PCA " + fmt(pca) + " > FE " + fmt(fe) + ", gap " + fmt(re - fe) +
                      "; cell-type ASW FE " + fmt(fe_t) + " vs PCA " + fmt(pca_t)};
}

const downstream::Experiment2Row& row(const downstream::Experiment2Result& r, const std::string& target,
                                      const std::string& space) {
    for (const auto& x : r.rows) {
        if (x.target == target && x.latent_space == space) {
            return x;
        }
    }
    throw StateError("no experiment-2 row for " + target + "/" + space);
}

// 5. FE+RE against FE on batch-entangled and batch-free targets.
Outcome combined_latents() {
    auto cfg = synthetic([](config::Json& j) {
        j["simulation"]["batch_shift_scale"] = 0.3;
        j["evaluation"]["classify_targets"] = {"group", "target"};
    });
    auto t = train_all(cfg, {"medl_fe"}, true);
    auto result = pipeline::classification(cfg, t.ds, t.split, t.folds);
    auto fe_g = metrics::summarize(row(result, "group", "FE").accuracy);
    auto both_g = metrics::summarize(row(result, "group", "FE+RE").accuracy);
    auto fe_t = metrics::summarize(row(result, "target", "FE").accuracy);
    auto both_t = metrics::summarize(row(result, "target", "FE+RE").accuracy);
    const bool entangled = both_g.mean - fe_g.mean >= 0.10 && both_g.ci_lo > fe_g.ci_hi;
    const bool free = both_t.ci_lo <= fe_t.ci_hi && fe_t.ci_lo <= both_t.ci_hi;
    auto ci = [](const metrics::Summary& s) {
        return fmt(100 * s.mean, 3) + "% [" + fmt(100 * s.ci_lo, 3) + ", " + fmt(100 * s.ci_hi, 3) + "]";
    };
    return {entangled && free, "batch group: FE+RE " + ci(both_g) + " vs FE " + ci(fe_g) + "; cell type: FE+RE " +
                                   ci(both_t) + " vs FE " + ci(fe_t)};
}

struct Counterfactual {
    double mean_r = 0;
    double mean_delta = 0;
    bool own_exact = true;
};

Counterfactual counterfactual(const config::RunConfig& cfg) {
    auto t = train_all(cfg, {}, true, 1);
    const auto& tf = t.folds.front();
    const auto& model = *tf.random;
    const auto& cells = tf.data.round.test;
    const auto& levels = tf.data.batches.levels;

    Counterfactual out;
    int pairs = 0;
    for (std::size_t a = 0; a < levels.size(); ++a) {
        for (std::size_t b = a + 1; b < levels.size(); ++b) {
            RowVector d = pipeline::counterfactual_difference(model, tf.data.scaled, cells, levels[a], levels[b]);
            RowVector truth = t.sim.truth.batch_shift.row(static_cast<Index>(b)) -
                              t.sim.truth.batch_shift.row(static_cast<Index>(a));
            RowVector dc = d.array() - d.mean();
            RowVector tc = truth.array() - truth.mean();
            const double denom = std::sqrt(dc.squaredNorm() * tc.squaredNorm());
            out.mean_r += denom > 0 ? dc.dot(tc) / denom : 0.0;
            out.mean_delta += d.cwiseAbs().mean();
            ++pairs;
        }
    }
    out.mean_r /= pairs;
    out.mean_delta /= pairs;

    // projection onto a cell's own batch is the ordinary reconstruction
    Matrix recon = re::reconstruct_re(model, tf.data.scaled, tf.data.batches.codes);
    for (std::size_t b = 0; b < levels.size(); ++b) {
        std::vector<Index> own;
        for (Index i : cells) {
            if (tf.data.batches.codes[static_cast<std::size_t>(i)] == static_cast<int>(b)) {
                own.push_back(i);
            }
        }
        Matrix proj = re::project_counterfactual(model, tf.data.scaled, {own, levels[b]});
        out.own_exact = out.own_exact && proj == take_rows(recon, own);
    }
    return out;
}

// 6. Counterfactual projections recover the injected batch effects.
Outcome counterfactual_fidelity() {
    auto strong = counterfactual(synthetic());
    auto none = counterfactual(synthetic([](config::Json& j) { j["simulation"]["batch_shift_scale"] = 0.0; }));
    const double ratio = none.mean_delta / strong.mean_delta;
    const bool pass = strong.mean_r > 0.5 && strong.own_exact && none.own_exact && ratio < 0.1;
    return {pass, "mean r " + fmt(strong.mean_r) + "; own-batch projection " +
                      (strong.own_exact && none.own_exact ? "exact" : "differs") + "; zero-effect delta " +
                      fmt(none.mean_delta) + " = " + fmt(100 * ratio, 3) + "% of strong " + fmt(strong.mean_delta)};
}

// 7. Cell-type head under confounding.
Outcome embedded_classifier() {
    auto cfg = synthetic([](config::Json& j) {
        j["simulation"]["confound"] = config::Json::parse("[[0, 1], [1, 2], [0, 2], [0, 1, 2]]");
    });
    auto t = train_all(cfg, {"medl_fe", "medl_aec_fe"}, false);
    auto report = pipeline::separability(cfg, t.ds, t.folds, {"medl_fe", "medl_aec_fe"});
    const double aec = mean_asw(report, "MEDL-AEC-FE", "target"), ae = mean_asw(report, "MEDL-AE-FE", "target");
    return {aec > ae, "cell-type ASW MEDL-AEC-FE " + fmt(aec) + " vs MEDL-AE-FE " + fmt(ae)};
}

// 8. Stratified dummy accuracy.
Outcome chance() {
    std::vector<std::string> y(10000, "a");
    std::fill(y.begin() + 7500, y.end(), "b");
    const double acc = metrics::chance_accuracy(y, 808, 1);
    const double sd = std::sqrt(0.625 * 0.375 / 1e4);
    return {std::abs(acc - 0.625) <= 3 * sd, "accuracy " + fmt(acc, 5) + ", |acc - 0.625| = " +
                                                  fmt(std::abs(acc - 0.625) / sd, 3) + " sd"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const Settings& s, const std::string& args) {
    const std::string cmd = "\"" + s.cli + "\" " + args + " > /dev/null";
    return std::system(cmd.c_str());
}

// 9. Two full pipeline runs with one seed give identical files.
Outcome determinism(const Settings& s) {
    if (s.cli.empty()) {
        return {false, "no --cli given"};
    }
    const fs::path config = fs::path(MEDL_ACCEPTANCE_DIR) / "determinism.json";
    std::vector<fs::path> roots{s.work / "run_a", s.work / "run_b"};
    for (const auto& root : roots) {
        fs::remove_all(root);
        const std::string common = "--preset synthetic --config \"" + config.string() + "\" --seed 5 --out \"" +
                                   root.string() + "\"";
        std::vector<std::string> steps{"simulate", "preprocess", "split"};
        for (const char* m : {"ae", "aec", "medl-fe", "medl-aec-fe", "medl-re"}) {
            steps.push_back(std::string("train --model ") + m);
        }
        steps.insert(steps.end(), {"evaluate", "classify", "project"});
        for (const auto& step : steps) {
            if (run_cli(s, step + " " + common) != 0) {
                return {false, "command failed: " + step};
            }
        }
    }
    int compared = 0;
    std::vector<std::string> differing;
    for (const auto& entry : fs::recursive_directory_iterator(roots[0])) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const auto rel = fs::relative(entry.path(), roots[0]);
        const auto top = rel.begin()->string();
        if (top != "metrics" && top != "models") {
            continue;
        }
        ++compared;
        if (!fs::exists(roots[1] / rel) || slurp(entry.path()) != slurp(roots[1] / rel)) {
            differing.push_back(rel.string());
        }
    }
    for (const auto& root : roots) {
        fs::remove_all(root);
    }
    if (!differing.empty()) {
        return {false, std::to_string(differing.size()) + " of " + std::to_string(compared) + " files differ, e.g. " +
                           differing.front()};
    }
    return {compared > 0, std::to_string(compared) + " metrics and checkpoint files byte-identical"};
}

// 10. Normalisation and filtering on constructed fixtures.
Outcome preprocessing() {
    Rng rng(1010);
    std::poisson_distribution<int> pois(3.0);
    data::ExpressionDataset ds;
    const Index n = 60, m = 40;
    ds.counts.resize(n, m);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < m; ++j) {
            ds.counts(i, j) = pois(rng) + (j < 15 ? 1 : 0);
        }
        ds.cell_ids.push_back("c" + std::to_string(i));
        ds.batch_labels.push_back("b" + std::to_string(i % 2));
        ds.target_labels.push_back("t" + std::to_string(i % 3));
    }
    for (Index j = 0; j < m; ++j) {
        ds.gene_ids.push_back("g" + std::to_string(j));
    }
    // cell 5 expresses exactly 9 genes, cell 6 exactly 10
    ds.counts.row(5).setZero();
    ds.counts.row(5).head(9).setConstant(2);
    ds.counts.row(6).setZero();
    ds.counts.row(6).head(10).setConstant(2);
    // gene 30 is seen in 2 cells, gene 31 in 3 (all kept cells)
    ds.counts.col(30).setZero();
    ds.counts(0, 30) = ds.counts(1, 30) = 4;
    ds.counts.col(31).setZero();
    ds.counts(0, 31) = ds.counts(1, 31) = ds.counts(2, 31) = 4;

    auto f = data::filter_cells_and_genes(ds, 10, 3);
    auto has = [](const std::vector<std::string>& v, const std::string& s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    };
    const bool filters = !has(f.cell_ids, "c5") && has(f.cell_ids, "c6") && f.n_cells() == n - 1 &&
                         !has(f.gene_ids, "g30") && has(f.gene_ids, "g31");

    Matrix norm = data::normalize_total(f.counts, 1e4);
    double worst = 0;
    for (Index i = 0; i < norm.rows(); ++i) {
        worst = std::max(worst, std::abs(norm.row(i).sum() - 1e4) / 1e4);
    }
    return {filters && worst <= 1e-9, std::string("filters ") + (filters ? "drop c5/g30, keep c6/g31" : "wrong") +
                                          "; max relative row-sum error " + fmt(worst, 3)};
}

} // namespace

int main(int argc, char** argv) {
    Settings settings;
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else if (a == "--cli" && i + 1 < argc) {
            settings.cli = argv[++i];
        } else if (a == "--work" && i + 1 < argc) {
            settings.work = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--only N] [--cli PATH] [--work DIR]\n";
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},
        {"KL closed form vs Monte Carlo", kl_oracle},
        {"metric oracles", metric_oracles},
        {"batch/cell-type separability ordering", separability},
        {"FE+RE vs FE classification", combined_latents},
        {"counterfactual fidelity", counterfactual_fidelity},
        {"embedded cell-type classifier", embedded_classifier},
        {"chance accuracy", chance},
        {"determinism", [&] { return determinism(settings); }},
        {"preprocessing invariants", preprocessing}};

    int failed = 0;
    for (std::size_t c = 0; c < criteria.size(); ++c) {
        const int id = static_cast<int>(c) + 1;
        if (only != 0 && only != id) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[c].second();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[c].first << "): "
                  << out.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
        failed += out.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
