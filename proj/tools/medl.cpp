/**
 * @file medl.cpp
 * @brief Command-line front end: one subcommand per pipeline stage.
 *
 * Stages read and write under `--out`:
 *
 * - `simulate`: data/counts.csv, data/labels.csv, data/ground_truth.csv
 * - `preprocess`: data/processed_counts.csv, data/processed_labels.csv
 * - `split`: folds.csv
 * - `train`: models/<model>/fold<i>.json and fold<i>_history.csv
 * - `evaluate`: metrics/experiment1_{folds,summary}.csv, metrics/experiment3_{folds,summary}.csv
 * - `classify`: metrics/experiment2.csv
 * - `project`: projections/fold<i>.csv
 * - `genomap`: genomap/<figure>/...
 *
 * Every written file gets a `.meta.json` sidecar with the version, config
 * hash, seed and command.
 */

#include "medl/checkpoint.hpp"
#include "medl/config.hpp"
#include "medl/genomap.hpp"
#include "medl/pipeline.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace medl;

namespace {

struct Options {
    std::string preset;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "medl_out";
    std::string model;
    std::optional<int> fold;
};

class Run {
public:
    Run(const Options& opts, std::string command) : my_opts(opts), my_command(std::move(command)) {
        config::ResolveOptions ro;
        ro.preset = opts.preset;
        ro.config_path = opts.config_path;
        if (opts.seed) {
            ro.has_seed = true;
            ro.seed = *opts.seed;
        }
        my_cfg = config::resolve(ro);
        my_hash = config::hex64(config::config_hash(my_cfg));
        my_root = opts.out;
        std::cout << "command: " << my_command << '\n'
                  << "seed: " << my_cfg.seed << '\n'
                  << "config_hash: " << my_hash << '\n'
                  << "config: " << config::to_json(my_cfg).dump() << '\n';
    }

    const config::RunConfig& cfg() const { return my_cfg; }

    std::string path(const std::string& rel, bool create_parent = true) const {
        fs::path p = my_root / rel;
        if (create_parent) {
            fs::create_directories(p.parent_path());
        }
        return p.string();
    }

    std::string directory(const std::string& rel) const {
        fs::path p = my_root / rel;
        fs::create_directories(p);
        return p.string();
    }

    std::string input(const std::string& rel) const {
        fs::path p = my_root / rel;
        if (!fs::exists(p)) {
            throw StateError("missing " + p.string() + " (run the earlier stage first)");
        }
        return p.string();
    }

    void wrote(const std::string& file) const {
        checkpoint::write_sidecar(file, {checkpoint::library_version(), my_hash, my_cfg.seed, my_command});
        std::cout << "wrote " << file << '\n';
    }

    data::ExpressionDataset processed() const {
        return data::load_expression_csv(input("data/processed_counts.csv"), input("data/processed_labels.csv"));
    }

    data::FoldSplit folds(const data::ExpressionDataset& ds) const {
        return data::read_folds_csv(ds, input("folds.csv"), my_cfg.data.n_folds);
    }

    std::vector<int> fold_list(const data::FoldSplit& split) const {
        if (my_opts.fold) {
            if (*my_opts.fold < 0 || *my_opts.fold >= split.k) {
                throw ValueError("--fold " + std::to_string(*my_opts.fold) + " out of range [0, " +
                                 std::to_string(split.k) + ")");
            }
            return {*my_opts.fold};
        }
        std::vector<int> all(static_cast<std::size_t>(split.k));
        for (int f = 0; f < split.k; ++f) {
            all[static_cast<std::size_t>(f)] = f;
        }
        return all;
    }

    std::string model_path(const std::string& model, int fold) const {
        return "models/" + model + "/fold" + std::to_string(fold) + ".json";
    }

    /** Fold data plus whichever of `models` are asked for, loaded from checkpoints. */
    pipeline::TrainedFold load_fold(const data::ExpressionDataset& ds, const data::FoldSplit& split, int fold,
                                    const std::vector<std::string>& models) const {
        pipeline::TrainedFold tf;
        tf.data = pipeline::fold_data(ds, split, fold);
        for (const auto& m : models) {
            if (m == "pca") {
                continue;
            }
            const auto file = input(model_path(m, fold));
            if (m == "medl_re") {
                tf.random = checkpoint::load_re(file);
            } else {
                tf.fixed.emplace(m, checkpoint::load_fe(file));
            }
        }
        return tf;
    }

    const Options& opts() const { return my_opts; }

private:
    Options my_opts;
    std::string my_command;
    config::RunConfig my_cfg;
    std::string my_hash;
    fs::path my_root;
};

void cmd_simulate(const Run& run) {
    auto sim = pipeline::simulate(run.cfg());
    const auto counts = run.path("data/counts.csv");
    data::write_counts_csv(sim.dataset, counts);
    run.wrote(counts);
    const auto labels = run.path("data/labels.csv");
    data::write_labels_csv(sim.dataset, labels);
    run.wrote(labels);
    const auto truth = run.path("data/ground_truth.csv");
    data::write_ground_truth_csv(sim, truth);
    run.wrote(truth);
}

void cmd_preprocess(const Run& run) {
    const auto& d = run.cfg().data;
    auto raw = d.counts_csv.empty()
                   ? data::load_expression_csv(run.input("data/counts.csv"), run.input("data/labels.csv"))
                   : data::load_expression_csv(d.counts_csv, d.labels_csv);
    auto ds = pipeline::preprocess(run.cfg(), raw);
    std::cout << "cells: " << ds.n_cells() << " genes: " << ds.n_genes() << '\n';
    const auto counts = run.path("data/processed_counts.csv");
    data::write_counts_csv(ds, counts);
    run.wrote(counts);
    const auto labels = run.path("data/processed_labels.csv");
    data::write_labels_csv(ds, labels);
    run.wrote(labels);
}

void cmd_split(const Run& run) {
    auto ds = run.processed();
    auto split = pipeline::split(run.cfg(), ds);
    const auto out = run.path("folds.csv");
    data::write_folds_csv(ds, split, out);
    run.wrote(out);
}

void cmd_train(const Run& run) {
    if (run.opts().model.empty()) {
        throw ConfigError("train needs --model (ae, aec, medl-fe, medl-aec-fe or medl-re)");
    }
    const auto model = config::canonical_model_name(run.opts().model);
    auto ds = run.processed();
    auto split = run.folds(ds);
    for (int fold : run.fold_list(split)) {
        auto fd = pipeline::fold_data(ds, split, fold);
        const auto file = run.path(run.model_path(model, fold));
        const train::TrainReport* history = nullptr;
        std::optional<fe::FEModel> fixed;
        std::optional<re::REModel> random;
        if (model == "medl_re") {
            random = pipeline::train_random(run.cfg(), fd);
            checkpoint::save_re(*random, file);
            history = &random->history;
        } else {
            fixed = pipeline::train_fixed(run.cfg(), model, fd);
            checkpoint::save_fe(*fixed, file);
            history = &fixed->history;
        }
        run.wrote(file);
        std::cout << model << " fold " << fold << ": " << history->epochs.size() << " epochs, best "
                  << history->best_epoch << ", validation total " << history->best_validation_total << '\n';
        const auto hist = run.path("models/" + model + "/fold" + std::to_string(fold) + "_history.csv");
        checkpoint::write_history_csv(*history, hist);
        run.wrote(hist);
    }
}

void write_report(const Run& run, const metrics::MetricsReport& report, const std::string& stem) {
    const auto folds = run.path("metrics/" + stem + "_folds.csv");
    report.write_fold_csv(folds);
    run.wrote(folds);
    const auto summary = run.path("metrics/" + stem + "_summary.csv");
    report.write_summary_csv(summary);
    run.wrote(summary);
}

void cmd_evaluate(const Run& run) {
    auto ds = run.processed();
    auto split = run.folds(ds);
    const std::vector<std::string> exp1{"pca", "ae", "medl_fe", "medl_re"};
    const std::vector<std::string> exp3{"ae", "aec", "medl_fe", "medl_aec_fe"};
    std::vector<pipeline::TrainedFold> one, three;
    for (int f = 0; f < split.k; ++f) {
        one.push_back(run.load_fold(ds, split, f, exp1));
        three.push_back(run.load_fold(ds, split, f, exp3));
    }
    write_report(run, pipeline::separability(run.cfg(), ds, one, exp1), "experiment1");
    write_report(run, pipeline::separability(run.cfg(), ds, three, exp3), "experiment3");
}

void cmd_classify(const Run& run) {
    auto ds = run.processed();
    auto split = run.folds(ds);
    std::vector<pipeline::TrainedFold> folds;
    for (int f = 0; f < split.k; ++f) {
        folds.push_back(run.load_fold(ds, split, f, {"medl_fe", "medl_re"}));
    }
    auto result = pipeline::classification(run.cfg(), ds, split, folds);
    const auto out = run.path("metrics/experiment2.csv");
    result.write_csv(out);
    run.wrote(out);
}

void cmd_project(const Run& run) {
    auto ds = run.processed();
    auto split = run.folds(ds);
    for (int fold : run.fold_list(split)) {
        auto tf = run.load_fold(ds, split, fold, {"medl_re"});
        const auto out = run.path("projections/fold" + std::to_string(fold) + ".csv");
        pipeline::write_projections_csv(*tf.random, ds, tf.data, out);
        run.wrote(out);
    }
}

std::string most_common(const std::vector<std::string>& labels) {
    std::map<std::string, int> counts;
    for (const auto& l : labels) {
        ++counts[l];
    }
    std::string best;
    int n = -1;
    for (const auto& [label, c] : counts) {
        if (c > n) {
            best = label;
            n = c;
        }
    }
    return best;
}

void cmd_genomap(const Run& run) {
    const auto& g = run.cfg().genomap;
    auto ds = run.processed();
    auto split = run.folds(ds);
    const int fold = run.opts().fold ? *run.opts().fold : g.fold;
    auto tf = run.load_fold(ds, split, fold, {"medl_fe", "medl_re"});
    const auto& test = tf.data.round.test;

    auto grid = genomap::build_grid(genomap::interaction_matrix(tf.data.train.x));
    const auto types = take(ds.target_labels, test);
    const auto celltype = g.celltype.empty() ? most_common(types) : g.celltype;
    auto picked = genomap::sample_cells(types, celltype, g.n_cells, derive_seed(run.cfg().seed, "genomap"));
    if (picked.empty()) {
        throw ValueError("no test cells of type '" + celltype + "' in fold " + std::to_string(fold));
    }
    std::vector<Index> rows;
    for (auto i : picked) {
        rows.push_back(test[static_cast<std::size_t>(i)]);
    }

    genomap::PanelCells cells;
    cells.x = take_rows(tf.data.scaled, rows);
    cells.ids = take(ds.cell_ids, rows);
    cells.celltypes = take(ds.target_labels, rows);
    cells.batches = take(ds.batch_labels, rows);

    genomap::RenderOptions ro;
    ro.out_dir = run.directory("genomap");
    ro.figure = g.figure;
    const auto targets = g.target_batches.empty() ? tf.random->batch_levels : g.target_batches;
    genomap::render_panel(grid, cells, tf.fixed.at("medl_fe"), *tf.random, targets, ro);
    const auto manifest = (fs::path(ro.out_dir) / g.figure / "manifest.csv").string();
    run.wrote(manifest);
    std::cout << "rendered " << rows.size() << " cells of " << celltype << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-effects autoencoders for batch-confounded expression data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", checkpoint::library_version());

    Options opts;
    std::uint64_t seed = 0;
    int fold = 0;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--preset", opts.preset, "Base preset")
            ->check(CLI::IsMember({"heart", "asd", "aml", "synthetic"}));
        sub->add_option("--config", opts.config_path, "JSON config merged over the preset")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Master seed, overriding the config");
        sub->add_option("--out", opts.out, "Output directory")->capture_default_str();
    };

    const std::vector<std::pair<std::string, void (*)(const Run&)>> commands{
        {"simulate", cmd_simulate}, {"preprocess", cmd_preprocess}, {"split", cmd_split},
        {"train", cmd_train},       {"evaluate", cmd_evaluate},     {"classify", cmd_classify},
        {"project", cmd_project},   {"genomap", cmd_genomap}};
    const std::map<std::string, std::string> help{
        {"simulate", "Write synthetic counts, labels and the injected batch effects"},
        {"preprocess", "Filter, normalise, log-transform and select genes"},
        {"split", "Stratified cross-validation folds"},
        {"train", "Train one model on every fold, or on --fold"},
        {"evaluate", "Latent separability metrics over folds"},
        {"classify", "Random forests on PCA, FE and FE+RE latents"},
        {"project", "Counterfactual projections of test cells onto every batch"},
        {"genomap", "Genomap panels of original, FE and RE-projected expression"}};

    std::vector<std::pair<CLI::App*, void (*)(const Run&)>> subs;
    for (const auto& [name, fn] : commands) {
        auto* sub = app.add_subcommand(name, help.at(name));
        common(sub);
        if (name == "train") {
            sub->add_option("--model", opts.model, "ae, aec, medl-fe, medl-aec-fe or medl-re")->required();
        }
        if (name == "train" || name == "project" || name == "genomap") {
            sub->add_option("--fold", fold, "Fold index");
        }
        subs.emplace_back(sub, fn);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: UsageError: " << e.what() << '\n';
        return 2;
    }

    for (const auto& [sub, fn] : subs) {
        if (!sub->parsed()) {
            continue;
        }
        if (sub->count("--seed") > 0) {
            opts.seed = seed;
        }
        if (sub->get_option_no_throw("--fold") && sub->count("--fold") > 0) {
            opts.fold = fold;
        }
        try {
            Run run(opts, sub->get_name());
            fn(run);
        } catch (const Error& e) {
            std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "error: InternalError: " << e.what() << '\n';
            return 1;
        }
    }
    return 0;
}
