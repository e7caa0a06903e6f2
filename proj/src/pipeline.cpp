#include "medl/pipeline.hpp"

#include <fstream>

namespace medl::pipeline {

namespace {

std::string display_name(const std::string& model) {
    static const std::map<std::string, std::string> names{{"pca", "PCA"},
                                                          {"ae", "AE"},
                                                          {"aec", "AEC"},
                                                          {"medl_fe", "MEDL-AE-FE"},
                                                          {"medl_aec_fe", "MEDL-AEC-FE"},
                                                          {"medl_re", "MEDL-AE-RE"}};
    auto it = names.find(model);
    return it == names.end() ? model : it->second;
}

} // namespace

data::SyntheticData simulate(const config::RunConfig& cfg) {
    auto spec = cfg.simulation;
    spec.seed = derive_seed(cfg.seed, "simulate");
    return data::synthesize(spec);
}

data::ExpressionDataset preprocess(const config::RunConfig& cfg, const data::ExpressionDataset& raw) {
    const auto& p = cfg.data.preprocess;
    if (cfg.data.n_hvg > 0) {
        return data::preprocess(raw, cfg.data.n_hvg, p);
    }
    // keep every gene that survives filtering
    auto filtered = data::filter_cells_and_genes(raw, p.min_genes_per_cell, p.min_cells_per_gene);
    return data::preprocess(raw, static_cast<int>(filtered.n_genes()), p);
}

data::FoldSplit split(const config::RunConfig& cfg, const data::ExpressionDataset& processed) {
    return data::stratified_kfold(processed, cfg.data.n_folds, derive_seed(cfg.seed, "split"));
}

FoldData fold_data(const data::ExpressionDataset& processed, const data::FoldSplit& folds, int fold) {
    if (fold < 0 || fold >= folds.k) {
        throw ValueError("fold " + std::to_string(fold) + " out of range [0, " + std::to_string(folds.k) + ")");
    }
    if (static_cast<Index>(folds.fold.size()) != processed.n_cells()) {
        throw DimensionError("fold assignment covers " + std::to_string(folds.fold.size()) + " cells, dataset has " +
                             std::to_string(processed.n_cells()));
    }
    FoldData fd;
    fd.fold = fold;
    fd.round = folds.round(fold);
    fd.scaler = data::fit_minmax(take_rows(processed.counts, fd.round.train));
    fd.scaled = data::apply_minmax(fd.scaler, processed.counts);
    fd.batches = data::encode(processed.batch_labels);
    fd.targets = data::encode(processed.target_labels);

    train::TrainingData all;
    all.x = fd.scaled;
    all.batch = fd.batches.codes;
    all.target = fd.targets.codes;
    fd.train = all.subset(fd.round.train);
    fd.validation = all.subset(fd.round.validation);
    fd.test = all.subset(fd.round.test);
    return fd;
}

fe::FEModel train_fixed(const config::RunConfig& cfg, const std::string& model, const FoldData& fd) {
    auto fc = config::fe_config(cfg, model, fd.batches.size(), fd.targets.size(), fd.fold);
    auto m = fe::train_fe(fd.train, fd.validation, fc);
    m.scaler = fd.scaler;
    return m;
}

re::REModel train_random(const config::RunConfig& cfg, const FoldData& fd) {
    auto rc = config::re_config(cfg, fd.batches.size(), fd.fold);
    auto m = re::train_re(fd.train, fd.validation, rc);
    m.scaler = fd.scaler;
    m.batch_levels = fd.batches.levels;
    return m;
}

Matrix latents(const TrainedFold& tf, const std::string& model) {
    if (model == "pca") {
        auto pca = downstream::pca_fit(tf.data.train.x, 2);
        return pca.transform(tf.data.scaled);
    }
    const std::string name = config::canonical_model_name(model);
    if (name == "medl_re") {
        if (!tf.random) {
            throw StateError("fold " + std::to_string(tf.data.fold) + " has no trained medl_re model");
        }
        return re::encode_re(*tf.random, tf.data.scaled, tf.data.batches.codes);
    }
    auto it = tf.fixed.find(name);
    if (it == tf.fixed.end()) {
        throw StateError("fold " + std::to_string(tf.data.fold) + " has no trained " + name + " model");
    }
    return fe::encode_fe(it->second, tf.data.scaled);
}

metrics::MetricsReport separability(const config::RunConfig& cfg, const data::ExpressionDataset& processed,
                                    const std::vector<TrainedFold>& folds, const std::vector<std::string>& models) {
    metrics::MetricsReport report;
    report.sample_cap = cfg.evaluation.sample_cap;
    report.seed = cfg.seed;
    for (const auto& tf : folds) {
        const auto& test = tf.data.round.test;
        const auto batches = take(processed.batch_labels, test);
        const auto targets = take(processed.target_labels, test);
        for (const auto& model : models) {
            Matrix lat = take_rows(latents(tf, model), test);
            const auto label = display_name(model == "pca" ? model : config::canonical_model_name(model));
            const auto seed = derive_seed(cfg.seed, "evaluate/" + label, static_cast<std::uint64_t>(tf.data.fold));
            report.add_clustering(label, {lat, batches, metrics::LabelKind::batch}, tf.data.fold,
                                  cfg.evaluation.sample_cap, seed);
            report.add_clustering(label, {lat, targets, metrics::LabelKind::target}, tf.data.fold,
                                  cfg.evaluation.sample_cap, seed);
        }
    }
    return report;
}

downstream::Experiment2Result classification(const config::RunConfig& cfg, const data::ExpressionDataset& processed,
                                             const data::FoldSplit& split, const std::vector<TrainedFold>& folds) {
    std::vector<downstream::FoldLatents> lat(folds.size());
    for (const auto& tf : folds) {
        if (tf.data.fold < 0 || tf.data.fold >= static_cast<int>(folds.size())) {
            throw ValueError("classification needs every fold, in order");
        }
        auto& l = lat[static_cast<std::size_t>(tf.data.fold)];
        l.pca = latents(tf, "pca");
        l.fe = latents(tf, "medl_fe");
        l.re = latents(tf, "medl_re");
    }
    std::map<std::string, std::vector<std::string>> targets;
    for (const auto& name : cfg.evaluation.classify_targets) {
        targets[name] = processed.labels(name);
    }
    downstream::ForestConfig forest;
    forest.n_trees = cfg.evaluation.n_trees;
    forest.seed = derive_seed(cfg.seed, "classify");
    return downstream::run_experiment2(cfg.name, split, lat, targets, forest, cfg.evaluation.chance_repeats);
}

RowVector counterfactual_difference(const re::REModel& model, const Matrix& scaled, const std::vector<Index>& cells,
                                    const std::string& from, const std::string& to) {
    if (cells.empty()) {
        throw ValueError("counterfactual difference over no cells");
    }
    Matrix a = data::invert_minmax(model.scaler, re::project_counterfactual(model, scaled, {cells, from}));
    Matrix b = data::invert_minmax(model.scaler, re::project_counterfactual(model, scaled, {cells, to}));
    return (b - a).colwise().mean();
}

void write_projections_csv(const re::REModel& model, const data::ExpressionDataset& processed, const FoldData& fd,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ValueError("cannot open " + path + " for writing");
    }
    out << "cell_id,batch,target_batch";
    for (const auto& g : processed.gene_ids) {
        out << ',' << data::csv_escape(g);
    }
    out << '\n';
    const auto& cells = fd.round.test;
    for (const auto& target : model.batch_levels) {
        Matrix proj = data::invert_minmax(model.scaler, re::project_counterfactual(model, fd.scaled, {cells, target}));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out << data::csv_escape(processed.cell_ids[cells[i]]) << ',' << data::csv_escape(processed.batch_labels[cells[i]])
                << ',' << data::csv_escape(target);
            for (Index g = 0; g < proj.cols(); ++g) {
                out << ',' << data::format_double(proj(static_cast<Index>(i), g));
            }
            out << '\n';
        }
    }
}

} // namespace medl::pipeline
