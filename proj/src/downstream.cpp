#include "medl/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace medl::downstream {

Matrix PCAModel::transform(const Matrix& x) const {
    if (x.cols() != mean.size()) {
        throw DimensionError("PCA expects " + std::to_string(mean.size()) + " features, got " + std::to_string(x.cols()));
    }
    return (x.rowwise() - mean) * components;
}

PCAModel pca_fit(const Matrix& train, int n_components) {
    if (train.rows() < 2 || train.cols() < 2) {
        throw ValueError("PCA needs at least 2 samples and 2 features, got " + dims(train.rows(), train.cols()));
    }
    if (n_components < 1 || n_components > train.cols()) {
        throw ValueError("PCA: cannot keep " + std::to_string(n_components) + " of " + std::to_string(train.cols()) +
                         " components");
    }
    PCAModel model;
    model.mean = train.colwise().mean();
    Matrix centered = train.rowwise() - model.mean;
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(train.rows() - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw ValueError("PCA eigendecomposition failed");
    }
    // eigenvalues come out ascending
    const Index d = cov.rows();
    model.components.resize(d, n_components);
    model.explained_variance.resize(n_components);
    for (int k = 0; k < n_components; ++k) {
        Vector v = eig.eigenvectors().col(d - 1 - k);
        Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) {
            v = -v;
        }
        model.components.col(k) = v;
        model.explained_variance(k) = std::max(0.0, eig.eigenvalues()(d - 1 - k));
    }
    return model;
}

Standardizer fit_standardizer(const Matrix& train) {
    if (train.rows() == 0) {
        throw ValueError("cannot standardise with zero training rows");
    }
    Standardizer s;
    s.mean = train.colwise().mean();
    Matrix centered = train.rowwise() - s.mean;
    s.sd = (centered.array().square().colwise().sum() / static_cast<double>(train.rows())).sqrt().matrix();
    return s;
}

Matrix apply_standardizer(const Standardizer& s, const Matrix& x) {
    if (x.cols() != s.mean.size()) {
        throw DimensionError("standardizer expects " + std::to_string(s.mean.size()) + " columns, got " +
                             std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        if (s.sd(j) > 0) {
            out.col(j) = (x.col(j).array() - s.mean(j)) / s.sd(j);
        } else {
            out.col(j).setZero();
        }
    }
    return out;
}

StandardizedLatents standardize_latents(const std::vector<Matrix>& train_parts, const std::vector<Matrix>& apply_parts) {
    if (train_parts.empty() || train_parts.size() != apply_parts.size()) {
        throw DimensionError("standardize_latents needs matching, nonempty lists of latents");
    }
    Index cols = 0;
    for (std::size_t i = 0; i < train_parts.size(); ++i) {
        if (train_parts[i].rows() != train_parts[0].rows() || apply_parts[i].rows() != apply_parts[0].rows()) {
            throw DimensionError("latents being concatenated must describe the same cells");
        }
        if (train_parts[i].cols() != apply_parts[i].cols()) {
            throw DimensionError("latent " + std::to_string(i) + " changes width between fit and apply");
        }
        cols += train_parts[i].cols();
    }
    StandardizedLatents out;
    out.train.resize(train_parts[0].rows(), cols);
    out.apply.resize(apply_parts[0].rows(), cols);
    Index at = 0;
    for (std::size_t i = 0; i < train_parts.size(); ++i) {
        auto s = fit_standardizer(train_parts[i]);
        const Index w = train_parts[i].cols();
        out.train.middleCols(at, w) = apply_standardizer(s, train_parts[i]);
        out.apply.middleCols(at, w) = apply_standardizer(s, apply_parts[i]);
        out.stats.push_back(std::move(s));
        at += w;
    }
    return out;
}

int DecisionTree::predict(const Eigen::Ref<const RowVector>& x) const {
    int at = 0;
    while (nodes[at].feature >= 0) {
        const auto& n = nodes[at];
        at = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[at].prediction;
}

namespace {

int argmax_lowest(const std::vector<double>& counts) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(counts.size()); ++c) {
        if (counts[c] > counts[best]) {
            best = c;
        }
    }
    return best;
}

double gini(const std::vector<double>& counts, double total) {
    if (total <= 0) {
        return 0;
    }
    double s = 0;
    for (double c : counts) {
        s += c * c;
    }
    return 1.0 - s / (total * total);
}

struct Split {
    int feature = -1;
    double threshold = 0;
    double impurity = 0; ///< weighted child impurity
};

// Best threshold on one feature; returns false when the feature is constant over the node.
bool best_split_on(const Matrix& x, const std::vector<int>& y, int n_classes, const std::vector<Index>& rows, int f,
                   Split& best, std::vector<Index>& order) {
    order = rows;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
    if (x(order.front(), f) == x(order.back(), f)) {
        return false;
    }
    const double n = static_cast<double>(order.size());
    std::vector<double> left(n_classes, 0.0), right(n_classes, 0.0);
    for (auto r : order) {
        right[y[r]] += 1;
    }
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        left[y[order[k]]] += 1;
        right[y[order[k]]] -= 1;
        const double lv = x(order[k], f);
        if (lv == x(order[k + 1], f)) {
            continue;
        }
        const double nl = static_cast<double>(k + 1);
        const double nr = n - nl;
        const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
        if (best.feature < 0 || imp < best.impurity) {
            best.feature = f;
            best.threshold = lv;
            best.impurity = imp;
        }
    }
    return true;
}

DecisionTree grow_tree(const Matrix& x, const std::vector<int>& y, int n_classes, const ForestConfig& cfg,
                       int max_features, std::uint64_t seed) {
    Rng rng(seed);
    const Index n = x.rows();
    const int d = static_cast<int>(x.cols());

    std::vector<Index> sample(n);
    if (cfg.bootstrap) {
        std::uniform_int_distribution<Index> pick(0, n - 1);
        for (auto& s : sample) {
            s = pick(rng);
        }
    } else {
        std::iota(sample.begin(), sample.end(), Index{0});
    }

    DecisionTree tree;
    struct Pending {
        int node;
        std::vector<Index> rows;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, std::move(sample)});

    std::vector<int> features(d);
    std::vector<Index> order;
    while (!stack.empty()) {
        Pending job = std::move(stack.back());
        stack.pop_back();

        std::vector<double> counts(n_classes, 0.0);
        for (auto r : job.rows) {
            counts[y[r]] += 1;
        }
        tree.nodes[job.node].class_counts = counts;
        tree.nodes[job.node].prediction = argmax_lowest(counts);

        const double total = static_cast<double>(job.rows.size());
        const double parent = gini(counts, total);
        if (parent == 0 || static_cast<int>(job.rows.size()) < cfg.min_samples_split) {
            continue;
        }

        // visit features in random order; keep drawing past max_features while all seen are constant
        std::iota(features.begin(), features.end(), 0);
        std::shuffle(features.begin(), features.end(), rng);
        Split best;
        int usable = 0;
        for (int i = 0; i < d; ++i) {
            if (usable >= max_features) {
                break;
            }
            if (best_split_on(x, y, n_classes, job.rows, features[i], best, order)) {
                ++usable;
            }
        }
        if (best.feature < 0 || best.impurity >= parent) {
            continue;
        }

        std::vector<Index> left, right;
        for (auto r : job.rows) {
            (x(r, best.feature) <= best.threshold ? left : right).push_back(r);
        }
        const int li = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const int ri = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        auto& node = tree.nodes[job.node];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = li;
        node.right = ri;
        stack.push_back({ri, std::move(right)});
        stack.push_back({li, std::move(left)});
    }
    return tree;
}

} // namespace

RandomForest rf_train(const Matrix& x, const std::vector<int>& y, const ForestConfig& cfg, kernels::Execution exec) {
    if (x.rows() == 0) {
        throw ValueError("random forest: empty training set");
    }
    if (static_cast<Index>(y.size()) != x.rows()) {
        throw DimensionError("random forest: " + std::to_string(x.rows()) + " rows but " + std::to_string(y.size()) +
                             " labels");
    }
    if (cfg.n_trees < 1 || cfg.min_samples_split < 2 || cfg.max_features < 0) {
        throw ConfigError("random forest: n_trees >= 1, min_samples_split >= 2 and max_features >= 0 required");
    }
    if (!x.allFinite()) {
        throw ValueError("random forest: non-finite feature values");
    }
    int n_classes = 0;
    for (int c : y) {
        if (c < 0) {
            throw ValueError("random forest: negative class code");
        }
        n_classes = std::max(n_classes, c + 1);
    }

    RandomForest forest;
    forest.config = cfg;
    forest.n_classes = n_classes;
    forest.n_features = x.cols();
    const int d = static_cast<int>(x.cols());
    int max_features = cfg.max_features > 0 ? std::min(cfg.max_features, d)
                                             : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));

    forest.trees.resize(cfg.n_trees);
    if (exec == kernels::Execution::serial) {
        for (int t = 0; t < cfg.n_trees; ++t) {
            forest.trees[t] = grow_tree(x, y, n_classes, cfg, max_features, derive_seed(cfg.seed, "rf/tree", t));
        }
    } else {
#pragma omp parallel for schedule(dynamic, 1)
        for (int t = 0; t < cfg.n_trees; ++t) {
            forest.trees[t] = grow_tree(x, y, n_classes, cfg, max_features, derive_seed(cfg.seed, "rf/tree", t));
        }
    }
    return forest;
}

std::vector<int> rf_predict(const RandomForest& forest, const Matrix& x) {
    if (x.cols() != forest.n_features) {
        throw DimensionError("random forest expects " + std::to_string(forest.n_features) + " features, got " +
                             std::to_string(x.cols()));
    }
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    std::vector<double> votes(forest.n_classes);
    for (Index i = 0; i < x.rows(); ++i) {
        std::fill(votes.begin(), votes.end(), 0.0);
        for (const auto& tree : forest.trees) {
            votes[tree.predict(x.row(i))] += 1;
        }
        out[i] = argmax_lowest(votes);
    }
    return out;
}

namespace {

std::uint64_t hash_rows(std::uint64_t h, const std::vector<Index>& rows) {
    for (auto r : rows) {
        h ^= static_cast<std::uint64_t>(r) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h ^ (rows.size() * 0x100000001b3ULL);
}

} // namespace

Experiment2Result run_experiment2(const std::string& dataset, const data::FoldSplit& folds,
                                  const std::vector<FoldLatents>& latents,
                                  const std::map<std::string, std::vector<std::string>>& targets,
                                  const ForestConfig& forest, int chance_repeats) {
    if (static_cast<int>(latents.size()) != folds.k) {
        throw ValueError("run_experiment2: " + std::to_string(folds.k) + " folds but latents for " +
                         std::to_string(latents.size()));
    }
    const Index n = static_cast<Index>(folds.fold.size());
    Experiment2Result result;
    result.dataset = dataset;

    for (const auto& [target, labels] : targets) {
        if (static_cast<Index>(labels.size()) != n) {
            throw DimensionError("target '" + target + "' has " + std::to_string(labels.size()) + " labels for " +
                                 std::to_string(n) + " cells");
        }
        const auto cats = data::encode(labels);
        std::vector<Experiment2Row> rows(3);
        const char* names[3] = {"PCA", "FE", "FE+RE"};
        for (int s = 0; s < 3; ++s) {
            rows[s].target = target;
            rows[s].latent_space = names[s];
        }

        for (int r = 0; r < folds.k; ++r) {
            const auto& lat = latents[r];
            if (lat.pca.rows() != n || lat.fe.rows() != n || lat.re.rows() != n) {
                throw DimensionError("run_experiment2: fold " + std::to_string(r) + " latents do not cover every cell");
            }
            auto round = folds.round(r);
            std::vector<Index> fit = round.train;
            fit.insert(fit.end(), round.validation.begin(), round.validation.end());
            std::sort(fit.begin(), fit.end());
            const auto& test = round.test;

            auto y_fit = take(cats.codes, fit);
            std::vector<std::string> y_test = take(labels, test);
            const double chance = metrics::chance_accuracy(y_test, derive_seed(forest.seed, "chance/" + target, r),
                                                           chance_repeats);

            auto concat = standardize_latents({take_rows(lat.fe, fit), take_rows(lat.re, fit)},
                                              {take_rows(lat.fe, test), take_rows(lat.re, test)});
            const Matrix inputs_fit[3] = {take_rows(lat.pca, fit), take_rows(lat.fe, fit), concat.train};
            const Matrix inputs_test[3] = {take_rows(lat.pca, test), take_rows(lat.fe, test), concat.apply};

            for (int s = 0; s < 3; ++s) {
                ForestConfig fc = forest;
                fc.seed = derive_seed(forest.seed, "experiment2/" + target, r);
                auto rf = rf_train(inputs_fit[s], y_fit, fc);
                auto pred = rf_predict(rf, inputs_test[s]);
                std::vector<std::string> pred_labels;
                pred_labels.reserve(pred.size());
                for (int p : pred) {
                    pred_labels.push_back(cats.levels[p]);
                }
                auto scores = metrics::classification_scores(y_test, pred_labels);
                rows[s].accuracy.push_back(scores.accuracy);
                rows[s].balanced_accuracy.push_back(scores.balanced_accuracy);
                rows[s].chance.push_back(chance);
                rows[s].fold_hash = hash_rows(hash_rows(rows[s].fold_hash, fit), test);
            }
        }
        for (auto& row : rows) {
            result.rows.push_back(std::move(row));
        }
    }
    return result;
}

void Experiment2Result::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw ValueError("cannot open " + path + " for writing");
    }
    out << "dataset,target,latent_space,accuracy_mean,accuracy_ci_lo,accuracy_ci_hi,balacc_mean,balacc_ci_lo,"
           "balacc_ci_hi,chance_mean,chance_ci_lo,chance_ci_hi\n";
    for (const auto& row : rows) {
        out << data::csv_escape(dataset) << ',' << data::csv_escape(row.target) << ',' << row.latent_space;
        for (const auto* v : {&row.accuracy, &row.balanced_accuracy, &row.chance}) {
            auto s = metrics::summarize(*v);
            out << ',' << data::format_double(s.mean) << ',' << data::format_double(s.ci_lo) << ','
                << data::format_double(s.ci_hi);
        }
        out << '\n';
    }
}

} // namespace medl::downstream
