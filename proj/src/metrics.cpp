#include "medl/metrics.hpp"
#include "medl/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace medl::metrics {

const char* to_string(LabelKind k) {
    return k == LabelKind::batch ? "batch" : "target";
}

namespace {

struct Clusters {
    std::vector<int> codes;
    std::vector<Index> sizes;
    int k = 0;
};

Clusters prepare(const LabeledEmbedding& emb, const char* what) {
    if (static_cast<Index>(emb.labels.size()) != emb.points.rows()) {
        throw DimensionError(std::string(what) + ": " + std::to_string(emb.points.rows()) + " points but " +
                             std::to_string(emb.labels.size()) + " labels");
    }
    auto cats = data::encode(emb.labels);
    if (cats.size() < 2) {
        throw ValueError(std::string(what) + " needs at least 2 distinct labels");
    }
    Clusters out;
    out.k = cats.size();
    out.codes = std::move(cats.codes);
    out.sizes.assign(out.k, 0);
    for (int c : out.codes) {
        ++out.sizes[c];
    }
    return out;
}

Matrix centroids(const Matrix& points, const Clusters& cl) {
    Matrix c = Matrix::Zero(cl.k, points.cols());
    for (Index i = 0; i < points.rows(); ++i) {
        c.row(cl.codes[i]) += points.row(i);
    }
    for (int j = 0; j < cl.k; ++j) {
        c.row(j) /= static_cast<double>(cl.sizes[j]);
    }
    return c;
}

} // namespace

Vector silhouette_samples(const LabeledEmbedding& emb, kernels::Execution exec) {
    auto cl = prepare(emb, "silhouette");
    Matrix sums = kernels::cluster_distance_sums(emb.points, cl.codes, cl.k, exec);

    const Index n = emb.points.rows();
    Vector s(n);
    for (Index i = 0; i < n; ++i) {
        const int own = cl.codes[i];
        if (cl.sizes[own] < 2) {
            s(i) = 0;
            continue;
        }
        const double a = sums(i, own) / static_cast<double>(cl.sizes[own] - 1);
        double b = infinity;
        for (int c = 0; c < cl.k; ++c) {
            if (c != own) {
                b = std::min(b, sums(i, c) / static_cast<double>(cl.sizes[c]));
            }
        }
        const double denom = std::max(a, b);
        s(i) = denom > 0 ? (b - a) / denom : 0.0;
    }
    return s;
}

double silhouette_asw(const LabeledEmbedding& emb, kernels::Execution exec) {
    return silhouette_samples(emb, exec).mean();
}

double calinski_harabasz(const LabeledEmbedding& emb) {
    auto cl = prepare(emb, "Calinski-Harabasz");
    const Index n = emb.points.rows();
    if (n <= cl.k) {
        throw ValueError("Calinski-Harabasz needs more points (" + std::to_string(n) + ") than clusters (" +
                         std::to_string(cl.k) + ")");
    }
    Matrix cent = centroids(emb.points, cl);
    RowVector overall = emb.points.colwise().mean();

    double between = 0;
    for (int c = 0; c < cl.k; ++c) {
        between += static_cast<double>(cl.sizes[c]) * (cent.row(c) - overall).squaredNorm();
    }
    double within = 0;
    for (Index i = 0; i < n; ++i) {
        within += (emb.points.row(i) - cent.row(cl.codes[i])).squaredNorm();
    }
    if (within == 0) {
        return between > 0 ? infinity : 0.0;
    }
    return (between / (cl.k - 1)) / (within / static_cast<double>(n - cl.k));
}

double davies_bouldin_reciprocal(const LabeledEmbedding& emb) {
    auto cl = prepare(emb, "Davies-Bouldin");
    Matrix cent = centroids(emb.points, cl);

    Vector spread = Vector::Zero(cl.k);
    for (Index i = 0; i < emb.points.rows(); ++i) {
        spread(cl.codes[i]) += (emb.points.row(i) - cent.row(cl.codes[i])).norm();
    }
    for (int c = 0; c < cl.k; ++c) {
        spread(c) /= static_cast<double>(cl.sizes[c]);
    }

    double db = 0;
    for (int a = 0; a < cl.k; ++a) {
        double worst = 0;
        for (int b = 0; b < cl.k; ++b) {
            if (a == b) {
                continue;
            }
            const double d = (cent.row(a) - cent.row(b)).norm();
            if (d == 0) {
                return 0.0;
            }
            worst = std::max(worst, (spread(a) + spread(b)) / d);
        }
        db += worst;
    }
    db /= cl.k;
    return db == 0 ? infinity : 1.0 / db;
}

LabeledEmbedding subsample_cap(const LabeledEmbedding& emb, Index cap, std::uint64_t seed) {
    if (cap <= 0) {
        throw ValueError("subsample cap must be positive, got " + std::to_string(cap));
    }
    const Index n = emb.points.rows();
    if (n <= cap) {
        return emb;
    }
    std::vector<Index> idx(n);
    std::iota(idx.begin(), idx.end(), Index{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());

    LabeledEmbedding out;
    out.label_kind = emb.label_kind;
    out.points = take_rows(emb.points, idx);
    out.labels = take(emb.labels, idx);
    return out;
}

ClassificationScores classification_scores(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
    if (y_true.empty()) {
        throw ValueError("classification scores of an empty label set");
    }
    if (y_true.size() != y_pred.size()) {
        throw DimensionError("classification scores: " + std::to_string(y_true.size()) + " true labels but " +
                             std::to_string(y_pred.size()) + " predictions");
    }
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_class; // correct, total
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        auto& entry = per_class[y_true[i]];
        ++entry.second;
        if (y_true[i] == y_pred[i]) {
            ++correct;
            ++entry.first;
        }
    }
    ClassificationScores out;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
    double recall = 0;
    for (const auto& [label, counts] : per_class) {
        recall += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    out.balanced_accuracy = recall / static_cast<double>(per_class.size());
    return out;
}

double chance_accuracy(const std::vector<std::string>& y_true, std::uint64_t seed, int n_repeats) {
    if (y_true.empty()) {
        throw ValueError("chance accuracy of an empty label set");
    }
    if (n_repeats < 1) {
        throw ValueError("chance accuracy needs at least one repeat");
    }
    auto cats = data::encode(y_true);
    std::vector<double> freq(cats.size(), 0.0);
    for (int c : cats.codes) {
        freq[c] += 1;
    }
    std::discrete_distribution<int> draw(freq.begin(), freq.end());
    Rng rng(seed);

    double total = 0;
    for (int r = 0; r < n_repeats; ++r) {
        std::size_t hits = 0;
        for (int c : cats.codes) {
            hits += draw(rng) == c;
        }
        total += static_cast<double>(hits) / static_cast<double>(cats.codes.size());
    }
    return total / n_repeats;
}

Summary summarize(const std::vector<double>& values) {
    Summary out;
    out.n_folds = static_cast<int>(values.size());
    if (values.empty()) {
        throw ValueError("cannot summarise zero fold values");
    }
    const double n = static_cast<double>(values.size());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double half = 0;
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) {
            ss += (v - out.mean) * (v - out.mean);
        }
        half = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n);
    }
    out.ci_lo = out.mean - half;
    out.ci_hi = out.mean + half;
    return out;
}

void MetricsReport::add(const std::string& model, const std::string& label_kind, const std::string& metric, int fold,
                        double value) {
    my_values[Key{model, label_kind, metric}][fold] = value;
}

void MetricsReport::add_clustering(const std::string& model, const LabeledEmbedding& emb, int fold, Index cap,
                                   std::uint64_t seed_) {
    auto sub = subsample_cap(emb, cap, seed_);
    const std::string kind = to_string(emb.label_kind);
    add(model, kind, "asw", fold, silhouette_asw(sub));
    add(model, kind, "ch", fold, calinski_harabasz(sub));
    add(model, kind, "inv_db", fold, davies_bouldin_reciprocal(sub));
}

Summary MetricsReport::summary(const Key& key) const {
    auto it = my_values.find(key);
    if (it == my_values.end()) {
        throw ValueError("no metric values for " + key.model + "/" + key.label_kind + "/" + key.metric);
    }
    std::vector<double> v;
    for (const auto& [fold, value] : it->second) {
        v.push_back(value);
    }
    return summarize(v);
}

void MetricsReport::write_fold_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw ValueError("cannot open " + path + " for writing");
    }
    out << "model,label_kind,metric,fold,value\n";
    for (const auto& [key, folds] : my_values) {
        for (const auto& [fold, value] : folds) {
            out << data::csv_escape(key.model) << ',' << key.label_kind << ',' << key.metric << ',' << fold << ','
                << data::format_double(value) << '\n';
        }
    }
}

void MetricsReport::write_summary_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw ValueError("cannot open " + path + " for writing");
    }
    out << "model,label_kind,metric,mean,ci_lo,ci_hi,n_folds\n";
    for (const auto& [key, folds] : my_values) {
        auto s = summary(key);
        out << data::csv_escape(key.model) << ',' << key.label_kind << ',' << key.metric << ','
            << data::format_double(s.mean) << ',' << data::format_double(s.ci_lo) << ',' << data::format_double(s.ci_hi)
            << ',' << s.n_folds << '\n';
    }
}

} // namespace medl::metrics
