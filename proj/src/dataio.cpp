#include "medl/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace medl::data {

Categories encode(const std::vector<std::string>& labels) {
    Categories out;
    std::set<std::string> uniq(labels.begin(), labels.end());
    out.levels.assign(uniq.begin(), uniq.end());
    out.codes = encode_with(labels, out.levels);
    return out;
}

std::vector<int> encode_with(const std::vector<std::string>& labels, const std::vector<std::string>& levels) {
    std::unordered_map<std::string, int> lookup;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        lookup.emplace(levels[i], static_cast<int>(i));
    }
    std::vector<int> codes;
    codes.reserve(labels.size());
    for (const auto& l : labels) {
        auto it = lookup.find(l);
        if (it == lookup.end()) {
            throw ValueError("unknown label '" + l + "'");
        }
        codes.push_back(it->second);
    }
    return codes;
}

const std::vector<std::string>& ExpressionDataset::labels(const std::string& name) const {
    if (name == "batch") {
        return batch_labels;
    }
    if (name == "target") {
        return target_labels;
    }
    auto it = extra_labels.find(name);
    if (it == extra_labels.end()) {
        throw ValueError("dataset has no label column '" + name + "'");
    }
    return it->second;
}

void ExpressionDataset::validate() const {
    const auto n = static_cast<std::size_t>(n_cells());
    if (cell_ids.size() != n || batch_labels.size() != n || target_labels.size() != n) {
        throw DimensionError("dataset: label vectors must have one entry per cell (" + std::to_string(n) + ")");
    }
    for (const auto& [name, col] : extra_labels) {
        if (col.size() != n) {
            throw DimensionError("dataset: label column '" + name + "' has " + std::to_string(col.size()) + " entries, expected " +
                                 std::to_string(n));
        }
    }
    if (gene_ids.size() != static_cast<std::size_t>(n_genes())) {
        throw DimensionError("dataset: " + std::to_string(gene_ids.size()) + " gene IDs for " + std::to_string(n_genes()) +
                             " columns");
    }
    std::set<std::string> seen;
    for (const auto& id : cell_ids) {
        if (!seen.insert(id).second) {
            throw ValueError("dataset: duplicate cell ID '" + id + "'");
        }
    }
    if (counts.size() > 0 && counts.minCoeff() < 0) {
        throw ValueError("dataset: negative counts");
    }
}

ExpressionDataset ExpressionDataset::subset_cells(const std::vector<Index>& rows) const {
    ExpressionDataset out;
    out.counts = take_rows(counts, rows);
    out.cell_ids = take(cell_ids, rows);
    out.gene_ids = gene_ids;
    out.batch_labels = take(batch_labels, rows);
    out.target_labels = take(target_labels, rows);
    for (const auto& [name, col] : extra_labels) {
        out.extra_labels[name] = take(col, rows);
    }
    out.metadata = metadata;
    return out;
}

ExpressionDataset ExpressionDataset::subset_genes(const std::vector<Index>& cols) const {
    ExpressionDataset out = *this;
    out.counts.resize(n_cells(), static_cast<Index>(cols.size()));
    out.gene_ids.clear();
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out.counts.col(static_cast<Index>(j)) = counts.col(cols[j]);
        out.gene_ids.push_back(gene_ids[static_cast<std::size_t>(cols[j])]);
    }
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) {
        return field;
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write '" + path + "'");
    }
    return out;
}

bool next_record(std::istream& in, std::string& line) {
    while (std::getline(in, line)) {
        if (!line.empty() && line != "\r" && line[0] != '#') {
            return true;
        }
    }
    return false;
}

} // namespace

ExpressionDataset load_expression_csv(const std::string& counts_path, const std::string& labels_path) {
    auto cin = open_in(counts_path);
    std::string line;
    if (!next_record(cin, line)) {
        throw ParseError(counts_path + ": empty file");
    }
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != "cell_id") {
        throw ParseError(counts_path + ": first column must be 'cell_id'");
    }
    std::vector<std::string> genes(header.begin() + 1, header.end());

    std::vector<std::string> count_ids;
    std::vector<std::vector<double>> rows;
    std::unordered_map<std::string, std::size_t> count_row;
    std::size_t line_no = 1;
    while (next_record(cin, line)) {
        ++line_no;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ParseError(counts_path + ": row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                             " fields, expected " + std::to_string(header.size()));
        }
        if (!count_row.emplace(fields[0], rows.size()).second) {
            throw ParseError(counts_path + ": duplicate cell ID '" + fields[0] + "'");
        }
        std::vector<double> vals(genes.size());
        for (std::size_t j = 0; j < genes.size(); ++j) {
            const auto& f = fields[j + 1];
            double v = 0;
            auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw ParseError(counts_path + ": non-numeric count '" + f + "' at row " + std::to_string(line_no) +
                                 ", column " + std::to_string(j + 2));
            }
            if (v < 0) {
                throw ParseError(counts_path + ": negative count " + f + " at row " + std::to_string(line_no) + ", column " +
                                 std::to_string(j + 2));
            }
            vals[j] = v;
        }
        count_ids.push_back(fields[0]);
        rows.push_back(std::move(vals));
    }

    auto lin = open_in(labels_path);
    if (!next_record(lin, line)) {
        throw ParseError(labels_path + ": empty file");
    }
    auto lheader = split_csv_line(line);
    if (lheader.size() < 3 || lheader[0] != "cell_id" || lheader[1] != "batch" || lheader[2] != "target") {
        throw ParseError(labels_path + ": header must start with cell_id,batch,target");
    }

    ExpressionDataset ds;
    ds.gene_ids = genes;
    std::vector<std::size_t> order;
    std::set<std::string> labelled;
    while (next_record(lin, line)) {
        auto fields = split_csv_line(line);
        if (fields.size() != lheader.size()) {
            throw ParseError(labels_path + ": row for '" + fields[0] + "' has " + std::to_string(fields.size()) +
                             " fields, expected " + std::to_string(lheader.size()));
        }
        auto it = count_row.find(fields[0]);
        if (it == count_row.end()) {
            throw ParseError(labels_path + ": cell '" + fields[0] + "' has no row in " + counts_path);
        }
        if (!labelled.insert(fields[0]).second) {
            throw ParseError(labels_path + ": duplicate cell ID '" + fields[0] + "'");
        }
        order.push_back(it->second);
        ds.cell_ids.push_back(fields[0]);
        ds.batch_labels.push_back(fields[1]);
        ds.target_labels.push_back(fields[2]);
        for (std::size_t c = 3; c < lheader.size(); ++c) {
            ds.extra_labels[lheader[c]].push_back(fields[c]);
        }
    }
    for (const auto& id : count_ids) {
        if (!labelled.count(id)) {
            throw ParseError(labels_path + ": missing labels for cell '" + id + "'");
        }
    }

    ds.counts.resize(static_cast<Index>(order.size()), static_cast<Index>(genes.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& r = rows[order[i]];
        for (std::size_t j = 0; j < r.size(); ++j) {
            ds.counts(static_cast<Index>(i), static_cast<Index>(j)) = r[j];
        }
    }
    ds.validate();
    return ds;
}

void write_counts_csv(const ExpressionDataset& ds, const std::string& path) {
    auto out = open_out(path);
    out << "cell_id";
    for (const auto& g : ds.gene_ids) {
        out << ',' << csv_escape(g);
    }
    out << '\n';
    for (Index i = 0; i < ds.n_cells(); ++i) {
        out << csv_escape(ds.cell_ids[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < ds.n_genes(); ++j) {
            out << ',' << format_double(ds.counts(i, j));
        }
        out << '\n';
    }
}

void write_labels_csv(const ExpressionDataset& ds, const std::string& path) {
    auto out = open_out(path);
    out << "cell_id,batch,target";
    for (const auto& [name, col] : ds.extra_labels) {
        out << ',' << csv_escape(name);
    }
    out << '\n';
    for (std::size_t i = 0; i < ds.cell_ids.size(); ++i) {
        out << csv_escape(ds.cell_ids[i]) << ',' << csv_escape(ds.batch_labels[i]) << ',' << csv_escape(ds.target_labels[i]);
        for (const auto& [name, col] : ds.extra_labels) {
            out << ',' << csv_escape(col[i]);
        }
        out << '\n';
    }
}

ExpressionDataset filter_cells_and_genes(const ExpressionDataset& ds, int min_genes, int min_cells) {
    std::vector<Index> keep_cells;
    for (Index i = 0; i < ds.n_cells(); ++i) {
        if ((ds.counts.row(i).array() > 0).count() >= min_genes) {
            keep_cells.push_back(i);
        }
    }
    if (keep_cells.empty()) {
        throw ValueError("preprocess: no cell expresses at least " + std::to_string(min_genes) + " genes");
    }
    ExpressionDataset cells = ds.subset_cells(keep_cells);
    std::vector<Index> keep_genes;
    for (Index j = 0; j < cells.n_genes(); ++j) {
        if ((cells.counts.col(j).array() > 0).count() >= min_cells) {
            keep_genes.push_back(j);
        }
    }
    if (keep_genes.empty()) {
        throw ValueError("preprocess: no gene is detected in at least " + std::to_string(min_cells) + " cells");
    }
    return cells.subset_genes(keep_genes);
}

Matrix normalize_total(const Matrix& counts, double target_sum) {
    Matrix out = counts;
    for (Index i = 0; i < out.rows(); ++i) {
        const double total = out.row(i).sum();
        if (total > 0) {
            out.row(i) *= target_sum / total;
        }
    }
    return out;
}

std::vector<Index> select_highly_variable(const Matrix& logged, int n_top, int n_bins) {
    const Index m = logged.cols();
    if (n_top <= 0 || n_top > m) {
        throw ValueError("select_highly_variable: requested " + std::to_string(n_top) + " genes but only " +
                         std::to_string(m) + " are available");
    }
    if (n_top == m) {
        std::vector<Index> all(static_cast<std::size_t>(m));
        std::iota(all.begin(), all.end(), Index{0});
        return all;
    }

    const double n = static_cast<double>(logged.rows());
    Vector mean = logged.colwise().mean().transpose();
    Vector disp(m);
    for (Index j = 0; j < m; ++j) {
        const double var = n > 1 ? (logged.col(j).array() - mean(j)).square().sum() / (n - 1) : 0.0;
        disp(j) = mean(j) > 0 ? var / mean(j) : 0.0;
    }

    const double lo = mean.minCoeff(), hi = mean.maxCoeff();
    const double width = (hi - lo) / n_bins;
    std::vector<int> bin(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) {
        int b = width > 0 ? static_cast<int>((mean(j) - lo) / width) : 0;
        bin[static_cast<std::size_t>(j)] = std::min(b, n_bins - 1);
    }
    std::vector<double> bsum(n_bins, 0), bsq(n_bins, 0);
    std::vector<int> bcount(n_bins, 0);
    for (Index j = 0; j < m; ++j) {
        auto b = bin[static_cast<std::size_t>(j)];
        bsum[b] += disp(j);
        bcount[b] += 1;
    }
    for (Index j = 0; j < m; ++j) {
        auto b = bin[static_cast<std::size_t>(j)];
        double d = disp(j) - bsum[b] / bcount[b];
        bsq[b] += d * d;
    }
    std::vector<double> z(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) {
        auto b = bin[static_cast<std::size_t>(j)];
        const double sd = bcount[b] > 1 ? std::sqrt(bsq[b] / (bcount[b] - 1)) : 0.0;
        z[static_cast<std::size_t>(j)] = sd > 0 ? (disp(j) - bsum[b] / bcount[b]) / sd : 0.0;
    }

    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return z[static_cast<std::size_t>(a)] > z[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(n_top));
    std::sort(order.begin(), order.end());
    return order;
}

ExpressionDataset preprocess(const ExpressionDataset& ds, int n_hvg, const PreprocessOptions& opt) {
    ds.validate();
    ExpressionDataset out = filter_cells_and_genes(ds, opt.min_genes_per_cell, opt.min_cells_per_gene);
    if (n_hvg > out.n_genes()) {
        throw ValueError("preprocess: n_hvg=" + std::to_string(n_hvg) + " exceeds the " + std::to_string(out.n_genes()) +
                         " genes surviving the filters");
    }
    out.counts = normalize_total(out.counts, opt.target_sum).array().log1p().matrix();
    return out.subset_genes(select_highly_variable(out.counts, n_hvg, opt.n_bins));
}

MinMaxScaler fit_minmax(const Matrix& train) {
    if (train.rows() == 0) {
        throw ValueError("fit_minmax: empty training matrix");
    }
    return {train.colwise().minCoeff(), train.colwise().maxCoeff()};
}

Matrix apply_minmax(const MinMaxScaler& scaler, const Matrix& x) {
    if (!scaler.fitted()) {
        throw StateError("apply_minmax: scaler has not been fitted");
    }
    if (x.cols() != scaler.min.size()) {
        throw DimensionError("apply_minmax: scaler fitted on " + std::to_string(scaler.min.size()) + " genes, got " +
                             std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        const double range = scaler.max(j) - scaler.min(j);
        if (range > 0) {
            out.col(j) = (x.col(j).array() - scaler.min(j)) / range;
        } else {
            out.col(j).setZero();
        }
    }
    return out;
}

Matrix invert_minmax(const MinMaxScaler& scaler, const Matrix& scaled) {
    if (!scaler.fitted()) {
        throw StateError("invert_minmax: scaler has not been fitted");
    }
    if (scaled.cols() != scaler.min.size()) {
        throw DimensionError("invert_minmax: scaler fitted on " + std::to_string(scaler.min.size()) + " genes, got " +
                             std::to_string(scaled.cols()));
    }
    Matrix out(scaled.rows(), scaled.cols());
    for (Index j = 0; j < scaled.cols(); ++j) {
        out.col(j) = scaled.col(j).array() * (scaler.max(j) - scaler.min(j)) + scaler.min(j);
    }
    return out;
}

std::vector<Index> FoldSplit::members(int f) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if (fold[i] == f) {
            out.push_back(static_cast<Index>(i));
        }
    }
    return out;
}

FoldRound FoldSplit::round(int r) const {
    if (r < 0 || r >= k) {
        throw ValueError("fold round " + std::to_string(r) + " outside [0," + std::to_string(k) + ")");
    }
    const int val = (r + 1) % k;
    FoldRound out;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        const auto idx = static_cast<Index>(i);
        if (fold[i] == r) {
            out.test.push_back(idx);
        } else if (fold[i] == val) {
            out.validation.push_back(idx);
        } else {
            out.train.push_back(idx);
        }
    }
    return out;
}

FoldSplit stratified_kfold(const ExpressionDataset& ds, int k, std::uint64_t seed) {
    if (k < 2) {
        throw ValueError("stratified_kfold: k must be at least 2, got " + std::to_string(k));
    }
    if (ds.n_cells() < k) {
        throw ValueError("stratified_kfold: " + std::to_string(ds.n_cells()) + " cells cannot fill " + std::to_string(k) +
                         " folds");
    }

    std::map<std::pair<std::string, std::string>, std::vector<Index>> strata;
    for (Index i = 0; i < ds.n_cells(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        strata[{ds.batch_labels[u], ds.target_labels[u]}].push_back(i);
    }
    // pool undersized strata into one fallback stratum per batch; "\x01" sorts after any printable target
    std::map<std::pair<std::string, std::string>, std::vector<Index>> pooled;
    for (auto& [key, members] : strata) {
        if (static_cast<int>(members.size()) < k) {
            auto& fb = pooled[{key.first, "\x01"}];
            fb.insert(fb.end(), members.begin(), members.end());
        } else {
            pooled[key] = std::move(members);
        }
    }

    FoldSplit split;
    split.k = k;
    split.fold.assign(static_cast<std::size_t>(ds.n_cells()), -1);
    Rng rng(derive_seed(seed, "stratified_kfold"));
    int next = 0;
    for (auto& [key, members] : pooled) {
        std::sort(members.begin(), members.end());
        std::shuffle(members.begin(), members.end(), rng);
        for (auto idx : members) {
            split.fold[static_cast<std::size_t>(idx)] = next;
            next = (next + 1) % k;
        }
    }
    return split;
}

void write_folds_csv(const ExpressionDataset& ds, const FoldSplit& split, const std::string& path) {
    if (split.fold.size() != static_cast<std::size_t>(ds.n_cells())) {
        throw DimensionError("write_folds_csv: fold vector does not match the dataset");
    }
    auto out = open_out(path);
    out << "cell_id,fold\n";
    for (std::size_t i = 0; i < split.fold.size(); ++i) {
        out << csv_escape(ds.cell_ids[i]) << ',' << split.fold[i] << '\n';
    }
}

FoldSplit read_folds_csv(const ExpressionDataset& ds, const std::string& path, int k) {
    auto in = open_in(path);
    std::string line;
    if (!next_record(in, line) || split_csv_line(line) != std::vector<std::string>{"cell_id", "fold"}) {
        throw ParseError(path + ": header must be cell_id,fold");
    }
    std::unordered_map<std::string, int> by_id;
    while (next_record(in, line)) {
        auto f = split_csv_line(line);
        if (f.size() != 2) {
            throw ParseError(path + ": malformed row '" + line + "'");
        }
        int v = -1;
        auto res = std::from_chars(f[1].data(), f[1].data() + f[1].size(), v);
        if (res.ec != std::errc() || v < 0 || v >= k) {
            throw ParseError(path + ": invalid fold '" + f[1] + "' for cell '" + f[0] + "'");
        }
        by_id[f[0]] = v;
    }
    FoldSplit split;
    split.k = k;
    for (const auto& id : ds.cell_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw ParseError(path + ": no fold for cell '" + id + "'");
        }
        split.fold.push_back(it->second);
    }
    return split;
}

namespace {

std::string padded(const std::string& prefix, int v, int width) {
    std::string s = std::to_string(v);
    if (static_cast<int>(s.size()) < width) {
        s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    }
    return prefix + s;
}

int digits(long v) {
    int d = 1;
    while (v >= 10) {
        v /= 10;
        ++d;
    }
    return d;
}

} // namespace

SyntheticData synthesize(const SyntheticSpec& spec) {
    if (spec.n_cells <= 0 || spec.n_genes <= 0 || spec.n_batches <= 0 || spec.n_celltypes <= 0) {
        throw ValueError("synthesize: sizes must be positive");
    }
    if (spec.n_batch_groups <= 0) {
        throw ValueError("synthesize: n_batch_groups must be positive");
    }
    std::vector<std::vector<int>> allowed(static_cast<std::size_t>(spec.n_batches));
    if (spec.confound.empty()) {
        for (auto& a : allowed) {
            a.resize(static_cast<std::size_t>(spec.n_celltypes));
            std::iota(a.begin(), a.end(), 0);
        }
    } else {
        if (static_cast<int>(spec.confound.size()) != spec.n_batches) {
            throw ValueError("synthesize: confound map lists " + std::to_string(spec.confound.size()) + " batches, expected " +
                             std::to_string(spec.n_batches));
        }
        for (int b = 0; b < spec.n_batches; ++b) {
            const auto& types = spec.confound[static_cast<std::size_t>(b)];
            if (types.empty()) {
                throw ValueError("synthesize: confound map leaves batch " + std::to_string(b) + " empty");
            }
            for (int t : types) {
                if (t < 0 || t >= spec.n_celltypes) {
                    throw ValueError("synthesize: confound map names unknown cell type " + std::to_string(t));
                }
            }
            allowed[static_cast<std::size_t>(b)] = types;
        }
    }

    SyntheticData out;
    auto& truth = out.truth;
    if (spec.celltype_means.size() > 0) {
        if (spec.celltype_means.rows() != spec.n_celltypes || spec.celltype_means.cols() != spec.n_genes) {
            throw DimensionError("synthesize: celltype_means must be " + dims(spec.n_celltypes, spec.n_genes));
        }
        truth.celltype_means = spec.celltype_means;
    } else {
        Rng rng(derive_seed(spec.seed, "celltype_means"));
        std::uniform_real_distribution<double> base(1.5, 3.0);
        RowVector b(spec.n_genes);
        for (Index j = 0; j < spec.n_genes; ++j) {
            b(j) = base(rng);
        }
        truth.celltype_means = random_normal(spec.n_celltypes, spec.n_genes, spec.celltype_separation, rng);
        truth.celltype_means.rowwise() += b;
    }

    Rng effect_rng(derive_seed(spec.seed, "batch_effects"));
    truth.batch_shift = random_normal(spec.n_batches, spec.n_genes, spec.batch_shift_scale, effect_rng);
    truth.batch_scale = random_normal(spec.n_batches, spec.n_genes, spec.batch_scale_spread, effect_rng);

    Rng noise_rng(derive_seed(spec.seed, "noise"));
    std::normal_distribution<double> noise(0.0, 1.0);
    auto& ds = out.dataset;
    ds.counts.resize(spec.n_cells, spec.n_genes);
    const int bw = digits(spec.n_batches - 1), tw = digits(spec.n_celltypes - 1), cw = digits(spec.n_cells - 1);
    std::vector<std::string> group_col;
    for (Index i = 0; i < spec.n_cells; ++i) {
        const int b = static_cast<int>(i % spec.n_batches);
        const auto& types = allowed[static_cast<std::size_t>(b)];
        const int t = types[static_cast<std::size_t>((i / spec.n_batches) % static_cast<Index>(types.size()))];
        for (Index j = 0; j < spec.n_genes; ++j) {
            double eta = truth.celltype_means(t, j) * (1 + truth.batch_scale(b, j)) + truth.batch_shift(b, j) +
                         spec.noise_sd * noise(noise_rng);
            ds.counts(i, j) = std::max(0.0, std::expm1(eta));
        }
        truth.batch.push_back(b);
        truth.celltype.push_back(t);
        ds.cell_ids.push_back(padded("cell_", static_cast<int>(i), cw));
        ds.batch_labels.push_back(padded("batch_", b, bw));
        ds.target_labels.push_back(padded("type_", t, tw));
        group_col.push_back(padded("group_", b % spec.n_batch_groups, 1));
    }
    for (Index j = 0; j < spec.n_genes; ++j) {
        ds.gene_ids.push_back(padded("gene_", static_cast<int>(j), digits(spec.n_genes - 1)));
    }
    ds.extra_labels["group"] = std::move(group_col);
    ds.metadata["source"] = "synthetic";
    ds.metadata["seed"] = std::to_string(spec.seed);
    return out;
}

void write_ground_truth_csv(const SyntheticData& sim, const std::string& path) {
    auto out = open_out(path);
    const auto& ds = sim.dataset;
    out << "batch,effect";
    for (const auto& g : ds.gene_ids) {
        out << ',' << csv_escape(g);
    }
    out << '\n';
    auto levels = encode(ds.batch_labels).levels;
    for (Index b = 0; b < sim.truth.batch_shift.rows(); ++b) {
        const std::string name = b < static_cast<Index>(levels.size()) ? levels[static_cast<std::size_t>(b)] : std::to_string(b);
        for (const auto* which : {"shift", "scale"}) {
            const Matrix& m = std::string(which) == "shift" ? sim.truth.batch_shift : sim.truth.batch_scale;
            out << csv_escape(name) << ',' << which;
            for (Index j = 0; j < m.cols(); ++j) {
                out << ',' << format_double(m(b, j));
            }
            out << '\n';
        }
    }
}

} // namespace medl::data
