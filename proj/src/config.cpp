#include "medl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

extern char** environ;

namespace medl::config {

namespace {

// Reads the fields of one JSON object and remembers which keys it consumed.
class Section {
public:
    Section(const Json& j, std::string path) : my_json(j), my_path(std::move(path)) {
        if (!j.is_object()) {
            throw ConfigError("config: '" + where() + "' must be an object");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        my_seen.insert(key);
        auto it = my_json.find(key);
        if (it == my_json.end() || it->is_null()) {
            return;
        }
        try {
            check_type<T>(*it);
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: '" + full(key) + "' has the wrong type (" + it->dump() + ")");
        }
    }

    Section child(const char* key) {
        my_seen.insert(key);
        auto it = my_json.find(key);
        static const Json empty = Json::object();
        return Section(it == my_json.end() || it->is_null() ? empty : *it, full(key));
    }

    bool has(const char* key) const { return my_json.contains(key); }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (auto it = my_json.begin(); it != my_json.end(); ++it) {
            out.push_back(it.key());
        }
        return out;
    }

    void mark(const std::string& key) { my_seen.insert(key); }

    void finish() const {
        for (auto it = my_json.begin(); it != my_json.end(); ++it) {
            if (!my_seen.count(it.key())) {
                throw ConfigError("unknown config key '" + full(it.key()) + "'");
            }
        }
    }

    std::string full(const std::string& key) const { return my_path.empty() ? key : my_path + "." + key; }
    std::string where() const { return my_path.empty() ? "<root>" : my_path; }

private:
    template <typename T>
    static void check_type(const Json& v) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) {
                throw nlohmann::json::type_error::create(302, "bool expected", nullptr);
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) {
                throw nlohmann::json::type_error::create(302, "integer expected", nullptr);
            }
            if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
                throw nlohmann::json::type_error::create(302, "nonnegative integer expected", nullptr);
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) {
                throw nlohmann::json::type_error::create(302, "number expected", nullptr);
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) {
                throw nlohmann::json::type_error::create(302, "string expected", nullptr);
            }
        }
    }

    const Json& my_json;
    std::string my_path;
    std::set<std::string> my_seen;
};

ModelSettings parse_model(Section s) {
    ModelSettings m;
    s.get("optimizer_learning_rate", m.learning_rate);
    s.get("adversarial_optimizer_learning_rate", m.adversarial_learning_rate);
    s.get("reconstruction_loss_weight", m.reconstruction_loss_weight);
    s.get("classification_loss_weight", m.classification_loss_weight);
    s.get("adversarial_loss_weight", m.adversarial_loss_weight);
    s.get("cluster_loss_weight", m.cluster_loss_weight);
    s.get("kl_weight", m.kl_weight);
    s.get("post_loc_init_scale", m.post_loc_init_scale);
    s.get("prior_scale", m.prior_scale);
    s.get("kl_form", m.kl_form);
    s.get("n_latent_dims", m.n_latent_dims);
    s.get("layer_units", m.layer_units);
    s.get("layer_units_latent_classifier", m.layer_units_latent_classifier);
    s.get("n_clusters", m.n_clusters);
    s.get("n_pred", m.n_pred);
    s.get("use_batch_norm", m.use_batch_norm);
    s.get("bn_momentum", m.bn_momentum);
    s.get("adv_steps_per_batch", m.adv_steps_per_batch);
    s.get("batch_size", m.batch_size);
    s.get("epochs", m.epochs);
    s.get("patience", m.patience);
    s.get("monitor_metric", m.monitor_metric);
    s.finish();
    if (m.monitor_metric != "val_loss" && m.monitor_metric != "val_total_loss") {
        throw ConfigError("config: '" + s.full("monitor_metric") + "' must be val_loss or val_total_loss");
    }
    re::kl_form_from_string(m.kl_form);
    return m;
}

Json model_json(const ModelSettings& m) {
    Json j;
    j["optimizer_learning_rate"] = m.learning_rate;
    j["adversarial_optimizer_learning_rate"] = m.adversarial_learning_rate;
    j["reconstruction_loss_weight"] = m.reconstruction_loss_weight;
    j["classification_loss_weight"] = m.classification_loss_weight;
    j["adversarial_loss_weight"] = m.adversarial_loss_weight;
    j["cluster_loss_weight"] = m.cluster_loss_weight;
    j["kl_weight"] = m.kl_weight;
    j["post_loc_init_scale"] = m.post_loc_init_scale;
    j["prior_scale"] = m.prior_scale;
    j["kl_form"] = m.kl_form;
    j["n_latent_dims"] = m.n_latent_dims;
    j["layer_units"] = m.layer_units;
    j["layer_units_latent_classifier"] = m.layer_units_latent_classifier;
    j["n_clusters"] = m.n_clusters;
    j["n_pred"] = m.n_pred;
    j["use_batch_norm"] = m.use_batch_norm;
    j["bn_momentum"] = m.bn_momentum;
    j["adv_steps_per_batch"] = m.adv_steps_per_batch;
    j["batch_size"] = m.batch_size;
    j["epochs"] = m.epochs;
    j["patience"] = m.patience;
    j["monitor_metric"] = m.monitor_metric;
    return j;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

const std::vector<std::string>& model_names() {
    static const std::vector<std::string> names{"ae", "aec", "medl_fe", "medl_aec_fe", "medl_re"};
    return names;
}

std::string canonical_model_name(const std::string& name) {
    std::string s = lower(name);
    std::replace(s.begin(), s.end(), '-', '_');
    const auto& names = model_names();
    if (std::find(names.begin(), names.end(), s) == names.end()) {
        throw ConfigError("unknown model '" + name + "' (expected ae, aec, medl-fe, medl-aec-fe or medl-re)");
    }
    return s;
}

const ModelSettings& RunConfig::model(const std::string& name) const {
    auto it = models.find(canonical_model_name(name));
    if (it == models.end()) {
        throw ConfigError("config has no settings for model '" + name + "'");
    }
    return it->second;
}

RunConfig from_json(const Json& j) {
    RunConfig cfg;
    Section root(j, "");
    root.get("name", cfg.name);
    root.get("seed", cfg.seed);

    {
        auto s = root.child("data");
        s.get("counts_csv", cfg.data.counts_csv);
        s.get("labels_csv", cfg.data.labels_csv);
        s.get("n_hvg", cfg.data.n_hvg);
        s.get("min_genes_per_cell", cfg.data.preprocess.min_genes_per_cell);
        s.get("min_cells_per_gene", cfg.data.preprocess.min_cells_per_gene);
        s.get("target_sum", cfg.data.preprocess.target_sum);
        s.get("hvg_bins", cfg.data.preprocess.n_bins);
        s.get("scaling", cfg.data.scaling);
        s.get("n_folds", cfg.data.n_folds);
        s.finish();
        if (cfg.data.scaling != "min_max") {
            throw ConfigError("config: 'data.scaling' must be min_max");
        }
        if (cfg.data.n_folds < 3) {
            throw ConfigError("config: 'data.n_folds' must be at least 3");
        }
        if (cfg.data.counts_csv.empty() != cfg.data.labels_csv.empty()) {
            throw ConfigError("config: 'data.counts_csv' and 'data.labels_csv' go together");
        }
    }
    {
        auto s = root.child("simulation");
        auto& sim = cfg.simulation;
        s.get("n_cells", sim.n_cells);
        s.get("n_genes", sim.n_genes);
        s.get("n_batches", sim.n_batches);
        s.get("n_celltypes", sim.n_celltypes);
        s.get("celltype_separation", sim.celltype_separation);
        s.get("batch_shift_scale", sim.batch_shift_scale);
        s.get("batch_scale_spread", sim.batch_scale_spread);
        s.get("noise_sd", sim.noise_sd);
        s.get("confound", sim.confound);
        s.get("n_batch_groups", sim.n_batch_groups);
        s.finish();
    }
    {
        auto s = root.child("models");
        for (const auto& key : s.keys()) {
            const auto& names = model_names();
            if (std::find(names.begin(), names.end(), key) == names.end()) {
                throw ConfigError("unknown config key 'models." + key + "'");
            }
            s.mark(key);
            cfg.models[key] = parse_model(s.child(key.c_str()));
        }
        for (const auto& name : model_names()) {
            cfg.models.try_emplace(name);
        }
    }
    {
        auto s = root.child("evaluation");
        s.get("sample_cap", cfg.evaluation.sample_cap);
        s.get("n_trees", cfg.evaluation.n_trees);
        s.get("chance_repeats", cfg.evaluation.chance_repeats);
        s.get("classify_targets", cfg.evaluation.classify_targets);
        s.finish();
    }
    {
        auto s = root.child("genomap");
        s.get("n_cells", cfg.genomap.n_cells);
        s.get("celltype", cfg.genomap.celltype);
        s.get("target_batches", cfg.genomap.target_batches);
        s.get("figure", cfg.genomap.figure);
        s.get("fold", cfg.genomap.fold);
        s.finish();
    }
    root.finish();
    return cfg;
}

Json to_json(const RunConfig& cfg) {
    Json j;
    j["name"] = cfg.name;
    j["seed"] = cfg.seed;

    auto& d = j["data"];
    d["counts_csv"] = cfg.data.counts_csv;
    d["labels_csv"] = cfg.data.labels_csv;
    d["n_hvg"] = cfg.data.n_hvg;
    d["min_genes_per_cell"] = cfg.data.preprocess.min_genes_per_cell;
    d["min_cells_per_gene"] = cfg.data.preprocess.min_cells_per_gene;
    d["target_sum"] = cfg.data.preprocess.target_sum;
    d["hvg_bins"] = cfg.data.preprocess.n_bins;
    d["scaling"] = cfg.data.scaling;
    d["n_folds"] = cfg.data.n_folds;

    auto& s = j["simulation"];
    const auto& sim = cfg.simulation;
    s["n_cells"] = sim.n_cells;
    s["n_genes"] = sim.n_genes;
    s["n_batches"] = sim.n_batches;
    s["n_celltypes"] = sim.n_celltypes;
    s["celltype_separation"] = sim.celltype_separation;
    s["batch_shift_scale"] = sim.batch_shift_scale;
    s["batch_scale_spread"] = sim.batch_scale_spread;
    s["noise_sd"] = sim.noise_sd;
    s["confound"] = sim.confound;
    s["n_batch_groups"] = sim.n_batch_groups;

    auto& m = j["models"];
    for (const auto& name : model_names()) {
        auto it = cfg.models.find(name);
        m[name] = model_json(it == cfg.models.end() ? ModelSettings{} : it->second);
    }

    auto& e = j["evaluation"];
    e["sample_cap"] = cfg.evaluation.sample_cap;
    e["n_trees"] = cfg.evaluation.n_trees;
    e["chance_repeats"] = cfg.evaluation.chance_repeats;
    e["classify_targets"] = cfg.evaluation.classify_targets;

    auto& g = j["genomap"];
    g["n_cells"] = cfg.genomap.n_cells;
    g["celltype"] = cfg.genomap.celltype;
    g["target_batches"] = cfg.genomap.target_batches;
    g["figure"] = cfg.genomap.figure;
    g["fold"] = cfg.genomap.fold;
    return j;
}

std::string preset_dir() {
    return MEDL_PRESET_DIR;
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path);
    }
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed JSON in " + path + ": " + e.what());
    }
}

Json load_preset(const std::string& name) {
    static const std::vector<std::string> known{"heart", "asd", "aml", "synthetic"};
    if (std::find(known.begin(), known.end(), name) == known.end()) {
        throw ConfigError("unknown preset '" + name + "' (expected heart, asd, aml or synthetic)");
    }
    return read_json_file(preset_dir() + "/" + name + ".json");
}

void merge_into(Json& base, const Json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key())) {
            merge_into(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

void apply_overrides(Json& j, const std::vector<std::pair<std::string, std::string>>& env) {
    for (const auto& [name, value] : env) {
        if (name.rfind("MEDL_", 0) != 0 || name.size() == 5) {
            continue;
        }
        std::vector<std::string> path;
        std::string rest = name.substr(5);
        std::size_t at = 0;
        while (true) {
            auto next = rest.find("__", at);
            path.push_back(lower(rest.substr(at, next == std::string::npos ? std::string::npos : next - at)));
            if (next == std::string::npos) {
                break;
            }
            at = next + 2;
        }
        Json* node = &j;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            if (!node->is_object()) {
                throw ConfigError("environment override " + name + " descends into a non-object");
            }
            node = &(*node)[path[i]];
            if (node->is_null()) {
                *node = Json::object();
            }
        }
        Json parsed;
        try {
            parsed = Json::parse(value);
        } catch (const nlohmann::json::parse_error&) {
            parsed = value;
        }
        (*node)[path.back()] = parsed;
    }
}

std::vector<std::pair<std::string, std::string>> environment_overrides() {
    std::vector<std::pair<std::string, std::string>> out;
    for (char** e = environ; e && *e; ++e) {
        std::string kv(*e);
        if (kv.rfind("MEDL_", 0) != 0) {
            continue;
        }
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    std::sort(out.begin(), out.end());
    return out;
}

RunConfig resolve(const ResolveOptions& opts) {
    Json user;
    if (!opts.config_path.empty()) {
        user = read_json_file(opts.config_path);
        if (!user.is_object()) {
            throw ConfigError("config file " + opts.config_path + " must hold a JSON object");
        }
    }
    std::string preset = opts.preset;
    if (preset.empty()) {
        preset = user.is_object() && user.contains("name") && user["name"].is_string() ? user["name"].get<std::string>()
                                                                                       : "synthetic";
        static const std::vector<std::string> known{"heart", "asd", "aml", "synthetic"};
        if (std::find(known.begin(), known.end(), preset) == known.end()) {
            preset = "synthetic";
        }
    }
    Json j = load_preset(preset);
    if (!user.is_null()) {
        merge_into(j, user);
    }
    if (opts.use_environment) {
        apply_overrides(j, environment_overrides());
    }
    RunConfig cfg = from_json(j);
    if (opts.has_seed) {
        cfg.seed = opts.seed;
    }
    return cfg;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

fe::FEConfig fe_config(const RunConfig& cfg, const std::string& model, int n_batches, int n_targets, int fold) {
    const std::string name = canonical_model_name(model);
    if (name == "medl_re") {
        throw ConfigError("medl_re is not a fixed-effects model");
    }
    const auto& m = cfg.model(name);
    const bool adversary = name == "medl_fe" || name == "medl_aec_fe";
    const bool head = name == "aec" || name == "medl_aec_fe";

    fe::FEConfig out;
    out.layer_units = m.layer_units;
    out.n_latent_dims = m.n_latent_dims;
    out.lambda_mse = m.reconstruction_loss_weight;
    out.lambda_adv = adversary ? m.adversarial_loss_weight : 0.0;
    out.lambda_cce_y = head ? m.classification_loss_weight : 0.0;
    if (adversary) {
        if (m.n_clusters > 0 && m.n_clusters != n_batches) {
            throw ConfigError("models." + name + ".n_clusters is " + std::to_string(m.n_clusters) + " but the data have " +
                              std::to_string(n_batches) + " batches");
        }
        out.n_batches = n_batches;
    }
    if (head) {
        if (m.n_pred > 0 && m.n_pred != n_targets) {
            throw ConfigError("models." + name + ".n_pred is " + std::to_string(m.n_pred) + " but the data have " +
                              std::to_string(n_targets) + " target levels");
        }
        out.n_targets = n_targets;
        out.classifier_units = m.layer_units_latent_classifier;
    }
    out.batch_norm = m.use_batch_norm;
    out.bn_momentum = m.bn_momentum;
    out.learning_rate = m.learning_rate;
    out.adversary_learning_rate = m.adversarial_learning_rate;
    out.batch_size = m.batch_size;
    out.epochs = m.epochs;
    out.patience = m.patience;
    out.adv_steps_per_batch = m.adv_steps_per_batch;
    out.seed = derive_seed(cfg.seed, "train/" + name, static_cast<std::uint64_t>(fold));
    out.validate();
    return out;
}

re::REConfig re_config(const RunConfig& cfg, int n_batches, int fold) {
    const auto& m = cfg.model("medl_re");
    if (m.n_clusters > 0 && m.n_clusters != n_batches) {
        throw ConfigError("models.medl_re.n_clusters is " + std::to_string(m.n_clusters) + " but the data have " +
                          std::to_string(n_batches) + " batches");
    }
    re::REConfig out;
    out.layer_units = m.layer_units;
    out.n_latent_dims = m.n_latent_dims;
    out.n_batches = n_batches;
    out.lambda_mse = m.reconstruction_loss_weight;
    out.lambda_cce_z = m.cluster_loss_weight;
    out.lambda_kl = m.kl_weight;
    out.post_loc_init_scale = m.post_loc_init_scale;
    out.prior_scale = m.prior_scale;
    out.classifier_units = m.layer_units_latent_classifier;
    out.batch_norm = m.use_batch_norm;
    out.bn_momentum = m.bn_momentum;
    out.kl_form = re::kl_form_from_string(m.kl_form);
    out.learning_rate = m.learning_rate;
    out.batch_size = m.batch_size;
    out.epochs = m.epochs;
    out.patience = m.patience;
    out.seed = derive_seed(cfg.seed, "train/medl_re", static_cast<std::uint64_t>(fold));
    out.validate();
    return out;
}

} // namespace medl::config
