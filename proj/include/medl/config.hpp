#ifndef MEDL_CONFIG_HPP
#define MEDL_CONFIG_HPP

#include "medl/common.hpp"
#include "medl/dataio.hpp"
#include "medl/fe.hpp"
#include "medl/re.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

/**
 * @file config.hpp
 * @brief Run configuration: JSON files and presets with strict key checking,
 * environment overrides and a stable hash for provenance records.
 *
 * A configuration is resolved in layers. A named preset supplies the base,
 * a user file is merged over it key by key, then `MEDL_*` environment
 * variables and finally command-line flags. Any key the schema does not know
 * is rejected with its full dotted path.
 */

namespace medl::config {

using Json = nlohmann::ordered_json;

/** Hyperparameters of one model, keyed like the hyperparameter tables. */
struct ModelSettings {
    double learning_rate = 1e-4;
    double adversarial_learning_rate = 1e-4;
    double reconstruction_loss_weight = 1.0;
    double classification_loss_weight = 0.0; ///< cell-type head (y)
    double adversarial_loss_weight = 0.0;
    double cluster_loss_weight = 0.0;        ///< latent batch classifier (z)
    double kl_weight = 1e-5;
    double post_loc_init_scale = 0.1;
    double prior_scale = 0.25;
    std::string kl_form = "standard";
    int n_latent_dims = 2;
    std::vector<int> layer_units{512, 132};
    std::vector<int> layer_units_latent_classifier;
    int n_clusters = 0; ///< 0: take the batch count from the data
    int n_pred = 0;     ///< 0: take the target level count from the data
    bool use_batch_norm = true;
    double bn_momentum = 0.99;
    int adv_steps_per_batch = 1;
    int batch_size = 512;
    int epochs = 500;
    int patience = 30;
    std::string monitor_metric = "val_total_loss";
};

struct DataSettings {
    std::string counts_csv; ///< empty: simulate
    std::string labels_csv;
    int n_hvg = 0;          ///< 0 keeps every gene that survives filtering
    data::PreprocessOptions preprocess;
    std::string scaling = "min_max";
    int n_folds = 5;
};

struct EvaluationSettings {
    Index sample_cap = 10000;
    int n_trees = 100;
    int chance_repeats = 100;
    std::vector<std::string> classify_targets{"target"};
};

struct GenomapSettings {
    int n_cells = 300;
    std::string celltype;                    ///< empty: the most common cell type
    std::vector<std::string> target_batches; ///< empty: every batch
    std::string figure = "genomap";
    int fold = 0;
};

struct RunConfig {
    std::string name = "synthetic";
    std::uint64_t seed = 0;
    DataSettings data;
    data::SyntheticSpec simulation;
    std::map<std::string, ModelSettings> models; ///< keys: ae, aec, medl_fe, medl_aec_fe, medl_re
    EvaluationSettings evaluation;
    GenomapSettings genomap;

    const ModelSettings& model(const std::string& name) const;
};

/** Model names accepted on the command line, in pipeline order. */
const std::vector<std::string>& model_names();

/** "medl-fe" and "medl_fe" both map to "medl_fe"; unknown names raise ConfigError. */
std::string canonical_model_name(const std::string& name);

/** Strictly parse a JSON document; unknown keys and wrong types raise ConfigError. */
RunConfig from_json(const Json& j);

/** Every field, defaults included, in a fixed order. */
Json to_json(const RunConfig& cfg);

/** Directory holding the shipped presets. */
std::string preset_dir();

/** heart, asd, aml or synthetic. */
Json load_preset(const std::string& name);

Json read_json_file(const std::string& path);

/** Recursively overlay `patch` onto `base`; objects merge, everything else replaces. */
void merge_into(Json& base, const Json& patch);

/**
 * Apply `MEDL_A__B__C=value` overrides to key path a.b.c (lower-cased).
 * Values are parsed as JSON when possible and otherwise taken as strings.
 */
void apply_overrides(Json& j, const std::vector<std::pair<std::string, std::string>>& env);

/** `MEDL_*` variables of the current process, sorted by name. */
std::vector<std::pair<std::string, std::string>> environment_overrides();

struct ResolveOptions {
    std::string preset;      ///< empty: the config file's own base, else "synthetic"
    std::string config_path; ///< optional user file
    bool use_environment = true;
    bool has_seed = false;
    std::uint64_t seed = 0;
};

RunConfig resolve(const ResolveOptions& opts);

/** FNV-1a 64 of the canonical JSON dump. */
std::uint64_t config_hash(const RunConfig& cfg);
std::string hex64(std::uint64_t v);

/**
 * Fixed-effects config for one of ae, aec, medl_fe, medl_aec_fe. The variant
 * decides which heads exist; the data decide their widths when the settings leave them at 0.
 */
fe::FEConfig fe_config(const RunConfig& cfg, const std::string& model, int n_batches, int n_targets, int fold);

re::REConfig re_config(const RunConfig& cfg, int n_batches, int fold);

} // namespace medl::config

#endif
