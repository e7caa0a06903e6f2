#include "doctest.h"

#include "medl/config.hpp"
#include "tempdir.hpp"

#include <fstream>

using namespace medl;
using namespace medl::config;

namespace {

struct Expected {
    const char* model;
    double reconstruction;
    int n_clusters;
    int n_pred;
    const char* monitor;
};

void check_models(const RunConfig& cfg, const std::vector<Expected>& rows) {
    for (const auto& e : rows) {
        CAPTURE(e.model);
        const auto& m = cfg.model(e.model);
        CHECK(m.reconstruction_loss_weight == e.reconstruction);
        CHECK(m.n_clusters == e.n_clusters);
        CHECK(m.n_pred == e.n_pred);
        CHECK(m.monitor_metric == e.monitor);
        CHECK(m.learning_rate == 1e-4);
        CHECK(m.n_latent_dims == 2);
        CHECK(m.batch_size == 512);
        CHECK(m.epochs == 500);
        CHECK(m.patience == 30);
    }
}

} // namespace

TEST_CASE("dataset presets carry the published hyperparameters") {
    auto heart = from_json(load_preset("heart"));
    CHECK(heart.data.n_hvg == 3000);
    check_models(heart, {{"ae", 1, 0, 0, "val_loss"},
                         {"aec", 81, 0, 13, "val_loss"},
                         {"medl_fe", 5400, 147, 0, "val_total_loss"},
                         {"medl_aec_fe", 9450, 147, 13, "val_total_loss"},
                         {"medl_re", 110, 147, 0, "val_total_loss"}});

    auto asd = from_json(load_preset("asd"));
    CHECK(asd.data.n_hvg == 2916);
    check_models(asd, {{"ae", 1, 0, 0, "val_loss"},
                       {"aec", 1, 0, 17, "val_loss"},
                       {"medl_fe", 1000, 31, 0, "val_total_loss"},
                       {"medl_aec_fe", 1000, 31, 17, "val_total_loss"},
                       {"medl_re", 110, 31, 17, "val_total_loss"}});

    auto aml = from_json(load_preset("aml"));
    CHECK(aml.data.n_hvg == 2916);
    check_models(aml, {{"ae", 1, 0, 0, "val_loss"},
                       {"aec", 100, 0, 21, "val_loss"},
                       {"medl_fe", 4000, 19, 0, "val_total_loss"},
                       {"medl_aec_fe", 1500, 19, 21, "val_total_loss"},
                       {"medl_re", 110, 19, 0, "val_total_loss"}});

    for (const auto* cfg : {&heart, &asd, &aml}) {
        CHECK(cfg->model("aec").classification_loss_weight == 0.1);
        CHECK(cfg->model("medl_aec_fe").classification_loss_weight == 1);
        CHECK(cfg->model("medl_fe").adversarial_loss_weight == 1);
        CHECK(cfg->model("medl_fe").adversarial_learning_rate == 1e-4);
        const auto& re = cfg->model("medl_re");
        CHECK(re.cluster_loss_weight == 0.1);
        CHECK(re.kl_weight == 1e-5);
        CHECK(re.post_loc_init_scale == 0.1);
        CHECK(re.prior_scale == 0.25);
    }
    CHECK(heart.model("aec").layer_units_latent_classifier == std::vector<int>{2});
    CHECK(heart.model("medl_re").layer_units_latent_classifier == std::vector<int>{5});
}

TEST_CASE("every preset parses and round-trips") {
    for (const char* name : {"heart", "asd", "aml", "synthetic"}) {
        CAPTURE(name);
        auto cfg = from_json(load_preset(name));
        auto again = from_json(to_json(cfg));
        CHECK(to_json(again).dump() == to_json(cfg).dump());
        CHECK(config_hash(again) == config_hash(cfg));
    }
}

TEST_CASE("unknown keys are named in the error") {
    auto j = load_preset("synthetic");
    j["models"]["medl_fe"]["reconstruction_weight"] = 3;
    try {
        from_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("models.medl_fe.reconstruction_weight") != std::string::npos);
    }

    auto k = load_preset("synthetic");
    k["evaluation"]["sample_cap"] = "many";
    CHECK_THROWS_AS(from_json(k), ConfigError);

    auto m = load_preset("synthetic");
    m["models"]["gan"] = Json::object();
    CHECK_THROWS_AS(from_json(m), ConfigError);

    auto s = load_preset("synthetic");
    s["data"]["scaling"] = "z_score";
    CHECK_THROWS_AS(from_json(s), ConfigError);
}

TEST_CASE("model names") {
    CHECK(canonical_model_name("medl-aec-fe") == "medl_aec_fe");
    CHECK(canonical_model_name("medl_re") == "medl_re");
    CHECK_THROWS_AS(canonical_model_name("vae"), ConfigError);
    CHECK(model_names().size() == 5);
}

TEST_CASE("merge and environment overrides") {
    Json base = Json::parse(R"({"a": {"b": 1, "c": [1, 2]}, "d": "x"})");
    merge_into(base, Json::parse(R"({"a": {"c": [3]}, "e": true})"));
    CHECK(base["a"]["b"] == 1);
    CHECK(base["a"]["c"] == Json::parse("[3]"));
    CHECK(base["e"] == true);

    auto j = load_preset("synthetic");
    apply_overrides(j, {{"MEDL_SEED", "17"},
                        {"MEDL_MODELS__MEDL_FE__EPOCHS", "3"},
                        {"MEDL_DATA__COUNTS_CSV", "counts.csv"},
                        {"MEDL_DATA__LABELS_CSV", "labels.csv"}});
    auto cfg = from_json(j);
    CHECK(cfg.seed == 17);
    CHECK(cfg.model("medl_fe").epochs == 3);
    CHECK(cfg.data.counts_csv == "counts.csv");
}

TEST_CASE("resolve layers preset, file and seed") {
    testing::TempDir dir;
    const auto path = (dir / "run.json").string();
    {
        std::ofstream out(path);
        out << R"({"seed": 5, "models": {"ae": {"epochs": 2}}})";
    }
    ResolveOptions opts;
    opts.preset = "synthetic";
    opts.config_path = path;
    opts.use_environment = false;
    auto cfg = resolve(opts);
    CHECK(cfg.seed == 5);
    CHECK(cfg.model("ae").epochs == 2);
    CHECK(cfg.model("aec").epochs == from_json(load_preset("synthetic")).model("aec").epochs);

    opts.has_seed = true;
    opts.seed = 9;
    auto seeded = resolve(opts);
    CHECK(seeded.seed == 9);
    CHECK(config_hash(seeded) != config_hash(cfg));
    CHECK(config_hash(resolve(opts)) == config_hash(seeded));
    CHECK(hex64(0xabcULL) == "0000000000000abc");

    opts.preset = "imagenet";
    CHECK_THROWS_AS(resolve(opts), ConfigError);
}

TEST_CASE("model configs follow the data") {
    auto cfg = from_json(load_preset("synthetic"));
    auto fe = fe_config(cfg, "medl-aec-fe", 4, 3, 0);
    CHECK(fe.variant() == fe::Variant::medl_aec_fe);
    CHECK(fe.n_batches == 4);
    CHECK(fe.n_targets == 3);
    CHECK(fe_config(cfg, "ae", 4, 3, 0).variant() == fe::Variant::ae);
    CHECK(fe_config(cfg, "aec", 4, 3, 0).variant() == fe::Variant::aec);
    CHECK(fe_config(cfg, "medl_fe", 4, 3, 0).variant() == fe::Variant::medl_fe);
    CHECK(fe_config(cfg, "medl_fe", 4, 3, 0).seed != fe_config(cfg, "medl_fe", 4, 3, 1).seed);
    CHECK_THROWS_AS(fe_config(cfg, "medl_re", 4, 3, 0), ConfigError);

    auto heart = from_json(load_preset("heart"));
    CHECK_THROWS_AS(fe_config(heart, "medl_fe", 4, 3, 0), ConfigError);
    CHECK(fe_config(heart, "medl_fe", 147, 13, 0).n_batches == 147);
    CHECK(re_config(heart, 147, 0).n_batches == 147);
    CHECK_THROWS_AS(re_config(heart, 12, 0), ConfigError);
}
