#include "medl/checkpoint.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace medl::checkpoint {

using Json = nlohmann::ordered_json;

namespace {

Json matrix_json(const Matrix& m) {
    Json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    Json data = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            data.push_back(m(r, c));
        }
    }
    j["data"] = std::move(data);
    return j;
}

Matrix matrix_from(const Json& j, const std::string& what) {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto& data = j.at("data");
    if (!data.is_array() || static_cast<Index>(data.size()) != rows * cols) {
        throw ParseError("checkpoint: " + what + " holds " + std::to_string(data.size()) + " values for a " +
                         dims(rows, cols) + " matrix");
    }
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const auto& v = data[static_cast<std::size_t>(r * cols + c)];
            if (!v.is_number()) {
                throw ParseError("checkpoint: non-numeric entry in " + what);
            }
            m(r, c) = v.get<double>();
        }
    }
    return m;
}

Json loss_json(const train::LossBreakdown& l) {
    Json j;
    j["total"] = l.total;
    Json comps = Json::object();
    for (const auto& [k, v] : l.components) {
        comps[k] = v;
    }
    j["components"] = std::move(comps);
    return j;
}

train::LossBreakdown loss_from(const Json& j) {
    train::LossBreakdown l;
    l.total = j.at("total").get<double>();
    for (auto it = j.at("components").begin(); it != j.at("components").end(); ++it) {
        l.components[it.key()] = it.value().get<double>();
    }
    return l;
}

Json history_json(const train::TrainReport& h) {
    Json j;
    j["best_epoch"] = h.best_epoch;
    j["stopping_epoch"] = h.stopping_epoch;
    j["best_validation_total"] = h.best_validation_total;
    j["stopped_early"] = h.stopped_early;
    Json epochs = Json::array();
    for (const auto& e : h.epochs) {
        Json r;
        r["epoch"] = e.epoch;
        r["train"] = loss_json(e.train);
        r["validation"] = loss_json(e.validation);
        epochs.push_back(std::move(r));
    }
    j["epochs"] = std::move(epochs);
    return j;
}

train::TrainReport history_from(const Json& j) {
    train::TrainReport h;
    h.best_epoch = j.at("best_epoch").get<int>();
    h.stopping_epoch = j.at("stopping_epoch").get<int>();
    h.best_validation_total = j.at("best_validation_total").get<double>();
    h.stopped_early = j.at("stopped_early").get<bool>();
    for (const auto& r : j.at("epochs")) {
        train::EpochRecord e;
        e.epoch = r.at("epoch").get<int>();
        e.train = loss_from(r.at("train"));
        e.validation = loss_from(r.at("validation"));
        h.epochs.push_back(std::move(e));
    }
    return h;
}

Json scaler_json(const data::MinMaxScaler& s) {
    Json j;
    j["min"] = std::vector<double>(s.min.data(), s.min.data() + s.min.size());
    j["max"] = std::vector<double>(s.max.data(), s.max.data() + s.max.size());
    return j;
}

data::MinMaxScaler scaler_from(const Json& j, Index n_genes) {
    data::MinMaxScaler s;
    auto lo = j.at("min").get<std::vector<double>>();
    auto hi = j.at("max").get<std::vector<double>>();
    if (lo.empty() && hi.empty()) {
        return s;
    }
    if (static_cast<Index>(lo.size()) != n_genes || static_cast<Index>(hi.size()) != n_genes) {
        throw ParseError("checkpoint: scaler does not match " + std::to_string(n_genes) + " genes");
    }
    s.min = Eigen::Map<RowVector>(lo.data(), n_genes);
    s.max = Eigen::Map<RowVector>(hi.data(), n_genes);
    return s;
}

Json params_json(const std::vector<nn::Parameter*>& params) {
    Json arr = Json::array();
    for (const auto* p : params) {
        Json j;
        j["name"] = p->name;
        Json m = matrix_json(p->value);
        j["rows"] = m["rows"];
        j["cols"] = m["cols"];
        j["data"] = std::move(m["data"]);
        arr.push_back(std::move(j));
    }
    return arr;
}

void params_from(const Json& arr, const std::vector<nn::Parameter*>& params) {
    if (!arr.is_array() || arr.size() != params.size()) {
        throw ParseError("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                         std::to_string(arr.is_array() ? arr.size() : 0));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& j = arr[i];
        const auto name = j.at("name").get<std::string>();
        if (name != params[i]->name) {
            throw ParseError("checkpoint: parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                             params[i]->name + "'");
        }
        Matrix v = matrix_from(j, name);
        if (v.rows() != params[i]->value.rows() || v.cols() != params[i]->value.cols()) {
            throw ParseError("checkpoint: parameter '" + name + "' is " + dims(v.rows(), v.cols()) + ", expected " +
                             dims(params[i]->value.rows(), params[i]->value.cols()));
        }
        params[i]->value = std::move(v);
    }
}

Json norms_json(const std::vector<nn::BatchNormState*>& norms) {
    Json arr = Json::array();
    for (const auto* n : norms) {
        Json j;
        j["name"] = n->gamma.name;
        j["momentum"] = n->momentum;
        j["epsilon"] = n->epsilon;
        j["running_mean"] = std::vector<double>(n->running_mean.data(), n->running_mean.data() + n->running_mean.size());
        j["running_var"] = std::vector<double>(n->running_var.data(), n->running_var.data() + n->running_var.size());
        arr.push_back(std::move(j));
    }
    return arr;
}

void norms_from(const Json& arr, const std::vector<nn::BatchNormState*>& norms) {
    if (!arr.is_array() || arr.size() != norms.size()) {
        throw ParseError("checkpoint: expected " + std::to_string(norms.size()) + " batch-norm layers");
    }
    for (std::size_t i = 0; i < norms.size(); ++i) {
        const auto& j = arr[i];
        auto mean = j.at("running_mean").get<std::vector<double>>();
        auto var = j.at("running_var").get<std::vector<double>>();
        if (static_cast<Index>(mean.size()) != norms[i]->dim() || static_cast<Index>(var.size()) != norms[i]->dim()) {
            throw ParseError("checkpoint: batch-norm layer " + std::to_string(i) + " has the wrong width");
        }
        norms[i]->running_mean = Eigen::Map<RowVector>(mean.data(), norms[i]->dim());
        norms[i]->running_var = Eigen::Map<RowVector>(var.data(), norms[i]->dim());
        norms[i]->momentum = j.at("momentum").get<double>();
        norms[i]->epsilon = j.at("epsilon").get<double>();
    }
}

Json fe_config_json(const fe::FEConfig& c) {
    Json j;
    j["layer_units"] = c.layer_units;
    j["n_latent_dims"] = c.n_latent_dims;
    j["lambda_mse"] = c.lambda_mse;
    j["lambda_adv"] = c.lambda_adv;
    j["lambda_cce_y"] = c.lambda_cce_y;
    j["n_batches"] = c.n_batches;
    j["n_targets"] = c.n_targets;
    j["classifier_units"] = c.classifier_units;
    j["batch_norm"] = c.batch_norm;
    j["bn_momentum"] = c.bn_momentum;
    j["learning_rate"] = c.learning_rate;
    j["adversary_learning_rate"] = c.adversary_learning_rate;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["patience"] = c.patience;
    j["adv_steps_per_batch"] = c.adv_steps_per_batch;
    j["seed"] = c.seed;
    return j;
}

fe::FEConfig fe_config_from(const Json& j) {
    fe::FEConfig c;
    c.layer_units = j.at("layer_units").get<std::vector<int>>();
    c.n_latent_dims = j.at("n_latent_dims").get<int>();
    c.lambda_mse = j.at("lambda_mse").get<double>();
    c.lambda_adv = j.at("lambda_adv").get<double>();
    c.lambda_cce_y = j.at("lambda_cce_y").get<double>();
    c.n_batches = j.at("n_batches").get<int>();
    c.n_targets = j.at("n_targets").get<int>();
    c.classifier_units = j.at("classifier_units").get<std::vector<int>>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.adversary_learning_rate = j.at("adversary_learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.adv_steps_per_batch = j.at("adv_steps_per_batch").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

Json re_config_json(const re::REConfig& c) {
    Json j;
    j["layer_units"] = c.layer_units;
    j["n_latent_dims"] = c.n_latent_dims;
    j["n_batches"] = c.n_batches;
    j["lambda_mse"] = c.lambda_mse;
    j["lambda_cce_z"] = c.lambda_cce_z;
    j["lambda_kl"] = c.lambda_kl;
    j["post_loc_init_scale"] = c.post_loc_init_scale;
    j["prior_scale"] = c.prior_scale;
    j["classifier_units"] = c.classifier_units;
    j["batch_norm"] = c.batch_norm;
    j["bn_momentum"] = c.bn_momentum;
    j["kl_form"] = re::to_string(c.kl_form);
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["patience"] = c.patience;
    j["seed"] = c.seed;
    return j;
}

re::REConfig re_config_from(const Json& j) {
    re::REConfig c;
    c.layer_units = j.at("layer_units").get<std::vector<int>>();
    c.n_latent_dims = j.at("n_latent_dims").get<int>();
    c.n_batches = j.at("n_batches").get<int>();
    c.lambda_mse = j.at("lambda_mse").get<double>();
    c.lambda_cce_z = j.at("lambda_cce_z").get<double>();
    c.lambda_kl = j.at("lambda_kl").get<double>();
    c.post_loc_init_scale = j.at("post_loc_init_scale").get<double>();
    c.prior_scale = j.at("prior_scale").get<double>();
    c.classifier_units = j.at("classifier_units").get<std::vector<int>>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.kl_form = re::kl_form_from_string(j.at("kl_form").get<std::string>());
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void write_json(const Json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValueError("cannot open " + path + " for writing");
    }
    out << j.dump(1) << '\n';
    if (!out) {
        throw ValueError("failed writing " + path);
    }
}

Json read_checkpoint(const std::string& path, const char* kind) {
    std::ifstream in(path);
    if (!in) {
        throw ValueError("cannot open checkpoint " + path);
    }
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("checkpoint " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "medl-checkpoint") {
        throw ParseError(path + " is not a model checkpoint");
    }
    if (j.value("version", 0) != format_version) {
        throw ParseError("checkpoint " + path + " has unsupported version " + std::to_string(j.value("version", 0)));
    }
    if (j.value("kind", "") != kind) {
        throw ParseError("checkpoint " + path + " holds a '" + j.value("kind", "") + "' model, expected '" + kind + "'");
    }
    return j;
}

template <typename F>
auto guarded(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + " is malformed: " + e.what());
    }
}

Json header(const char* kind) {
    Json j;
    j["format"] = "medl-checkpoint";
    j["version"] = format_version;
    j["kind"] = kind;
    return j;
}

} // namespace

void save_fe(const fe::FEModel& model, const std::string& path) {
    auto& m = const_cast<fe::FEModel&>(model);
    Json j = header("fe");
    j["config"] = fe_config_json(model.config);
    j["n_genes"] = model.n_genes;
    j["scaler"] = scaler_json(model.scaler);
    j["parameters"] = params_json(m.all_parameters());
    j["batch_norm"] = norms_json(m.norms());
    j["batch_levels"] = Json::array();
    j["history"] = history_json(model.history);
    write_json(j, path);
}

fe::FEModel load_fe(const std::string& path) {
    Json j = read_checkpoint(path, "fe");
    return guarded(path, [&] {
        auto cfg = fe_config_from(j.at("config"));
        const Index n_genes = j.at("n_genes").get<Index>();
        auto m = fe::make_fe_model(cfg, n_genes);
        m.scaler = scaler_from(j.at("scaler"), n_genes);
        params_from(j.at("parameters"), m.all_parameters());
        norms_from(j.at("batch_norm"), m.norms());
        m.history = history_from(j.at("history"));
        return m;
    });
}

void save_re(const re::REModel& model, const std::string& path) {
    auto& m = const_cast<re::REModel&>(model);
    Json j = header("re");
    j["config"] = re_config_json(model.config);
    j["n_genes"] = model.n_genes;
    j["scaler"] = scaler_json(model.scaler);
    j["parameters"] = params_json(m.parameters());
    j["batch_norm"] = norms_json(m.norms());
    j["batch_levels"] = model.batch_levels;
    j["history"] = history_json(model.history);
    write_json(j, path);
}

re::REModel load_re(const std::string& path) {
    Json j = read_checkpoint(path, "re");
    return guarded(path, [&] {
        auto cfg = re_config_from(j.at("config"));
        const Index n_genes = j.at("n_genes").get<Index>();
        auto m = re::make_re_model(cfg, n_genes);
        m.scaler = scaler_from(j.at("scaler"), n_genes);
        params_from(j.at("parameters"), m.parameters());
        norms_from(j.at("batch_norm"), m.norms());
        m.batch_levels = j.at("batch_levels").get<std::vector<std::string>>();
        if (static_cast<int>(m.batch_levels.size()) != cfg.n_batches) {
            throw ParseError("checkpoint " + path + " names " + std::to_string(m.batch_levels.size()) +
                             " batches for a model with " + std::to_string(cfg.n_batches));
        }
        m.history = history_from(j.at("history"));
        return m;
    });
}

void write_history_csv(const train::TrainReport& report, const std::string& path) {
    std::set<std::string> names;
    for (const auto& e : report.epochs) {
        for (const auto& [k, v] : e.train.components) {
            names.insert(k);
        }
        for (const auto& [k, v] : e.validation.components) {
            names.insert(k);
        }
    }
    std::ofstream out(path);
    if (!out) {
        throw ValueError("cannot open " + path + " for writing");
    }
    out << "epoch,split,total";
    for (const auto& n : names) {
        out << ',' << n;
    }
    out << ",best\n";
    for (const auto& e : report.epochs) {
        for (const auto* split : {"train", "validation"}) {
            const auto& l = std::string(split) == "train" ? e.train : e.validation;
            out << e.epoch << ',' << split << ',' << data::format_double(l.total);
            for (const auto& n : names) {
                auto it = l.components.find(n);
                out << ',' << (it == l.components.end() ? std::string() : data::format_double(it->second));
            }
            out << ',' << (e.epoch == report.best_epoch ? 1 : 0) << '\n';
        }
    }
}

std::string library_version() {
    return MEDL_VERSION;
}

void write_sidecar(const std::string& path, const Provenance& prov) {
    Json j;
    j["artifact"] = std::filesystem::path(path).filename().string();
    j["version"] = prov.version.empty() ? library_version() : prov.version;
    j["config_hash"] = prov.config_hash;
    j["seed"] = prov.seed;
    j["command"] = prov.command;
    write_json(j, path + ".meta.json");
}

} // namespace medl::checkpoint
