#include "medl/fe.hpp"
#include "medl/functions.hpp"

#include <algorithm>

namespace medl::fe {

const char* to_string(Variant v) {
    switch (v) {
    case Variant::ae:
        return "ae";
    case Variant::aec:
        return "aec";
    case Variant::medl_fe:
        return "medl-fe";
    case Variant::medl_aec_fe:
        return "medl-aec-fe";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    for (auto v : {Variant::ae, Variant::aec, Variant::medl_fe, Variant::medl_aec_fe}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    throw ConfigError("unknown fixed-effects variant '" + s + "' (expected ae, aec, medl-fe or medl-aec-fe)");
}

Variant FEConfig::variant() const {
    const bool adv = lambda_adv > 0;
    const bool head = n_targets > 0;
    if (adv) {
        return head ? Variant::medl_aec_fe : Variant::medl_fe;
    }
    return head ? Variant::aec : Variant::ae;
}

void FEConfig::validate() const {
    if (layer_units.empty()) {
        throw ConfigError("layer_units must not be empty");
    }
    for (int u : layer_units) {
        if (u < 1) {
            throw ConfigError("layer_units entries must be positive");
        }
    }
    for (int u : classifier_units) {
        if (u < 1) {
            throw ConfigError("classifier_units entries must be positive");
        }
    }
    if (n_latent_dims < 1) {
        throw ConfigError("n_latent_dims must be positive");
    }
    if (lambda_mse < 0 || lambda_adv < 0 || lambda_cce_y < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (lambda_adv > 0 && n_batches < 2) {
        throw ConfigError("an adversarial weight needs at least 2 batches, got " + std::to_string(n_batches));
    }
    if (n_targets == 1 || n_targets < 0) {
        throw ConfigError("n_targets must be 0 or at least 2");
    }
    if (learning_rate <= 0 || adversary_learning_rate <= 0 || batch_size < 2 || epochs < 1 || patience < 1 ||
        adv_steps_per_batch < 1) {
        throw ConfigError("learning rates, batch_size (>= 2), epochs, patience and adv_steps_per_batch must be positive");
    }
}

std::vector<nn::Parameter*> FEModel::autoencoder_parameters() {
    std::vector<nn::Parameter*> out;
    for (auto& l : encoder) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    for (auto& bn : encoder_bn) {
        out.push_back(&bn.gamma);
        out.push_back(&bn.beta);
    }
    for (auto& l : decoder) {
        out.push_back(&l.bias);
    }
    for (auto& bn : decoder_bn) {
        out.push_back(&bn.gamma);
        out.push_back(&bn.beta);
    }
    for (auto& l : y_head) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<nn::Parameter*> FEModel::adversary_parameters() {
    if (!has_adversary()) {
        return {};
    }
    return {&adversary.weight, &adversary.bias};
}

std::vector<nn::Parameter*> FEModel::all_parameters() {
    auto out = autoencoder_parameters();
    for (auto* p : adversary_parameters()) {
        out.push_back(p);
    }
    return out;
}

std::vector<nn::BatchNormState*> FEModel::norms() {
    std::vector<nn::BatchNormState*> out;
    for (auto& bn : encoder_bn) {
        out.push_back(&bn);
    }
    for (auto& bn : decoder_bn) {
        out.push_back(&bn);
    }
    return out;
}

FEModel make_fe_model(const FEConfig& cfg, Index n_genes) {
    cfg.validate();
    if (n_genes < 1) {
        throw DimensionError("fixed-effects model needs at least one gene");
    }
    FEModel m;
    m.config = cfg;
    m.n_genes = n_genes;

    Rng enc_rng(derive_seed(cfg.seed, "fe/encoder"));
    Index in = n_genes;
    const std::size_t n_hidden = cfg.layer_units.size();
    for (std::size_t i = 0; i < n_hidden; ++i) {
        const std::string name = "encoder." + std::to_string(i);
        m.encoder.push_back(nn::make_dense(in, cfg.layer_units[i], nn::Activation::linear, enc_rng, name));
        if (cfg.batch_norm) {
            m.encoder_bn.push_back(nn::make_batchnorm(cfg.layer_units[i], name + ".bn", cfg.bn_momentum));
        }
        in = cfg.layer_units[i];
    }
    m.encoder.push_back(nn::make_dense(in, cfg.n_latent_dims, nn::Activation::linear, enc_rng, "encoder.latent"));

    // decoder[i] reuses encoder[L - i]
    const std::size_t n_enc = m.encoder.size();
    for (std::size_t i = 0; i < n_enc; ++i) {
        const auto& source = m.encoder[n_enc - 1 - i];
        const std::string name = "decoder." + std::to_string(i);
        m.decoder.push_back(nn::make_tied(source, nn::Activation::linear, name));
        if (cfg.batch_norm && i + 1 < n_enc) {
            m.decoder_bn.push_back(nn::make_batchnorm(m.decoder.back().out_dim(), name + ".bn", cfg.bn_momentum));
        }
    }

    if (m.has_adversary()) {
        Rng adv_rng(derive_seed(cfg.seed, "fe/adversary"));
        m.adversary = nn::make_dense(cfg.n_latent_dims, cfg.n_batches, nn::Activation::softmax, adv_rng, "adversary");
    }
    if (m.has_y_head()) {
        Rng y_rng(derive_seed(cfg.seed, "fe/y_head"));
        Index prev = cfg.n_latent_dims;
        for (std::size_t i = 0; i < cfg.classifier_units.size(); ++i) {
            m.y_head.push_back(nn::make_dense(prev, cfg.classifier_units[i], nn::Activation::selu, y_rng,
                                              "y_head." + std::to_string(i)));
            prev = cfg.classifier_units[i];
        }
        m.y_head.push_back(nn::make_dense(prev, cfg.n_targets, nn::Activation::softmax, y_rng, "y_head.out"));
    }

    m.optimizer.learning_rate = cfg.learning_rate;
    m.adversary_optimizer.learning_rate = cfg.adversary_learning_rate;
    return m;
}

namespace {

void check_input(const FEModel& m, const Matrix& x) {
    if (x.cols() != m.n_genes) {
        throw DimensionError("fixed-effects model expects " + std::to_string(m.n_genes) + " genes, got " +
                             std::to_string(x.cols()));
    }
}

nn::Var encode_tape(nn::Tape& tape, FEModel& m, nn::Var h, bool update_running) {
    const std::size_t n_hidden = m.encoder.size() - 1;
    for (std::size_t i = 0; i < n_hidden; ++i) {
        h = nn::dense(tape, m.encoder[i], h);
        if (!m.encoder_bn.empty()) {
            h = nn::batch_norm(tape, m.encoder_bn[i], h, nn::Mode::train, update_running);
        }
        h = nn::selu(h);
    }
    return nn::dense(tape, m.encoder.back(), h);
}

nn::Var decode_tape(nn::Tape& tape, FEModel& m, nn::Var h, bool update_running) {
    const std::size_t n = m.decoder.size();
    for (std::size_t i = 0; i < n; ++i) {
        h = nn::dense(tape, m.decoder[i], h, &m.encoder[n - 1 - i]);
        if (i + 1 < n) {
            if (!m.decoder_bn.empty()) {
                h = nn::batch_norm(tape, m.decoder_bn[i], h, nn::Mode::train, update_running);
            }
            h = nn::selu(h);
        }
    }
    return h;
}

nn::Var y_head_tape(nn::Tape& tape, FEModel& m, nn::Var h) {
    for (auto& layer : m.y_head) {
        h = nn::dense(tape, layer, h);
    }
    return h;
}

Matrix encode_plain(const FEModel& m, const Matrix& x) {
    Matrix h = x;
    const std::size_t n_hidden = m.encoder.size() - 1;
    for (std::size_t i = 0; i < n_hidden; ++i) {
        h = nn::dense_forward(m.encoder[i], h);
        if (!m.encoder_bn.empty()) {
            h = nn::batchnorm_eval(m.encoder_bn[i], h);
        }
        h = h.unaryExpr([](double v) { return nn::selu(v); });
    }
    return nn::dense_forward(m.encoder.back(), h);
}

Matrix decode_plain(const FEModel& m, const Matrix& latent) {
    Matrix h = latent;
    const std::size_t n = m.decoder.size();
    for (std::size_t i = 0; i < n; ++i) {
        h = nn::dense_forward(m.decoder[i], h, &m.encoder[n - 1 - i]);
        if (i + 1 < n) {
            if (!m.decoder_bn.empty()) {
                h = nn::batchnorm_eval(m.decoder_bn[i], h);
            }
            h = h.unaryExpr([](double v) { return nn::selu(v); });
        }
    }
    return h;
}

void check_codes(const std::vector<int>& codes, Index n, int k, const char* what) {
    if (static_cast<Index>(codes.size()) != n) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(n) + " codes, got " +
                             std::to_string(codes.size()));
    }
    for (int c : codes) {
        if (c < 0 || c >= k) {
            throw ValueError(std::string(what) + ": code " + std::to_string(c) + " outside [0, " + std::to_string(k) +
                             ")");
        }
    }
}

void check_data(const FEConfig& cfg, const train::TrainingData& d, Index n_genes, const char* what) {
    if (d.size() == 0) {
        throw ValueError(std::string(what) + " set is empty");
    }
    if (d.x.cols() != n_genes) {
        throw DimensionError(std::string(what) + " set has " + std::to_string(d.x.cols()) + " genes, expected " +
                             std::to_string(n_genes));
    }
    if (cfg.lambda_adv > 0) {
        check_codes(d.batch, d.size(), cfg.n_batches, what);
    }
    if (cfg.n_targets > 0) {
        if (d.target.empty()) {
            throw ValueError(std::string(what) + " set has no targets but the model has a cell-type head");
        }
        check_codes(d.target, d.size(), cfg.n_targets, what);
    }
}

} // namespace

train::LossBreakdown fe_loss(const Matrix& x, const Matrix& xhat, const Matrix& z, const Matrix& zhat, const Matrix* y,
                             const Matrix* yhat, const FEConfig& cfg) {
    train::LossBreakdown out;
    const double mse = nn::mse_loss(x, xhat);
    out.components["mse"] = mse;
    out.total = cfg.lambda_mse * mse;
    if (cfg.lambda_adv > 0) {
        const double adv = nn::cce_loss(z, zhat);
        out.components["adv_cce"] = adv;
        out.total -= cfg.lambda_adv * adv;
    }
    if (cfg.n_targets > 0) {
        if (y == nullptr || yhat == nullptr) {
            throw ValueError("fe_loss: the cell-type head needs targets and predictions");
        }
        const double yc = nn::cce_loss(*y, *yhat);
        out.components["y_cce"] = yc;
        out.total += cfg.lambda_cce_y * yc;
    }
    return out;
}

FEOutputs fe_forward(const FEModel& model, const Matrix& x) {
    check_input(model, x);
    FEOutputs out;
    out.latent = encode_plain(model, x);
    out.reconstruction = decode_plain(model, out.latent);
    if (model.has_adversary()) {
        out.batch_probs = nn::dense_forward(model.adversary, out.latent);
    }
    if (model.has_y_head()) {
        Matrix h = out.latent;
        for (const auto& layer : model.y_head) {
            h = nn::dense_forward(layer, h);
        }
        out.target_probs = h;
    }
    return out;
}

train::LossBreakdown evaluate_fe(const FEModel& model, const train::TrainingData& data) {
    auto out = fe_forward(model, data.x);
    const auto& cfg = model.config;
    Matrix z = cfg.lambda_adv > 0 ? one_hot(data.batch, cfg.n_batches) : Matrix();
    Matrix y = cfg.n_targets > 0 ? one_hot(data.target, cfg.n_targets) : Matrix();
    return fe_loss(data.x, out.reconstruction, z, out.batch_probs, cfg.n_targets > 0 ? &y : nullptr,
                   cfg.n_targets > 0 ? &out.target_probs : nullptr, cfg);
}

Matrix encode_fe(const FEModel& model, const Matrix& x) {
    check_input(model, x);
    if (x.rows() == 0) {
        return Matrix(0, model.config.n_latent_dims);
    }
    return encode_plain(model, x);
}

Matrix reconstruct_fe(const FEModel& model, const Matrix& x) {
    check_input(model, x);
    if (x.rows() == 0) {
        return Matrix(0, model.n_genes);
    }
    return decode_plain(model, encode_plain(model, x));
}

FETapeResult fe_loss_tape(nn::Tape& tape, FEModel& m, const Matrix& x, const Matrix& z, const Matrix& y,
                          bool update_running) {
    check_input(m, x);
    const auto& cfg = m.config;
    for (auto* p : m.adversary_parameters()) {
        tape.freeze(*p);
    }
    auto latent = encode_tape(tape, m, tape.constant(x), update_running);
    auto recon = decode_tape(tape, m, latent, update_running);

    FETapeResult r;
    r.mse = nn::mse(recon, x);
    std::vector<nn::Var> terms{r.mse};
    std::vector<double> weights{cfg.lambda_mse};
    if (m.has_adversary()) {
        r.adv_cce = nn::cce(nn::dense(tape, m.adversary, latent), z);
        terms.push_back(r.adv_cce);
        weights.push_back(-cfg.lambda_adv);
    }
    if (m.has_y_head()) {
        r.y_cce = nn::cce(y_head_tape(tape, m, latent), y);
        terms.push_back(r.y_cce);
        weights.push_back(cfg.lambda_cce_y);
    }
    r.total = nn::linear_combination(terms, weights);
    return r;
}

void fe_adversary_step(FEModel& m, const Matrix& x, const Matrix& z) {
    if (!m.has_adversary()) {
        throw StateError("model has no adversary to train");
    }
    check_input(m, x);
    nn::Tape tape;
    for (auto* p : m.autoencoder_parameters()) {
        tape.freeze(*p);
    }
    auto latent = encode_tape(tape, m, tape.constant(x), false);
    auto loss = nn::cce(nn::dense(tape, m.adversary, latent), z);
    auto grads = nn::backward(tape, loss);
    auto params = m.adversary_parameters();
    nn::adam_step(m.adversary_optimizer, params, grads);
}

train::LossBreakdown fe_autoencoder_step(FEModel& m, const Matrix& x, const Matrix& z, const Matrix& y) {
    nn::Tape tape;
    auto r = fe_loss_tape(tape, m, x, z, y, true);
    train::LossBreakdown out;
    out.total = r.total.scalar();
    out.components["mse"] = r.mse.scalar();
    if (m.has_adversary()) {
        out.components["adv_cce"] = r.adv_cce.scalar();
    }
    if (m.has_y_head()) {
        out.components["y_cce"] = r.y_cce.scalar();
    }
    train::check_finite(out, "fixed-effects training");

    auto grads = nn::backward(tape, r.total);
    auto params = m.autoencoder_parameters();
    nn::adam_step(m.optimizer, params, grads);
    return out;
}

FEModel train_fe(const train::TrainingData& train_data, const train::TrainingData& val_data, const FEConfig& cfg) {
    FEModel m = make_fe_model(cfg, train_data.x.cols());
    check_data(cfg, train_data, m.n_genes, "training");
    check_data(cfg, val_data, m.n_genes, "validation");

    const Matrix z = m.has_adversary() ? one_hot(train_data.batch, cfg.n_batches) : Matrix();
    const Matrix y = m.has_y_head() ? one_hot(train_data.target, cfg.n_targets) : Matrix();

    auto params = m.all_parameters();
    auto norms = m.norms();
    train::EarlyStopping stopper(cfg.patience);
    train::Snapshot best = train::take_snapshot(params, norms);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        train::LossAccumulator acc;
        for (const auto& rows : train::minibatches(train_data.size(), cfg.batch_size,
                                                   derive_seed(cfg.seed, "fe/shuffle", epoch))) {
            const Matrix xb = take_rows(train_data.x, rows);
            const Matrix zb = m.has_adversary() ? take_rows(z, rows) : Matrix();
            const Matrix yb = m.has_y_head() ? take_rows(y, rows) : Matrix();
            if (m.has_adversary()) {
                for (int s = 0; s < cfg.adv_steps_per_batch; ++s) {
                    fe_adversary_step(m, xb, zb);
                }
            }
            acc.add(fe_autoencoder_step(m, xb, zb, yb), static_cast<double>(rows.size()));
        }

        train::EpochRecord rec;
        rec.epoch = epoch;
        rec.train = acc.mean();
        rec.validation = evaluate_fe(m, val_data);
        train::check_finite(rec.validation, "fixed-effects validation");
        if (stopper.update(m.history, rec)) {
            best = train::take_snapshot(params, norms);
        }
        if (stopper.should_stop()) {
            m.history.stopped_early = true;
            break;
        }
    }
    train::restore_snapshot(best, params, norms);
    return m;
}

} // namespace medl::fe
