#include "medl/re.hpp"
#include "medl/functions.hpp"

#include <algorithm>
#include <cmath>

namespace medl::re {

const char* to_string(KlForm k) {
    return k == KlForm::standard ? "standard" : "swapped";
}

KlForm kl_form_from_string(const std::string& s) {
    if (s == "standard") {
        return KlForm::standard;
    }
    if (s == "swapped") {
        return KlForm::swapped;
    }
    throw ConfigError("unknown KL form '" + s + "' (expected standard or swapped)");
}

void REConfig::validate() const {
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
    if (n_batches < 1) {
        throw ConfigError("the random-effects model needs at least one batch");
    }
    if (lambda_mse < 0 || lambda_cce_z < 0 || lambda_kl < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (prior_scale <= 0) {
        throw ConfigError("prior_scale must be positive, got " + std::to_string(prior_scale));
    }
    if (post_loc_init_scale < 0) {
        throw ConfigError("post_loc_init_scale must be nonnegative");
    }
    if (learning_rate <= 0 || batch_size < 2 || epochs < 1 || patience < 1) {
        throw ConfigError("learning_rate, batch_size (>= 2), epochs and patience must be positive");
    }
}

Matrix REPosterior::mult_scale() const {
    return mult_raw_scale.value.unaryExpr([](double v) { return nn::softplus(v); });
}

Matrix REPosterior::add_scale() const {
    return add_raw_scale.value.unaryExpr([](double v) { return nn::softplus(v); });
}

std::vector<nn::Parameter*> REModel::parameters() {
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
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    for (auto& bn : decoder_bn) {
        out.push_back(&bn.gamma);
        out.push_back(&bn.beta);
    }
    out.push_back(&posterior.mult_loc);
    out.push_back(&posterior.mult_raw_scale);
    out.push_back(&posterior.add_loc);
    out.push_back(&posterior.add_raw_scale);
    for (auto& l : classifier) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<nn::BatchNormState*> REModel::norms() {
    std::vector<nn::BatchNormState*> out;
    for (auto& bn : encoder_bn) {
        out.push_back(&bn);
    }
    for (auto& bn : decoder_bn) {
        out.push_back(&bn);
    }
    return out;
}

REModel make_re_model(const REConfig& cfg, Index n_genes) {
    cfg.validate();
    if (n_genes < 1) {
        throw DimensionError("random-effects model needs at least one gene");
    }
    REModel m;
    m.config = cfg;
    m.n_genes = n_genes;

    Rng enc_rng(derive_seed(cfg.seed, "re/encoder"));
    Index in = n_genes;
    for (std::size_t i = 0; i < cfg.layer_units.size(); ++i) {
        const std::string name = "re_encoder." + std::to_string(i);
        m.encoder.push_back(nn::make_dense(in, cfg.layer_units[i], nn::Activation::linear, enc_rng, name));
        if (cfg.batch_norm) {
            m.encoder_bn.push_back(nn::make_batchnorm(cfg.layer_units[i], name + ".bn", cfg.bn_momentum));
        }
        in = cfg.layer_units[i];
    }
    m.encoder.push_back(nn::make_dense(in, cfg.n_latent_dims, nn::Activation::linear, enc_rng, "re_encoder.latent"));

    Rng dec_rng(derive_seed(cfg.seed, "re/decoder"));
    in = cfg.n_latent_dims;
    for (std::size_t i = 0; i < cfg.layer_units.size(); ++i) {
        const int units = cfg.layer_units[cfg.layer_units.size() - 1 - i];
        const std::string name = "re_decoder." + std::to_string(i);
        m.decoder.push_back(nn::make_dense(in, units, nn::Activation::linear, dec_rng, name));
        if (cfg.batch_norm) {
            m.decoder_bn.push_back(nn::make_batchnorm(units, name + ".bn", cfg.bn_momentum));
        }
        in = units;
    }
    m.decoder.push_back(nn::make_dense(in, n_genes, nn::Activation::linear, dec_rng, "re_decoder.out"));

    const int units = cfg.layer_units.front();
    Rng post_rng(derive_seed(cfg.seed, "re/posterior"));
    const double raw = nn::softplus_inverse(cfg.prior_scale / 2);
    m.posterior.mult_loc = {"re_posterior.mult_loc", random_normal(cfg.n_batches, units, cfg.post_loc_init_scale, post_rng)};
    m.posterior.add_loc = {"re_posterior.add_loc", random_normal(cfg.n_batches, units, cfg.post_loc_init_scale, post_rng)};
    m.posterior.mult_raw_scale = {"re_posterior.mult_raw_scale", Matrix::Constant(cfg.n_batches, units, raw)};
    m.posterior.add_raw_scale = {"re_posterior.add_raw_scale", Matrix::Constant(cfg.n_batches, units, raw)};
    m.posterior.prior_loc = 0.0;
    m.posterior.prior_scale = cfg.prior_scale;

    Rng cls_rng(derive_seed(cfg.seed, "re/classifier"));
    Index prev = cfg.n_latent_dims;
    for (std::size_t i = 0; i < cfg.classifier_units.size(); ++i) {
        m.classifier.push_back(nn::make_dense(prev, cfg.classifier_units[i], nn::Activation::selu, cls_rng,
                                              "re_classifier." + std::to_string(i)));
        prev = cfg.classifier_units[i];
    }
    m.classifier.push_back(nn::make_dense(prev, cfg.n_batches, nn::Activation::softmax, cls_rng, "re_classifier.out"));

    for (int b = 0; b < cfg.n_batches; ++b) {
        m.batch_levels.push_back(std::to_string(b));
    }
    m.optimizer.learning_rate = cfg.learning_rate;
    return m;
}

double posterior_kl(const REPosterior& post, KlForm form) {
    if (form == KlForm::standard) {
        return nn::kl_gaussian(post.mult_loc.value, post.mult_scale(), post.prior_loc, post.prior_scale) +
               nn::kl_gaussian(post.add_loc.value, post.add_scale(), post.prior_loc, post.prior_scale);
    }
    auto swapped = [&](const Matrix& loc, const Matrix& scale) {
        double total = 0;
        for (Index j = 0; j < loc.cols(); ++j) {
            for (Index i = 0; i < loc.rows(); ++i) {
                total += nn::kl_gaussian_swapped(loc(i, j), scale(i, j), post.prior_loc, post.prior_scale);
            }
        }
        return total;
    };
    return swapped(post.mult_loc.value, post.mult_scale()) + swapped(post.add_loc.value, post.add_scale());
}

train::LossBreakdown re_loss(const Matrix& x, const Matrix& xhat, const Matrix& z, const Matrix& zhat, double kl,
                             const REConfig& cfg) {
    train::LossBreakdown out;
    const double mse = nn::mse_loss(x, xhat);
    const double cce = nn::cce_loss(z, zhat);
    out.components["mse"] = mse;
    out.components["z_cce"] = cce;
    out.components["kl"] = kl;
    out.total = cfg.lambda_mse * mse + cfg.lambda_cce_z * cce + cfg.lambda_kl * kl;
    return out;
}

namespace {

void check_input(const REModel& m, const Matrix& x, const Matrix& z) {
    if (x.cols() != m.n_genes) {
        throw DimensionError("random-effects model expects " + std::to_string(m.n_genes) + " genes, got " +
                             std::to_string(x.cols()));
    }
    if (z.rows() != x.rows() || z.cols() != m.config.n_batches) {
        throw DimensionError("batch one-hot: expected " + dims(x.rows(), m.config.n_batches) + ", got " +
                             dims(z.rows(), z.cols()));
    }
    for (Index i = 0; i < z.rows(); ++i) {
        int ones = 0;
        for (Index j = 0; j < z.cols(); ++j) {
            const double v = z(i, j);
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                ones = -1;
                break;
            }
        }
        if (ones != 1) {
            throw ValueError("batch one-hot row " + std::to_string(i) + " does not select exactly one batch");
        }
    }
}

Matrix selu_matrix(const Matrix& h) {
    return h.unaryExpr([](double v) { return nn::selu(v); });
}

// batch statistics without touching the running averages
Matrix bn_batch(const nn::BatchNormState& s, const Matrix& x) {
    RowVector mean = x.colwise().mean();
    Matrix centered = x.rowwise() - mean;
    RowVector var = centered.array().square().colwise().mean();
    RowVector inv = (var.array() + s.epsilon).rsqrt();
    Matrix out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        out.row(i) = (centered.row(i).array() * inv.array() * s.gamma.value.row(0).array() +
                      s.beta.value.row(0).array())
                         .matrix();
    }
    return out;
}

Matrix normalise(const nn::BatchNormState& s, const Matrix& x, nn::Mode mode) {
    if (mode == nn::Mode::eval) {
        return nn::batchnorm_eval(s, x);
    }
    if (x.rows() < 2) {
        throw ValueError("batch normalisation in train mode needs at least 2 rows");
    }
    return bn_batch(s, x);
}

REOutputs forward_plain(const REModel& m, const Matrix& x, const Matrix& z, const Matrix& u_mult, const Matrix& u_add,
                        nn::Mode mode) {
    REOutputs out;
    Matrix h = x;
    const std::size_t n_hidden = m.encoder.size() - 1;
    for (std::size_t i = 0; i < n_hidden; ++i) {
        h = nn::dense_forward(m.encoder[i], h);
        if (!m.encoder_bn.empty()) {
            h = normalise(m.encoder_bn[i], h, mode);
        }
        h = selu_matrix(h);
        if (i == 0) {
            Matrix gain = z * u_mult;
            gain.array() += 1.0;
            h = (h.array() * gain.array()).matrix() + z * u_add;
        }
    }
    out.latent = nn::dense_forward(m.encoder.back(), h);

    h = out.latent;
    const std::size_t n_dec = m.decoder.size();
    for (std::size_t i = 0; i < n_dec; ++i) {
        h = nn::dense_forward(m.decoder[i], h);
        if (i + 1 < n_dec) {
            if (!m.decoder_bn.empty()) {
                h = normalise(m.decoder_bn[i], h, mode);
            }
            h = selu_matrix(h);
        }
    }
    out.reconstruction = h;

    h = out.latent;
    for (const auto& layer : m.classifier) {
        h = nn::dense_forward(layer, h);
    }
    out.batch_probs = h;
    return out;
}

} // namespace

REOutputs re_forward(const REModel& model, const Matrix& x, const Matrix& z_onehot, nn::Mode mode, Rng* rng) {
    check_input(model, x, z_onehot);
    const auto& post = model.posterior;
    if (mode == nn::Mode::eval) {
        return forward_plain(model, x, z_onehot, post.mult_loc.value, post.add_loc.value, mode);
    }
    if (rng == nullptr) {
        throw StateError("train-mode random-effects forward needs a random stream");
    }
    const Index k = post.n_batches();
    const Index u = post.n_units();
    Matrix eps_mult = random_normal(k, u, 1.0, *rng);
    Matrix eps_add = random_normal(k, u, 1.0, *rng);
    Matrix u_mult = post.mult_loc.value + post.mult_scale().cwiseProduct(eps_mult);
    Matrix u_add = post.add_loc.value + post.add_scale().cwiseProduct(eps_add);
    return forward_plain(model, x, z_onehot, u_mult, u_add, mode);
}

RETapeResult re_loss_tape(nn::Tape& tape, REModel& m, const Matrix& x, const Matrix& z_onehot, const Matrix& noise_mult,
                          const Matrix& noise_add, bool update_running) {
    check_input(m, x, z_onehot);
    auto& post = m.posterior;
    require_same_shape(post.mult_loc.value, noise_mult, "multiplicative noise");
    require_same_shape(post.add_loc.value, noise_add, "additive noise");

    auto mult_loc = tape.parameter(post.mult_loc);
    auto mult_scale = nn::softplus(tape.parameter(post.mult_raw_scale));
    auto add_loc = tape.parameter(post.add_loc);
    auto add_scale = nn::softplus(tape.parameter(post.add_raw_scale));
    auto u_mult = nn::add(mult_loc, nn::mul(mult_scale, tape.constant(noise_mult)));
    auto u_add = nn::add(add_loc, nn::mul(add_scale, tape.constant(noise_add)));
    auto z = tape.constant(z_onehot);

    nn::Var h = tape.constant(x);
    const std::size_t n_hidden = m.encoder.size() - 1;
    for (std::size_t i = 0; i < n_hidden; ++i) {
        h = nn::dense(tape, m.encoder[i], h);
        if (!m.encoder_bn.empty()) {
            h = nn::batch_norm(tape, m.encoder_bn[i], h, nn::Mode::train, update_running);
        }
        h = nn::selu(h);
        if (i == 0) {
            auto gain = nn::add_scalar(nn::matmul(z, u_mult), 1.0);
            h = nn::add(nn::mul(h, gain), nn::matmul(z, u_add));
        }
    }
    auto latent = nn::dense(tape, m.encoder.back(), h);

    h = latent;
    const std::size_t n_dec = m.decoder.size();
    for (std::size_t i = 0; i < n_dec; ++i) {
        h = nn::dense(tape, m.decoder[i], h);
        if (i + 1 < n_dec) {
            if (!m.decoder_bn.empty()) {
                h = nn::batch_norm(tape, m.decoder_bn[i], h, nn::Mode::train, update_running);
            }
            h = nn::selu(h);
        }
    }
    auto recon = h;

    h = latent;
    for (auto& layer : m.classifier) {
        h = nn::dense(tape, layer, h);
    }

    RETapeResult r;
    r.mse = nn::mse(recon, x);
    r.cce = nn::cce(h, z_onehot);
    const double mu0 = post.prior_loc;
    const double s0 = post.prior_scale;
    if (m.config.kl_form == KlForm::standard) {
        r.kl = nn::add(nn::kl_gaussian_sum(mult_loc, mult_scale, mu0, s0), nn::kl_gaussian_sum(add_loc, add_scale, mu0, s0));
    } else {
        r.kl = nn::add(nn::kl_gaussian_sum_swapped(mult_loc, mult_scale, mu0, s0),
                       nn::kl_gaussian_sum_swapped(add_loc, add_scale, mu0, s0));
    }
    const auto& cfg = m.config;
    std::vector<nn::Var> terms{r.mse, r.cce, r.kl};
    std::vector<double> weights{cfg.lambda_mse, cfg.lambda_cce_z, cfg.lambda_kl};
    r.total = nn::linear_combination(terms, weights);
    return r;
}

train::LossBreakdown evaluate_re(const REModel& model, const train::TrainingData& data) {
    Matrix z = one_hot(data.batch, model.config.n_batches);
    auto out = re_forward(model, data.x, z, nn::Mode::eval);
    return re_loss(data.x, out.reconstruction, z, out.batch_probs, posterior_kl(model.posterior, model.config.kl_form),
                   model.config);
}

Matrix encode_re(const REModel& model, const Matrix& x, const std::vector<int>& batch) {
    if (x.rows() == 0) {
        return Matrix(0, model.config.n_latent_dims);
    }
    return re_forward(model, x, one_hot(batch, model.config.n_batches), nn::Mode::eval).latent;
}

Matrix reconstruct_re(const REModel& model, const Matrix& x, const std::vector<int>& batch) {
    if (x.rows() == 0) {
        return Matrix(0, model.n_genes);
    }
    return re_forward(model, x, one_hot(batch, model.config.n_batches), nn::Mode::eval).reconstruction;
}

Matrix project_counterfactual(const REModel& model, const Matrix& x, const CounterfactualRequest& req) {
    auto it = std::find(model.batch_levels.begin(), model.batch_levels.end(), req.target_batch);
    if (it == model.batch_levels.end()) {
        throw ValueError("unknown target batch '" + req.target_batch + "'");
    }
    const int code = static_cast<int>(it - model.batch_levels.begin());
    Matrix sel;
    if (req.cells.empty()) {
        sel = x;
    } else {
        for (auto c : req.cells) {
            if (c < 0 || c >= x.rows()) {
                throw ValueError("counterfactual cell index " + std::to_string(c) + " out of range");
            }
        }
        sel = take_rows(x, req.cells);
    }
    return reconstruct_re(model, sel, std::vector<int>(static_cast<std::size_t>(sel.rows()), code));
}

namespace {

void check_data(const REConfig& cfg, const train::TrainingData& d, Index n_genes, const char* what) {
    if (d.size() == 0) {
        throw ValueError(std::string(what) + " set is empty");
    }
    if (d.x.cols() != n_genes) {
        throw DimensionError(std::string(what) + " set has " + std::to_string(d.x.cols()) + " genes, expected " +
                             std::to_string(n_genes));
    }
    if (static_cast<Index>(d.batch.size()) != d.size()) {
        throw DimensionError(std::string(what) + " set: batch codes do not match the number of cells");
    }
    for (int b : d.batch) {
        if (b < 0 || b >= cfg.n_batches) {
            throw ValueError(std::string(what) + " set: batch code " + std::to_string(b) + " outside [0, " +
                             std::to_string(cfg.n_batches) + ")");
        }
    }
}

} // namespace

REModel train_re(const train::TrainingData& train_data, const train::TrainingData& val_data, const REConfig& cfg) {
    REModel m = make_re_model(cfg, train_data.x.cols());
    check_data(cfg, train_data, m.n_genes, "training");
    check_data(cfg, val_data, m.n_genes, "validation");

    const Matrix z = one_hot(train_data.batch, cfg.n_batches);
    auto params = m.parameters();
    auto norms = m.norms();
    train::EarlyStopping stopper(cfg.patience);
    train::Snapshot best = train::take_snapshot(params, norms);
    Rng noise_rng(derive_seed(cfg.seed, "re/noise"));
    const Index k = m.posterior.n_batches();
    const Index units = m.posterior.n_units();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        train::LossAccumulator acc;
        for (const auto& rows : train::minibatches(train_data.size(), cfg.batch_size,
                                                   derive_seed(cfg.seed, "re/shuffle", epoch))) {
            const Matrix xb = take_rows(train_data.x, rows);
            const Matrix zb = take_rows(z, rows);
            const Matrix eps_mult = random_normal(k, units, 1.0, noise_rng);
            const Matrix eps_add = random_normal(k, units, 1.0, noise_rng);

            nn::Tape tape;
            auto r = re_loss_tape(tape, m, xb, zb, eps_mult, eps_add, true);
            train::LossBreakdown lb;
            lb.total = r.total.scalar();
            lb.components["mse"] = r.mse.scalar();
            lb.components["z_cce"] = r.cce.scalar();
            lb.components["kl"] = r.kl.scalar();
            train::check_finite(lb, "random-effects training");
            auto grads = nn::backward(tape, r.total);
            nn::adam_step(m.optimizer, params, grads);
            acc.add(lb, static_cast<double>(rows.size()));
        }

        train::EpochRecord rec;
        rec.epoch = epoch;
        rec.train = acc.mean();
        rec.validation = evaluate_re(m, val_data);
        train::check_finite(rec.validation, "random-effects validation");
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

} // namespace medl::re
