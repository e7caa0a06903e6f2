#include "medl/layers.hpp"
#include "medl/functions.hpp"

#include <cmath>

namespace medl::nn {

const char* to_string(Activation a) {
    switch (a) {
    case Activation::linear:
        return "linear";
    case Activation::selu:
        return "selu";
    case Activation::softmax:
        return "softmax";
    }
    return "linear";
}

Activation activation_from_string(const std::string& s) {
    if (s == "linear") {
        return Activation::linear;
    }
    if (s == "selu") {
        return Activation::selu;
    }
    if (s == "softmax") {
        return Activation::softmax;
    }
    throw ValueError("unknown activation '" + s + "'");
}

Index DenseLayer::in_dim(const DenseLayer* source) const {
    if (tied) {
        if (!source) {
            throw StateError("tied layer " + bias.name + " evaluated without its source layer");
        }
        return source->weight.value.cols();
    }
    return weight.value.rows();
}

DenseLayer make_dense(Index in_dim, Index out_dim, Activation act, Rng& rng, const std::string& name) {
    DenseLayer layer;
    layer.weight = {name + ".weight", random_normal(in_dim, out_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng)};
    layer.bias = {name + ".bias", Matrix::Zero(1, out_dim)};
    layer.activation = act;
    return layer;
}

DenseLayer make_tied(const DenseLayer& source, Activation act, const std::string& name) {
    if (source.tied) {
        throw StateError("cannot tie " + name + " to another tied layer");
    }
    DenseLayer layer;
    layer.weight = {name + ".weight", Matrix()};
    layer.bias = {name + ".bias", Matrix::Zero(1, source.weight.value.rows())};
    layer.activation = act;
    layer.tied = true;
    return layer;
}

namespace {

const Matrix& effective_check(const DenseLayer& layer, Index input_cols, const DenseLayer* source) {
    const Index expected = layer.in_dim(source);
    if (input_cols != expected) {
        throw DimensionError("dense layer " + layer.bias.name + ": expected input with " + std::to_string(expected) +
                             " columns, got " + std::to_string(input_cols));
    }
    return layer.tied ? source->weight.value : layer.weight.value;
}

} // namespace

Matrix dense_forward(const DenseLayer& layer, const Matrix& input, const DenseLayer* source) {
    const Matrix& w = effective_check(layer, input.cols(), source);
    Matrix out = layer.tied ? Matrix(input * w.transpose()) : Matrix(input * w);
    out.rowwise() += layer.bias.value.row(0);
    switch (layer.activation) {
    case Activation::linear:
        break;
    case Activation::selu:
        out = out.unaryExpr([](double x) { return selu(x); });
        break;
    case Activation::softmax:
        out = softmax_rows(out);
        break;
    }
    return out;
}

Var apply_activation(Var x, Activation act) {
    switch (act) {
    case Activation::linear:
        return x;
    case Activation::selu:
        return selu(x);
    case Activation::softmax:
        return softmax_rows(x);
    }
    return x;
}

Var dense(Tape& tape, DenseLayer& layer, Var input, DenseLayer* source) {
    effective_check(layer, input.cols(), source);
    Var pre;
    if (layer.tied) {
        pre = matmul_bt(input, tape.parameter(source->weight));
    } else {
        pre = matmul(input, tape.parameter(layer.weight));
    }
    return apply_activation(add_row(pre, tape.parameter(layer.bias)), layer.activation);
}

BatchNormState make_batchnorm(Index dim, const std::string& name, double momentum, double epsilon) {
    BatchNormState s;
    s.gamma = {name + ".gamma", Matrix::Ones(1, dim)};
    s.beta = {name + ".beta", Matrix::Zero(1, dim)};
    s.running_mean = RowVector::Zero(dim);
    s.running_var = RowVector::Ones(dim);
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
}

namespace {

void check_bn_input(const BatchNormState& state, const Matrix& input, Mode mode) {
    if (input.cols() != state.dim()) {
        throw DimensionError("batch norm " + state.gamma.name + ": expected " + std::to_string(state.dim()) +
                             " features, got " + std::to_string(input.cols()));
    }
    if (mode == Mode::train && input.rows() < 2) {
        throw ValueError("batch norm " + state.gamma.name + ": train mode needs a batch of at least 2, got " +
                         std::to_string(input.rows()));
    }
}

void update_running(BatchNormState& state, const RowVector& mean, const RowVector& var) {
    state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mean;
    state.running_var = state.momentum * state.running_var + (1 - state.momentum) * var;
}

} // namespace

Matrix batchnorm_eval(const BatchNormState& state, const Matrix& input) {
    check_bn_input(state, input, Mode::eval);
    const auto& g = state.gamma.value.row(0).array();
    const auto& b = state.beta.value.row(0).array();
    Matrix out(input.rows(), input.cols());
    RowVector inv = (state.running_var.array() + state.epsilon).rsqrt();
    for (Index i = 0; i < input.rows(); ++i) {
        out.row(i) = (((input.row(i) - state.running_mean).array() * inv.array()) * g + b).matrix();
    }
    return out;
}

Matrix batchnorm_forward(BatchNormState& state, const Matrix& input, Mode mode) {
    check_bn_input(state, input, mode);
    const auto& g = state.gamma.value.row(0).array();
    const auto& b = state.beta.value.row(0).array();
    if (mode == Mode::eval) {
        return batchnorm_eval(state, input);
    }
    Matrix out(input.rows(), input.cols());
    RowVector mean = input.colwise().mean();
    Matrix centered = input.rowwise() - mean;
    RowVector var = centered.array().square().colwise().mean();
    RowVector inv = (var.array() + state.epsilon).rsqrt();
    for (Index i = 0; i < input.rows(); ++i) {
        out.row(i) = ((centered.row(i).array() * inv.array()) * g + b).matrix();
    }
    update_running(state, mean, var);
    return out;
}

Var batch_norm(Tape& tape, BatchNormState& state, Var input, Mode mode, bool update) {
    check_bn_input(state, input.value(), mode);
    Var gamma = tape.parameter(state.gamma);
    Var beta = tape.parameter(state.beta);

    if (mode == Mode::eval) {
        RowVector inv = (state.running_var.array() + state.epsilon).rsqrt();
        Matrix xhat = input.value().rowwise() - state.running_mean;
        xhat = xhat.array().rowwise() * inv.array();
        Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
        out.rowwise() += beta.value().row(0);
        auto ix = input.id(), ig = gamma.id(), ib = beta.id();
        return tape.record(std::move(out), {input, gamma, beta},
                           [ix, ig, ib, inv, xhat = std::move(xhat)](Tape& tp, std::size_t self) {
                               const Matrix& gr = tp.grad(self);
                               if (tp.requires_grad(ix)) {
                                   RowVector scale = tp.value(ig).row(0).cwiseProduct(inv);
                                   tp.accumulate(ix, gr.array().rowwise() * scale.array());
                               }
                               if (tp.requires_grad(ig)) {
                                   tp.accumulate(ig, gr.cwiseProduct(xhat).colwise().sum());
                               }
                               if (tp.requires_grad(ib)) {
                                   tp.accumulate(ib, gr.colwise().sum());
                               }
                           });
    }

    const Matrix& x = input.value();
    const double n = static_cast<double>(x.rows());
    RowVector mean = x.colwise().mean();
    Matrix centered = x.rowwise() - mean;
    RowVector var = centered.array().square().colwise().mean();
    RowVector inv = (var.array() + state.epsilon).rsqrt();
    Matrix xhat = centered.array().rowwise() * inv.array();
    Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    if (update) {
        update_running(state, mean, var);
    }

    auto ix = input.id(), ig = gamma.id(), ib = beta.id();
    return tape.record(std::move(out), {input, gamma, beta},
                       [ix, ig, ib, inv, n, xhat = std::move(xhat)](Tape& tp, std::size_t self) {
                           const Matrix& gr = tp.grad(self);
                           if (tp.requires_grad(ig)) {
                               tp.accumulate(ig, gr.cwiseProduct(xhat).colwise().sum());
                           }
                           if (tp.requires_grad(ib)) {
                               tp.accumulate(ib, gr.colwise().sum());
                           }
                           if (tp.requires_grad(ix)) {
                               // dx = gamma*inv/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                               Matrix dxhat = gr.array().rowwise() * tp.value(ig).row(0).array();
                               RowVector s1 = dxhat.colwise().sum();
                               RowVector s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                               Matrix dx = (dxhat * n).rowwise() - s1;
                               dx -= (xhat.array().rowwise() * s2.array()).matrix();
                               dx = dx.array().rowwise() * (inv.array() / n);
                               tp.accumulate(ix, dx);
                           }
                       });
}

void adam_step(AdamState& state, std::span<Parameter* const> params, const Gradients& grads) {
    std::vector<Matrix> g;
    g.reserve(params.size());
    for (auto* p : params) {
        g.push_back(grads.of(*p));
        if (!g.back().allFinite()) {
            throw DivergenceError("adam_step: non-finite gradient for parameter " + p->name);
        }
    }
    if (state.first_moment.empty()) {
        for (auto* p : params) {
            state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw StateError("adam_step: optimizer tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }

    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1 - std::pow(state.beta1, t);
    const double c2 = 1 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        require_same_shape(m, g[i], "adam_step");
        m = state.beta1 * m + (1 - state.beta1) * g[i];
        v = state.beta2 * v + (1 - state.beta2) * g[i].cwiseAbs2();
        params[i]->value.array() -=
            state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
    }
}

} // namespace medl::nn
