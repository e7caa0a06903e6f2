#include "medl/tape.hpp"
#include "medl/functions.hpp"

#include <cmath>

namespace medl::nn {

const Matrix& Var::value() const {
    if (!my_tape) {
        throw StateError("Var: access through an empty handle");
    }
    return my_tape->value(my_id);
}

double Var::scalar() const {
    const auto& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw DimensionError("Var::scalar: expected 1x1, got " + dims(v.rows(), v.cols()));
    }
    return v(0, 0);
}

Matrix Gradients::of(const Parameter& p) const {
    auto it = my_grads.find(&p);
    if (it == my_grads.end()) {
        return Matrix::Zero(p.value.rows(), p.value.cols());
    }
    return it->second;
}

void Gradients::accumulate(const Parameter& p, const Matrix& g) {
    auto it = my_grads.find(&p);
    if (it == my_grads.end()) {
        my_grads.emplace(&p, g);
    } else {
        it->second += g;
    }
}

void Gradients::set_zero(const Parameter& p) {
    my_grads[&p] = Matrix::Zero(p.value.rows(), p.value.cols());
}

Var Tape::constant(Matrix value) {
    Node node;
    node.value = std::move(value);
    my_nodes.push_back(std::move(node));
    return Var(this, my_nodes.size() - 1);
}

Var Tape::parameter(Parameter& p) {
    Node node;
    node.value = p.value;
    node.param = &p;
    node.requires_grad = !is_frozen(p);
    my_nodes.push_back(std::move(node));
    return Var(this, my_nodes.size() - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
    Node node;
    node.value = std::move(value);
    for (const auto& in : inputs) {
        if (in.tape() != this) {
            throw StateError("Tape::record: input belongs to a different tape");
        }
        node.requires_grad = node.requires_grad || my_nodes[in.id()].requires_grad;
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    my_nodes.push_back(std::move(node));
    return Var(this, my_nodes.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    auto& node = my_nodes[id];
    if (!node.requires_grad) {
        return;
    }
    if (node.grad.size() == 0) {
        node.grad = g;
    } else {
        node.grad += g;
    }
}

Gradients backward(Tape& tape, Var loss) {
    if (loss.tape() != &tape) {
        throw StateError("backward: loss was not produced by this tape");
    }
    if (tape.my_consumed) {
        throw StateError("backward: tape already differentiated");
    }
    const auto& lv = tape.value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw DimensionError("backward: loss must be 1x1, got " + dims(lv.rows(), lv.cols()));
    }
    tape.my_consumed = true;

    Gradients out;
    if (tape.my_nodes[loss.id()].requires_grad) {
        tape.my_nodes[loss.id()].grad = Matrix::Ones(1, 1);
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            auto& node = tape.my_nodes[i];
            if (!node.requires_grad || node.grad.size() == 0) {
                continue;
            }
            if (node.param) {
                out.accumulate(*node.param, node.grad);
            } else if (node.backward) {
                node.backward(tape, i);
            }
        }
    }

    for (const auto& node : tape.my_nodes) {
        if (node.param && tape.is_frozen(*node.param)) {
            out.set_zero(*node.param);
        }
    }
    return out;
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
    if (!a.valid() || a.tape() != b.tape()) {
        throw StateError(std::string(op) + ": operands live on different tapes");
    }
    return *a.tape();
}

void require_scalar(Var v, const char* op) {
    if (v.rows() != 1 || v.cols() != 1) {
        throw DimensionError(std::string(op) + ": expected 1x1 operand, got " + dims(v.rows(), v.cols()));
    }
}

} // namespace

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ, expected " + std::to_string(a.cols()) +
                             " rows on the right operand, got " + std::to_string(b.rows()));
    }
    auto ia = a.id(), ib = b.id();
    return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            tp.accumulate(ia, g * tp.value(ib).transpose());
        }
        if (tp.requires_grad(ib)) {
            tp.accumulate(ib, tp.value(ia).transpose() * g);
        }
    });
}

Var matmul_bt(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul_bt");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_bt: expected right operand with " + std::to_string(a.cols()) +
                             " columns, got " + std::to_string(b.cols()));
    }
    auto ia = a.id(), ib = b.id();
    return t.record(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            tp.accumulate(ia, g * tp.value(ib));
        }
        if (tp.requires_grad(ib)) {
            tp.accumulate(ib, g.transpose() * tp.value(ia));
        }
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    auto ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, tp.grad(self));
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    auto ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self));
        if (tp.requires_grad(ib)) {
            tp.accumulate(ib, -tp.grad(self));
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    auto ia = a.id(), ib = b.id();
    return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
        }
        if (tp.requires_grad(ib)) {
            tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
        }
    });
}

Var add_row(Var a, Var row) {
    Tape& t = same_tape(a, row, "add_row");
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                             dims(row.rows(), row.cols()));
    }
    Matrix out = a.value();
    out.rowwise() += row.value().row(0);
    auto ia = a.id(), ir = row.id();
    return t.record(std::move(out), {a, row}, [ia, ir](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        tp.accumulate(ia, g);
        if (tp.requires_grad(ir)) {
            tp.accumulate(ir, g.colwise().sum());
        }
    });
}

Var scale(Var a, double s) {
    auto ia = a.id();
    return a.tape()->record(a.value() * s, {a}, [ia, s](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self) * s);
    });
}

Var add_scalar(Var a, double s) {
    auto ia = a.id();
    return a.tape()->record(a.value().array() + s, {a}, [ia](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self));
    });
}

Var selu(Var a) {
    auto ia = a.id();
    Matrix out = a.value().unaryExpr([](double x) { return nn::selu(x); });
    return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        Matrix d = tp.value(ia).unaryExpr([](double x) { return selu_derivative(x); });
        tp.accumulate(ia, tp.grad(self).cwiseProduct(d));
    });
}

Var softplus(Var a) {
    auto ia = a.id();
    Matrix out = a.value().unaryExpr([](double x) { return nn::softplus(x); });
    return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        Matrix d = tp.value(ia).unaryExpr([](double x) { return sigmoid(x); });
        tp.accumulate(ia, tp.grad(self).cwiseProduct(d));
    });
}

Var softmax_rows(Var a) {
    return a.tape()->record(nn::softmax_rows(a.value()), {a}, [ia = a.id()](Tape& tp, std::size_t self) {
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Vector dot = g.cwiseProduct(y).rowwise().sum();
        Matrix d = g;
        d.colwise() -= dot;
        tp.accumulate(ia, y.cwiseProduct(d));
    });
}

Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    auto ia = a.id();
    Index r = a.rows(), c = a.cols();
    return a.tape()->record(std::move(out), {a}, [ia, r, c](Tape& tp, std::size_t self) {
        tp.accumulate(ia, Matrix::Constant(r, c, tp.grad(self)(0, 0)));
    });
}

Var linear_combination(std::span<const Var> terms, std::span<const double> weights) {
    if (terms.empty() || terms.size() != weights.size()) {
        throw DimensionError("linear_combination: " + std::to_string(terms.size()) + " terms but " +
                             std::to_string(weights.size()) + " weights");
    }
    Tape& t = *terms[0].tape();
    double total = 0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        same_tape(terms[0], terms[i], "linear_combination");
        require_scalar(terms[i], "linear_combination");
        total += weights[i] * terms[i].scalar();
    }
    std::vector<std::size_t> ids;
    for (const auto& v : terms) {
        ids.push_back(v.id());
    }
    std::vector<double> w(weights.begin(), weights.end());
    Matrix out(1, 1);
    out(0, 0) = total;
    return t.record(std::move(out), std::vector<Var>(terms.begin(), terms.end()), [ids, w](Tape& tp, std::size_t self) {
        double g = tp.grad(self)(0, 0);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            tp.accumulate(ids[i], Matrix::Constant(1, 1, g * w[i]));
        }
    });
}

Var mse(Var pred, const Matrix& target) {
    require_same_shape(pred.value(), target, "mse");
    const double n = static_cast<double>(pred.rows());
    Matrix diff = pred.value() - target;
    Matrix out(1, 1);
    out(0, 0) = n > 0 ? diff.squaredNorm() / n : 0.0;
    auto ip = pred.id();
    return pred.tape()->record(std::move(out), {pred}, [ip, diff = std::move(diff), n](Tape& tp, std::size_t self) {
        if (n > 0) {
            tp.accumulate(ip, diff * (2.0 * tp.grad(self)(0, 0) / n));
        }
    });
}

Var cce(Var probs, const Matrix& onehot) {
    require_same_shape(probs.value(), onehot, "cce");
    Matrix out(1, 1);
    out(0, 0) = cce_loss(onehot, probs.value());
    auto ip = probs.id();
    const double n = static_cast<double>(probs.rows());
    return probs.tape()->record(std::move(out), {probs}, [ip, onehot, n](Tape& tp, std::size_t self) {
        const Matrix& p = tp.value(ip);
        const double g = tp.grad(self)(0, 0);
        Matrix d = Matrix::Zero(p.rows(), p.cols());
        for (Index j = 0; j < p.cols(); ++j) {
            for (Index i = 0; i < p.rows(); ++i) {
                if (onehot(i, j) != 0 && p(i, j) > probability_floor) {
                    d(i, j) = -g * onehot(i, j) / (n * p(i, j));
                }
            }
        }
        tp.accumulate(ip, d);
    });
}

Var kl_gaussian_sum(Var mu, Var sigma, double mu0, double sigma0) {
    Tape& t = same_tape(mu, sigma, "kl_gaussian_sum");
    require_same_shape(mu.value(), sigma.value(), "kl_gaussian_sum");
    Matrix out(1, 1);
    out(0, 0) = kl_gaussian(mu.value(), sigma.value(), mu0, sigma0);
    auto im = mu.id(), is = sigma.id();
    return t.record(std::move(out), {mu, sigma}, [im, is, mu0, sigma0](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)(0, 0);
        const double v0 = sigma0 * sigma0;
        const Matrix& m = tp.value(im);
        const Matrix& s = tp.value(is);
        if (tp.requires_grad(im)) {
            tp.accumulate(im, ((m.array() - mu0) / v0 * g).matrix());
        }
        if (tp.requires_grad(is)) {
            tp.accumulate(is, ((s.array() / v0 - s.array().inverse()) * g).matrix());
        }
    });
}

Var kl_gaussian_sum_swapped(Var mu, Var sigma, double mu0, double sigma0) {
    Tape& t = same_tape(mu, sigma, "kl_gaussian_sum_swapped");
    require_same_shape(mu.value(), sigma.value(), "kl_gaussian_sum_swapped");
    double total = 0;
    for (Index j = 0; j < mu.cols(); ++j) {
        for (Index i = 0; i < mu.rows(); ++i) {
            total += kl_gaussian_swapped(mu.value()(i, j), sigma.value()(i, j), mu0, sigma0);
        }
    }
    Matrix out(1, 1);
    out(0, 0) = total;
    auto im = mu.id(), is = sigma.id();
    return t.record(std::move(out), {mu, sigma}, [im, is, mu0, sigma0](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)(0, 0);
        const double v0 = sigma0 * sigma0;
        const auto m = tp.value(im).array() - mu0;
        const auto s = tp.value(is).array();
        if (tp.requires_grad(im)) {
            tp.accumulate(im, (m / s.square() * g).matrix());
        }
        if (tp.requires_grad(is)) {
            tp.accumulate(is, ((s.inverse() - (v0 + m.square()) / s.cube()) * g).matrix());
        }
    });
}

} // namespace medl::nn
