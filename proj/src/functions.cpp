#include "medl/functions.hpp"

namespace medl::nn {

Vector softmax(const Vector& logits) {
    Vector out = (logits.array() - logits.maxCoeff()).exp();
    out /= out.sum();
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const double top = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - top).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

double mse_loss(const Matrix& x, const Matrix& xhat) {
    require_same_shape(x, xhat, "mse_loss");
    if (x.rows() == 0) {
        return 0.0;
    }
    return (x - xhat).squaredNorm() / static_cast<double>(x.rows());
}

double cce_loss(const Matrix& onehot, const Matrix& probs) {
    require_same_shape(onehot, probs, "cce_loss");
    if (onehot.rows() == 0) {
        return 0.0;
    }
    double total = 0;
    for (Index i = 0; i < onehot.rows(); ++i) {
        int ones = 0;
        for (Index k = 0; k < onehot.cols(); ++k) {
            const double z = onehot(i, k);
            if (z == 1.0) {
                ++ones;
                total -= std::log(std::max(probs(i, k), probability_floor));
            } else if (z != 0.0) {
                ones = -1;
                break;
            }
        }
        if (ones != 1) {
            throw ValueError("cce_loss: row " + std::to_string(i) + " is not a valid one-hot vector");
        }
    }
    return total / static_cast<double>(onehot.rows());
}

double kl_gaussian(double mu_q, double sigma_q, double mu0, double sigma0) {
    if (!(sigma_q > 0) || !(sigma0 > 0)) {
        throw ValueError("kl_gaussian: scales must be positive (sigma_q=" + std::to_string(sigma_q) +
                         ", sigma0=" + std::to_string(sigma0) + ")");
    }
    const double d = mu_q - mu0;
    return std::log(sigma0 / sigma_q) + (sigma_q * sigma_q + d * d) / (2 * sigma0 * sigma0) - 0.5;
}

double kl_gaussian(const Matrix& mu_q, const Matrix& sigma_q, double mu0, double sigma0) {
    require_same_shape(mu_q, sigma_q, "kl_gaussian");
    double total = 0;
    for (Index j = 0; j < mu_q.cols(); ++j) {
        for (Index i = 0; i < mu_q.rows(); ++i) {
            total += kl_gaussian(mu_q(i, j), sigma_q(i, j), mu0, sigma0);
        }
    }
    return total;
}

double kl_gaussian_swapped(double mu_q, double sigma_q, double mu0, double sigma0) {
    if (!(sigma_q > 0) || !(sigma0 > 0)) {
        throw ValueError("kl_gaussian_swapped: scales must be positive");
    }
    const double d = mu_q - mu0;
    const double vq = sigma_q * sigma_q, v0 = sigma0 * sigma0;
    return 0.5 * (std::log(vq / v0) - 1 + (v0 + d * d) / vq);
}

} // namespace medl::nn
