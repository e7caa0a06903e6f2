#ifndef MEDL_FUNCTIONS_HPP
#define MEDL_FUNCTIONS_HPP

#include "medl/common.hpp"

#include <cmath>

/**
 * @file functions.hpp
 * @brief Scalar activations and the loss functions on plain matrices.
 */

namespace medl::nn {

inline constexpr double selu_alpha = 1.6732632423543772;
inline constexpr double selu_scale = 1.0507009873554805;
inline constexpr double probability_floor = 1e-12;

inline double selu(double x) {
    return x > 0 ? selu_scale * x : selu_scale * selu_alpha * std::expm1(x);
}

inline double selu_derivative(double x) {
    return x > 0 ? selu_scale : selu_scale * selu_alpha * std::exp(x);
}

inline double softplus(double x) {
    // log(1 + e^x) without overflow
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

/** Inverse of softplus for y > 0. */
inline double softplus_inverse(double y) {
    return y > 30 ? y : std::log(std::expm1(y));
}

/** Max-subtracted softmax of a single vector. */
Vector softmax(const Vector& logits);

/** Row-wise softmax. */
Matrix softmax_rows(const Matrix& logits);

/** Mean over rows of the squared L2 norm of the row difference. */
double mse_loss(const Matrix& x, const Matrix& xhat);

/** Categorical cross-entropy with one-hot targets; probabilities floored before the log. */
double cce_loss(const Matrix& onehot, const Matrix& probs);

/** Closed-form KL(N(mu_q, sigma_q^2) || N(mu0, sigma0^2)). */
double kl_gaussian(double mu_q, double sigma_q, double mu0, double sigma0);

/** KL summed over matched arrays of posterior locations/scales against one prior. */
double kl_gaussian(const Matrix& mu_q, const Matrix& sigma_q, double mu0, double sigma0);

/**
 * Literal expansion 0.5 * [log(s^2/s0^2) - 1 + (s0^2 + (m - m0)^2) / s^2], which is
 * KL(prior || posterior). Kept for comparison runs only.
 */
double kl_gaussian_swapped(double mu_q, double sigma_q, double mu0, double sigma0);

} // namespace medl::nn

#endif
