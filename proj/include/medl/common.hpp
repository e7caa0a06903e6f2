#ifndef MEDL_COMMON_HPP
#define MEDL_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file common.hpp
 * @brief Matrix aliases, error types and seeded random streams shared by every module.
 */

namespace medl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/**
 * Base class for all errors raised by the library.
 * `kind()` is a stable machine-readable class name used by the CLI.
 */
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what) : std::runtime_error(what), my_kind(std::move(kind)) {}

    const std::string& kind() const noexcept { return my_kind; }

private:
    std::string my_kind;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error("DimensionError", what) {}
};

struct ValueError : Error {
    explicit ValueError(const std::string& what) : Error("ValueError", what) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& what) : Error("ParseError", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("ConfigError", what) {}
};

struct StateError : Error {
    explicit StateError(const std::string& what) : Error("StateError", what) {}
};

struct DivergenceError : Error {
    explicit DivergenceError(const std::string& what) : Error("DivergenceError", what) {}
};

using Rng = std::mt19937_64;

/**
 * Derive an independent stream seed from a master seed and a label.
 * Separate components (encoder init, adversary init, shuffling, ...) draw from
 * separate streams so that adding one component never shifts another's draws.
 */
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t extra = 0) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t x = master ^ (h + 0x9e3779b97f4a7c15ULL + (extra << 6) + (extra >> 2));
    // splitmix64 finaliser
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::string dims(Index rows, Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

inline void require_same_shape(const Matrix& a, const Matrix& b, std::string_view what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": shape mismatch, expected " + dims(a.rows(), a.cols()) +
                             ", got " + dims(b.rows(), b.cols()));
    }
}

/** Fill a matrix with i.i.d. normal draws. */
inline Matrix random_normal(Index rows, Index cols, double sd, Rng& rng) {
    if (sd == 0) {
        return Matrix::Zero(rows, cols);
    }
    std::normal_distribution<double> dist(0.0, sd);
    Matrix out(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            out(i, j) = dist(rng);
        }
    }
    return out;
}

/** Build an n x k one-hot matrix from integer codes in [0, k). */
inline Matrix one_hot(const std::vector<int>& codes, int k) {
    Matrix out = Matrix::Zero(static_cast<Index>(codes.size()), k);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] < 0 || codes[i] >= k) {
            throw ValueError("one_hot: code " + std::to_string(codes[i]) + " out of range [0," + std::to_string(k) + ")");
        }
        out(static_cast<Index>(i), codes[i]) = 1.0;
    }
    return out;
}

/** Gather rows of a matrix. */
inline Matrix take_rows(const Matrix& x, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = x.row(rows[i]);
    }
    return out;
}

template <typename T>
std::vector<T> take(const std::vector<T>& x, const std::vector<Index>& rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (auto r : rows) {
        out.push_back(x[static_cast<std::size_t>(r)]);
    }
    return out;
}

} // namespace medl

#endif
