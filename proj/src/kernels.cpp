#include "medl/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace medl::kernels {

namespace {

void check_codes(const Matrix& points, const std::vector<int>& codes, int n_clusters) {
    if (static_cast<Index>(codes.size()) != points.rows()) {
        throw DimensionError("cluster codes: expected " + std::to_string(points.rows()) + " codes, got " +
                             std::to_string(codes.size()));
    }
    for (int c : codes) {
        if (c < 0 || c >= n_clusters) {
            throw ValueError("cluster code " + std::to_string(c) + " outside [0, " + std::to_string(n_clusters) + ")");
        }
    }
}

void distance_row(const Matrix& points, const std::vector<int>& codes, Index i, Eigen::Ref<RowVector> out) {
    out.setZero();
    const Index n = points.rows();
    const Index d = points.cols();
    for (Index j = 0; j < n; ++j) {
        double s = 0;
        for (Index k = 0; k < d; ++k) {
            const double diff = points(i, k) - points(j, k);
            s += diff * diff;
        }
        out(codes[j]) += std::sqrt(s);
    }
}

} // namespace

Matrix cluster_distance_sums(const Matrix& points, const std::vector<int>& codes, int n_clusters, Execution exec) {
    check_codes(points, codes, n_clusters);
    const Index n = points.rows();
    Matrix out(n, n_clusters);
    if (exec == Execution::serial) {
        RowVector row(n_clusters);
        for (Index i = 0; i < n; ++i) {
            distance_row(points, codes, i, row);
            out.row(i) = row;
        }
        return out;
    }

#pragma omp parallel
    {
        RowVector row(n_clusters);
#pragma omp for schedule(dynamic, 16)
        for (Index i = 0; i < n; ++i) {
            distance_row(points, codes, i, row);
            out.row(i) = row;
        }
    }
    return out;
}

Matrix column_correlation(const Matrix& x, Execution exec) {
    const Index n = x.rows();
    const Index m = x.cols();
    if (n < 2) {
        throw ValueError("correlation needs at least 2 observations");
    }
    Matrix centered = x.rowwise() - x.colwise().mean();
    Vector norms(m);
    for (Index j = 0; j < m; ++j) {
        norms(j) = centered.col(j).norm();
    }

    Matrix out = Matrix::Zero(m, m);
    auto fill_row = [&](Index a) {
        if (norms(a) == 0) {
            return;
        }
        for (Index b = 0; b < m; ++b) {
            if (norms(b) == 0) {
                continue;
            }
            double dot = 0;
            for (Index i = 0; i < n; ++i) {
                dot += centered(i, a) * centered(i, b);
            }
            out(a, b) = std::clamp(dot / (norms(a) * norms(b)), -1.0, 1.0);
        }
    };

    if (exec == Execution::serial) {
        for (Index a = 0; a < m; ++a) {
            fill_row(a);
        }
    } else {
#pragma omp parallel for schedule(dynamic, 8)
        for (Index a = 0; a < m; ++a) {
            fill_row(a);
        }
    }

    // dot products are order-sensitive, so copy the upper triangle down for exact symmetry
    for (Index a = 0; a < m; ++a) {
        for (Index b = 0; b < a; ++b) {
            out(a, b) = out(b, a);
        }
    }
    return out;
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace medl::kernels
