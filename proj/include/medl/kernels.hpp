#ifndef MEDL_KERNELS_HPP
#define MEDL_KERNELS_HPP

#include "medl/common.hpp"

#include <vector>

/**
 * @file kernels.hpp
 * @brief Hot loops with an OpenMP path and a serial reference.
 *
 * Each parallel kernel splits work over independent output rows and keeps
 * the per-row accumulation order of the serial version, so both paths give
 * bitwise identical results whatever the thread count.
 */

namespace medl::kernels {

enum class Execution { serial, parallel };

/**
 * For each point i and cluster c, the sum of Euclidean distances from i to
 * every point with code c (self-distance contributes 0).
 *
 * @param points n x d coordinates.
 * @param codes Cluster code per point, in [0, n_clusters).
 * @return n x n_clusters matrix of distance sums.
 */
Matrix cluster_distance_sums(const Matrix& points, const std::vector<int>& codes, int n_clusters,
                             Execution exec = Execution::parallel);

/**
 * Pearson correlation between the columns of `x`.
 * Columns with zero variance correlate 0 with everything, including themselves.
 */
Matrix column_correlation(const Matrix& x, Execution exec = Execution::parallel);

/** Number of threads the parallel path will use. */
int max_threads();

} // namespace medl::kernels

#endif
