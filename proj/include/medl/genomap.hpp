#ifndef MEDL_GENOMAP_HPP
#define MEDL_GENOMAP_HPP

#include "medl/common.hpp"
#include "medl/fe.hpp"
#include "medl/kernels.hpp"
#include "medl/re.hpp"

#include <cstdint>
#include <string>
#include <vector>

/**
 * @file genomap.hpp
 * @brief Gene-grid images of expression vectors, for comparing original
 * cells with their fixed-effects reconstructions and random-effects
 * projections side by side.
 *
 * Genes are laid out by a deterministic interaction-ranked spiral rather than
 * an optimal-transport assignment: the gene with the largest total absolute
 * correlation sits at the centre and the ranking unwinds outwards.
 */

namespace medl::genomap {

/**
 * Pearson correlation between gene columns.
 * A constant gene correlates 0 with every other gene and 1 with itself.
 */
Matrix interaction_matrix(const Matrix& x, kernels::Execution exec = kernels::Execution::parallel);

struct GeneGrid {
    int side = 0;
    Index n_genes = 0;
    std::vector<int> pixel_of_gene;   ///< row-major pixel index per gene
    std::vector<Index> gene_at_pixel; ///< -1 for background pixels
    std::vector<int> spiral;          ///< pixels in placement order, centre first
    Vector strength;                  ///< total absolute interaction per gene

    /** side x side image; unused pixels take `background`. */
    Matrix to_image(const Eigen::Ref<const RowVector>& values, double background = 0) const;

    /** Inverse of to_image on the gene pixels. */
    RowVector from_image(const Matrix& image) const;
};

/**
 * Rank genes by their summed absolute interaction with other genes (ties by
 * gene index) and place them along a centre-out spiral. Spiral order is by
 * squared distance from the centre pixel, then angle, then pixel index.
 */
GeneGrid build_grid(const Matrix& interactions);

/** Byte image of a grid, stored row-major. */
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

/** 8-bit grayscale PNG without timestamps, so equal images give equal files. */
void write_png(const GrayImage& image, const std::string& path);
GrayImage read_png(const std::string& path);

constexpr double clip_sd = 3.0;
constexpr std::uint8_t background_level = 0;

/** z-score clipped to +-3 and mapped affinely onto 0..255. */
std::uint8_t quantize(double z);
double dequantize(std::uint8_t level);

struct PanelCells {
    Matrix x;                        ///< scaled expression, one row per cell
    std::vector<std::string> ids;
    std::vector<std::string> celltypes;
    std::vector<std::string> batches; ///< origin batch names, as in the RE model's levels
};

/**
 * Pick up to `n` cells of one cell type, uniformly without replacement.
 * Indices come back sorted.
 */
std::vector<Index> sample_cells(const std::vector<std::string>& celltypes, const std::string& celltype, Index n,
                                std::uint64_t seed);

struct GenomapPanel {
    std::vector<std::string> columns; ///< "original", "fe", then "re_<batch>" per target
    std::vector<Matrix> standardized; ///< per column, cells x genes
    RowVector mean;                   ///< one per gene, over every column's rows
    RowVector sd;                     ///< population sd; 0 for genes constant across the panel
    std::vector<int> highlight;       ///< per cell, the column of its own batch or -1
};

struct RenderOptions {
    std::string out_dir;   ///< empty: compute only
    std::string figure = "genomap";
    int composite_scale = 4;
};

/**
 * Build the combined matrix of originals, FE reconstructions and RE
 * projections onto each target batch, z-score every gene over it, and
 * (when `out_dir` is set) write one image per cell and column, a composite
 * per cell type and `manifest.csv`.
 */
GenomapPanel render_panel(const GeneGrid& grid, const PanelCells& cells, const fe::FEModel& fe_model,
                          const re::REModel& re_model, const std::vector<std::string>& target_batches,
                          const RenderOptions& opts = {});

} // namespace medl::genomap

#endif
