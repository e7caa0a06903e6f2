#include "medl/genomap.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

namespace medl::genomap {

Matrix interaction_matrix(const Matrix& x, kernels::Execution exec) {
    if (x.cols() < 2) {
        throw ValueError("interaction matrix needs at least 2 genes, got " + std::to_string(x.cols()));
    }
    if (x.rows() < 2) {
        throw ValueError("interaction matrix needs at least 2 cells, got " + std::to_string(x.rows()));
    }
    Matrix c = kernels::column_correlation(x, exec);
    c.diagonal().setOnes();
    return c;
}

Matrix GeneGrid::to_image(const Eigen::Ref<const RowVector>& values, double background) const {
    if (values.size() != n_genes) {
        throw DimensionError("grid holds " + std::to_string(n_genes) + " genes, got " + std::to_string(values.size()));
    }
    Matrix img = Matrix::Constant(side, side, background);
    for (Index g = 0; g < n_genes; ++g) {
        img(pixel_of_gene[g] / side, pixel_of_gene[g] % side) = values(g);
    }
    return img;
}

RowVector GeneGrid::from_image(const Matrix& image) const {
    if (image.rows() != side || image.cols() != side) {
        throw DimensionError("expected a " + dims(side, side) + " image, got " + dims(image.rows(), image.cols()));
    }
    RowVector out(n_genes);
    for (Index g = 0; g < n_genes; ++g) {
        out(g) = image(pixel_of_gene[g] / side, pixel_of_gene[g] % side);
    }
    return out;
}

GeneGrid build_grid(const Matrix& interactions) {
    if (interactions.rows() != interactions.cols()) {
        throw DimensionError("interaction matrix must be square, got " +
                             dims(interactions.rows(), interactions.cols()));
    }
    GeneGrid grid;
    const Index m = interactions.rows();
    grid.n_genes = m;
    grid.side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
    while (static_cast<Index>(grid.side) * grid.side < m) {
        ++grid.side;
    }
    const int side = grid.side;

    grid.strength.resize(m);
    for (Index g = 0; g < m; ++g) {
        grid.strength(g) = interactions.row(g).cwiseAbs().sum() - std::abs(interactions(g, g));
    }
    std::vector<Index> rank(m);
    std::iota(rank.begin(), rank.end(), Index{0});
    std::stable_sort(rank.begin(), rank.end(), [&](Index a, Index b) { return grid.strength(a) > grid.strength(b); });

    const int centre = (side - 1) / 2;
    grid.spiral.resize(static_cast<std::size_t>(side) * side);
    std::iota(grid.spiral.begin(), grid.spiral.end(), 0);
    auto key = [&](int p) {
        const int dr = p / side - centre;
        const int dc = p % side - centre;
        double angle = std::atan2(static_cast<double>(dr), static_cast<double>(dc));
        if (angle < 0) {
            angle += 2 * M_PI;
        }
        return std::make_tuple(dr * dr + dc * dc, angle, p);
    };
    std::sort(grid.spiral.begin(), grid.spiral.end(), [&](int a, int b) { return key(a) < key(b); });

    grid.pixel_of_gene.assign(m, -1);
    grid.gene_at_pixel.assign(grid.spiral.size(), -1);
    for (Index r = 0; r < m; ++r) {
        grid.pixel_of_gene[rank[r]] = grid.spiral[r];
        grid.gene_at_pixel[grid.spiral[r]] = rank[r];
    }
    return grid;
}

void write_png(const GrayImage& image, const std::string& path) {
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
        throw DimensionError("malformed image for " + path);
    }
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) {
        throw ValueError("cannot open " + path + " for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        std::fclose(fp);
        throw ValueError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw ValueError("libpng failed writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < image.height; ++r) {
        png_write_row(png, image.pixels.data() + static_cast<std::size_t>(r) * image.width);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

GrayImage read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) {
        throw ValueError("cannot open " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        std::fclose(fp);
        throw ValueError("libpng initialisation failed");
    }
    GrayImage image;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ParseError("not a readable PNG: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ParseError("expected an 8-bit grayscale PNG: " + path);
    }
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
    for (int r = 0; r < image.height; ++r) {
        png_read_row(png, image.pixels.data() + static_cast<std::size_t>(r) * image.width, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return image;
}

std::uint8_t quantize(double z) {
    const double c = std::clamp(z, -clip_sd, clip_sd);
    return static_cast<std::uint8_t>(std::lround((c + clip_sd) / (2 * clip_sd) * 255.0));
}

double dequantize(std::uint8_t level) {
    return static_cast<double>(level) / 255.0 * (2 * clip_sd) - clip_sd;
}

std::vector<Index> sample_cells(const std::vector<std::string>& celltypes, const std::string& celltype, Index n,
                                std::uint64_t seed) {
    std::vector<Index> pool;
    for (Index i = 0; i < static_cast<Index>(celltypes.size()); ++i) {
        if (celltypes[i] == celltype) {
            pool.push_back(i);
        }
    }
    Rng rng(derive_seed(seed, "genomap/sample/" + celltype));
    std::shuffle(pool.begin(), pool.end(), rng);
    if (static_cast<Index>(pool.size()) > n) {
        pool.resize(static_cast<std::size_t>(n));
    }
    std::sort(pool.begin(), pool.end());
    return pool;
}

namespace {

std::string safe_name(const std::string& s) {
    std::string out = s.empty() ? "_" : s;
    for (auto& ch : out) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                        ch == '_' || ch == '.';
        if (!ok) {
            ch = '_';
        }
    }
    if (out == "." || out == "..") {
        out = "_";
    }
    return out;
}

GrayImage cell_image(const GeneGrid& grid, const Eigen::Ref<const RowVector>& z) {
    GrayImage img;
    img.width = img.height = grid.side;
    img.pixels.assign(static_cast<std::size_t>(grid.side) * grid.side, background_level);
    for (Index g = 0; g < grid.n_genes; ++g) {
        img.pixels[grid.pixel_of_gene[g]] = quantize(z(g));
    }
    return img;
}

void write_outputs(const GeneGrid& grid, const PanelCells& cells, const GenomapPanel& panel, const RenderOptions& opts) {
    namespace fs = std::filesystem;
    const fs::path root = fs::path(opts.out_dir) / safe_name(opts.figure);
    const Index n = cells.x.rows();
    const int ncol = static_cast<int>(panel.columns.size());

    std::map<std::string, std::vector<Index>> by_type;
    for (Index i = 0; i < n; ++i) {
        by_type[cells.celltypes[i]].push_back(i);
    }
    for (const auto& [type, members] : by_type) {
        fs::create_directories(root / safe_name(type));
    }

    std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < n; ++i) {
        try {
            const fs::path dir = root / safe_name(cells.celltypes[i]);
            for (int c = 0; c < ncol; ++c) {
                auto img = cell_image(grid, panel.standardized[c].row(i));
                write_png(img, (dir / (safe_name(cells.ids[i]) + "__" + safe_name(panel.columns[c]) + ".png")).string());
            }
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) {
            throw ValueError(e);
        }
    }

    // composite: one row per cell, one tile per column, own-batch tile framed in white
    const int scale = std::max(1, opts.composite_scale);
    const int tile = grid.side * scale;
    const int margin = 2;
    const int cellw = tile + 2 * margin;
    for (const auto& [type, members] : by_type) {
        GrayImage comp;
        comp.width = ncol * cellw;
        comp.height = static_cast<int>(members.size()) * cellw;
        comp.pixels.assign(static_cast<std::size_t>(comp.width) * comp.height, 128);
        for (std::size_t r = 0; r < members.size(); ++r) {
            const Index i = members[r];
            for (int c = 0; c < ncol; ++c) {
                const int top = static_cast<int>(r) * cellw;
                const int left = c * cellw;
                if (panel.highlight[i] == c) {
                    for (int a = 0; a < cellw; ++a) {
                        for (int b = 0; b < cellw; ++b) {
                            comp.at(top + a, left + b) = 255;
                        }
                    }
                }
                auto img = cell_image(grid, panel.standardized[c].row(i));
                for (int a = 0; a < tile; ++a) {
                    for (int b = 0; b < tile; ++b) {
                        comp.at(top + margin + a, left + margin + b) = img.at(a / scale, b / scale);
                    }
                }
            }
        }
        write_png(comp, (root / (safe_name(type) + "__composite.png")).string());
    }

    std::ofstream manifest(root / "manifest.csv");
    if (!manifest) {
        throw ValueError("cannot write " + (root / "manifest.csv").string());
    }
    manifest << "path,cell_id,celltype,batch,column,own_batch\n";
    for (Index i = 0; i < n; ++i) {
        for (int c = 0; c < ncol; ++c) {
            const std::string rel =
                safe_name(cells.celltypes[i]) + "/" + safe_name(cells.ids[i]) + "__" + safe_name(panel.columns[c]) + ".png";
            manifest << data::csv_escape(rel) << ',' << data::csv_escape(cells.ids[i]) << ','
                     << data::csv_escape(cells.celltypes[i]) << ',' << data::csv_escape(cells.batches[i]) << ','
                     << data::csv_escape(panel.columns[c]) << ',' << (panel.highlight[i] == c ? 1 : 0) << '\n';
        }
    }
}

} // namespace

GenomapPanel render_panel(const GeneGrid& grid, const PanelCells& cells, const fe::FEModel& fe_model,
                          const re::REModel& re_model, const std::vector<std::string>& target_batches,
                          const RenderOptions& opts) {
    const Index n = cells.x.rows();
    if (cells.x.cols() != grid.n_genes) {
        throw DimensionError("grid holds " + std::to_string(grid.n_genes) + " genes but cells have " +
                             std::to_string(cells.x.cols()));
    }
    if (static_cast<Index>(cells.ids.size()) != n || static_cast<Index>(cells.celltypes.size()) != n ||
        static_cast<Index>(cells.batches.size()) != n) {
        throw DimensionError("panel cells need an id, cell type and batch per row");
    }
    const auto& levels = re_model.batch_levels;
    for (const auto& b : target_batches) {
        if (std::find(levels.begin(), levels.end(), b) == levels.end()) {
            throw ValueError("unknown target batch '" + b + "'");
        }
    }
    const std::vector<int> batch_codes = data::encode_with(cells.batches, levels);

    GenomapPanel panel;
    panel.columns = {"original", "fe"};
    std::vector<Matrix> raw;
    raw.push_back(cells.x);
    raw.push_back(n > 0 ? fe::reconstruct_fe(fe_model, cells.x) : Matrix(0, cells.x.cols()));
    for (const auto& b : target_batches) {
        panel.columns.push_back("re_" + b);
        std::vector<Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), Index{0});
        raw.push_back(n > 0 ? re::project_counterfactual(re_model, cells.x, {all, b}) : Matrix(0, cells.x.cols()));
    }
    for (const auto& r : raw) {
        if (r.cols() != grid.n_genes) {
            throw DimensionError("model output has " + std::to_string(r.cols()) + " genes, grid has " +
                                 std::to_string(grid.n_genes));
        }
    }

    const Index m = grid.n_genes;
    const double total = static_cast<double>(n * static_cast<Index>(raw.size()));
    panel.mean = RowVector::Zero(m);
    panel.sd = RowVector::Zero(m);
    if (total > 0) {
        for (const auto& r : raw) {
            panel.mean += r.colwise().sum();
        }
        panel.mean /= total;
        for (const auto& r : raw) {
            panel.sd += (r.rowwise() - panel.mean).array().square().colwise().sum().matrix();
        }
        panel.sd = (panel.sd / total).cwiseSqrt();
    }
    for (const auto& r : raw) {
        Matrix z(r.rows(), m);
        for (Index g = 0; g < m; ++g) {
            if (panel.sd(g) > 0) {
                z.col(g) = (r.col(g).array() - panel.mean(g)) / panel.sd(g);
            } else {
                z.col(g).setZero();
            }
        }
        panel.standardized.push_back(std::move(z));
    }

    panel.highlight.assign(static_cast<std::size_t>(n), -1);
    for (Index i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < target_batches.size(); ++t) {
            if (levels[batch_codes[i]] == target_batches[t]) {
                panel.highlight[i] = static_cast<int>(2 + t);
            }
        }
    }

    if (!opts.out_dir.empty()) {
        write_outputs(grid, cells, panel, opts);
    }
    return panel;
}

} // namespace medl::genomap
