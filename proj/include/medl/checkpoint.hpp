#ifndef MEDL_CHECKPOINT_HPP
#define MEDL_CHECKPOINT_HPP

#include "medl/fe.hpp"
#include "medl/re.hpp"

#include <cstdint>
#include <string>

/**
 * @file checkpoint.hpp
 * @brief Versioned JSON checkpoints of trained models, and provenance sidecars.
 *
 * A checkpoint holds the model config, gene count, min-max scaler, every
 * parameter by name, batch-norm running statistics, batch level names and the
 * training history. Doubles are written in shortest round-trip form and keys
 * in a fixed order, so equal models give byte-identical files.
 *
 * Layout (format "medl-checkpoint", version 1):
 * @code
 * { "format", "version", "kind": "fe" | "re", "config": {...}, "n_genes",
 *   "scaler": {"min", "max"}, "parameters": [{"name", "rows", "cols", "data"}],
 *   "batch_norm": [{"name", "running_mean", "running_var"}],
 *   "batch_levels": [...], "history": {...} }
 * @endcode
 */

namespace medl::checkpoint {

inline constexpr int format_version = 1;

void save_fe(const fe::FEModel& model, const std::string& path);
fe::FEModel load_fe(const std::string& path);

void save_re(const re::REModel& model, const std::string& path);
re::REModel load_re(const std::string& path);

/** `epoch,split,total,<component>...` with one row per epoch and split. */
void write_history_csv(const train::TrainReport& report, const std::string& path);

struct Provenance {
    std::string version;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string command;
};

/** Library version string baked in at build time. */
std::string library_version();

/** Write `<path>.meta.json` next to an artifact. No timestamps, so reruns reproduce it. */
void write_sidecar(const std::string& path, const Provenance& prov);

} // namespace medl::checkpoint

#endif
