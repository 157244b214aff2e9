#pragma once

// Run configuration and the subcommands behind the `fastvar` executable.
// Commands write their artifacts under RunConfig::out_dir and a short
// human-readable summary to `log`.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fastvar/bench.hpp"
#include "fastvar/pyramid.hpp"
#include "fastvar/varnet.hpp"

namespace fastvar {

struct RunConfig {
    ModelConfig model;
    std::vector<Extent> sizes;
    /// Texture-stage length. When ratios are given it must match their count.
    std::optional<std::size_t> n_prune;
    std::optional<std::vector<double>> ratios;
    std::size_t cache_step = 0;
    ResizeMode mode = ResizeMode::Nearest;
    /// Extra square sides appended after `sizes` (zero-shot resolution scaling).
    std::vector<std::size_t> extend_scales;

    std::uint64_t seed_condition = 1;
    std::uint64_t seed_sampling = 2;

    std::filesystem::path out_dir = "fastvar_out";
    std::vector<ReportFormat> formats{ReportFormat::Csv};
    bool masks = true;
    std::size_t reps = 5;
    bool compare = false;

    /// Small default model and schedule, suitable for quick runs.
    static RunConfig defaults();

    bool pruning_enabled() const noexcept { return ratios.has_value(); }
    Seeds seeds() const noexcept { return {seed_condition, seed_sampling}; }

    /// Builds and validates the schedule. Extended steps join the texture
    /// stage with the last configured ratio; the caching step stays at the
    /// end of the original structure stage.
    ScaleSchedule schedule() const;

    void validate() const;
};

/// Applies a JSON manifest on top of `base`. Unknown keys are rejected.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = RunConfig::defaults());
RunConfig parse_config(const std::string& json_text, RunConfig base = RunConfig::defaults());

/// Generates the final map; with pruning and `compare`, also the unpruned
/// baseline. Writes metrics (baseline/pruned.{csv,json}), final.fvtm
/// (baseline.fvtm when comparing) and mask_step<k>.pgm per pruned step.
void cmd_generate(const RunConfig& cfg, std::ostream& log);

/// Median-of-reps timing plus FLOP estimates for baseline and pruned runs;
/// prints the per-step latency share table.
void cmd_bench(const RunConfig& cfg, std::ostream& log);

/// Radial power profile of an FVTM map as `radius,power` CSV.
void cmd_analyze(const std::filesystem::path& map_file, const std::filesystem::path& out_dir, std::ostream& log);

/// Baseline and pruned generation side by side, plus the final-map gap.
void cmd_compare(RunConfig cfg, std::ostream& log);

}  // namespace fastvar
