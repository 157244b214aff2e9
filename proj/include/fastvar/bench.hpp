#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fastvar/metrics.hpp"
#include "fastvar/numkern.hpp"
#include "fastvar/prune.hpp"
#include "fastvar/pyramid.hpp"
#include "fastvar/varnet.hpp"

namespace fastvar {

/// Analytic cost of a run; wall_ns stays zero. Token and KV columns follow
/// the same keep-count arithmetic as decode_scale_step.
RunMetrics flop_estimate(const ModelConfig& cfg, const ScaleSchedule& sched, Pruning pruning);

/// Per-step median wall time over `runs` (the upper median for an even
/// count); every other column is taken from the first run.
RunMetrics aggregate_median(const std::vector<RunMetrics>& runs);

/// Runs generate `repetitions` times and reports the per-step median wall
/// time. Non-timing columns come from the first run.
RunMetrics measure_run(const Model& model, const ScaleSchedule& sched, const Seeds& seeds, Pruning pruning,
                       std::size_t repetitions = 5);

struct SpectrumProfile {
    /// bins[r]: channel-averaged power of frequencies at rounded radius r.
    std::vector<double> bins;
    double dc_power = 0;
    double total_power = 0;
};

/// Power |X(u,v)|^2 / (h*w) of each channel's 2D DFT, averaged over
/// channels and binned by round(sqrt(u^2 + v^2)) with u in [-h/2, h/2),
/// v in [-w/2, w/2). The total equals the mean over channels of the sum of
/// squared values.
SpectrumProfile spectrum_profile(const TokenMap& x);

/// Binary PGM (P5, maxval 255) with kept tokens 255 and pruned tokens 0.
void export_mask(const PruneDecision& decision, Extent shape, const std::filesystem::path& path);

/// Reads a mask written by export_mask back into an index set.
IndexList read_mask(const std::filesystem::path& path);

enum class ReportFormat { Csv, Json };

inline constexpr const char* kMetricsCsvHeader = "step,h,w,forwarded_tokens,kv_total,est_flops,wall_ns,skipped";

/// Per-step rows, a `total` row and, given a baseline, a `speedup` row
/// carrying baseline/run ratios in the est_flops and wall_ns columns.
std::string format_metrics(const RunMetrics& metrics, const RunMetrics* baseline, ReportFormat format);

void metrics_report(const RunMetrics& metrics, const RunMetrics* baseline, ReportFormat format,
                    const std::filesystem::path& path);

/// Fixed-precision rendering used by every report ("%.6f").
std::string format_ratio(double value);

}  // namespace fastvar
