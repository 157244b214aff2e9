#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace fastvar {

struct StepMetrics {
    std::size_t step = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t forwarded_tokens = 0;
    /// Per-layer KV cache token count after this step.
    std::size_t kv_total = 0;
    std::uint64_t est_flops = 0;
    std::uint64_t wall_ns = 0;
    bool skipped = false;

    friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct MetricTotals {
    std::size_t forwarded_tokens = 0;
    std::size_t kv_total = 0;
    std::uint64_t est_flops = 0;
    std::uint64_t wall_ns = 0;
    std::size_t skipped_steps = 0;
};

struct RunMetrics {
    std::vector<StepMetrics> steps;

    MetricTotals totals() const {
        MetricTotals t;
        for (const StepMetrics& s : steps) {
            t.forwarded_tokens += s.forwarded_tokens;
            t.kv_total += s.kv_total;
            t.est_flops += s.est_flops;
            t.wall_ns += s.wall_ns;
            t.skipped_steps += s.skipped ? 1 : 0;
        }
        return t;
    }

    friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

/// baseline / run on total wall time; nullopt when the run took no time.
inline std::optional<double> wall_speedup(const RunMetrics& baseline, const RunMetrics& run) {
    const auto denom = run.totals().wall_ns;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(baseline.totals().wall_ns) / static_cast<double>(denom);
}

inline std::optional<double> flop_speedup(const RunMetrics& baseline, const RunMetrics& run) {
    const auto denom = run.totals().est_flops;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(baseline.totals().est_flops) / static_cast<double>(denom);
}

/// FLOPs of one forwarded step across all layers, multiply-accumulate = 2:
/// Q/K/V/O projections 8*q*d^2, attention 4*q*kv*d, FFN 4*q*d*d_ff.
/// `kv` counts every key the queries see, including the current step's own.
inline std::uint64_t step_flops(std::size_t depth, std::size_t d, std::size_t d_ff, std::size_t q, std::size_t kv) {
    const std::uint64_t per_layer = 8ULL * q * d * d + 4ULL * q * kv * d + 4ULL * q * d * d_ff;
    return per_layer * depth;
}

}  // namespace fastvar
