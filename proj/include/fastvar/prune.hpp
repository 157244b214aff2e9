#pragma once

// Cached token pruning: pivotal token selection (PTS), per-sublayer output
// caching, cached token restoration (CTR) and progressive ratio schedules.

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "fastvar/numkern.hpp"
#include "fastvar/pyramid.hpp"

namespace fastvar {

enum class SublayerKind { Attention, Ffn };

const char* to_string(SublayerKind kind) noexcept;

/// Tokens kept after pruning `ratio` of `total`: total - round_half_up(ratio * total),
/// never below one for ratio < 1.
std::size_t keep_count(std::size_t total, double ratio);

struct PruneDecision {
    IndexList kept;
    double ratio = 0;
    std::size_t total = 0;

    std::size_t keep() const noexcept { return kept.size(); }
};

/// Per-token L2 distance to the spatial mean (the direct-current component).
std::vector<Real> pivotal_score(const TokenMap& x);

struct Selection {
    TokenMap kept_tokens;  // (1, keep, d)
    PruneDecision decision;
};

/// Keeps the highest-scoring tokens. `ratio` must lie in [0, 1); a ratio of
/// 1.0 is the whole-step skip and never reaches token selection.
Selection select_pivotal(const TokenMap& x, double ratio);

/// Per-(layer, sublayer) outputs captured once at the caching step.
class LayerCacheStore {
public:
    explicit LayerCacheStore(std::size_t step) : step_(step) {}

    std::size_t step() const noexcept { return step_; }
    bool contains(std::size_t layer, SublayerKind kind) const { return entries_.contains({layer, kind}); }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Write-once; `current_step` must equal the caching step.
    void capture(std::size_t current_step, std::size_t layer, SublayerKind kind, TokenMap y);

    /// Throws StateError if the entry was never captured.
    const TokenMap& at(std::size_t layer, SublayerKind kind) const;

private:
    std::size_t step_;
    std::map<std::pair<std::size_t, SublayerKind>, TokenMap> entries_;
};

/// Upsamples the cached output to `target` and scatters the fresh kept-token
/// outputs over it.
TokenMap restore_cached(const TokenMap& kept_outputs, const LayerCacheStore& store, std::size_t layer,
                        SublayerKind kind, const PruneDecision& decision, Extent target, ResizeMode mode);

struct PruneScheduleEntry {
    std::size_t step = 0;
    double ratio = 0;
};

/// Attaches one ratio per texture step (K-N+1..K). Ratios must be
/// non-decreasing and a 1.0 may only be followed by 1.0.
ScaleSchedule make_prune_schedule(ScaleSchedule sched, const std::vector<double>& ratios);

std::vector<PruneScheduleEntry> prune_entries(const ScaleSchedule& sched);

}  // namespace fastvar
