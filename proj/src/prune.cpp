#include "fastvar/prune.hpp"

#include <cmath>
#include <string>

namespace fastvar {

namespace {

// Squared distance of every token to the per-channel spatial mean. Ordering
// matches the L2 score, so selection never needs the square root.
std::vector<Real> squared_deviation(const TokenMap& x) {
    const std::vector<Real> mean = global_avg_pool(x);
    std::vector<Real> sq(x.tokens());
    for (std::size_t t = 0; t < x.tokens(); ++t) {
        const auto tok = x.token(t);
        Real acc = 0;
        for (std::size_t c = 0; c < x.d(); ++c) {
            const Real diff = tok[c] - mean[c];
            acc += diff * diff;
        }
        sq[t] = acc;
    }
    return sq;
}

}  // namespace

const char* to_string(SublayerKind kind) noexcept { return kind == SublayerKind::Attention ? "attention" : "ffn"; }

std::size_t keep_count(std::size_t total, double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("pruning ratio " + std::to_string(ratio) + " outside [0, 1]");
    const auto pruned = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 0.5));
    std::size_t keep = total - std::min(pruned, total);
    if (ratio < 1.0 && keep == 0 && total > 0) keep = 1;
    return keep;
}

std::vector<Real> pivotal_score(const TokenMap& x) {
    std::vector<Real> s = squared_deviation(x);
    for (Real& v : s) v = std::sqrt(v);
    return s;
}

Selection select_pivotal(const TokenMap& x, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ArgumentError("select_pivotal: ratio " + std::to_string(ratio) +
                            " outside [0, 1); a ratio of 1.0 skips the step instead");
    }
    const std::size_t total = x.tokens();
    const std::size_t keep = keep_count(total, ratio);
    PruneDecision decision;
    decision.ratio = ratio;
    decision.total = total;
    decision.kept = keep == total ? IndexList::all(total) : topk_indices(squared_deviation(x), keep);
    TokenMap kept = gather_rows(x, decision.kept);
    return {std::move(kept), std::move(decision)};
}

void LayerCacheStore::capture(std::size_t current_step, std::size_t layer, SublayerKind kind, TokenMap y) {
    if (current_step != step_) {
        throw StateError("cache write at step " + std::to_string(current_step) + ", caching step is " +
                         std::to_string(step_));
    }
    if (!entries_.empty()) {
        const Extent shape = entries_.begin()->second.extent();
        if (y.extent() != shape) throw ArgumentError("cache entry shape differs from the caching step's shape");
    }
    const auto [it, inserted] = entries_.emplace(std::pair{layer, kind}, std::move(y));
    if (!inserted) {
        throw StateError("cache entry for layer " + std::to_string(layer) + " " + to_string(kind) +
                         " already written");
    }
}

const TokenMap& LayerCacheStore::at(std::size_t layer, SublayerKind kind) const {
    const auto it = entries_.find({layer, kind});
    if (it == entries_.end()) {
        throw StateError("no cached output for layer " + std::to_string(layer) + " " + to_string(kind) +
                         " (caching step " + std::to_string(step_) + " not yet run)");
    }
    return it->second;
}

TokenMap restore_cached(const TokenMap& kept_outputs, const LayerCacheStore& store, std::size_t layer,
                        SublayerKind kind, const PruneDecision& decision, Extent target, ResizeMode mode) {
    if (decision.kept.capacity() != target.area()) {
        throw ArgumentError("restore_cached: decision covers " + std::to_string(decision.kept.capacity()) +
                            " tokens, target has " + std::to_string(target.area()));
    }
    const TokenMap& cached = store.at(layer, kind);
    if (cached.d() != kept_outputs.d()) throw ArgumentError("restore_cached: channel dimension mismatch");
    const TokenMap base = resize(cached, target, mode);
    return scatter_rows(base, decision.kept, kept_outputs);
}

ScaleSchedule make_prune_schedule(ScaleSchedule sched, const std::vector<double>& ratios) {
    if (ratios.size() != sched.texture_steps) {
        throw ArgumentError("expected " + std::to_string(sched.texture_steps) + " pruning ratios (one per texture step), got " +
                            std::to_string(ratios.size()));
    }
    for (std::size_t j = 1; j < ratios.size(); ++j) {
        if (ratios[j] < ratios[j - 1]) {
            throw ArgumentError("pruning ratios must be non-decreasing across the texture stage");
        }
    }
    sched.prune_ratios = ratios;
    sched.validate();
    return sched;
}

std::vector<PruneScheduleEntry> prune_entries(const ScaleSchedule& sched) {
    std::vector<PruneScheduleEntry> out;
    for (std::size_t k = sched.structure_steps() + 1; k <= sched.steps(); ++k) {
        out.push_back({k, sched.ratio_at(k)});
    }
    return out;
}

}  // namespace fastvar
