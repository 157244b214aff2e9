#pragma once

#include <cstddef>
#include <vector>

#include "fastvar/numkern.hpp"

namespace fastvar {

/// Scale steps are numbered 1..K throughout the public API.
///
/// The last `texture_steps` (N) steps form the texture stage where pruning
/// may apply; steps 1..K-N are the structure stage and always run in full.
/// N = 0 describes a plain schedule with no texture stage.
struct ScaleSchedule {
    std::vector<Extent> sizes;
    std::size_t texture_steps = 0;
    /// One ratio per texture step, each in [0, 1].
    std::vector<double> prune_ratios;
    /// Step whose sublayer outputs are cached for restoration; 0 selects K-N.
    std::size_t cache_step = 0;
    ResizeMode mode = ResizeMode::Nearest;

    /// Square sides, no texture stage.
    static ScaleSchedule from_sides(const std::vector<std::size_t>& sides, ResizeMode mode);

    std::size_t steps() const noexcept { return sizes.size(); }
    Extent size_at(std::size_t step) const { return sizes.at(step - 1); }
    std::size_t structure_steps() const noexcept { return sizes.size() - texture_steps; }
    std::size_t effective_cache_step() const noexcept { return cache_step == 0 ? structure_steps() : cache_step; }
    bool is_texture_step(std::size_t step) const noexcept { return step > structure_steps(); }
    /// Pruning ratio of `step`; 0 for structure-stage steps.
    double ratio_at(std::size_t step) const;
    /// A ratio of exactly 1.0 skips the whole step.
    bool is_skipped(std::size_t step) const { return ratio_at(step) >= 1.0; }
    bool has_pruning() const noexcept;

    /// Throws ArgumentError describing the first violated invariant.
    void validate() const;
};

/// Residuals f_1..f_K, f_k shaped like schedule step k.
struct ResidualPyramid {
    std::vector<TokenMap> residuals;
};

/// r_1 = f_1; r_k = resize(r_{k-1}, size_k) + f_k. The canonical inference form.
TokenMap accumulate_recursive(const ResidualPyramid& p, const ScaleSchedule& sched, std::size_t upto);

/// r_k = sum_i resize(f_i, size_k). Matches the recursive form only when the
/// resize family composes (nearest on nested integer-factor grids).
TokenMap accumulate_cumulative(const ResidualPyramid& p, const ScaleSchedule& sched, std::size_t upto);

/// Greedy residual decomposition of a full-resolution target:
/// f_k = resize(target, size_k) - resize(r_{k-1}, size_k).
ResidualPyramid decompose(const TokenMap& target, const ScaleSchedule& sched);

struct AccumulationGap {
    double max_abs = 0;
    double mean_abs = 0;
};

/// Element-wise gap between the recursive and cumulative forms at `upto`.
AccumulationGap accumulation_gap(const ResidualPyramid& p, const ScaleSchedule& sched, std::size_t upto);

}  // namespace fastvar
