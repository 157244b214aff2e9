#include "fastvar/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fastvar {

namespace {

void check_upto(const ScaleSchedule& sched, std::size_t upto) {
    if (upto < 1 || upto > sched.steps()) {
        throw ArgumentError("step " + std::to_string(upto) + " outside 1.." + std::to_string(sched.steps()));
    }
}

void check_pyramid(const ResidualPyramid& p, const ScaleSchedule& sched) {
    if (p.residuals.size() != sched.steps()) {
        throw ArgumentError("pyramid has " + std::to_string(p.residuals.size()) + " residuals, schedule has " +
                            std::to_string(sched.steps()) + " steps");
    }
    const std::size_t d = p.residuals.front().d();
    for (std::size_t k = 1; k <= sched.steps(); ++k) {
        const TokenMap& f = p.residuals[k - 1];
        if (f.extent() != sched.size_at(k) || f.d() != d) {
            throw ArgumentError("residual " + std::to_string(k) + " is " + std::to_string(f.h()) + "x" +
                                std::to_string(f.w()) + "x" + std::to_string(f.d()) + ", expected " +
                                std::to_string(sched.size_at(k).h) + "x" + std::to_string(sched.size_at(k).w) +
                                "x" + std::to_string(d));
        }
    }
}

// Residual r with base + r == want in float arithmetic, searching a few ulps
// around want - base. Falls back to the plain difference when none exists.
Real exact_residual(Real base, Real want) {
    const Real plain = want - base;
    if (base + plain == want) return plain;
    Real up = plain;
    Real down = plain;
    for (int step = 0; step < 8; ++step) {
        up = std::nextafter(up, std::numeric_limits<Real>::infinity());
        if (base + up == want) return up;
        down = std::nextafter(down, -std::numeric_limits<Real>::infinity());
        if (base + down == want) return down;
    }
    return plain;
}

}  // namespace

ScaleSchedule ScaleSchedule::from_sides(const std::vector<std::size_t>& sides, ResizeMode mode) {
    ScaleSchedule s;
    s.sizes.reserve(sides.size());
    for (std::size_t side : sides) s.sizes.push_back({side, side});
    s.mode = mode;
    return s;
}

double ScaleSchedule::ratio_at(std::size_t step) const {
    if (step < 1 || step > steps()) throw ArgumentError("step " + std::to_string(step) + " out of range");
    if (!is_texture_step(step) || prune_ratios.empty()) return 0.0;
    return prune_ratios.at(step - structure_steps() - 1);
}

bool ScaleSchedule::has_pruning() const noexcept {
    return std::any_of(prune_ratios.begin(), prune_ratios.end(), [](double r) { return r > 0.0; });
}

void ScaleSchedule::validate() const {
    const std::size_t k_total = steps();
    if (k_total == 0) throw ArgumentError("schedule has no scale steps");
    for (std::size_t i = 0; i < k_total; ++i) {
        if (sizes[i].h == 0 || sizes[i].w == 0) throw ArgumentError("scale sizes must be >= 1");
        if (i > 0 && sizes[i].area() <= sizes[i - 1].area()) {
            throw ArgumentError("scale sizes must be strictly increasing in h*w (step " + std::to_string(i + 1) +
                                ")");
        }
    }
    if (texture_steps >= k_total) {
        throw ArgumentError("texture stage length N = " + std::to_string(texture_steps) + " must be < K = " +
                            std::to_string(k_total));
    }
    if (!prune_ratios.empty() && prune_ratios.size() != texture_steps) {
        throw ArgumentError("expected " + std::to_string(texture_steps) + " pruning ratios, got " +
                            std::to_string(prune_ratios.size()));
    }
    if (texture_steps > 0 && cache_step != 0 && cache_step > structure_steps()) {
        throw ArgumentError("cache step " + std::to_string(cache_step) + " must lie in 1.." +
                            std::to_string(structure_steps()));
    }
    bool seen_skip = false;
    for (double r : prune_ratios) {
        if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("pruning ratio " + std::to_string(r) + " outside [0, 1]");
        if (seen_skip && r < 1.0) throw ArgumentError("a skipped step (ratio 1.0) cannot be followed by ratio < 1.0");
        seen_skip = seen_skip || r >= 1.0;
    }
}

TokenMap accumulate_recursive(const ResidualPyramid& p, const ScaleSchedule& sched, std::size_t upto) {
    check_upto(sched, upto);
    check_pyramid(p, sched);
    TokenMap acc = p.residuals[0];
    for (std::size_t k = 2; k <= upto; ++k) {
        acc = resize(acc, sched.size_at(k), sched.mode);
        acc += p.residuals[k - 1];
    }
    return acc;
}

TokenMap accumulate_cumulative(const ResidualPyramid& p, const ScaleSchedule& sched, std::size_t upto) {
    check_upto(sched, upto);
    check_pyramid(p, sched);
    const Extent target = sched.size_at(upto);
    TokenMap acc = resize(p.residuals[0], target, sched.mode);
    for (std::size_t i = 2; i <= upto; ++i) acc += resize(p.residuals[i - 1], target, sched.mode);
    return acc;
}

ResidualPyramid decompose(const TokenMap& target, const ScaleSchedule& sched) {
    if (sched.steps() == 0) throw ArgumentError("schedule has no scale steps");
    const Extent last = sched.size_at(sched.steps());
    if (target.extent() != last) {
        throw ArgumentError("target is " + std::to_string(target.h()) + "x" + std::to_string(target.w()) +
                            ", final scale is " + std::to_string(last.h) + "x" + std::to_string(last.w));
    }
    ResidualPyramid p;
    p.residuals.reserve(sched.steps());
    p.residuals.push_back(resize(target, sched.size_at(1), sched.mode));
    TokenMap acc = p.residuals.front();
    for (std::size_t k = 2; k <= sched.steps(); ++k) {
        const TokenMap want = resize(target, sched.size_at(k), sched.mode);
        TokenMap base = resize(acc, sched.size_at(k), sched.mode);
        TokenMap f(want.h(), want.w(), want.d());
        for (std::size_t i = 0; i < f.data().size(); ++i) {
            f.data()[i] = exact_residual(base.data()[i], want.data()[i]);
        }
        base += f;
        acc = std::move(base);
        p.residuals.push_back(std::move(f));
    }
    return p;
}

AccumulationGap accumulation_gap(const ResidualPyramid& p, const ScaleSchedule& sched, std::size_t upto) {
    const TokenMap a = accumulate_recursive(p, sched, upto);
    const TokenMap b = accumulate_cumulative(p, sched, upto);
    AccumulationGap gap;
    double sum = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double diff = std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
        gap.max_abs = std::max(gap.max_abs, diff);
        sum += diff;
    }
    gap.mean_abs = sum / static_cast<double>(a.data().size());
    return gap;
}

}  // namespace fastvar
