// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// gating criterion fails.
//
// FASTVAR_ACCEPT_REPS overrides the repetition count of the wall-clock
// measurement (default 5). The wall-clock figure is reported but never gates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fastvar/bench.hpp"
#include "fastvar/cli.hpp"
#include "fastvar/fvtm.hpp"
#include "fastvar/prune.hpp"
#include "fastvar/pyramid.hpp"
#include "fastvar/varnet.hpp"
#include "oracles.hpp"

using namespace fastvar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelConfig small_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.d = 16;
    cfg.heads = 4;
    cfg.d_ff = 32;
    cfg.vocab = 32;
    cfg.seed = seed;
    return cfg;
}

RunConfig toy_config() {
    RunConfig cfg = load_config(FASTVAR_TOY_CONFIG);
    cfg.out_dir = fs::temp_directory_path() / "fastvar_accept";
    return cfg;
}

// ------------------------------------------------------------------ criteria

Outcome oracle_suite() {
    const auto started = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1001);
    Outcome o;

    std::size_t select_cases = 0, select_bad = 0;
    std::uniform_int_distribution<std::size_t> side(1, 8), chans(1, 4);
    std::uniform_real_distribution<double> ratio(0.0, 0.999);
    for (; select_cases < 2000; ++select_cases) {
        TokenMap x = oracle::random_map(rng, side(rng), side(rng), chans(rng));
        if (select_cases % 4 == 0) {
            // coarse values force score ties
            for (Real& v : x.data()) v = std::round(v * 2) / 2;
        }
        const double r = ratio(rng);
        if (select_pivotal(x, r).decision.kept.indices() != oracle::brute_force_select(x, r)) ++select_bad;
    }

    double attn_worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const Model m = init_model(small_model(static_cast<std::uint64_t>(trial)));
        std::vector<TokenMap> inputs;
        for (std::size_t s : {1, 2, 3, 4}) inputs.push_back(oracle::random_map(rng, s, s, 16));
        const auto want = oracle::full_sequence_blocks(m, inputs);
        KVCache kv(m.config().depth);
        std::size_t offset = 0;
        for (const TokenMap& in : inputs) {
            const TokenMap got = forward_blocks(m, in, kv);
            for (std::size_t t = 0; t < got.tokens(); ++t)
                for (std::size_t c = 0; c < 16; ++c)
                    attn_worst = std::max(attn_worst, std::abs(got.token(t)[c] - want[offset + t][c]));
            offset += in.tokens();
        }
    }

    std::size_t mm_bad = 0;
    std::uniform_int_distribution<std::size_t> dim(1, 40);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        const FlatMatrix a = oracle::random_matrix(rng, m, k);
        const FlatMatrix b = oracle::random_matrix(rng, k, n);
        if (matmul(a, b).data() != oracle::triple_loop_matmul(a.data(), b.data(), m, k, n)) ++mm_bad;
    }

    double spec_worst = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const TokenMap x = oracle::random_map(rng, side(rng), side(rng), chans(rng));
        const SpectrumProfile p = spectrum_profile(x);
        const auto want = oracle::direct_dft_profile(x);
        double scale = 0;
        for (double v : want) scale = std::max(scale, std::abs(v));
        if (p.bins.size() != want.size()) {
            spec_worst = INFINITY;
            break;
        }
        for (std::size_t b = 0; b < want.size(); ++b)
            spec_worst = std::max(spec_worst, std::abs(p.bins[b] - want[b]) / std::max(scale, 1e-300));
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    o.pass = select_bad == 0 && attn_worst <= 1e-4 && mm_bad == 0 && spec_worst <= 1e-6 && secs < 60;
    o.detail = "select " + std::to_string(select_cases - select_bad) + "/" + std::to_string(select_cases) +
               " exact; attention max err " + fmt("%.3g", attn_worst) + "; matmul mismatches " +
               std::to_string(mm_bad) + "/200; spectrum max rel err " + fmt("%.3g", spec_worst) + "; " +
               fmt("%.1f", secs) + " s";
    return o;
}

Outcome ratio_zero_equivalence() {
    ScaleSchedule sched = ScaleSchedule::from_sides({1, 2, 3, 4, 6, 8, 12}, ResizeMode::Nearest);
    sched.texture_steps = 3;
    sched.prune_ratios = {0.0, 0.0, 0.0};
    std::size_t same = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Model m = init_model(small_model(seed + 100));
        const Seeds seeds{seed * 7 + 1, seed * 13 + 2};
        const GenerationResult a = generate(m, sched, seeds, Pruning::Off);
        const GenerationResult b = generate(m, sched, seeds, Pruning::On);
        bool ok = encode_fvtm(a.final_map) == encode_fvtm(b.final_map);
        for (std::size_t i = 0; i < a.metrics.steps.size(); ++i) {
            ok = ok && a.metrics.steps[i].forwarded_tokens == b.metrics.steps[i].forwarded_tokens &&
                 a.metrics.steps[i].kv_total == b.metrics.steps[i].kv_total &&
                 a.metrics.steps[i].est_flops == b.metrics.steps[i].est_flops;
            ok = ok && b.traces[i].decisions.empty();
        }
        if (ok) ++same;
    }
    return {same == 10, std::to_string(same) + "/10 seeds bit-identical"};
}

Outcome slot_law() {
    std::mt19937_64 rng(2002);
    std::uniform_int_distribution<std::size_t> side(1, 8);
    std::uniform_real_distribution<double> ratio(0.01, 0.99);
    const Model m = init_model(small_model(9));
    std::size_t ok = 0;
    constexpr std::size_t kCases = 1200;
    for (std::size_t i = 0; i < kCases; ++i) {
        const Extent cache_size{side(rng), side(rng)};
        const Extent target{cache_size.h + side(rng), cache_size.w + side(rng)};
        const ResizeMode mode = i % 2 == 0 ? ResizeMode::Nearest : ResizeMode::Bilinear;
        const SublayerKind kind = i % 3 == 0 ? SublayerKind::Attention : SublayerKind::Ffn;

        LayerCacheStore store(3);
        store.capture(3, 1, kind, oracle::random_map(rng, cache_size.h, cache_size.w, 16));
        const TokenMap x = layer_norm(oracle::random_map(rng, target.h, target.w, 16));
        const Selection sel = select_pivotal(x, ratio(rng));
        KVCache kv(2);
        const TokenMap fresh = kind == SublayerKind::Attention ? m.attention_forward(sel.kept_tokens, 1, kv)
                                                               : m.ffn_forward(sel.kept_tokens, 1);
        const TokenMap out = restore_cached(fresh, store, 1, kind, sel.decision, target, mode);
        const TokenMap up = resize(store.at(1, kind), target, mode);

        bool good = out.extent() == target;
        std::size_t j = 0;
        for (std::size_t t = 0; good && t < out.tokens(); ++t) {
            const bool kept = j < sel.decision.keep() && sel.decision.kept[j] == t;
            const auto got = out.token(t);
            const auto want = kept ? fresh.token(j) : up.token(t);
            good = std::equal(got.begin(), got.end(), want.begin());
            if (kept) ++j;
        }
        if (good && j == sel.decision.keep()) ++ok;
    }
    return {ok == kCases, std::to_string(ok) + "/" + std::to_string(kCases) + " instances bit-exact"};
}

Outcome token_arithmetic() {
    const RunConfig toy = toy_config();
    ScaleSchedule hart_tail = ScaleSchedule::from_sides({1, 2, 3, 4, 6, 9, 12, 16, 21, 27, 36, 48, 64}, toy.mode);
    hart_tail.texture_steps = 2;
    hart_tail = make_prune_schedule(hart_tail, {0.5, 0.75});
    const RunMetrics base_est = flop_estimate(toy.model, hart_tail, Pruning::Off);
    const RunMetrics est = flop_estimate(toy.model, hart_tail, Pruning::On);
    const std::size_t before = base_est.steps[11].forwarded_tokens + base_est.steps[12].forwarded_tokens;
    const std::size_t after = est.steps[11].forwarded_tokens + est.steps[12].forwarded_tokens;

    // The same ledger from an actual decode with a narrow model.
    const Model narrow = init_model(small_model(5));
    const GenerationResult run = generate(narrow, hart_tail, {1, 2}, Pruning::On);
    const std::size_t measured = run.metrics.steps[11].forwarded_tokens + run.metrics.steps[12].forwarded_tokens;

    const ScaleSchedule inf = toy.schedule();
    const RunMetrics inf_est = flop_estimate(toy.model, inf, Pruning::On);
    const GenerationResult inf_run = generate(narrow, inf, {1, 2}, Pruning::On);
    const std::size_t k = inf.steps();
    bool skip_ok = true;
    for (std::size_t s : {k - 1, k}) {
        const StepMetrics& e = inf_est.steps[s - 1];
        const StepMetrics& r = inf_run.metrics.steps[s - 1];
        skip_ok = skip_ok && e.skipped && r.skipped && e.est_flops == 0 && r.est_flops == 0 &&
                  e.forwarded_tokens == 0 && r.forwarded_tokens == 0 &&
                  e.kv_total == inf_est.steps[k - 3].kv_total && r.kv_total == inf_run.metrics.steps[k - 3].kv_total;
    }
    // The KV cache holds one entry per forwarded step only.
    skip_ok = skip_ok && inf_run.metrics.steps.back().kv_total == inf_run.metrics.steps[k - 3].kv_total;

    const bool pass = before == 6400 && after == 2176 && measured == 2176 && skip_ok;
    return {pass, "tail tokens " + std::to_string(before) + " -> " + std::to_string(after) + " (estimate), " +
                      std::to_string(measured) + " (decoded); Infinity-style last two steps skipped with zero KV and "
                      "zero FLOPs: " + (skip_ok ? "yes" : "no")};
}

Outcome flop_speedup_criterion() {
    const RunConfig toy = toy_config();
    const ScaleSchedule sched = toy.schedule();
    const RunMetrics base = flop_estimate(toy.model, sched, Pruning::Off);
    const RunMetrics pruned = flop_estimate(toy.model, sched, Pruning::On);
    const double ratio = *flop_speedup(base, pruned);

    std::size_t reps = 5;
    if (const char* env = std::getenv("FASTVAR_ACCEPT_REPS"); env != nullptr && *env != '\0') {
        reps = std::max<std::size_t>(1, std::strtoull(env, nullptr, 10));
    }
    const Model model = init_model(toy.model, sched.sizes);
    const RunMetrics wall_base = measure_run(model, sched, toy.seeds(), Pruning::Off, reps);
    const RunMetrics wall_pruned = measure_run(model, sched, toy.seeds(), Pruning::On, reps);
    const double wall = wall_speedup(wall_base, wall_pruned).value_or(0.0);
    const std::size_t n = wall_base.steps.size();
    const double tail_share = 100.0 *
                              static_cast<double>(wall_base.steps[n - 1].wall_ns + wall_base.steps[n - 2].wall_ns) /
                              static_cast<double>(wall_base.totals().wall_ns);

    return {ratio >= 2.0, "estimated-FLOP ratio " + fmt("%.3f", ratio) + " (need >= 2.0); wall-clock " +
                              fmt("%.2f", wall) + "x median-of-" + std::to_string(reps) + " (soft, target 1.3x: " +
                              (wall >= 1.3 ? "met" : "not met") + ", not gating); baseline " +
                              fmt("%.1f", static_cast<double>(wall_base.totals().wall_ns) / 1e9) +
                              " s, last two steps " + fmt("%.1f", tail_share) + "% of baseline time"};
}

Outcome accumulation_equivalence() {
    std::mt19937_64 rng(3003);
    const ScaleSchedule nearest = ScaleSchedule::from_sides({1, 2, 4, 8}, ResizeMode::Nearest);
    std::size_t exact = 0;
    constexpr std::size_t kCases = 150;
    for (std::size_t i = 0; i < kCases; ++i) {
        ResidualPyramid p;
        for (const Extent& e : nearest.sizes) p.residuals.push_back(oracle::random_map(rng, e.h, e.w, 1 + i % 4));
        bool ok = true;
        for (std::size_t k = 1; k <= nearest.steps(); ++k)
            ok = ok && accumulate_recursive(p, nearest, k) == accumulate_cumulative(p, nearest, k);
        if (ok) ++exact;
    }
    const ScaleSchedule bilinear = ScaleSchedule::from_sides({1, 2, 4, 8}, ResizeMode::Bilinear);
    double gap = 0, mean = 0;
    for (std::size_t i = 0; i < kCases; ++i) {
        ResidualPyramid p;
        for (const Extent& e : bilinear.sizes) p.residuals.push_back(oracle::random_map(rng, e.h, e.w, 2));
        const AccumulationGap g = accumulation_gap(p, bilinear, bilinear.steps());
        gap = std::max(gap, g.max_abs);
        mean += g.mean_abs / kCases;
    }
    return {exact == kCases && std::isfinite(gap),
            "nearest " + std::to_string(exact) + "/" + std::to_string(kCases) +
                " pyramids bit-exact; bilinear gap max " + fmt("%.4g", gap) + ", mean " + fmt("%.4g", mean) +
                " (reported, finite)"};
}

Outcome reconstruction() {
    std::mt19937_64 rng(4004);
    double worst = 0;
    std::size_t cases = 0;
    for (ResizeMode mode : {ResizeMode::Nearest, ResizeMode::Bilinear}) {
        for (const auto& sides : {std::vector<std::size_t>{1, 2, 4, 8}, std::vector<std::size_t>{1, 2, 3, 4, 6, 9},
                                  std::vector<std::size_t>{2, 3, 5, 7}}) {
            const ScaleSchedule s = ScaleSchedule::from_sides(sides, mode);
            for (int trial = 0; trial < 20; ++trial, ++cases) {
                const Extent last = s.size_at(s.steps());
                const TokenMap target = TokenMap(last.h, last.w, 1 + trial % 4, oracle::random_values(rng, last.area() * (1 + trial % 4), -4.0, 4.0));
                const TokenMap back = accumulate_recursive(decompose(target, s), s, s.steps());
                for (std::size_t i = 0; i < target.data().size(); ++i)
                    worst = std::max(worst, static_cast<double>(std::abs(back.data()[i] - target.data()[i])));
            }
        }
    }
    return {worst <= 1e-5 && cases >= 100,
            std::to_string(cases) + " targets, both modes, max abs error " + fmt("%.3g", worst)};
}

Outcome determinism() {
    RunConfig cfg = RunConfig::defaults();
    cfg.model = small_model(11);
    cfg.ratios = std::vector<double>{0.3, 0.5, 1.0};
    cfg.compare = true;
    cfg.formats = {ReportFormat::Csv, ReportFormat::Json};
    const fs::path root = fs::temp_directory_path() / "fastvar_accept_det";
    fs::remove_all(root);
    std::ostringstream log;
    for (const char* run : {"a", "b"}) {
        cfg.out_dir = root / run;
        cmd_generate(cfg, log);
    }
    // Timing columns (wall_ns and the wall speedup) are the only allowed differences.
    const auto strip_wall = [](const std::string& csv) {
        std::istringstream in(csv);
        std::string line, out;
        while (std::getline(in, line)) {
            std::vector<std::string> cols;
            std::stringstream ls(line);
            std::string c;
            while (std::getline(ls, c, ',')) cols.push_back(c);
            if (cols.size() > 6) cols[6].clear();
            for (const auto& col : cols) out += col + ",";
            out += "\n";
        }
        return out;
    };
    std::size_t compared = 0, differing = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        const std::string name = entry.path().filename().string();
        const std::string ext = entry.path().extension().string();
        std::string a = slurp(entry.path()), b = slurp(root / "b" / name);
        if (ext == ".json") continue;
        if (ext == ".csv") {
            a = strip_wall(a);
            b = strip_wall(b);
        }
        ++compared;
        if (a != b) ++differing;
    }
    return {compared >= 6 && differing == 0,
            std::to_string(compared - differing) + "/" + std::to_string(compared) +
                " artifacts identical (maps, masks, metrics without wall time)"};
}

Outcome mask_round_trip() {
    std::mt19937_64 rng(5005);
    std::uniform_int_distribution<std::size_t> side(1, 64);
    std::uniform_real_distribution<double> ratio(0.0, 0.999);
    const fs::path path = fs::temp_directory_path() / "fastvar_accept_mask.pgm";
    std::size_t ok = 0;
    constexpr std::size_t kCases = 200;
    for (std::size_t i = 0; i < kCases; ++i) {
        const Extent e{side(rng), side(rng)};
        const std::size_t total = e.area();
        const std::size_t keep = keep_count(total, ratio(rng));
        std::vector<std::size_t> all(total);
        for (std::size_t t = 0; t < total; ++t) all[t] = t;
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(keep);
        std::sort(all.begin(), all.end());
        const PruneDecision d{IndexList(all, total), 0.0, total};
        export_mask(d, e, path);
        if (read_mask(path) == d.kept) ++ok;
    }
    return {ok == kCases, std::to_string(ok) + "/" + std::to_string(kCases) + " decisions recovered exactly"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"oracle suite", oracle_suite},
        {"ratio-0 equivalence", ratio_zero_equivalence},
        {"restoration slot law", slot_law},
        {"token-reduction arithmetic", token_arithmetic},
        {"FLOP-model speedup", flop_speedup_criterion},
        {"recursive/cumulative accumulation equivalence", accumulation_equivalence},
        {"pyramid reconstruction", reconstruction},
        {"determinism", determinism},
        {"mask export round-trip", mask_round_trip},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
