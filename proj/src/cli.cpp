#include "fastvar/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "fastvar/fvtm.hpp"

namespace fastvar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    if (!obj.is_object()) throw ArgumentError("config: '" + where + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ArgumentError("config: unknown key '" + where + "." + key + "'");
        }
    }
}

std::uint64_t get_unsigned(const json& v, const std::string& name) {
    if (!v.is_number_unsigned()) throw ArgumentError("config: '" + name + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

double get_number(const json& v, const std::string& name) {
    if (!v.is_number()) throw ArgumentError("config: '" + name + "' must be a number");
    return v.get<double>();
}

ReportFormat parse_format(const std::string& name) {
    if (name == "csv") return ReportFormat::Csv;
    if (name == "json") return ReportFormat::Json;
    throw ArgumentError("unknown report format '" + name + "' (expected csv|json)");
}

const char* extension(ReportFormat f) { return f == ReportFormat::Csv ? ".csv" : ".json"; }

void write_metrics(const RunConfig& cfg, const std::string& stem, const RunMetrics& metrics,
                   const RunMetrics* baseline, std::ostream& log) {
    for (ReportFormat f : cfg.formats) {
        const fs::path path = cfg.out_dir / (stem + extension(f));
        metrics_report(metrics, baseline, f, path);
        log << "wrote " << path.string() << '\n';
    }
}

void write_masks(const RunConfig& cfg, const ScaleSchedule& sched, const GenerationResult& run, std::ostream& log) {
    if (!cfg.masks) return;
    for (const StepTrace& t : run.traces) {
        if (t.decisions.empty()) continue;
        const fs::path path = cfg.out_dir / ("mask_step" + std::to_string(t.step) + ".pgm");
        export_mask(t.decisions.front(), sched.size_at(t.step), path);
        log << "wrote " << path.string() << '\n';
    }
}

struct GenerationRuns {
    ScaleSchedule schedule;
    std::optional<GenerationResult> baseline;
    std::optional<GenerationResult> pruned;
};

GenerationRuns run_generation(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    GenerationRuns runs{cfg.schedule(), std::nullopt, std::nullopt};
    const ScaleSchedule& sched = runs.schedule;
    fs::create_directories(cfg.out_dir);
    const Model model = init_model(cfg.model, sched.sizes);

    if (!cfg.pruning_enabled() || cfg.compare) {
        runs.baseline = generate(model, sched, cfg.seeds(), Pruning::Off);
    }
    if (cfg.pruning_enabled()) {
        runs.pruned = generate(model, sched, cfg.seeds(), Pruning::On);
    }

    if (runs.baseline) {
        write_metrics(cfg, "baseline", runs.baseline->metrics, nullptr, log);
        const fs::path map_path = cfg.out_dir / (runs.pruned ? "baseline.fvtm" : "final.fvtm");
        write_fvtm(runs.baseline->final_map, map_path);
        log << "wrote " << map_path.string() << '\n';
    }
    if (runs.pruned) {
        const RunMetrics* base = runs.baseline ? &runs.baseline->metrics : nullptr;
        write_metrics(cfg, "pruned", runs.pruned->metrics, base, log);
        write_fvtm(runs.pruned->final_map, cfg.out_dir / "final.fvtm");
        log << "wrote " << (cfg.out_dir / "final.fvtm").string() << '\n';
        write_masks(cfg, sched, *runs.pruned, log);
    }
    if (runs.baseline && runs.pruned) {
        const auto wall = wall_speedup(runs.baseline->metrics, runs.pruned->metrics);
        const auto flops = flop_speedup(runs.baseline->metrics, runs.pruned->metrics);
        log << "speedup: " << (wall ? format_ratio(*wall) : "n/a") << '\n';
        log << "flop_speedup: " << (flops ? format_ratio(*flops) : "n/a") << '\n';
    }
    return runs;
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    cfg.model = ModelConfig{};
    for (std::size_t side : {1, 2, 3, 4, 6, 8, 12, 16}) cfg.sizes.push_back({side, side});
    if (const char* env = std::getenv("FASTVAR_OUT"); env != nullptr && *env != '\0') cfg.out_dir = env;
    return cfg;
}

ScaleSchedule RunConfig::schedule() const {
    ScaleSchedule s;
    s.sizes = sizes;
    for (std::size_t side : extend_scales) s.sizes.push_back({side, side});
    s.mode = mode;
    const std::size_t extra = extend_scales.size();

    if (ratios) {
        if (ratios->empty()) throw ArgumentError("ratio list must not be empty");
        const std::size_t n = ratios->size();
        if (n_prune && *n_prune != n) {
            throw ArgumentError("--n-prune " + std::to_string(*n_prune) + " disagrees with " + std::to_string(n) +
                                " ratios");
        }
        if (n >= sizes.size()) {
            throw ArgumentError(std::to_string(n) + " pruned steps leave no structure stage in a " +
                                std::to_string(sizes.size()) + "-step schedule");
        }
        std::vector<double> all = *ratios;
        all.insert(all.end(), extra, ratios->back());
        s.texture_steps = n + extra;
        s.cache_step = cache_step != 0 ? cache_step : sizes.size() - n;
        return make_prune_schedule(std::move(s), all);
    }
    if (n_prune && *n_prune > 0) {
        s.texture_steps = *n_prune + extra;
        s.cache_step = cache_step != 0 ? cache_step : sizes.size() - std::min(*n_prune, sizes.size());
    }
    s.validate();
    return s;
}

void RunConfig::validate() const {
    model.validate();
    (void)schedule();
    if (reps == 0) throw ArgumentError("reps must be >= 1");
    if (formats.empty()) throw ArgumentError("at least one output format is required");
}

RunConfig parse_config(const std::string& json_text, RunConfig base) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ArgumentError(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(doc, {"model", "schedule", "seeds", "output", "bench"}, "");
    RunConfig cfg = std::move(base);

    if (doc.contains("model")) {
        const json& m = doc["model"];
        reject_unknown(m, {"depth", "d", "heads", "d_ff", "vocab", "temperature"}, "model");
        if (m.contains("depth")) cfg.model.depth = get_unsigned(m["depth"], "model.depth");
        if (m.contains("d")) cfg.model.d = get_unsigned(m["d"], "model.d");
        if (m.contains("heads")) cfg.model.heads = get_unsigned(m["heads"], "model.heads");
        if (m.contains("d_ff")) cfg.model.d_ff = get_unsigned(m["d_ff"], "model.d_ff");
        if (m.contains("vocab")) cfg.model.vocab = get_unsigned(m["vocab"], "model.vocab");
        if (m.contains("temperature")) cfg.model.temperature = get_number(m["temperature"], "model.temperature");
    }
    if (doc.contains("schedule")) {
        const json& s = doc["schedule"];
        reject_unknown(s, {"sides", "sizes", "n_prune", "ratios", "cache_step", "mode", "extend_scales"}, "schedule");
        if (s.contains("sides") && s.contains("sizes")) throw ArgumentError("config: give either sides or sizes");
        if (s.contains("sides")) {
            cfg.sizes.clear();
            for (const json& v : s["sides"]) {
                const auto side = get_unsigned(v, "schedule.sides");
                cfg.sizes.push_back({side, side});
            }
        }
        if (s.contains("sizes")) {
            cfg.sizes.clear();
            for (const json& v : s["sizes"]) {
                if (!v.is_array() || v.size() != 2) throw ArgumentError("config: schedule.sizes entries are [h, w]");
                cfg.sizes.push_back({get_unsigned(v[0], "schedule.sizes"), get_unsigned(v[1], "schedule.sizes")});
            }
        }
        if (s.contains("n_prune")) cfg.n_prune = get_unsigned(s["n_prune"], "schedule.n_prune");
        if (s.contains("ratios")) {
            if (s["ratios"].is_null()) {
                cfg.ratios.reset();
            } else {
                std::vector<double> r;
                for (const json& v : s["ratios"]) r.push_back(get_number(v, "schedule.ratios"));
                cfg.ratios = std::move(r);
            }
        }
        if (s.contains("cache_step")) {
            cfg.cache_step = s["cache_step"].is_null() ? 0 : get_unsigned(s["cache_step"], "schedule.cache_step");
        }
        if (s.contains("mode")) cfg.mode = parse_resize_mode(s["mode"].get<std::string>());
        if (s.contains("extend_scales")) {
            cfg.extend_scales.clear();
            for (const json& v : s["extend_scales"]) cfg.extend_scales.push_back(get_unsigned(v, "schedule.extend_scales"));
        }
    }
    if (doc.contains("seeds")) {
        const json& s = doc["seeds"];
        reject_unknown(s, {"weights", "condition", "sampling"}, "seeds");
        if (s.contains("weights")) cfg.model.seed = get_unsigned(s["weights"], "seeds.weights");
        if (s.contains("condition")) cfg.seed_condition = get_unsigned(s["condition"], "seeds.condition");
        if (s.contains("sampling")) cfg.seed_sampling = get_unsigned(s["sampling"], "seeds.sampling");
    }
    if (doc.contains("output")) {
        const json& o = doc["output"];
        reject_unknown(o, {"dir", "formats", "masks"}, "output");
        if (o.contains("dir")) cfg.out_dir = o["dir"].get<std::string>();
        if (o.contains("formats")) {
            cfg.formats.clear();
            for (const json& v : o["formats"]) cfg.formats.push_back(parse_format(v.get<std::string>()));
        }
        if (o.contains("masks")) cfg.masks = o["masks"].get<bool>();
    }
    if (doc.contains("bench")) {
        const json& b = doc["bench"];
        reject_unknown(b, {"reps"}, "bench");
        if (b.contains("reps")) cfg.reps = get_unsigned(b["reps"], "bench.reps");
    }
    return cfg;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), std::move(base));
    } catch (const json::exception& e) {
        throw ArgumentError("config " + path.string() + ": " + e.what());
    }
}

// ----------------------------------------------------------------- commands

void cmd_generate(const RunConfig& cfg, std::ostream& log) { (void)run_generation(cfg, log); }

void cmd_compare(RunConfig cfg, std::ostream& log) {
    if (!cfg.pruning_enabled()) throw ArgumentError("compare needs a pruning ratio list (--ratios)");
    cfg.compare = true;
    const GenerationRuns runs = run_generation(cfg, log);
    const auto& a = runs.baseline->final_map.data();
    const auto& b = runs.pruned->final_map.data();
    double max_abs = 0;
    double sum_sq = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        max_abs = std::max(max_abs, std::abs(diff));
        sum_sq += diff * diff;
    }
    log << "final_map_max_abs_diff: " << format_ratio(max_abs) << '\n';
    log << "final_map_rmse: " << format_ratio(std::sqrt(sum_sq / static_cast<double>(a.size()))) << '\n';
}

void cmd_bench(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    const ScaleSchedule sched = cfg.schedule();
    fs::create_directories(cfg.out_dir);
    const Model model = init_model(cfg.model, sched.sizes);

    const auto measured = [&](Pruning p) {
        RunMetrics run = measure_run(model, sched, cfg.seeds(), p, cfg.reps);
        const RunMetrics est = flop_estimate(cfg.model, sched, p);
        for (std::size_t i = 0; i < run.steps.size(); ++i) {
            if (run.steps[i].est_flops != est.steps[i].est_flops ||
                run.steps[i].forwarded_tokens != est.steps[i].forwarded_tokens) {
                throw StateError("measured token ledger disagrees with the FLOP model at step " +
                                 std::to_string(i + 1));
            }
        }
        return run;
    };

    const RunMetrics baseline = measured(Pruning::Off);
    std::optional<RunMetrics> pruned;
    if (cfg.pruning_enabled()) pruned = measured(Pruning::On);

    write_metrics(cfg, "bench_baseline", baseline, nullptr, log);
    if (pruned) write_metrics(cfg, "bench_pruned", *pruned, &baseline, log);

    nlohmann::ordered_json meta;
    meta["reps"] = cfg.reps;
    meta["model"] = {{"depth", cfg.model.depth}, {"d", cfg.model.d},         {"heads", cfg.model.heads},
                     {"d_ff", cfg.model.d_ff},   {"vocab", cfg.model.vocab}, {"temperature", cfg.model.temperature}};
    meta["sides"] = nlohmann::ordered_json::array();
    for (const Extent& e : sched.sizes) meta["sides"].push_back({e.h, e.w});
    meta["ratios"] = sched.prune_ratios;
    meta["cache_step"] = sched.texture_steps > 0 ? sched.effective_cache_step() : 0;
    meta["mode"] = to_string(sched.mode);
    meta["baseline_wall_ns"] = baseline.totals().wall_ns;
    meta["baseline_est_flops"] = baseline.totals().est_flops;
    if (pruned) {
        meta["pruned_wall_ns"] = pruned->totals().wall_ns;
        meta["pruned_est_flops"] = pruned->totals().est_flops;
        const auto wall = wall_speedup(baseline, *pruned);
        const auto flops = flop_speedup(baseline, *pruned);
        meta["speedup"] = wall ? nlohmann::ordered_json(*wall) : nlohmann::ordered_json(nullptr);
        meta["flop_speedup"] = flops ? nlohmann::ordered_json(*flops) : nlohmann::ordered_json(nullptr);
    }
    {
        const fs::path path = cfg.out_dir / "bench_meta.json";
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << meta.dump(2) << '\n';
        log << "wrote " << path.string() << '\n';
    }

    const auto share = [](const RunMetrics& m, std::size_t i) {
        const double total = static_cast<double>(m.totals().wall_ns);
        return total > 0 ? 100.0 * static_cast<double>(m.steps[i].wall_ns) / total : 0.0;
    };
    char line[160];
    std::snprintf(line, sizeof line, "%4s %9s %12s %7s %12s %7s\n", "step", "size", "base_ms", "share", "pruned_ms",
                  "share");
    log << line;
    for (std::size_t i = 0; i < baseline.steps.size(); ++i) {
        const StepMetrics& s = baseline.steps[i];
        const std::string size = std::to_string(s.h) + "x" + std::to_string(s.w);
        if (pruned) {
            std::snprintf(line, sizeof line, "%4zu %9s %12.3f %6.1f%% %12.3f %6.1f%%%s\n", s.step, size.c_str(),
                          static_cast<double>(s.wall_ns) / 1e6, share(baseline, i),
                          static_cast<double>(pruned->steps[i].wall_ns) / 1e6, share(*pruned, i),
                          pruned->steps[i].skipped ? " (skipped)" : "");
        } else {
            std::snprintf(line, sizeof line, "%4zu %9s %12.3f %6.1f%%\n", s.step, size.c_str(),
                          static_cast<double>(s.wall_ns) / 1e6, share(baseline, i));
        }
        log << line;
    }
    if (baseline.steps.size() >= 2) {
        const std::size_t n = baseline.steps.size();
        std::snprintf(line, sizeof line, "last two steps share of baseline wall time: %.1f%%\n",
                      share(baseline, n - 1) + share(baseline, n - 2));
        log << line;
    }
    if (pruned) {
        const auto wall = wall_speedup(baseline, *pruned);
        const auto flops = flop_speedup(baseline, *pruned);
        log << "speedup: " << (wall ? format_ratio(*wall) : "n/a") << '\n';
        log << "flop_speedup: " << (flops ? format_ratio(*flops) : "n/a") << '\n';
    }
}

void cmd_analyze(const fs::path& map_file, const fs::path& out_dir, std::ostream& log) {
    const TokenMap map = read_fvtm(map_file);
    const SpectrumProfile profile = spectrum_profile(map);
    fs::create_directories(out_dir);
    const fs::path path = out_dir / "spectrum.csv";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "radius,power\n";
    char buf[64];
    for (std::size_t r = 0; r < profile.bins.size(); ++r) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", r, profile.bins[r]);
        out << buf;
    }
    if (!out) throw IoError("write failed for " + path.string());
    log << "wrote " << path.string() << '\n';
    std::snprintf(buf, sizeof buf, "dc_power: %.9g\n", profile.dc_power);
    log << buf;
    std::snprintf(buf, sizeof buf, "total_power: %.9g\n", profile.total_power);
    log << buf;
}

}  // namespace fastvar
