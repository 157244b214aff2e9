// fastvar: generate, bench, analyze and compare runs of the toy next-scale
// model with cached token pruning.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fastvar/cli.hpp"
#include "fastvar/errors.hpp"

namespace {

using namespace fastvar;

struct Overrides {
    std::string config;
    bool compare = false;
    std::string ratios;
    std::optional<std::size_t> n_prune;
    std::optional<std::size_t> cache_step;
    std::string mode;
    std::string extend_scales;
    std::optional<std::size_t> reps;
    std::string out;
    std::optional<std::uint64_t> seed_weights;
    std::optional<std::uint64_t> seed_cond;
    std::optional<std::uint64_t> seed_sample;
};

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : text) {
        if (ch == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (ch != ' ') {
            cur += ch;
        }
    }
    parts.push_back(cur);
    return parts;
}

// Accepts "0.4,0.5,1,1" or "40%,50%,100%,100%".
std::vector<double> parse_ratios(const std::string& text) {
    std::vector<double> out;
    for (std::string part : split_csv(text)) {
        double scale = 1.0;
        if (!part.empty() && part.back() == '%') {
            part.pop_back();
            scale = 0.01;
        }
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (part.empty() || used != part.size()) throw ArgumentError("--ratios: cannot parse '" + part + "'");
        out.push_back(v * scale);
    }
    return out;
}

std::vector<std::size_t> parse_sides(const std::string& text) {
    std::vector<std::size_t> out;
    for (const std::string& part : split_csv(text)) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw ArgumentError("--extend-scales: cannot parse '" + part + "'");
        }
        out.push_back(std::stoul(part));
    }
    return out;
}

void add_run_options(CLI::App* cmd, Overrides& o, bool with_compare) {
    cmd->add_option("--config", o.config, "JSON run manifest");
    if (with_compare) cmd->add_flag("--compare", o.compare, "also run the unpruned baseline");
    cmd->add_option("--ratios", o.ratios, "pruning ratios for the texture stage, e.g. 0.4,0.5,1,1");
    cmd->add_option("--n-prune", o.n_prune, "texture stage length N");
    cmd->add_option("--cache-step", o.cache_step, "caching step (default K-N)");
    cmd->add_option("--mode", o.mode, "resize mode")->check(CLI::IsMember({"nearest", "bilinear"}));
    cmd->add_option("--extend-scales", o.extend_scales, "extra square sides appended to the schedule");
    cmd->add_option("--reps", o.reps, "timing repetitions (median reported)");
    cmd->add_option("--out", o.out, "output directory (default $FASTVAR_OUT or ./fastvar_out)");
    cmd->add_option("--seed-weights", o.seed_weights, "weight-init seed");
    cmd->add_option("--seed-cond", o.seed_cond, "condition seed");
    cmd->add_option("--seed-sample", o.seed_sample, "sampling seed");
}

RunConfig resolve(const Overrides& o) {
    RunConfig cfg = o.config.empty() ? RunConfig::defaults() : load_config(o.config);
    if (o.compare) cfg.compare = true;
    if (!o.ratios.empty()) cfg.ratios = parse_ratios(o.ratios);
    if (o.n_prune) cfg.n_prune = *o.n_prune;
    if (o.cache_step) cfg.cache_step = *o.cache_step;
    if (!o.mode.empty()) cfg.mode = parse_resize_mode(o.mode);
    if (!o.extend_scales.empty()) {
        const auto extra = parse_sides(o.extend_scales);
        cfg.extend_scales.insert(cfg.extend_scales.end(), extra.begin(), extra.end());
    }
    if (o.reps) cfg.reps = *o.reps;
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (o.seed_weights) cfg.model.seed = *o.seed_weights;
    if (o.seed_cond) cfg.seed_condition = *o.seed_cond;
    if (o.seed_sample) cfg.seed_sampling = *o.seed_sample;
    return cfg;
}

int fail(const char* kind, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fastvar: toy next-scale generation with cached token pruning"};
    app.require_subcommand(1);

    Overrides gen_opts;
    Overrides bench_opts;
    Overrides cmp_opts;
    auto* gen = app.add_subcommand("generate", "generate a final token map, optionally with the baseline");
    add_run_options(gen, gen_opts, true);
    auto* bench = app.add_subcommand("bench", "time baseline and pruned runs, report FLOPs and latency shares");
    add_run_options(bench, bench_opts, false);
    auto* cmp = app.add_subcommand("compare", "baseline vs pruned generation with final-map difference");
    add_run_options(cmp, cmp_opts, false);

    std::string map_file;
    std::string analyze_out;
    auto* analyze = app.add_subcommand("analyze", "radial power spectrum of an FVTM map");
    analyze->add_option("map", map_file, "FVTM file")->required();
    analyze->add_option("--out", analyze_out, "output directory (default $FASTVAR_OUT or ./fastvar_out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (gen->parsed()) {
            cmd_generate(resolve(gen_opts), std::cout);
        } else if (bench->parsed()) {
            cmd_bench(resolve(bench_opts), std::cout);
        } else if (cmp->parsed()) {
            cmd_compare(resolve(cmp_opts), std::cout);
        } else if (analyze->parsed()) {
            const std::string out = analyze_out.empty() ? RunConfig::defaults().out_dir.string() : analyze_out;
            cmd_analyze(map_file, out, std::cout);
        }
    } catch (const ParseError& e) {
        return fail("parse", e.what(), 3);
    } catch (const IoError& e) {
        return fail("io", e.what(), 4);
    } catch (const std::filesystem::filesystem_error& e) {
        return fail("io", e.what(), 4);
    } catch (const ShapeError& e) {
        return fail("shape", e.what(), 2);
    } catch (const ArgumentError& e) {
        return fail("argument", e.what(), 2);
    } catch (const StateError& e) {
        return fail("state", e.what(), 5);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
