#include "fastvar/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace fastvar {

namespace {

using Complex = std::complex<double>;

// e^{-2 pi i m / n} for m = 0..n-1, reduced before evaluation.
std::vector<Complex> twiddles(std::size_t n) {
    std::vector<Complex> out(n);
    for (std::size_t m = 0; m < n; ++m) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
        out[m] = {std::cos(angle), std::sin(angle)};
    }
    return out;
}

// Centred frequency of DFT index i on an n-point grid: [-n/2, n/2).
long centred(std::size_t i, std::size_t n) {
    const auto si = static_cast<long>(i);
    return i >= (n + 1) / 2 ? si - static_cast<long>(n) : si;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

RunMetrics flop_estimate(const ModelConfig& cfg, const ScaleSchedule& sched, Pruning pruning) {
    cfg.validate();
    sched.validate();
    RunMetrics out;
    std::size_t kv = 0;
    for (std::size_t k = 1; k <= sched.steps(); ++k) {
        const Extent size = sched.size_at(k);
        const double ratio = pruning == Pruning::On ? sched.ratio_at(k) : 0.0;
        StepMetrics m;
        m.step = k;
        m.h = size.h;
        m.w = size.w;
        if (ratio >= 1.0) {
            m.skipped = true;
        } else {
            m.forwarded_tokens = ratio > 0.0 ? keep_count(size.area(), ratio) : size.area();
            kv += m.forwarded_tokens;
            m.est_flops = step_flops(cfg.depth, cfg.d, cfg.d_ff, m.forwarded_tokens, kv);
        }
        m.kv_total = kv;
        out.steps.push_back(m);
    }
    return out;
}

RunMetrics aggregate_median(const std::vector<RunMetrics>& runs) {
    if (runs.empty()) throw ArgumentError("aggregate_median needs at least one run");
    RunMetrics out = runs.front();
    std::vector<std::uint64_t> samples(runs.size());
    for (std::size_t i = 0; i < out.steps.size(); ++i) {
        for (std::size_t r = 0; r < runs.size(); ++r) {
            if (runs[r].steps.size() != out.steps.size()) throw ArgumentError("runs differ in step count");
            samples[r] = runs[r].steps[i].wall_ns;
        }
        const auto mid = samples.begin() + static_cast<std::ptrdiff_t>(runs.size() / 2);
        std::nth_element(samples.begin(), mid, samples.end());
        out.steps[i].wall_ns = *mid;
    }
    return out;
}

RunMetrics measure_run(const Model& model, const ScaleSchedule& sched, const Seeds& seeds, Pruning pruning,
                       std::size_t repetitions) {
    if (repetitions == 0) throw ArgumentError("measure_run needs at least one repetition");
    std::vector<RunMetrics> runs;
    runs.reserve(repetitions);
    for (std::size_t r = 0; r < repetitions; ++r) runs.push_back(generate(model, sched, seeds, pruning).metrics);
    return aggregate_median(runs);
}

SpectrumProfile spectrum_profile(const TokenMap& x) {
    const std::size_t h = x.h();
    const std::size_t w = x.w();
    const std::size_t d = x.d();
    const auto row_tw = twiddles(h);
    const auto col_tw = twiddles(w);

    std::vector<double> power(h * w, 0.0);
    std::vector<Complex> rows_done(h * w);
    for (std::size_t c = 0; c < d; ++c) {
        // The DC term comes from the plain sum; every other frequency is taken
        // from the mean-centred channel, which leaves it unchanged in exact
        // arithmetic but keeps a constant map from leaking rounding noise.
        double sum = 0;
        for (std::size_t t = 0; t < h * w; ++t) sum += static_cast<double>(x.data()[t * d + c]);
        const double mean = sum / static_cast<double>(h * w);
        // Transform along columns, then along rows.
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t v = 0; v < w; ++v) {
                Complex acc = 0;
                for (std::size_t col = 0; col < w; ++col) {
                    acc += (static_cast<double>(x.at(r, col, c)) - mean) * col_tw[(v * col) % w];
                }
                rows_done[r * w + v] = acc;
            }
        }
        for (std::size_t u = 0; u < h; ++u) {
            for (std::size_t v = 0; v < w; ++v) {
                Complex acc = 0;
                if (u == 0 && v == 0) {
                    power[0] += sum * sum;
                    continue;
                }
                for (std::size_t r = 0; r < h; ++r) acc += rows_done[r * w + v] * row_tw[(u * r) % h];
                power[u * w + v] += std::norm(acc);
            }
        }
    }

    const double norm = static_cast<double>(h * w) * static_cast<double>(d);
    SpectrumProfile profile;
    for (std::size_t u = 0; u < h; ++u) {
        const auto fu = static_cast<double>(centred(u, h));
        for (std::size_t v = 0; v < w; ++v) {
            const auto fv = static_cast<double>(centred(v, w));
            const auto bin = static_cast<std::size_t>(std::floor(std::sqrt(fu * fu + fv * fv) + 0.5));
            if (bin >= profile.bins.size()) profile.bins.resize(bin + 1, 0.0);
            profile.bins[bin] += power[u * w + v] / norm;
        }
    }
    profile.dc_power = power[0] / norm;
    for (double b : profile.bins) profile.total_power += b;
    return profile;
}

void export_mask(const PruneDecision& decision, Extent shape, const std::filesystem::path& path) {
    if (decision.kept.capacity() != shape.area()) {
        throw ArgumentError("export_mask: decision covers " + std::to_string(decision.kept.capacity()) +
                            " tokens, shape has " + std::to_string(shape.area()));
    }
    std::string pixels(shape.area(), '\0');
    for (std::size_t t : decision.kept) pixels[t] = static_cast<char>(255);
    write_file(path, "P5\n" + std::to_string(shape.w) + " " + std::to_string(shape.h) + "\n255\n" + pixels);
}

IndexList read_mask(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    const auto next_token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw ParseError(start, "truncated PGM header");
        return std::pair{start, bytes.substr(start, pos - start)};
    };
    const auto number = [&]() {
        const auto [at, tok] = next_token();
        if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(ch) != 0; })) {
            throw ParseError(at, "expected a decimal number in PGM header");
        }
        return std::stoul(tok);
    };
    if (const auto [at, magic] = next_token(); magic != "P5") throw ParseError(at, "not a binary PGM (P5)");
    const std::size_t w = number();
    const std::size_t h = number();
    if (const std::size_t maxval = number(); maxval != 255) throw ParseError(pos, "maxval must be 255");
    ++pos;  // single whitespace byte before the raster
    if (bytes.size() < pos + w * h) throw ParseError(bytes.size(), "PGM raster truncated");

    std::vector<std::size_t> kept;
    for (std::size_t t = 0; t < w * h; ++t) {
        const auto px = static_cast<unsigned char>(bytes[pos + t]);
        if (px == 255) {
            kept.push_back(t);
        } else if (px != 0) {
            throw ParseError(pos + t, "mask pixel must be 0 or 255");
        }
    }
    return IndexList(std::move(kept), w * h);
}

std::string format_ratio(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    return buf;
}

std::string format_metrics(const RunMetrics& metrics, const RunMetrics* baseline, ReportFormat format) {
    const MetricTotals totals = metrics.totals();
    std::optional<double> flop_ratio;
    std::optional<double> wall_ratio;
    if (baseline != nullptr) {
        flop_ratio = flop_speedup(*baseline, metrics);
        wall_ratio = wall_speedup(*baseline, metrics);
    }

    if (format == ReportFormat::Csv) {
        std::ostringstream out;
        out << kMetricsCsvHeader << '\n';
        for (const StepMetrics& s : metrics.steps) {
            out << s.step << ',' << s.h << ',' << s.w << ',' << s.forwarded_tokens << ',' << s.kv_total << ','
                << s.est_flops << ',' << s.wall_ns << ',' << (s.skipped ? 1 : 0) << '\n';
        }
        out << "total,,," << totals.forwarded_tokens << ',' << totals.kv_total << ',' << totals.est_flops << ','
            << totals.wall_ns << ',' << totals.skipped_steps << '\n';
        if (baseline != nullptr) {
            out << "speedup,,,,," << (flop_ratio ? format_ratio(*flop_ratio) : "") << ','
                << (wall_ratio ? format_ratio(*wall_ratio) : "") << ",\n";
        }
        return out.str();
    }

    nlohmann::ordered_json doc;
    doc["steps"] = nlohmann::ordered_json::array();
    for (const StepMetrics& s : metrics.steps) {
        doc["steps"].push_back({{"step", s.step},
                                {"h", s.h},
                                {"w", s.w},
                                {"forwarded_tokens", s.forwarded_tokens},
                                {"kv_total", s.kv_total},
                                {"est_flops", s.est_flops},
                                {"wall_ns", s.wall_ns},
                                {"skipped", s.skipped}});
    }
    doc["total"] = {{"forwarded_tokens", totals.forwarded_tokens},
                    {"kv_total", totals.kv_total},
                    {"est_flops", totals.est_flops},
                    {"wall_ns", totals.wall_ns},
                    {"skipped", totals.skipped_steps}};
    if (baseline != nullptr) {
        doc["speedup"] = wall_ratio ? nlohmann::ordered_json(*wall_ratio) : nlohmann::ordered_json(nullptr);
        doc["flop_speedup"] = flop_ratio ? nlohmann::ordered_json(*flop_ratio) : nlohmann::ordered_json(nullptr);
    }
    return doc.dump(2) + "\n";
}

void metrics_report(const RunMetrics& metrics, const RunMetrics* baseline, ReportFormat format,
                    const std::filesystem::path& path) {
    write_file(path, format_metrics(metrics, baseline, format));
}

}  // namespace fastvar
