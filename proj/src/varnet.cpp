#include "fastvar/varnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

namespace fastvar {

namespace {

constexpr std::size_t kQueryBlock = 128;
constexpr Real kNormEps = 1e-5F;

FlatMatrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
    std::vector<Real> data(rows * cols);
    for (Real& v : data) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * bound);
    return FlatMatrix(rows, cols, std::move(data));
}

std::vector<Real> uniform_vector(Rng& rng, std::size_t n, double bound) {
    std::vector<Real> data(n);
    for (Real& v : data) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * bound);
    return data;
}

void check_width(const TokenMap& x, std::size_t d, const char* what) {
    if (x.d() != d) {
        throw ShapeError(std::string(what) + ": input width " + std::to_string(x.d()) + " != model width " +
                         std::to_string(d));
    }
}

void append_bytes(std::vector<std::uint8_t>& out, const std::vector<Real>& values) {
    const std::size_t offset = out.size();
    out.resize(offset + values.size() * sizeof(Real));
    std::memcpy(out.data() + offset, values.data(), values.size() * sizeof(Real));
}

// Columns [offset, offset + width) of m.
FlatMatrix column_slice(const FlatMatrix& m, std::size_t offset, std::size_t width) {
    FlatMatrix out(m.rows(), width);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto src = m.row(r).subspan(offset, width);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

}  // namespace

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void ModelConfig::validate() const {
    if (depth == 0 || d == 0 || heads == 0 || d_ff == 0 || vocab == 0) {
        throw ArgumentError("model config counts (depth, d, heads, d_ff, vocab) must all be >= 1");
    }
    if (d % heads != 0) {
        throw ArgumentError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                            " heads");
    }
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        throw ArgumentError("temperature must be finite and >= 0");
    }
}

// ----------------------------------------------------------------- KVCache

void KVCache::append(std::size_t layer, FlatMatrix keys, FlatMatrix values) {
    if (keys.rows() != values.rows() || keys.cols() != values.cols()) {
        throw ShapeError("KV append: keys and values disagree in shape");
    }
    layers_.at(layer).push_back({std::move(keys), std::move(values)});
}

std::size_t KVCache::tokens(std::size_t layer) const {
    std::size_t n = 0;
    for (const Entry& e : layers_.at(layer)) n += e.keys.rows();
    return n;
}

// ------------------------------------------------------------------- Model

Model::Model(ModelConfig cfg, ModelWeights weights) : cfg_(cfg), weights_(std::move(weights)) {
    cfg_.validate();
    const std::size_t d = cfg_.d;
    const auto expect = [](const FlatMatrix& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows() != r || m.cols() != c) {
            throw ShapeError(std::string(name) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                             ", expected " + std::to_string(r) + "x" + std::to_string(c));
        }
    };
    expect(weights_.embed, d, d, "embed");
    expect(weights_.head, d, cfg_.vocab, "head");
    expect(weights_.codebook, cfg_.vocab, d, "codebook");
    if (weights_.layers.size() != cfg_.depth) throw ShapeError("layer count does not match depth");
    for (const LayerWeights& l : weights_.layers) {
        expect(l.wq, d, d, "wq");
        expect(l.wk, d, d, "wk");
        expect(l.wv, d, d, "wv");
        expect(l.wo, d, d, "wo");
        expect(l.w1, d, cfg_.d_ff, "w1");
        expect(l.w2, cfg_.d_ff, d, "w2");
        if (l.b1.size() != cfg_.d_ff || l.b2.size() != d) throw ShapeError("FFN bias length mismatch");
    }
}

Model init_model(const ModelConfig& cfg, std::span<const Extent> sizes) {
    cfg.validate();
    Rng rng(cfg.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    ModelWeights w;
    w.embed = uniform_matrix(rng, cfg.d, cfg.d, bound);
    w.layers.reserve(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        LayerWeights lw;
        lw.wq = uniform_matrix(rng, cfg.d, cfg.d, bound);
        lw.wk = uniform_matrix(rng, cfg.d, cfg.d, bound);
        lw.wv = uniform_matrix(rng, cfg.d, cfg.d, bound);
        lw.wo = uniform_matrix(rng, cfg.d, cfg.d, bound);
        lw.w1 = uniform_matrix(rng, cfg.d, cfg.d_ff, bound);
        lw.b1 = uniform_vector(rng, cfg.d_ff, bound);
        lw.w2 = uniform_matrix(rng, cfg.d_ff, cfg.d, bound);
        lw.b2 = uniform_vector(rng, cfg.d, bound);
        w.layers.push_back(std::move(lw));
    }
    w.head = uniform_matrix(rng, cfg.d, cfg.vocab, bound);
    w.codebook = uniform_matrix(rng, cfg.vocab, cfg.d, bound);

    Model model(cfg, std::move(w));
    for (const Extent& e : sizes) model.positions_.emplace(std::pair{e.h, e.w}, positional_encoding(e, cfg.d));
    return model;
}

TokenMap Model::positions(Extent size) const {
    const auto it = positions_.find({size.h, size.w});
    return it != positions_.end() ? it->second : positional_encoding(size, cfg_.d);
}

TokenMap Model::embed(const TokenMap& x) const {
    check_width(x, cfg_.d, "embed");
    return as_token_map(matmul(as_matrix(x), weights_.embed), x.h(), x.w());
}

TokenMap Model::attention_forward(const TokenMap& x, std::size_t layer, KVCache& cache) const {
    check_width(x, cfg_.d, "attention");
    if (cache.depth() != cfg_.depth) throw ShapeError("KV cache depth does not match the model");
    const LayerWeights& lw = weights_.layers.at(layer);
    const FlatMatrix input = as_matrix(x);
    const FlatMatrix q = matmul(input, lw.wq);
    FlatMatrix k = matmul(input, lw.wk);
    FlatMatrix v = matmul(input, lw.wv);

    const std::size_t d = cfg_.d;
    const std::size_t dh = cfg_.head_dim();
    const std::size_t n_query = q.rows();
    const auto& prior = cache.entries(layer);
    const std::size_t n_key = cache.tokens(layer) + k.rows();
    const auto scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));

    FlatMatrix attended(n_query, d);
    for (std::size_t head = 0; head < cfg_.heads; ++head) {
        const std::size_t off = head * dh;
        FlatMatrix keys_t(dh, n_key);
        FlatMatrix vals(n_key, dh);
        std::size_t col = 0;
        const auto stack = [&](const FlatMatrix& keys, const FlatMatrix& values) {
            for (std::size_t r = 0; r < keys.rows(); ++r, ++col) {
                for (std::size_t c = 0; c < dh; ++c) {
                    keys_t(c, col) = keys(r, off + c);
                    vals(col, c) = values(r, off + c);
                }
            }
        };
        for (const auto& e : prior) stack(e.keys, e.values);
        stack(k, v);

        FlatMatrix qh = column_slice(q, off, dh);
        for (Real& val : qh.data()) val *= scale;
        for (std::size_t r0 = 0; r0 < n_query; r0 += kQueryBlock) {
            const std::size_t rows = std::min(kQueryBlock, n_query - r0);
            FlatMatrix block(rows, dh,
                             std::vector<Real>(qh.data().begin() + static_cast<std::ptrdiff_t>(r0 * dh),
                                               qh.data().begin() + static_cast<std::ptrdiff_t>((r0 + rows) * dh)));
            const FlatMatrix probs = softmax_rows(matmul(block, keys_t));
            const FlatMatrix out = matmul(probs, vals);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto src = out.row(r);
                std::copy(src.begin(), src.end(), attended.row(r0 + r).begin() + static_cast<std::ptrdiff_t>(off));
            }
        }
    }
    cache.append(layer, std::move(k), std::move(v));
    return as_token_map(matmul(attended, lw.wo), x.h(), x.w());
}

TokenMap Model::ffn_forward(const TokenMap& x, std::size_t layer) const {
    check_width(x, cfg_.d, "ffn");
    const LayerWeights& lw = weights_.layers.at(layer);
    FlatMatrix hidden = matmul(as_matrix(x), lw.w1);
    for (std::size_t r = 0; r < hidden.rows(); ++r) {
        auto row = hidden.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = gelu(row[c] + lw.b1[c]);
    }
    FlatMatrix out = matmul(hidden, lw.w2);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += lw.b2[c];
    }
    return as_token_map(std::move(out), x.h(), x.w());
}

FlatMatrix Model::logits(const TokenMap& x) const {
    check_width(x, cfg_.d, "logits");
    return matmul(as_matrix(layer_norm(x)), weights_.head);
}

std::vector<std::uint8_t> Model::weight_blob() const {
    std::vector<std::uint8_t> blob;
    append_bytes(blob, weights_.embed.data());
    for (const LayerWeights& l : weights_.layers) {
        for (const FlatMatrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1}) append_bytes(blob, m->data());
        append_bytes(blob, l.b1);
        append_bytes(blob, l.w2.data());
        append_bytes(blob, l.b2);
    }
    append_bytes(blob, weights_.head.data());
    append_bytes(blob, weights_.codebook.data());
    return blob;
}

// --------------------------------------------------------- free functions

TokenMap positional_encoding(Extent size, std::size_t d) {
    TokenMap pe(size.h, size.w, d);
    const std::size_t half = d / 2;
    const auto encode = [](double pos, std::size_t i, std::size_t width) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
        return static_cast<Real>(i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
    };
    for (std::size_t r = 0; r < size.h; ++r) {
        const double row_pos = 16.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(size.h);
        for (std::size_t c = 0; c < size.w; ++c) {
            const double col_pos = 16.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(size.w);
            for (std::size_t i = 0; i < half; ++i) {
                pe.at(r, c, i) = encode(row_pos, i, half);
                pe.at(r, c, half + i) = encode(col_pos, i, half);
            }
        }
    }
    return pe;
}

TokenMap layer_norm(const TokenMap& x) {
    TokenMap out = x;
    const auto n = static_cast<Real>(x.d());
    for (std::size_t t = 0; t < x.tokens(); ++t) {
        auto tok = out.token(t);
        Real mean = 0;
        for (Real v : tok) mean += v;
        mean /= n;
        Real var = 0;
        for (Real v : tok) var += (v - mean) * (v - mean);
        var /= n;
        const Real inv = 1.0F / std::sqrt(var + kNormEps);
        for (Real& v : tok) v = (v - mean) * inv;
    }
    return out;
}

Real gelu(Real v) noexcept { return 0.5F * v * (1.0F + std::erf(v * static_cast<Real>(std::numbers::sqrt2 / 2))); }

std::vector<std::size_t> sample_tokens(const FlatMatrix& logits, double temperature, Rng& rng) {
    if (!(temperature >= 0.0)) throw ArgumentError("temperature must be >= 0");
    std::vector<std::size_t> picks(logits.rows());
    if (temperature == 0.0) {
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            const auto row = logits.row(r);
            picks[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        }
        return picks;
    }
    FlatMatrix scaled = logits;
    const auto inv_t = static_cast<Real>(1.0 / temperature);
    for (Real& v : scaled.data()) v *= inv_t;
    const FlatMatrix probs = softmax_rows(std::move(scaled));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = probs.row(r);
        const double u = uniform01(rng);
        double cumulative = 0;
        std::size_t pick = row.size() - 1;
        for (std::size_t c = 0; c < row.size(); ++c) {
            cumulative += row[c];
            if (u < cumulative) {
                pick = c;
                break;
            }
        }
        picks[r] = pick;
    }
    return picks;
}

TokenMap step_input(const Model& model, const TokenMap& prediction, Extent size, ResizeMode mode) {
    TokenMap x = model.embed(resize(prediction, size, mode));
    x += model.positions(size);
    return x;
}

TokenMap forward_blocks(const Model& model, TokenMap x, KVCache& kv, const PruneContext* prune) {
    const bool wrapped = prune != nullptr && prune->ratio > 0.0;
    const bool capture = prune != nullptr && prune->capture;
    if (wrapped && prune->ratio >= 1.0) throw ArgumentError("forward_blocks: ratio 1.0 is the skip path");
    if ((wrapped || capture) && prune->store == nullptr) throw StateError("pruning requires a layer cache store");
    if (wrapped && x.extent() != prune->size) throw ShapeError("forward_blocks: input does not match step size");

    const auto sublayer = [&](std::size_t layer, SublayerKind kind, const TokenMap& in) {
        return kind == SublayerKind::Attention ? model.attention_forward(in, layer, kv) : model.ffn_forward(in, layer);
    };
    for (std::size_t layer = 0; layer < model.config().depth; ++layer) {
        for (const SublayerKind kind : {SublayerKind::Attention, SublayerKind::Ffn}) {
            const TokenMap normed = layer_norm(x);
            TokenMap y;
            if (wrapped) {
                Selection sel = select_pivotal(normed, prune->ratio);
                const TokenMap y_kept = sublayer(layer, kind, sel.kept_tokens);
                y = restore_cached(y_kept, *prune->store, layer, kind, sel.decision, prune->size, prune->mode);
                if (prune->decisions != nullptr) prune->decisions->push_back(std::move(sel.decision));
            } else {
                y = sublayer(layer, kind, normed);
            }
            if (capture) prune->store->capture(prune->step, layer, kind, y);
            x += y;
        }
    }
    return x;
}

TokenMap condition_map(std::uint64_t seed, std::size_t d) {
    Rng rng(seed);
    return TokenMap(1, 1, d, uniform_vector(rng, d, 1.0));
}

GenerationState start_generation(const Model& model, const ScaleSchedule& sched, const Seeds& seeds,
                                 Pruning pruning) {
    sched.validate();
    GenerationState state{0, condition_map(seeds.condition, model.config().d), KVCache(model.config().depth),
                          std::nullopt, Rng(seeds.sampling), {}, {}};
    if (pruning == Pruning::On && sched.texture_steps > 0) state.cache_store.emplace(sched.effective_cache_step());
    return state;
}

void decode_scale_step(GenerationState& state, const Model& model, const ScaleSchedule& sched, Pruning pruning) {
    const std::size_t k = state.step + 1;
    if (k > sched.steps()) {
        throw StateError("all " + std::to_string(sched.steps()) + " scale steps already decoded");
    }
    const auto started = std::chrono::steady_clock::now();
    const ModelConfig& cfg = model.config();
    const Extent size = sched.size_at(k);
    const double ratio = pruning == Pruning::On ? sched.ratio_at(k) : 0.0;

    StepMetrics m;
    m.step = k;
    m.h = size.h;
    m.w = size.w;
    StepTrace trace;
    trace.step = k;

    if (ratio >= 1.0) {
        state.prediction = resize(state.prediction, size, sched.mode);
        m.skipped = trace.skipped = true;
        m.kv_total = state.kv.tokens(0);
    } else {
        const bool wrapped = ratio > 0.0;
        if (wrapped && (!state.cache_store || state.cache_store->size() < 2 * cfg.depth)) {
            throw StateError("pruning step " + std::to_string(k) + " requested before the layer cache was captured");
        }
        PruneContext ctx;
        ctx.ratio = ratio;
        ctx.store = state.cache_store ? &*state.cache_store : nullptr;
        ctx.capture = state.cache_store && k == state.cache_store->step();
        ctx.step = k;
        ctx.size = size;
        ctx.mode = sched.mode;
        ctx.decisions = &trace.decisions;
        const TokenMap x =
            forward_blocks(model, step_input(model, state.prediction, size, sched.mode), state.kv, &ctx);
        const std::size_t forwarded = trace.decisions.empty() ? size.area() : trace.decisions.front().keep();

        const auto indices = sample_tokens(model.logits(x), cfg.temperature, state.rng);
        TokenMap residual(size.h, size.w, cfg.d);
        const FlatMatrix& codebook = model.weights().codebook;
        for (std::size_t t = 0; t < indices.size(); ++t) {
            const auto row = codebook.row(indices[t]);
            std::copy(row.begin(), row.end(), residual.token(t).begin());
        }
        if (k == 1) {
            state.prediction = std::move(residual);
        } else {
            state.prediction = resize(state.prediction, size, sched.mode);
            state.prediction += residual;
        }

        m.forwarded_tokens = forwarded;
        m.kv_total = state.kv.tokens(0);
        m.est_flops = step_flops(cfg.depth, cfg.d, cfg.d_ff, forwarded, m.kv_total);
    }

    m.wall_ns = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - started).count());
    state.metrics.steps.push_back(m);
    state.traces.push_back(std::move(trace));
    state.step = k;
}

GenerationResult generate(const Model& model, const ScaleSchedule& sched, const Seeds& seeds, Pruning pruning) {
    GenerationState state = start_generation(model, sched, seeds, pruning);
    while (state.step < sched.steps()) decode_scale_step(state, model, sched, pruning);
    return {std::move(state.prediction), std::move(state.metrics), std::move(state.traces)};
}

}  // namespace fastvar
