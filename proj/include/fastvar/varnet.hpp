#pragma once

// Toy next-scale transformer. Each scale step embeds the upsampled running
// prediction, runs pre-norm attention/FFN blocks whose queries see the KV
// cache of every earlier step, samples codebook indices and adds their
// embeddings as the step's residual.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fastvar/metrics.hpp"
#include "fastvar/numkern.hpp"
#include "fastvar/prune.hpp"
#include "fastvar/pyramid.hpp"

namespace fastvar {

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) with 53 random bits; independent of the standard
/// library's distribution implementations.
double uniform01(Rng& rng);

struct ModelConfig {
    std::size_t depth = 2;
    std::size_t d = 32;
    std::size_t heads = 4;
    std::size_t d_ff = 64;
    std::size_t vocab = 64;
    std::uint64_t seed = 0;
    double temperature = 1.0;

    std::size_t head_dim() const noexcept { return d / heads; }
    void validate() const;
};

struct LayerWeights {
    FlatMatrix wq, wk, wv, wo;  // d x d
    FlatMatrix w1;              // d x d_ff
    std::vector<Real> b1;
    FlatMatrix w2;              // d_ff x d
    std::vector<Real> b2;
};

struct ModelWeights {
    FlatMatrix embed;  // d x d, applied to the upsampled running prediction
    std::vector<LayerWeights> layers;
    FlatMatrix head;      // d x vocab
    FlatMatrix codebook;  // vocab x d
};

/// Per-layer keys/values of every forwarded step. Pruned tokens never enter.
class KVCache {
public:
    struct Entry {
        FlatMatrix keys;    // kept_tokens x d
        FlatMatrix values;  // kept_tokens x d
    };

    explicit KVCache(std::size_t depth = 0) : layers_(depth) {}

    std::size_t depth() const noexcept { return layers_.size(); }
    void append(std::size_t layer, FlatMatrix keys, FlatMatrix values);
    const std::vector<Entry>& entries(std::size_t layer) const { return layers_.at(layer); }
    /// Tokens cached for `layer` across all entries.
    std::size_t tokens(std::size_t layer) const;

private:
    std::vector<std::vector<Entry>> layers_;
};

class Model {
public:
    Model(ModelConfig cfg, ModelWeights weights);

    const ModelConfig& config() const noexcept { return cfg_; }
    const ModelWeights& weights() const noexcept { return weights_; }

    /// Precomputed for sizes passed to init_model, computed on demand otherwise.
    TokenMap positions(Extent size) const;

    /// Per-token input projection.
    TokenMap embed(const TokenMap& x) const;

    /// Multi-head attention of `x` (queries) over the cached prior steps plus
    /// `x` itself. Appends this call's keys/values to `cache`, then applies
    /// the output projection.
    TokenMap attention_forward(const TokenMap& x, std::size_t layer, KVCache& cache) const;

    /// GELU MLP d -> d_ff -> d, per token.
    TokenMap ffn_forward(const TokenMap& x, std::size_t layer) const;

    /// Final layer norm and vocabulary projection: (tokens x vocab).
    FlatMatrix logits(const TokenMap& x) const;

    /// Every weight in declaration order as raw float32 bytes.
    std::vector<std::uint8_t> weight_blob() const;

private:
    friend Model init_model(const ModelConfig&, std::span<const Extent>);

    ModelConfig cfg_;
    ModelWeights weights_;
    std::map<std::pair<std::size_t, std::size_t>, TokenMap> positions_;
};

/// Weights ~ U(-1/sqrt(d), 1/sqrt(d)) from `cfg.seed`.
Model init_model(const ModelConfig& cfg, std::span<const Extent> sizes = {});

/// 2D sinusoidal encoding: first half of the channels encodes the row, the
/// second half the column, on coordinates normalised to the grid.
TokenMap positional_encoding(Extent size, std::size_t d);

/// Token-wise layer norm without affine parameters.
TokenMap layer_norm(const TokenMap& x);

Real gelu(Real v) noexcept;

/// Temperature 0 is argmax with ties to the lowest index; otherwise
/// categorical sampling from softmax(logits / temperature).
std::vector<std::size_t> sample_tokens(const FlatMatrix& logits, double temperature, Rng& rng);

struct Seeds {
    std::uint64_t condition = 0;
    std::uint64_t sampling = 0;
};

enum class Pruning { Off, On };

struct StepTrace {
    std::size_t step = 0;
    bool skipped = false;
    /// One decision per pruned sublayer call: layer 0 attention, layer 0 FFN,
    /// layer 1 attention, ... Empty when the step ran unpruned.
    std::vector<PruneDecision> decisions;
};

struct GenerationState {
    /// Completed steps; the next call decodes step + 1.
    std::size_t step = 0;
    /// Running prediction after `step` steps; the 1x1 condition map at step 0.
    TokenMap prediction;
    KVCache kv;
    std::optional<LayerCacheStore> cache_store;
    Rng rng;
    RunMetrics metrics;
    std::vector<StepTrace> traces;
};

/// Pruning state for one step's block stack.
struct PruneContext {
    /// In (0, 1): wrap every sublayer in select/restore. 0: run unwrapped.
    double ratio = 0;
    /// Source for restoration (ratio > 0) and sink when `capture` is set.
    LayerCacheStore* store = nullptr;
    bool capture = false;
    std::size_t step = 0;
    Extent size;
    ResizeMode mode = ResizeMode::Nearest;
    /// Receives one decision per wrapped sublayer call.
    std::vector<PruneDecision>* decisions = nullptr;
};

/// Step input: embed(resize(previous prediction, size)) + positions.
TokenMap step_input(const Model& model, const TokenMap& prediction, Extent size, ResizeMode mode);

/// Pre-norm residual blocks over one step's tokens; the residual stream stays
/// at full resolution and only sublayer calls see pruned tokens.
TokenMap forward_blocks(const Model& model, TokenMap x, KVCache& kv, const PruneContext* prune = nullptr);

/// Seeded 1x1xd condition map standing in for the start token.
TokenMap condition_map(std::uint64_t seed, std::size_t d);

GenerationState start_generation(const Model& model, const ScaleSchedule& sched, const Seeds& seeds,
                                 Pruning pruning);

/// Decodes one scale step in place. With pruning on, texture steps with
/// ratio in (0, 1) wrap every sublayer in select/restore, ratio 1.0 skips the
/// step by upsampling the previous prediction, and the caching step records
/// every sublayer's output.
void decode_scale_step(GenerationState& state, const Model& model, const ScaleSchedule& sched, Pruning pruning);

struct GenerationResult {
    TokenMap final_map;
    RunMetrics metrics;
    std::vector<StepTrace> traces;
};

GenerationResult generate(const Model& model, const ScaleSchedule& sched, const Seeds& seeds, Pruning pruning);

}  // namespace fastvar
