#pragma once

// Decoder-only byte-level transformer, written directly against the training
// objective: scaled dot-product attention with a causal mask, pre-layer
// RMS-style normalisation (no learned gain, no biases anywhere), residual
// connections around the attention and projection blocks, and a pointwise
// ReLU inside the projection block. Scalar type is a template parameter:
// float for training (and the float32 checkpoint format), double for
// finite-difference gradient verification.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "phimesa/infotheory.hpp"

namespace phimesa::lm {

// Byte-level tokens: 0..255 raw bytes plus one end-of-sequence marker. The
// EOS id is always the last vocab entry (256 under the default vocab).
constexpr int32_t kByteVocab = 257;
constexpr int32_t kEosToken = 256;

struct ModelConfig {
    int32_t vocab = kByteVocab;
    int32_t dim = 64;
    int32_t layers = 2;
    int32_t heads = 1;
    int32_t context_len = 128;
};

void validate(const ModelConfig& c);

// The end-of-sequence token id: the last vocab entry.
int32_t eos_id(const ModelConfig& c);

template <typename T>
struct Tensor {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<T> v;

    int64_t rows() const { return dims.empty() ? 0 : static_cast<int64_t>(dims[0]); }
    int64_t cols() const { return dims.size() < 2 ? 1 : static_cast<int64_t>(dims[1]); }
};

template <typename T>
struct LayerWeights {
    Tensor<T> w_q, w_k, w_v, w_proj;  // all [dim x dim]
};

template <typename T>
struct Weights {
    ModelConfig cfg;
    Tensor<T> tok_emb;                  // [vocab x dim]
    Tensor<T> pos_emb;                  // [context_len x dim]
    std::vector<LayerWeights<T>> layers;
    Tensor<T> out_proj;                 // [dim x vocab]

    // Visits every weight tensor in the fixed serialisation order.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn(tok_emb);
        fn(pos_emb);
        for (auto& l : layers) {
            fn(l.w_q);
            fn(l.w_k);
            fn(l.w_v);
            fn(l.w_proj);
        }
        fn(out_proj);
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        fn(tok_emb);
        fn(pos_emb);
        for (const auto& l : layers) {
            fn(l.w_q);
            fn(l.w_k);
            fn(l.w_v);
            fn(l.w_proj);
        }
        fn(out_proj);
    }
};

// Zero-initialised weight set with the right shapes.
template <typename T>
Weights<T> make_weights(const ModelConfig& cfg);

// All tensors drawn i.i.d. uniform(-1/sqrt(dim), 1/sqrt(dim)) from a seeded
// mt19937_64 in serialisation order.
template <typename T>
Weights<T> init_weights(const ModelConfig& cfg, uint64_t seed);

// Forward-pass cache; one per sequence, reused across steps.
template <typename T>
struct LayerCache {
    std::vector<T> x_in, rms_in, h, q, k, v, attw, att, x_mid, rms_mid, h2, z;
};

template <typename T>
struct Activations {
    int64_t positions = 0;
    std::vector<T> x0;
    std::vector<LayerCache<T>> layers;
    std::vector<T> x_final;
    std::vector<T> logits;  // [positions x vocab]
};

// Runs the model over `tokens` (1 <= n <= context_len), filling the cache and
// logits for every position.
template <typename T>
void forward(const Weights<T>& w, const std::vector<int32_t>& tokens, Activations<T>& acts);

// Mean negative log-probability of `targets` under cached logits, in nats,
// with per-position log-probs appended to `rec` (double precision) when
// non-null. targets[i] is scored against logits row i.
template <typename T>
double nll_loss(const Weights<T>& w, const Activations<T>& acts,
                const std::vector<int32_t>& targets, infotheory::LogProbRecord* rec);

// exp(mean NLL) of a log-prob record.
double perplexity(const infotheory::LogProbRecord& rec);

// Accumulates d(coeff * sum of per-position NLL)/d(weights) into `grads`
// (which must have matching shapes; existing values are added to). coeff is
// typically grad_scale / total_positions.
template <typename T>
void backward(const Weights<T>& w, const Activations<T>& acts,
              const std::vector<int32_t>& tokens, const std::vector<int32_t>& targets,
              T coeff, Weights<T>& grads);

enum class Sampler { greedy, multinomial };

// Greedy: argmax, lowest index on ties. Multinomial: softmax draw using the
// supplied generator.
template <typename T>
int32_t sample_greedy(const T* logits, int32_t vocab);
template <typename T>
int32_t sample_multinomial(const T* logits, int32_t vocab, std::mt19937_64& rng);

// Autoregressive continuation: appends up to max_len sampled tokens to the
// context (stopping after EOS, which is kept in the returned sequence).
// The prompt must be non-empty and fit in context_len; generation past the
// context window slides over the trailing context_len tokens.
template <typename T>
std::vector<int32_t> generate(const Weights<T>& w, const std::vector<int32_t>& context,
                              int64_t max_len, Sampler sampler, uint64_t seed);

// Additional loss term coupled to a training step: `value` is added to the
// reported loss, and the CE gradient is multiplied by ce_grad_scale (the
// surrogate objective differentiates through CE only).
struct ExtraLoss {
    double value = 0.0;
    double ce_grad_scale = 1.0;
};

// Computes the extra term from the batch CE and its log-prob record after the
// forward pass, before the update.
using ExtraLossFn = std::function<ExtraLoss(double ce, const infotheory::LogProbRecord& rec)>;

template <typename T>
struct SgdState {
    double momentum = 0.0;
    std::vector<std::vector<T>> velocity;  // lazily sized, serialisation order
};

struct TrainMetrics {
    double ce = 0.0;
    double ppl = 1.0;
    double extra_value = 0.0;
    int64_t positions = 0;
};

// One plain SGD update (momentum optional via state) on mean batch NLL plus
// the supplied extra term. Batch items contribute gradients in index order
// regardless of any internal parallelism.
template <typename T>
TrainMetrics train_step(Weights<T>& w, SgdState<T>& opt,
                        const std::vector<std::vector<int32_t>>& batch, double lr,
                        const ExtraLossFn& extra_fn = nullptr);

// Binary checkpoint: "PHIM" magic, little-endian u32 version (1), u32 tensor
// count, then per tensor u16 name length, name, u8 rank, u32 dims, float32
// row-major data. Weight tensors are float32; a rank-1 "meta" tensor carries
// the head count.
void save_checkpoint(const std::string& path, const Weights<float>& w);
Weights<float> load_checkpoint(const std::string& path);

// Byte-level tokenizer.
std::vector<int32_t> bytes_to_tokens(const std::string& bytes);
std::string tokens_to_bytes(const std::vector<int32_t>& tokens);  // drops EOS

}  // namespace phimesa::lm
