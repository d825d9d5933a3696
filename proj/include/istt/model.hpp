#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "istt/autograd.hpp"
#include "istt/frontend.hpp"
#include "istt/vocab.hpp"

namespace istt {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  double dropout = 0.1;
  double lambda_cross = 0.3;  // how much of the partner stream enters each layer
  int wait_k = 0;             // translation lags transcription by k positions
  int max_positions = 512;
  int vocab_size = 0;
  int feature_dim = 320;  // stacked encoder input width

  void validate() const;
  static ModelConfig toy();               // the defaults above
  static ModelConfig transformer_base();  // 6 layers, 512 wide, 8 heads, 2048 ff

  std::string to_text() const;  // key=value lines, embedded in checkpoints
  static ModelConfig from_text(const std::string& text);
};

struct AttentionWeights {
  Param wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormWeights {
  Param gain, bias;
};

struct FfnWeights {
  Param w1, b1, w2, b2;
};

struct EncoderLayerWeights {
  AttentionWeights self_attn;
  LayerNormWeights ln_attn;
  FfnWeights ffn;
  LayerNormWeights ln_ffn;
};

// One decoder weight set; both streams read it, distinguished only by their
// start labels. The interactive sub-layer's cross path reuses the same q/k/v/o
// projections, so the parameter count matches a plain multi-task decoder.
struct DecoderLayerWeights {
  AttentionWeights inter_attn;
  LayerNormWeights ln_inter;
  AttentionWeights encdec_attn;
  LayerNormWeights ln_encdec;
  FfnWeights ffn;
  LayerNormWeights ln_ffn;
};

class ModelParams {
 public:
  ModelConfig cfg;
  Param input_proj_w, input_proj_b;
  std::vector<EncoderLayerWeights> encoder;
  std::vector<DecoderLayerWeights> decoder;
  Param embedding;  // vocab x d
  Param output_w;   // d x vocab
  Param output_b;
  Tensor positional;  // fixed sinusoidal table, max_positions x d

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, Param*>> named_params();
  std::vector<Param*> param_list();
  long param_count() const;

  void save(const std::filesystem::path& path, const std::string& extra_metadata = "") const;
  static ModelParams load(const std::filesystem::path& path);
};

Tensor sinusoidal_positions(int max_positions, int d_model);

// Causal masks for one stream: self over its own positions, cross over the
// partner's. Both open position j for row i iff j <= i (inclusive diagonal)
// and j is not padding.
std::pair<AttnMask, AttnMask> build_masks(int len_own, int len_partner,
                                          const std::vector<std::uint8_t>& pad_own,
                                          const std::vector<std::uint8_t>& pad_partner);

// cmvn + frame stacking for raw corpus features; already-stacked input passes
// through. Validates the width against cfg.feature_dim.
Tensor prepare_model_input(const FeatureSequence& fs, const ModelConfig& cfg);

// ---- interactive attention sub-layer (evaluation form) ----

struct InteractiveAttentionOut {
  Tensor h_self;   // attention over the stream's own prefix
  Tensor h_cross;  // attention over the partner's prefix
  Tensor h_fused;  // h_self + lambda * h_cross
  Tensor output;   // layer_norm(h_own + h_fused * Wo + bo)
};

InteractiveAttentionOut interactive_attention(const Tensor& h_own, const Tensor& h_partner,
                                              const AttnMask& self_mask,
                                              const AttnMask& cross_mask, double lambda,
                                              const AttentionWeights& w,
                                              const LayerNormWeights& ln, int n_heads);

// ---- tape forward (training path) ----

struct BoundAttention {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};
struct BoundLayerNorm {
  Var gain, bias;
};
struct BoundFfn {
  Var w1, b1, w2, b2;
};
struct BoundEncoderLayer {
  BoundAttention self_attn;
  BoundLayerNorm ln_attn;
  BoundFfn ffn;
  BoundLayerNorm ln_ffn;
};
struct BoundDecoderLayer {
  BoundAttention inter_attn;
  BoundLayerNorm ln_inter;
  BoundAttention encdec_attn;
  BoundLayerNorm ln_encdec;
  BoundFfn ffn;
  BoundLayerNorm ln_ffn;
};

// Parameter leaves on a tape; one binding is shared by every forward pass of
// a training step so gradients accumulate across the batch.
struct BoundParams {
  Var input_proj_w, input_proj_b;
  std::vector<BoundEncoderLayer> encoder;
  std::vector<BoundDecoderLayer> decoder;
  Var embedding, output_w, output_b;
};

BoundParams bind_params(Tape& tape, ModelParams& params);

struct DropoutCtx {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

// Acoustic encoder: input projection, positional encoding, then n_layers of
// unmasked self-attention + feed-forward, post-norm residuals throughout.
Var encode(Tape& tape, const Tensor& features, const BoundParams& bound, const ModelConfig& cfg,
           const Tensor& positional, DropoutCtx dropout = {});

struct DualLogits {
  Var rec, tr;  // [positions, vocab], pre-softmax
};

// Runs both decoder streams over the shared weights. Token vectors must be
// the same length (pad with <pad>); rec starts with <recog>, tr with <trans>
// followed by wait_k <delay> labels (or a prefix of them for short inputs).
// Layer-synchronous interaction: each stream's cross attention at layer l
// reads the partner's layer l-1 output.
DualLogits dual_forward(Tape& tape, Var memory, const std::vector<int>& rec_tokens,
                        const std::vector<int>& tr_tokens, const BoundParams& bound,
                        const ModelConfig& cfg, const Tensor& positional, DropoutCtx dropout = {});

// Convenience evaluation helpers (no gradients).
Tensor encode_memory(ModelParams& params, const FeatureSequence& features);
std::pair<Tensor, Tensor> dual_forward_eval(ModelParams& params, const Tensor& memory,
                                            const std::vector<int>& rec_tokens,
                                            const std::vector<int>& tr_tokens);

}  // namespace istt
