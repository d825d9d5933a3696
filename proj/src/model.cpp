#include "istt/model.hpp"

#include <cmath>

#include "istt/checkpoint.hpp"
#include "istt/config.hpp"

namespace istt {

void ModelConfig::validate() const {
  if (n_layers < 1) throw InputError("model needs at least one layer");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw InputError("d_model must be a positive multiple of n_heads");
  if (d_ff < 1) throw InputError("d_ff must be positive");
  if (lambda_cross < 0.0) throw InputError("lambda_cross must be >= 0");
  if (wait_k < 0) throw InputError("wait_k must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw InputError("dropout must be in [0,1)");
  if (vocab_size <= Vocabulary::kNumSpecials)
    throw InputError("vocab_size must exceed the special token count");
  if (max_positions < 2) throw InputError("max_positions too small");
  if (feature_dim < 1) throw InputError("feature_dim must be positive");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::transformer_base() {
  ModelConfig cfg;
  cfg.n_layers = 6;
  cfg.d_model = 512;
  cfg.n_heads = 8;
  cfg.d_ff = 2048;
  return cfg;
}

std::string ModelConfig::to_text() const {
  KvConfig kv;
  kv.set_long("model.n_layers", n_layers);
  kv.set_long("model.d_model", d_model);
  kv.set_long("model.n_heads", n_heads);
  kv.set_long("model.d_ff", d_ff);
  kv.set_double("model.dropout", dropout);
  kv.set_double("model.lambda", lambda_cross);
  kv.set_long("model.wait_k", wait_k);
  kv.set_long("model.max_positions", max_positions);
  kv.set_long("model.vocab_size", vocab_size);
  kv.set_long("model.feature_dim", feature_dim);
  return kv.serialize();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  KvConfig kv = KvConfig::parse(text);
  ModelConfig cfg;
  cfg.n_layers = static_cast<int>(kv.get_long("model.n_layers", cfg.n_layers));
  cfg.d_model = static_cast<int>(kv.get_long("model.d_model", cfg.d_model));
  cfg.n_heads = static_cast<int>(kv.get_long("model.n_heads", cfg.n_heads));
  cfg.d_ff = static_cast<int>(kv.get_long("model.d_ff", cfg.d_ff));
  cfg.dropout = kv.get_double("model.dropout", cfg.dropout);
  cfg.lambda_cross = kv.get_double("model.lambda", cfg.lambda_cross);
  cfg.wait_k = static_cast<int>(kv.get_long("model.wait_k", cfg.wait_k));
  cfg.max_positions = static_cast<int>(kv.get_long("model.max_positions", cfg.max_positions));
  cfg.vocab_size = static_cast<int>(kv.get_long("model.vocab_size", cfg.vocab_size));
  cfg.feature_dim = static_cast<int>(kv.get_long("model.feature_dim", cfg.feature_dim));
  return cfg;
}

Tensor sinusoidal_positions(int max_positions, int d_model) {
  Tensor pe({max_positions, d_model});
  for (int pos = 0; pos < max_positions; ++pos) {
    for (int i = 0; i < d_model / 2; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * i / d_model);
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

namespace {

struct Init {
  std::mt19937_64 rng;

  Param xavier(int fan_in, int fan_out) {
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor t({fan_in, fan_out});
    for (double& v : t.vec()) v = dist(rng);
    return Param(std::move(t));
  }
  Param normal_rows(int rows, int cols) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
    Tensor t({rows, cols});
    for (double& v : t.vec()) v = dist(rng);
    return Param(std::move(t));
  }
  Param zeros(int n) { return Param(Tensor({n})); }
  Param ones(int n) { return Param(Tensor::full({n}, 1.0)); }

  AttentionWeights attention(int d) {
    AttentionWeights w;
    w.wq = xavier(d, d);
    w.bq = zeros(d);
    w.wk = xavier(d, d);
    w.bk = zeros(d);
    w.wv = xavier(d, d);
    w.bv = zeros(d);
    w.wo = xavier(d, d);
    w.bo = zeros(d);
    return w;
  }
  LayerNormWeights layer_norm(int d) { return {ones(d), zeros(d)}; }
  FfnWeights ffn(int d, int d_ff) {
    FfnWeights f;
    f.w1 = xavier(d, d_ff);
    f.b1 = zeros(d_ff);
    f.w2 = xavier(d_ff, d);
    f.b2 = zeros(d);
    return f;
  }
};

constexpr double kLnEps = 1e-6;

void collect_attention(std::vector<std::pair<std::string, Param*>>& out, const std::string& prefix,
                       AttentionWeights& w) {
  out.emplace_back(prefix + ".wq", &w.wq);
  out.emplace_back(prefix + ".bq", &w.bq);
  out.emplace_back(prefix + ".wk", &w.wk);
  out.emplace_back(prefix + ".bk", &w.bk);
  out.emplace_back(prefix + ".wv", &w.wv);
  out.emplace_back(prefix + ".bv", &w.bv);
  out.emplace_back(prefix + ".wo", &w.wo);
  out.emplace_back(prefix + ".bo", &w.bo);
}

void collect_ln(std::vector<std::pair<std::string, Param*>>& out, const std::string& prefix,
                LayerNormWeights& ln) {
  out.emplace_back(prefix + ".gain", &ln.gain);
  out.emplace_back(prefix + ".bias", &ln.bias);
}

void collect_ffn(std::vector<std::pair<std::string, Param*>>& out, const std::string& prefix,
                 FfnWeights& f) {
  out.emplace_back(prefix + ".w1", &f.w1);
  out.emplace_back(prefix + ".b1", &f.b1);
  out.emplace_back(prefix + ".w2", &f.w2);
  out.emplace_back(prefix + ".b2", &f.b2);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  Init init{std::mt19937_64(seed)};

  p.input_proj_w = init.xavier(cfg.feature_dim, cfg.d_model);
  p.input_proj_b = init.zeros(cfg.d_model);
  for (int l = 0; l < cfg.n_layers; ++l) {
    EncoderLayerWeights enc;
    enc.self_attn = init.attention(cfg.d_model);
    enc.ln_attn = init.layer_norm(cfg.d_model);
    enc.ffn = init.ffn(cfg.d_model, cfg.d_ff);
    enc.ln_ffn = init.layer_norm(cfg.d_model);
    p.encoder.push_back(std::move(enc));
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    DecoderLayerWeights dec;
    dec.inter_attn = init.attention(cfg.d_model);
    dec.ln_inter = init.layer_norm(cfg.d_model);
    dec.encdec_attn = init.attention(cfg.d_model);
    dec.ln_encdec = init.layer_norm(cfg.d_model);
    dec.ffn = init.ffn(cfg.d_model, cfg.d_ff);
    dec.ln_ffn = init.layer_norm(cfg.d_model);
    p.decoder.push_back(std::move(dec));
  }
  p.embedding = init.normal_rows(cfg.vocab_size, cfg.d_model);
  p.output_w = init.xavier(cfg.d_model, cfg.vocab_size);
  p.output_b = init.zeros(cfg.vocab_size);
  p.positional = sinusoidal_positions(cfg.max_positions, cfg.d_model);
  return p;
}

std::vector<std::pair<std::string, Param*>> ModelParams::named_params() {
  std::vector<std::pair<std::string, Param*>> out;
  out.emplace_back("input_proj.w", &input_proj_w);
  out.emplace_back("input_proj.b", &input_proj_b);
  for (size_t l = 0; l < encoder.size(); ++l) {
    std::string prefix = "encoder." + std::to_string(l);
    collect_attention(out, prefix + ".self_attn", encoder[l].self_attn);
    collect_ln(out, prefix + ".ln_attn", encoder[l].ln_attn);
    collect_ffn(out, prefix + ".ffn", encoder[l].ffn);
    collect_ln(out, prefix + ".ln_ffn", encoder[l].ln_ffn);
  }
  for (size_t l = 0; l < decoder.size(); ++l) {
    std::string prefix = "decoder." + std::to_string(l);
    collect_attention(out, prefix + ".inter_attn", decoder[l].inter_attn);
    collect_ln(out, prefix + ".ln_inter", decoder[l].ln_inter);
    collect_attention(out, prefix + ".encdec_attn", decoder[l].encdec_attn);
    collect_ln(out, prefix + ".ln_encdec", decoder[l].ln_encdec);
    collect_ffn(out, prefix + ".ffn", decoder[l].ffn);
    collect_ln(out, prefix + ".ln_ffn", decoder[l].ln_ffn);
  }
  out.emplace_back("embedding", &embedding);
  out.emplace_back("output.w", &output_w);
  out.emplace_back("output.b", &output_b);
  return out;
}

std::vector<Param*> ModelParams::param_list() {
  std::vector<Param*> out;
  for (auto& [name, p] : named_params()) out.push_back(p);
  return out;
}

long ModelParams::param_count() const {
  long n = 0;
  auto& self = const_cast<ModelParams&>(*this);
  for (auto& [name, p] : self.named_params()) n += p->value.numel();
  return n;
}

void ModelParams::save(const std::filesystem::path& path, const std::string& extra_metadata) const {
  auto& self = const_cast<ModelParams&>(*this);
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (auto& [name, p] : self.named_params()) tensors.emplace_back(name, &p->value);
  std::string metadata = cfg.to_text();
  metadata += extra_metadata;
  save_checkpoint(path, tensors, metadata);
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  ModelConfig cfg = ModelConfig::from_text(ck.metadata);
  ModelParams params = ModelParams::init(cfg, 0);
  for (auto& [name, p] : params.named_params()) {
    const Tensor* t = ck.find(name);
    if (!t) throw IoError("checkpoint " + path.string() + " is missing parameter " + name);
    if (t->shape() != p->value.shape())
      throw IoError("checkpoint " + path.string() + " has wrong shape for " + name);
    p->value = *t;
    p->zero_grad();
  }
  return params;
}

std::pair<AttnMask, AttnMask> build_masks(int len_own, int len_partner,
                                          const std::vector<std::uint8_t>& pad_own,
                                          const std::vector<std::uint8_t>& pad_partner) {
  if (len_own < 1 || len_partner < 1) throw InputError("build_masks requires lengths >= 1");
  if (static_cast<int>(pad_own.size()) != len_own ||
      static_cast<int>(pad_partner.size()) != len_partner)
    throw InputError("build_masks pad flags do not match lengths");
  AttnMask self_mask(len_own, len_own);
  AttnMask cross_mask(len_own, len_partner);
  for (int i = 0; i < len_own; ++i) {
    for (int j = 0; j <= i && j < len_own; ++j)
      if (!pad_own[static_cast<size_t>(j)]) self_mask.set(i, j, true);
    for (int j = 0; j <= i && j < len_partner; ++j)
      if (!pad_partner[static_cast<size_t>(j)]) cross_mask.set(i, j, true);
  }
  return {std::move(self_mask), std::move(cross_mask)};
}

Tensor prepare_model_input(const FeatureSequence& fs, const ModelConfig& cfg) {
  FrontendConfig fe;
  Tensor out;
  if (fs.stacked) {
    out = fs.frames;
  } else {
    out = stack_downsample(cmvn(fs), fe.num_stack, fe.downsample_factor).frames;
  }
  if (out.cols() != cfg.feature_dim)
    throw InputError("feature width " + std::to_string(out.cols()) +
                     " does not match model feature_dim " + std::to_string(cfg.feature_dim));
  return out;
}

InteractiveAttentionOut interactive_attention(const Tensor& h_own, const Tensor& h_partner,
                                              const AttnMask& self_mask,
                                              const AttnMask& cross_mask, double lambda,
                                              const AttentionWeights& w,
                                              const LayerNormWeights& ln, int n_heads) {
  if (self_mask.rows != h_own.rows() || cross_mask.rows != h_own.rows() ||
      self_mask.cols != h_own.rows() || cross_mask.cols != h_partner.rows())
    throw ShapeError("interactive_attention mask lengths do not match hidden states");
  InteractiveAttentionOut out;
  Tensor q = add_row_bias(matmul(h_own, w.wq.value), w.bq.value);
  Tensor k1 = add_row_bias(matmul(h_own, w.wk.value), w.bk.value);
  Tensor v1 = add_row_bias(matmul(h_own, w.wv.value), w.bv.value);
  out.h_self = multi_head_attention(q, k1, v1, self_mask, n_heads);
  Tensor k2 = add_row_bias(matmul(h_partner, w.wk.value), w.bk.value);
  Tensor v2 = add_row_bias(matmul(h_partner, w.wv.value), w.bv.value);
  out.h_cross = multi_head_attention(q, k2, v2, cross_mask, n_heads);
  out.h_fused = add(out.h_self, scale(out.h_cross, lambda));
  Tensor proj = add_row_bias(matmul(out.h_fused, w.wo.value), w.bo.value);
  out.output = layer_norm(add(h_own, proj), ln.gain.value, ln.bias.value, 1e-6);
  return out;
}

namespace {

BoundAttention bind_attention(Tape& t, AttentionWeights& w) {
  return {t.param(w.wq), t.param(w.bq), t.param(w.wk), t.param(w.bk),
          t.param(w.wv), t.param(w.bv), t.param(w.wo), t.param(w.bo)};
}
BoundLayerNorm bind_ln(Tape& t, LayerNormWeights& ln) {
  return {t.param(ln.gain), t.param(ln.bias)};
}
BoundFfn bind_ffn(Tape& t, FfnWeights& f) {
  return {t.param(f.w1), t.param(f.b1), t.param(f.w2), t.param(f.b2)};
}

Var maybe_dropout(Tape& t, Var x, const DropoutCtx& d) {
  return d.active() ? t.dropout(x, d.rate, *d.rng) : x;
}

// post-norm residual helper: layer_norm(x + dropout(sub))
Var residual_norm(Tape& t, Var x, Var sub, const BoundLayerNorm& ln, const DropoutCtx& d) {
  return t.layer_norm(t.add(x, maybe_dropout(t, sub, d)), ln.gain, ln.bias, kLnEps);
}

Var projected_attention(Tape& t, Var q_in, Var kv_in, const BoundAttention& w,
                        const AttnMask& mask, int n_heads) {
  Var q = t.add_row_bias(t.matmul(q_in, w.wq), w.bq);
  Var k = t.add_row_bias(t.matmul(kv_in, w.wk), w.bk);
  Var v = t.add_row_bias(t.matmul(kv_in, w.wv), w.bv);
  return t.attention(q, k, v, mask, n_heads);
}

Var ffn_block(Tape& t, Var x, const BoundFfn& f) {
  return t.add_row_bias(t.matmul(t.relu(t.add_row_bias(t.matmul(x, f.w1), f.b1)), f.w2), f.b2);
}

std::vector<std::uint8_t> pad_flags(const std::vector<int>& tokens) {
  std::vector<std::uint8_t> pads(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) pads[i] = tokens[i] == Vocabulary::kPad ? 1 : 0;
  return pads;
}

void validate_stream_tokens(const std::vector<int>& tokens, int start_label, int wait_k,
                            int vocab_size, const char* stream) {
  if (tokens.empty()) throw InputError(std::string(stream) + " stream is empty");
  if (tokens[0] != start_label)
    throw InputError(std::string(stream) + " stream does not begin with its start label");
  for (int tok : tokens)
    if (tok < 0 || tok >= vocab_size)
      throw InputError("token id " + std::to_string(tok) + " outside vocab of " +
                       std::to_string(vocab_size));
  for (int i = 1; i <= wait_k && i < static_cast<int>(tokens.size()); ++i)
    if (tokens[static_cast<size_t>(i)] != Vocabulary::kDelay)
      throw InputError(std::string(stream) + " stream is missing its <delay> prefix");
}

// token embedding * sqrt(d) + positional encoding
Var embed_tokens(Tape& t, const std::vector<int>& tokens, const BoundParams& bound,
                 const ModelConfig& cfg, const Tensor& positional, const DropoutCtx& d) {
  Var emb = t.scale(t.embedding(bound.embedding, tokens),
                    std::sqrt(static_cast<double>(cfg.d_model)));
  Tensor pe({static_cast<int>(tokens.size()), cfg.d_model});
  for (size_t i = 0; i < tokens.size(); ++i)
    for (int j = 0; j < cfg.d_model; ++j) pe(static_cast<int>(i), j) = positional(static_cast<int>(i), j);
  return maybe_dropout(t, t.add(emb, t.constant(std::move(pe))), d);
}

// Everything after the interactive sub-layer's fusion for one stream:
// residual+norm, encoder-decoder attention, feed-forward.
Var decoder_layer_tail(Tape& t, Var x_own, Var fused, Var mem_k, Var mem_v,
                       const BoundDecoderLayer& w, const AttnMask& memory_mask,
                       const ModelConfig& cfg, const DropoutCtx& d) {
  Var proj = t.add_row_bias(t.matmul(fused, w.inter_attn.wo), w.inter_attn.bo);
  Var a = residual_norm(t, x_own, proj, w.ln_inter, d);

  Var q2 = t.add_row_bias(t.matmul(a, w.encdec_attn.wq), w.encdec_attn.bq);
  Var h_mem = t.attention(q2, mem_k, mem_v, memory_mask, cfg.n_heads);
  Var mem_proj = t.add_row_bias(t.matmul(h_mem, w.encdec_attn.wo), w.encdec_attn.bo);
  Var b = residual_norm(t, a, mem_proj, w.ln_encdec, d);

  return residual_norm(t, b, ffn_block(t, b, w.ffn), w.ln_ffn, d);
}

}  // namespace

BoundParams bind_params(Tape& tape, ModelParams& params) {
  BoundParams b;
  b.input_proj_w = tape.param(params.input_proj_w);
  b.input_proj_b = tape.param(params.input_proj_b);
  for (auto& enc : params.encoder) {
    BoundEncoderLayer layer;
    layer.self_attn = bind_attention(tape, enc.self_attn);
    layer.ln_attn = bind_ln(tape, enc.ln_attn);
    layer.ffn = bind_ffn(tape, enc.ffn);
    layer.ln_ffn = bind_ln(tape, enc.ln_ffn);
    b.encoder.push_back(layer);
  }
  for (auto& dec : params.decoder) {
    BoundDecoderLayer layer;
    layer.inter_attn = bind_attention(tape, dec.inter_attn);
    layer.ln_inter = bind_ln(tape, dec.ln_inter);
    layer.encdec_attn = bind_attention(tape, dec.encdec_attn);
    layer.ln_encdec = bind_ln(tape, dec.ln_encdec);
    layer.ffn = bind_ffn(tape, dec.ffn);
    layer.ln_ffn = bind_ln(tape, dec.ln_ffn);
    b.decoder.push_back(layer);
  }
  b.embedding = tape.param(params.embedding);
  b.output_w = tape.param(params.output_w);
  b.output_b = tape.param(params.output_b);
  return b;
}

Var encode(Tape& tape, const Tensor& features, const BoundParams& bound, const ModelConfig& cfg,
           const Tensor& positional, DropoutCtx dropout) {
  if (features.rank() != 2 || features.cols() != cfg.feature_dim)
    throw ShapeError("encode expects [frames, " + std::to_string(cfg.feature_dim) +
                     "] features, got " + features.shape_str());
  const int t_len = features.rows();
  if (t_len > cfg.max_positions)
    throw InputError("utterance has " + std::to_string(t_len) + " frames, max_positions is " +
                     std::to_string(cfg.max_positions));

  Var x = tape.add_row_bias(tape.matmul(tape.constant(features), bound.input_proj_w),
                            bound.input_proj_b);
  Tensor pe({t_len, cfg.d_model});
  for (int i = 0; i < t_len; ++i)
    for (int j = 0; j < cfg.d_model; ++j) pe(i, j) = positional(i, j);
  x = maybe_dropout(tape, tape.add(x, tape.constant(std::move(pe))), dropout);

  AttnMask open = AttnMask::all_open(t_len, t_len);
  for (const auto& layer : bound.encoder) {
    Var h = projected_attention(tape, x, x, layer.self_attn, open, cfg.n_heads);
    Var proj = tape.add_row_bias(tape.matmul(h, layer.self_attn.wo), layer.self_attn.bo);
    Var a = residual_norm(tape, x, proj, layer.ln_attn, dropout);
    x = residual_norm(tape, a, ffn_block(tape, a, layer.ffn), layer.ln_ffn, dropout);
  }
  return x;
}

DualLogits dual_forward(Tape& tape, Var memory, const std::vector<int>& rec_tokens,
                        const std::vector<int>& tr_tokens, const BoundParams& bound,
                        const ModelConfig& cfg, const Tensor& positional, DropoutCtx dropout) {
  validate_stream_tokens(rec_tokens, Vocabulary::kRecog, 0, cfg.vocab_size, "recognition");
  validate_stream_tokens(tr_tokens, Vocabulary::kTrans, cfg.wait_k, cfg.vocab_size, "translation");
  if (rec_tokens.size() != tr_tokens.size())
    throw InputError("stream lengths differ; pad them to a common length");
  const int len = static_cast<int>(rec_tokens.size());
  if (len > cfg.max_positions)
    throw InputError("decoder length " + std::to_string(len) + " exceeds max_positions");

  auto rec_pad = pad_flags(rec_tokens);
  auto tr_pad = pad_flags(tr_tokens);
  auto [rec_self, rec_cross] = build_masks(len, len, rec_pad, tr_pad);
  auto [tr_self, tr_cross] = build_masks(len, len, tr_pad, rec_pad);
  AttnMask memory_mask = AttnMask::all_open(len, tape.value(memory).rows());

  Var x_rec = embed_tokens(tape, rec_tokens, bound, cfg, positional, dropout);
  Var x_tr = embed_tokens(tape, tr_tokens, bound, cfg, positional, dropout);
  for (const auto& layer : bound.decoder) {
    const BoundAttention& w = layer.inter_attn;
    // one projection set per stream; a stream's K/V serve both its own
    // self-attention and the partner's cross-attention (shared weights)
    Var q_rec = tape.add_row_bias(tape.matmul(x_rec, w.wq), w.bq);
    Var k_rec = tape.add_row_bias(tape.matmul(x_rec, w.wk), w.bk);
    Var v_rec = tape.add_row_bias(tape.matmul(x_rec, w.wv), w.bv);
    Var q_tr = tape.add_row_bias(tape.matmul(x_tr, w.wq), w.bq);
    Var k_tr = tape.add_row_bias(tape.matmul(x_tr, w.wk), w.bk);
    Var v_tr = tape.add_row_bias(tape.matmul(x_tr, w.wv), w.bv);

    Var rec_fused = tape.attention(q_rec, k_rec, v_rec, rec_self, cfg.n_heads);
    Var tr_fused = tape.attention(q_tr, k_tr, v_tr, tr_self, cfg.n_heads);
    if (cfg.lambda_cross != 0.0) {
      rec_fused = tape.add_scaled(rec_fused, tape.attention(q_rec, k_tr, v_tr, rec_cross,
                                                            cfg.n_heads), cfg.lambda_cross);
      tr_fused = tape.add_scaled(tr_fused, tape.attention(q_tr, k_rec, v_rec, tr_cross,
                                                          cfg.n_heads), cfg.lambda_cross);
    }

    Var mem_k = tape.add_row_bias(tape.matmul(memory, layer.encdec_attn.wk), layer.encdec_attn.bk);
    Var mem_v = tape.add_row_bias(tape.matmul(memory, layer.encdec_attn.wv), layer.encdec_attn.bv);
    Var next_rec = decoder_layer_tail(tape, x_rec, rec_fused, mem_k, mem_v, layer, memory_mask,
                                      cfg, dropout);
    Var next_tr = decoder_layer_tail(tape, x_tr, tr_fused, mem_k, mem_v, layer, memory_mask, cfg,
                                     dropout);
    x_rec = next_rec;
    x_tr = next_tr;
  }
  DualLogits out;
  out.rec = tape.add_row_bias(tape.matmul(x_rec, bound.output_w), bound.output_b);
  out.tr = tape.add_row_bias(tape.matmul(x_tr, bound.output_w), bound.output_b);
  return out;
}

Tensor encode_memory(ModelParams& params, const FeatureSequence& features) {
  Tensor input = prepare_model_input(features, params.cfg);
  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Var mem = encode(tape, input, bound, params.cfg, params.positional);
  return tape.value(mem);
}

std::pair<Tensor, Tensor> dual_forward_eval(ModelParams& params, const Tensor& memory,
                                            const std::vector<int>& rec_tokens,
                                            const std::vector<int>& tr_tokens) {
  Tape tape;
  BoundParams bound = bind_params(tape, params);
  DualLogits logits = dual_forward(tape, tape.constant(memory), rec_tokens, tr_tokens, bound,
                                   params.cfg, params.positional);
  return {tape.value(logits.rec), tape.value(logits.tr)};
}

}  // namespace istt
