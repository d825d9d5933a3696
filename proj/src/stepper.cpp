#include "istt/stepper.hpp"

#include <cmath>

namespace istt {

namespace {

constexpr double kLnEps = 1e-6;

Tensor rows_tensor(const std::vector<double>& data, int cols) {
  const int rows = static_cast<int>(data.size()) / cols;
  return Tensor({rows, cols}, data);
}

void append_row(std::vector<double>& buf, const Tensor& row) {
  buf.insert(buf.end(), row.data(), row.data() + row.numel());
}

Tensor project(const Tensor& x, const Param& w, const Param& b) {
  return add_row_bias(matmul(x, w.value), b.value);
}

}  // namespace

DualStepper::DualStepper(const ModelParams& params, Tensor memory) : params_(&params) {
  const ModelConfig& cfg = params.cfg;
  if (memory.rank() != 2 || memory.cols() != cfg.d_model)
    throw ShapeError("stepper memory must be [frames, d_model], got " + memory.shape_str());
  memory_rows_ = memory.rows();

  auto kv = std::make_shared<std::vector<std::pair<Tensor, Tensor>>>();
  kv->reserve(params.decoder.size());
  for (const auto& layer : params.decoder)
    kv->emplace_back(project(memory, layer.encdec_attn.wk, layer.encdec_attn.bk),
                     project(memory, layer.encdec_attn.wv, layer.encdec_attn.bv));
  memory_kv_ = std::move(kv);

  rec_.keys.resize(params.decoder.size());
  rec_.values.resize(params.decoder.size());
  tr_.keys.resize(params.decoder.size());
  tr_.values.resize(params.decoder.size());
}

DualStepper::StepLogits DualStepper::step(int rec_token, int tr_token) {
  const ModelConfig& cfg = params_->cfg;
  if (len_ == 0) {
    if (rec_token != Vocabulary::kRecog || tr_token != Vocabulary::kTrans)
      throw ContractError("first step must feed the <recog>/<trans> start labels");
  }
  if (len_ >= cfg.max_positions)
    throw InputError("decoder length exceeds max_positions (" +
                     std::to_string(cfg.max_positions) + ")");
  for (int tok : {rec_token, tr_token})
    if (tok < 0 || tok >= cfg.vocab_size)
      throw InputError("token id " + std::to_string(tok) + " outside vocab");

  const int pos = len_;
  const int d = cfg.d_model;
  const double emb_scale = std::sqrt(static_cast<double>(d));

  auto embed = [&](int tok) {
    Tensor x({1, d});
    for (int j = 0; j < d; ++j)
      x(0, j) = params_->embedding.value(tok, j) * emb_scale + params_->positional(pos, j);
    return x;
  };
  Tensor x_rec = embed(rec_token);
  Tensor x_tr = embed(tr_token);

  const int rows = pos + 1;
  const AttnMask open_row = AttnMask::all_open(1, rows);
  const AttnMask mem_row = AttnMask::all_open(1, memory_rows_);

  for (size_t l = 0; l < params_->decoder.size(); ++l) {
    const DecoderLayerWeights& w = params_->decoder[l];
    // append this position's projected K/V for both streams first: the cross
    // mask is inclusive, so each stream reads the partner's current position
    append_row(rec_.keys[l], project(x_rec, w.inter_attn.wk, w.inter_attn.bk));
    append_row(rec_.values[l], project(x_rec, w.inter_attn.wv, w.inter_attn.bv));
    append_row(tr_.keys[l], project(x_tr, w.inter_attn.wk, w.inter_attn.bk));
    append_row(tr_.values[l], project(x_tr, w.inter_attn.wv, w.inter_attn.bv));

    Tensor k_rec = rows_tensor(rec_.keys[l], d);
    Tensor v_rec = rows_tensor(rec_.values[l], d);
    Tensor k_tr = rows_tensor(tr_.keys[l], d);
    Tensor v_tr = rows_tensor(tr_.values[l], d);

    auto layer_row = [&](const Tensor& x, const Tensor& k_own, const Tensor& v_own,
                         const Tensor& k_par, const Tensor& v_par) {
      Tensor q = project(x, w.inter_attn.wq, w.inter_attn.bq);
      Tensor h_self = multi_head_attention(q, k_own, v_own, open_row, cfg.n_heads);
      Tensor fused = h_self;
      if (cfg.lambda_cross != 0.0) {
        Tensor h_cross = multi_head_attention(q, k_par, v_par, open_row, cfg.n_heads);
        fused = add(h_self, scale(h_cross, cfg.lambda_cross));
      }
      Tensor a = layer_norm(add(x, project(fused, w.inter_attn.wo, w.inter_attn.bo)),
                            w.ln_inter.gain.value, w.ln_inter.bias.value, kLnEps);
      Tensor q2 = project(a, w.encdec_attn.wq, w.encdec_attn.bq);
      Tensor h_mem = multi_head_attention(q2, (*memory_kv_)[l].first, (*memory_kv_)[l].second,
                                          mem_row, cfg.n_heads);
      Tensor b = layer_norm(add(a, project(h_mem, w.encdec_attn.wo, w.encdec_attn.bo)),
                            w.ln_encdec.gain.value, w.ln_encdec.bias.value, kLnEps);
      Tensor f = project(relu(project(b, w.ffn.w1, w.ffn.b1)), w.ffn.w2, w.ffn.b2);
      return layer_norm(add(b, f), w.ln_ffn.gain.value, w.ln_ffn.bias.value, kLnEps);
    };

    Tensor next_rec = layer_row(x_rec, k_rec, v_rec, k_tr, v_tr);
    Tensor next_tr = layer_row(x_tr, k_tr, v_tr, k_rec, v_rec);
    x_rec = std::move(next_rec);
    x_tr = std::move(next_tr);
  }

  rec_.tokens.push_back(rec_token);
  tr_.tokens.push_back(tr_token);
  ++len_;

  StepLogits out;
  out.rec = project(x_rec, params_->output_w, params_->output_b);
  out.tr = project(x_tr, params_->output_w, params_->output_b);
  return out;
}

}  // namespace istt
