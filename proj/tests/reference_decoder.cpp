#include "reference_decoder.hpp"

#include <cmath>

namespace istt::testing {

Var reference_decoder_forward(Tape& tape, Var memory, const std::vector<int>& tokens,
                              const BoundParams& bound, const ModelConfig& cfg,
                              const Tensor& positional) {
  const int len = static_cast<int>(tokens.size());

  // causal mask over the stream's own positions, pad columns closed
  AttnMask self_mask(len, len);
  for (int i = 0; i < len; ++i)
    for (int j = 0; j <= i; ++j)
      if (tokens[static_cast<size_t>(j)] != Vocabulary::kPad) self_mask.set(i, j, true);
  AttnMask mem_mask = AttnMask::all_open(len, tape.value(memory).rows());

  Var x = tape.scale(tape.embedding(bound.embedding, tokens),
                     std::sqrt(static_cast<double>(cfg.d_model)));
  Tensor pe({len, cfg.d_model});
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < cfg.d_model; ++j) pe(i, j) = positional(i, j);
  x = tape.add(x, tape.constant(std::move(pe)));

  for (const auto& layer : bound.decoder) {
    const BoundAttention& w = layer.inter_attn;
    Var q = tape.add_row_bias(tape.matmul(x, w.wq), w.bq);
    Var k = tape.add_row_bias(tape.matmul(x, w.wk), w.bk);
    Var v = tape.add_row_bias(tape.matmul(x, w.wv), w.bv);
    Var h = tape.attention(q, k, v, self_mask, cfg.n_heads);
    Var a = tape.layer_norm(tape.add(x, tape.add_row_bias(tape.matmul(h, w.wo), w.bo)),
                            layer.ln_inter.gain, layer.ln_inter.bias, 1e-6);

    const BoundAttention& m = layer.encdec_attn;
    Var q2 = tape.add_row_bias(tape.matmul(a, m.wq), m.bq);
    Var k2 = tape.add_row_bias(tape.matmul(memory, m.wk), m.bk);
    Var v2 = tape.add_row_bias(tape.matmul(memory, m.wv), m.bv);
    Var h2 = tape.attention(q2, k2, v2, mem_mask, cfg.n_heads);
    Var b = tape.layer_norm(tape.add(a, tape.add_row_bias(tape.matmul(h2, m.wo), m.bo)),
                            layer.ln_encdec.gain, layer.ln_encdec.bias, 1e-6);

    Var f1 = tape.relu(tape.add_row_bias(tape.matmul(b, layer.ffn.w1), layer.ffn.b1));
    Var f = tape.add_row_bias(tape.matmul(f1, layer.ffn.w2), layer.ffn.b2);
    x = tape.layer_norm(tape.add(b, f), layer.ln_ffn.gain, layer.ln_ffn.bias, 1e-6);
  }
  return tape.add_row_bias(tape.matmul(x, bound.output_w), bound.output_b);
}

std::vector<double> reference_multitask_losses(const Corpus& corpus, const ModelConfig& mcfg,
                                               const TrainConfig& tcfg) {
  ModelConfig cfg = mcfg;
  if (cfg.vocab_size == 0) cfg.vocab_size = corpus.vocab.size();
  ModelParams params = ModelParams::init(cfg, tcfg.seed);
  AdamState adam = AdamState::init(params.param_list());
  LrSchedule sched{cfg.d_model, tcfg.warmup_steps, tcfg.lr_scale};
  std::vector<Param*> plist = params.param_list();

  std::vector<Tensor> inputs;
  std::vector<PreparedTargets> targets;
  std::vector<int> lengths;
  for (const Utterance& utt : corpus.utts) {
    inputs.push_back(prepare_model_input(utt.features, cfg));
    targets.push_back(prepare_targets(utt.transcription, utt.translation, cfg.wait_k));
    lengths.push_back(inputs.back().rows());
  }
  const long bpe = (static_cast<long>(inputs.size()) + tcfg.batch_size - 1) / tcfg.batch_size;

  std::vector<double> losses;
  std::vector<std::vector<int>> batches;
  long batches_epoch = -1;
  for (long step = 1; step <= tcfg.steps; ++step) {
    const long epoch = (step - 1) / bpe;
    if (epoch != batches_epoch) {
      batches = epoch_batches(lengths, tcfg.batch_size, tcfg.seed, epoch);
      batches_epoch = epoch;
    }
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    std::vector<UttLoss> parts;
    for (int ui : batches[static_cast<size_t>((step - 1) % bpe)]) {
      Var mem = encode(tape, inputs[static_cast<size_t>(ui)], bound, cfg, params.positional);
      const PreparedTargets& tgt = targets[static_cast<size_t>(ui)];
      DualLogits logits;
      logits.rec = reference_decoder_forward(tape, mem, tgt.rec_in, bound, cfg, params.positional);
      logits.tr = reference_decoder_forward(tape, mem, tgt.tr_in, bound, cfg, params.positional);
      parts.push_back(utterance_loss(tape, logits, tgt));
    }
    JointLoss jl = joint_loss(tape, parts);
    losses.push_back(tape.value(jl.loss).item());
    tape.backward(jl.loss);
    adam_step(plist, adam, sched.lr(step), tcfg.adam);
    zero_grads(plist);
  }
  return losses;
}

}  // namespace istt::testing
