#include "istt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "istt/checkpoint.hpp"
#include "istt/config.hpp"
#include "istt/decode.hpp"
#include "istt/metrics.hpp"

namespace istt {

namespace fs = std::filesystem;

PreparedTargets prepare_targets(const std::vector<int>& x, const std::vector<int>& y, int k) {
  if (x.empty() || y.empty()) throw InputError("prepare_targets requires non-empty sequences");
  if (k < 0) throw InputError("wait_k must be >= 0");
  for (int tok : x)
    if (Vocabulary::is_special(tok))
      throw InputError("transcription contains a special token id " + std::to_string(tok));
  for (int tok : y)
    if (Vocabulary::is_special(tok))
      throw InputError("translation contains a special token id " + std::to_string(tok));

  PreparedTargets t;
  t.rec_in.push_back(Vocabulary::kRecog);
  t.rec_in.insert(t.rec_in.end(), x.begin(), x.end());
  t.rec_tgt = x;
  t.rec_tgt.push_back(Vocabulary::kEos);

  t.tr_in.push_back(Vocabulary::kTrans);
  t.tr_in.insert(t.tr_in.end(), static_cast<size_t>(k), Vocabulary::kDelay);
  t.tr_in.insert(t.tr_in.end(), y.begin(), y.end());
  t.tr_tgt.assign(static_cast<size_t>(k), Vocabulary::kDelay);
  t.tr_tgt.insert(t.tr_tgt.end(), y.begin(), y.end());
  t.tr_tgt.push_back(Vocabulary::kEos);

  const size_t len = std::max(t.rec_in.size(), t.tr_in.size());
  t.rec_in.resize(len, Vocabulary::kPad);
  t.tr_in.resize(len, Vocabulary::kPad);
  t.rec_tgt.resize(len, Vocabulary::kPad);
  t.tr_tgt.resize(len, Vocabulary::kPad);

  t.rec_loss_mask.assign(len, 0);
  for (size_t i = 0; i <= x.size(); ++i) t.rec_loss_mask[i] = 1;  // x then <eos>
  t.tr_loss_mask.assign(len, 0);
  for (size_t i = 0; i <= y.size(); ++i)
    t.tr_loss_mask[static_cast<size_t>(k) + i] = 1;  // y then <eos>; <delay> slots stay masked
  return t;
}

UttLoss utterance_loss(Tape& tape, const DualLogits& logits, const PreparedTargets& targets) {
  UttLoss out;
  out.rec_sum = tape.cross_entropy_sum(logits.rec, targets.rec_tgt, targets.rec_loss_mask);
  out.tr_sum = tape.cross_entropy_sum(logits.tr, targets.tr_tgt, targets.tr_loss_mask);
  for (auto m : targets.rec_loss_mask) out.rec_count += m;
  for (auto m : targets.tr_loss_mask) out.tr_count += m;
  return out;
}

JointLoss joint_loss(Tape& tape, const std::vector<UttLoss>& parts) {
  if (parts.empty()) throw ContractError("joint_loss over an empty batch");
  JointLoss out;
  Var total;
  for (const UttLoss& p : parts) {
    Var utt_total = tape.add(p.rec_sum, p.tr_sum);
    total = total.valid() ? tape.add(total, utt_total) : utt_total;
    out.rec_sum += tape.value(p.rec_sum).item();
    out.tr_sum += tape.value(p.tr_sum).item();
    out.rec_count += p.rec_count;
    out.tr_count += p.tr_count;
  }
  const long denom = out.rec_count + out.tr_count;
  if (denom == 0) throw ContractError("joint_loss: every target position is masked");
  out.loss = tape.scale(total, 1.0 / static_cast<double>(denom));
  return out;
}

namespace {

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::vector<std::vector<int>> epoch_batches(const std::vector<int>& lengths, int batch_size,
                                            std::uint64_t seed, long epoch) {
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  const int n = static_cast<int>(lengths.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(mix64(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);

  // bucket windows by length so batch members have similar frame counts
  const int window = batch_size * 4;
  for (int start = 0; start < n; start += window) {
    int end = std::min(n, start + window);
    std::stable_sort(order.begin() + start, order.begin() + end,
                     [&](int a, int b) { return lengths[static_cast<size_t>(a)] < lengths[static_cast<size_t>(b)]; });
  }

  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace {

struct PreparedCorpus {
  std::vector<Tensor> inputs;  // cmvn + stacked features
  std::vector<PreparedTargets> targets;
  std::vector<int> lengths;
};

PreparedCorpus prepare_corpus(const Corpus& corpus, const ModelConfig& cfg) {
  PreparedCorpus out;
  out.inputs.reserve(corpus.utts.size());
  out.targets.reserve(corpus.utts.size());
  for (const Utterance& utt : corpus.utts) {
    out.inputs.push_back(prepare_model_input(utt.features, cfg));
    out.targets.push_back(prepare_targets(utt.transcription, utt.translation, cfg.wait_k));
    out.lengths.push_back(out.inputs.back().rows());
  }
  return out;
}

double dev_metric(ModelParams& params, const Corpus& dev, const std::string& selection) {
  if (selection == "loss") return corpus_joint_loss(params, dev);
  // greedy decode against references
  std::vector<std::vector<std::string>> rec_hyps, rec_refs, tr_hyps, tr_refs;
  BeamConfig bc;
  bc.beam_size = 1;
  for (const Utterance& utt : dev.utts) {
    Tensor memory = encode_memory(params, utt.features);
    DecodeResult r = greedy_decode(params, memory, bc);
    auto to_strings = [&](const std::vector<int>& ids) {
      std::vector<std::string> out;
      for (int id : ids) out.push_back(dev.vocab.token(id));
      return out;
    };
    rec_hyps.push_back(to_strings(r.transcription));
    rec_refs.push_back(to_strings(utt.transcription));
    tr_hyps.push_back(to_strings(r.translation));
    tr_refs.push_back(to_strings(utt.translation));
  }
  if (selection == "wer") {
    long edits = 0, ref = 0;
    for (size_t i = 0; i < rec_hyps.size(); ++i) {
      edits += edit_distance(rec_hyps[i], rec_refs[i]);
      ref += static_cast<long>(rec_refs[i].size());
    }
    return static_cast<double>(edits) / static_cast<double>(std::max<long>(ref, 1));
  }
  if (selection == "bleu") return -bleu(tr_hyps, tr_refs);  // lower is better internally
  throw InputError("unknown checkpoint selection: " + selection + " (expected loss|wer|bleu)");
}

}  // namespace

double corpus_joint_loss(ModelParams& params, const Corpus& corpus) {
  if (corpus.utts.empty()) throw InputError("corpus_joint_loss over an empty corpus");
  double total = 0.0;
  long count = 0;
  for (const Utterance& utt : corpus.utts) {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    Tensor input = prepare_model_input(utt.features, params.cfg);
    Var mem = encode(tape, input, bound, params.cfg, params.positional);
    PreparedTargets tgt = prepare_targets(utt.transcription, utt.translation, params.cfg.wait_k);
    DualLogits logits = dual_forward(tape, mem, tgt.rec_in, tgt.tr_in, bound, params.cfg,
                                     params.positional);
    UttLoss ul = utterance_loss(tape, logits, tgt);
    total += tape.value(ul.rec_sum).item() + tape.value(ul.tr_sum).item();
    count += ul.rec_count + ul.tr_count;
  }
  return total / static_cast<double>(count);
}

void save_training_state(const fs::path& path, ModelParams& params, const AdamState& state,
                         long step) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  auto named = params.named_params();
  for (auto& [name, p] : named) tensors.emplace_back(name, &p->value);
  for (size_t i = 0; i < named.size(); ++i)
    tensors.emplace_back("adam.m." + named[i].first, &state.first_moment[i]);
  for (size_t i = 0; i < named.size(); ++i)
    tensors.emplace_back("adam.v." + named[i].first, &state.second_moment[i]);
  std::string metadata = params.cfg.to_text();
  metadata += "train.step=" + std::to_string(step) + "\n";
  save_checkpoint(path, tensors, metadata);
}

TrainingState load_training_state(const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  TrainingState st;
  st.params = ModelParams::init(ModelConfig::from_text(ck.metadata), 0);
  auto named = st.params.named_params();
  st.adam = AdamState::init(st.params.param_list());
  for (size_t i = 0; i < named.size(); ++i) {
    const Tensor* v = ck.find(named[i].first);
    const Tensor* m = ck.find("adam.m." + named[i].first);
    const Tensor* s = ck.find("adam.v." + named[i].first);
    if (!v || !m || !s)
      throw IoError("training state " + path.string() + " is missing " + named[i].first);
    named[i].second->value = *v;
    named[i].second->zero_grad();
    st.adam.first_moment[i] = *m;
    st.adam.second_moment[i] = *s;
  }
  st.step = KvConfig::parse(ck.metadata).get_long("train.step", 0);
  st.adam.step_count = st.step;
  return st;
}

TrainResult train(const Corpus& train_corpus, const Corpus* dev_corpus, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const fs::path& out_dir) {
  if (train_corpus.utts.empty()) throw InputError("training corpus is empty");
  ModelConfig cfg = mcfg;
  if (cfg.vocab_size == 0) cfg.vocab_size = train_corpus.vocab.size();
  if (cfg.vocab_size != train_corpus.vocab.size())
    throw InputError("model vocab_size " + std::to_string(cfg.vocab_size) +
                     " does not match corpus vocabulary of " +
                     std::to_string(train_corpus.vocab.size()));
  cfg.validate();
  fs::create_directories(out_dir);

  ModelParams params = ModelParams::init(cfg, tcfg.seed);
  AdamState adam = AdamState::init(params.param_list());
  long start_step = 0;
  if (!tcfg.resume.empty()) {
    TrainingState st = load_training_state(tcfg.resume);
    if (st.params.cfg.to_text() != cfg.to_text())
      throw InputError("resume state config does not match the requested configuration");
    params = std::move(st.params);
    adam = std::move(st.adam);
    start_step = st.step;
  }

  PreparedCorpus data = prepare_corpus(train_corpus, cfg);
  const long batches_per_epoch =
      (static_cast<long>(data.inputs.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
  LrSchedule sched{cfg.d_model, tcfg.warmup_steps, tcfg.lr_scale};
  std::vector<Param*> plist = params.param_list();

  std::ofstream log(out_dir / "metrics.log", std::ios::app);
  if (!log) throw IoError("cannot open metrics log: " + (out_dir / "metrics.log").string());
  log.precision(10);

  TrainResult result;
  result.final_checkpoint = out_dir / "ckpt_final.bin";
  double best = 1e300;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::vector<int>> batches;
  long batches_epoch = -1;

  for (long step = start_step + 1; step <= tcfg.steps; ++step) {
    const long epoch = (step - 1) / batches_per_epoch;
    const long slot = (step - 1) % batches_per_epoch;
    if (epoch != batches_epoch) {
      batches = epoch_batches(data.lengths, tcfg.batch_size, tcfg.seed, epoch);
      batches_epoch = epoch;
    }

    double loss_val = 0.0, rec_loss = 0.0, tr_loss = 0.0;
    try {
      Tape tape;
      BoundParams bound = bind_params(tape, params);
      std::mt19937_64 dropout_rng(mix64(tcfg.seed ^ 0xd50f00d5ull, static_cast<std::uint64_t>(step)));
      DropoutCtx dropout{cfg.dropout, &dropout_rng};

      std::vector<UttLoss> parts;
      parts.reserve(batches[static_cast<size_t>(slot)].size());
      for (int ui : batches[static_cast<size_t>(slot)]) {
        Var mem = encode(tape, data.inputs[static_cast<size_t>(ui)], bound, cfg,
                         params.positional, dropout);
        const PreparedTargets& tgt = data.targets[static_cast<size_t>(ui)];
        DualLogits logits =
            dual_forward(tape, mem, tgt.rec_in, tgt.tr_in, bound, cfg, params.positional, dropout);
        parts.push_back(utterance_loss(tape, logits, tgt));
      }
      JointLoss jl = joint_loss(tape, parts);
      loss_val = tape.value(jl.loss).item();
      rec_loss = jl.rec_count ? jl.rec_sum / static_cast<double>(jl.rec_count) : 0.0;
      tr_loss = jl.tr_count ? jl.tr_sum / static_cast<double>(jl.tr_count) : 0.0;
      tape.backward(jl.loss);
      adam_step(plist, adam, sched.lr(step), tcfg.adam);
      zero_grads(plist);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }

    result.loss_history.push_back(loss_val);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << step << '\t' << loss_val << '\t' << rec_loss << '\t' << tr_loss << '\t'
        << sched.lr(step) << '\t' << wall << '\n';
    if (!tcfg.quiet && (step == 1 || step % tcfg.log_every == 0 || step == tcfg.steps))
      std::printf("step %ld  loss %.4f  rec %.4f  tr %.4f  lr %.5g\n", step, loss_val, rec_loss,
                  tr_loss, sched.lr(step));

    if (step % tcfg.checkpoint_every == 0 || step == tcfg.steps) {
      params.save(out_dir / "ckpt_last.bin", "train.step=" + std::to_string(step) + "\n");
      save_training_state(out_dir / "state_last.bin", params, adam, step);
      if (dev_corpus) {
        double metric = dev_metric(params, *dev_corpus, tcfg.selection);
        std::ofstream dev_log(out_dir / "dev_metrics.log", std::ios::app);
        dev_log << step << '\t' << tcfg.selection << '\t' << metric << '\n';
        if (metric < best) {
          best = metric;
          params.save(out_dir / "ckpt_best.bin", "train.step=" + std::to_string(step) + "\n");
          result.best_checkpoint = out_dir / "ckpt_best.bin";
        }
      }
    }
  }

  params.save(result.final_checkpoint, "train.step=" + std::to_string(tcfg.steps) + "\n");
  result.best_dev_metric = best;
  log.flush();
  return result;
}

}  // namespace istt
