#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "istt/adam.hpp"
#include "istt/model.hpp"
#include "istt/toy_data.hpp"

namespace istt {

// Decoder inputs/targets for one utterance. Inputs are the targets shifted
// right with the stream start labels prepended; the translation input carries
// wait_k <delay> labels whose target positions are excluded from the loss.
// Both streams are padded with <pad> to a common length.
struct PreparedTargets {
  std::vector<int> rec_in, rec_tgt, tr_in, tr_tgt;
  std::vector<std::uint8_t> rec_loss_mask, tr_loss_mask;

  int length() const { return static_cast<int>(rec_in.size()); }
};

PreparedTargets prepare_targets(const std::vector<int>& x, const std::vector<int>& y, int k);

struct UttLoss {
  Var rec_sum, tr_sum;  // cross-entropy sums over unmasked positions
  long rec_count = 0, tr_count = 0;
};

UttLoss utterance_loss(Tape& tape, const DualLogits& logits, const PreparedTargets& targets);

// Joint objective over a batch, normalized by the total unmasked target count.
struct JointLoss {
  Var loss;
  double rec_sum = 0.0, tr_sum = 0.0;
  long rec_count = 0, tr_count = 0;
};

JointLoss joint_loss(Tape& tape, const std::vector<UttLoss>& parts);

// Deterministic per-epoch batch order: seeded shuffle, light length
// bucketing, then a shuffle of the batch order.
std::vector<std::vector<int>> epoch_batches(const std::vector<int>& lengths, int batch_size,
                                            std::uint64_t seed, long epoch);

struct TrainConfig {
  long steps = 2000;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double lr_scale = 1.0;
  int warmup_steps = 400;
  AdamConfig adam;
  long checkpoint_every = 500;
  long log_every = 50;             // stdout echo cadence (the log file gets every step)
  std::string selection = "loss";  // loss | wer | bleu
  std::filesystem::path resume;    // training state file, empty = fresh start
  bool quiet = false;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;  // empty when no dev corpus given
  std::vector<double> loss_history;       // losses of the steps this call ran
  double best_dev_metric = 0.0;
};

// Seeded training loop: per step batch -> dual_forward -> joint loss ->
// backward -> adam. Writes metrics.log (one record per step), periodic
// checkpoints plus a resumable training state, and ckpt_final.bin.
TrainResult train(const Corpus& train_corpus, const Corpus* dev_corpus, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::filesystem::path& out_dir);

// Forward-only joint loss of a corpus under the current parameters.
double corpus_joint_loss(ModelParams& params, const Corpus& corpus);

// Training state container (parameters + optimizer moments + step counter).
void save_training_state(const std::filesystem::path& path, ModelParams& params,
                         const AdamState& state, long step);
struct TrainingState {
  ModelParams params;
  AdamState adam;
  long step = 0;
};
TrainingState load_training_state(const std::filesystem::path& path);

}  // namespace istt
