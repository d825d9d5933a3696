#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "istt/stepper.hpp"

namespace istt {

struct BeamConfig {
  int beam_size = 4;
  int max_len = 0;  // 0 = 2 * encoder frames + 10, capped by max_positions
  double length_penalty = 0.6;

  void validate() const;
  int resolve_max_len(int memory_frames, int max_positions) const;
};

// One paired beam item. Prefixes include the start labels at position 0 and
// stay the same length at every step; a finished stream keeps re-emitting
// <eos> so the partner can still attend to it.
struct DualHypothesis {
  std::vector<int> rec_prefix, tr_prefix;
  double rec_score = 0.0, tr_score = 0.0;  // sums of emission log-probs
  bool rec_done = false, tr_done = false;
  DualStepper stepper;
  Tensor rec_logp, tr_logp;  // next-token log-probs at the frontier

  DualHypothesis(DualStepper s) : stepper(std::move(s)) {}
  bool finished() const { return rec_done && tr_done; }
};

struct DecodeResult {
  std::vector<int> rec_raw, tr_raw;  // emitted tokens (no start labels)
  std::vector<int> transcription, translation;  // specials stripped
  double rec_score = 0.0, tr_score = 0.0;
  bool truncated = false;
};

std::vector<int> strip_specials(const std::vector<int>& seq);

// Joint selection value: sum of per-stream scores, each normalized by
// (non-special token count)^alpha.
double joint_selection_score(const DualHypothesis& hyp, double alpha);

DecodeResult greedy_decode(const ModelParams& params, const Tensor& memory,
                           const BeamConfig& cfg);

// Synchronous paired-beam search. Each stream expands its top candidates,
// the per-stream pools are pruned to beam_size, and pairs are re-formed
// rank-to-rank. The translation stream's first wait_k emissions are forced
// <delay> labels carrying no score.
DecodeResult synchronous_beam_search(const ModelParams& params, const Tensor& memory,
                                     const BeamConfig& cfg);

// Decode output file: one tab-separated record per utterance.
struct DecodeRecord {
  std::string id;
  std::vector<std::string> transcription, translation;
  double rec_score = 0.0, tr_score = 0.0;
};

void save_decode_records(const std::filesystem::path& path,
                         const std::vector<DecodeRecord>& records);
std::vector<DecodeRecord> load_decode_records(const std::filesystem::path& path);

}  // namespace istt
