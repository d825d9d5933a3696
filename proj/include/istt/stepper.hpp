#pragma once

#include <memory>
#include <vector>

#include "istt/model.hpp"

namespace istt {

// Per-stream incremental decoding state: the tokens consumed so far plus
// per-layer projected key/value caches. Because both streams share the
// decoder weights, a stream's self-attention K/V cache doubles as the
// partner's cross-attention cache.
struct StreamState {
  std::vector<int> tokens;
  // per layer, rows appended as positions arrive
  std::vector<std::vector<double>> keys, values;
};

// Evaluates the dual decoder one position at a time over a fixed memory.
// step() must reproduce a full dual_forward over the same prefixes exactly
// (the caches are never allowed to drift from a re-forward).
class DualStepper {
 public:
  DualStepper(const ModelParams& params, Tensor memory);

  struct StepLogits {
    Tensor rec, tr;  // [1, vocab]
  };

  // Appends one token to each stream and returns the next-token logits of
  // both streams at the new position. The first call must feed the start
  // labels (<recog>, <trans>).
  StepLogits step(int rec_token, int tr_token);

  int length() const { return len_; }
  const std::vector<int>& rec_tokens() const { return rec_.tokens; }
  const std::vector<int>& tr_tokens() const { return tr_.tokens; }
  int memory_frames() const { return memory_rows_; }

  // copies share the model and the projected memory caches
  DualStepper(const DualStepper&) = default;
  DualStepper& operator=(const DualStepper&) = default;

 private:
  const ModelParams* params_;
  std::shared_ptr<const std::vector<std::pair<Tensor, Tensor>>> memory_kv_;  // per layer
  int memory_rows_ = 0;
  int len_ = 0;
  StreamState rec_, tr_;
};

}  // namespace istt
