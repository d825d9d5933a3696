#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "istt/tensor.hpp"

namespace istt {

// Acoustic feature matrix, time-major [T, D], plus frame-rate metadata.
struct FeatureSequence {
  Tensor frames;                 // T x D
  double frame_period_ms = 10.0;
  bool stacked = false;

  int num_frames() const { return frames.rows(); }
  int dim() const { return frames.cols(); }
};

struct FrontendConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 80;
  int num_stack = 4;          // current frame plus 3 to the left
  int downsample_factor = 3;  // 10ms -> 30ms frame rate
  double log_floor = 1e-10;

  void validate() const;
};

// Hz <-> Mel (2595 * log10(1 + f/700)).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Center frequencies (Hz) of the triangular Mel filters from 0 Hz to Nyquist.
std::vector<double> mel_filter_centers(const FrontendConfig& cfg);

// Hann-windowed STFT power -> Mel filterbank -> ln(max(energy, log_floor)).
FeatureSequence log_mel(const std::vector<double>& waveform, const FrontendConfig& cfg);

// Per-utterance, per-dimension mean/variance normalization (variance floor 1e-8).
FeatureSequence cmvn(const FeatureSequence& fs);

// Concatenates each kept frame with its num_stack-1 left neighbors (frame 0
// repeated at the left edge) and keeps every factor-th frame.
FeatureSequence stack_downsample(const FeatureSequence& fs, int num_stack, int factor);

// Feature file: magic, version, utterance id, T, D, frame_period_ms, stacked
// flag, float32 payload row-major; all integers little-endian.
void save_features(const std::filesystem::path& path, const std::string& utt_id,
                   const FeatureSequence& fs);
std::pair<std::string, FeatureSequence> load_features(const std::filesystem::path& path);

}  // namespace istt
