#pragma once

#include <filesystem>
#include <vector>

namespace istt {

struct WavData {
  int sample_rate = 0;
  std::vector<double> samples;  // mono, normalized to [-1, 1]
};

// Reads a mono 16-bit PCM RIFF/WAVE file. Stereo or non-PCM input is an IoError.
WavData read_wav(const std::filesystem::path& path);

// Writes samples (clipped to [-1, 1]) as mono 16-bit PCM.
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace istt
