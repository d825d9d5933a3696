#include "istt/frontend.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

namespace istt {

namespace {

constexpr char kMagic[8] = {'I', 'S', 'T', 'T', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& file) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated feature file: " + file);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

float read_f32(std::istream& is, const std::string& file) {
  std::uint32_t u = read_u32(is, file);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is, const std::string& file) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated feature file: " + file);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void FrontendConfig::validate() const {
  if (!(window_ms > hop_ms && hop_ms > 0))
    throw InputError("frontend requires window_ms > hop_ms > 0");
  if (n_mels < 1) throw InputError("frontend requires n_mels >= 1");
  if (sample_rate <= 0) throw InputError("frontend requires a positive sample rate");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filter_centers(const FrontendConfig& cfg) {
  double mel_max = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m)
    centers[static_cast<size_t>(m)] = mel_to_hz(mel_max * (m + 1) / (cfg.n_mels + 1));
  return centers;
}

FeatureSequence log_mel(const std::vector<double>& waveform, const FrontendConfig& cfg) {
  cfg.validate();
  const int win = static_cast<int>(std::lround(cfg.window_ms * cfg.sample_rate / 1000.0));
  const int hop = static_cast<int>(std::lround(cfg.hop_ms * cfg.sample_rate / 1000.0));
  if (static_cast<int>(waveform.size()) < win)
    throw InputError("waveform shorter than one analysis window (" + std::to_string(win) +
                     " samples)");
  const int n_frames = 1 + (static_cast<int>(waveform.size()) - win) / hop;
  const int nfft = next_pow2(win);
  const int n_bins = nfft / 2 + 1;

  // periodic Hann window
  std::vector<double> window(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i)
    window[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

  // triangular Mel filterbank over [0, Nyquist]
  const double mel_max = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> mel_pts(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m)
    mel_pts[static_cast<size_t>(m)] = mel_to_hz(mel_max * m / (cfg.n_mels + 1));
  std::vector<double> bin_hz(static_cast<size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b)
    bin_hz[static_cast<size_t>(b)] = static_cast<double>(b) * cfg.sample_rate / nfft;

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<size_t>(nfft), 0.0);
  std::vector<std::complex<double>> spec;

  Tensor out({n_frames, cfg.n_mels});
  for (int t = 0; t < n_frames; ++t) {
    const double* src = waveform.data() + static_cast<size_t>(t) * hop;
    for (int i = 0; i < win; ++i) frame[static_cast<size_t>(i)] = src[i] * window[static_cast<size_t>(i)];
    std::fill(frame.begin() + win, frame.end(), 0.0);
    fft.fwd(spec, frame);
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double lo = mel_pts[static_cast<size_t>(m)];
      const double mid = mel_pts[static_cast<size_t>(m) + 1];
      const double hi = mel_pts[static_cast<size_t>(m) + 2];
      double energy = 0.0;
      for (int b = 0; b < n_bins; ++b) {
        const double f = bin_hz[static_cast<size_t>(b)];
        double w = 0.0;
        if (f > lo && f < hi) w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        if (w > 0.0) energy += w * std::norm(spec[static_cast<size_t>(b)]);
      }
      out(t, m) = std::log(std::max(energy, cfg.log_floor));
    }
  }
  check_finite(out, "log_mel");
  return FeatureSequence{std::move(out), cfg.hop_ms, false};
}

FeatureSequence cmvn(const FeatureSequence& fs) {
  const int t_len = fs.num_frames();
  const int d = fs.dim();
  if (t_len < 2) throw InputError("cmvn requires at least 2 frames, got " + std::to_string(t_len));
  Tensor out({t_len, d});
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < t_len; ++i) mean += fs.frames(i, j);
    mean /= t_len;
    double var = 0.0;
    for (int i = 0; i < t_len; ++i) {
      double dev = fs.frames(i, j) - mean;
      var += dev * dev;
    }
    var /= t_len;
    double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (int i = 0; i < t_len; ++i) out(i, j) = (fs.frames(i, j) - mean) * inv;
  }
  check_finite(out, "cmvn");
  return FeatureSequence{std::move(out), fs.frame_period_ms, fs.stacked};
}

FeatureSequence stack_downsample(const FeatureSequence& fs, int num_stack, int factor) {
  if (fs.stacked) throw InputError("feature sequence is already stacked");
  if (num_stack < 1 || factor < 1) throw InputError("num_stack and factor must be >= 1");
  const int t_len = fs.num_frames();
  const int d = fs.dim();
  const int t_out = (t_len + factor - 1) / factor;  // kept indices 0, factor, 2*factor, ...
  Tensor out({t_out, d * num_stack});
  for (int to = 0; to < t_out; ++to) {
    const int center = to * factor;
    for (int s = 0; s < num_stack; ++s) {
      // concatenate [t-(num_stack-1) .. t], clamping at frame 0
      int src = std::max(center - (num_stack - 1 - s), 0);
      for (int j = 0; j < d; ++j) out(to, s * d + j) = fs.frames(src, j);
    }
  }
  return FeatureSequence{std::move(out), fs.frame_period_ms * factor, num_stack > 1 || factor > 1};
}

void save_features(const std::filesystem::path& path, const std::string& utt_id,
                   const FeatureSequence& fs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open feature file for writing: " + path.string());
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(utt_id.size()));
  os.write(utt_id.data(), static_cast<std::streamsize>(utt_id.size()));
  write_u32(os, static_cast<std::uint32_t>(fs.num_frames()));
  write_u32(os, static_cast<std::uint32_t>(fs.dim()));
  write_f64(os, fs.frame_period_ms);
  os.put(fs.stacked ? 1 : 0);
  for (long i = 0; i < fs.frames.numel(); ++i)
    write_f32(os, static_cast<float>(fs.frames.data()[i]));
  if (!os) throw IoError("failed writing feature file: " + path.string());
}

std::pair<std::string, FeatureSequence> load_features(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file: " + file);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a feature file (bad magic): " + file);
  std::uint32_t version = read_u32(is, file);
  if (version != kVersion)
    throw IoError("unsupported feature file version " + std::to_string(version) + ": " + file);
  std::uint32_t id_len = read_u32(is, file);
  std::string utt_id(id_len, '\0');
  if (!is.read(utt_id.data(), id_len)) throw IoError("truncated feature file: " + file);
  int t_len = static_cast<int>(read_u32(is, file));
  int d = static_cast<int>(read_u32(is, file));
  double period = read_f64(is, file);
  int stacked = is.get();
  if (stacked < 0) throw IoError("truncated feature file: " + file);
  FeatureSequence fs;
  fs.frames = Tensor({t_len, d});
  fs.frame_period_ms = period;
  fs.stacked = stacked != 0;
  for (long i = 0; i < fs.frames.numel(); ++i)
    fs.frames.data()[i] = static_cast<double>(read_f32(is, file));
  return {std::move(utt_id), std::move(fs)};
}

}  // namespace istt
