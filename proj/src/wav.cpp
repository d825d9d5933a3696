#include "istt/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "istt/error.hpp"

namespace istt {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open WAV file: " + file);

  unsigned char hdr[12];
  if (!is.read(reinterpret_cast<char*>(hdr), 12) || std::memcmp(hdr, "RIFF", 4) != 0 ||
      std::memcmp(hdr + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + file);

  WavData wav;
  int channels = 0, bits = 0;
  bool got_fmt = false;
  while (true) {
    unsigned char chunk[8];
    if (!is.read(reinterpret_cast<char*>(chunk), 8)) break;
    std::uint32_t size = rd_u32(chunk + 4);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(size);
      if (size < 16 || !is.read(reinterpret_cast<char*>(fmt.data()), size))
        throw IoError("truncated fmt chunk: " + file);
      std::uint16_t audio_format = rd_u16(fmt.data());
      channels = rd_u16(fmt.data() + 2);
      wav.sample_rate = static_cast<int>(rd_u32(fmt.data() + 4));
      bits = rd_u16(fmt.data() + 14);
      if (audio_format != 1)
        throw IoError("WAV is not PCM (format " + std::to_string(audio_format) + "): " + file);
      got_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!got_fmt) throw IoError("WAV data chunk before fmt chunk: " + file);
      if (channels != 1)
        throw IoError("expected mono WAV, got " + std::to_string(channels) + " channels: " + file);
      if (bits != 16)
        throw IoError("expected 16-bit PCM, got " + std::to_string(bits) + " bits: " + file);
      size_t n = size / 2;
      std::vector<unsigned char> raw(size);
      if (!is.read(reinterpret_cast<char*>(raw.data()), size))
        throw IoError("truncated data chunk: " + file);
      wav.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        auto s = static_cast<std::int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return wav;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
    }
  }
  throw IoError("WAV file has no data chunk: " + file);
}

void write_wav(const std::filesystem::path& path, const std::vector<double>& samples,
               int sample_rate) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open WAV for writing: " + path.string());
  auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  wr_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(os, 16);
  wr_u16(os, 1);  // PCM
  wr_u16(os, 1);  // mono
  wr_u32(os, static_cast<std::uint32_t>(sample_rate));
  wr_u32(os, static_cast<std::uint32_t>(sample_rate * 2));
  wr_u16(os, 2);
  wr_u16(os, 16);
  os.write("data", 4);
  wr_u32(os, data_bytes);
  for (double s : samples) {
    double c = std::clamp(s, -1.0, 1.0);
    auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    unsigned char b[2] = {static_cast<unsigned char>(q & 0xff),
                          static_cast<unsigned char>((q >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw IoError("failed writing WAV: " + path.string());
}

}  // namespace istt
