#include "istt/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace istt {

namespace fs = std::filesystem;

TranslationRule translation_rule_from_string(const std::string& s) {
  if (s == "map" || s == "MAP") return TranslationRule::kMap;
  if (s == "map_swap" || s == "MAP_SWAP") return TranslationRule::kMapSwap;
  if (s == "map_reverse" || s == "MAP_REVERSE") return TranslationRule::kMapReverse;
  throw InputError("unknown translation rule: " + s + " (expected map|map_swap|map_reverse)");
}

std::string to_string(TranslationRule rule) {
  switch (rule) {
    case TranslationRule::kMap: return "map";
    case TranslationRule::kMapSwap: return "map_swap";
    case TranslationRule::kMapReverse: return "map_reverse";
  }
  return "?";
}

void ToySpec::validate() const {
  if (vocab_size < 4) throw InputError("toy vocab_size must be >= 4, got " +
                                       std::to_string(vocab_size));
  if (frames_per_token < 1) throw InputError("frames_per_token must be >= 1");
  if (noise_std < 0.0) throw InputError("noise_std must be >= 0");
  if (min_len < 1 || max_len < min_len)
    throw InputError("utterance length range invalid: [" + std::to_string(min_len) + "," +
                     std::to_string(max_len) + "]");
  if (feature_dim < 1) throw InputError("feature_dim must be >= 1");
  for (auto [a, b] : ambiguity_pairs) {
    if (a < 0 || a >= vocab_size || b < 0 || b >= vocab_size || a == b)
      throw InputError("ambiguity pair (" + std::to_string(a) + "," + std::to_string(b) +
                       ") references invalid tokens");
  }
}

std::vector<std::pair<int, int>> ToySpec::default_ambiguity_pairs(int n_pairs) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n_pairs; ++i) pairs.emplace_back(2 * i, 2 * i + 1);
  return pairs;
}

ToySpec ToySpec::defaults() {
  ToySpec spec;
  spec.ambiguity_pairs = default_ambiguity_pairs(6);
  return spec;
}

namespace {

// round through float so the float32 feature files round-trip exactly
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<std::string> content_token_strings(int n) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%02d", i);
    out.emplace_back(buf);
  }
  return out;
}

}  // namespace

Tensor toy_prototypes(const ToySpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor protos({spec.vocab_size, spec.feature_dim});
  for (double& v : protos.vec()) v = dist(rng);
  // second member of each pair shares the first member's prototype
  for (auto [a, b] : spec.ambiguity_pairs)
    for (int j = 0; j < spec.feature_dim; ++j) protos(b, j) = protos(a, j);
  return protos;
}

std::vector<int> toy_dictionary(const ToySpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<int> dict(static_cast<size_t>(spec.vocab_size));
  for (int i = 0; i < spec.vocab_size; ++i) dict[static_cast<size_t>(i)] = i;
  std::shuffle(dict.begin(), dict.end(), rng);
  return dict;
}

std::vector<int> apply_translation_rule(const std::vector<int>& content,
                                        const std::vector<int>& dictionary,
                                        TranslationRule rule) {
  std::vector<int> mapped;
  mapped.reserve(content.size());
  for (int c : content) {
    if (c < 0 || c >= static_cast<int>(dictionary.size()))
      throw InputError("content index " + std::to_string(c) + " outside dictionary");
    mapped.push_back(dictionary[static_cast<size_t>(c)]);
  }
  switch (rule) {
    case TranslationRule::kMap:
      break;
    case TranslationRule::kMapSwap:
      for (size_t i = 0; i + 1 < mapped.size(); i += 2) std::swap(mapped[i], mapped[i + 1]);
      break;
    case TranslationRule::kMapReverse:
      std::reverse(mapped.begin(), mapped.end());
      break;
  }
  return mapped;
}

Corpus generate(const ToySpec& spec, int n_utts) {
  spec.validate();
  if (n_utts < 1) throw InputError("generate requires n_utts >= 1");

  Corpus corpus;
  corpus.vocab = Vocabulary::with_content(content_token_strings(spec.vocab_size));

  Tensor protos = toy_prototypes(spec);
  std::vector<int> dict = toy_dictionary(spec);

  std::mt19937_64 rng(spec.seed);
  // burn the prototype draws so utterance noise differs from them
  {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (long i = 0; i < static_cast<long>(spec.vocab_size) * spec.feature_dim; ++i) dist(rng);
  }
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> tok_dist(0, spec.vocab_size - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  corpus.utts.reserve(static_cast<size_t>(n_utts));
  for (int u = 0; u < n_utts; ++u) {
    Utterance utt;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "utt-%06d", u);
    utt.id = buf;

    const int len = len_dist(rng);
    std::vector<int> content(static_cast<size_t>(len));
    for (int& c : content) c = tok_dist(rng);

    utt.features.frames = Tensor({len * spec.frames_per_token, spec.feature_dim});
    utt.features.frame_period_ms = 10.0;
    utt.features.stacked = false;
    for (int p = 0; p < len; ++p) {
      for (int f = 0; f < spec.frames_per_token; ++f) {
        const int row = p * spec.frames_per_token + f;
        for (int j = 0; j < spec.feature_dim; ++j)
          utt.features.frames(row, j) =
              f32(protos(content[static_cast<size_t>(p)], j) + spec.noise_std * noise(rng));
      }
    }

    std::vector<int> translated = apply_translation_rule(content, dict, spec.rule);
    utt.transcription.reserve(content.size());
    for (int c : content) utt.transcription.push_back(Vocabulary::kNumSpecials + c);
    utt.translation.reserve(translated.size());
    for (int c : translated) utt.translation.push_back(Vocabulary::kNumSpecials + c);

    corpus.utts.push_back(std::move(utt));
  }
  return corpus;
}

std::vector<double> synthesize_waveform(const std::vector<int>& content_indices,
                                        const ToySpec& spec, int sample_rate) {
  spec.validate();
  // two seeded frequencies per token; pair members share them
  std::mt19937_64 rng(spec.seed ^ 0x5bf03635ull);
  std::uniform_real_distribution<double> freq(200.0, sample_rate / 2.0 * 0.8);
  std::vector<std::pair<double, double>> freqs(static_cast<size_t>(spec.vocab_size));
  for (auto& f : freqs) f = {freq(rng), freq(rng)};
  for (auto [a, b] : spec.ambiguity_pairs) freqs[static_cast<size_t>(b)] = freqs[static_cast<size_t>(a)];

  const int samples_per_token =
      static_cast<int>(std::lround(spec.frames_per_token * 0.030 * sample_rate));
  std::vector<double> wave;
  wave.reserve(content_indices.size() * static_cast<size_t>(samples_per_token));
  for (int c : content_indices) {
    if (c < 0 || c >= spec.vocab_size) throw InputError("content index out of range");
    auto [f1, f2] = freqs[static_cast<size_t>(c)];
    for (int i = 0; i < samples_per_token; ++i) {
      double t = static_cast<double>(i) / sample_rate;
      wave.push_back(0.35 * std::sin(2.0 * M_PI * f1 * t) + 0.25 * std::sin(2.0 * M_PI * f2 * t));
    }
  }
  return wave;
}

namespace {

std::string join_tokens(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<int> split_tokens(const Vocabulary& vocab, const std::string& line) {
  std::vector<int> ids;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) ids.push_back(vocab.id(tok));
  return ids;
}

}  // namespace

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "feats");
  corpus.vocab.save(dir / "vocab.txt");

  std::ofstream manifest(dir / "manifest.tsv", std::ios::trunc);
  std::ofstream trans(dir / "transcriptions.txt", std::ios::trunc);
  std::ofstream transl(dir / "translations.txt", std::ios::trunc);
  if (!manifest || !trans || !transl)
    throw IoError("cannot open corpus files for writing under " + dir.string());

  for (const Utterance& utt : corpus.utts) {
    manifest << utt.id << '\t' << utt.features.num_frames() << '\t' << utt.transcription.size()
             << '\t' << utt.translation.size() << '\n';
    trans << join_tokens(corpus.vocab, utt.transcription) << '\n';
    transl << join_tokens(corpus.vocab, utt.translation) << '\n';
    save_features(dir / "feats" / (utt.id + ".feat"), utt.id, utt.features);
  }
  if (!manifest || !trans || !transl)
    throw IoError("failed writing corpus files under " + dir.string());
}

Corpus load_corpus(const fs::path& dir) {
  Corpus corpus;
  corpus.vocab = Vocabulary::load(dir / "vocab.txt");

  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw IoError("missing manifest: " + (dir / "manifest.tsv").string());
  std::ifstream trans(dir / "transcriptions.txt");
  if (!trans) throw IoError("missing file: " + (dir / "transcriptions.txt").string());
  std::ifstream transl(dir / "translations.txt");
  if (!transl) throw IoError("missing file: " + (dir / "translations.txt").string());

  std::string mline;
  while (std::getline(manifest, mline)) {
    if (mline.empty()) continue;
    std::istringstream ms(mline);
    Utterance utt;
    long t_frames = 0, n_src = 0, n_tgt = 0;
    if (!(ms >> utt.id >> t_frames >> n_src >> n_tgt))
      throw IoError("corrupt manifest line in " + (dir / "manifest.tsv").string() + ": " + mline);

    std::string src_line, tgt_line;
    if (!std::getline(trans, src_line))
      throw IoError("corrupt manifest: transcriptions.txt has fewer lines than manifest in " +
                    dir.string());
    if (!std::getline(transl, tgt_line))
      throw IoError("corrupt manifest: translations.txt has fewer lines than manifest in " +
                    dir.string());
    utt.transcription = split_tokens(corpus.vocab, src_line);
    utt.translation = split_tokens(corpus.vocab, tgt_line);
    if (static_cast<long>(utt.transcription.size()) != n_src ||
        static_cast<long>(utt.translation.size()) != n_tgt)
      throw IoError("corrupt manifest: token counts disagree for " + utt.id + " in " +
                    dir.string());

    const fs::path feat_path = dir / "feats" / (utt.id + ".feat");
    auto [feat_id, feats] = load_features(feat_path);
    if (feat_id != utt.id)
      throw IoError("feature file id mismatch (" + feat_id + " vs " + utt.id + "): " +
                    feat_path.string());
    if (feats.num_frames() != t_frames)
      throw IoError("corrupt manifest: frame count " + std::to_string(t_frames) + " disagrees with " +
                    feat_path.string() + " (" + std::to_string(feats.num_frames()) + " frames)");
    utt.features = std::move(feats);
    corpus.utts.push_back(std::move(utt));
  }

  std::string extra;
  if (std::getline(trans, extra) && !extra.empty())
    throw IoError("corrupt manifest: transcriptions.txt has more lines than manifest in " +
                  dir.string());
  return corpus;
}

}  // namespace istt
