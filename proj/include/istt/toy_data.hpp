#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "istt/frontend.hpp"
#include "istt/vocab.hpp"

namespace istt {

enum class TranslationRule { kMap, kMapSwap, kMapReverse };

TranslationRule translation_rule_from_string(const std::string& s);
std::string to_string(TranslationRule rule);

// Synthetic triplet corpus knobs. Content tokens are rendered as a fixed
// per-token prototype vector repeated frames_per_token times plus noise;
// tokens in an ambiguity pair share one prototype, so acoustics alone cannot
// tell them apart while the translation still distinguishes them.
struct ToySpec {
  int vocab_size = 40;  // content tokens
  int min_len = 4;
  int max_len = 12;
  int frames_per_token = 4;
  int feature_dim = 80;  // pre-stack
  double noise_std = 0.3;
  TranslationRule rule = TranslationRule::kMapSwap;
  std::vector<std::pair<int, int>> ambiguity_pairs;  // content indices
  std::uint64_t seed = 1;

  void validate() const;
  static std::vector<std::pair<int, int>> default_ambiguity_pairs(int n_pairs);
  static ToySpec defaults();  // 40 tokens, lengths 4-12, 6 pairs, MAP_SWAP
};

struct Utterance {
  std::string id;
  FeatureSequence features;        // raw 80-dim, 10ms frames
  std::vector<int> transcription;  // full-vocab ids (content >= 5)
  std::vector<int> translation;
};

struct Corpus {
  Vocabulary vocab;
  std::vector<Utterance> utts;
};

// Per-content-token acoustic prototypes (pair members share rows) and the
// content-index dictionary used by the translation rules; both depend only
// on the spec, which lets tests verify the construction analytically.
Tensor toy_prototypes(const ToySpec& spec);
std::vector<int> toy_dictionary(const ToySpec& spec);

// Applies the dictionary and the reordering rule to content indices.
std::vector<int> apply_translation_rule(const std::vector<int>& content,
                                        const std::vector<int>& dictionary, TranslationRule rule);

Corpus generate(const ToySpec& spec, int n_utts);

// Sinusoid rendering of an utterance for exercising the waveform frontend;
// ambiguity pairs share frequencies just like they share prototypes.
std::vector<double> synthesize_waveform(const std::vector<int>& content_indices,
                                        const ToySpec& spec, int sample_rate);

// Directory layout: manifest.tsv, vocab.txt, transcriptions.txt,
// translations.txt, feats/<id>.feat. load(save(c)) == c exactly.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace istt
