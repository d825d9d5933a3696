#pragma once

#include <array>
#include <string>
#include <vector>

#include "istt/error.hpp"

namespace istt {

// Unit-cost Levenshtein distance over token lists.
long edit_distance(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Per-utterance WER = distance / len(ref); ref must be non-empty.
double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Clipped n-gram counts for corpus BLEU (n = 1..4).
struct BleuStats {
  std::array<long, 4> match{0, 0, 0, 0};
  std::array<long, 4> total{0, 0, 0, 0};
  long hyp_len = 0;
  long ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Geometric mean of the four clipped precisions times the brevity penalty,
// scaled to [0,100]; any zero precision gives 0 (no smoothing).
double bleu_score(const BleuStats& stats);

double bleu(const std::vector<std::vector<std::string>>& hyps,
            const std::vector<std::vector<std::string>>& refs);

struct EvalReport {
  struct UttEntry {
    std::string id;
    long edits = 0;
    long ref_len = 0;
    BleuStats bleu;
  };

  std::vector<UttEntry> utts;

  long total_edits() const;
  long total_ref_tokens() const;
  BleuStats bleu_totals() const;
  double corpus_wer() const;   // sum of distances / sum of reference lengths
  double corpus_bleu() const;
};

// ids must align one-to-one; WER scores the transcription stream against its
// references, BLEU the translation stream.
EvalReport evaluate_corpus(const std::vector<std::string>& ids,
                           const std::vector<std::vector<std::string>>& rec_hyps,
                           const std::vector<std::vector<std::string>>& rec_refs,
                           const std::vector<std::vector<std::string>>& tr_hyps,
                           const std::vector<std::vector<std::string>>& tr_refs);

// Text report: summary lines plus one machine-readable line per utterance
// (id, wer numerator, ref length, clipped n-gram counts). parse_report
// recovers a report whose aggregates equal the printed ones.
std::string report_to_string(const EvalReport& report);
EvalReport parse_report(const std::string& text);

}  // namespace istt
