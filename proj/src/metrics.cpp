#include "istt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

namespace istt {

long edit_distance(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  const size_t n = hyp.size();
  const size_t m = ref.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (size_t j = 1; j <= m; ++j) {
      long sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      long del = prev[j] + 1;  // drop a hypothesis token
      long ins = cur[j - 1] + 1;
      cur[j] = std::min({sub, ins, del});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (ref.empty()) throw InputError("wer requires a non-empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (int n = 0; n < 4; ++n) {
    match[static_cast<size_t>(n)] += other.match[static_cast<size_t>(n)];
    total[static_cast<size_t>(n)] += other.total[static_cast<size_t>(n)];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

namespace {

std::unordered_map<std::string, long> ngram_counts(const std::vector<std::string>& toks, int n) {
  std::unordered_map<std::string, long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += toks[i + static_cast<size_t>(j)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuStats bleu_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  BleuStats st;
  st.hyp_len = static_cast<long>(hyp.size());
  st.ref_len = static_cast<long>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    auto hc = ngram_counts(hyp, n);
    auto rc = ngram_counts(ref, n);
    long match = 0, total = 0;
    for (const auto& [gram, count] : hc) {
      total += count;
      auto it = rc.find(gram);
      if (it != rc.end()) match += std::min(count, it->second);
    }
    st.match[static_cast<size_t>(n - 1)] = match;
    st.total[static_cast<size_t>(n - 1)] = total;
  }
  return st;
}

double bleu_score(const BleuStats& st) {
  double log_prec = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (st.total[static_cast<size_t>(n)] == 0 || st.match[static_cast<size_t>(n)] == 0) return 0.0;
    log_prec += std::log(static_cast<double>(st.match[static_cast<size_t>(n)]) /
                         static_cast<double>(st.total[static_cast<size_t>(n)]));
  }
  double bp = 1.0;
  if (st.hyp_len < st.ref_len && st.hyp_len > 0)
    bp = std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len));
  if (st.hyp_len == 0) return 0.0;
  return 100.0 * bp * std::exp(log_prec / 4.0);
}

double bleu(const std::vector<std::vector<std::string>>& hyps,
            const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size())
    throw InputError("bleu: hypothesis and reference counts differ (" +
                     std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()) + ")");
  BleuStats totals;
  for (size_t i = 0; i < hyps.size(); ++i) totals += bleu_stats(hyps[i], refs[i]);
  return bleu_score(totals);
}

long EvalReport::total_edits() const {
  long n = 0;
  for (const auto& u : utts) n += u.edits;
  return n;
}

long EvalReport::total_ref_tokens() const {
  long n = 0;
  for (const auto& u : utts) n += u.ref_len;
  return n;
}

BleuStats EvalReport::bleu_totals() const {
  BleuStats st;
  for (const auto& u : utts) st += u.bleu;
  return st;
}

double EvalReport::corpus_wer() const {
  long ref = total_ref_tokens();
  if (ref == 0) throw InputError("corpus WER undefined: no reference tokens");
  return static_cast<double>(total_edits()) / static_cast<double>(ref);
}

double EvalReport::corpus_bleu() const { return bleu_score(bleu_totals()); }

EvalReport evaluate_corpus(const std::vector<std::string>& ids,
                           const std::vector<std::vector<std::string>>& rec_hyps,
                           const std::vector<std::vector<std::string>>& rec_refs,
                           const std::vector<std::vector<std::string>>& tr_hyps,
                           const std::vector<std::vector<std::string>>& tr_refs) {
  if (ids.size() != rec_hyps.size() || ids.size() != rec_refs.size() ||
      ids.size() != tr_hyps.size() || ids.size() != tr_refs.size())
    throw InputError("evaluate_corpus: input lists are not aligned");
  EvalReport report;
  report.utts.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (rec_refs[i].empty())
      throw InputError("empty transcription reference for utterance " + ids[i]);
    EvalReport::UttEntry u;
    u.id = ids[i];
    u.edits = edit_distance(rec_hyps[i], rec_refs[i]);
    u.ref_len = static_cast<long>(rec_refs[i].size());
    u.bleu = bleu_stats(tr_hyps[i], tr_refs[i]);
    report.utts.push_back(std::move(u));
  }
  return report;
}

std::string report_to_string(const EvalReport& report) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", report.corpus_wer());
  os << "WER\t" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.4f", report.corpus_bleu());
  os << "BLEU\t" << buf << "\n";
  os << "UTTERANCES\t" << report.utts.size() << "\n";
  for (const auto& u : report.utts) {
    os << "U\t" << u.id << '\t' << u.edits << '\t' << u.ref_len;
    for (int n = 0; n < 4; ++n)
      os << '\t' << u.bleu.match[static_cast<size_t>(n)] << '/'
         << u.bleu.total[static_cast<size_t>(n)];
    os << '\t' << u.bleu.hyp_len << '\t' << u.bleu.ref_len << "\n";
  }
  return os.str();
}

EvalReport parse_report(const std::string& text) {
  EvalReport report;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("U\t", 0) != 0) continue;
    std::istringstream ls(line);
    std::string tag;
    EvalReport::UttEntry u;
    ls >> tag >> u.id >> u.edits >> u.ref_len;
    for (int n = 0; n < 4; ++n) {
      std::string frac;
      ls >> frac;
      size_t slash = frac.find('/');
      if (slash == std::string::npos) throw InputError("malformed report line: " + line);
      u.bleu.match[static_cast<size_t>(n)] = std::stol(frac.substr(0, slash));
      u.bleu.total[static_cast<size_t>(n)] = std::stol(frac.substr(slash + 1));
    }
    ls >> u.bleu.hyp_len >> u.bleu.ref_len;
    if (!ls) throw InputError("malformed report line: " + line);
    report.utts.push_back(std::move(u));
  }
  return report;
}

}  // namespace istt
