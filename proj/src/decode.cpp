#include "istt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace istt {

namespace {

Tensor log_softmax_row(const Tensor& logits) {
  Tensor out = logits;
  const long n = out.numel();
  double mx = out.data()[0];
  for (long i = 1; i < n; ++i) mx = std::max(mx, out.data()[i]);
  double sum = 0.0;
  for (long i = 0; i < n; ++i) sum += std::exp(out.data()[i] - mx);
  const double lse = mx + std::log(sum);
  for (long i = 0; i < n; ++i) out.vec()[static_cast<size_t>(i)] -= lse;
  return out;
}

// decoding never proposes control labels; <eos> and content tokens only
bool emittable(int id) { return id == Vocabulary::kEos || id >= Vocabulary::kNumSpecials; }

std::vector<int> top_tokens(const Tensor& logp, int n) {
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(logp.numel()));
  for (int i = 0; i < logp.numel(); ++i)
    if (emittable(i)) ids.push_back(i);
  n = std::min<int>(n, static_cast<int>(ids.size()));
  std::partial_sort(ids.begin(), ids.begin() + n, ids.end(), [&](int a, int b) {
    if (logp(a) != logp(b)) return logp(a) > logp(b);
    return a < b;
  });
  ids.resize(static_cast<size_t>(n));
  return ids;
}

int argmax_token(const Tensor& logp) { return top_tokens(logp, 1)[0]; }

struct Cand {
  int parent = 0;
  int token = 0;
  double score = 0.0;  // stream score after appending token
  bool forced = false;
};

void prune_pool(std::vector<Cand>& pool, int beam_size) {
  std::sort(pool.begin(), pool.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.parent != b.parent) return a.parent < b.parent;
    return a.token < b.token;
  });
  if (static_cast<int>(pool.size()) > beam_size) pool.resize(static_cast<size_t>(beam_size));
}

DecodeResult to_result(const DualHypothesis& h) {
  DecodeResult r;
  r.rec_raw.assign(h.rec_prefix.begin() + 1, h.rec_prefix.end());
  r.tr_raw.assign(h.tr_prefix.begin() + 1, h.tr_prefix.end());
  r.transcription = strip_specials(r.rec_raw);
  r.translation = strip_specials(r.tr_raw);
  r.rec_score = h.rec_score;
  r.tr_score = h.tr_score;
  r.truncated = !(h.rec_done && h.tr_done);
  return r;
}

}  // namespace

void BeamConfig::validate() const {
  if (beam_size < 1) throw InputError("beam_size must be >= 1");
  if (max_len < 0) throw InputError("max_len must be >= 0");
  if (length_penalty < 0.0) throw InputError("length_penalty must be >= 0");
}

int BeamConfig::resolve_max_len(int memory_frames, int max_positions) const {
  int len = max_len > 0 ? max_len : 2 * memory_frames + 10;
  return std::min(len, max_positions - 1);  // position 0 holds the start label
}

std::vector<int> strip_specials(const std::vector<int>& seq) {
  std::vector<int> out;
  out.reserve(seq.size());
  for (int id : seq)
    if (!Vocabulary::is_special(id)) out.push_back(id);
  return out;
}

double joint_selection_score(const DualHypothesis& hyp, double alpha) {
  auto norm = [alpha](double score, const std::vector<int>& prefix) {
    long content = 0;
    for (int id : prefix)
      if (!Vocabulary::is_special(id)) ++content;
    return score / std::pow(static_cast<double>(std::max<long>(content, 1)), alpha);
  };
  return norm(hyp.rec_score, hyp.rec_prefix) + norm(hyp.tr_score, hyp.tr_prefix);
}

DecodeResult greedy_decode(const ModelParams& params, const Tensor& memory,
                           const BeamConfig& cfg) {
  cfg.validate();
  const int wait_k = params.cfg.wait_k;
  const int max_len = cfg.resolve_max_len(memory.rows(), params.cfg.max_positions);

  DualHypothesis hyp{DualStepper(params, memory)};
  auto first = hyp.stepper.step(Vocabulary::kRecog, Vocabulary::kTrans);
  hyp.rec_prefix = {Vocabulary::kRecog};
  hyp.tr_prefix = {Vocabulary::kTrans};
  hyp.rec_logp = log_softmax_row(first.rec);
  hyp.tr_logp = log_softmax_row(first.tr);

  for (int s = 0; s < max_len && !hyp.finished(); ++s) {
    int rec_tok = Vocabulary::kEos;
    if (!hyp.rec_done) {
      rec_tok = argmax_token(hyp.rec_logp);
      hyp.rec_score += hyp.rec_logp(rec_tok);
      if (rec_tok == Vocabulary::kEos) hyp.rec_done = true;
    }
    int tr_tok = Vocabulary::kEos;
    if (s < wait_k) {
      tr_tok = Vocabulary::kDelay;  // forced, carries no score
    } else if (!hyp.tr_done) {
      tr_tok = argmax_token(hyp.tr_logp);
      hyp.tr_score += hyp.tr_logp(tr_tok);
      if (tr_tok == Vocabulary::kEos) hyp.tr_done = true;
    }
    hyp.rec_prefix.push_back(rec_tok);
    hyp.tr_prefix.push_back(tr_tok);
    if (!hyp.finished()) {
      auto lg = hyp.stepper.step(rec_tok, tr_tok);
      hyp.rec_logp = log_softmax_row(lg.rec);
      hyp.tr_logp = log_softmax_row(lg.tr);
    }
  }
  return to_result(hyp);
}

DecodeResult synchronous_beam_search(const ModelParams& params, const Tensor& memory,
                                     const BeamConfig& cfg) {
  cfg.validate();
  const int wait_k = params.cfg.wait_k;
  const int max_len = cfg.resolve_max_len(memory.rows(), params.cfg.max_positions);
  const int beam = cfg.beam_size;

  std::vector<DualHypothesis> pairs;
  {
    DualHypothesis hyp{DualStepper(params, memory)};
    auto first = hyp.stepper.step(Vocabulary::kRecog, Vocabulary::kTrans);
    hyp.rec_prefix = {Vocabulary::kRecog};
    hyp.tr_prefix = {Vocabulary::kTrans};
    hyp.rec_logp = log_softmax_row(first.rec);
    hyp.tr_logp = log_softmax_row(first.tr);
    pairs.push_back(std::move(hyp));
  }

  for (int s = 0; s < max_len; ++s) {
    bool all_done = true;
    for (const auto& p : pairs) all_done = all_done && p.finished();
    if (all_done) break;

    // each stream expands its candidates independently across all pairs
    std::vector<Cand> rec_pool, tr_pool;
    for (int i = 0; i < static_cast<int>(pairs.size()); ++i) {
      const DualHypothesis& p = pairs[static_cast<size_t>(i)];
      if (p.rec_done) {
        rec_pool.push_back({i, Vocabulary::kEos, p.rec_score, true});
      } else {
        for (int tok : top_tokens(p.rec_logp, beam))
          rec_pool.push_back({i, tok, p.rec_score + p.rec_logp(tok), false});
      }
      if (s < wait_k) {
        tr_pool.push_back({i, Vocabulary::kDelay, p.tr_score, true});
      } else if (p.tr_done) {
        tr_pool.push_back({i, Vocabulary::kEos, p.tr_score, true});
      } else {
        for (int tok : top_tokens(p.tr_logp, beam))
          tr_pool.push_back({i, tok, p.tr_score + p.tr_logp(tok), false});
      }
    }
    prune_pool(rec_pool, beam);
    prune_pool(tr_pool, beam);

    // pair the surviving hypotheses rank-to-rank
    const int n_new = static_cast<int>(std::min(rec_pool.size(), tr_pool.size()));
    std::vector<DualHypothesis> next;
    next.reserve(static_cast<size_t>(n_new));
    for (int r = 0; r < n_new; ++r) {
      const Cand& rc = rec_pool[static_cast<size_t>(r)];
      const Cand& tc = tr_pool[static_cast<size_t>(r)];
      const DualHypothesis& rec_parent = pairs[static_cast<size_t>(rc.parent)];
      const DualHypothesis& tr_parent = pairs[static_cast<size_t>(tc.parent)];

      if (rc.parent == tc.parent) {
        DualHypothesis child = rec_parent;
        child.rec_prefix.push_back(rc.token);
        child.tr_prefix.push_back(tc.token);
        child.rec_score = rc.score;
        child.tr_score = tc.score;
        child.rec_done = rec_parent.rec_done || rc.token == Vocabulary::kEos;
        child.tr_done = tr_parent.tr_done || (!tc.forced && tc.token == Vocabulary::kEos);
        if (!child.finished() || s + 1 < max_len) {
          auto lg = child.stepper.step(rc.token, tc.token);
          child.rec_logp = log_softmax_row(lg.rec);
          child.tr_logp = log_softmax_row(lg.tr);
        }
        next.push_back(std::move(child));
      } else {
        // prefixes come from different parents: rebuild the joint state so the
        // cached hiddens match a clean forward over the new pairing
        DualHypothesis child{DualStepper(params, memory)};
        child.rec_prefix = rec_parent.rec_prefix;
        child.rec_prefix.push_back(rc.token);
        child.tr_prefix = tr_parent.tr_prefix;
        child.tr_prefix.push_back(tc.token);
        child.rec_score = rc.score;
        child.tr_score = tc.score;
        child.rec_done = rec_parent.rec_done || rc.token == Vocabulary::kEos;
        child.tr_done = tr_parent.tr_done || (!tc.forced && tc.token == Vocabulary::kEos);
        DualStepper::StepLogits lg;
        for (size_t pos = 0; pos < child.rec_prefix.size(); ++pos)
          lg = child.stepper.step(child.rec_prefix[pos], child.tr_prefix[pos]);
        child.rec_logp = log_softmax_row(lg.rec);
        child.tr_logp = log_softmax_row(lg.tr);
        next.push_back(std::move(child));
      }
    }
    pairs = std::move(next);
  }

  const double alpha = cfg.length_penalty;
  int best = 0;
  for (int i = 1; i < static_cast<int>(pairs.size()); ++i)
    if (joint_selection_score(pairs[static_cast<size_t>(i)], alpha) >
        joint_selection_score(pairs[static_cast<size_t>(best)], alpha))
      best = i;
  return to_result(pairs[static_cast<size_t>(best)]);
}

void save_decode_records(const std::filesystem::path& path,
                         const std::vector<DecodeRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open decode output for writing: " + path.string());
  os.precision(6);
  os << std::fixed;
  for (const auto& r : records) {
    os << r.id << '\t';
    for (size_t i = 0; i < r.transcription.size(); ++i)
      os << (i ? " " : "") << r.transcription[i];
    os << '\t';
    for (size_t i = 0; i < r.translation.size(); ++i) os << (i ? " " : "") << r.translation[i];
    os << '\t' << r.rec_score << '\t' << r.tr_score << '\n';
  }
  if (!os) throw IoError("failed writing decode output: " + path.string());
}

std::vector<DecodeRecord> load_decode_records(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open decode output: " + path.string());
  std::vector<DecodeRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw IoError("decode file " + path.string() + " line " + std::to_string(line_no) +
                    " has " + std::to_string(fields.size()) + " fields, expected 5");
    DecodeRecord r;
    r.id = fields[0];
    std::istringstream ts(fields[1]);
    std::string tok;
    while (ts >> tok) r.transcription.push_back(tok);
    std::istringstream vs(fields[2]);
    while (vs >> tok) r.translation.push_back(tok);
    try {
      r.rec_score = std::stod(fields[3]);
      r.tr_score = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw IoError("decode file " + path.string() + " line " + std::to_string(line_no) +
                    " has malformed scores");
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace istt
