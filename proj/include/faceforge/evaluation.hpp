#pragma once

// Caption metrics (BLEU-1..4, ROUGE-L, CIDEr), emotion accuracies, hybrid
// scores, and emotion-ratio bias statistics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "faceforge/embeddings.hpp"
#include "faceforge/numerics/errors.hpp"
#include "json.hpp"

namespace faceforge::eval {

using Tokens = std::vector<std::string>;
using NGram = std::vector<std::string>;

inline std::map<NGram, std::size_t> ngram_counts(const Tokens& toks, std::size_t n) {
  std::map<NGram, std::size_t> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[NGram(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

// Corpus BLEU with up to `n`-gram modified precisions, uniform weights, and
// brevity penalty exp(1 − r/c) when c ≤ r. No smoothing: any zero precision
// gives 0. Effective reference length is the reference closest to the
// candidate length (shorter wins ties).
inline double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
                   std::size_t n) {
  if (candidates.empty()) throw UsageError("bleu: empty corpus");
  if (candidates.size() != references.size()) throw UsageError("bleu: one reference set per candidate required");
  if (n < 1 || n > 4) throw UsageError("bleu: n must be in 1..4");
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const Tokens& c = candidates[s];
    const auto& refs = references[s];
    if (refs.empty()) throw UsageError("bleu: candidate without references");
    cand_len += static_cast<double>(c.size());
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto dr = std::abs(static_cast<long>(r.size()) - static_cast<long>(c.size()));
      const auto db = std::abs(static_cast<long>(best) - static_cast<long>(c.size()));
      if (dr < db || (dr == db && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t k = 1; k <= n; ++k) {
      const auto cc = ngram_counts(c, k);
      std::map<NGram, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, cnt] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : cc) {
        total[k - 1] += static_cast<double>(cnt);
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[k - 1] += static_cast<double>(std::min(cnt, it->second));
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (total[k] == 0.0 || matched[k] == 0.0) return 0.0;
    log_sum += std::log(matched[k] / total[k]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

// LCS F-measure, F = (1 + β²) P R / (R + β² P).
inline double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) throw UsageError("rouge_l: empty token sequence");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

// Best score over a candidate's references, averaged over the corpus.
inline double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  if (candidates.empty()) throw UsageError("rouge_l: empty corpus");
  if (candidates.size() != references.size()) throw UsageError("rouge_l: one reference set per candidate required");
  double total = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    double best = 0.0;
    for (const auto& r : references[s]) best = std::max(best, rouge_l(candidates[s], r));
    total += best;
  }
  return total / static_cast<double>(candidates.size());
}

struct CiderResult {
  double score = 0.0;
  bool degenerate_idf = false;  // fewer than two reference sets
};

// CIDEr: per n-gram order, TF-IDF vectors (tf = count / total n-grams of the
// sentence, idf = log(|docs| / df) with df over reference sets), cosine
// between candidate and each reference averaged over references, then
// averaged over n = 1..4 and multiplied by 10.
inline CiderResult cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  if (candidates.empty()) throw UsageError("cider: empty corpus");
  if (candidates.size() != references.size()) throw UsageError("cider: one reference set per candidate required");
  constexpr std::size_t kMaxN = 4;
  const double docs = static_cast<double>(references.size());
  CiderResult res;
  res.degenerate_idf = references.size() < 2;

  std::vector<std::map<NGram, double>> df(kMaxN);
  for (const auto& refs : references) {
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<NGram> seen;
      for (const auto& r : refs) {
        for (const auto& [g, _] : ngram_counts(r, n)) seen.insert(g);
      }
      for (const auto& g : seen) df[n - 1][g] += 1.0;
    }
  }
  auto tfidf = [&](const Tokens& s, std::size_t n) {
    std::map<NGram, double> v;
    const auto counts = ngram_counts(s, n);
    double total = 0.0;
    for (const auto& [_, c] : counts) total += static_cast<double>(c);
    for (const auto& [g, c] : counts) {
      auto it = df[n - 1].find(g);
      const double dfg = it == df[n - 1].end() ? 0.0 : it->second;
      // n-grams absent from every reference set get df = 1 (they cannot match anyway)
      v[g] = (static_cast<double>(c) / total) * std::log(docs / std::max(dfg, 1.0));
    }
    return v;
  };
  auto cosine = [](const std::map<NGram, double>& a, const std::map<NGram, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& [_, y] : b) nb += y * y;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  double total = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    if (references[s].empty()) throw UsageError("cider: candidate without references");
    double per_sample = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto vc = tfidf(candidates[s], n);
      double sum = 0.0;
      for (const auto& r : references[s]) sum += cosine(vc, tfidf(r, n));
      per_sample += sum / static_cast<double>(references[s].size());
    }
    total += per_sample / static_cast<double>(kMaxN);
  }
  res.score = 10.0 * total / static_cast<double>(candidates.size());
  return res;
}

struct EmotionAccuracy {
  double acc_sw = 0.0;
  double acc_c = 0.0;
};

// acc_sw: generated emotion-word tokens that also occur among the reference
// emotion words, pooled over the corpus. acc_c: captions whose generated
// emotion set intersects the reference set; captions with no emotion words on
// either side count as correct and contribute nothing to acc_sw.
inline EmotionAccuracy emotion_accuracy(const std::vector<Tokens>& candidates,
                                        const std::vector<std::vector<Tokens>>& references,
                                        const std::set<std::string>& dictionary) {
  if (candidates.size() != references.size()) {
    throw UsageError("emotion_accuracy: one reference set per candidate required");
  }
  double hit_tokens = 0.0, gen_tokens = 0.0, correct = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    std::set<std::string> ref_set;
    for (const auto& r : references[s]) {
      for (const auto& t : r) {
        if (dictionary.count(t)) ref_set.insert(t);
      }
    }
    std::set<std::string> gen_set;
    for (const auto& t : candidates[s]) {
      if (!dictionary.count(t)) continue;
      gen_set.insert(t);
      gen_tokens += 1.0;
      if (ref_set.count(t)) hit_tokens += 1.0;
    }
    if (gen_set.empty() && ref_set.empty()) {
      correct += 1.0;
      continue;
    }
    if (std::any_of(gen_set.begin(), gen_set.end(), [&](const std::string& w) { return ref_set.count(w) != 0; })) {
      correct += 1.0;
    }
  }
  EmotionAccuracy out;
  out.acc_sw = gen_tokens == 0.0 ? 0.0 : hit_tokens / gen_tokens;
  out.acc_c = candidates.empty() ? 0.0 : correct / static_cast<double>(candidates.size());
  return out;
}

struct MetricReport {
  double bleu_1 = 0.0, bleu_2 = 0.0, bleu_3 = 0.0, bleu_4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double acc_sw = 0.0, acc_c = 0.0;
  double bfs = 0.0, cfs = 0.0;
  std::string combiner;
  bool degenerate_idf = false;
};

inline double harmonic_mean(double a, double b) { return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b); }

// Named rule turning a report into (BFS, CFS).
struct HybridCombiner {
  std::string name;
  std::function<std::pair<double, double>(const MetricReport&)> combine;
};

// bfs = H(mean BLEU-1..4, acc_c), cfs = H(min(CIDEr / 10, 1), acc_c); H = harmonic mean.
inline HybridCombiner harmonic_combiner() {
  return {"harmonic(mean_bleu,acc_c)|harmonic(min(cider/10,1),acc_c)", [](const MetricReport& r) {
            const double bleu_mean = (r.bleu_1 + r.bleu_2 + r.bleu_3 + r.bleu_4) / 4.0;
            return std::pair{harmonic_mean(bleu_mean, r.acc_c), harmonic_mean(std::min(r.cider / 10.0, 1.0), r.acc_c)};
          }};
}

inline void hybrid_scores(MetricReport& report, const HybridCombiner& combiner = harmonic_combiner()) {
  auto [bfs, cfs] = combiner.combine(report);
  report.bfs = bfs;
  report.cfs = cfs;
  report.combiner = combiner.name;
}

inline MetricReport evaluate_corpus(const std::vector<Tokens>& candidates,
                                    const std::vector<std::vector<Tokens>>& references,
                                    const std::set<std::string>& dictionary,
                                    const HybridCombiner& combiner = harmonic_combiner()) {
  MetricReport r;
  r.bleu_1 = bleu(candidates, references, 1);
  r.bleu_2 = bleu(candidates, references, 2);
  r.bleu_3 = bleu(candidates, references, 3);
  r.bleu_4 = bleu(candidates, references, 4);
  std::vector<Tokens> safe_candidates = candidates;
  for (auto& c : safe_candidates) {
    if (c.empty()) c.push_back("<empty>");  // an empty generation scores 0, not an error
  }
  r.rouge_l = rouge_l(safe_candidates, references);
  const auto c = cider(candidates, references);
  r.cider = c.score;
  r.degenerate_idf = c.degenerate_idf;
  const auto acc = emotion_accuracy(candidates, references, dictionary);
  r.acc_sw = acc.acc_sw;
  r.acc_c = acc.acc_c;
  hybrid_scores(r, combiner);
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["bleu_1"] = r.bleu_1;
  j["bleu_2"] = r.bleu_2;
  j["bleu_3"] = r.bleu_3;
  j["bleu_4"] = r.bleu_4;
  j["rouge_l"] = r.rouge_l;
  j["cider"] = r.cider;
  j["acc_sw"] = r.acc_sw;
  j["acc_c"] = r.acc_c;
  j["bfs"] = r.bfs;
  j["cfs"] = r.cfs;
  j["combiner"] = r.combiner;
  j["emotion_accuracy_definition"] = "acc_sw=token-pooled precision of generated emotion words; "
                                     "acc_c=caption-level emotion-set intersection";
  if (r.degenerate_idf) j["warning"] = "single reference set: CIDEr IDF is degenerate";
  return j;
}

// ---------------------------------------------------------------------------
// Emotion-ratio bias statistics

enum class BiasLabel { kEmotional, kNeutral, kFactual };

inline const char* to_string(BiasLabel l) {
  switch (l) {
    case BiasLabel::kEmotional: return "emotional-bias";
    case BiasLabel::kNeutral: return "neutral";
    case BiasLabel::kFactual: return "factual-bias";
  }
  return "neutral";
}

struct BiasThresholds {
  double emotional = 1.0 / 6.0;  // t1
  double factual = 1.0 / 10.0;   // t2
};

// ratio > t1 → emotional, ratio < t2 → factual, otherwise (boundaries included) neutral.
inline BiasLabel classify_bias(const Tokens& caption, const std::set<std::string>& dictionary,
                               const BiasThresholds& t = {}) {
  if (caption.empty()) throw UsageError("classify_bias: empty caption");
  if (!(t.factual < t.emotional)) throw UsageError("classify_bias: thresholds must satisfy t2 < t1");
  const auto emo = std::count_if(caption.begin(), caption.end(), [&](const std::string& w) { return dictionary.count(w) != 0; });
  const double ratio = static_cast<double>(emo) / static_cast<double>(caption.size());
  if (ratio > t.emotional) return BiasLabel::kEmotional;
  if (ratio < t.factual) return BiasLabel::kFactual;
  return BiasLabel::kNeutral;
}

struct BiasSample {
  std::string id;
  std::vector<Tokens> captions;
};

struct BiasReport {
  BiasThresholds thresholds;
  std::size_t emotional = 0, neutral = 0, factual = 0;
  std::vector<std::pair<std::string, BiasLabel>> labels;

  std::size_t total() const { return emotional + neutral + factual; }
  double proportion(BiasLabel l) const {
    const double n = static_cast<double>(total());
    switch (l) {
      case BiasLabel::kEmotional: return static_cast<double>(emotional) / n;
      case BiasLabel::kNeutral: return static_cast<double>(neutral) / n;
      case BiasLabel::kFactual: return static_cast<double>(factual) / n;
    }
    return 0.0;
  }
};

// Majority label over a sample's captions; a tie for the top count is neutral.
inline BiasLabel majority_label(const std::vector<BiasLabel>& labels) {
  std::map<BiasLabel, int> counts;
  for (auto l : labels) ++counts[l];
  int best = -1;
  BiasLabel winner = BiasLabel::kNeutral;
  bool tie = false;
  for (auto [l, c] : counts) {
    if (c > best) {
      best = c;
      winner = l;
      tie = false;
    } else if (c == best) {
      tie = true;
    }
  }
  return tie ? BiasLabel::kNeutral : winner;
}

inline BiasReport bias_report(const std::vector<BiasSample>& samples, const std::set<std::string>& dictionary,
                              const BiasThresholds& t = {}) {
  if (samples.empty()) throw UsageError("bias_report: empty dataset");
  BiasReport rep;
  rep.thresholds = t;
  for (const auto& s : samples) {
    if (s.captions.empty()) throw UsageError("bias_report: sample '" + s.id + "' has no captions");
    std::vector<BiasLabel> per;
    for (const auto& c : s.captions) per.push_back(classify_bias(c, dictionary, t));
    const BiasLabel l = majority_label(per);
    rep.labels.emplace_back(s.id, l);
    switch (l) {
      case BiasLabel::kEmotional: ++rep.emotional; break;
      case BiasLabel::kNeutral: ++rep.neutral; break;
      case BiasLabel::kFactual: ++rep.factual; break;
    }
  }
  return rep;
}

inline nlohmann::ordered_json to_json(const BiasReport& r) {
  nlohmann::ordered_json j;
  j["thresholds"] = {{"t1", r.thresholds.emotional}, {"t2", r.thresholds.factual}};
  j["counts"] = {{"emotional-bias", r.emotional}, {"neutral", r.neutral}, {"factual-bias", r.factual}};
  j["proportions"] = {{"emotional-bias", r.proportion(BiasLabel::kEmotional)},
                      {"neutral", r.proportion(BiasLabel::kNeutral)},
                      {"factual-bias", r.proportion(BiasLabel::kFactual)}};
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& [id, l] : r.labels) labels.push_back({{"id", id}, {"label", to_string(l)}});
  j["labels"] = labels;
  return j;
}

}  // namespace faceforge::eval
