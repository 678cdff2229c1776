#pragma once

// Q-former aggregation of the multimodal representation into a fixed set of
// query tokens, a single-block causal transformer decoder over those tokens,
// and greedy / beam-search decoding.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "faceforge/embeddings.hpp"
#include "faceforge/numerics/nn.hpp"
#include "faceforge/numerics/parameters.hpp"

namespace faceforge {

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;

  // `words` may contain duplicates or special tokens; both are ignored.
  // Regular words are stored in lexicographic order after the specials.
  Vocabulary(const std::vector<std::string>& words, const std::vector<std::string>& emotion_words) {
    tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    std::set<std::string> sorted(words.begin(), words.end());
    for (const auto& s : tokens_) sorted.erase(s);
    tokens_.insert(tokens_.end(), sorted.begin(), sorted.end());
    const std::set<std::string> emo(emotion_words.begin(), emotion_words.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      index_[tokens_[i]] = i;
      emotion_.push_back(i >= 4 && emo.count(tokens_[i]) != 0);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<bool>& emotion_flags() const { return emotion_; }
  bool is_emotion(std::size_t id) const { return emotion_.at(id); }
  static bool is_special(std::size_t id) { return id < 4; }

  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  std::size_t id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& toks) const {
    std::vector<std::size_t> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  // Regular tokens only; stops at <eos>.
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> out;
    for (std::size_t i : ids) {
      if (i == kEos) break;
      if (!is_special(i)) out.push_back(tokens_.at(i));
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
  std::vector<bool> emotion_;
};

namespace qformer {

inline void init_parameters(Parameters& params, std::size_t d, std::size_t num_queries, Rng& rng) {
  params.add("qformer.query", normal_init(Shape{num_queries, d}, 0.02, rng));
  for (const char* block : {"self", "cross"}) {
    for (const char* m : {"w_q", "w_k", "w_v"}) {
      params.add(std::string("qformer.") + block + "." + m, glorot_uniform(d, d, rng));
    }
  }
  params.add("qformer.phi_m", glorot_uniform(d, d, rng));
}

struct Weights {
  Var query;
  Var self_q, self_k, self_v;
  Var cross_q, cross_k, cross_v;
  Var phi_m;

  static Weights bind(Tape& tape, Parameters& p) {
    return {tape.param(p.at("qformer.query")),   tape.param(p.at("qformer.self.w_q")),
            tape.param(p.at("qformer.self.w_k")), tape.param(p.at("qformer.self.w_v")),
            tape.param(p.at("qformer.cross.w_q")), tape.param(p.at("qformer.cross.w_k")),
            tape.param(p.at("qformer.cross.w_v")), tape.param(p.at("qformer.phi_m"))};
  }
};

// q̄ = SelfAttn(q) + q;  M̄ = ϕ_M(Attn(q̄, [M; V]) + q̄), with [M; V] stacked
// along the sequence axis (2N + N rows).
inline Var aggregate(const Var& multimodal, const Var& frames, const Weights& w) {
  if (multimodal.cols() != frames.cols() || multimodal.cols() != w.query.cols()) {
    throw UsageError("qformer: M " + shape_string(multimodal.shape()) + ", V " + shape_string(frames.shape()) +
                     " and queries " + shape_string(w.query.shape()) + " must share the feature width");
  }
  const Var& q = w.query;
  Var q_bar = add(cross_attention(matmul(q, w.self_q), matmul(q, w.self_k), matmul(q, w.self_v)), q);
  Var kv = concat({multimodal, frames}, 0);
  Var attended = cross_attention(matmul(q_bar, w.cross_q), matmul(kv, w.cross_k), matmul(kv, w.cross_v));
  return matmul(add(attended, q_bar), w.phi_m);
}

}  // namespace qformer

namespace decoder {

struct Dims {
  std::size_t dim = 0;
  std::size_t vocab = 0;
  std::size_t positions = 0;  // longest teacher-forced input (max_len)
};

inline void init_parameters(Parameters& params, const Dims& s, Rng& rng) {
  params.add("decoder.embed", normal_init(Shape{s.vocab, s.dim}, 0.02, rng));
  params.add("decoder.pos", normal_init(Shape{s.positions, s.dim}, 0.02, rng));
  for (const char* block : {"self", "cross"}) {
    for (const char* m : {"w_q", "w_k", "w_v"}) {
      params.add(std::string("decoder.") + block + "." + m, glorot_uniform(s.dim, s.dim, rng));
    }
  }
  params.add("decoder.ffn.w1", glorot_uniform(s.dim, 2 * s.dim, rng));
  params.add("decoder.ffn.b1", Tensor(Shape{2 * s.dim}));
  params.add("decoder.ffn.w2", glorot_uniform(2 * s.dim, s.dim, rng));
  params.add("decoder.ffn.b2", Tensor(Shape{s.dim}));
  params.add("decoder.out.w", glorot_uniform(s.dim, s.vocab, rng));
  params.add("decoder.out.b", Tensor(Shape{s.vocab}));
}

struct Weights {
  Var embed, pos;
  Var self_q, self_k, self_v;
  Var cross_q, cross_k, cross_v;
  Var w1, b1, w2, b2;
  Var out_w, out_b;

  static Weights bind(Tape& tape, Parameters& p) {
    auto b = [&](const char* n) { return tape.param(p.at(n)); };
    return {b("decoder.embed"),     b("decoder.pos"),       b("decoder.self.w_q"),  b("decoder.self.w_k"),
            b("decoder.self.w_v"),  b("decoder.cross.w_q"), b("decoder.cross.w_k"), b("decoder.cross.w_v"),
            b("decoder.ffn.w1"),    b("decoder.ffn.b1"),    b("decoder.ffn.w2"),    b("decoder.ffn.b2"),
            b("decoder.out.w"),     b("decoder.out.b")};
  }
};

// Next-token logits (T×vocab) for every prefix of `inputs`; row t sees only
// inputs[0..t] and the memory tokens.
inline Var logits(const Var& memory, std::span<const std::size_t> inputs, const Weights& w) {
  if (inputs.empty()) throw UsageError("decoder: empty input sequence");
  if (inputs.size() > w.pos.rows()) {
    throw UsageError("decoder: sequence of " + std::to_string(inputs.size()) + " exceeds " +
                     std::to_string(w.pos.rows()) + " positions");
  }
  Var x = add(gather_rows(w.embed, inputs), slice_rows(w.pos, 0, inputs.size()));
  x = add(x, causal_self_attention(matmul(x, w.self_q), matmul(x, w.self_k), matmul(x, w.self_v)));
  x = add(x, cross_attention(matmul(x, w.cross_q), matmul(memory, w.cross_k), matmul(memory, w.cross_v)));
  x = add(x, feed_forward(x, w.w1, w.b1, w.w2, w.b2));
  return linear(x, w.out_w, w.out_b);
}

// Log-probabilities of the token following `prefix` (which starts with <bos>).
inline std::vector<double> next_log_probs(const Tensor& memory, const std::vector<std::size_t>& prefix,
                                          Parameters& params) {
  Tape tape(false);
  Weights w = Weights::bind(tape, params);
  Var lg = logits(tape.constant(memory), prefix, w);
  Var last = slice_rows(lg, prefix.size() - 1, 1);
  return log_softmax(last, 1).value().data();
}

}  // namespace decoder

// Returns log-probabilities over the vocabulary for the token after `prefix`.
using NextTokenFn = std::function<std::vector<double>(const std::vector<std::size_t>& prefix)>;

struct Hypothesis {
  std::vector<std::size_t> tokens;  // generated tokens (no <bos>), may end with <eos>
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / tokens.size()
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> beam;  // non-increasing score
};

inline bool generatable(std::size_t id) { return id != Vocabulary::kPad && id != Vocabulary::kBos; }

// Argmax decoding from <bos> until <eos> or max_len generated tokens; ties
// go to the lowest token id. <pad> and <bos> are never emitted.
inline std::vector<std::size_t> decode_greedy(const NextTokenFn& next, std::size_t max_len) {
  std::vector<std::size_t> prefix{Vocabulary::kBos};
  std::vector<std::size_t> out;
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = next(prefix);
    std::size_t best = lp.size();
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (!generatable(v)) continue;
      if (best == lp.size() || lp[v] > lp[best]) best = v;
    }
    if (best == lp.size()) throw UsageError("decode_greedy: vocabulary has no generatable token");
    out.push_back(best);
    prefix.push_back(best);
    if (best == Vocabulary::kEos) break;
  }
  return out;
}

// Length-normalized beam search. Each step expands every live hypothesis by
// every generatable token, keeps the `beam` best candidates (stable order:
// parent rank, then token id), and retires those ending in <eos> or reaching
// max_len. Stops when nothing is live.
inline BeamResult decode_beam(const NextTokenFn& next, std::size_t beam, std::size_t max_len) {
  if (beam == 0) throw UsageError("decode_beam: beam must be at least 1");
  if (max_len == 0) throw UsageError("decode_beam: max_len must be at least 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : live) {
      std::vector<std::size_t> prefix{Vocabulary::kBos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = next(prefix);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (!generatable(v)) continue;
        Hypothesis c;
        c.tokens = h.tokens;
        c.tokens.push_back(v);
        c.log_prob = h.log_prob + lp[v];
        c.score = c.log_prob / static_cast<double>(c.tokens.size());
        candidates.push_back(std::move(c));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    if (candidates.size() > beam) candidates.resize(beam);
    live.clear();
    for (auto& c : candidates) {
      if (c.tokens.back() == Vocabulary::kEos || c.tokens.size() == max_len) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (finished.size() > beam) finished.resize(beam);
  if (finished.empty()) throw UsageError("decode_beam: vocabulary has no generatable token");
  return BeamResult{finished.front(), finished};
}

}  // namespace faceforge
