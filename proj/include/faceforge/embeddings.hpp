#pragma once

// Frozen vector providers: word vectors loaded from a text file with a
// deterministic seeded fallback, token-mean sentence encoding, mean-pooled
// video features, and the embedded emotion dictionary.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "faceforge/default_emotions.hpp"
#include "faceforge/numerics/checkpoint.hpp"
#include "faceforge/numerics/rng.hpp"
#include "faceforge/numerics/tensor.hpp"
#include "faceforge/text.hpp"

namespace faceforge {

using Vec = std::vector<double>;

// Unit-norm pseudo-random vector keyed by hash(seed, token).
inline Vec deterministic_embedding(std::string_view token, std::uint64_t seed, std::size_t d) {
  if (d == 0) throw UsageError("deterministic_embedding: dimension must be positive");
  Rng rng(stable_hash(seed, token));
  Vec v(d);
  double norm = 0.0;
  while (norm == 0.0) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

class EmbeddingTable {
 public:
  EmbeddingTable(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim == 0) throw UsageError("embedding dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return vectors_.size(); }
  bool from_file() const { return from_file_; }

  // "file" when any vectors were loaded, otherwise "deterministic(<seed>)".
  std::string source() const {
    return from_file_ ? std::string("file") : "deterministic(" + std::to_string(seed_) + ")";
  }

  bool contains(const std::string& token) const { return vectors_.count(token) != 0; }

  // Later inserts of the same token override earlier ones.
  void insert(const std::string& token, Vec v) {
    if (v.size() != dim_) {
      throw UsageError("embedding for '" + token + "' has length " + std::to_string(v.size()) + ", expected " +
                       std::to_string(dim_));
    }
    vectors_[token] = std::move(v);
  }

  void mark_file_backed() { from_file_ = true; }

  // Stored vector, or the deterministic fallback for unknown tokens.
  Vec lookup(const std::string& token) const {
    auto it = vectors_.find(token);
    if (it != vectors_.end()) return it->second;
    return deterministic_embedding(token, seed_, dim_);
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  bool from_file_ = false;
  std::unordered_map<std::string, Vec> vectors_;
};

// Parses "token v_1 ... v_d" lines. Blank lines are skipped; a duplicate
// token replaces the earlier vector.
inline EmbeddingTable read_word_vectors(std::istream& is, std::size_t d, std::uint64_t fallback_seed = 0) {
  EmbeddingTable table(d, fallback_seed);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    Vec v;
    std::string num;
    while (ls >> num) {
      try {
        v.push_back(parse_double(num));
      } catch (const DataError&) {
        throw DataError("word vectors: line " + std::to_string(line_no) + ": invalid number '" + num + "'");
      }
    }
    if (v.size() != d) {
      throw DataError("word vectors: line " + std::to_string(line_no) + ": expected " + std::to_string(d) +
                      " values, found " + std::to_string(v.size()));
    }
    table.insert(token, std::move(v));
    table.mark_file_backed();
  }
  return table;
}

inline EmbeddingTable load_word_vectors(const std::string& path, std::size_t d, std::uint64_t fallback_seed = 0) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open word-vector file " + path);
  return read_word_vectors(is, d, fallback_seed);
}

// Mean of the token vectors.
inline Vec encode_text(const std::vector<std::string>& tokens, const EmbeddingTable& table) {
  if (tokens.empty()) throw UsageError("encode_text: empty token list");
  Vec acc(table.dim(), 0.0);
  for (const auto& tok : tokens) {
    const Vec v = table.lookup(tok);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& x : acc) x *= inv;
  return acc;
}

inline Vec encode_sentence(std::string_view sentence, const EmbeddingTable& table) {
  return encode_text(tokenize(sentence), table);
}

struct VideoFeatures {
  std::string id;
  Tensor frames;  // N×d
  Vec pooled;     // row mean of frames
};

inline Vec row_mean(const Tensor& m) {
  Vec out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c);
  }
  for (double& x : out) x /= static_cast<double>(m.rows());
  return out;
}

inline VideoFeatures ingest_video(const Tensor& frames, std::string id) {
  if (frames.rank() != 2) throw UsageError("ingest_video: frames must be an N×d matrix");
  return VideoFeatures{std::move(id), frames, row_mean(frames)};
}

inline VideoFeatures ingest_video(const std::vector<Vec>& frames, std::string id) {
  if (frames.empty()) throw UsageError("ingest_video: at least one frame required");
  const std::size_t d = frames.front().size();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != d) {
      throw UsageError("ingest_video: frame " + std::to_string(i) + " has width " + std::to_string(frames[i].size()) +
                       ", expected " + std::to_string(d));
    }
  }
  return ingest_video(Tensor::from_rows(frames), std::move(id));
}

class EmotionDictionary {
 public:
  EmotionDictionary(std::vector<std::string> words, const EmbeddingTable& table) : words_(std::move(words)) {
    if (words_.empty()) throw UsageError("emotion dictionary is empty");
    std::vector<double> flat;
    flat.reserve(words_.size() * table.dim());
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) throw UsageError("duplicate emotion word '" + words_[i] + "'");
      const Vec v = encode_text({words_[i]}, table);
      flat.insert(flat.end(), v.begin(), v.end());
    }
    embedded_ = Tensor(Shape{words_.size(), table.dim()}, std::move(flat));
  }

  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }
  const Tensor& embedded() const { return embedded_; }  // N_w×d

  bool contains(const std::string& w) const { return index_.count(w) != 0; }
  std::optional<std::size_t> index_of(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Emotion words among `tokens`, in order of appearance (with repeats).
  std::vector<std::string> emotion_tokens(const std::vector<std::string>& tokens) const {
    std::vector<std::string> out;
    for (const auto& t : tokens) {
      if (contains(t)) out.push_back(t);
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  Tensor embedded_;
};

inline std::vector<std::string> default_emotion_words(std::size_t count = kDefaultEmotionWords.size()) {
  if (count > kDefaultEmotionWords.size()) throw UsageError("at most 179 default emotion words available");
  return std::vector<std::string>(kDefaultEmotionWords.begin(), kDefaultEmotionWords.begin() + count);
}

// One word per line; blank lines ignored.
inline std::vector<std::string> load_emotion_words(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open emotion dictionary " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    if (toks.size() != 1) throw DataError("emotion dictionary: expected one word per line, got '" + line + "'");
    out.push_back(toks[0]);
  }
  return out;
}

}  // namespace faceforge
