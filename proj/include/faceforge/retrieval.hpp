#pragma once

// Caption repository, exact cosine top-K with leave-one-video-out exclusion,
// and subject-predicate-object triplet extraction/encoding.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "faceforge/embeddings.hpp"
#include "faceforge/text.hpp"
#include "json.hpp"

namespace faceforge {

class ExtractionError : public DataError {
 public:
  using DataError::DataError;
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw UsageError("cosine_similarity: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct Triplet {
  std::string subject;
  std::string predicate;
  std::string object;

  Triplet() = default;
  Triplet(std::string s, std::string p, std::string o)
      : subject(std::move(s)), predicate(std::move(p)), object(std::move(o)) {
    if (subject.empty() || predicate.empty() || object.empty()) {
      throw UsageError("triplet components must be non-empty");
    }
  }

  std::array<std::string, 3> components() const { return {subject, predicate, object}; }
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a", "an", "the", "her", "his", "its", "their", "our", "my", "your", "is", "are", "was", "were",
      "be", "being", "of", "to", "in", "on", "at", "by", "for", "from", "with", "and", "or", "into",
      "onto", "some", "this", "that", "these", "those", "it", "he", "she", "they", "up", "down"};
  return words;
}

inline const std::vector<std::string>& default_verb_lexicon() {
  static const std::vector<std::string> verbs = {
      "loses", "jumps", "plays", "playing", "rides", "riding", "eats", "eating", "cuts", "cutting",
      "sings", "singing", "dances", "dancing", "walks", "walking", "runs", "running", "talks", "talking",
      "slices", "slicing", "pours", "pouring", "drives", "driving", "swims", "swimming", "holds", "holding",
      "throws", "throwing", "catches", "catching", "kicks", "kicking", "climbs", "climbing", "cooks", "cooking",
      "reads", "reading", "writes", "writing", "paints", "painting", "feeds", "feeding", "chases", "chasing",
      "hugs", "hugging", "kisses", "pets", "washes", "opens", "builds", "carries", "pushes", "pulls",
      "watches", "fixes", "mixes", "peels", "fries", "bakes", "grabs", "drops", "wears", "brushes"};
  return verbs;
}

// Heuristic relation extraction over content tokens (stopwords removed):
// subject = first content token, predicate = first lexicon verb that has a
// content token on both sides, object = the content token right after it.
// Without such a verb the middle content token is the predicate and its
// neighbours are subject and object.
inline Triplet extract_triplet(std::string_view sentence, const std::vector<std::string>& lexicon) {
  std::vector<std::string> content;
  for (auto& t : tokenize(sentence)) {
    if (!stopwords().count(t)) content.push_back(std::move(t));
  }
  if (content.size() < 3) {
    throw ExtractionError("cannot extract a triplet from '" + std::string(sentence) + "': " +
                          std::to_string(content.size()) + " content tokens");
  }
  const std::unordered_set<std::string> verbs(lexicon.begin(), lexicon.end());
  for (std::size_t i = 1; i + 1 < content.size(); ++i) {
    if (verbs.count(content[i])) return Triplet(content[0], content[i], content[i + 1]);
  }
  const std::size_t mid = content.size() / 2;
  return Triplet(content[mid - 1], content[mid], content[mid + 1]);
}

// (first, middle, last) token fallback for sentences the extractor rejects.
inline Triplet fallback_triplet(std::string_view sentence) {
  auto toks = tokenize(sentence);
  if (toks.empty()) throw ExtractionError("empty sentence");
  return Triplet(toks.front(), toks[toks.size() / 2], toks.back());
}

// Rows S, P, O, each the token-mean of prefix tokens followed by the component's tokens.
inline Tensor encode_triplet(const Triplet& t, std::string_view prefix, const EmbeddingTable& table) {
  const auto prefix_tokens = tokenize(prefix);
  std::vector<double> flat;
  flat.reserve(3 * table.dim());
  for (const auto& comp : t.components()) {
    auto toks = prefix_tokens;
    for (auto& c : tokenize(comp)) toks.push_back(std::move(c));
    const Vec v = encode_text(toks, table);
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return Tensor(Shape{3, table.dim()}, std::move(flat));
}

inline constexpr std::string_view kDefaultTripletPrefix = "a photo of";

struct CorpusEntry {
  std::string id;
  std::string video_id;
  std::string sentence;
  std::optional<Triplet> triplet;
  std::optional<Vec> embedding;  // overrides the computed sentence embedding
};

struct RetrievalHit {
  std::size_t entry = 0;  // index into the index's entries
  double score = 0.0;
};

struct RetrievalGroup {
  std::size_t rank = 0;  // 1-based
  const CorpusEntry* entry = nullptr;
  double score = 0.0;
  Triplet triplet;
  Tensor components;  // 3×d, rows S, P, O
};

// Exact cosine index over unit-normalized sentence embeddings. Immutable
// after construction; queries are independent and thread-safe.
class RetrievalIndex {
 public:
  RetrievalIndex(std::vector<CorpusEntry> entries, const EmbeddingTable& table)
      : entries_(std::move(entries)), dim_(table.dim()) {
    unit_.reserve(entries_.size() * dim_);
    std::unordered_set<std::string> ids;
    for (auto& e : entries_) {
      if (!ids.insert(e.id).second) throw DataError("corpus: duplicate entry id '" + e.id + "'");
      Vec w = e.embedding ? *e.embedding : encode_sentence(e.sentence, table);
      if (w.size() != dim_) {
        throw DataError("corpus: entry '" + e.id + "' embedding has length " + std::to_string(w.size()) +
                        ", expected " + std::to_string(dim_));
      }
      double n = 0.0;
      for (double x : w) n += x * x;
      if (n == 0.0) throw UsageError("corpus: entry '" + e.id + "' has a zero embedding");
      n = std::sqrt(n);
      for (double x : w) unit_.push_back(x / n);
    }
  }

  const std::vector<CorpusEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const double> unit_embedding(std::size_t i) const {
    return std::span<const double>(unit_).subspan(i * dim_, dim_);
  }

  std::size_t eligible_count(std::string_view exclude_video) const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                  [&](const CorpusEntry& e) { return e.video_id != exclude_video; }));
  }

  // K highest-similarity entries whose video differs from `exclude_video`,
  // by descending score, ties by ascending entry id.
  std::vector<RetrievalHit> top_k(std::span<const double> query, std::size_t k, std::string_view exclude_video = {}) const {
    if (k == 0) throw UsageError("retrieve_topk: K must be at least 1");
    if (query.size() != dim_) throw UsageError("retrieve_topk: query has wrong dimension");
    double qn = 0.0;
    for (double x : query) qn += x * x;
    if (qn == 0.0) throw UsageError("retrieve_topk: zero-norm query");
    qn = std::sqrt(qn);

    std::vector<RetrievalHit> hits;
    hits.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!exclude_video.empty() && entries_[i].video_id == exclude_video) continue;
      auto w = unit_embedding(i);
      double dot = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) dot += w[c] * query[c];
      hits.push_back({i, std::clamp(dot / qn, -1.0, 1.0)});
    }
    if (hits.size() < k) {
      throw ConfigError("retrieve_topk: need K=" + std::to_string(k) + " entries but only " +
                        std::to_string(hits.size()) + " of " + std::to_string(entries_.size()) +
                        " remain after excluding video '" + std::string(exclude_video) + "'");
    }
    auto better = [this](const RetrievalHit& a, const RetrievalHit& b) {
      if (a.score != b.score) return a.score > b.score;
      return entries_[a.entry].id < entries_[b.entry].id;
    };
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
    hits.resize(k);
    return hits;
  }

 private:
  std::vector<CorpusEntry> entries_;
  std::size_t dim_;
  std::vector<double> unit_;
};

struct TripletOptions {
  std::vector<std::string> lexicon = default_verb_lexicon();
  std::string prefix = std::string(kDefaultTripletPrefix);
};

// Triplet for a corpus entry: its precomputed one, else the heuristic, else
// the (first, middle, last) fallback.
inline Triplet triplet_for(const CorpusEntry& e, const TripletOptions& opts) {
  if (e.triplet) return *e.triplet;
  try {
    return extract_triplet(e.sentence, opts.lexicon);
  } catch (const ExtractionError&) {
    return fallback_triplet(e.sentence);
  }
}

inline std::vector<RetrievalGroup> retrieve_topk(const RetrievalIndex& index, std::span<const double> query,
                                                 std::size_t k, std::string_view exclude_video,
                                                 const EmbeddingTable& table, const TripletOptions& opts = {}) {
  std::vector<RetrievalGroup> groups;
  const auto hits = index.top_k(query, k, exclude_video);
  for (std::size_t r = 0; r < hits.size(); ++r) {
    const CorpusEntry& e = index.entries()[hits[r].entry];
    RetrievalGroup g;
    g.rank = r + 1;
    g.entry = &e;
    g.score = hits[r].score;
    g.triplet = triplet_for(e, opts);
    g.components = encode_triplet(g.triplet, opts.prefix, table);
    groups.push_back(std::move(g));
  }
  return groups;
}

// JSONL corpus: {"id", "video_id", "sentence", "triplet"?: [S, P, O], "embedding"?: [...]}.
inline std::vector<CorpusEntry> read_corpus(std::istream& is) {
  std::vector<CorpusEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "corpus line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + e.what());
    }
    try {
      CorpusEntry e;
      e.id = j.at("id").get<std::string>();
      e.video_id = j.at("video_id").get<std::string>();
      e.sentence = j.at("sentence").get<std::string>();
      if (j.contains("triplet") && !j["triplet"].is_null()) {
        auto t = j["triplet"].get<std::vector<std::string>>();
        if (t.size() != 3) throw DataError(where + "triplet must have 3 elements");
        e.triplet = Triplet(t[0], t[1], t[2]);
      }
      if (j.contains("embedding") && !j["embedding"].is_null()) e.embedding = j["embedding"].get<Vec>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ex.what());
    } catch (const UsageError& ex) {
      throw DataError(where + ex.what());
    }
  }
  return out;
}

inline std::vector<CorpusEntry> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open corpus " + path);
  return read_corpus(is);
}

inline nlohmann::json corpus_entry_json(const CorpusEntry& e) {
  nlohmann::json j;
  j["id"] = e.id;
  j["video_id"] = e.video_id;
  j["sentence"] = e.sentence;
  if (e.triplet) j["triplet"] = {e.triplet->subject, e.triplet->predicate, e.triplet->object};
  if (e.embedding) j["embedding"] = *e.embedding;
  return j;
}

}  // namespace faceforge
