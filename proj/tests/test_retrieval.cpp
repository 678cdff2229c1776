#include <algorithm>
#include <sstream>

#include "faceforge/retrieval.hpp"
#include "test_util.hpp"

using namespace faceforge;
using testutil::expect_all_near;

namespace {

CorpusEntry entry(std::string id, std::string video, Vec embedding) {
  return CorpusEntry{std::move(id), std::move(video), "a caption", std::nullopt, std::move(embedding)};
}

std::vector<std::string> ids(const RetrievalIndex& index, const std::vector<RetrievalHit>& hits) {
  std::vector<std::string> out;
  for (const auto& h : hits) out.push_back(index.entries()[h.entry].id);
  return out;
}

}  // namespace

TEST(Cosine, HandValues) {
  EXPECT_NEAR(cosine_similarity(Vec{1, 2, 3}, Vec{1, 2, 3}), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(Vec{1, 0}, Vec{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(Vec{1, 0}, Vec{0.6, 0.8}), 0.6, 1e-15);
  EXPECT_THROW(cosine_similarity(Vec{0, 0}, Vec{1, 0}), UsageError);
}

TEST(TopK, ReturnsBestEntriesInScoreOrder) {
  const EmbeddingTable t(2, 0);
  const RetrievalIndex index({entry("e1", "v1", {1, 0}), entry("e2", "v2", {0, 1}), entry("e3", "v3", {0.6, 0.8})}, t);
  const auto hits = index.top_k(Vec{1, 0}, 2);
  EXPECT_EQ(ids(index, hits), (std::vector<std::string>{"e1", "e3"}));
  EXPECT_NEAR(hits[0].score, 1.0, 1e-15);
  EXPECT_NEAR(hits[1].score, 0.6, 1e-15);
  EXPECT_EQ(ids(index, index.top_k(Vec{1, 0}, 3)), (std::vector<std::string>{"e1", "e3", "e2"}));
}

TEST(TopK, ExcludedVideoPromotesTheRunnerUp) {
  const EmbeddingTable t(2, 0);
  const RetrievalIndex index({entry("e1", "v1", {1, 0}), entry("e2", "v2", {0, 1}), entry("e3", "v3", {0.6, 0.8})}, t);
  EXPECT_EQ(ids(index, index.top_k(Vec{1, 0}, 1, "v1")), (std::vector<std::string>{"e3"}));
}

TEST(TopK, TiesBreakByAscendingIdRegardlessOfInsertionOrder) {
  const EmbeddingTable t(2, 0);
  const RetrievalIndex a({entry("b", "v1", {1, 0}), entry("a", "v2", {2, 0}), entry("c", "v3", {0, 1})}, t);
  const RetrievalIndex b({entry("c", "v3", {0, 1}), entry("a", "v2", {2, 0}), entry("b", "v1", {1, 0})}, t);
  EXPECT_EQ(ids(a, a.top_k(Vec{1, 0}, 3)), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(ids(b, b.top_k(Vec{1, 0}, 3)), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(TopK, TooFewEntriesAfterExclusionIsAConfigError) {
  const EmbeddingTable t(2, 0);
  const RetrievalIndex index({entry("e1", "v1", {1, 0}), entry("e2", "v1", {0, 1}), entry("e3", "v3", {0.6, 0.8})}, t);
  try {
    index.top_k(Vec{1, 0}, 2, "v1");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("only 1 of 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(index.top_k(Vec{1, 0}, 0), UsageError);
  EXPECT_THROW(RetrievalIndex({entry("x", "v", {1, 0}), entry("x", "w", {0, 1})}, t), DataError);
}

TEST(TopK, MatchesBruteForceOnRandomCorpora) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 3, n = 20 + rng.below(80);
    const EmbeddingTable t(d, 0);
    std::vector<CorpusEntry> corpus;
    for (std::size_t i = 0; i < n; ++i) {
      // a coarse grid makes exact ties common
      Vec v{static_cast<double>(rng.below(3)) - 1, static_cast<double>(rng.below(3)), 1.0};
      corpus.push_back(entry("id" + std::to_string(rng.below(1000000)) + "_" + std::to_string(i),
                             "v" + std::to_string(rng.below(10)), v));
    }
    const RetrievalIndex index(corpus, t);
    const Vec q{rng.normal(), rng.normal(), rng.normal()};
    const std::string excl = "v" + std::to_string(rng.below(10));
    std::vector<std::pair<double, std::string>> oracle;
    for (const auto& e : corpus) {
      if (e.video_id == excl) continue;
      oracle.emplace_back(cosine_similarity(q, *e.embedding), e.id);
    }
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t k = std::min<std::size_t>(oracle.size(), 1 + rng.below(8));
    const auto hits = index.top_k(q, k, excl);
    ASSERT_EQ(hits.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_EQ(index.entries()[hits[i].entry].id, oracle[i].second);
      EXPECT_NEAR(hits[i].score, oracle[i].first, 1e-12);
      EXPECT_GE(hits[i].score, -1.0);
      EXPECT_LE(hits[i].score, 1.0);
    }
  }
}

TEST(ExtractTriplet, VerbLexiconHeuristic) {
  const auto& lex = default_verb_lexicon();
  EXPECT_EQ(extract_triplet("a girl loses her tooth", lex), Triplet("girl", "loses", "tooth"));
  EXPECT_EQ(extract_triplet("The boy jumps rope.", lex), Triplet("boy", "jumps", "rope"));
  EXPECT_THROW(extract_triplet("red blue", lex), ExtractionError);
}

TEST(ExtractTriplet, FallsBackToMiddleTokenWithoutVerb) {
  EXPECT_EQ(extract_triplet("red green blue", default_verb_lexicon()), Triplet("red", "green", "blue"));
  EXPECT_EQ(extract_triplet("red green blue yellow", default_verb_lexicon()), Triplet("green", "blue", "yellow"));
}

TEST(TripletFor, PrefersPrecomputedThenHeuristicThenFallback) {
  const TripletOptions opts;
  CorpusEntry e{"e", "v", "a man rides a horse", Triplet("x", "y", "z"), std::nullopt};
  EXPECT_EQ(triplet_for(e, opts), Triplet("x", "y", "z"));
  e.triplet.reset();
  EXPECT_EQ(triplet_for(e, opts), Triplet("man", "rides", "horse"));
  e.sentence = "hello there";
  EXPECT_EQ(triplet_for(e, opts), Triplet("hello", "there", "there"));
}

TEST(EncodeTriplet, RowsAreComponentVectorsWithoutPrefix) {
  const EmbeddingTable t(6, 4);
  const Tensor m = encode_triplet(Triplet("girl", "loses", "girl"), "", t);
  EXPECT_EQ(m.shape(), (Shape{3, 6}));
  expect_all_near(m.row(0), t.lookup("girl"), 0.0);
  expect_all_near(m.row(1), t.lookup("loses"), 0.0);
  expect_all_near(m.row(2), std::vector<double>(m.row(0).begin(), m.row(0).end()), 0.0);
}

TEST(EncodeTriplet, PrefixIsAveragedIn) {
  const EmbeddingTable t(6, 4);
  const Tensor m = encode_triplet(Triplet("girl", "loses", "tooth"), "a photo of", t);
  std::vector<double> expected(6, 0.0);
  for (const char* w : {"a", "photo", "of", "girl"}) {
    const Vec v = t.lookup(w);
    for (std::size_t i = 0; i < 6; ++i) expected[i] += v[i] / 4.0;
  }
  expect_all_near(m.row(0), expected, 1e-15);
}

TEST(RetrieveTopK, GroupsCarryRankScoreTripletAndComponents) {
  const EmbeddingTable t(4, 1);
  std::vector<CorpusEntry> corpus = {
      {"c1", "v1", "a man rides a horse", std::nullopt, std::nullopt},
      {"c2", "v2", "a girl eats an apple", std::nullopt, std::nullopt},
      {"c3", "v3", "a dog chases a cat", std::nullopt, std::nullopt}};
  const RetrievalIndex index(corpus, t);
  const Vec q = encode_sentence("a girl eats an apple", t);
  const auto groups = retrieve_topk(index, q, 2, "", t);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].rank, 1u);
  EXPECT_EQ(groups[0].entry->id, "c2");
  EXPECT_NEAR(groups[0].score, 1.0, 1e-12);
  EXPECT_EQ(groups[0].triplet, Triplet("girl", "eats", "apple"));
  EXPECT_TRUE(groups[0].components == encode_triplet(groups[0].triplet, kDefaultTripletPrefix, t));
  EXPECT_GE(groups[0].score, groups[1].score);
}

TEST(Corpus, ReadsJsonLinesAndReportsBadLines) {
  std::istringstream good(
      "{\"id\":\"c1\",\"video_id\":\"v1\",\"sentence\":\"a man rides\",\"triplet\":[\"man\",\"rides\",\"horse\"]}\n"
      "\n{\"id\":\"c2\",\"video_id\":\"v2\",\"sentence\":\"a girl eats\",\"embedding\":[1,2]}\n");
  const auto corpus = read_corpus(good);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[0].triplet, Triplet("man", "rides", "horse"));
  EXPECT_EQ(corpus[1].embedding, (Vec{1, 2}));
  std::istringstream bad("{\"id\":\"c1\",\"video_id\":\"v1\",\"sentence\":\"ok\"}\n{\"id\":\"c2\"}\n");
  try {
    read_corpus(bad);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}
