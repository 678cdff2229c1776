#include <map>

#include "faceforge/generation.hpp"
#include "test_util.hpp"

using namespace faceforge;
using testutil::expect_all_near;
using testutil::random_tensor;
namespace ref = testutil::ref;

namespace {

// A decoder stand-in: fixed random log-probabilities per prefix.
NextTokenFn random_decoder(std::size_t vocab, std::uint64_t seed) {
  auto table = std::make_shared<std::map<std::vector<std::size_t>, std::vector<double>>>();
  auto rng = std::make_shared<Rng>(seed);
  return [=](const std::vector<std::size_t>& prefix) {
    auto it = table->find(prefix);
    if (it != table->end()) return it->second;
    std::vector<double> logits(vocab);
    double m = -1e300;
    for (double& x : logits) m = std::max(m, x = 2.0 * rng->normal());
    double z = 0.0;
    for (double x : logits) z += std::exp(x - m);
    for (double& x : logits) x = x - m - std::log(z);
    return table->emplace(prefix, logits).first->second;
  };
}

double sequence_log_prob(const NextTokenFn& next, const std::vector<std::size_t>& seq) {
  std::vector<std::size_t> prefix{Vocabulary::kBos};
  double lp = 0.0;
  for (std::size_t t : seq) {
    lp += next(prefix)[t];
    prefix.push_back(t);
  }
  return lp;
}

// Best length-normalized score over every complete sequence.
void exhaustive(const NextTokenFn& next, std::size_t vocab, std::size_t max_len, std::vector<std::size_t>& seq,
                double& best) {
  if (!seq.empty() && (seq.back() == Vocabulary::kEos || seq.size() == max_len)) {
    best = std::max(best, sequence_log_prob(next, seq) / static_cast<double>(seq.size()));
    return;
  }
  for (std::size_t v = 0; v < vocab; ++v) {
    if (!generatable(v)) continue;
    seq.push_back(v);
    exhaustive(next, vocab, max_len, seq, best);
    seq.pop_back();
  }
}

struct SmallModel {
  static constexpr std::size_t d = 4, queries = 3, vocab = 9, positions = 5;
  Parameters params;
  SmallModel() {
    Rng rng(31);
    qformer::init_parameters(params, d, queries, rng);
    decoder::init_parameters(params, decoder::Dims{d, vocab, positions}, rng);
    params.at("qformer.query") = random_tensor(Shape{queries, d}, rng);
    params.at("qformer.query").set_requires_grad(true);
  }
};

}  // namespace

TEST(Vocabulary, SpecialsFirstThenSortedWords) {
  const Vocabulary v({"zebra", "apple", "happy", "apple", "<eos>"}, {"happy", "nope"});
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "apple", "happy", "zebra"}));
  EXPECT_EQ(v.id("happy"), 5u);
  EXPECT_EQ(v.id("missing"), Vocabulary::kUnk);
  EXPECT_EQ(v.emotion_flags(), (std::vector<bool>{false, false, false, false, false, true, false}));
  EXPECT_EQ(v.decode({4, 3, 6, 2, 5}), (std::vector<std::string>{"apple", "zebra"}));
  EXPECT_EQ(v.encode({"zebra", "xyz"}), (std::vector<std::size_t>{6, 3}));
}

TEST(QFormer, OutputHasOneRowPerQuery) {
  SmallModel m;
  Rng rng(1);
  Tape tape(false);
  const auto w = qformer::Weights::bind(tape, m.params);
  const Var out = qformer::aggregate(tape.constant(random_tensor(Shape{6, 4}, rng)),
                                     tape.constant(random_tensor(Shape{3, 4}, rng)), w);
  EXPECT_EQ(out.shape(), (Shape{SmallModel::queries, SmallModel::d}));
  EXPECT_THROW(qformer::aggregate(tape.constant(Tensor(Shape{6, 5})), tape.constant(Tensor(Shape{3, 4})), w),
               UsageError);
}

TEST(QFormer, MatchesPlainLoopReference) {
  SmallModel m;
  Rng rng(2);
  const Tensor mm = random_tensor(Shape{4, 4}, rng), v = random_tensor(Shape{2, 4}, rng);
  Tape tape(false);
  const Var out = qformer::aggregate(tape.constant(mm), tape.constant(v), qformer::Weights::bind(tape, m.params));
  const auto& p = m.params;
  const Tensor& q = p.at("qformer.query");
  Tensor q_bar = ref::attention(ref::matmul(q, p.at("qformer.self.w_q")), ref::matmul(q, p.at("qformer.self.w_k")),
                                ref::matmul(q, p.at("qformer.self.w_v")));
  for (std::size_t i = 0; i < q.size(); ++i) q_bar.values()[i] += q.values()[i];
  Tensor kv(Shape{6, 4});
  for (std::size_t i = 0; i < 16; ++i) kv.values()[i] = mm.values()[i];
  for (std::size_t i = 0; i < 8; ++i) kv.values()[16 + i] = v.values()[i];
  Tensor att = ref::attention(ref::matmul(q_bar, p.at("qformer.cross.w_q")), ref::matmul(kv, p.at("qformer.cross.w_k")),
                              ref::matmul(kv, p.at("qformer.cross.w_v")));
  for (std::size_t i = 0; i < att.size(); ++i) att.values()[i] += q_bar.values()[i];
  expect_all_near(out.value().values(), ref::matmul(att, p.at("qformer.phi_m")).data(), 1e-12);
}

TEST(QFormer, InvariantToMemoryRowOrder) {
  SmallModel m;
  Rng rng(3);
  const Tensor mm = random_tensor(Shape{6, 4}, rng), v = random_tensor(Shape{3, 4}, rng);
  Tape tape(false);
  const auto w = qformer::Weights::bind(tape, m.params);
  const Var a = qformer::aggregate(tape.constant(mm), tape.constant(v), w);
  const Var b = qformer::aggregate(tape.constant(ref::permute_rows(mm, {5, 1, 3, 0, 4, 2})),
                                   tape.constant(ref::permute_rows(v, {2, 0, 1})), w);
  expect_all_near(b.value().values(), a.value().data(), 1e-12);
}

TEST(Decoder, RowsAreCausal) {
  SmallModel m;
  Rng rng(4);
  const Tensor memory = random_tensor(Shape{3, 4}, rng);
  Tape tape(false);
  const auto w = decoder::Weights::bind(tape, m.params);
  const std::vector<std::size_t> a{1, 5, 6, 7}, b{1, 5, 8, 4};
  const Var la = decoder::logits(tape.constant(memory), a, w), lb = decoder::logits(tape.constant(memory), b, w);
  EXPECT_EQ(la.shape(), (Shape{4, SmallModel::vocab}));
  for (std::size_t r = 0; r < 2; ++r) {
    expect_all_near(lb.value().row(r), std::vector<double>(la.value().row(r).begin(), la.value().row(r).end()), 0.0);
  }
  double diff = 0.0;
  for (std::size_t c = 0; c < SmallModel::vocab; ++c) diff += std::abs(la.value()(2, c) - lb.value()(2, c));
  EXPECT_GT(diff, 1e-9);
}

TEST(Decoder, RejectsEmptyAndOverlongInputs) {
  SmallModel m;
  Tape tape(false);
  const auto w = decoder::Weights::bind(tape, m.params);
  const Var memory = tape.constant(Tensor(Shape{3, 4}));
  EXPECT_THROW(decoder::logits(memory, std::vector<std::size_t>{}, w), UsageError);
  EXPECT_THROW(decoder::logits(memory, std::vector<std::size_t>(6, 1), w), UsageError);
}

TEST(Decoder, NextLogProbsNormalize) {
  SmallModel m;
  Rng rng(5);
  const auto lp = decoder::next_log_probs(random_tensor(Shape{3, 4}, rng), {1, 4}, m.params);
  double total = 0.0;
  for (double x : lp) total += std::exp(x);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
  SmallModel m;
  Rng rng(6);
  m.params.add("in.m", random_tensor(Shape{4, 4}, rng));
  m.params.add("in.v", random_tensor(Shape{2, 4}, rng));
  testutil::expect_gradients_match(m.params, [](Tape& t, Parameters& ps) {
    const Var mem = qformer::aggregate(t.param(ps.at("in.m")), t.param(ps.at("in.v")), qformer::Weights::bind(t, ps));
    const std::vector<std::size_t> inputs{1, 4, 7};
    const Var lg = decoder::logits(mem, inputs, decoder::Weights::bind(t, ps));
    return scale(sum(pick(log_softmax(lg, 1), std::vector<std::size_t>{4, 7, 2})), -1.0);
  }, 1e-4);  // self-attention gradients here are ~1e-5, near the difference-quotient noise floor
}

TEST(Greedy, TiesGoToLowestIdAndPadBosAreSkipped) {
  const NextTokenFn flat = [](const std::vector<std::size_t>&) { return std::vector<double>{5, 5, -1, -1, 0, 0}; };
  EXPECT_EQ(decode_greedy(flat, 3), (std::vector<std::size_t>{4, 4, 4}));
  EXPECT_EQ(decode_greedy(flat, 1), (std::vector<std::size_t>{4}));
  const NextTokenFn eos = [](const std::vector<std::size_t>&) { return std::vector<double>{0, 0, 1, 0}; };
  EXPECT_EQ(decode_greedy(eos, 5), (std::vector<std::size_t>{Vocabulary::kEos}));
}

TEST(Beam, WidthOneMatchesGreedy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto next = random_decoder(7, seed);
    const auto g = decode_greedy(next, 6);
    const auto b = decode_beam(next, 1, 6);
    EXPECT_EQ(b.best.tokens, g) << "seed " << seed;
  }
}

TEST(Beam, WideBeamFindsTheExhaustiveOptimum) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto next = random_decoder(6, 100 + seed);
    std::vector<std::size_t> seq;
    double best = -1e300;
    exhaustive(next, 6, 3, seq, best);
    const auto b = decode_beam(next, 1000, 3);
    EXPECT_NEAR(b.best.score, best, 1e-12) << "seed " << seed;
    EXPECT_NEAR(b.best.log_prob, sequence_log_prob(next, b.best.tokens), 1e-12);
  }
}

TEST(Beam, ReturnedBeamIsSortedAndComplete) {
  const auto next = random_decoder(8, 77);
  const auto b = decode_beam(next, 4, 5);
  ASSERT_FALSE(b.beam.empty());
  EXPECT_LE(b.beam.size(), 4u);
  for (std::size_t i = 1; i < b.beam.size(); ++i) EXPECT_GE(b.beam[i - 1].score, b.beam[i].score);
  for (const auto& h : b.beam) {
    EXPECT_TRUE(h.tokens.back() == Vocabulary::kEos || h.tokens.size() == 5);
    EXPECT_NEAR(h.score, h.log_prob / h.tokens.size(), 1e-15);
  }
  EXPECT_THROW(decode_beam(next, 0, 5), UsageError);
  EXPECT_THROW(decode_beam(next, 2, 0), UsageError);
}
