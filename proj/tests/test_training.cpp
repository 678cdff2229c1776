#include "faceforge/harness.hpp"
#include "faceforge/training.hpp"
#include "test_util.hpp"

using namespace faceforge;
using testutil::expect_all_near;

namespace {

constexpr double kNeg = -1e3;  // effectively zero probability

// vocab: 4 specials, then word 4 (factual) and word 5 (emotion)
const std::vector<bool> kFlags{false, false, false, false, false, true};

double ce(const std::vector<std::vector<double>>& rows, std::vector<std::size_t> targets, double delta) {
  Tape tape(false);
  return emotion_focused_ce(tape.constant(Tensor::from_rows(rows)), targets, kFlags, delta).item();
}

bool all_zero(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return x == 0.0; });
}

}  // namespace

TEST(EmotionFocusedCe, EmotionTargetsAreUpweighted) {
  const std::vector<double> two_way{kNeg, kNeg, kNeg, kNeg, 0, 0};
  EXPECT_NEAR(ce({two_way}, {5}, 0.1), 0.762461898616, 1e-11);
  EXPECT_NEAR(ce({two_way}, {4}, 0.1), 0.69314718056, 1e-11);
  EXPECT_NEAR(ce({two_way}, {5}, 0.0), 0.69314718056, 1e-11);
}

TEST(EmotionFocusedCe, SumsOverPositionsAndSkipsPadding) {
  const std::vector<double> two_way{kNeg, kNeg, kNeg, kNeg, 0, 0};
  const std::vector<double> four_way{kNeg, kNeg, 0, 0, 0, 0};
  EXPECT_NEAR(ce({four_way}, {4}, 0.5), 1.38629436112, 1e-11);
  EXPECT_NEAR(ce({two_way, four_way}, {4, 2}, 0.5), 2.07944154168, 1e-11);
  EXPECT_EQ(ce({two_way, four_way}, {0, 0}, 0.5), 0.0);
}

TEST(EmotionFocusedCe, IncreasesWithDelta) {
  Rng rng(1);
  const Tensor logits = testutil::random_tensor(Shape{3, 6}, rng);
  double prev = -1.0;
  for (double delta : {0.0, 0.1, 0.2, 0.5, 1.0}) {
    Tape tape(false);
    const double l = emotion_focused_ce(tape.constant(logits), std::vector<std::size_t>{5, 4, 5}, kFlags, delta).item();
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(EmotionFocusedCe, RejectsBadArguments) {
  Tape tape(false);
  const Var lg = tape.constant(Tensor(Shape{2, 6}));
  EXPECT_THROW(emotion_focused_ce(lg, std::vector<std::size_t>{4}, kFlags, 0.1), UsageError);
  EXPECT_THROW(emotion_focused_ce(lg, std::vector<std::size_t>{4, 6}, kFlags, 0.1), UsageError);
  EXPECT_THROW(emotion_focused_ce(lg, std::vector<std::size_t>{4, 5}, {false, true}, 0.1), UsageError);
  EXPECT_THROW(emotion_focused_ce(lg, std::vector<std::size_t>{4, 5}, kFlags, -0.1), UsageError);
}

TEST(ClassificationLoss, UniformLogitsAndEmptyTargets) {
  Tape tape(false);
  const Var lg = tape.constant(Tensor(Shape{1, 4}));
  EXPECT_NEAR(classification_loss(lg, std::vector<std::size_t>{2}).item(), 1.38629436112, 1e-11);
  EXPECT_NEAR(classification_loss(lg, std::vector<std::size_t>{0, 3}).item(), 2 * 1.38629436112, 1e-11);
  EXPECT_EQ(classification_loss(lg, std::vector<std::size_t>{}).item(), 0.0);
}

TEST(EmotionTargets, DeduplicateAndRejectUnknownWords) {
  const EmbeddingTable table(4, 0);
  const EmotionDictionary dict({"happy", "sad", "calm"}, table);
  EXPECT_EQ(emotion_targets({"calm", "happy", "calm"}, dict), (std::vector<std::size_t>{2, 0}));
  EXPECT_THROW(emotion_targets({"angry"}, dict), UsageError);
}

TEST(TotalLoss, WeightedSum) {
  EXPECT_DOUBLE_EQ(total_loss(2.0, 3.0, 1.0, 0.1), 2.3);
  EXPECT_DOUBLE_EQ(total_loss(2.0, 3.0, 0.0, 0.5), 1.5);
  Tape tape(false);
  EXPECT_DOUBLE_EQ(
      total_loss(tape.constant(Tensor::scalar(2.0)), tape.constant(Tensor::scalar(3.0)), 1.0, 0.2).item(), 2.6);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0});
  AdamState s;
  adam_step(p, std::vector<double>{1.0, -5.0, 0.0}, s);
  expect_all_near(p.values(), {1.0 - 0.000699999993, -2.0 + 7e-4 * 5.0 / (5.0 + 1e-8), 3.0}, 1e-12);
  EXPECT_EQ(s.t, 1u);
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, s), UsageError);
}

TEST(Adam, ZeroGradientsLeaveParametersExact) {
  Tensor p = Tensor::vector({0.25, -7.0});
  const Tensor before = p;
  AdamState s;
  for (int i = 0; i < 5; ++i) adam_step(p, std::vector<double>{0.0, 0.0}, s);
  EXPECT_TRUE(p == before);
}

TEST(Config, ProfilesAndValidation) {
  TrainConfig c;
  c.apply_profile("ve");
  EXPECT_EQ(c.delta, 0.2);
  EXPECT_EQ(c.lambda_cls, 0.5);
  c.apply_profile("combine");
  EXPECT_EQ(c.delta, 0.1);
  EXPECT_EQ(c.lambda_cls, 0.2);
  EXPECT_THROW(c.apply_profile("msrvtt"), UsageError);
  EXPECT_EQ(parse_order("emotion-first"), Order::kEmotionFirst);
  EXPECT_THROW(parse_order("sideways"), UsageError);
  c.k = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c.k = 1;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(PrepareSample, TeacherForcingAndTruncation) {
  const EmbeddingTable table(6, 3);
  const EmotionDictionary dict({"happy", "sad"}, table);
  const Vocabulary vocab({"a", "man", "happy", "plays", "guitar", "loudly"}, dict.words());
  std::vector<CorpusEntry> corpus{{"c1", "v9", "a man plays guitar", std::nullopt, std::nullopt},
                                  {"c2", "v1", "a sad man", std::nullopt, std::nullopt},
                                  {"c3", "v8", "a woman eats cake", std::nullopt, std::nullopt}};
  const RetrievalIndex index(corpus, table);
  Rng rng(4);
  const SampleRecord r{"s1", "v1", testutil::random_tensor(Shape{3, 6}, rng), "A happy man plays guitar loudly",
                       std::nullopt, std::nullopt};
  const PrepareContext ctx{index, table, dict, vocab, 2, 4};
  const PreparedSample s = prepare_sample(r, ctx);
  EXPECT_EQ(s.targets, vocab.encode({"a", "happy", "man", "plays"}));
  EXPECT_EQ(s.inputs, (std::vector<std::size_t>{Vocabulary::kBos, vocab.id("a"), vocab.id("happy"), vocab.id("man")}));
  EXPECT_EQ(s.emotion_targets, (std::vector<std::size_t>{0}));
  ASSERT_EQ(s.triplets.size(), 2u);
  EXPECT_TRUE(std::find(s.retrieved.begin(), s.retrieved.end(), "c2") == s.retrieved.end());
  EXPECT_GE(s.similarities[0], s.similarities[1]);

  const PreparedSample full = prepare_sample(r, PrepareContext{index, table, dict, vocab, 2, 15});
  EXPECT_EQ(full.targets.back(), Vocabulary::kEos);
  EXPECT_EQ(full.targets.size(), 7u);
}

TEST(Forward, LossIsWeightedSumOfParts) {
  SmallProblem p = small_problem(3);
  p.config.lambda_cls = 0.3;
  Tape tape(false);
  const auto f = forward(tape, p.params, p.sample, p.dictionary, p.emotion_flags, p.config);
  EXPECT_NEAR(f.loss.item(), f.l_e.item() + 0.3 * f.l_cls.item(), 1e-12);
  EXPECT_GT(f.l_e.item(), 0.0);
  EXPECT_GT(f.l_cls.item(), 0.0);
  EXPECT_EQ(f.pipeline.memory.shape(), (Shape{4, 8}));
  EXPECT_EQ(f.pipeline.multimodal.shape(), (Shape{8, 8}));
}

TEST(Forward, FullyAblatedModelLeavesModuleGradientsAtZero) {
  TrainConfig base;
  base.ablation = Ablation::none_enabled();
  SmallProblem p = small_problem(5, base);
  p.params.zero_grad();
  Tape tape;
  const auto f = forward(tape, p.params, p.sample, p.dictionary, p.emotion_flags, p.config);
  tape.backward(f.loss);
  for (auto& [name, t] : p.params) {
    const bool module = name.rfind("fcue.", 0) == 0 || name.rfind("pvea.", 0) == 0 || name.rfind("dbar.", 0) == 0;
    if (module) EXPECT_TRUE(all_zero(t.grad())) << name;
  }
  EXPECT_FALSE(all_zero(p.params.at("decoder.out.w").grad()));
}

TEST(Forward, RetrievalOffMeansFramesPassThrough) {
  TrainConfig base;
  base.ablation.retrieval = false;
  SmallProblem p = small_problem(6, base);
  Tape tape(false);
  const auto out = encode(tape, p.params, p.sample, p.dictionary, p.config);
  for (std::size_t i = 0; i < out.factual.size(); ++i) {
    EXPECT_TRUE(out.factual[i].value() == p.sample.frames);
    EXPECT_TRUE(all_zero(out.hidden[i].value().values()));
  }
}

TEST(Forward, BiasAdjustmentOffUsesUniformRoutes) {
  TrainConfig base;
  base.ablation.bias_adjustment = false;
  SmallProblem p = small_problem(7, base);
  Tape tape(false);
  const auto out = encode(tape, p.params, p.sample, p.dictionary, p.config);
  expect_all_near(out.routes.value().values(), {0.5, 0.5}, 0.0);
  EXPECT_FALSE(out.gates.has_value());
}

TEST(Forward, EmotionFirstOrderDiffersFromFactFirst) {
  SmallProblem a = small_problem(8);
  TrainConfig emo;
  emo.order = Order::kEmotionFirst;
  SmallProblem b = small_problem(8, emo);
  Tape tape(false);
  const double la = forward(tape, a.params, a.sample, a.dictionary, a.emotion_flags, a.config).loss.item();
  const double lb = forward(tape, b.params, b.sample, b.dictionary, b.emotion_flags, b.config).loss.item();
  EXPECT_TRUE(std::isfinite(lb));
  EXPECT_NE(la, lb);
}

TEST(Train, ZeroLossWeightsLeaveParametersUnchanged) {
  SmallProblem p = small_problem(9);
  p.config.lambda_e = 0.0;
  p.config.lambda_cls = 0.0;
  p.config.max_steps = 3;
  const Parameters before = p.params;
  train(p.params, {p.sample}, p.dictionary, p.emotion_flags, p.config);
  for (const auto& [name, t] : before) EXPECT_TRUE(p.params.at(name) == t) << name;
}

TEST(Train, DeterministicAndDecreasing) {
  auto run = [] {
    SmallProblem p = small_problem(10);
    p.config.max_steps = 40;
    p.config.lr = 3e-3;
    auto h = train(p.params, {p.sample}, p.dictionary, p.emotion_flags, p.config);
    return std::make_pair(h, p.params);
  };
  const auto [h1, p1] = run();
  const auto [h2, p2] = run();
  ASSERT_EQ(h1.size(), 40u);
  for (std::size_t i = 0; i < h1.size(); ++i) EXPECT_EQ(h1[i].loss, h2[i].loss);
  for (const auto& [name, t] : p1) EXPECT_TRUE(p2.at(name) == t) << name;
  EXPECT_LT(h1.back().loss, h1.front().loss);
}

TEST(Train, BatchLossIsTheMeanAndHooksFire) {
  SmallProblem p = small_problem(11);
  PreparedSample other = p.sample;
  other.id = "other";
  other.emotion_targets.clear();
  p.config.max_steps = 4;
  p.config.batch_size = 8;
  p.config.checkpoint_every = 2;
  Parameters initial = p.params;
  std::vector<std::size_t> checkpoints;
  std::size_t steps = 0;
  TrainHooks hooks{[&](const LossRecord&) { ++steps; }, [&](std::size_t s, const Parameters&) { checkpoints.push_back(s); }};
  const auto h = train(p.params, {p.sample, other}, p.dictionary, p.emotion_flags, p.config, hooks);
  EXPECT_EQ(steps, 4u);
  EXPECT_EQ(checkpoints, (std::vector<std::size_t>{2, 4}));

  Tape tape(false);
  const double a = forward(tape, initial, other, p.dictionary, p.emotion_flags, p.config).loss.item();
  const double b = forward(tape, initial, p.sample, p.dictionary, p.emotion_flags, p.config).loss.item();
  EXPECT_NEAR(h[0].loss, 0.5 * (a + b), 1e-12);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  SmallProblem p = small_problem(12);
  p.params.at("decoder.out.b").values()[5] = std::numeric_limits<double>::quiet_NaN();
  p.config.max_steps = 2;
  try {
    train(p.params, {p.sample}, p.dictionary, p.emotion_flags, p.config);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("small"), std::string::npos) << e.what();
  }
}

TEST(Train, EmptyDatasetIsAUsageError) {
  SmallProblem p = small_problem(13);
  EXPECT_THROW(train(p.params, {}, p.dictionary, p.emotion_flags, p.config), UsageError);
}

TEST(Train, LossCsvFormat) {
  std::ostringstream os;
  write_loss_csv_header(os);
  write_loss_csv_row(os, LossRecord{3, 1.5, 0.25, 1.525});
  EXPECT_EQ(os.str(), "step,L_e,L_cls,L\n3,1.5,0.25,1.525\n");
}

TEST(GradCheck, SmallProblemPassesInBothOrders) {
  for (Order o : {Order::kFactFirst, Order::kEmotionFirst}) {
    TrainConfig base;
    base.order = o;
    for (const auto& e : small_gradcheck(0, base)) EXPECT_LT(e.relative_error, kGradCheckTolerance) << e.name;
  }
}
