#include <filesystem>
#include <fstream>
#include <sstream>

#include "faceforge/harness.hpp"
#include "test_util.hpp"

using namespace faceforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("faceforge_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string data_error(const std::string& text, std::size_t dim = 0) {
  std::istringstream is(text);
  try {
    read_dataset(is, "ds.jsonl", dim);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

RunConfig tiny_config() {
  RunConfig c;
  c.dim = 8;
  c.frames = 4;
  c.queries = 2;
  c.max_len = 10;
  c.beam = 1;
  c.train.k = 2;
  c.train.max_steps = 3;
  c.train.batch_size = 4;
  return c;
}

SynthData tiny_synth(std::uint64_t seed) {
  SynthSpec s;
  s.samples = 6;
  s.emotion_words = 4;
  s.dim = 8;
  s.frames = 4;
  s.seed = seed;
  return synth_dataset(s);
}

}  // namespace

TEST(Dataset, ReadsInlineFramesAndDefaults) {
  std::istringstream is(
      "{\"id\":\"s1\",\"caption\":\"a happy dog\",\"frames\":[[1,2],[3,4]],\"emotion_words\":[\"happy\"]}\n\n"
      "{\"id\":\"s2\",\"video_id\":\"v\",\"caption\":\"x y z\",\"frames\":[[0.5,-1]],\"triplet\":[\"x\",\"y\",\"z\"]}\n");
  const auto ds = read_dataset(is, "ds", 2);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].video_id, "s1");
  EXPECT_TRUE(ds[0].frames == Tensor::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(ds[0].emotion_words, (std::vector<std::string>{"happy"}));
  EXPECT_EQ(ds[1].triplet, Triplet("x", "y", "z"));
}

TEST(Dataset, ErrorsNameTheLine) {
  const std::string ok = "{\"id\":\"s1\",\"caption\":\"c\",\"frames\":[[1,2]]}\n";
  EXPECT_NE(data_error(ok + "{\"id\":\"s2\",\"frames\":[[1,2]]}\n").find("ds.jsonl:2: missing 'caption'"),
            std::string::npos);
  EXPECT_NE(data_error(ok, 3).find("ds.jsonl:1: frames have width 2 but d is 3"), std::string::npos);
  EXPECT_NE(data_error("not json\n").find("ds.jsonl:1"), std::string::npos);
  EXPECT_NE(data_error("{\"id\":\"s\",\"caption\":\"c\",\"frames\":[[1,2],[3]]}").find("ragged"), std::string::npos);
  EXPECT_NE(data_error("{\"id\":\"s\",\"caption\":\"c\",\"frames\":\"missing.txt\"}").find("cannot open"),
            std::string::npos);
}

TEST(Dataset, FramesMayLiveInAMatrixFile) {
  const fs::path dir = scratch_dir("frames");
  std::ofstream(dir / "f1.txt") << "1 2 3\n4 5 6\n";
  std::ofstream(dir / "ds.jsonl") << "{\"id\":\"s1\",\"caption\":\"c\",\"frames\":\"f1.txt\"}\n";
  const auto ds = load_dataset((dir / "ds.jsonl").string(), 3);
  EXPECT_TRUE(ds[0].frames == Tensor::from_rows({{1, 2, 3}, {4, 5, 6}}));
}

TEST(Dataset, WriteReadRoundTripIsExact) {
  const auto data = tiny_synth(4);
  std::stringstream ss;
  write_dataset(ss, data.records);
  const auto back = read_dataset(ss);
  ASSERT_EQ(back.size(), data.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_TRUE(back[i] == data.records[i]) << i;
}

TEST(Config, PrecedenceDefaultsProfileFileFlags) {
  const auto defaults = resolve_config(nullptr, nullptr, nullptr);
  EXPECT_EQ(defaults.train.delta, 0.1);
  EXPECT_EQ(defaults.dim, 300u);
  EXPECT_EQ(defaults.train.lr, 7e-4);

  const nlohmann::json file = {{"profile", "ve"}, {"lambda_cls", 0.7}, {"k", 3}, {"dim", 16}};
  const auto from_file = resolve_config(file, nullptr, nullptr);
  EXPECT_EQ(from_file.train.delta, 0.2);       // profile
  EXPECT_EQ(from_file.train.lambda_cls, 0.7);  // file beats profile
  EXPECT_EQ(from_file.train.k, 3u);

  const nlohmann::json flags = {{"k", 5}, {"ablate", {"ea", "ba"}}, {"order", "emotion-first"}};
  const auto both = resolve_config(file, flags, nullptr);
  EXPECT_EQ(both.train.k, 5u);
  EXPECT_EQ(both.dim, 16u);
  EXPECT_FALSE(both.train.ablation.emotion_augmentation);
  EXPECT_FALSE(both.train.ablation.bias_adjustment);
  EXPECT_TRUE(both.train.ablation.retrieval);
  EXPECT_EQ(both.train.order, Order::kEmotionFirst);
  EXPECT_EQ(resolve_config(file, {{"profile", "msvd"}}, nullptr).train.delta, 0.1);
}

TEST(Config, EnvironmentSeedOnlyWhenUnset) {
  EXPECT_EQ(resolve_config(nullptr, nullptr, "42").train.seed, 42u);
  EXPECT_EQ(resolve_config({{"seed", 7}}, nullptr, "42").train.seed, 7u);
  EXPECT_EQ(resolve_config(nullptr, {{"seed", 9}}, "42").train.seed, 9u);
  EXPECT_THROW(resolve_config(nullptr, nullptr, "-3"), UsageError);
}

TEST(Config, RejectsUnknownOrMistypedFields) {
  EXPECT_THROW(resolve_config({{"lamda", 1}}, nullptr, nullptr), UsageError);
  EXPECT_THROW(resolve_config({{"k", "four"}}, nullptr, nullptr), UsageError);
  EXPECT_THROW(resolve_config({{"ablate", {"xx"}}}, nullptr, nullptr), UsageError);
  EXPECT_THROW(resolve_config({{"beam", 0}}, nullptr, nullptr), UsageError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = resolve_config({{"profile", "combine"}, {"ablate", {"fc"}}, {"seed", 3}}, nullptr, nullptr);
  const nlohmann::json j = config_json(c);
  const RunConfig back = resolve_config(j, nullptr, nullptr);
  EXPECT_EQ(back.train.delta, c.train.delta);
  EXPECT_EQ(back.train.ablation, c.train.ablation);
  EXPECT_EQ(back.train.seed, 3u);
  EXPECT_EQ(back.train.profile, "combine");
}

TEST(Synth, LargestRemainderCounts) {
  EXPECT_EQ(largest_remainder(10, {0.3, 0.5, 0.2}), (std::vector<std::size_t>{3, 5, 2}));
  EXPECT_EQ(largest_remainder(7, {0.3, 0.5, 0.2}), (std::vector<std::size_t>{2, 4, 1}));
  EXPECT_EQ(largest_remainder(1000, {0.29, 0.474, 0.236}), (std::vector<std::size_t>{290, 474, 236}));
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = tiny_synth(1), b = tiny_synth(1), c = tiny_synth(2);
  ASSERT_EQ(a.records.size(), 6u);
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_TRUE(a.records[i] == b.records[i]);
  bool differs = false;
  for (std::size_t i = 0; i < a.records.size(); ++i) differs |= !(a.records[i] == c.records[i]);
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.corpus.size(), 12u);
  EXPECT_EQ(a.records[0].id, "s0");
  EXPECT_EQ(a.corpus[1].video_id, "p0");
}

TEST(Synth, BiasLabelsFollowTheRequestedProportions) {
  SynthSpec s;
  s.samples = 40;
  s.dim = 4;
  s.frames = 2;
  s.seed = 5;
  const auto data = synth_dataset(s);
  const EmbeddingTable table(4, 0);
  const EmotionDictionary dict(default_emotion_words(), table);
  const auto rep = analyze_bias(data.records, dict);
  EXPECT_EQ(rep.emotional, 12u);
  EXPECT_EQ(rep.neutral, 20u);
  EXPECT_EQ(rep.factual, 8u);
}

TEST(Synth, NoEmotionWordsMeansAllFactual) {
  SynthSpec s;
  s.samples = 9;
  s.emotion_words = 0;
  s.dim = 4;
  const auto data = synth_dataset(s);
  for (const auto& r : data.records) EXPECT_TRUE(r.emotion_words->empty());
  const EmbeddingTable table(4, 0);
  EXPECT_EQ(analyze_bias(data.records, EmotionDictionary(default_emotion_words(), table)).factual, 9u);
}

TEST(Synth, RejectsBadProportions) {
  SynthSpec s;
  s.neutral = 0.6;
  EXPECT_THROW(synth_dataset(s), UsageError);
  s.neutral = 0.5;
  s.samples = 0;
  EXPECT_THROW(synth_dataset(s), UsageError);
}

TEST(AnalyzeBias, CaptionsOfOneVideoVoteTogether) {
  const EmbeddingTable table(4, 0);
  const EmotionDictionary dict({"happy"}, table);
  const Tensor f(Shape{1, 4}, 1.0);
  const std::vector<SampleRecord> recs{{"a", "v1", f, "happy dog runs far away", {}, {}},
                                       {"b", "v1", f, "happy cat sits on mats", {}, {}},
                                       {"c", "v2", f, "dog runs", {}, {}}};
  const auto rep = analyze_bias(recs, dict);
  EXPECT_EQ(rep.total(), 2u);
  EXPECT_EQ(rep.emotional, 1u);
  EXPECT_EQ(rep.factual, 1u);
}

TEST(Predictions, ReadAndEvaluateAgainstVideoReferences) {
  std::istringstream is("{\"id\":\"a\",\"caption\":\"Happy dog runs\"}\n{\"id\":\"b\",\"tokens\":[\"dog\"]}\n");
  const auto preds = read_predictions(is, "p");
  EXPECT_EQ(preds[0].tokens, (std::vector<std::string>{"happy", "dog", "runs"}));
  const EmbeddingTable table(4, 0);
  const EmotionDictionary dict({"happy"}, table);
  const Tensor f(Shape{1, 4}, 1.0);
  const std::vector<SampleRecord> recs{{"a", "v1", f, "happy dog runs", {}, {}}, {"b", "v1", f, "a dog", {}, {}}};
  const auto rep = evaluate_predictions(preds, recs, dict);
  EXPECT_NEAR(rep.rouge_l, (1.0 + eval::rouge_l(eval::Tokens{"dog"}, eval::Tokens{"a", "dog"})) / 2, 1e-15);
  EXPECT_EQ(rep.acc_c, 0.5);  // "dog" misses the video's "happy"
  EXPECT_THROW(evaluate_predictions({Generated{"zz", {"x"}, {}}}, recs, dict), DataError);
  std::istringstream bad("{\"caption\":\"x\"}\n");
  EXPECT_THROW(read_predictions(bad, "p"), DataError);
}

TEST(Runner, TrainSaveLoadGenerate) {
  const fs::path dir = scratch_dir("runner");
  RunConfig c = tiny_config();
  c.checkpoint = (dir / "model.ckpt").string();
  c.train.checkpoint_every = 2;
  const auto data = tiny_synth(3);
  std::ostringstream csv;
  auto outcome = run_train(c, data.records, data.corpus, csv);
  EXPECT_EQ(outcome.history.size(), 3u);
  EXPECT_EQ(csv.str().substr(0, 17), "step,L_e,L_cls,L\n");
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "model.ckpt.step2"));
  EXPECT_TRUE(fs::exists(dir / "model.ckpt.meta.json"));

  auto loaded = load_model(c.checkpoint);
  for (const auto& [name, t] : outcome.params) EXPECT_TRUE(loaded.params.at(name) == t) << name;
  EXPECT_EQ(loaded.config["k"], 2);
  const Prepared prep = prepare_run(c, data.records, data.corpus, loaded.vocab_words);
  EXPECT_EQ(prep.vocab.tokens(), outcome.vocab.tokens());
  const auto gens = generate_captions(loaded.params, prep, c);
  ASSERT_EQ(gens.size(), data.records.size());
  EXPECT_TRUE(std::is_sorted(gens.begin(), gens.end(), [](const auto& a, const auto& b) { return a.id < b.id; }));
  for (const auto& g : gens) EXPECT_LE(g.tokens.size(), c.max_len);

  RunConfig beam = c;
  beam.beam = 3;
  for (const auto& g : generate_captions(loaded.params, prep, beam)) {
    EXPECT_FALSE(g.beam_scores.empty());
    EXPECT_TRUE(std::is_sorted(g.beam_scores.rbegin(), g.beam_scores.rend()));
  }
}

TEST(Runner, WidthMismatchIsADataError) {
  RunConfig c = tiny_config();
  c.dim = 6;
  const auto data = tiny_synth(3);
  EXPECT_THROW(prepare_run(c, data.records, data.corpus), DataError);
}

TEST(Runner, LoadModelRejectsForeignMeta) {
  const fs::path dir = scratch_dir("meta");
  Parameters p;
  p.add("x", Tensor::scalar(1.0));
  save_checkpoint((dir / "m.ckpt").string(), p);
  std::ofstream(dir / "m.ckpt.meta.json") << "{\"format\":\"other\"}";
  EXPECT_THROW(load_model((dir / "m.ckpt").string()), DataError);
}
