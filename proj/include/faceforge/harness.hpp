#pragma once

// Run configuration, synthetic data, model files, and the command runners
// behind the CLI.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "faceforge/dataset.hpp"
#include "faceforge/evaluation.hpp"
#include "faceforge/numerics/gradcheck.hpp"
#include "faceforge/training.hpp"
#include "json.hpp"

namespace faceforge {

// ---------------------------------------------------------------------------
// Configuration: defaults < profile < config file < flags

struct RunConfig {
  TrainConfig train;
  std::size_t dim = 300;
  std::size_t frames = 16;
  std::size_t queries = 32;
  std::size_t max_len = 15;
  std::size_t beam = 5;
  std::uint64_t embedding_seed = 0;  // deterministic word vectors
  std::string dataset, corpus, word_vectors, emotions, checkpoint, out;

  void validate() const {
    train.validate();
    if (dim < 2 || frames < 1 || queries < 1 || max_len < 1 || beam < 1) {
      throw UsageError("config: dimensions, max_len and beam must be positive (d >= 2)");
    }
  }
};

inline Ablation parse_ablation(const std::vector<std::string>& disabled) {
  Ablation a;
  for (const auto& s : disabled) {
    if (s == "re") a.retrieval = false;
    else if (s == "fc") a.factual_calibration = false;
    else if (s == "ea") a.emotion_augmentation = false;
    else if (s == "ba") a.bias_adjustment = false;
    else throw UsageError("--ablate accepts re, fc, ea or ba, got '" + s + "'");
  }
  return a;
}

inline std::vector<std::string> ablation_names(const Ablation& a) {
  std::vector<std::string> out;
  if (!a.retrieval) out.push_back("re");
  if (!a.factual_calibration) out.push_back("fc");
  if (!a.emotion_augmentation) out.push_back("ea");
  if (!a.bias_adjustment) out.push_back("ba");
  return out;
}

namespace detail {

template <typename T>
T json_get(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError(std::string("config: field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

// Applies every recognised field of `j` except `profile`.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    const char* k = key.c_str();
    if (key == "profile") continue;
    else if (key == "delta") c.train.delta = detail::json_get<double>(j, k);
    else if (key == "lambda_e") c.train.lambda_e = detail::json_get<double>(j, k);
    else if (key == "lambda_cls") c.train.lambda_cls = detail::json_get<double>(j, k);
    else if (key == "lr") c.train.lr = detail::json_get<double>(j, k);
    else if (key == "batch_size") c.train.batch_size = detail::json_get<std::size_t>(j, k);
    else if (key == "max_steps") c.train.max_steps = detail::json_get<std::size_t>(j, k);
    else if (key == "checkpoint_every") c.train.checkpoint_every = detail::json_get<std::size_t>(j, k);
    else if (key == "seed") c.train.seed = detail::json_get<std::uint64_t>(j, k);
    else if (key == "k") c.train.k = detail::json_get<std::size_t>(j, k);
    else if (key == "ablate") c.train.ablation = parse_ablation(detail::json_get<std::vector<std::string>>(j, k));
    else if (key == "order") c.train.order = parse_order(detail::json_get<std::string>(j, k));
    else if (key == "dim") c.dim = detail::json_get<std::size_t>(j, k);
    else if (key == "frames") c.frames = detail::json_get<std::size_t>(j, k);
    else if (key == "queries") c.queries = detail::json_get<std::size_t>(j, k);
    else if (key == "max_len") c.max_len = detail::json_get<std::size_t>(j, k);
    else if (key == "beam") c.beam = detail::json_get<std::size_t>(j, k);
    else if (key == "embedding_seed") c.embedding_seed = detail::json_get<std::uint64_t>(j, k);
    else if (key == "dataset") c.dataset = detail::json_get<std::string>(j, k);
    else if (key == "corpus") c.corpus = detail::json_get<std::string>(j, k);
    else if (key == "word_vectors") c.word_vectors = detail::json_get<std::string>(j, k);
    else if (key == "emotions") c.emotions = detail::json_get<std::string>(j, k);
    else if (key == "checkpoint") c.checkpoint = detail::json_get<std::string>(j, k);
    else if (key == "out") c.out = detail::json_get<std::string>(j, k);
    else throw UsageError("config: unknown field '" + key + "'");
  }
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config " + path + ": invalid JSON (" + e.what() + ")");
  }
}

// `env_seed` is the FACE_FORGE_SEED value, used only when neither the file
// nor the flags set a seed.
inline RunConfig resolve_config(const nlohmann::json& file, const nlohmann::json& flags,
                                const char* env_seed = std::getenv("FACE_FORGE_SEED")) {
  RunConfig c;
  std::string profile = "msvd";
  if (file.is_object() && file.contains("profile")) profile = detail::json_get<std::string>(file, "profile");
  if (flags.is_object() && flags.contains("profile")) profile = detail::json_get<std::string>(flags, "profile");
  c.train.apply_profile(profile);
  const bool seeded = (file.is_object() && file.contains("seed")) || (flags.is_object() && flags.contains("seed"));
  if (!seeded && env_seed != nullptr && *env_seed != '\0') {
    std::uint64_t v = 0;
    const std::string_view s(env_seed);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw UsageError("FACE_FORGE_SEED must be a non-negative integer, got '" + std::string(s) + "'");
    }
    c.train.seed = v;
  }
  if (!file.is_null()) apply_config_json(c, file);
  if (!flags.is_null()) apply_config_json(c, flags);
  c.validate();
  return c;
}

inline nlohmann::ordered_json config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["profile"] = c.train.profile;
  j["delta"] = c.train.delta;
  j["lambda_e"] = c.train.lambda_e;
  j["lambda_cls"] = c.train.lambda_cls;
  j["lr"] = c.train.lr;
  j["batch_size"] = c.train.batch_size;
  j["max_steps"] = c.train.max_steps;
  j["checkpoint_every"] = c.train.checkpoint_every;
  j["seed"] = c.train.seed;
  j["k"] = c.train.k;
  j["ablate"] = ablation_names(c.train.ablation);
  j["order"] = to_string(c.train.order);
  j["dim"] = c.dim;
  j["frames"] = c.frames;
  j["queries"] = c.queries;
  j["max_len"] = c.max_len;
  j["beam"] = c.beam;
  j["embedding_seed"] = c.embedding_seed;
  return j;
}

// ---------------------------------------------------------------------------
// Shared resources

struct Resources {
  EmbeddingTable table;
  EmotionDictionary dictionary;
};

inline Resources load_resources(const RunConfig& c) {
  EmbeddingTable table = c.word_vectors.empty() ? EmbeddingTable(c.dim, c.embedding_seed)
                                                : load_word_vectors(c.word_vectors, c.dim, c.embedding_seed);
  auto words = c.emotions.empty() ? default_emotion_words() : load_emotion_words(c.emotions);
  EmotionDictionary dict(std::move(words), table);
  return Resources{std::move(table), std::move(dict)};
}

inline std::vector<std::string> vocabulary_words(const std::vector<SampleRecord>& records,
                                                 const EmotionDictionary& dictionary) {
  std::vector<std::string> words = dictionary.words();
  for (const auto& r : records) {
    for (auto& t : tokenize(r.caption)) words.push_back(std::move(t));
  }
  return words;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  std::size_t samples = 8;
  std::size_t emotion_words = 10;  // taken from the head of the default dictionary
  double emotional = 0.3;
  double neutral = 0.5;
  double factual = 0.2;
  std::size_t dim = 32;
  std::size_t frames = 8;
  double noise = 0.05;
  std::uint64_t seed = 0;
  std::uint64_t embedding_seed = 0;
};

struct SynthData {
  std::vector<SampleRecord> records;
  std::vector<CorpusEntry> corpus;
  std::vector<std::string> emotion_words;
};

// Counts per label by the largest-remainder method (ties to the earlier label).
inline std::vector<std::size_t> largest_remainder(std::size_t n, const std::vector<double>& p) {
  std::vector<std::size_t> counts(p.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double exact = p[i] * static_cast<double>(n);
    // absorb representation error so exact products are not floored away
    const double fl = std::floor(exact + 1e-9);
    counts[i] = static_cast<std::size_t>(fl);
    assigned += counts[i];
    rem.emplace_back(exact - fl, i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++counts[rem[j % rem.size()].second];
  return counts;
}

inline SynthData synth_dataset(const SynthSpec& spec) {
  if (spec.samples == 0) throw UsageError("synth: sample count must be positive");
  if (spec.dim < 2 || spec.frames < 1) throw UsageError("synth: need d >= 2 and at least one frame");
  const std::vector<double> props{spec.emotional, spec.neutral, spec.factual};
  for (double p : props) {
    if (!(p >= 0.0)) throw UsageError("synth: proportions must be non-negative");
  }
  if (std::abs(props[0] + props[1] + props[2] - 1.0) > 1e-9) {
    throw UsageError("synth: bias proportions must sum to 1");
  }
  static const std::vector<std::string> subjects = {"man",    "woman", "boy",   "girl",  "dog",   "cat",
                                                    "child",  "chef",  "baby",  "player", "singer", "dancer"};
  static const std::vector<std::string> verbs = {"plays", "rides", "eats",  "cuts",   "holds", "throws",
                                                 "kicks", "reads", "paints", "feeds", "washes", "carries"};
  static const std::vector<std::string> objects = {"guitar", "ball",  "bike",   "apple",  "bread", "book",
                                                   "piano",  "horse", "carrot", "kitten", "box",   "car"};
  static const std::vector<std::string> places = {"park", "kitchen", "street", "garden", "room", "field"};

  SynthData out;
  out.emotion_words = default_emotion_words(spec.emotion_words);
  std::vector<std::size_t> counts = {0, 0, spec.samples};
  if (!out.emotion_words.empty()) counts = largest_remainder(spec.samples, props);
  std::vector<int> labels;  // 0 emotional, 1 neutral, 2 factual
  for (int l = 0; l < 3; ++l) labels.insert(labels.end(), counts[static_cast<std::size_t>(l)], l);
  Rng rng(stable_hash(spec.seed, "synth"));
  std::shuffle(labels.begin(), labels.end(), rng.engine());

  const EmbeddingTable table(spec.dim, spec.embedding_seed);
  const std::size_t width = std::to_string(spec.samples - 1).size();
  auto pad = [&](std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(width - s.size(), '0') + s;
  };
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };

  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int label = labels[i];
    const std::string subj = pick(subjects), verb = pick(verbs), obj = pick(objects), place = pick(places);
    std::string emo;
    if (label != 2) emo = out.emotion_words[rng.below(out.emotion_words.size())];
    std::string caption;
    std::string paraphrase;
    if (label == 0) {
      caption = subj + " " + emo + " " + verb + " the " + obj;  // 5 tokens, ratio 0.2
      paraphrase = "the " + subj + " " + verb + " a " + obj + " " + emo;
    } else if (label == 1) {
      caption = "a " + subj + " " + emo + " " + verb + " the " + obj + " in " + place;  // 8 tokens, 0.125
      paraphrase = "the " + subj + " " + verb + " a " + obj + " " + emo + " in the " + place;
    } else {
      caption = "a " + subj + " " + verb + " the " + obj + " in " + place;  // no emotion word
      paraphrase = "the " + subj + " " + verb + " a " + obj + " in the " + place;
    }
    SampleRecord r;
    r.id = "s" + pad(i);
    r.video_id = "v" + pad(i);
    r.caption = caption;
    r.triplet = Triplet(subj, verb, obj);
    r.emotion_words = emo.empty() ? std::vector<std::string>{} : std::vector<std::string>{emo};

    std::vector<Vec> anchors = {table.lookup(subj), table.lookup(verb), table.lookup(obj)};
    const Vec emo_vec = emo.empty() ? Vec(spec.dim, 0.0) : table.lookup(emo);
    std::vector<double> flat;
    flat.reserve(spec.frames * spec.dim);
    for (std::size_t f = 0; f < spec.frames; ++f) {
      const Vec& a = anchors[f % 3];
      for (std::size_t c = 0; c < spec.dim; ++c) flat.push_back(a[c] + emo_vec[c] + spec.noise * rng.normal());
    }
    r.frames = Tensor(Shape{spec.frames, spec.dim}, std::move(flat));

    out.corpus.push_back(CorpusEntry{"c" + pad(i) + "a", r.video_id, caption, r.triplet, std::nullopt});
    out.corpus.push_back(CorpusEntry{"c" + pad(i) + "b", "p" + pad(i), paraphrase, r.triplet, std::nullopt});
    out.records.push_back(std::move(r));
  }
  return out;
}

inline void write_corpus(std::ostream& os, const std::vector<CorpusEntry>& corpus) {
  for (const auto& e : corpus) os << corpus_entry_json(e).dump() << '\n';
}

inline void write_emotion_words(std::ostream& os, const std::vector<std::string>& words) {
  for (const auto& w : words) os << w << '\n';
}

// ---------------------------------------------------------------------------
// Model files: checkpoint plus a JSON sidecar with vocabulary and config

inline constexpr std::string_view kModelFormat = "face-forge-model-1";

inline std::string meta_path(const std::string& checkpoint) { return checkpoint + ".meta.json"; }

inline void save_model(const std::string& path, const Parameters& params, const Vocabulary& vocab,
                       const RunConfig& c) {
  save_checkpoint(path, params);
  nlohmann::ordered_json meta;
  meta["format"] = kModelFormat;
  meta["config"] = config_json(c);
  std::vector<std::string> words(vocab.tokens().begin() + 4, vocab.tokens().end());
  meta["vocab"] = words;
  std::ofstream os(meta_path(path));
  if (!os) throw DataError("cannot write " + meta_path(path));
  os << meta.dump(2) << '\n';
}

struct LoadedModel {
  Parameters params;
  std::vector<std::string> vocab_words;
  nlohmann::json config;
};

inline LoadedModel load_model(const std::string& path) {
  LoadedModel m;
  m.params = load_checkpoint(path);
  const auto meta = load_config_file(meta_path(path));
  if (!meta.contains("format") || meta["format"] != kModelFormat || !meta.contains("vocab")) {
    throw DataError(meta_path(path) + ": not a model description");
  }
  m.vocab_words = meta["vocab"].get<std::vector<std::string>>();
  m.config = meta.value("config", nlohmann::json::object());
  return m;
}

// ---------------------------------------------------------------------------
// Command runners

struct Prepared {
  Resources resources;
  std::vector<SampleRecord> records;
  Vocabulary vocab;
  std::vector<PreparedSample> samples;
};

inline Prepared prepare_run(const RunConfig& c, const std::vector<SampleRecord>& records,
                            const std::vector<CorpusEntry>& corpus,
                            const std::optional<std::vector<std::string>>& vocab_words = std::nullopt) {
  if (records.empty()) throw UsageError("empty dataset");
  Resources res = load_resources(c);
  Vocabulary vocab(vocab_words ? *vocab_words : vocabulary_words(records, res.dictionary), res.dictionary.words());
  RetrievalIndex index(corpus, res.table);
  PrepareContext ctx{index, res.table, res.dictionary, vocab, c.train.k, c.max_len};
  std::vector<PreparedSample> samples;
  for (const auto& r : records) {
    if (r.frames.cols() != c.dim) {
      throw DataError("sample '" + r.id + "': frames have width " + std::to_string(r.frames.cols()) +
                      " but d is " + std::to_string(c.dim));
    }
    samples.push_back(prepare_sample(r, ctx));
  }
  return Prepared{std::move(res), records, std::move(vocab), std::move(samples)};
}

struct TrainOutcome {
  Parameters params;
  Vocabulary vocab;
  std::vector<LossRecord> history;
};

// Writes the loss CSV to `csv`; checkpoints go to c.checkpoint when set.
inline TrainOutcome run_train(const RunConfig& c, const std::vector<SampleRecord>& records,
                              const std::vector<CorpusEntry>& corpus, std::ostream& csv) {
  Prepared prep = prepare_run(c, records, corpus);
  ModelDims dims{c.dim, c.queries, prep.vocab.size(), c.max_len, prep.resources.dictionary.size()};
  Parameters params = init_model(dims, c.train.seed);
  write_loss_csv_header(csv);
  TrainHooks hooks;
  hooks.on_step = [&](const LossRecord& r) { write_loss_csv_row(csv, r); };
  if (!c.checkpoint.empty()) {
    hooks.on_checkpoint = [&](std::size_t step, const Parameters& p) {
      const std::string path = step == c.train.max_steps ? c.checkpoint : c.checkpoint + ".step" + std::to_string(step);
      save_model(path, p, prep.vocab, c);
    };
  }
  auto history = train(params, prep.samples, prep.resources.dictionary.embedded(), prep.vocab.emotion_flags(), c.train,
                       hooks);
  return TrainOutcome{std::move(params), prep.vocab, std::move(history)};
}

struct Generated {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<double> beam_scores;
};

inline std::vector<Generated> generate_captions(Parameters& params, const Prepared& prep, const RunConfig& c) {
  std::vector<Generated> out;
  for (const auto& s : prep.samples) {
    Tensor memory = memory_for(params, s, prep.resources.dictionary.embedded(), c.train);
    auto next = next_token_fn(params, std::move(memory));
    Generated g;
    g.id = s.id;
    if (c.beam <= 1) {
      g.tokens = prep.vocab.decode(decode_greedy(next, c.max_len));
    } else {
      auto res = decode_beam(next, c.beam, c.max_len);
      g.tokens = prep.vocab.decode(res.best.tokens);
      for (const auto& h : res.beam) g.beam_scores.push_back(h.score);
    }
    out.push_back(std::move(g));
  }
  std::sort(out.begin(), out.end(), [](const Generated& a, const Generated& b) { return a.id < b.id; });
  return out;
}

inline nlohmann::ordered_json generated_json(const Generated& g) {
  nlohmann::ordered_json j;
  j["id"] = g.id;
  j["caption"] = join(g.tokens);
  j["tokens"] = g.tokens;
  if (!g.beam_scores.empty()) j["beam_scores"] = g.beam_scores;
  return j;
}

inline std::vector<Generated> read_predictions(std::istream& is, const std::string& origin) {
  std::vector<Generated> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      Generated g;
      g.id = j.at("id").get<std::string>();
      g.tokens = j.contains("tokens") ? j["tokens"].get<std::vector<std::string>>()
                                      : tokenize(j.at("caption").get<std::string>());
      out.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid prediction record (" + e.what() + ")");
    }
  }
  return out;
}

// References for a prediction are the captions of every sample sharing its video.
inline eval::MetricReport evaluate_predictions(const std::vector<Generated>& predictions,
                                               const std::vector<SampleRecord>& records,
                                               const EmotionDictionary& dictionary) {
  std::map<std::string, const SampleRecord*> by_id;
  std::map<std::string, std::vector<eval::Tokens>> by_video;
  for (const auto& r : records) {
    by_id[r.id] = &r;
    by_video[r.video_id].push_back(tokenize(r.caption));
  }
  std::vector<eval::Tokens> cands;
  std::vector<std::vector<eval::Tokens>> refs;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw DataError("prediction for unknown sample '" + p.id + "'");
    cands.push_back(p.tokens);
    refs.push_back(by_video[it->second->video_id]);
  }
  const std::set<std::string> dict(dictionary.words().begin(), dictionary.words().end());
  return eval::evaluate_corpus(cands, refs, dict);
}

inline eval::BiasReport analyze_bias(const std::vector<SampleRecord>& records, const EmotionDictionary& dictionary,
                                     const eval::BiasThresholds& t = {}) {
  std::map<std::string, eval::BiasSample> by_video;
  for (const auto& r : records) {
    auto& s = by_video[r.video_id];
    s.id = r.video_id;
    s.captions.push_back(tokenize(r.caption));
  }
  std::vector<eval::BiasSample> samples;
  for (auto& [_, s] : by_video) samples.push_back(std::move(s));
  const std::set<std::string> dict(dictionary.words().begin(), dictionary.words().end());
  return eval::bias_report(samples, dict, t);
}

// ---------------------------------------------------------------------------
// Whole-pipeline gradient check on the small configuration
// (d=8, N=4, K=2, N_w=6, N_q=4, vocab 20).

struct SmallProblem {
  Parameters params;
  PreparedSample sample;
  Tensor dictionary;
  std::vector<bool> emotion_flags;
  TrainConfig config;
};

inline SmallProblem small_problem(std::uint64_t seed = 0, const TrainConfig& base = {}) {
  constexpr std::size_t d = 8, n = 4, k = 2, n_w = 6, n_q = 4, max_len = 6;
  Rng rng(stable_hash(seed, "small-problem"));
  auto normal = [&](Shape shape) {
    Tensor t(shape);
    for (double& x : t.values()) x = rng.normal();
    return t;
  };
  const auto emotions = default_emotion_words(n_w);
  std::vector<std::string> words = emotions;
  for (const char* w : {"man", "woman", "dog", "plays", "rides", "eats", "guitar", "ball", "park", "field"}) {
    words.emplace_back(w);
  }
  const Vocabulary vocab(words, emotions);

  SmallProblem p;
  p.config = base;
  p.config.k = k;
  p.dictionary = normal(Shape{n_w, d});
  p.emotion_flags = vocab.emotion_flags();
  p.sample.id = "small";
  p.sample.frames = normal(Shape{n, d});
  for (std::size_t i = 0; i < k; ++i) p.sample.triplets.push_back(normal(Shape{3, d}));
  p.sample.similarities = {0.8, 0.5};
  p.sample.reference = {"man", emotions[0], "plays", "guitar"};
  p.sample.targets = vocab.encode(p.sample.reference);
  p.sample.targets.push_back(Vocabulary::kEos);
  p.sample.inputs = {Vocabulary::kBos};
  p.sample.inputs.insert(p.sample.inputs.end(), p.sample.targets.begin(), p.sample.targets.end() - 1);
  p.sample.emotion_targets = {0, 3};
  p.params = init_model(ModelDims{d, n_q, vocab.size(), max_len, n_w}, seed);
  return p;
}

inline const std::vector<std::string>& parameter_groups() {
  static const std::vector<std::string> groups = {"fcue", "pvea", "dbar", "qformer", "decoder", "emotion_head"};
  return groups;
}

inline std::vector<GradCheckEntry> small_gradcheck(std::uint64_t seed = 0, const TrainConfig& base = {}) {
  SmallProblem p = small_problem(seed, base);
  LossBuilder build = [&](Tape& tape, Parameters& params) {
    return forward(tape, params, p.sample, p.dictionary, p.emotion_flags, p.config).loss;
  };
  return check_gradient_groups(p.params, build, parameter_groups());
}

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace faceforge
