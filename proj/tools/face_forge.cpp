#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "faceforge/harness.hpp"

namespace ff = faceforge;
using nlohmann::json;

namespace {

struct Flags {
  std::string config, dataset, corpus, emotions, word_vectors, checkpoint, out, profile, order;
  std::optional<std::size_t> k, beam, max_len, dim, frames, queries, max_steps, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::vector<std::string> ablate;
};

json flag_json(const Flags& f) {
  json j = json::object();
  auto str = [&](const char* key, const std::string& v) {
    if (!v.empty()) j[key] = v;
  };
  str("dataset", f.dataset);
  str("corpus", f.corpus);
  str("emotions", f.emotions);
  str("word_vectors", f.word_vectors);
  str("checkpoint", f.checkpoint);
  str("out", f.out);
  str("profile", f.profile);
  str("order", f.order);
  if (f.k) j["k"] = *f.k;
  if (f.beam) j["beam"] = *f.beam;
  if (f.max_len) j["max_len"] = *f.max_len;
  if (f.dim) j["dim"] = *f.dim;
  if (f.frames) j["frames"] = *f.frames;
  if (f.queries) j["queries"] = *f.queries;
  if (f.max_steps) j["max_steps"] = *f.max_steps;
  if (f.batch_size) j["batch_size"] = *f.batch_size;
  if (f.seed) j["seed"] = *f.seed;
  if (f.lr) j["lr"] = *f.lr;
  if (!f.ablate.empty()) j["ablate"] = f.ablate;
  return j;
}

json file_json(const Flags& f) { return f.config.empty() ? json::object() : ff::load_config_file(f.config); }

ff::RunConfig resolve(const Flags& f, const json& base = json::object()) {
  json file = base;
  file.update(file_json(f));
  return ff::resolve_config(file, flag_json(f));
}

// Writes to `path`, or stdout when empty.
template <typename Fn>
void emit(const std::string& path, Fn&& write) {
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ff::DataError("cannot write " + path);
  write(os);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ff::UsageError(std::string("missing required ") + flag);
}

std::vector<ff::SampleRecord> dataset_for(const ff::RunConfig& c) {
  require(c.dataset, "--dataset");
  return ff::load_dataset(c.dataset, c.dim);
}

std::vector<ff::CorpusEntry> corpus_for(const ff::RunConfig& c) {
  require(c.corpus, "--corpus");
  return ff::load_corpus(c.corpus);
}

json group_json(const std::string& query, const ff::RetrievalGroup& g) {
  json j;
  j["query"] = query;
  j["rank"] = g.rank;
  j["id"] = g.entry->id;
  j["video_id"] = g.entry->video_id;
  j["sentence"] = g.entry->sentence;
  j["score"] = g.score;
  j["triplet"] = {g.triplet.subject, g.triplet.predicate, g.triplet.object};
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"face-forge: retrieval-enhanced emotional video captioning"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON config file");
  app.add_option("--dataset", f.dataset, "dataset JSONL");
  app.add_option("--corpus", f.corpus, "retrieval corpus JSONL");
  app.add_option("--emotions", f.emotions, "emotion dictionary, one word per line");
  app.add_option("--word-vectors", f.word_vectors, "word-vector text file");
  app.add_option("--checkpoint", f.checkpoint, "model checkpoint path");
  app.add_option("--out", f.out, "output path (stdout when omitted)");
  app.add_option("--k", f.k, "retrieved captions per video");
  app.add_option("--seed", f.seed, "random seed (fallback: FACE_FORGE_SEED)");
  app.add_option("--profile", f.profile, "msvd | ve | combine");
  app.add_option("--ablate", f.ablate, "disable re | fc | ea | ba (repeatable)");
  app.add_option("--order", f.order, "fact-first | emotion-first");
  app.add_option("--beam", f.beam, "beam width (1 = greedy)");
  app.add_option("--max-len", f.max_len, "maximum caption length");
  app.add_option("--dim", f.dim, "feature width d");
  app.add_option("--frames", f.frames, "frames per video N");
  app.add_option("--queries", f.queries, "Q-former queries N_q");
  app.add_option("--max-steps", f.max_steps, "training steps");
  app.add_option("--batch-size", f.batch_size, "training batch size");
  app.add_option("--lr", f.lr, "learning rate");

  auto* bias = app.add_subcommand("analyze-bias", "emotion-ratio bias statistics of a dataset");
  double t1 = 1.0 / 6.0, t2 = 1.0 / 10.0;
  bias->add_option("--t1", t1, "emotional-bias threshold");
  bias->add_option("--t2", t2, "factual-bias threshold");

  app.add_subcommand("build-index", "embed a corpus into an index file");

  auto* retrieve = app.add_subcommand("retrieve", "top-K retrieval groups for dataset videos");
  std::string video_id;
  retrieve->add_option("--video-id", video_id, "only this video");

  app.add_subcommand("train", "train the captioner, writing a loss CSV");
  app.add_subcommand("generate", "caption dataset videos with a trained model");

  auto* evaluate = app.add_subcommand("evaluate", "caption metrics for predictions or a trained model");
  std::string predictions;
  evaluate->add_option("--predictions", predictions, "generated captions JSONL");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the whole-pipeline gradient");
  bool small = false;
  gradcheck->add_flag("--small", small, "small configuration (d=8, N=4, K=2, N_w=6, N_q=4, vocab 20)");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset, corpus and emotion dictionary");
  ff::SynthSpec spec;
  std::vector<double> proportions{spec.emotional, spec.neutral, spec.factual};
  std::string synth_dir = ".";
  synth->add_option("--samples", spec.samples, "number of samples");
  synth->add_option("--emotion-words", spec.emotion_words, "dictionary size");
  synth->add_option("--proportions", proportions, "emotional neutral factual shares")->expected(3);
  synth->add_option("--noise", spec.noise, "frame noise scale");
  synth->add_option("--dir", synth_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (bias->parsed()) {
    const auto c = resolve(f);
    auto res = ff::load_resources(c);
    require(c.dataset, "--dataset");
    const auto records = ff::load_dataset(c.dataset);
    const auto report = ff::analyze_bias(records, res.dictionary, ff::eval::BiasThresholds{t1, t2});
    emit(c.out, [&](std::ostream& os) { os << ff::eval::to_json(report).dump(2) << '\n'; });
  } else if (app.got_subcommand("build-index")) {
    const auto c = resolve(f);
    auto res = ff::load_resources(c);
    const ff::RetrievalIndex index(corpus_for(c), res.table);
    const ff::TripletOptions opts;
    emit(c.out, [&](std::ostream& os) {
      for (const auto& e : index.entries()) {
        ff::CorpusEntry full = e;
        full.triplet = ff::triplet_for(e, opts);
        if (!full.embedding) full.embedding = ff::encode_sentence(e.sentence, res.table);
        os << ff::corpus_entry_json(full).dump() << '\n';
      }
    });
  } else if (retrieve->parsed()) {
    const auto c = resolve(f);
    auto res = ff::load_resources(c);
    const auto records = dataset_for(c);
    const ff::RetrievalIndex index(corpus_for(c), res.table);
    bool found = video_id.empty();
    std::ostringstream buf;
    for (const auto& r : records) {
      if (!video_id.empty() && r.video_id != video_id) continue;
      found = true;
      for (const auto& g : ff::retrieve_topk(index, ff::row_mean(r.frames), c.train.k, r.video_id, res.table)) {
        buf << group_json(r.id, g).dump() << '\n';
      }
    }
    if (!found) throw ff::UsageError("no dataset sample has video id '" + video_id + "'");
    emit(c.out, [&](std::ostream& os) { os << buf.str(); });
  } else if (app.got_subcommand("train")) {
    const auto c = resolve(f);
    const auto records = dataset_for(c);
    const auto corpus = corpus_for(c);
    std::ostringstream csv;
    ff::run_train(c, records, corpus, csv);
    emit(c.out, [&](std::ostream& os) { os << csv.str(); });
  } else if (app.got_subcommand("generate") || (evaluate->parsed() && predictions.empty())) {
    const std::string ckpt = f.checkpoint.empty() ? file_json(f).value("checkpoint", std::string()) : f.checkpoint;
    require(ckpt, "--checkpoint");
    auto model = ff::load_model(ckpt);
    const auto c = resolve(f, model.config);
    const auto records = dataset_for(c);
    const auto prep = ff::prepare_run(c, records, corpus_for(c), model.vocab_words);
    const auto generated = ff::generate_captions(model.params, prep, c);
    if (evaluate->parsed()) {
      const auto report = ff::evaluate_predictions(generated, records, prep.resources.dictionary);
      emit(c.out, [&](std::ostream& os) { os << ff::eval::to_json(report).dump(2) << '\n'; });
    } else {
      emit(c.out, [&](std::ostream& os) {
        for (const auto& g : generated) os << ff::generated_json(g).dump() << '\n';
      });
    }
  } else if (evaluate->parsed()) {
    const auto c = resolve(f);
    auto res = ff::load_resources(c);
    require(c.dataset, "--dataset");
    const auto records = ff::load_dataset(c.dataset);  // captions only; frame width is irrelevant here
    std::ifstream is(predictions);
    if (!is) throw ff::DataError("cannot open predictions " + predictions);
    const auto report = ff::evaluate_predictions(ff::read_predictions(is, predictions), records, res.dictionary);
    emit(c.out, [&](std::ostream& os) { os << ff::eval::to_json(report).dump(2) << '\n'; });
  } else if (gradcheck->parsed()) {
    if (!small) throw ff::UsageError("gradcheck: only the --small configuration is available");
    const auto c = resolve(f);
    bool ok = true;
    std::ostringstream buf;
    for (const auto& e : ff::small_gradcheck(c.train.seed, c.train)) {
      const bool pass = e.relative_error < ff::kGradCheckTolerance;
      ok = ok && pass;
      json j;
      j["group"] = e.name;
      j["relative_error"] = e.relative_error;
      j["analytic_norm"] = e.analytic_norm;
      j["numeric_norm"] = e.numeric_norm;
      j["pass"] = pass;
      buf << j.dump() << '\n';
    }
    emit(c.out, [&](std::ostream& os) { os << buf.str(); });
    return ok ? 0 : 1;
  } else if (synth->parsed()) {
    const auto c = resolve(f);
    spec.emotional = proportions[0];
    spec.neutral = proportions[1];
    spec.factual = proportions[2];
    spec.seed = c.train.seed;
    spec.embedding_seed = c.embedding_seed;
    json given = file_json(f);
    given.update(flag_json(f));
    if (given.contains("dim")) spec.dim = c.dim;
    if (given.contains("frames")) spec.frames = c.frames;
    const auto data = ff::synth_dataset(spec);
    std::filesystem::create_directories(synth_dir);
    const std::filesystem::path dir(synth_dir);
    emit((dir / "dataset.jsonl").string(), [&](std::ostream& os) { ff::write_dataset(os, data.records); });
    emit((dir / "corpus.jsonl").string(), [&](std::ostream& os) { ff::write_corpus(os, data.corpus); });
    emit((dir / "emotions.txt").string(), [&](std::ostream& os) { ff::write_emotion_words(os, data.emotion_words); });
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ff::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ff::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ff::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const ff::TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
