#pragma once

// Losses, Adam, the end-to-end model forward, and the training loop.
//
//   L_e   = Σ_t w_t · −log P(y_t | y_<t),  w_t = 1 + δ for emotion words, 1 otherwise, 0 for <pad>
//   L_cls = Σ_{e ∈ targets} −log softmax(mean_rows(Σ_i g_i E_i) W + b)_e
//   L     = λ_e L_e + λ_cls L_cls

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "faceforge/dataset.hpp"
#include "faceforge/dbar.hpp"
#include "faceforge/embeddings.hpp"
#include "faceforge/fcue.hpp"
#include "faceforge/generation.hpp"
#include "faceforge/numerics/checkpoint.hpp"
#include "faceforge/pvea.hpp"
#include "faceforge/retrieval.hpp"
#include "faceforge/text.hpp"

namespace faceforge {

// ---------------------------------------------------------------------------
// Losses

inline Var emotion_focused_ce(const Var& logits, std::span<const std::size_t> targets,
                              const std::vector<bool>& emotion_flags, double delta) {
  if (logits.value().rank() != 2 || logits.rows() != targets.size()) {
    throw UsageError("emotion_focused_ce: need one logit row per target, got " + shape_string(logits.shape()) +
                     " for " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t vocab = logits.cols();
  if (emotion_flags.size() != vocab) throw UsageError("emotion_focused_ce: emotion flags do not match vocabulary");
  if (delta < 0.0) throw UsageError("emotion_focused_ce: delta must be non-negative");
  std::vector<std::size_t> idx(targets.size());
  std::vector<double> weights(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= vocab) {
      throw UsageError("emotion_focused_ce: target id " + std::to_string(targets[t]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    idx[t] = targets[t];
    weights[t] = targets[t] == Vocabulary::kPad ? 0.0 : (emotion_flags[targets[t]] ? 1.0 + delta : 1.0);
  }
  Var picked = pick(log_softmax(logits, 1), idx);
  return scale(sum(mul(picked, logits.tape().constant(Tensor::vector(std::move(weights))))), -1.0);
}

// −Σ log softmax(logits)_e over `targets` (indices into the dictionary).
inline Var classification_loss(const Var& logits, std::span<const std::size_t> targets) {
  Tape& tape = logits.tape();
  if (targets.empty()) return tape.constant(Tensor::scalar(0.0));
  const Var row = reshape(logits, Shape{1, logits.size()});
  for (std::size_t e : targets) {
    if (e >= logits.size()) {
      throw UsageError("emotion_cls_loss: target index " + std::to_string(e) + " outside dictionary of " +
                       std::to_string(logits.size()));
    }
  }
  Var logp = reshape(log_softmax(row, 1), Shape{logits.size()});
  Var acc = element(logp, targets[0]);
  for (std::size_t i = 1; i < targets.size(); ++i) acc = add(acc, element(logp, targets[i]));
  return scale(acc, -1.0);
}

namespace emotion_head {

inline void init_parameters(Parameters& params, std::size_t d, std::size_t num_words, Rng& rng) {
  params.add("emotion_head.w", glorot_uniform(d, num_words, rng));
  params.add("emotion_head.b", Tensor(Shape{num_words}));
}

struct Weights {
  Var w, b;
  static Weights bind(Tape& tape, Parameters& p) {
    return {tape.param(p.at("emotion_head.w")), tape.param(p.at("emotion_head.b"))};
  }
};

// Dictionary logits (1×N_w) for the route-weighted, frame-pooled emotion features.
inline Var logits(const std::vector<Var>& emotional, const Var& routes, const Weights& w) {
  if (emotional.empty() || routes.size() != emotional.size()) {
    throw UsageError("emotion_head: need one route weight per emotion group");
  }
  Var mix = scale_by(emotional[0], element(routes, 0));
  for (std::size_t i = 1; i < emotional.size(); ++i) mix = add(mix, scale_by(emotional[i], element(routes, i)));
  Var pooled = reshape(mean_axis(mix, 0), Shape{1, mix.cols()});
  return linear(pooled, w.w, w.b);
}

}  // namespace emotion_head

inline Var emotion_cls_loss(const std::vector<Var>& emotional, const Var& routes, const emotion_head::Weights& head,
                            std::span<const std::size_t> targets) {
  if (targets.empty()) return routes.tape().constant(Tensor::scalar(0.0));
  return classification_loss(emotion_head::logits(emotional, routes, head), targets);
}

// Dictionary indices of `words`; a word outside the dictionary is a usage error.
inline std::vector<std::size_t> emotion_targets(const std::vector<std::string>& words,
                                                const EmotionDictionary& dictionary) {
  std::vector<std::size_t> out;
  for (const auto& w : words) {
    auto i = dictionary.index_of(w);
    if (!i) throw UsageError("emotion_cls_loss: target word '" + w + "' is not in the emotion dictionary");
    if (std::find(out.begin(), out.end(), *i) == out.end()) out.push_back(*i);
  }
  return out;
}

inline double total_loss(double l_e, double l_cls, double lambda_e, double lambda_cls) {
  return lambda_e * l_e + lambda_cls * l_cls;
}

inline Var total_loss(const Var& l_e, const Var& l_cls, double lambda_e, double lambda_cls) {
  return add(scale(l_e, lambda_e), scale(l_cls, lambda_cls));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
};

inline void adam_step(Tensor& param, std::span<const double> grad, AdamState& state, const AdamConfig& c = {}) {
  if (grad.size() != param.size()) {
    throw UsageError("adam_step: gradient has " + std::to_string(grad.size()) + " entries for a parameter of shape " +
                     shape_string(param.shape()));
  }
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size()) throw UsageError("adam_step: optimizer state does not match parameter shape");
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  auto p = param.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grad[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every parameter from its accumulated gradient, in name order.
  void step(Parameters& params) {
    for (auto& [name, t] : params) adam_step(t, t.grad(), state_[name], config_);
  }

  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::map<std::string, AdamState> state_;
};

// ---------------------------------------------------------------------------
// Configuration

struct Ablation {
  bool retrieval = true;
  bool factual_calibration = true;
  bool emotion_augmentation = true;
  bool bias_adjustment = true;

  static Ablation none_enabled() { return {false, false, false, false}; }
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

enum class Order { kFactFirst, kEmotionFirst };

inline const char* to_string(Order o) { return o == Order::kFactFirst ? "fact-first" : "emotion-first"; }

inline Order parse_order(const std::string& s) {
  if (s == "fact-first") return Order::kFactFirst;
  if (s == "emotion-first") return Order::kEmotionFirst;
  throw UsageError("order must be fact-first or emotion-first, got '" + s + "'");
}

struct ProfileDefaults {
  double delta;
  double lambda_cls;
};

inline ProfileDefaults profile_defaults(const std::string& profile) {
  if (profile == "msvd") return {0.1, 0.1};
  if (profile == "ve") return {0.2, 0.5};
  if (profile == "combine") return {0.1, 0.2};
  throw UsageError("profile must be msvd, ve or combine, got '" + profile + "'");
}

struct TrainConfig {
  std::string profile = "msvd";
  double delta = 0.1;
  double lambda_e = 1.0;
  double lambda_cls = 0.1;
  double lr = 7e-4;
  std::size_t batch_size = 32;
  std::size_t max_steps = 2000;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 0;
  std::size_t k = 4;
  Ablation ablation;
  Order order = Order::kFactFirst;

  void apply_profile(const std::string& name) {
    const auto d = profile_defaults(name);
    profile = name;
    delta = d.delta;
    lambda_cls = d.lambda_cls;
  }

  void validate() const {
    profile_defaults(profile);
    if (!(delta >= 0.0)) throw UsageError("config: delta must be >= 0");
    if (!(lambda_e >= 0.0) || !(lambda_cls >= 0.0)) throw UsageError("config: loss weights must be >= 0");
    if (!(lr > 0.0)) throw UsageError("config: learning rate must be > 0");
    if (k < 1) throw UsageError("config: K must be >= 1");
    if (batch_size < 1) throw UsageError("config: batch size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Model

struct ModelDims {
  std::size_t dim = 300;
  std::size_t queries = 32;
  std::size_t vocab = 0;
  std::size_t max_len = 15;
  std::size_t emotions = 179;
};

inline Parameters init_model(const ModelDims& dims, std::uint64_t seed) {
  if (dims.dim < 2 || dims.queries < 1 || dims.vocab < 5 || dims.max_len < 1 || dims.emotions < 1) {
    throw UsageError("init_model: invalid model dimensions");
  }
  Rng rng(stable_hash(seed, "model"));
  Parameters p;
  fcue::init_parameters(p, dims.dim, rng);
  pvea::init_parameters(p, dims.dim, rng);
  dbar::init_parameters(p, dims.dim, rng);
  qformer::init_parameters(p, dims.dim, dims.queries, rng);
  decoder::init_parameters(p, decoder::Dims{dims.dim, dims.vocab, dims.max_len}, rng);
  emotion_head::init_parameters(p, dims.dim, dims.emotions, rng);
  return p;
}

inline ModelDims infer_dims(const Parameters& p) {
  ModelDims d;
  d.dim = p.at("decoder.embed").cols();
  d.vocab = p.at("decoder.embed").rows();
  d.max_len = p.at("decoder.pos").rows();
  d.queries = p.at("qformer.query").rows();
  d.emotions = p.at("emotion_head.w").cols();
  return d;
}

// Everything about a sample that does not depend on learnable parameters.
struct PreparedSample {
  std::string id;
  Tensor frames;                     // V, N×d
  std::vector<Tensor> triplets;      // K × (3×d)
  std::vector<double> similarities;  // K retrieval scores
  std::vector<std::string> retrieved;  // corpus entry ids, rank order
  std::vector<std::size_t> inputs;   // <bos> y_1 … (teacher forcing)
  std::vector<std::size_t> targets;  // y_1 … <eos>
  std::vector<std::size_t> emotion_targets;  // dictionary indices
  std::vector<std::string> reference;        // caption tokens
};

struct PrepareContext {
  const RetrievalIndex& index;
  const EmbeddingTable& table;
  const EmotionDictionary& dictionary;
  const Vocabulary& vocab;
  std::size_t k = 4;
  std::size_t max_len = 15;
  TripletOptions triplet_options{};
};

inline PreparedSample prepare_sample(const SampleRecord& r, const PrepareContext& ctx) {
  if (r.frames.cols() != ctx.table.dim()) {
    throw DataError("sample '" + r.id + "': frames have width " + std::to_string(r.frames.cols()) +
                    " but embeddings have d=" + std::to_string(ctx.table.dim()));
  }
  PreparedSample s;
  s.id = r.id;
  s.frames = r.frames;
  const Vec query = row_mean(r.frames);
  for (auto& g : retrieve_topk(ctx.index, query, ctx.k, r.video_id, ctx.table, ctx.triplet_options)) {
    s.triplets.push_back(std::move(g.components));
    s.similarities.push_back(g.score);
    s.retrieved.push_back(g.entry->id);
  }
  s.reference = tokenize(r.caption);
  if (s.reference.empty()) throw DataError("sample '" + r.id + "': caption has no tokens");
  std::vector<std::size_t> seq = ctx.vocab.encode(s.reference);
  seq.push_back(Vocabulary::kEos);
  if (seq.size() > ctx.max_len) seq.resize(ctx.max_len);
  s.targets = seq;
  s.inputs = {Vocabulary::kBos};
  s.inputs.insert(s.inputs.end(), seq.begin(), seq.end() - 1);
  s.emotion_targets = emotion_targets(r.emotion_words ? *r.emotion_words : ctx.dictionary.emotion_tokens(s.reference),
                                      ctx.dictionary);
  return s;
}

struct PipelineOutput {
  std::vector<Var> hidden;     // H_i
  std::vector<Var> factual;    // F_i
  std::vector<Var> emotional;  // E_i
  Var routes;                  // G
  std::optional<dbar::Gates> gates;
  Var multimodal;  // M
  Var memory;      // M̄
  bool weak_gate = false;
};

// Retrieval-conditioned encoder up to the Q-former output, honoring ablations.
inline PipelineOutput encode(Tape& tape, Parameters& params, const PreparedSample& s, const Tensor& dictionary,
                             const TrainConfig& cfg) {
  const std::size_t k = s.triplets.size();
  if (k == 0) throw UsageError("encode: sample '" + s.id + "' has no retrieval groups");
  const Ablation& ab = cfg.ablation;
  const std::size_t n = s.frames.rows(), d = s.frames.cols();
  Var frames = tape.constant(s.frames);
  Var e0 = tape.constant(dictionary);
  auto fw = fcue::Weights::bind(tape, params);
  auto pw = pvea::Weights::bind(tape, params);
  Var zero_nd = tape.constant(Tensor(Shape{n, d}));

  std::vector<Var> raw;
  for (const Tensor& t : s.triplets) raw.push_back(tape.constant(t));

  PipelineOutput out;
  auto factual_stage = [&]() {
    if (!ab.retrieval) {
      // zero triplet features: H_i = Attn(V, 0) = 0 and F_i reduces to the frames
      out.hidden.assign(k, zero_nd);
      out.factual.assign(k, frames);
      return;
    }
    std::vector<Var> triplets = raw;
    if (ab.factual_calibration) {
      auto self = fcue::self_refine(triplets);
      triplets = fcue::cross_refine(self.refined, s.similarities).calibrated;
    }
    for (const Var& t : triplets) {
      auto f = fcue::fuse_factual(frames, t, fw);
      out.hidden.push_back(f.hidden);
      out.factual.push_back(f.factual);
    }
  };
  auto emotion_stage = [&](const std::vector<Var>& source) {
    out.emotional.clear();
    for (std::size_t i = 0; i < k; ++i) {
      out.emotional.push_back(ab.emotion_augmentation ? pvea::augment(source[i], frames, e0, pw).emotion : zero_nd);
    }
  };

  if (cfg.order == Order::kFactFirst) {
    factual_stage();
    emotion_stage(out.factual);
  } else {
    // augmentation reads uncalibrated fused features built from the raw triplets
    std::vector<Var> source;
    for (std::size_t i = 0; i < k; ++i) {
      source.push_back(ab.retrieval && ab.emotion_augmentation ? fcue::fuse_factual(frames, raw[i], fw).factual
                                                                : frames);
    }
    emotion_stage(source);
    factual_stage();
  }

  dbar::Aggregate agg;
  if (ab.bias_adjustment) {
    auto dw = dbar::Weights::bind(tape, params);
    out.gates = dbar::compute_gates(out.factual, out.emotional, dw);
    out.routes = dbar::compute_routes(out.hidden, dw);
    agg = dbar::aggregate(out.factual, out.emotional, out.routes, *out.gates);
  } else {
    out.routes = tape.constant(Tensor(Shape{k}, 1.0 / static_cast<double>(k)));
    agg = dbar::aggregate_unadjusted(out.factual, out.emotional);
  }
  out.multimodal = agg.representation;
  out.weak_gate = agg.weak_gate;
  out.memory = qformer::aggregate(out.multimodal, frames, qformer::Weights::bind(tape, params));
  return out;
}

struct ForwardResult {
  Var l_e, l_cls, loss;
  PipelineOutput pipeline;
};

inline ForwardResult forward(Tape& tape, Parameters& params, const PreparedSample& s, const Tensor& dictionary,
                             const std::vector<bool>& emotion_flags, const TrainConfig& cfg) {
  ForwardResult r;
  r.pipeline = encode(tape, params, s, dictionary, cfg);
  auto dw = decoder::Weights::bind(tape, params);
  Var lg = decoder::logits(r.pipeline.memory, s.inputs, dw);
  r.l_e = emotion_focused_ce(lg, s.targets, emotion_flags, cfg.delta);
  r.l_cls = emotion_cls_loss(r.pipeline.emotional, r.pipeline.routes, emotion_head::Weights::bind(tape, params),
                             s.emotion_targets);
  r.loss = total_loss(r.l_e, r.l_cls, cfg.lambda_e, cfg.lambda_cls);
  return r;
}

inline Tensor memory_for(Parameters& params, const PreparedSample& s, const Tensor& dictionary, const TrainConfig& cfg) {
  Tape tape(false);
  return encode(tape, params, s, dictionary, cfg).memory.value();
}

inline NextTokenFn next_token_fn(Parameters& params, Tensor memory) {
  return [&params, memory = std::move(memory)](const std::vector<std::size_t>& prefix) {
    return decoder::next_log_probs(memory, prefix, params);
  };
}

// ---------------------------------------------------------------------------
// Training loop

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossRecord {
  std::size_t step = 0;  // 1-based
  double l_e = 0.0;
  double l_cls = 0.0;
  double loss = 0.0;
};

inline void write_loss_csv_header(std::ostream& os) { os << "step,L_e,L_cls,L\n"; }

inline void write_loss_csv_row(std::ostream& os, const LossRecord& r) {
  os << r.step << ',' << format_double(r.l_e) << ',' << format_double(r.l_cls) << ',' << format_double(r.loss) << '\n';
}

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(std::size_t step, const Parameters&)> on_checkpoint;
};

// Batches cycle through the samples in id order; each step averages the
// per-sample losses of its batch and applies one Adam update.
inline std::vector<LossRecord> train(Parameters& params, std::vector<PreparedSample> samples, const Tensor& dictionary,
                                     const std::vector<bool>& emotion_flags, const TrainConfig& cfg,
                                     const TrainHooks& hooks = {}) {
  cfg.validate();
  if (samples.empty()) throw UsageError("train: empty dataset");
  std::sort(samples.begin(), samples.end(), [](const PreparedSample& a, const PreparedSample& b) { return a.id < b.id; });
  const std::size_t batch = std::min(cfg.batch_size, samples.size());
  Adam adam(AdamConfig{cfg.lr});
  std::vector<LossRecord> history;
  std::size_t cursor = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    params.zero_grad();
    LossRecord rec;
    rec.step = step;
    for (std::size_t j = 0; j < batch; ++j) {
      const PreparedSample& s = samples[cursor];
      cursor = (cursor + 1) % samples.size();
      Tape tape;
      ForwardResult f = forward(tape, params, s, dictionary, emotion_flags, cfg);
      const double l = f.loss.item();
      if (!std::isfinite(l)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " on sample '" + s.id +
                            "' (L_e=" + format_double(f.l_e.item()) + ", L_cls=" + format_double(f.l_cls.item()) +
                            ")");
      }
      tape.backward(scale(f.loss, 1.0 / static_cast<double>(batch)));
      rec.l_e += f.l_e.item() / static_cast<double>(batch);
      rec.l_cls += f.l_cls.item() / static_cast<double>(batch);
      rec.loss += l / static_cast<double>(batch);
    }
    adam.step(params);
    history.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_checkpoint && cfg.checkpoint_every != 0 && step % cfg.checkpoint_every == 0 && step != cfg.max_steps) {
      hooks.on_checkpoint(step, params);
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.max_steps, params);
  return history;
}

}  // namespace faceforge
