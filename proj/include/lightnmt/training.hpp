#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "lightnmt/checkpoint.hpp"
#include "lightnmt/corpus.hpp"
#include "lightnmt/model.hpp"
#include "lightnmt/surgery.hpp"

namespace lightnmt {

struct TrainConfig {
  double peak_lr = 5e-4;
  double warmup_init_lr = 1e-7;
  std::size_t warmup_updates = 4000;
  double beta1 = 0.9, beta2 = 0.98;
  double adam_eps = 1e-8;
  double label_smoothing = 0.1;
  double clip_norm = 0.0;  // 0 disables clipping
  std::size_t max_updates = 1000;  // updates performed by one run
  double dropout = 0.1;            // written into the model config for training
  bool freeze_encoder = false;
  std::optional<bool> lr_reset;    // unset: the fine-tuning workflow decides
  std::size_t max_tokens = 4096;   // padded tokens per batch
  std::size_t batch_buffer = 2000; // examples sorted together when batching
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(label_smoothing >= 0 && label_smoothing < 1))
      throw ConfigError("label_smoothing must be in [0, 1)");
    if (warmup_updates < 1) throw ConfigError("warmup_updates must be >= 1");
    if (!(peak_lr > 0)) throw ConfigError("peak_lr must be > 0");
    if (!(warmup_init_lr >= 0)) throw ConfigError("warmup_init_lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("adam betas must be in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
    if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (batch_buffer < 1) throw ConfigError("batch_buffer must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"peak_lr", c.peak_lr},
                     {"warmup_init_lr", c.warmup_init_lr},
                     {"warmup_updates", c.warmup_updates},
                     {"adam_betas", {c.beta1, c.beta2}},
                     {"adam_eps", c.adam_eps},
                     {"label_smoothing", c.label_smoothing},
                     {"clip_norm", c.clip_norm},
                     {"max_updates", c.max_updates},
                     {"dropout", c.dropout},
                     {"freeze_encoder", c.freeze_encoder},
                     {"lr_reset", c.lr_reset ? nlohmann::json(*c.lr_reset) : nlohmann::json()},
                     {"max_tokens", c.max_tokens},
                     {"batch_buffer", c.batch_buffer},
                     {"checkpoint_every", c.checkpoint_every},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "peak_lr") c.peak_lr = v.get<double>();
      else if (k == "warmup_init_lr") c.warmup_init_lr = v.get<double>();
      else if (k == "warmup_updates") c.warmup_updates = v.get<std::size_t>();
      else if (k == "adam_betas") {
        const auto b = v.get<std::vector<double>>();
        if (b.size() != 2) throw ConfigError("adam_betas needs two values");
        c.beta1 = b[0];
        c.beta2 = b[1];
      } else if (k == "adam_eps") c.adam_eps = v.get<double>();
      else if (k == "label_smoothing") c.label_smoothing = v.get<double>();
      else if (k == "clip_norm") c.clip_norm = v.get<double>();
      else if (k == "max_updates") c.max_updates = v.get<std::size_t>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "freeze_encoder") c.freeze_encoder = v.get<bool>();
      else if (k == "lr_reset") c.lr_reset = v.is_null() ? std::nullopt : std::optional<bool>(v.get<bool>());
      else if (k == "max_tokens") c.max_tokens = v.get<std::size_t>();
      else if (k == "batch_buffer") c.batch_buffer = v.get<std::size_t>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown train config key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config key '" + k + "': " + e.what());
    }
  }
}

// Inverse square root schedule with a linear warmup from warmup_init_lr.
inline double lr_at(std::size_t step, const TrainConfig& c) {
  if (step < 1) throw ContractError("lr_at: steps count from 1");
  const double w = static_cast<double>(c.warmup_updates), s = static_cast<double>(step);
  if (step < c.warmup_updates) return c.warmup_init_lr + (c.peak_lr - c.warmup_init_lr) * s / w;
  return c.peak_lr * std::sqrt(w / s);
}

// Label-smoothed cross-entropy averaged over non-pad rows.
template <class T>
Var<T> label_smoothed_loss(const Var<T>& logits, std::span<const int> targets, double eps,
                           int pad_id = -1) {
  std::size_t n = 0;
  for (int y : targets) n += y != pad_id;
  if (n == 0) throw DataError("loss: batch has no target tokens");
  return scale(label_smoothed_nll_sum(logits, targets, static_cast<T>(eps), pad_id),
               static_cast<T>(1.0 / static_cast<double>(n)));
}

// ---------------------------------------------------------------------------
// Examples

// Tokenizes pairs, inserts language codes and, when `constrained` has a
// vocabulary for the target language, segments the target with constrained
// BPE so it only uses that vocabulary's tokens.
inline std::vector<Example> make_examples(const BpeModel& bpe, const std::vector<SentencePair>& pairs,
                                          LangCodePosition position,
                                          const std::map<std::string, LangVocab>* constrained = nullptr) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    Example ex;
    ex.src_lang = p.src_lang;
    ex.tgt_lang = p.tgt_lang;
    auto coded = insert_language_code(bpe, to_ids(bpe, apply_bpe_line(bpe, p.src)), p.tgt_lang, position);
    ex.src = std::move(coded.src);
    ex.decoder_start = coded.decoder_start;
    const LangVocab* lv = nullptr;
    if (constrained) {
      auto it = constrained->find(p.tgt_lang);
      if (it != constrained->end()) lv = &it->second;
    }
    ex.tgt = to_ids(bpe, lv ? apply_bpe_constrained_line(bpe, p.tgt, *lv) : apply_bpe_line(bpe, p.tgt));
    if (ex.src.empty()) continue;  // nothing to encode
    out.push_back(std::move(ex));
  }
  return out;
}

// Synthetic sequence task over raw token ids: the target copies or reverses
// the source. Used to check that models can fit simple mappings.
struct ToyTaskSpec {
  std::size_t pairs = 500;
  int first_token = 4;  // content ids are [first_token, vocab)
  int vocab = 24;
  std::size_t min_len = 3, max_len = 8;
  bool reverse = true;
  std::string src_lang = "xx", tgt_lang = "yy";
  std::vector<int> src_prefix;  // e.g. a target-language code
  int decoder_start = kBos;
  std::uint64_t seed = 1;
};

inline std::vector<Example> make_toy_task(const ToyTaskSpec& spec) {
  if (spec.first_token >= spec.vocab || spec.min_len < 1 || spec.min_len > spec.max_len)
    throw ConfigError("toy task: bad token range or lengths");
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> len(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> tok(spec.first_token, spec.vocab - 1);
  std::vector<Example> out(spec.pairs);
  for (auto& ex : out) {
    ex.src_lang = spec.src_lang;
    ex.tgt_lang = spec.tgt_lang;
    ex.decoder_start = spec.decoder_start;
    ex.tgt.resize(len(rng));
    for (auto& t : ex.tgt) t = tok(rng);
    ex.src = spec.src_prefix;
    ex.src.insert(ex.src.end(), ex.tgt.begin(), ex.tgt.end());
    if (spec.reverse) std::reverse(ex.tgt.begin(), ex.tgt.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss over a batch

struct BatchStats {
  double loss_sum = 0;  // label-smoothed, summed over tokens
  double nll_sum = 0;   // plain negative log-likelihood
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

template <class T>
struct BatchLoss {
  Var<T> mean;  // differentiable mean loss
  BatchStats stats;
};

// Teacher-forced loss of a batch that shares one target side. Targets outside
// a filtered decoder vocabulary are scored as <unk>.
template <class T>
BatchLoss<T> batch_loss(const ModelWeights<T>& w, const std::vector<Example>& batch, double eps,
                        const ForwardOptions& opt = {}) {
  if (batch.empty()) throw DataError("batch_loss: empty batch");
  const TargetSide<T>& ts = w.target_for(batch.front().tgt_lang);
  for (const auto& ex : batch)
    if (&w.target_for(ex.tgt_lang) != &ts)
      throw DataError("batch mixes target languages " + batch.front().tgt_lang + " and " +
                      ex.tgt_lang + " on a multi-decoder model");
  auto local = [&](int g) {
    const int l = ts.to_local(g);
    return l >= 0 ? l : ts.to_local(kUnk);
  };
  std::vector<std::vector<int>> src, inputs, targets;
  for (const auto& ex : batch) {
    src.push_back(ex.src);
    // inputs: start y1..yn; targets: y1..yn EOS
    std::vector<int> in{ts.to_local(ex.decoder_start)}, tg;
    if (in[0] < 0) throw DataError("decoder start token is outside the target vocabulary");
    for (int y : ex.tgt) {
      in.push_back(local(y));
      tg.push_back(local(y));
    }
    tg.push_back(local(kEos));
    inputs.push_back(std::move(in));
    targets.push_back(std::move(tg));
  }
  const auto enc = encode_var(w, src, opt);
  const auto out = decode_var(w, ts, enc, inputs, opt);
  std::vector<int> flat(out.rows.size(), -1);
  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    const auto [s, t] = out.rows[r];
    if (s >= 0) flat[r] = targets[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)];
  }
  BatchLoss<T> res;
  const Var<T> sum = label_smoothed_nll_sum(out.logits, std::span<const int>(flat), static_cast<T>(eps), -1);
  const Tensor<T>& logits = out.logits.value();
  for (std::size_t r = 0; r < flat.size(); ++r) {
    if (flat[r] < 0) continue;
    const auto row = logits.row_span(r);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    res.stats.correct += best == flat[r];
    T mx = row[0];
    for (T x : row) mx = std::max(mx, x);
    double z = 0;
    for (T x : row) z += std::exp(static_cast<double>(x - mx));
    res.stats.nll_sum += -(static_cast<double>(row[static_cast<std::size_t>(flat[r])] - mx) - std::log(z));
    ++res.stats.tokens;
  }
  res.stats.loss_sum = static_cast<double>(sum.value()[0]);
  res.mean = scale(sum, static_cast<T>(1.0 / static_cast<double>(res.stats.tokens)));
  return res;
}

struct EvalResult {
  double loss = 0;      // label-smoothed, per token
  double nll = 0;       // per token
  double accuracy = 0;  // teacher-forced argmax accuracy
  std::size_t tokens = 0;
};

// Teacher-forced evaluation; examples are grouped per target language so
// multi-decoder models can be scored on mixed data.
template <class T>
EvalResult evaluate(const ModelWeights<T>& w, const std::vector<Example>& data, double eps = 0.0,
                    std::size_t batch_size = 64) {
  NoGradGuard no_grad;
  std::map<std::string, std::vector<Example>> by_lang;
  for (const auto& ex : data) by_lang[w.cfg.multi_decoder ? ex.tgt_lang : ""].push_back(ex);
  BatchStats total;
  for (const auto& [lang, items] : by_lang) {
    for (std::size_t i = 0; i < items.size(); i += batch_size) {
      std::vector<Example> batch(items.begin() + static_cast<std::ptrdiff_t>(i),
                                 items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + batch_size)));
      const auto s = batch_loss(w, batch, eps).stats;
      total.loss_sum += s.loss_sum;
      total.nll_sum += s.nll_sum;
      total.tokens += s.tokens;
      total.correct += s.correct;
    }
  }
  EvalResult r;
  r.tokens = total.tokens;
  if (total.tokens == 0) return r;
  const double n = static_cast<double>(total.tokens);
  r.loss = total.loss_sum / n;
  r.nll = total.nll_sum / n;
  r.accuracy = static_cast<double>(total.correct) / n;
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

// Adam moments keyed by parameter name, plus the update counter that drives
// the learning-rate schedule.
template <class T>
struct AdamState {
  std::size_t step = 0;
  std::map<std::string, Tensor<T>> m, v;
};

struct StepStats {
  std::size_t step = 0;
  double loss = 0;  // mean label-smoothed loss
  double lr = 0;
  double grad_norm = 0;  // before clipping
  std::size_t tokens = 0;
  double seconds = 0;
  double wps() const { return seconds > 0 ? static_cast<double>(tokens) / seconds : 0.0; }
};

template <class T>
class Trainer {
 public:
  // Moments in `state` whose names or shapes do not match a trainable
  // parameter are dropped.
  Trainer(ModelWeights<T>& w, TrainConfig cfg, AdamState<T> state = {})
      : w_(w), cfg_(std::move(cfg)), state_(std::move(state)), rng_(cfg_.seed) {
    cfg_.validate();
    w_.cfg.dropout = cfg_.dropout;
    for_each_param(w_, [&](const std::string& name, const Var<T>& v, ParamGroup g) {
      if (!v.requires_grad()) return;
      slots_.push_back({name, v, cfg_.freeze_encoder && is_encoder_side(v, g)});
    });
    std::map<std::string, Tensor<T>> m, vv;
    for (const auto& s : slots_) {
      auto im = state_.m.find(s.name);
      auto iv = state_.v.find(s.name);
      const bool ok = im != state_.m.end() && iv != state_.v.end() &&
                      im->second.shape() == s.var.shape() && iv->second.shape() == s.var.shape();
      m[s.name] = ok ? std::move(im->second) : Tensor<T>(s.var.shape());
      vv[s.name] = ok ? std::move(iv->second) : Tensor<T>(s.var.shape());
    }
    state_.m = std::move(m);
    state_.v = std::move(vv);
  }

  const TrainConfig& config() const { return cfg_; }
  const AdamState<T>& state() const { return state_; }
  std::size_t step_count() const { return state_.step; }
  std::mt19937_64& rng() { return rng_; }

  // One update. A non-finite loss or gradient aborts before any weight
  // changes and raises NumericalError.
  StepStats step(const std::vector<Example>& batch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (auto& s : slots_) s.var.zero_grad();
    ForwardOptions opt{true, &rng_};
    BatchLoss<T> bl = batch_loss(w_, batch, cfg_.label_smoothing, opt);
    const double loss = static_cast<double>(bl.mean.value()[0]);
    const std::size_t next = state_.step + 1;
    if (!std::isfinite(loss))
      throw NumericalError("non-finite loss at update " + std::to_string(next) + "; update skipped");
    backward(bl.mean);
    double sq = 0;
    for (const auto& s : slots_) {
      if (s.frozen || s.var.grad().size() == 0) continue;
      for (T g : s.var.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm))
      throw NumericalError("non-finite gradient at update " + std::to_string(next) + "; update skipped");
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / (norm + 1e-6) : 1.0;
    state_.step = next;
    const double lr = lr_at(next, cfg_);
    const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(next));
    const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(next));
    for (auto& s : slots_) {
      if (s.frozen || s.var.grad().size() == 0) continue;
      auto& p = s.var.mutable_value();
      const auto& g = s.var.grad();
      auto& m = state_.m[s.name];
      auto& v = state_.v[s.name];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * clip;
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.adam_eps);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
      }
    }
    for (auto& s : slots_) s.var.zero_grad();
    StepStats st;
    st.step = next;
    st.loss = loss;
    st.lr = lr;
    st.grad_norm = norm;
    st.tokens = bl.stats.tokens;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return st;
  }

 private:
  struct Slot {
    std::string name;
    Var<T> var;
    bool frozen;
  };

  // Encoder layers, plus the source embedding unless a decoder reads it too.
  bool is_encoder_side(const Var<T>& v, ParamGroup g) const {
    if (g == ParamGroup::kEncoder) return true;
    if (!(v == w_.src_embed)) return false;
    for (const auto& t : w_.targets)
      if (t.embed == w_.src_embed) return false;
    return true;
  }

  ModelWeights<T>& w_;
  TrainConfig cfg_;
  AdamState<T> state_;
  std::mt19937_64 rng_;
  std::vector<Slot> slots_;
};

using StepCallback = std::function<void(const StepStats&, const std::vector<Example>&)>;

// Runs trainer.config().max_updates updates, cycling through shuffled
// length-sorted batches. Homogeneous batching gives every batch a single
// target language.
template <class T>
std::vector<StepStats> train_loop(Trainer<T>& trainer, const std::vector<Example>& data,
                                  bool homogeneous, const StepCallback& on_step = {}) {
  const TrainConfig& cfg = trainer.config();
  if (data.empty()) throw DataError("training data is empty");
  std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<StepStats> log;
  while (log.size() < cfg.max_updates) {
    auto batching = make_batches(data, cfg.max_tokens, homogeneous, cfg.batch_buffer, batch_rng);
    if (batching.batches.empty())
      throw DataError("no training example fits in max_tokens " + std::to_string(cfg.max_tokens));
    for (const auto& b : batching.batches) {
      if (log.size() >= cfg.max_updates) break;
      log.push_back(trainer.step(b));
      if (on_step) on_step(log.back(), b);
    }
  }
  return log;
}

inline void write_run_log(const std::filesystem::path& path, const std::vector<StepStats>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step\tloss\tlr\twps\n";
  for (const auto& s : log) out << s.step << '\t' << s.loss << '\t' << s.lr << '\t' << s.wps() << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints: model parameters plus optimizer state

inline constexpr const char* kAdamMPrefix = "adam_m/";
inline constexpr const char* kAdamVPrefix = "adam_v/";

template <class T>
TensorFile checkpoint_to_file(const ModelWeights<T>& w, const AdamState<T>& st, const TrainConfig& cfg) {
  TensorFile f = model_to_file(w);
  f.header["kind"] = "checkpoint";
  f.header["train"] = cfg;
  f.header["step"] = st.step;
  for (const auto& [name, t] : st.m) f.tensors.emplace_back(kAdamMPrefix + name, t.template cast<double>());
  for (const auto& [name, t] : st.v) f.tensors.emplace_back(kAdamVPrefix + name, t.template cast<double>());
  return f;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& w,
                     const AdamState<T>& st, const TrainConfig& cfg) {
  write_tensor_file(path, checkpoint_to_file(w, st, cfg));
}

template <class T>
struct Checkpoint {
  ModelWeights<T> weights;
  std::optional<AdamState<T>> state;  // absent for plain model files
};

template <class T>
Checkpoint<T> checkpoint_from_file(const TensorFile& f) {
  Checkpoint<T> c{model_from_file<T>(f), std::nullopt};
  if (f.header.value("kind", "") != "checkpoint") return c;
  AdamState<T> st;
  try {
    st.step = f.header.at("step").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header: " + std::string(e.what()));
  }
  for (const auto& [name, t] : f.tensors) {
    if (name.starts_with(kAdamMPrefix)) st.m[name.substr(std::strlen(kAdamMPrefix))] = t.template cast<T>();
    if (name.starts_with(kAdamVPrefix)) st.v[name.substr(std::strlen(kAdamVPrefix))] = t.template cast<T>();
  }
  c.state = std::move(st);
  return c;
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_file<T>(read_tensor_file(path));
}

// ---------------------------------------------------------------------------
// Fine-tuning workflows

enum class Workflow { kMultiparallel, kMultidecoder, kHybrid };

inline const char* to_string(Workflow w) {
  switch (w) {
    case Workflow::kMultiparallel: return "multiparallel";
    case Workflow::kMultidecoder: return "multidecoder";
    case Workflow::kHybrid: return "hybrid";
  }
  return "?";
}

inline Workflow parse_workflow(const std::string& s) {
  if (s == "multiparallel") return Workflow::kMultiparallel;
  if (s == "multidecoder" || s == "multi-decoder") return Workflow::kMultidecoder;
  if (s == "hybrid") return Workflow::kHybrid;
  throw ConfigError("workflow must be multiparallel, multidecoder or hybrid, got '" + s + "'");
}

// New parameters start a fresh schedule; continued training keeps it.
inline bool default_lr_reset(Workflow w) { return w != Workflow::kMultiparallel; }

struct FinetuneSpec {
  Workflow workflow = Workflow::kMultiparallel;
  std::map<std::string, LangVocab> vocabs;  // multidecoder: one per language
  std::size_t hybrid_layers = 2;
};

template <class T>
struct FinetuneResult {
  ModelWeights<T> weights;
  AdamState<T> state;
  std::vector<StepStats> log;
  bool lr_reset = false;
};

// Applies the workflow's surgery to `parent`, then trains on `data`. Without
// an lr reset the parent's optimizer state (schedule position and moments)
// carries over.
template <class T>
FinetuneResult<T> finetune(const ModelWeights<T>& parent,
                           const std::type_identity_t<AdamState<T>>* parent_state,
                           const FinetuneSpec& spec, const std::vector<Example>& data,
                           TrainConfig cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  FinetuneResult<T> r;
  std::mt19937_64 rng(cfg.seed);
  switch (spec.workflow) {
    case Workflow::kMultiparallel:
      r.weights = clone_model(parent);
      break;
    case Workflow::kMultidecoder:
      r.weights = init_multi_decoder(parent, spec.vocabs);
      break;
    case Workflow::kHybrid:
      r.weights = init_hybrid(parent, spec.hybrid_layers, rng);
      break;
  }
  r.lr_reset = cfg.lr_reset.value_or(default_lr_reset(spec.workflow));
  AdamState<T> start;
  if (!r.lr_reset && parent_state) start = *parent_state;
  Trainer<T> trainer(r.weights, cfg, std::move(start));
  r.log = train_loop(trainer, data, spec.workflow == Workflow::kMultidecoder, on_step);
  r.state = trainer.state();
  return r;
}

}  // namespace lightnmt
