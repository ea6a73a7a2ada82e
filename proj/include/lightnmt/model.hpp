#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lightnmt/autodiff.hpp"
#include "lightnmt/model_config.hpp"
#include "lightnmt/profiler.hpp"
#include "lightnmt/subword.hpp"

namespace lightnmt {

// ---------------------------------------------------------------------------
// Parameter containers. Weight matrices are [in x out] so y = x W + b.

template <class T>
struct Linear {
  Var<T> w, b;
};

template <class T>
struct Norm {
  Var<T> gain, bias;
};

template <class T>
struct Attention {
  Linear<T> q, k, v, o;
};

template <class T>
struct EncoderLayer {
  Attention<T> self_attn;
  Norm<T> ln_attn;
  Linear<T> ff1, ff2;
  Norm<T> ln_ffn;
};

template <class T>
struct DecoderLayer {
  Attention<T> self_attn;
  Norm<T> ln_self;
  Attention<T> cross_attn;
  Norm<T> ln_cross;
  Linear<T> ff1, ff2;
  Norm<T> ln_ffn;
};

// One LSTM layer: LayerNorm on the input, gates = [x; h] W + b in i,f,g,o order.
template <class T>
struct LstmLayer {
  Norm<T> ln_in;
  Var<T> w, b;
};

// Single-head additive attention: score_j = v . tanh(W_q q + W_k e_j).
template <class T>
struct AdditiveAttention {
  Var<T> wq, wk, v;
};

template <class T>
struct DecoderStack {
  DecoderKind kind = DecoderKind::kTransformer;
  std::vector<DecoderLayer<T>> layers;  // transformer
  Norm<T> final_ln;                     // transformer, pre-norm only
  std::vector<LstmLayer<T>> lstm;       // recurrent
  AdditiveAttention<T> attn;            // recurrent
  std::size_t depth() const { return kind == DecoderKind::kTransformer ? layers.size() : lstm.size(); }
};

// A decoder with its target embedding (also the tied output projection) and
// an optional restriction of the global vocabulary.
template <class T>
struct TargetSide {
  std::string language;  // empty for the shared decoder
  DecoderStack<T> decoder;
  Var<T> embed;             // [local vocab x d]
  std::vector<int> vocab;   // local -> global; empty means the full vocabulary
  std::vector<int> local_of;  // global -> local or -1

  std::size_t size() const { return embed.rows(); }
  bool filtered() const { return !vocab.empty(); }
  int to_global(int local) const {
    return vocab.empty() ? local : vocab.at(static_cast<std::size_t>(local));
  }
  // -1 when the global id is outside this side's vocabulary.
  int to_local(int global) const {
    if (vocab.empty())
      return global >= 0 && static_cast<std::size_t>(global) < size() ? global : -1;
    if (global < 0 || static_cast<std::size_t>(global) >= local_of.size()) return -1;
    return local_of[static_cast<std::size_t>(global)];
  }
  void set_vocab(std::vector<int> kept_sorted, std::size_t global_size) {
    vocab = std::move(kept_sorted);
    local_of.assign(global_size, -1);
    for (std::size_t j = 0; j < vocab.size(); ++j)
      local_of.at(static_cast<std::size_t>(vocab[j])) = static_cast<int>(j);
  }
};

template <class T>
struct ModelWeights {
  ModelConfig cfg;
  Var<T> src_embed;
  std::vector<EncoderLayer<T>> encoder;
  Norm<T> encoder_final_ln;  // pre-norm only
  std::vector<TargetSide<T>> targets;

  // The decoder that produces `lang`; the shared one unless multi-decoder.
  const TargetSide<T>& target_for(std::string_view lang) const {
    if (!cfg.multi_decoder) return targets.at(0);
    for (const auto& t : targets)
      if (t.language == lang) return t;
    throw DataError("model has no decoder for language '" + std::string(lang) + "'");
  }
  TargetSide<T>& target_for(std::string_view lang) {
    return const_cast<TargetSide<T>&>(std::as_const(*this).target_for(lang));
  }
};

// ---------------------------------------------------------------------------
// Parameter traversal

enum class ParamGroup { kEmbedding, kEncoder, kDecoder };

namespace detail {
template <class T, class F>
void visit(const Linear<T>& l, const std::string& p, ParamGroup g, F& f) {
  f(p + ".w", l.w, g);
  if (l.b) f(p + ".b", l.b, g);
}
template <class T, class F>
void visit(const Norm<T>& n, const std::string& p, ParamGroup g, F& f) {
  if (!n.gain) return;
  f(p + ".gain", n.gain, g);
  f(p + ".bias", n.bias, g);
}
template <class T, class F>
void visit(const Attention<T>& a, const std::string& p, ParamGroup g, F& f) {
  visit(a.q, p + ".q", g, f);
  visit(a.k, p + ".k", g, f);
  visit(a.v, p + ".v", g, f);
  visit(a.o, p + ".o", g, f);
}
template <class T, class F>
void visit(const EncoderLayer<T>& l, const std::string& p, ParamGroup g, F& f) {
  visit(l.self_attn, p + ".self_attn", g, f);
  visit(l.ln_attn, p + ".ln_attn", g, f);
  visit(l.ff1, p + ".ff1", g, f);
  visit(l.ff2, p + ".ff2", g, f);
  visit(l.ln_ffn, p + ".ln_ffn", g, f);
}
template <class T, class F>
void visit(const DecoderLayer<T>& l, const std::string& p, ParamGroup g, F& f) {
  visit(l.self_attn, p + ".self_attn", g, f);
  visit(l.ln_self, p + ".ln_self", g, f);
  visit(l.cross_attn, p + ".cross_attn", g, f);
  visit(l.ln_cross, p + ".ln_cross", g, f);
  visit(l.ff1, p + ".ff1", g, f);
  visit(l.ff2, p + ".ff2", g, f);
  visit(l.ln_ffn, p + ".ln_ffn", g, f);
}
template <class T, class F>
void visit(const DecoderStack<T>& s, const std::string& p, ParamGroup g, F& f) {
  for (std::size_t i = 0; i < s.layers.size(); ++i)
    visit(s.layers[i], p + ".layer" + std::to_string(i), g, f);
  visit(s.final_ln, p + ".final_ln", g, f);
  for (std::size_t i = 0; i < s.lstm.size(); ++i) {
    const std::string q = p + ".lstm" + std::to_string(i);
    visit(s.lstm[i].ln_in, q + ".ln_in", g, f);
    f(q + ".w", s.lstm[i].w, g);
    f(q + ".b", s.lstm[i].b, g);
  }
  if (s.attn.wq) {
    f(p + ".attn.wq", s.attn.wq, g);
    f(p + ".attn.wk", s.attn.wk, g);
    f(p + ".attn.v", s.attn.v, g);
  }
}
}  // namespace detail

// Calls f(name, var, group) once per distinct parameter storage, in a fixed
// order. Shared matrices are reported under their first name.
template <class T, class F>
void for_each_param(const ModelWeights<T>& w, F&& f) {
  std::unordered_set<const Node<T>*> seen;
  auto once = [&](const std::string& name, const Var<T>& v, ParamGroup g) {
    if (seen.insert(v.node()).second) f(name, v, g);
  };
  once("src_embed", w.src_embed, ParamGroup::kEmbedding);
  for (std::size_t i = 0; i < w.encoder.size(); ++i)
    detail::visit(w.encoder[i], "encoder.layer" + std::to_string(i), ParamGroup::kEncoder, once);
  detail::visit(w.encoder_final_ln, "encoder.final_ln", ParamGroup::kEncoder, once);
  for (const auto& t : w.targets) {
    const std::string p = "target." + (t.language.empty() ? std::string("shared") : t.language);
    once(p + ".embed", t.embed, ParamGroup::kEmbedding);
    detail::visit(t.decoder, p + ".decoder", ParamGroup::kDecoder, once);
  }
}

template <class T>
std::vector<Var<T>> parameters(const ModelWeights<T>& w) {
  std::vector<Var<T>> out;
  for_each_param(w, [&](const std::string&, const Var<T>& v, ParamGroup) { out.push_back(v); });
  return out;
}

// Exact count over distinct storage.
template <class T>
ParamCount count_params(const ModelWeights<T>& w) {
  ParamCount p;
  for_each_param(w, [&](const std::string&, const Var<T>& v, ParamGroup g) {
    switch (g) {
      case ParamGroup::kEmbedding: p.embedding += v.size(); break;
      case ParamGroup::kEncoder: p.encoder += v.size(); break;
      case ParamGroup::kDecoder: p.decoder += v.size(); break;
    }
  });
  return p;
}

// ---------------------------------------------------------------------------
// Construction

namespace detail {
// Uniform in +-sqrt(3 / fan_in): unit-variance inputs keep unit variance.
template <class T, class Rng>
Var<T> uniform_param(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor<T> t({rows, cols});
  for (auto& x : t.values()) x = static_cast<T>(limit * u(rng));
  return Var<T>::parameter(std::move(t));
}
template <class T>
Var<T> filled_param(std::size_t rows, std::size_t cols, T v) {
  return Var<T>::parameter(Tensor<T>({rows, cols}, v));
}
template <class T, class Rng>
Linear<T> make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng) {
  Linear<T> l;
  l.w = uniform_param<T>(in, out, in, rng);
  if (bias) l.b = filled_param<T>(1, out, T{0});
  return l;
}
template <class T>
Norm<T> make_norm(std::size_t d) {
  return {filled_param<T>(1, d, T{1}), filled_param<T>(1, d, T{0})};
}
template <class T, class Rng>
Attention<T> make_attention(std::size_t d, Rng& rng) {
  Attention<T> a;
  a.q = make_linear<T>(d, d, true, rng);
  a.k = make_linear<T>(d, d, true, rng);
  a.v = make_linear<T>(d, d, true, rng);
  a.o = make_linear<T>(d, d, true, rng);
  return a;
}
template <class T, class Rng>
Var<T> make_embedding(std::size_t rows, std::size_t d, Rng& rng) {
  Var<T> e = uniform_param<T>(rows, d, d, rng);
  for (std::size_t j = 0; j < d; ++j) e.mutable_value()(kPad, j) = T{0};
  return e;
}
}  // namespace detail

template <class T, class Rng>
DecoderStack<T> build_decoder_stack(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim;
  DecoderStack<T> s;
  s.kind = cfg.decoder_kind;
  if (cfg.decoder_kind == DecoderKind::kTransformer) {
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
      DecoderLayer<T> l;
      l.self_attn = detail::make_attention<T>(d, rng);
      l.ln_self = detail::make_norm<T>(d);
      l.cross_attn = detail::make_attention<T>(d, rng);
      l.ln_cross = detail::make_norm<T>(d);
      l.ff1 = detail::make_linear<T>(d, f, true, rng);
      l.ff2 = detail::make_linear<T>(f, d, true, rng);
      l.ln_ffn = detail::make_norm<T>(d);
      s.layers.push_back(std::move(l));
    }
    if (cfg.norm_placement == NormPlacement::kPre) s.final_ln = detail::make_norm<T>(d);
  } else {
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
      const std::size_t in = i == 0 ? d : 2 * d;
      LstmLayer<T> l;
      l.ln_in = detail::make_norm<T>(in);
      l.w = detail::uniform_param<T>(in + d, 4 * d, in + d, rng);
      l.b = detail::filled_param<T>(1, 4 * d, T{0});
      s.lstm.push_back(std::move(l));
    }
    s.attn.wq = detail::uniform_param<T>(d, d, d, rng);
    s.attn.wk = detail::uniform_param<T>(d, d, d, rng);
    s.attn.v = detail::uniform_param<T>(1, d, d, rng);
  }
  return s;
}

// Seeded random model. For multi-decoder configs `vocabs` restricts each
// language's target side; languages without an entry use the full vocabulary.
template <class T, class Rng>
ModelWeights<T> build_model(const ModelConfig& cfg, Rng& rng,
                            const std::map<std::string, LangVocab>* vocabs = nullptr) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim;
  ModelWeights<T> w;
  w.cfg = cfg;
  w.src_embed = detail::make_embedding<T>(cfg.vocab_size, d, rng);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    EncoderLayer<T> l;
    l.self_attn = detail::make_attention<T>(d, rng);
    l.ln_attn = detail::make_norm<T>(d);
    l.ff1 = detail::make_linear<T>(d, f, true, rng);
    l.ff2 = detail::make_linear<T>(f, d, true, rng);
    l.ln_ffn = detail::make_norm<T>(d);
    w.encoder.push_back(std::move(l));
  }
  if (cfg.norm_placement == NormPlacement::kPre) w.encoder_final_ln = detail::make_norm<T>(d);

  if (!cfg.multi_decoder) {
    TargetSide<T> t;
    t.decoder = build_decoder_stack<T>(cfg, rng);
    t.embed = cfg.share_all_embeddings ? w.src_embed
                                       : detail::make_embedding<T>(cfg.vocab_size, d, rng);
    w.targets.push_back(std::move(t));
    return w;
  }
  for (const auto& lang : cfg.languages) {
    TargetSide<T> t;
    t.language = lang;
    t.decoder = build_decoder_stack<T>(cfg, rng);
    const LangVocab* lv = nullptr;
    if (vocabs) {
      auto it = vocabs->find(lang);
      if (it != vocabs->end()) lv = &it->second;
    }
    if (lv) {
      if (lv->global_size() != cfg.vocab_size)
        throw ConfigError("vocabulary for '" + lang + "' does not match the model vocabulary");
      t.embed = detail::make_embedding<T>(lv->size(), d, rng);
      t.set_vocab(lv->filtered_to_global(), cfg.vocab_size);
    } else {
      t.embed = detail::make_embedding<T>(cfg.vocab_size, d, rng);
    }
    w.targets.push_back(std::move(t));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Full-sequence forward pass on the autodiff graph (training and reference).

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

// Fixed sinusoidal position code: [sin(p f_i) | cos(p f_i)].
template <class T>
void sinusoid(std::size_t pos, std::span<T> out) {
  const std::size_t half = out.size() / 2;
  const double step = std::log(10000.0) / static_cast<double>(half - 1);
  for (std::size_t i = 0; i < half; ++i) {
    const double a = static_cast<double>(pos) * std::exp(-static_cast<double>(i) * step);
    out[i] = static_cast<T>(std::sin(a));
    out[half + i] = static_cast<T>(std::cos(a));
  }
}

namespace detail {
template <class T>
Var<T> apply_dropout(const Var<T>& x, double p, const ForwardOptions& opt) {
  if (!opt.training || p <= 0) return x;
  if (!opt.rng) throw ContractError("training forward pass needs an rng for dropout");
  return dropout(x, static_cast<T>(p), true, *opt.rng);
}
template <class T>
Var<T> linear(const Var<T>& x, const Linear<T>& l) {
  Var<T> y = matmul(x, l.w);
  return l.b ? add(y, l.b) : y;
}
template <class T>
Var<T> norm(const Var<T>& x, const Norm<T>& n) {
  return layer_norm(x, n.gain, n.bias);
}
template <class T>
void check_length(std::size_t len, const ModelConfig& cfg) {
  if (len > cfg.max_positions)
    throw DataError("sequence of " + std::to_string(len) + " tokens exceeds max_positions " +
                    std::to_string(cfg.max_positions));
}
// Scaled token embeddings plus position codes, concatenated over sentences.
template <class T>
Var<T> embed_positions(const Var<T>& table, const std::vector<std::vector<int>>& seqs,
                       const ModelConfig& cfg, std::vector<Segment>& segs) {
  std::vector<int> flat;
  segs.clear();
  for (const auto& s : seqs) {
    check_length<T>(s.size(), cfg);
    segs.push_back({flat.size(), s.size()});
    flat.insert(flat.end(), s.begin(), s.end());
  }
  const std::size_t d = table.cols();
  Tensor<T> pos({flat.size(), d});
  for (const auto& sg : segs)
    for (std::size_t t = 0; t < sg.length; ++t) sinusoid<T>(t, pos.row_span(sg.offset + t));
  Var<T> x = scale(embedding(table, flat), static_cast<T>(std::sqrt(static_cast<double>(d))));
  return add(x, Var<T>::constant(std::move(pos)));
}
template <class T>
Tensor<T> causal_mask(std::size_t n) {
  Tensor<T> m({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<T>::infinity();
  return m;
}
// Multi-head attention of query segments over the matching key segments.
template <class T>
Var<T> attention(const Attention<T>& a, const Var<T>& xq, const std::vector<Segment>& qseg,
                 const Var<T>& xkv, const std::vector<Segment>& kseg, std::size_t heads,
                 bool causal) {
  const Var<T> q = linear(xq, a.q), k = linear(xkv, a.k), v = linear(xkv, a.v);
  const std::size_t d = q.cols(), dh = d / heads;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Var<T>> sentences;
  for (std::size_t s = 0; s < qseg.size(); ++s) {
    if (kseg[s].length == 0) throw DataError("attention over an empty sequence");
    const Var<T> qs = slice_rows(q, qseg[s].offset, qseg[s].offset + qseg[s].length);
    const Var<T> ks = slice_rows(k, kseg[s].offset, kseg[s].offset + kseg[s].length);
    const Var<T> vs = slice_rows(v, kseg[s].offset, kseg[s].offset + kseg[s].length);
    Var<T> mask;
    if (causal) mask = Var<T>::constant(causal_mask<T>(qseg[s].length));
    std::vector<Var<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      auto cut = [&](const Var<T>& m) { return heads == 1 ? m : slice_cols(m, h * dh, (h + 1) * dh); };
      Var<T> scores = scale(matmul(cut(qs), cut(ks), true), sc);
      if (causal) scores = add(scores, mask);
      outs.push_back(matmul(softmax(scores), cut(vs)));
    }
    sentences.push_back(heads == 1 ? outs[0] : concat_cols(outs));
  }
  return linear(sentences.size() == 1 ? sentences[0] : concat_rows(sentences), a.o);
}
template <class T>
Var<T> feed_forward(const Var<T>& x, const Linear<T>& ff1, const Linear<T>& ff2,
                    const ModelConfig& cfg, const ForwardOptions& opt) {
  return linear(apply_dropout(relu(linear(x, ff1)), cfg.activation_dropout, opt), ff2);
}
// Residual sub-block in either norm placement.
template <class T, class F>
Var<T> sublayer(const Var<T>& x, const Norm<T>& n, const ModelConfig& cfg,
                const ForwardOptions& opt, F&& body) {
  if (cfg.norm_placement == NormPlacement::kPre)
    return add(x, apply_dropout(body(norm(x, n)), cfg.dropout, opt));
  return norm(add(x, apply_dropout(body(x), cfg.dropout, opt)), n);
}
template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(const LstmLayer<T>& l, const Var<T>& x, const Var<T>& h,
                                    const Var<T>& c) {
  const std::size_t n = h.cols();
  const Var<T> gates = add(matmul(concat_cols<T>({x, h}), l.w), l.b);
  const Var<T> i = sigmoid(slice_cols(gates, 0, n));
  const Var<T> f = sigmoid(slice_cols(gates, n, 2 * n));
  const Var<T> g = tanh(slice_cols(gates, 2 * n, 3 * n));
  const Var<T> o = sigmoid(slice_cols(gates, 3 * n, 4 * n));
  const Var<T> c2 = add(multiply(f, c), multiply(i, g));
  return {multiply(o, tanh(c2)), c2};
}
}  // namespace detail

template <class T>
struct EncodedVar {
  Var<T> states;  // [sum of lengths x d]
  std::vector<Segment> segments;
};

template <class T>
EncodedVar<T> encode_var(const ModelWeights<T>& w, const std::vector<std::vector<int>>& src,
                         const ForwardOptions& opt = {}) {
  const ModelConfig& cfg = w.cfg;
  if (src.empty()) throw DataError("encode: empty batch");
  for (const auto& s : src)
    if (s.empty()) throw DataError("encode: empty source sentence");
  EncodedVar<T> out;
  Var<T> x = detail::embed_positions(w.src_embed, src, cfg, out.segments);
  x = detail::apply_dropout(x, cfg.dropout, opt);
  for (const auto& l : w.encoder) {
    x = detail::sublayer(x, l.ln_attn, cfg, opt, [&](const Var<T>& h) {
      return detail::attention(l.self_attn, h, out.segments, h, out.segments, cfg.n_heads, false);
    });
    x = detail::sublayer(x, l.ln_ffn, cfg, opt, [&](const Var<T>& h) {
      return detail::feed_forward(h, l.ff1, l.ff2, cfg, opt);
    });
  }
  if (w.encoder_final_ln.gain) x = detail::norm(x, w.encoder_final_ln);
  out.states = x;
  return out;
}

template <class T>
struct DecoderOutput {
  Var<T> logits;  // [rows x local vocab]
  // (sentence, position) of each logits row; (-1, -1) marks padding rows.
  std::vector<std::pair<int, int>> rows;
};

// Teacher-forced decoder pass. `inputs` are local ids starting with the
// decoder start token; logits are over the target side's local vocabulary.
template <class T>
DecoderOutput<T> decode_var(const ModelWeights<T>& w, const TargetSide<T>& ts,
                            const EncodedVar<T>& enc, const std::vector<std::vector<int>>& inputs,
                            const ForwardOptions& opt = {}) {
  const ModelConfig& cfg = w.cfg;
  if (inputs.size() != enc.segments.size())
    throw DimensionError("decode: " + std::to_string(inputs.size()) + " targets for " +
                         std::to_string(enc.segments.size()) + " sources");
  for (const auto& s : inputs)
    if (s.empty()) throw DataError("decode: empty decoder input");
  const DecoderStack<T>& dec = ts.decoder;
  DecoderOutput<T> out;

  if (dec.kind == DecoderKind::kTransformer) {
    std::vector<Segment> segs;
    Var<T> y = detail::embed_positions(ts.embed, inputs, cfg, segs);
    y = detail::apply_dropout(y, cfg.dropout, opt);
    for (const auto& l : dec.layers) {
      y = detail::sublayer(y, l.ln_self, cfg, opt, [&](const Var<T>& h) {
        return detail::attention(l.self_attn, h, segs, h, segs, cfg.n_heads, true);
      });
      y = detail::sublayer(y, l.ln_cross, cfg, opt, [&](const Var<T>& h) {
        return detail::attention(l.cross_attn, h, segs, enc.states, enc.segments, cfg.n_heads,
                                 false);
      });
      y = detail::sublayer(y, l.ln_ffn, cfg, opt, [&](const Var<T>& h) {
        return detail::feed_forward(h, l.ff1, l.ff2, cfg, opt);
      });
    }
    if (dec.final_ln.gain) y = detail::norm(y, dec.final_ln);
    out.logits = matmul(y, ts.embed, true);
    for (std::size_t s = 0; s < inputs.size(); ++s)
      for (std::size_t t = 0; t < inputs[s].size(); ++t)
        out.rows.emplace_back(static_cast<int>(s), static_cast<int>(t));
    return out;
  }

  // Recurrent decoder, time-major over the padded batch.
  const std::size_t b = inputs.size(), d = cfg.d_model;
  std::size_t steps = 0;
  for (const auto& s : inputs) steps = std::max(steps, s.size());
  std::vector<Var<T>> enc_s(b), keys_s(b);
  const Var<T> keys = matmul(enc.states, dec.attn.wk);
  for (std::size_t s = 0; s < b; ++s) {
    const auto& sg = enc.segments[s];
    enc_s[s] = slice_rows(enc.states, sg.offset, sg.offset + sg.length);
    keys_s[s] = slice_rows(keys, sg.offset, sg.offset + sg.length);
  }
  const std::size_t depth = dec.lstm.size();
  std::vector<Var<T>> h(depth), c(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    h[l] = Var<T>::constant(Tensor<T>::zeros(b, d));
    c[l] = Var<T>::constant(Tensor<T>::zeros(b, d));
  }
  std::vector<Var<T>> step_out;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<int> ids(b);
    for (std::size_t s = 0; s < b; ++s) ids[s] = t < inputs[s].size() ? inputs[s][t] : kPad;
    Var<T> x = detail::apply_dropout(embedding(ts.embed, ids), cfg.dropout, opt);
    x = detail::norm(x, dec.lstm[0].ln_in);
    std::tie(h[0], c[0]) = detail::lstm_cell(dec.lstm[0], x, h[0], c[0]);
    const Var<T> q = matmul(h[0], dec.attn.wq);
    std::vector<Var<T>> ctx_rows;
    for (std::size_t s = 0; s < b; ++s) {
      const Var<T> e = tanh(add(keys_s[s], slice_rows(q, s, s + 1)));
      const Var<T> a = softmax(matmul(dec.attn.v, e, true));
      ctx_rows.push_back(matmul(a, enc_s[s]));
    }
    const Var<T> ctx = b == 1 ? ctx_rows[0] : concat_rows(ctx_rows);
    Var<T> below = h[0];
    for (std::size_t l = 1; l < depth; ++l) {
      const Var<T> in = detail::norm(concat_cols<T>({below, ctx}), dec.lstm[l].ln_in);
      std::tie(h[l], c[l]) = detail::lstm_cell(dec.lstm[l], in, h[l], c[l]);
      below = detail::apply_dropout(h[l], cfg.dropout, opt);
    }
    step_out.push_back(add(below, ctx));
    for (std::size_t s = 0; s < b; ++s)
      out.rows.emplace_back(t < inputs[s].size() ? static_cast<int>(s) : -1,
                            t < inputs[s].size() ? static_cast<int>(t) : -1);
  }
  const Var<T> all = step_out.size() == 1 ? step_out[0] : concat_rows(step_out);
  out.logits = matmul(all, ts.embed, true);
  return out;
}

// ---------------------------------------------------------------------------
// Inference: encoder output and incremental decoder state.

template <class T>
struct EncoderOutput {
  Tensor<T> states;               // sentences stacked: [sum of lengths x d]
  std::vector<Segment> segments;  // rows of each sentence; no padding is stored
  std::size_t size() const { return segments.size(); }
  Tensor<T> sentence(std::size_t s) const {
    const auto& sg = segments.at(s);
    const std::size_t d = states.cols();
    return Tensor<T>({sg.length, d},
                     std::vector<T>(states.data() + sg.offset * d,
                                    states.data() + (sg.offset + sg.length) * d));
  }
};

template <class T>
EncoderOutput<T> encode(const ModelWeights<T>& w, const std::vector<std::vector<int>>& src,
                        Profiler* prof = nullptr) {
  ScopedTimer timer(prof, Bucket::kEncoder);
  NoGradGuard no_grad;
  auto e = encode_var(w, src);
  return {e.states.value(), std::move(e.segments)};
}

// Per-source quantities computed once per batch and shared by all hypotheses.
template <class T>
struct SourceCache {
  std::vector<Segment> segments;
  std::vector<Tensor<T>> k, v;  // transformer: per-layer cross-attention keys/values
  Tensor<T> enc;                // recurrent: encoder states
  Tensor<T> keys;               // recurrent: W_k projection of encoder states
  Tensor<T> projection;         // [d x local vocab] transposed output projection
};

template <class T>
struct DecoderState {
  const void* owner = nullptr;  // identifies the target side that built it
  DecoderKind kind = DecoderKind::kTransformer;
  std::size_t step = 0;  // tokens consumed so far
  std::vector<std::size_t> row_sentence;
  std::shared_ptr<const SourceCache<T>> source;
  std::vector<std::vector<std::vector<T>>> self_k, self_v;  // [layer][row]: step x d
  std::vector<Tensor<T>> h, c;                               // [layer]: rows x d
  std::size_t rows() const { return row_sentence.size(); }
};

namespace detail {
template <class T>
Tensor<T> linear_t(const Tensor<T>& x, const Linear<T>& l) {
  Tensor<T> y = kernels::matmul(x, l.w.value());
  if (l.b) kernels::add_row_inplace(y, l.b.value());
  return y;
}
template <class T>
Tensor<T> norm_t(const Tensor<T>& x, const Norm<T>& n) {
  return kernels::layer_norm(x, n.gain.value(), n.bias.value());
}
template <class T>
void add_inplace(Tensor<T>& x, const Tensor<T>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + y[i];
}
// out = softmax(q . keys^T * scale) . values over n keys spaced `stride` apart.
template <class T>
void attend(const T* q, const T* keys, const T* values, std::size_t n, std::size_t stride,
            std::size_t dh, T scale, T* out, std::vector<T>& scratch) {
  scratch.resize(n);
  for (std::size_t j = 0; j < n; ++j) scratch[j] = kernels::dot(q, keys + j * stride, dh) * scale;
  kernels::softmax_row<T>(std::span<const T>(scratch.data(), n), std::span<T>(scratch.data(), n));
  std::fill(out, out + dh, T{0});
  for (std::size_t j = 0; j < n; ++j) {
    const T a = scratch[j];
    const T* vj = values + j * stride;
    for (std::size_t p = 0; p < dh; ++p) out[p] += a * vj[p];
  }
}
inline void check_ids(std::span<const int> ids, std::size_t vocab) {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw DataError("token id " + std::to_string(id) + " outside target vocabulary of " +
                      std::to_string(vocab));
}
template <class T>
void lstm_step(const LstmLayer<T>& l, const Tensor<T>& x, Tensor<T>& h, Tensor<T>& c) {
  const std::size_t rows = x.rows(), in = x.cols(), n = h.cols();
  const Tensor<T>& w = l.w.value();
  Tensor<T> gates({rows, 4 * n});
  kernels::gemm_nn(x.data(), w.data(), gates.data(), rows, in, 4 * n);
  kernels::gemm_nn(h.data(), w.data() + in * 4 * n, gates.data(), rows, n, 4 * n, true);
  kernels::add_row_inplace(gates, l.b.value());
  auto sig = [](T v) { return T{1} / (T{1} + std::exp(-v)); };
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = gates.data() + r * 4 * n;
    T* hr = h.data() + r * n;
    T* cr = c.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T i = sig(g[j]), f = sig(g[n + j]), gg = std::tanh(g[2 * n + j]),
              o = sig(g[3 * n + j]);
      const T fc = f * cr[j], ig = i * gg;
      cr[j] = fc + ig;
      hr[j] = o * std::tanh(cr[j]);
    }
  }
}
}  // namespace detail

// Fresh state for rows decoding the sentences named by `row_sentence`.
template <class T>
DecoderState<T> init_state(const ModelWeights<T>& w, const TargetSide<T>& ts,
                           const EncoderOutput<T>& enc, std::vector<std::size_t> row_sentence) {
  for (auto s : row_sentence)
    if (s >= enc.size()) throw DimensionError("init_state: row refers to a missing sentence");
  const DecoderStack<T>& dec = ts.decoder;
  auto src = std::make_shared<SourceCache<T>>();
  src->segments = enc.segments;
  {
    const Tensor<T>& e = ts.embed.value();
    const std::size_t v = e.rows(), d = e.cols();
    src->projection = Tensor<T>({d, v});
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < d; ++j) src->projection(j, i) = e(i, j);
  }
  DecoderState<T> st;
  st.owner = ts.embed.node();
  st.kind = dec.kind;
  st.row_sentence = std::move(row_sentence);
  const std::size_t rows = st.rows(), d = w.cfg.d_model;
  if (dec.kind == DecoderKind::kTransformer) {
    for (const auto& l : dec.layers) {
      src->k.push_back(detail::linear_t(enc.states, l.cross_attn.k));
      src->v.push_back(detail::linear_t(enc.states, l.cross_attn.v));
    }
    st.self_k.assign(dec.layers.size(), std::vector<std::vector<T>>(rows));
    st.self_v.assign(dec.layers.size(), std::vector<std::vector<T>>(rows));
  } else {
    src->enc = enc.states;
    src->keys = kernels::matmul(enc.states, dec.attn.wk.value());
    st.h.assign(dec.lstm.size(), Tensor<T>::zeros(rows, d));
    st.c.assign(dec.lstm.size(), Tensor<T>::zeros(rows, d));
  }
  st.source = std::move(src);
  return st;
}

// Consumes one token per row and returns next-token logits over the target
// side's local vocabulary. Profiler buckets: self-attention or recurrence,
// cross-attention and the output projection.
template <class T>
Tensor<T> decode_step(const ModelWeights<T>& w, const TargetSide<T>& ts, DecoderState<T>& st,
                      std::span<const int> prev, Profiler* prof = nullptr) {
  if (st.owner != ts.embed.node() || st.kind != ts.decoder.kind)
    throw ContractError("decoder state was built for a different decoder");
  if (prev.size() != st.rows())
    throw DimensionError("decode_step: " + std::to_string(prev.size()) + " tokens for " +
                         std::to_string(st.rows()) + " rows");
  detail::check_ids(prev, ts.size());
  const ModelConfig& cfg = w.cfg;
  const DecoderStack<T>& dec = ts.decoder;
  const SourceCache<T>& src = *st.source;
  const std::size_t rows = st.rows(), d = cfg.d_model;
  std::vector<T> scratch;
  Tensor<T> x;

  if (dec.kind == DecoderKind::kTransformer) {
    if (st.step >= cfg.max_positions)
      throw DataError("decoder exceeded max_positions " + std::to_string(cfg.max_positions));
    const std::size_t heads = cfg.n_heads, dh = d / heads;
    const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const T emb_scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
    x = kernels::gather_rows(ts.embed.value(), prev);
    std::vector<T> pos(d);
    sinusoid<T>(st.step, pos);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) x(r, j) = x(r, j) * emb_scale + pos[j];
    const bool pre = cfg.norm_placement == NormPlacement::kPre;
    const std::size_t n_keys = st.step + 1;
    for (std::size_t li = 0; li < dec.layers.size(); ++li) {
      const auto& l = dec.layers[li];
      {
        ScopedTimer timer(prof, Bucket::kSelfAttnOrRnn);
        const Tensor<T> h = pre ? detail::norm_t(x, l.ln_self) : x;
        const Tensor<T> q = detail::linear_t(h, l.self_attn.q);
        const Tensor<T> k = detail::linear_t(h, l.self_attn.k);
        const Tensor<T> v = detail::linear_t(h, l.self_attn.v);
        Tensor<T> a({rows, d});
        for (std::size_t r = 0; r < rows; ++r) {
          auto& kc = st.self_k[li][r];
          auto& vc = st.self_v[li][r];
          kc.insert(kc.end(), k.data() + r * d, k.data() + (r + 1) * d);
          vc.insert(vc.end(), v.data() + r * d, v.data() + (r + 1) * d);
          for (std::size_t hh = 0; hh < heads; ++hh)
            detail::attend(q.data() + r * d + hh * dh, kc.data() + hh * dh, vc.data() + hh * dh,
                           n_keys, d, dh, sc, a.data() + r * d + hh * dh, scratch);
        }
        detail::add_inplace(x, detail::linear_t(a, l.self_attn.o));
        if (!pre) x = detail::norm_t(x, l.ln_self);
      }
      {
        ScopedTimer timer(prof, Bucket::kCrossAttn);
        const Tensor<T> h = pre ? detail::norm_t(x, l.ln_cross) : x;
        const Tensor<T> q = detail::linear_t(h, l.cross_attn.q);
        Tensor<T> a({rows, d});
        for (std::size_t r = 0; r < rows; ++r) {
          const Segment& sg = src.segments[st.row_sentence[r]];
          const T* kb = src.k[li].data() + sg.offset * d;
          const T* vb = src.v[li].data() + sg.offset * d;
          for (std::size_t hh = 0; hh < heads; ++hh)
            detail::attend(q.data() + r * d + hh * dh, kb + hh * dh, vb + hh * dh, sg.length, d,
                           dh, sc, a.data() + r * d + hh * dh, scratch);
        }
        detail::add_inplace(x, detail::linear_t(a, l.cross_attn.o));
        if (!pre) x = detail::norm_t(x, l.ln_cross);
      }
      const Tensor<T> h = pre ? detail::norm_t(x, l.ln_ffn) : x;
      Tensor<T> f = detail::linear_t(h, l.ff1);
      for (auto& v : f.values()) v = v > T{0} ? v : T{0};
      detail::add_inplace(x, detail::linear_t(f, l.ff2));
      if (!pre) x = detail::norm_t(x, l.ln_ffn);
    }
    if (dec.final_ln.gain) x = detail::norm_t(x, dec.final_ln);
  } else {
    Tensor<T> ctx({rows, d});
    {
      ScopedTimer timer(prof, Bucket::kSelfAttnOrRnn);
      const Tensor<T> e = detail::norm_t(kernels::gather_rows(ts.embed.value(), prev),
                                         dec.lstm[0].ln_in);
      detail::lstm_step(dec.lstm[0], e, st.h[0], st.c[0]);
    }
    {
      ScopedTimer timer(prof, Bucket::kCrossAttn);
      const Tensor<T> q = kernels::matmul(st.h[0], dec.attn.wq.value());
      const T* v = dec.attn.v.value().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const Segment& sg = src.segments[st.row_sentence[r]];
        scratch.resize(sg.length);
        const T* qr = q.data() + r * d;
        for (std::size_t j = 0; j < sg.length; ++j) {
          const T* kj = src.keys.data() + (sg.offset + j) * d;
          T acc = 0;
          for (std::size_t p = 0; p < d; ++p) acc += v[p] * std::tanh(kj[p] + qr[p]);
          scratch[j] = acc;
        }
        kernels::softmax_row<T>(std::span<const T>(scratch), std::span<T>(scratch));
        T* cr = ctx.data() + r * d;
        for (std::size_t j = 0; j < sg.length; ++j) {
          const T* ej = src.enc.data() + (sg.offset + j) * d;
          for (std::size_t p = 0; p < d; ++p) cr[p] += scratch[j] * ej[p];
        }
      }
    }
    {
      ScopedTimer timer(prof, Bucket::kSelfAttnOrRnn);
      for (std::size_t l = 1; l < dec.lstm.size(); ++l) {
        Tensor<T> in({rows, 2 * d});
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(st.h[l - 1].data() + r * d, d, in.data() + r * 2 * d);
          std::copy_n(ctx.data() + r * d, d, in.data() + r * 2 * d + d);
        }
        detail::lstm_step(dec.lstm[l], detail::norm_t(in, dec.lstm[l].ln_in), st.h[l], st.c[l]);
      }
    }
    x = st.h.back();
    detail::add_inplace(x, ctx);
  }
  ++st.step;
  ScopedTimer timer(prof, Bucket::kSoftmax);
  return kernels::matmul(x, src.projection);
}

// Keeps row parent[i] of the old state as row i of the new one.
template <class T>
void reorder_state(DecoderState<T>& st, std::span<const std::size_t> parent) {
  for (auto p : parent)
    if (p >= st.rows()) throw DimensionError("reorder_state: parent row out of range");
  std::vector<std::size_t> rs;
  for (auto p : parent) rs.push_back(st.row_sentence[p]);
  auto pick = [&](std::vector<std::vector<T>>& layer) {
    std::vector<std::vector<T>> next;
    next.reserve(parent.size());
    for (auto p : parent) next.push_back(layer[p]);
    layer = std::move(next);
  };
  for (auto& l : st.self_k) pick(l);
  for (auto& l : st.self_v) pick(l);
  auto pick_rows = [&](Tensor<T>& t) {
    const std::size_t d = t.cols();
    Tensor<T> next({parent.size(), d});
    for (std::size_t i = 0; i < parent.size(); ++i)
      std::copy_n(t.data() + parent[i] * d, d, next.data() + i * d);
    t = std::move(next);
  };
  for (auto& t : st.h) pick_rows(t);
  for (auto& t : st.c) pick_rows(t);
  st.row_sentence = std::move(rs);
}

}  // namespace lightnmt
