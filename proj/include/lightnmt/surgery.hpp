#pragma once

#include <map>
#include <string>

#include "lightnmt/model.hpp"

// Initialization of new model families from trained parents. Every operation
// returns fresh storage; parents are never modified.

namespace lightnmt {

enum class DuplicationOrder {
  kAdjacent,  // 0,0,1,1,...,n-1,n-1
  kBlock      // 0,1,...,n-1,0,1,...,n-1
};

inline DuplicationOrder parse_duplication_order(const std::string& s) {
  if (s == "adjacent") return DuplicationOrder::kAdjacent;
  if (s == "block") return DuplicationOrder::kBlock;
  throw ConfigError("duplication order must be adjacent or block, got '" + s + "'");
}

namespace detail {
template <class T>
Var<T> clone(const Var<T>& v) {
  return v ? Var<T>::parameter(v.value()) : Var<T>();
}
template <class T>
Linear<T> clone(const Linear<T>& l) {
  return {clone(l.w), clone(l.b)};
}
template <class T>
Norm<T> clone(const Norm<T>& n) {
  return {clone(n.gain), clone(n.bias)};
}
template <class T>
Attention<T> clone(const Attention<T>& a) {
  return {clone(a.q), clone(a.k), clone(a.v), clone(a.o)};
}
template <class T>
EncoderLayer<T> clone(const EncoderLayer<T>& l) {
  return {clone(l.self_attn), clone(l.ln_attn), clone(l.ff1), clone(l.ff2), clone(l.ln_ffn)};
}
template <class T>
DecoderLayer<T> clone(const DecoderLayer<T>& l) {
  return {clone(l.self_attn), clone(l.ln_self), clone(l.cross_attn), clone(l.ln_cross),
          clone(l.ff1),       clone(l.ff2),     clone(l.ln_ffn)};
}
template <class T>
DecoderStack<T> clone(const DecoderStack<T>& s, std::size_t layers) {
  DecoderStack<T> out;
  out.kind = s.kind;
  for (std::size_t i = 0; i < layers && i < s.layers.size(); ++i) out.layers.push_back(clone(s.layers[i]));
  out.final_ln = clone(s.final_ln);
  for (std::size_t i = 0; i < layers && i < s.lstm.size(); ++i)
    out.lstm.push_back({clone(s.lstm[i].ln_in), clone(s.lstm[i].w), clone(s.lstm[i].b)});
  out.attn = {clone(s.attn.wq), clone(s.attn.wk), clone(s.attn.v)};
  return out;
}
template <class T>
DecoderStack<T> clone(const DecoderStack<T>& s) {
  return clone(s, s.depth());
}
// Source embedding and encoder copied into `out`.
template <class T>
void copy_encoder_side(const ModelWeights<T>& from, ModelWeights<T>& out) {
  out.src_embed = clone(from.src_embed);
  out.encoder.clear();
  for (const auto& l : from.encoder) out.encoder.push_back(clone(l));
  out.encoder_final_ln = clone(from.encoder_final_ln);
}
// Target embedding of a single-decoder parent, keeping source sharing intact.
template <class T>
Var<T> copy_target_embed(const ModelWeights<T>& from, const ModelWeights<T>& out) {
  const TargetSide<T>& t = from.targets.at(0);
  return t.embed == from.src_embed ? out.src_embed : clone(t.embed);
}
template <class T>
void require_single_decoder(const ModelWeights<T>& w, const char* op) {
  if (w.cfg.multi_decoder || w.targets.size() != 1)
    throw ConfigError(std::string(op) + ": parent must have a single shared decoder");
  if (w.targets[0].filtered())
    throw ConfigError(std::string(op) + ": parent target vocabulary must be unfiltered");
}
}  // namespace detail

// Full deep copy, preserving which matrices are shared.
template <class T>
ModelWeights<T> clone_model(const ModelWeights<T>& w) {
  ModelWeights<T> out;
  out.cfg = w.cfg;
  detail::copy_encoder_side(w, out);
  for (const auto& t : w.targets) {
    TargetSide<T> c = t;
    c.decoder = detail::clone(t.decoder);
    c.embed = t.embed == w.src_embed ? out.src_embed : detail::clone(t.embed);
    out.targets.push_back(std::move(c));
  }
  return out;
}

// Deep-encoder/shallow-decoder model from a trained Transformer: the encoder
// stack is duplicated up to `enc_layers` and the bottom `dec_layers` decoder
// layers are kept.
template <class T>
ModelWeights<T> init_deep_shallow(const ModelWeights<T>& parent, std::size_t enc_layers = 12,
                                  std::size_t dec_layers = 2,
                                  DuplicationOrder order = DuplicationOrder::kAdjacent) {
  detail::require_single_decoder(parent, "init_deep_shallow");
  if (parent.cfg.decoder_kind != DecoderKind::kTransformer)
    throw ConfigError("init_deep_shallow: parent decoder must be a Transformer");
  const std::size_t n = parent.encoder.size();
  if (enc_layers < n || enc_layers % n != 0)
    throw ConfigError("init_deep_shallow: " + std::to_string(enc_layers) +
                      " encoder layers is not a multiple of the parent's " + std::to_string(n));
  if (dec_layers < 1 || dec_layers > parent.targets[0].decoder.layers.size())
    throw ConfigError("init_deep_shallow: parent has only " +
                      std::to_string(parent.targets[0].decoder.layers.size()) + " decoder layers");
  const std::size_t factor = enc_layers / n;
  ModelWeights<T> out;
  out.cfg = parent.cfg;
  out.cfg.enc_layers = enc_layers;
  out.cfg.dec_layers = dec_layers;
  out.src_embed = detail::clone(parent.src_embed);
  for (std::size_t i = 0; i < enc_layers; ++i) {
    const std::size_t from = order == DuplicationOrder::kAdjacent ? i / factor : i % n;
    out.encoder.push_back(detail::clone(parent.encoder[from]));
  }
  out.encoder_final_ln = detail::clone(parent.encoder_final_ln);
  TargetSide<T> t;
  t.decoder = detail::clone(parent.targets[0].decoder, dec_layers);
  t.embed = detail::copy_target_embed(parent, out);
  out.targets.push_back(std::move(t));
  return out;
}

// Transformer encoder (and embeddings) from `parent` under a freshly
// initialized recurrent decoder of `dec_layers` layers.
template <class T, class Rng>
ModelWeights<T> init_hybrid(const ModelWeights<T>& parent, std::size_t dec_layers, Rng& rng) {
  detail::require_single_decoder(parent, "init_hybrid");
  ModelWeights<T> out;
  out.cfg = parent.cfg;
  out.cfg.decoder_kind = DecoderKind::kRecurrent;
  out.cfg.dec_layers = dec_layers;
  out.cfg.validate();
  detail::copy_encoder_side(parent, out);
  TargetSide<T> t;
  t.decoder = build_decoder_stack<T>(out.cfg, rng);
  t.embed = detail::copy_target_embed(parent, out);
  out.targets.push_back(std::move(t));
  return out;
}

// One copy of the parent's decoder per configured language, each with its
// own target embedding made of the parent's rows for that language's
// vocabulary.
template <class T>
ModelWeights<T> init_multi_decoder(const ModelWeights<T>& parent,
                                   const std::map<std::string, LangVocab>& vocabs) {
  detail::require_single_decoder(parent, "init_multi_decoder");
  if (parent.cfg.languages.empty())
    throw ConfigError("init_multi_decoder: parent config lists no languages");
  ModelWeights<T> out;
  out.cfg = parent.cfg;
  out.cfg.multi_decoder = true;
  detail::copy_encoder_side(parent, out);
  const TargetSide<T>& pt = parent.targets[0];
  const Tensor<T>& table = pt.embed.value();
  const std::size_t d = table.cols();
  for (const auto& lang : parent.cfg.languages) {
    auto it = vocabs.find(lang);
    if (it == vocabs.end())
      throw ConfigError("init_multi_decoder: no vocabulary for language '" + lang + "'");
    const LangVocab& lv = it->second;
    if (lv.global_size() != parent.cfg.vocab_size)
      throw ConfigError("init_multi_decoder: vocabulary for '" + lang +
                        "' does not match the model vocabulary");
    TargetSide<T> t;
    t.language = lang;
    t.decoder = detail::clone(pt.decoder);
    Tensor<T> rows({lv.size(), d});
    for (std::size_t j = 0; j < lv.size(); ++j)
      std::copy_n(table.data() + static_cast<std::size_t>(lv.to_global(static_cast<int>(j))) * d,
                  d, rows.data() + j * d);
    t.embed = Var<T>::parameter(std::move(rows));
    t.set_vocab(lv.filtered_to_global(), parent.cfg.vocab_size);
    out.targets.push_back(std::move(t));
  }
  return out;
}

// Inference view whose target side only scores `vocab`'s tokens. All other
// storage, including the source embedding, is shared with `w`.
template <class T>
ModelWeights<T> filter_target_vocab(const ModelWeights<T>& w, const LangVocab& vocab) {
  if (vocab.global_size() != w.cfg.vocab_size)
    throw ConfigError("filter_target_vocab: vocabulary size " +
                      std::to_string(vocab.global_size()) + " does not match model vocabulary " +
                      std::to_string(w.cfg.vocab_size));
  ModelWeights<T> out = w;
  TargetSide<T>& ts = w.cfg.multi_decoder ? out.target_for(vocab.language()) : out.targets.at(0);
  const Tensor<T>& table = ts.embed.value();
  const std::size_t d = table.cols();
  Tensor<T> rows({vocab.size(), d});
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    const int g = vocab.to_global(static_cast<int>(j));
    const int local = ts.to_local(g);
    if (local < 0)
      throw DataError("filter_target_vocab: token " + std::to_string(g) +
                      " is not in the decoder's vocabulary");
    std::copy_n(table.data() + static_cast<std::size_t>(local) * d, d, rows.data() + j * d);
  }
  ts.embed = Var<T>::constant(std::move(rows));
  ts.set_vocab(vocab.filtered_to_global(), w.cfg.vocab_size);
  return out;
}

}  // namespace lightnmt
