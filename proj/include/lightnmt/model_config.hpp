#pragma once

#include <cstddef>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lightnmt/error.hpp"

namespace lightnmt {

enum class NormPlacement { kPre, kPost };
enum class DecoderKind { kTransformer, kRecurrent };

inline std::string to_string(NormPlacement n) { return n == NormPlacement::kPre ? "pre" : "post"; }
inline std::string to_string(DecoderKind k) {
  return k == DecoderKind::kTransformer ? "transformer" : "recurrent";
}
inline NormPlacement parse_norm_placement(const std::string& s) {
  if (s == "pre") return NormPlacement::kPre;
  if (s == "post") return NormPlacement::kPost;
  throw ConfigError("norm_placement must be pre or post, got '" + s + "'");
}
inline DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "transformer") return DecoderKind::kTransformer;
  if (s == "recurrent" || s == "hybrid") return DecoderKind::kRecurrent;
  throw ConfigError("decoder_kind must be transformer or recurrent, got '" + s + "'");
}

struct ModelConfig {
  std::size_t enc_layers = 6;
  std::size_t dec_layers = 6;
  std::size_t d_model = 512;
  std::size_t ffn_dim = 2048;
  std::size_t n_heads = 8;
  NormPlacement norm_placement = NormPlacement::kPost;
  DecoderKind decoder_kind = DecoderKind::kTransformer;
  bool share_all_embeddings = true;
  double dropout = 0.1;             // embeddings and residual branches
  double activation_dropout = 0.0;  // after the feed-forward ReLU
  std::size_t vocab_size = 0;
  std::vector<std::string> languages;
  bool multi_decoder = false;  // one decoder and target embedding per language
  std::size_t max_positions = 256;

  static ModelConfig base(std::size_t vocab) {
    ModelConfig c;
    c.vocab_size = vocab;
    return c;
  }
  static ModelConfig big(std::size_t vocab) {
    ModelConfig c;
    c.d_model = 1024;
    c.ffn_dim = 4096;
    c.n_heads = 16;
    c.dropout = 0.3;
    c.vocab_size = vocab;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (enc_layers < 1) fail("enc_layers must be >= 1");
    if (dec_layers < 1) fail("dec_layers must be >= 1");
    if (d_model < 4 || d_model % 2) fail("d_model must be even and >= 4");
    if (n_heads < 1 || d_model % n_heads) fail("d_model must be divisible by n_heads");
    if (ffn_dim < 1) fail("ffn_dim must be >= 1");
    if (vocab_size < 4) fail("vocab_size must cover the special tokens");
    if (!(dropout >= 0 && dropout < 1)) fail("dropout must be in [0, 1)");
    if (!(activation_dropout >= 0 && activation_dropout < 1))
      fail("activation_dropout must be in [0, 1)");
    if (max_positions < 1) fail("max_positions must be >= 1");
    if (multi_decoder && languages.empty()) fail("multi_decoder needs a language list");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"d_model", c.d_model},
                     {"ffn_dim", c.ffn_dim},
                     {"n_heads", c.n_heads},
                     {"norm_placement", to_string(c.norm_placement)},
                     {"decoder_kind", to_string(c.decoder_kind)},
                     {"share_all_embeddings", c.share_all_embeddings},
                     {"dropout", c.dropout},
                     {"activation_dropout", c.activation_dropout},
                     {"vocab_size", c.vocab_size},
                     {"languages", c.languages},
                     {"multi_decoder", c.multi_decoder},
                     {"max_positions", c.max_positions}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "enc_layers") c.enc_layers = v.get<std::size_t>();
      else if (k == "dec_layers") c.dec_layers = v.get<std::size_t>();
      else if (k == "d_model") c.d_model = v.get<std::size_t>();
      else if (k == "ffn_dim") c.ffn_dim = v.get<std::size_t>();
      else if (k == "n_heads") c.n_heads = v.get<std::size_t>();
      else if (k == "norm_placement") c.norm_placement = parse_norm_placement(v.get<std::string>());
      else if (k == "decoder_kind") c.decoder_kind = parse_decoder_kind(v.get<std::string>());
      else if (k == "share_all_embeddings") c.share_all_embeddings = v.get<bool>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "activation_dropout") c.activation_dropout = v.get<double>();
      else if (k == "vocab_size") c.vocab_size = v.get<std::size_t>();
      else if (k == "languages") c.languages = v.get<std::vector<std::string>>();
      else if (k == "multi_decoder") c.multi_decoder = v.get<bool>();
      else if (k == "max_positions") c.max_positions = v.get<std::size_t>();
      else throw ConfigError("unknown model config key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config key '" + k + "': " + e.what());
    }
  }
}

struct ParamCount {
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t embedding = 0;
  std::size_t non_embedding() const { return encoder + decoder; }
  std::size_t total() const { return encoder + decoder + embedding; }
  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

namespace detail {
inline std::size_t encoder_layer_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_dim;
  return 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d);
}
inline std::size_t transformer_decoder_layer_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_dim;
  return 8 * (d * d + d) + (d * f + f) + (f * d + d) + 3 * (2 * d);
}
// Layer 0 reads the normalized embedding; higher layers read [h; context].
inline std::size_t recurrent_layer_params(const ModelConfig& c, std::size_t layer) {
  const std::size_t h = c.d_model, in = layer == 0 ? c.d_model : 2 * c.d_model;
  return 2 * in + (in + h) * 4 * h + 4 * h;
}
inline std::size_t decoder_stack_params(const ModelConfig& c) {
  std::size_t n = 0;
  if (c.decoder_kind == DecoderKind::kTransformer) {
    n = c.dec_layers * transformer_decoder_layer_params(c);
    if (c.norm_placement == NormPlacement::kPre) n += 2 * c.d_model;
  } else {
    for (std::size_t l = 0; l < c.dec_layers; ++l) n += recurrent_layer_params(c, l);
    n += 2 * c.d_model * c.d_model + c.d_model;  // additive attention
  }
  return n;
}
}  // namespace detail

// Parameter count implied by a configuration, without allocating anything.
// `target_vocab_sizes` gives the per-language target vocabulary for
// multi-decoder models (defaults to the full vocabulary for each language).
inline ParamCount count_params(const ModelConfig& c,
                               const std::map<std::string, std::size_t>& target_vocab_sizes = {}) {
  c.validate();
  ParamCount p;
  p.encoder = c.enc_layers * detail::encoder_layer_params(c);
  if (c.norm_placement == NormPlacement::kPre) p.encoder += 2 * c.d_model;
  p.embedding = c.vocab_size * c.d_model;
  if (c.multi_decoder) {
    for (const auto& lang : c.languages) {
      auto it = target_vocab_sizes.find(lang);
      const std::size_t v = it == target_vocab_sizes.end() ? c.vocab_size : it->second;
      p.decoder += detail::decoder_stack_params(c);
      p.embedding += v * c.d_model;
    }
  } else {
    p.decoder = detail::decoder_stack_params(c);
    if (!c.share_all_embeddings) p.embedding += c.vocab_size * c.d_model;
  }
  return p;
}

}  // namespace lightnmt
