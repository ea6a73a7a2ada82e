// Command-line front end. Every subcommand writes a run manifest (JSON) next
// to its primary output, or to --manifest when given.

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lightnmt/bench.hpp"
#include "lightnmt/checkpoint.hpp"
#include "lightnmt/corpus.hpp"
#include "lightnmt/decoding.hpp"
#include "lightnmt/metrics.hpp"
#include "lightnmt/subword.hpp"
#include "lightnmt/surgery.hpp"
#include "lightnmt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lightnmt;

namespace {

constexpr const char* kToolVersion = "lightnmt 0.1.0";

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

// ---------------------------------------------------------------------------
// Run bookkeeping

struct Run {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json result = json::object();
  std::vector<std::string> inputs, outputs;
  std::uint64_t seed = 1;
  std::size_t threads_requested = 1;
  std::size_t threads = 1;
  std::string manifest_path;

  void input(const std::string& p) {
    if (!p.empty()) inputs.push_back(p);
  }
  void output(const std::string& p) {
    if (!p.empty()) outputs.push_back(p);
  }
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void emit_manifest(const Run& r, double wall, int status, const std::string& error,
                   const std::string& started) {
  json m{{"command", r.command},
         {"argv", r.argv},
         {"config", r.config},
         {"seed", r.seed},
         {"threads", {{"requested", r.threads_requested}, {"effective", r.threads}}},
         {"inputs", r.inputs},
         {"outputs", r.outputs},
         {"tool_version", kToolVersion},
         {"started_at", started},
         {"wall_time_seconds", wall},
         {"exit_status", status},
         {"result", r.result}};
  if (!error.empty()) m["error"] = error;
  std::string path = r.manifest_path;
  if (path.empty() && !r.outputs.empty()) path = r.outputs.front() + ".manifest.json";
  if (path.empty()) {
    std::cerr << m.dump() << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) {
    std::cerr << "warning: cannot write manifest " << path << '\n';
    return;
  }
  out << m.dump(2) << '\n';
}

// Layered configuration: defaults, then a JSON config file, then the flags
// that were given explicitly on the command line.
class Layers {
 public:
  template <class V>
  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& pointer, V& storage,
                    const std::string& help) {
    auto* o = app->add_option(name, storage, help);
    items_.push_back({o, [&storage, pointer](json& j) { j[json::json_pointer(pointer)] = storage; }});
    return o;
  }
  CLI::Option* switch_flag(CLI::App* app, const std::string& name, const std::string& pointer,
                           bool& storage, const std::string& help) {
    auto* o = app->add_flag(name, storage, help);
    items_.push_back({o, [&storage, pointer](json& j) { j[json::json_pointer(pointer)] = storage; }});
    return o;
  }

  json resolve(json defaults, const std::string& config_path) const {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw DataError("cannot read config " + config_path);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config " + config_path + ": " + e.what());
      }
      if (!file.is_object()) throw ConfigError("config " + config_path + " must be a JSON object");
      for (const auto& [k, v] : file.items())
        if (!defaults.contains(k)) throw ConfigError("unknown config section '" + k + "'");
      defaults.merge_patch(file);
    }
    for (const auto& [o, apply] : items_)
      if (o->count() > 0) apply(defaults);
    return defaults;
  }

 private:
  std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> items_;
};

// ---------------------------------------------------------------------------
// Shared parsing helpers

LangCodePosition parse_lang_code(const std::string& s) {
  if (s == "encoder") return LangCodePosition::kEncoder;
  if (s == "decoder") return LangCodePosition::kDecoder;
  if (s == "none") return LangCodePosition::kNone;
  throw ConfigError("lang code position must be encoder, decoder or none, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// "lang=path" pairs.
std::map<std::string, std::string> parse_assignments(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& it : items) {
    const auto eq = it.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == it.size())
      throw ConfigError("expected LANG=PATH, got '" + it + "'");
    out[it.substr(0, eq)] = it.substr(eq + 1);
  }
  return out;
}

std::map<std::string, LangVocab> load_lang_vocabs(const std::vector<std::string>& items,
                                                  std::size_t global_size, Run& run) {
  std::map<std::string, LangVocab> out;
  for (const auto& [lang, path] : parse_assignments(items)) {
    run.input(path);
    auto lv = load_lang_vocab(path, global_size);
    if (lv.language() != lang)
      throw DataError(path + " is a vocabulary for '" + lv.language() + "', not '" + lang + "'");
    out.emplace(lang, std::move(lv));
  }
  return out;
}

ModelConfig model_from_json(const json& effective, std::size_t vocab,
                            const std::vector<std::string>& languages) {
  const std::string arch = effective.at("arch").get<std::string>();
  ModelConfig cfg;
  if (arch == "base") {
    cfg = ModelConfig::base(vocab);
  } else if (arch == "big") {
    cfg = ModelConfig::big(vocab);
  } else if (arch == "tiny") {
    cfg = ModelConfig::base(vocab);
    cfg.enc_layers = cfg.dec_layers = 2;
    cfg.d_model = 64;
    cfg.ffn_dim = 128;
    cfg.n_heads = 4;
  } else {
    throw ConfigError("arch must be base, big or tiny, got '" + arch + "'");
  }
  from_json(effective.at("model"), cfg);
  cfg.vocab_size = vocab;
  cfg.languages = languages;
  cfg.validate();
  return cfg;
}

void decode_config_to_json(json& j, const DecodeConfig& d) {
  j = json{{"beam", d.beam_size},
           {"batch", d.batch_size},
           {"max_len", d.max_len},
           {"length_penalty", d.length_penalty},
           {"sort_by_length", d.sort_by_length}};
}

DecodeConfig decode_config_from_json(const json& j) {
  DecodeConfig d;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "beam") d.beam_size = v.get<std::size_t>();
      else if (k == "batch") d.batch_size = v.get<std::size_t>();
      else if (k == "max_len") d.max_len = v.get<std::size_t>();
      else if (k == "length_penalty") d.length_penalty = v.get<double>();
      else if (k == "sort_by_length") d.sort_by_length = v.get<bool>();
      else throw ConfigError("unknown decode config key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("decode config key '" + k + "': " + e.what());
    }
  }
  d.validate();
  return d;
}

json default_decode_json() {
  json j;
  decode_config_to_json(j, DecodeConfig{});
  return j;
}

// Every line of a corpus directory, each side once.
std::vector<std::string> corpus_lines(const MultiCorpus& c, const std::string& lang = "") {
  std::vector<std::string> out;
  for (const auto& p : c.all_pairs())
    if (lang.empty() || p.src_lang == lang) out.push_back(p.src);
  return out;
}

// The `lang` side of one pair: the pair with the pivot when there is one,
// otherwise the largest. Other pairs would count the same sentences again.
std::vector<std::string> monolingual_lines(const MultiCorpus& c, const std::string& lang) {
  std::optional<LanguagePair> best;
  for (const auto& d : c.directions()) {
    if (d.first != lang) continue;
    if (d.second == kEnglish) {
      best = d;
      break;
    }
    if (!best || c.size(d) > c.size(*best)) best = d;
  }
  std::vector<std::string> out;
  if (best)
    for (const auto& [s, t] : c.lines(*best)) out.push_back(s);
  return out;
}

void write_freq_table(const FreqTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "# " << t.language << '\n';
  for (const auto& [tok, n] : t.wordpiece_counts) out << "wordpiece\t" << tok << '\t' << n << '\n';
  for (const auto& [c, n] : t.char_counts) out << "char\t" << c << '\t' << n << '\n';
}

FreqTable read_freq_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  FreqTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.starts_with("# ")) {
      t.language = line.substr(2);
      continue;
    }
    const auto a = line.find('\t'), b = line.rfind('\t');
    if (a == std::string::npos || a == b)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected kind<TAB>token<TAB>count");
    const std::string kind = line.substr(0, a), tok = line.substr(a + 1, b - a - 1);
    std::size_t n = 0;
    try {
      n = std::stoull(line.substr(b + 1));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad count");
    }
    if (kind == "wordpiece") t.wordpiece_counts[tok] = n;
    else if (kind == "char") t.char_counts[tok] = n;
    else throw DataError(path + ":" + std::to_string(lineno) + ": unknown kind '" + kind + "'");
  }
  if (t.language.empty()) throw DataError(path + ": missing language header");
  return t;
}

// ---------------------------------------------------------------------------
// Subcommand options

struct Global {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string manifest;
};

struct BpeFiles {
  std::string merges, vocab;
  void add(CLI::App* app) {
    app->add_option("--merges", merges, "BPE merge list")->required();
    app->add_option("--vocab", vocab, "BPE vocabulary")->required();
  }
  BpeModel load(Run& run) const {
    run.input(merges);
    run.input(vocab);
    return load_bpe(merges, vocab);
  }
};

struct TrainFlags {
  std::string arch = "base";
  std::size_t enc_layers = 0, dec_layers = 0, d_model = 0, ffn_dim = 0, n_heads = 0;
  std::string norm, decoder_kind;
  double peak_lr = 0, warmup_init_lr = 0, label_smoothing = 0, clip_norm = 0, dropout = 0;
  std::size_t warmup = 0, max_updates = 0, max_tokens = 0, checkpoint_every = 0;
  bool freeze_encoder = false;
  double temperature = 5;
  std::string sampling = "auto";
  std::size_t samples = 0;
  std::string lang_code = "encoder";

  void add(CLI::App* app, Layers& L, bool with_model) {
    if (with_model) {
      L.flag(app, "--arch", "/arch", arch, "base, big or tiny preset");
      L.flag(app, "--enc-layers", "/model/enc_layers", enc_layers, "encoder layers");
      L.flag(app, "--dec-layers", "/model/dec_layers", dec_layers, "decoder layers");
      L.flag(app, "--d-model", "/model/d_model", d_model, "model width");
      L.flag(app, "--ffn-dim", "/model/ffn_dim", ffn_dim, "feed-forward width");
      L.flag(app, "--heads", "/model/n_heads", n_heads, "attention heads");
      L.flag(app, "--norm", "/model/norm_placement", norm, "pre or post");
      L.flag(app, "--decoder-kind", "/model/decoder_kind", decoder_kind, "transformer or recurrent");
    }
    L.flag(app, "--lr", "/train/peak_lr", peak_lr, "peak learning rate");
    L.flag(app, "--warmup-init-lr", "/train/warmup_init_lr", warmup_init_lr, "learning rate at step 0");
    L.flag(app, "--warmup", "/train/warmup_updates", warmup, "warmup updates");
    L.flag(app, "--max-updates", "/train/max_updates", max_updates, "updates to run");
    L.flag(app, "--max-tokens", "/train/max_tokens", max_tokens, "padded tokens per batch");
    L.flag(app, "--label-smoothing", "/train/label_smoothing", label_smoothing, "label smoothing");
    L.flag(app, "--clip-norm", "/train/clip_norm", clip_norm, "gradient clip norm (0 = off)");
    L.flag(app, "--dropout", "/train/dropout", dropout, "dropout");
    L.flag(app, "--checkpoint-every", "/train/checkpoint_every", checkpoint_every,
           "write OUTPUT.step<N> every N updates (0 = off)");
    L.switch_flag(app, "--freeze-encoder", "/train/freeze_encoder", freeze_encoder,
                  "keep encoder-side parameters fixed");
    L.flag(app, "--temperature", "/sampling/temperature", temperature, "sampling temperature");
    L.flag(app, "--sampling", "/sampling/mode", sampling, "english-centric, all or auto");
    L.flag(app, "--samples", "/sampling/samples", samples, "sampled pairs (0 = corpus size)");
    L.flag(app, "--lang-code", "/lang_code", lang_code, "encoder, decoder or none");
  }
};

json train_defaults() {
  json train;
  to_json(train, TrainConfig{});
  return json{{"arch", "base"},
              {"model", json::object()},
              {"train", train},
              {"sampling", {{"temperature", 5.0}, {"mode", "auto"}, {"samples", 0}}},
              {"lang_code", "encoder"}};
}

// Temperature-sampled training pairs for one run.
std::vector<SentencePair> sampled_pairs(const MultiCorpus& corpus, const json& eff, std::uint64_t seed) {
  SamplingConfig sc;
  sc.temperature = eff.at(json::json_pointer("/sampling/temperature")).get<double>();
  const std::string mode = eff.at(json::json_pointer("/sampling/mode")).get<std::string>();
  if (mode == "english-centric") {
    sc.english_centric = true;
  } else if (mode == "all") {
    sc.english_centric = false;
  } else if (mode == "auto") {
    sc.english_centric = true;
    for (const auto& [a, b] : corpus.directions())
      if (a != sc.pivot && b != sc.pivot) sc.english_centric = false;
  } else {
    throw ConfigError("sampling mode must be english-centric, all or auto, got '" + mode + "'");
  }
  std::size_t n = eff.at(json::json_pointer("/sampling/samples")).get<std::size_t>();
  if (n == 0) n = corpus.total_pairs();
  if (n == 0) throw DataError("corpus is empty");
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  return sample_pairs(corpus, sc, n, rng);
}

void progress(const StepStats& s, std::size_t total) {
  if (s.step == 1 || s.step % 100 == 0 || s.step == total)
    std::cerr << "update " << s.step << " loss " << s.loss << " lr " << s.lr << '\n';
}

json summarize_log(const std::vector<StepStats>& log) {
  if (log.empty()) return json::object();
  return {{"updates", log.back().step}, {"first_loss", log.front().loss}, {"last_loss", log.back().loss}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual NMT toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Global g;
  app.add_option("--seed", g.seed, "seed for every stochastic step")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--manifest", g.manifest, "run manifest path (default: <output>.manifest.json)");

  Run run;
  run.argv.assign(argv, argv + argc);
  std::function<void()> action;

  // learn-bpe --------------------------------------------------------------
  struct {
    std::vector<std::string> inputs;
    std::string corpus, merges_out, vocab_out, langs;
    std::size_t merges = 8000, min_freq = 2;
  } lb;
  auto* c_lb = app.add_subcommand("learn-bpe", "learn joint BPE merges");
  c_lb->add_option("--input", lb.inputs, "text files");
  c_lb->add_option("--corpus", lb.corpus, "corpus directory");
  c_lb->add_option("--merges", lb.merges, "number of merges")->capture_default_str();
  c_lb->add_option("--min-freq", lb.min_freq, "minimum pair frequency")->capture_default_str();
  c_lb->add_option("--langs", lb.langs, "comma-separated language codes (default: corpus languages)");
  c_lb->add_option("--merges-out", lb.merges_out, "merge list output")->required();
  c_lb->add_option("--vocab-out", lb.vocab_out, "vocabulary output")->required();
  c_lb->callback([&] {
    action = [&] {
      if (lb.inputs.empty() && lb.corpus.empty()) throw ConfigError("learn-bpe needs --input or --corpus");
      std::vector<std::string> lines;
      std::vector<std::string> langs = split_list(lb.langs);
      for (const auto& f : lb.inputs) {
        run.input(f);
        auto l = read_lines(f);
        lines.insert(lines.end(), l.begin(), l.end());
      }
      if (!lb.corpus.empty()) {
        run.input(lb.corpus);
        const auto c = load_corpus_dir(lb.corpus);
        auto l = corpus_lines(c);
        lines.insert(lines.end(), l.begin(), l.end());
        if (langs.empty()) langs = c.languages();
      }
      run.config = {{"merges", lb.merges}, {"min_freq", lb.min_freq}, {"languages", langs}};
      const auto bpe = learn_bpe(lines, lb.merges, langs, lb.min_freq);
      save_merges(bpe, lb.merges_out);
      save_vocab(bpe, lb.vocab_out);
      run.output(lb.merges_out);
      run.output(lb.vocab_out);
      run.result = {{"merges", bpe.merges().size()}, {"vocab_size", bpe.vocab_size()}};
    };
  });

  // apply-bpe --------------------------------------------------------------
  struct {
    BpeFiles bpe;
    std::string input, output, lang_vocab;
  } ab;
  auto* c_ab = app.add_subcommand("apply-bpe", "segment text into subwords");
  ab.bpe.add(c_ab);
  c_ab->add_option("--input", ab.input, "text file")->required();
  c_ab->add_option("--output", ab.output, "segmented output")->required();
  c_ab->add_option("--lang-vocab", ab.lang_vocab, "restrict segmentation to this vocabulary");
  c_ab->callback([&] {
    action = [&] {
      const auto bpe = ab.bpe.load(run);
      run.input(ab.input);
      std::optional<LangVocab> lv;
      if (!ab.lang_vocab.empty()) {
        run.input(ab.lang_vocab);
        lv = load_lang_vocab(ab.lang_vocab, bpe.vocab_size());
      }
      run.config = {{"constrained", lv.has_value()}};
      std::vector<std::string> out;
      for (const auto& line : read_lines(ab.input)) {
        const auto toks = lv ? apply_bpe_constrained_line(bpe, line, *lv) : apply_bpe_line(bpe, line);
        std::string s;
        for (const auto& t : toks) s += (s.empty() ? "" : " ") + t;
        out.push_back(std::move(s));
      }
      write_lines(ab.output, out);
      run.output(ab.output);
      run.result = {{"lines", out.size()}};
    };
  });

  // count-freqs ------------------------------------------------------------
  struct {
    BpeFiles bpe;
    std::vector<std::string> inputs;
    std::string corpus, lang, output;
  } cf;
  auto* c_cf = app.add_subcommand("count-freqs", "count wordpiece and character frequencies");
  cf.bpe.add(c_cf);
  c_cf->add_option("--input", cf.inputs, "monolingual text files");
  c_cf->add_option("--corpus", cf.corpus, "corpus directory (uses the --lang side)");
  c_cf->add_option("--lang", cf.lang, "language code")->required();
  c_cf->add_option("--output", cf.output, "frequency table (TSV)")->required();
  c_cf->callback([&] {
    action = [&] {
      if (cf.inputs.empty() && cf.corpus.empty()) throw ConfigError("count-freqs needs --input or --corpus");
      const auto bpe = cf.bpe.load(run);
      std::vector<std::string> lines;
      for (const auto& f : cf.inputs) {
        run.input(f);
        auto l = read_lines(f);
        lines.insert(lines.end(), l.begin(), l.end());
      }
      if (!cf.corpus.empty()) {
        run.input(cf.corpus);
        auto l = monolingual_lines(load_corpus_dir(cf.corpus), cf.lang);
        if (l.empty()) throw DataError("corpus has no text in '" + cf.lang + "'");
        lines.insert(lines.end(), l.begin(), l.end());
      }
      run.config = {{"lang", cf.lang}};
      const auto t = count_frequencies(bpe, lines, cf.lang);
      write_freq_table(t, cf.output);
      run.output(cf.output);
      run.result = {{"wordpieces", t.wordpiece_counts.size()}, {"characters", t.char_counts.size()}};
    };
  });

  // build-vocab ------------------------------------------------------------
  struct {
    BpeFiles bpe;
    std::string freqs, output;
    std::size_t min_freq = 1, max_wordpieces = 0;
  } bv;
  auto* c_bv = app.add_subcommand("build-vocab", "build a per-language filtered vocabulary");
  bv.bpe.add(c_bv);
  c_bv->add_option("--freqs", bv.freqs, "frequency table from count-freqs")->required();
  c_bv->add_option("--min-freq", bv.min_freq, "K: minimum frequency")->capture_default_str();
  c_bv->add_option("--max-wordpieces", bv.max_wordpieces, "N: wordpieces kept (0 = all)");
  c_bv->add_option("--output", bv.output, "language vocabulary")->required();
  c_bv->callback([&] {
    action = [&] {
      const auto bpe = bv.bpe.load(run);
      run.input(bv.freqs);
      const auto t = read_freq_table(bv.freqs);
      run.config = {{"min_freq", bv.min_freq}, {"max_wordpieces", bv.max_wordpieces}, {"lang", t.language}};
      const auto lv = build_lang_vocab(bpe, t, bv.min_freq,
                                       bv.max_wordpieces ? std::optional(bv.max_wordpieces) : std::nullopt);
      save_lang_vocab(lv, bv.output);
      run.output(bv.output);
      run.result = {{"size", lv.size()}, {"global_size", lv.global_size()}};
    };
  });

  // filter-model -----------------------------------------------------------
  struct {
    std::string model, lang_vocab, output;
  } fm;
  auto* c_fm = app.add_subcommand("filter-model", "restrict a model's output vocabulary");
  c_fm->add_option("--model", fm.model, "model or checkpoint")->required();
  c_fm->add_option("--lang-vocab", fm.lang_vocab, "language vocabulary")->required();
  c_fm->add_option("--output", fm.output, "filtered model")->required();
  c_fm->callback([&] {
    action = [&] {
      run.input(fm.model);
      run.input(fm.lang_vocab);
      const auto w = load_checkpoint<double>(fm.model).weights;
      const auto lv = load_lang_vocab(fm.lang_vocab, w.cfg.vocab_size);
      run.config = {{"lang", lv.language()}};
      save_model(fm.output, filter_target_vocab(w, lv));
      run.output(fm.output);
      run.result = {{"kept", lv.size()}, {"global_size", lv.global_size()}};
    };
  });

  // make-multiparallel -----------------------------------------------------
  struct {
    std::string corpus, output, pivot = kEnglish;
  } mp;
  auto* c_mp = app.add_subcommand("make-multiparallel", "join pivot-centric data into all directions");
  c_mp->add_option("--corpus", mp.corpus, "pivot-centric corpus directory")->required();
  c_mp->add_option("--output", mp.output, "output corpus directory")->required();
  c_mp->add_option("--pivot", mp.pivot, "pivot language")->capture_default_str();
  c_mp->callback([&] {
    action = [&] {
      run.input(mp.corpus);
      run.config = {{"pivot", mp.pivot}};
      const auto out = build_multiparallel(load_corpus_dir(mp.corpus), mp.pivot);
      save_corpus_dir(out, mp.output);
      run.output(mp.output);
      run.result = {{"directions", out.directions().size()}, {"pairs", out.total_pairs()}};
    };
  });

  // synth-corpus -----------------------------------------------------------
  struct {
    std::string output, langs = "en,fr,de";
    SyntheticSpec spec;
  } sc;
  auto* c_sc = app.add_subcommand("synth-corpus", "generate a synthetic pivot-centric corpus");
  c_sc->add_option("--output", sc.output, "corpus directory")->required();
  c_sc->add_option("--langs", sc.langs, "languages, pivot first")->capture_default_str();
  c_sc->add_option("--lines", sc.spec.lines, "pivot sentence pool size")->capture_default_str();
  c_sc->add_option("--coverage", sc.spec.coverage, "share of the pool per language")->capture_default_str();
  c_sc->add_option("--lexicon", sc.spec.lexicon, "pivot lexicon size")->capture_default_str();
  c_sc->add_option("--min-words", sc.spec.min_words, "shortest sentence")->capture_default_str();
  c_sc->add_option("--max-words", sc.spec.max_words, "longest sentence")->capture_default_str();
  c_sc->callback([&] {
    action = [&] {
      sc.spec.languages = split_list(sc.langs);
      if (sc.spec.languages.size() < 2) throw ConfigError("synth-corpus needs at least two languages");
      if (sc.spec.min_words < 1 || sc.spec.min_words > sc.spec.max_words)
        throw ConfigError("need 1 <= min-words <= max-words");
      sc.spec.seed = g.seed;
      run.config = {{"languages", sc.spec.languages}, {"lines", sc.spec.lines},
                    {"coverage", sc.spec.coverage},   {"lexicon", sc.spec.lexicon},
                    {"min_words", sc.spec.min_words}, {"max_words", sc.spec.max_words}};
      const auto c = make_synthetic_corpus(sc.spec);
      save_corpus_dir(c, sc.output);
      run.output(sc.output);
      run.result = {{"pairs", c.total_pairs()}, {"directions", c.directions().size()}};
    };
  });

  // train ------------------------------------------------------------------
  Layers tl;
  struct {
    BpeFiles bpe;
    std::string corpus, output, config, log, init;
    std::vector<std::string> constrained;
    TrainFlags flags;
  } tr;
  auto* c_tr = app.add_subcommand("train", "train a model from scratch or continue a checkpoint");
  tr.bpe.add(c_tr);
  c_tr->add_option("--corpus", tr.corpus, "corpus directory")->required();
  c_tr->add_option("--output", tr.output, "checkpoint output")->required();
  c_tr->add_option("--config", tr.config, "JSON config (sections: arch, model, train, sampling, lang_code)");
  c_tr->add_option("--log", tr.log, "per-update TSV log");
  c_tr->add_option("--init", tr.init, "continue from this checkpoint");
  c_tr->add_option("--constrained-vocab", tr.constrained, "LANG=PATH: constrained BPE for that target");
  tr.flags.add(c_tr, tl, true);
  c_tr->callback([&] {
    action = [&] {
      const auto bpe = tr.bpe.load(run);
      run.input(tr.corpus);
      if (!tr.config.empty()) run.input(tr.config);
      json eff = tl.resolve(train_defaults(), tr.config);
      eff["train"]["seed"] = g.seed;
      TrainConfig cfg = eff.at("train").get<TrainConfig>();
      cfg.validate();
      const auto corpus = load_corpus_dir(tr.corpus);
      const auto pos = parse_lang_code(eff.at("lang_code").get<std::string>());
      const auto vocabs = load_lang_vocabs(tr.constrained, bpe.vocab_size(), run);
      const auto data = make_examples(bpe, sampled_pairs(corpus, eff, g.seed), pos,
                                      vocabs.empty() ? nullptr : &vocabs);
      ModelWeights<float> w;
      AdamState<float> state;
      if (!tr.init.empty()) {
        run.input(tr.init);
        auto ck = load_checkpoint<float>(tr.init);
        w = std::move(ck.weights);
        if (ck.state) state = std::move(*ck.state);
        if (w.cfg.vocab_size != bpe.vocab_size()) throw DataError("checkpoint vocabulary does not match --vocab");
        eff["model"] = w.cfg;
      } else {
        std::mt19937_64 rng(g.seed);
        w = build_model<float>(model_from_json(eff, bpe.vocab_size(), corpus.languages()), rng);
        eff["model"] = w.cfg;
      }
      run.config = eff;
      Trainer<float> trainer(w, cfg, std::move(state));
      const auto log = train_loop(trainer, data, w.cfg.multi_decoder,
                                  [&](const StepStats& s, const std::vector<Example>&) {
                                    progress(s, cfg.max_updates);
                                    if (cfg.checkpoint_every == 0 || s.step % cfg.checkpoint_every != 0) return;
                                    const std::string path = tr.output + ".step" + std::to_string(s.step);
                                    save_checkpoint(path, w, trainer.state(), trainer.config());
                                    run.output(path);
                                  });
      save_checkpoint(tr.output, w, trainer.state(), trainer.config());
      run.outputs.insert(run.outputs.begin(), tr.output);
      if (!tr.log.empty()) {
        write_run_log(tr.log, log);
        run.output(tr.log);
      }
      run.result = summarize_log(log);
      run.result["examples"] = data.size();
    };
  });

  // finetune ---------------------------------------------------------------
  Layers fl;
  struct {
    BpeFiles bpe;
    std::string parent, workflow, corpus, output, config, log;
    std::vector<std::string> vocabs;
    std::size_t hybrid_layers = 2;
    bool lr_reset = false;
    TrainFlags flags;
  } ft;
  auto* c_ft = app.add_subcommand("finetune", "fine-tune a parent checkpoint");
  ft.bpe.add(c_ft);
  c_ft->add_option("--parent", ft.parent, "parent checkpoint")->required();
  c_ft->add_option("--workflow", ft.workflow, "multiparallel, multidecoder or hybrid")->required();
  c_ft->add_option("--corpus", ft.corpus, "corpus directory")->required();
  c_ft->add_option("--output", ft.output, "checkpoint output")->required();
  c_ft->add_option("--config", ft.config, "JSON config");
  c_ft->add_option("--log", ft.log, "per-update TSV log");
  c_ft->add_option("--lang-vocab", ft.vocabs, "LANG=PATH: decoder vocabulary (multidecoder)");
  c_ft->add_option("--hybrid-layers", ft.hybrid_layers, "recurrent decoder layers")->capture_default_str();
  fl.flag(c_ft, "--lr-reset", "/train/lr_reset", ft.lr_reset, "restart the schedule (true/false)");
  ft.flags.add(c_ft, fl, false);
  c_ft->callback([&] {
    action = [&] {
      const auto bpe = ft.bpe.load(run);
      run.input(ft.parent);
      run.input(ft.corpus);
      if (!ft.config.empty()) run.input(ft.config);
      json eff = fl.resolve(train_defaults(), ft.config);
      eff["train"]["seed"] = g.seed;
      eff["workflow"] = ft.workflow;
      TrainConfig cfg = eff.at("train").get<TrainConfig>();
      FinetuneSpec spec;
      spec.workflow = parse_workflow(ft.workflow);
      spec.hybrid_layers = ft.hybrid_layers;
      auto ck = load_checkpoint<float>(ft.parent);
      if (ck.weights.cfg.vocab_size != bpe.vocab_size())
        throw DataError("parent vocabulary does not match --vocab");
      if (spec.workflow == Workflow::kMultidecoder) {
        spec.vocabs = load_lang_vocabs(ft.vocabs, bpe.vocab_size(), run);
        for (const auto& l : ck.weights.cfg.languages)
          if (!spec.vocabs.count(l)) spec.vocabs.emplace(l, full_lang_vocab(bpe, l));
      }
      const auto corpus = load_corpus_dir(ft.corpus);
      const auto pos = parse_lang_code(eff.at("lang_code").get<std::string>());
      const auto data = make_examples(bpe, sampled_pairs(corpus, eff, g.seed), pos);
      eff.erase("arch");
      eff.erase("model");
      const auto r = finetune(ck.weights, ck.state ? &*ck.state : nullptr, spec, data, cfg,
                              [&](const StepStats& s, const std::vector<Example>&) { progress(s, cfg.max_updates); });
      eff["train"]["lr_reset"] = r.lr_reset;
      eff["model"] = r.weights.cfg;
      run.config = eff;
      save_checkpoint(ft.output, r.weights, r.state, cfg);
      run.output(ft.output);
      if (!ft.log.empty()) {
        write_run_log(ft.log, r.log);
        run.output(ft.log);
      }
      run.result = summarize_log(r.log);
      run.result["lr_reset"] = r.lr_reset;
    };
  });

  // surgery ----------------------------------------------------------------
  auto* c_su = app.add_subcommand("surgery", "derive a new model from a trained one");
  c_su->require_subcommand(1);
  struct {
    std::string model, output, order = "adjacent";
    std::size_t enc_layers = 12, dec_layers = 2;
    std::vector<std::string> vocabs;
    std::string merges, vocab;
  } su;
  auto* c_ds = c_su->add_subcommand("deep-shallow", "duplicate encoder layers, keep bottom decoder layers");
  auto* c_hy = c_su->add_subcommand("hybrid", "keep the encoder, add a fresh recurrent decoder");
  auto* c_md = c_su->add_subcommand("multi-decoder", "one decoder per target language");
  for (auto* c : {c_ds, c_hy, c_md}) {
    c->add_option("--model", su.model, "parent model or checkpoint")->required();
    c->add_option("--output", su.output, "new model")->required();
  }
  c_ds->add_option("--enc-layers", su.enc_layers, "encoder layers")->capture_default_str();
  c_ds->add_option("--dec-layers", su.dec_layers, "decoder layers kept")->capture_default_str();
  c_ds->add_option("--order", su.order, "adjacent or block duplication")->capture_default_str();
  c_hy->add_option("--dec-layers", su.dec_layers, "recurrent decoder layers")->capture_default_str();
  c_md->add_option("--lang-vocab", su.vocabs, "LANG=PATH: decoder vocabulary (default: full)");
  auto surgery = [&](const std::string& kind) {
    action = [&, kind] {
      run.command = "surgery " + kind;
      run.input(su.model);
      const auto parent = load_checkpoint<double>(su.model).weights;
      ModelWeights<double> out;
      if (kind == "deep-shallow") {
        run.config = {{"enc_layers", su.enc_layers}, {"dec_layers", su.dec_layers}, {"order", su.order}};
        out = init_deep_shallow(parent, su.enc_layers, su.dec_layers, parse_duplication_order(su.order));
      } else if (kind == "hybrid") {
        run.config = {{"dec_layers", su.dec_layers}};
        std::mt19937_64 rng(g.seed);
        out = init_hybrid(parent, su.dec_layers, rng);
      } else {
        auto vocabs = load_lang_vocabs(su.vocabs, parent.cfg.vocab_size, run);
        for (const auto& l : parent.cfg.languages) {
          if (vocabs.count(l)) continue;
          std::vector<int> all(parent.cfg.vocab_size);
          std::iota(all.begin(), all.end(), 0);
          vocabs.emplace(l, LangVocab(l, std::move(all), parent.cfg.vocab_size));
        }
        json sizes = json::object();
        for (const auto& [l, v] : vocabs) sizes[l] = v.size();
        run.config = {{"vocab_sizes", sizes}};
        out = init_multi_decoder(parent, vocabs);
      }
      save_model(su.output, out);
      run.output(su.output);
      const auto pc = count_params(out);
      run.result = {{"config", out.cfg}, {"params", {{"encoder", pc.encoder}, {"decoder", pc.decoder}, {"embedding", pc.embedding}}}};
    };
  };
  c_ds->callback([&] { surgery("deep-shallow"); });
  c_hy->callback([&] { surgery("hybrid"); });
  c_md->callback([&] { surgery("multi-decoder"); });

  // translate / benchmark share model loading and decoding flags -----------
  struct DecodeFlags {
    BpeFiles bpe;
    std::string model, input, output, config, tgt_lang, src_lang, lang_vocab, lang_code = "encoder";
    std::string pivot_lang = kEnglish;
    bool pivot = false, no_sort = false;
    std::size_t beam = 5, batch = 64, max_len = 256;
    double lenpen = 1.0;
    std::string precision = "float";
  };
  auto add_decode_flags = [](CLI::App* c, DecodeFlags& d, Layers& L) {
    d.bpe.add(c);
    c->add_option("--model", d.model, "model or checkpoint")->required();
    c->add_option("--input", d.input, "source text, one sentence per line")->required();
    c->add_option("--tgt-lang", d.tgt_lang, "target language")->required();
    c->add_option("--src-lang", d.src_lang, "source language (needed with --pivot)");
    c->add_option("--lang-vocab", d.lang_vocab, "filter the output vocabulary");
    c->add_option("--config", d.config, "JSON config (sections: decode, lang_code)");
    c->add_option("--precision", d.precision, "float or double")->capture_default_str();
    L.flag(c, "--lang-code", "/lang_code", d.lang_code, "encoder, decoder or none");
    L.flag(c, "--beam", "/decode/beam", d.beam, "beam size");
    L.flag(c, "--batch", "/decode/batch", d.batch, "sentences per batch");
    L.flag(c, "--max-len", "/decode/max_len", d.max_len, "maximum output tokens, EOS included");
    L.flag(c, "--lenpen", "/decode/length_penalty", d.lenpen, "length penalty exponent");
  };
  auto decode_setup = [&](DecodeFlags& d, const Layers& L, const BpeModel& bpe) {
    run.input(d.model);
    run.input(d.input);
    if (!d.config.empty()) run.input(d.config);
    json eff = L.resolve(json{{"decode", default_decode_json()}, {"lang_code", "encoder"}}, d.config);
    if (d.no_sort) eff["decode"]["sort_by_length"] = false;
    DecodeConfig dc = decode_config_from_json(eff.at("decode"));
    if (!d.lang_vocab.empty()) {
      run.input(d.lang_vocab);
      dc.lang_vocab = load_lang_vocab(d.lang_vocab, bpe.vocab_size());
      if (dc.lang_vocab->language() != d.tgt_lang)
        throw DataError(d.lang_vocab + " is a vocabulary for '" + dc.lang_vocab->language() + "'");
    }
    dc.tgt_lang = d.tgt_lang;
    eff["tgt_lang"] = d.tgt_lang;
    eff["src_lang"] = d.src_lang;
    eff["lang_vocab"] = d.lang_vocab;
    eff["precision"] = d.precision;
    if (d.precision != "float" && d.precision != "double")
      throw ConfigError("precision must be float or double");
    run.config = eff;
    return std::pair{dc, parse_lang_code(eff.at("lang_code").get<std::string>())};
  };

  Layers xl;
  DecodeFlags tx;
  auto* c_tx = app.add_subcommand("translate", "translate a text file");
  add_decode_flags(c_tx, tx, xl);
  c_tx->add_option("--output", tx.output, "translations")->required();
  c_tx->add_flag("--pivot", tx.pivot, "translate through the pivot language");
  c_tx->add_option("--pivot-lang", tx.pivot_lang, "pivot language")->capture_default_str();
  c_tx->add_flag("--no-sort", tx.no_sort, "keep input order inside batches");
  c_tx->callback([&] {
    action = [&] {
      const auto bpe = tx.bpe.load(run);
      auto [dc, pos] = decode_setup(tx, xl, bpe);
      run.config["pivot"] = tx.pivot ? json(tx.pivot_lang) : json();
      if (tx.pivot && tx.src_lang.empty()) throw ConfigError("--pivot needs --src-lang");
      const auto lines = read_lines(tx.input);
      auto go = [&](auto tag) {
        using T = decltype(tag);
        const auto w = load_checkpoint<T>(tx.model).weights;
        if (w.cfg.vocab_size != bpe.vocab_size()) throw DataError("model vocabulary does not match --vocab");
        return tx.pivot ? translate_pivot(w, bpe, lines, tx.src_lang, tx.tgt_lang, pos, dc, nullptr, tx.pivot_lang)
                        : translate_lines(w, bpe, lines, tx.tgt_lang, pos, dc);
      };
      const auto r = tx.precision == "double" ? go(double{}) : go(float{});
      write_lines(tx.output, r.lines);
      run.output(tx.output);
      std::vector<std::size_t> flagged;
      for (std::size_t i = 0; i < r.flagged.size(); ++i)
        if (r.flagged[i]) flagged.push_back(i + 1);
      run.result = {{"lines", r.lines.size()}, {"flagged_lines", flagged}};
    };
  });

  // benchmark --------------------------------------------------------------
  auto* c_bm = app.add_subcommand("benchmark", "measure decoding speed");
  c_bm->require_subcommand(1);
  Layers bl;
  DecodeFlags bd;
  std::string bench_out;
  std::size_t repeats = 3;
  auto* c_wps = c_bm->add_subcommand("wps", "words per second over repeated runs");
  auto* c_prof = c_bm->add_subcommand("profile", "per-component decoding time");
  for (auto* c : {c_wps, c_prof}) {
    add_decode_flags(c, bd, bl);
    c->add_option("--output", bench_out, "JSON report")->required();
    c->add_flag("--no-sort", bd.no_sort, "keep input order inside batches");
  }
  c_wps->add_option("--repeats", repeats, "timed runs")->capture_default_str();
  auto bench = [&](const std::string& kind) {
    action = [&, kind] {
      run.command = "benchmark " + kind;
      run.threads = 1;  // timings are taken single-threaded
      const auto bpe = bd.bpe.load(run);
      auto [dc, pos] = decode_setup(bd, bl, bpe);
      const auto lines = read_lines(bd.input);
      auto go = [&](auto tag) -> json {
        using T = decltype(tag);
        const auto w = load_checkpoint<T>(bd.model).weights;
        if (w.cfg.vocab_size != bpe.vocab_size()) throw DataError("model vocabulary does not match --vocab");
        if (kind == "wps") {
          const auto r = measure_wps([&] { return translate_lines(w, bpe, lines, bd.tgt_lang, pos, dc).lines; }, repeats);
          return {{"wps", r.wps}, {"seconds", r.seconds}, {"words", r.words},
                  {"mean_wps", r.undefined ? json() : json(r.mean_wps)}, {"undefined", r.undefined},
                  {"config", {{"beam", dc.beam_size}, {"batch", dc.batch_size}}}};
        }
        std::vector<std::vector<int>> srcs;
        for (const auto& l : lines) {
          auto coded = insert_language_code(bpe, to_ids(bpe, apply_bpe_line(bpe, l)), bd.tgt_lang, pos);
          if (coded.src.size() == (pos == LangCodePosition::kEncoder ? 1u : 0u)) continue;
          dc.start_token = coded.decoder_start;
          srcs.push_back(std::move(coded.src));
        }
        return json(profile(w, srcs, dc, &bpe));
      };
      const json report = bd.precision == "double" ? go(double{}) : go(float{});
      std::ofstream out(bench_out);
      if (!out) throw DataError("cannot write " + bench_out);
      out << report.dump(2) << '\n';
      run.output(bench_out);
      run.result = report;
    };
  };
  c_wps->callback([&] { bench("wps"); });
  c_prof->callback([&] { bench("profile"); });

  // noise ------------------------------------------------------------------
  auto* c_no = app.add_subcommand("noise", "inject synthetic noise into a text file");
  c_no->require_subcommand(1);
  struct {
    std::string input, output;
    std::size_t ops = 3;
  } no;
  auto* c_unk = c_no->add_subcommand("unk", "insert one unknown character per line");
  auto* c_chr = c_no->add_subcommand("char", "apply random character edits per line");
  for (auto* c : {c_unk, c_chr}) {
    c->add_option("--input", no.input, "clean text")->required();
    c->add_option("--output", no.output, "noised text (ops log: OUTPUT.ops.tsv)")->required();
  }
  c_chr->add_option("--ops", no.ops, "edits per line")->capture_default_str();
  auto noise = [&](const std::string& kind) {
    action = [&, kind] {
      run.command = "noise " + kind;
      run.input(no.input);
      run.config = kind == "char" ? json{{"ops", no.ops}} : json::object();
      std::mt19937_64 rng(g.seed);
      std::vector<std::string> out;
      const std::string log_path = no.output + ".ops.tsv";
      std::ofstream log(log_path);
      if (!log) throw DataError("cannot write " + log_path);
      log << "line\top\tposition\tcharacter\n";
      std::size_t n_ops = 0, lineno = 0;
      for (const auto& line : read_lines(no.input)) {
        ++lineno;
        if (line.empty()) {
          out.push_back(line);
          continue;
        }
        const auto r = kind == "unk" ? noise_unk(line, rng) : noise_char(line, no.ops, rng);
        for (const auto& op : r.ops)
          log << lineno << '\t' << noise_kind_name(op.kind) << '\t' << op.position << '\t' << op.character << '\n';
        n_ops += r.ops.size();
        out.push_back(r.text);
      }
      write_lines(no.output, out);
      run.output(no.output);
      run.output(log_path);
      run.result = {{"lines", out.size()}, {"ops", n_ops}};
    };
  };
  c_unk->callback([&] { noise("unk"); });
  c_chr->callback([&] { noise("char"); });

  // score ------------------------------------------------------------------
  auto* c_so = app.add_subcommand("score", "score translations");
  c_so->require_subcommand(1);
  struct {
    std::string hyp, ref, clean, noisy, output, tokenize = "none", smoothing = "exp", src_lang, tgt_lang;
  } so;
  auto* c_bleu = c_so->add_subcommand("bleu", "corpus BLEU");
  auto* c_chrf = c_so->add_subcommand("chrf", "character n-gram F-score");
  auto* c_cons = c_so->add_subcommand("consistency", "BLEU of noisy-input output against clean-input output");
  for (auto* c : {c_bleu, c_chrf}) {
    c->add_option("--hyp", so.hyp, "hypotheses")->required();
    c->add_option("--ref", so.ref, "references")->required();
  }
  c_cons->add_option("--clean", so.clean, "translations of clean input")->required();
  c_cons->add_option("--noisy", so.noisy, "translations of noisy input")->required();
  for (auto* c : {c_bleu, c_chrf, c_cons}) {
    c->add_option("--output", so.output, "TSV row: src, tgt, metric, value");
    c->add_option("--src-lang", so.src_lang, "direction label (source)");
    c->add_option("--tgt-lang", so.tgt_lang, "direction label (target)");
  }
  for (auto* c : {c_bleu, c_cons}) {
    c->add_option("--tokenize", so.tokenize, "none or intl")->capture_default_str();
    c->add_option("--smoothing", so.smoothing, "exp or none")->capture_default_str();
  }
  auto score = [&](const std::string& kind) {
    action = [&, kind] {
      run.command = "score " + kind;
      json detail;
      double value = 0;
      if (kind == "consistency") {
        run.input(so.clean);
        run.input(so.noisy);
        run.config = {{"tokenize", so.tokenize}, {"smoothing", so.smoothing}};
        const auto c = bleu_consistency(read_lines(so.clean), read_lines(so.noisy),
                                        parse_bleu_tokenize(so.tokenize), parse_bleu_smoothing(so.smoothing));
        value = c.value;
        detail = {{"value", c.value}, {"reverse", c.reverse}};
      } else {
        run.input(so.hyp);
        run.input(so.ref);
        const auto hyps = read_lines(so.hyp), refs = read_lines(so.ref);
        if (kind == "bleu") {
          run.config = {{"tokenize", so.tokenize}, {"smoothing", so.smoothing}};
          const auto b = bleu(hyps, refs, parse_bleu_tokenize(so.tokenize), parse_bleu_smoothing(so.smoothing));
          value = b.score;
          detail = {{"score", b.score},   {"precisions", b.precisions}, {"brevity_penalty", b.brevity_penalty},
                    {"hyp_len", b.hyp_len}, {"ref_len", b.ref_len}};
        } else {
          run.config = {{"order", 6}, {"beta", 2}};
          const auto c = chrf(hyps, refs);
          value = c.score;
          detail = {{"score", c.score}, {"precision", c.precision}, {"recall", c.recall},
                    {"effective_order", c.effective_order}};
        }
      }
      std::cout << kind << '\t' << value << '\n';
      if (!so.output.empty()) {
        std::ofstream out(so.output);
        if (!out) throw DataError("cannot write " + so.output);
        out << so.src_lang << '\t' << so.tgt_lang << '\t' << kind << '\t' << value << '\n';
        run.output(so.output);
      }
      run.result = detail;
    };
  };
  c_bleu->callback([&] { score("bleu"); });
  c_chrf->callback([&] { score("chrf"); });
  c_cons->callback([&] { score("consistency"); });

  // scoreboard -------------------------------------------------------------
  struct {
    std::vector<std::string> scores;
    std::string output, metric = "bleu", pivot = kEnglish;
  } sb;
  auto* c_sb = app.add_subcommand("scoreboard", "average scores into pivot groups");
  c_sb->add_option("--scores", sb.scores, "TSV files written by score --output")->required();
  c_sb->add_option("--metric", sb.metric, "metric to aggregate")->capture_default_str();
  c_sb->add_option("--pivot", sb.pivot, "pivot language")->capture_default_str();
  c_sb->add_option("--output", sb.output, "TSV scoreboard")->required();
  c_sb->callback([&] {
    action = [&] {
      run.config = {{"metric", sb.metric}, {"pivot", sb.pivot}};
      std::map<LanguagePair, double> by_dir;
      for (const auto& f : sb.scores) {
        run.input(f);
        std::size_t lineno = 0;
        for (const auto& line : read_lines(f)) {
          ++lineno;
          if (line.empty()) continue;
          std::vector<std::string> cols;
          std::stringstream ss(line);
          for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
          if (cols.size() != 4)
            throw DataError(f + ":" + std::to_string(lineno) + ": expected src, tgt, metric, value");
          if (cols[2] != sb.metric) continue;
          if (cols[0].empty() || cols[1].empty())
            throw DataError(f + ":" + std::to_string(lineno) + ": score has no direction labels");
          try {
            by_dir[{cols[0], cols[1]}] = std::stod(cols[3]);
          } catch (const std::exception&) {
            throw DataError(f + ":" + std::to_string(lineno) + ": bad value");
          }
        }
      }
      if (by_dir.empty()) throw DataError("no '" + sb.metric + "' scores found");
      const auto b = make_scoreboard(by_dir, sb.pivot);
      std::ofstream out(sb.output);
      if (!out) throw DataError("cannot write " + sb.output);
      out << "group\tdirections\t" << sb.metric << '\n';
      out << "to_" << sb.pivot << '\t' << b.n_to << '\t' << b.to_pivot << '\n';
      out << "from_" << sb.pivot << '\t' << b.n_from << '\t' << b.from_pivot << '\n';
      out << "non_" << sb.pivot << '\t' << b.n_non << '\t' << b.non_pivot << '\n';
      run.output(sb.output);
      run.result = {{"to_pivot", b.to_pivot},     {"from_pivot", b.from_pivot}, {"non_pivot", b.non_pivot},
                    {"n_to", b.n_to},             {"n_from", b.n_from},         {"n_non", b.n_non}};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  for (const auto* sub : app.get_subcommands()) {
    if (run.command.empty()) run.command = sub->get_name();
  }
  run.seed = g.seed;
  run.threads_requested = g.threads;
  run.threads = 1;  // kernels are single-threaded
  run.manifest_path = g.manifest;

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  int status = kOk;
  std::string error;
  try {
    if (!action) throw ConfigError("no action selected");
    action();
  } catch (const ConfigError& e) {
    status = kUsage;
    error = e.what();
  } catch (const NumericalError& e) {
    status = kNumerical;
    error = e.what();
  } catch (const DataError& e) {
    status = kData;
    error = e.what();
  } catch (const DimensionError& e) {
    status = kData;
    error = e.what();
  } catch (const ContractError& e) {
    status = kData;
    error = e.what();
  } catch (const json::exception& e) {
    status = kData;
    error = e.what();
  } catch (const std::exception& e) {
    status = kData;
    error = e.what();
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!error.empty()) std::cerr << "error: " << error << '\n';
  emit_manifest(run, wall, status, error, started);
  return status;
}
