#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lightnmt/decoding.hpp"
#include "lightnmt/profiler.hpp"

namespace lightnmt {

// Whitespace-separated words of detokenized text.
inline std::size_t word_count(const std::vector<std::string>& lines) {
  std::size_t n = 0;
  for (const auto& l : lines) n += split_words(l).size();
  return n;
}

// Mean cost of one empty ScopedTimer, measured over `iterations` timers.
inline double calibrate_timer_overhead(std::size_t iterations = 100000) {
  Profiler p;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < iterations; ++i) ScopedTimer t(&p, Bucket::kBeamTopk);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s / static_cast<double>(iterations);
}

struct WpsResult {
  std::vector<double> wps;      // one per repeat
  std::vector<double> seconds;  // one per repeat
  std::size_t words = 0;        // of the last repeat
  double mean_wps = 0;
  bool undefined = false;       // no output words
};

// Runs `job` `repeats` times; each run returns detokenized output lines.
inline WpsResult measure_wps(const std::function<std::vector<std::string>()>& job,
                             std::size_t repeats = 3) {
  if (repeats < 1) throw ConfigError("measure_wps: repeats must be >= 1");
  WpsResult r;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = job();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.words = word_count(out);
    r.seconds.push_back(s);
    r.wps.push_back(s > 0 ? static_cast<double>(r.words) / s : 0.0);
  }
  if (r.words == 0) {
    r.undefined = true;
    r.mean_wps = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double sum = 0;
  for (double w : r.wps) sum += w;
  r.mean_wps = sum / static_cast<double>(r.wps.size());
  return r;
}

struct TimingReport {
  double total = 0;
  double encoder = 0;
  double decoder = 0;
  double self_attn_or_rnn = 0;
  double cross_attn = 0;
  double softmax = 0;
  double beam_topk = 0;
  double timer_overhead = 0;  // estimated cost of all timers in the run
  std::size_t beam = 0, batch = 0, sentences = 0, output_words = 0;

  static TimingReport from(const Profiler& p, double total, const DecodeConfig& dc) {
    TimingReport r;
    r.total = total;
    r.encoder = p.seconds(Bucket::kEncoder);
    r.decoder = p.seconds(Bucket::kDecoder);
    r.self_attn_or_rnn = p.seconds(Bucket::kSelfAttnOrRnn);
    r.cross_attn = p.seconds(Bucket::kCrossAttn);
    r.softmax = p.seconds(Bucket::kSoftmax);
    r.beam_topk = p.seconds(Bucket::kBeamTopk);
    r.beam = dc.beam_size;
    r.batch = dc.batch_size;
    return r;
  }
};

inline void to_json(nlohmann::json& j, const TimingReport& r) {
  j = nlohmann::json{{"total", r.total},
                     {"encoder", r.encoder},
                     {"decoder", r.decoder},
                     {"decoder_buckets",
                      {{"self_attn_or_rnn", r.self_attn_or_rnn},
                       {"cross_attn", r.cross_attn},
                       {"softmax", r.softmax}}},
                     {"beam_topk", r.beam_topk},
                     {"timer_overhead", r.timer_overhead},
                     {"config", {{"beam", r.beam}, {"batch", r.batch}}},
                     {"sentences", r.sentences},
                     {"output_words", r.output_words}};
}

// Decodes `srcs` once with every component timed.
template <class T>
TimingReport profile(const ModelWeights<T>& w, const std::vector<std::vector<int>>& srcs,
                     const DecodeConfig& dc, const BpeModel* bpe = nullptr) {
  Profiler p;
  const auto t0 = std::chrono::steady_clock::now();
  const auto hyps = translate(w, srcs, dc, &p);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  TimingReport r = TimingReport::from(p, total, dc);
  r.sentences = srcs.size();
  r.timer_overhead = calibrate_timer_overhead(10000) * static_cast<double>(p.total_count());
  if (bpe) {
    std::vector<std::string> lines;
    for (const auto& h : hyps) lines.push_back(decode_ids(*bpe, h.output()));
    r.output_words = word_count(lines);
  }
  return r;
}

}  // namespace lightnmt
