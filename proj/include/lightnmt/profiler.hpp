#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <string_view>

namespace lightnmt {

// Timed decoding components. The decoder sub-buckets nest inside kDecoder.
enum class Bucket : std::size_t {
  kEncoder,
  kDecoder,
  kSelfAttnOrRnn,
  kCrossAttn,
  kSoftmax,
  kBeamTopk,
  kCount
};

inline constexpr std::string_view bucket_name(Bucket b) {
  switch (b) {
    case Bucket::kEncoder: return "encoder";
    case Bucket::kDecoder: return "decoder";
    case Bucket::kSelfAttnOrRnn: return "self_attn_or_rnn";
    case Bucket::kCrossAttn: return "cross_attn";
    case Bucket::kSoftmax: return "softmax";
    case Bucket::kBeamTopk: return "beam_topk";
    case Bucket::kCount: break;
  }
  return "?";
}

// Accumulates monotonic wall time per bucket. Not thread-safe by design:
// profiling runs require an isolated session.
class Profiler {
 public:
  using Clock = std::chrono::steady_clock;

  void add(Bucket b, Clock::duration d) {
    const auto i = static_cast<std::size_t>(b);
    seconds_[i] += std::chrono::duration<double>(d).count();
    ++counts_[i];
  }
  double seconds(Bucket b) const { return seconds_[static_cast<std::size_t>(b)]; }
  std::size_t count(Bucket b) const { return counts_[static_cast<std::size_t>(b)]; }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }
  void reset() {
    seconds_.fill(0.0);
    counts_.fill(0);
  }

 private:
  std::array<double, static_cast<std::size_t>(Bucket::kCount)> seconds_{};
  std::array<std::size_t, static_cast<std::size_t>(Bucket::kCount)> counts_{};
};

// Adds the lifetime of the scope to a bucket; a null profiler costs one branch.
class ScopedTimer {
 public:
  ScopedTimer(Profiler* p, Bucket b) : p_(p), b_(b) {
    if (p_) start_ = Profiler::Clock::now();
  }
  ~ScopedTimer() {
    if (p_) p_->add(b_, Profiler::Clock::now() - start_);
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  Profiler* p_;
  Bucket b_;
  Profiler::Clock::time_point start_{};
};

}  // namespace lightnmt
