#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string_view>

namespace nash::infer {

enum class Component : int {
  self_attn_matmul = 0,
  cross_attn,
  ffn,
  layer_norm,
  dropout,
  residual_add,
  softmax,
  embedding,
  projection,
  kCount
};

constexpr int kComponentCount = static_cast<int>(Component::kCount);

std::string_view component_name(Component c);

// Per-component cumulative wall time. One sink per profiling run; a null sink
// pointer disables all instrumentation (no clock calls on the hot path).
struct ProfileSink {
  std::array<int64_t, kComponentCount> ns{};
  std::array<int64_t, kComponentCount> calls{};

  void add(Component c, int64_t dur_ns) {
    ns[static_cast<int>(c)] += dur_ns;
    calls[static_cast<int>(c)] += 1;
  }
  int64_t total_ns() const {
    int64_t t = 0;
    for (int64_t v : ns) t += v;
    return t;
  }
  void merge(const ProfileSink& o) {
    for (int i = 0; i < kComponentCount; ++i) {
      ns[static_cast<size_t>(i)] += o.ns[static_cast<size_t>(i)];
      calls[static_cast<size_t>(i)] += o.calls[static_cast<size_t>(i)];
    }
  }
};

class ScopedTimer {
 public:
  ScopedTimer(ProfileSink* sink, Component c) : sink_(sink), c_(c) {
    if (sink_) t0_ = std::chrono::steady_clock::now();
  }
  ~ScopedTimer() {
    if (sink_)
      sink_->add(c_, std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now() - t0_)
                         .count());
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  ProfileSink* sink_;
  Component c_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace nash::infer
