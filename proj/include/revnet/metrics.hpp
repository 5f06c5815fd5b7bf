#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "revnet/tensor.hpp"

namespace revnet {

/// Exact multiply-add tallies for one forward/backward run.
struct OpCount {
  std::uint64_t forward_madds = 0;
  std::uint64_t backward_madds = 0;

  std::uint64_t total() const { return forward_madds + backward_madds; }
  double backward_over_forward() const {
    return forward_madds ? static_cast<double>(backward_madds) /
                               static_cast<double>(forward_madds)
                         : 0.0;
  }
  double total_over_forward() const {
    return forward_madds ? static_cast<double>(total()) /
                               static_cast<double>(forward_madds)
                         : 0.0;
  }
};

enum class Phase { forward, backward };

/// Per-run multiply-add counter. Kernels report closed-form tallies of the
/// madds their loops execute; the active phase decides which bucket fills.
class OpCounter {
 public:
  void add(std::uint64_t madds) {
    if (phase_ == Phase::forward)
      count_.forward_madds += madds;
    else
      count_.backward_madds += madds;
  }
  void set_phase(Phase p) { phase_ = p; }
  Phase phase() const { return phase_; }
  const OpCount& count() const { return count_; }
  void reset() { count_ = OpCount{}; }

 private:
  OpCount count_;
  Phase phase_ = Phase::forward;
};

namespace detail {
inline thread_local OpCounter* tls_op_counter = nullptr;

inline void count_madds(std::uint64_t n) {
  if (tls_op_counter) tls_op_counter->add(n);
}
}  // namespace detail

/// Routes kernel madd tallies into a counter for the current thread while
/// alive. One counter per thread of execution.
class CountScope {
 public:
  explicit CountScope(OpCounter& c) : prev_(detail::tls_op_counter) {
    detail::tls_op_counter = &c;
  }
  ~CountScope() { detail::tls_op_counter = prev_; }
  CountScope(const CountScope&) = delete;
  CountScope& operator=(const CountScope&) = delete;

 private:
  OpCounter* prev_;
};

/// Flips the active counter's phase for a region; restores on exit.
class PhaseScope {
 public:
  explicit PhaseScope(Phase p) {
    if (detail::tls_op_counter) {
      prev_ = detail::tls_op_counter->phase();
      detail::tls_op_counter->set_phase(p);
      active_ = true;
    }
  }
  ~PhaseScope() {
    if (active_) detail::tls_op_counter->set_phase(prev_);
  }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  Phase prev_ = Phase::forward;
  bool active_ = false;
};

/// Deterministic activation-byte meter. Engines register retained buffers
/// explicitly; peak tracks the high-water mark of live bytes.
class MemMeter {
 public:
  struct Event {
    bool alloc;
    std::uint64_t bytes;
    std::string tag;
  };

  void record_alloc(const std::string& tag, std::uint64_t bytes) {
    live_ += bytes;
    live_by_tag_[tag] += bytes;
    peak_ = std::max(peak_, live_);
    peak_by_tag_[tag] = std::max(peak_by_tag_[tag], live_by_tag_[tag]);
    events_.push_back(Event{true, bytes, tag});
  }

  void record_free(const std::string& tag, std::uint64_t bytes) {
    auto it = live_by_tag_.find(tag);
    if (it == live_by_tag_.end() || it->second < bytes)
      throw std::logic_error("MemMeter: free of " + std::to_string(bytes) +
                             " bytes exceeds live allocation for tag '" + tag +
                             "'");
    it->second -= bytes;
    live_ -= bytes;
    events_.push_back(Event{false, bytes, tag});
  }

  std::uint64_t live_bytes() const { return live_; }
  std::uint64_t peak_bytes() const { return peak_; }
  const std::vector<Event>& event_log() const { return events_; }
  const std::unordered_map<std::string, std::uint64_t>& peak_by_tag() const {
    return peak_by_tag_;
  }

  /// Re-runs the event log through a fresh meter; peak must be invariant.
  std::uint64_t replay_peak() const {
    std::uint64_t live = 0, peak = 0;
    for (const Event& e : events_) {
      if (e.alloc)
        live += e.bytes;
      else
        live -= e.bytes;
      peak = std::max(peak, live);
    }
    return peak;
  }

  void write_csv(std::ostream& os) const {
    os << "tag,peak_bytes\n";
    std::vector<std::pair<std::string, std::uint64_t>> rows(
        peak_by_tag_.begin(), peak_by_tag_.end());
    std::sort(rows.begin(), rows.end());
    for (const auto& [tag, peak] : rows) os << tag << "," << peak << "\n";
    os << "TOTAL," << peak_ << "\n";
  }

 private:
  std::uint64_t live_ = 0;
  std::uint64_t peak_ = 0;
  std::vector<Event> events_;
  std::unordered_map<std::string, std::uint64_t> live_by_tag_;
  std::unordered_map<std::string, std::uint64_t> peak_by_tag_;
};

namespace detail {
inline thread_local MemMeter* tls_mem_meter = nullptr;
}

/// Activates a meter for the current thread while alive.
class MeterScope {
 public:
  explicit MeterScope(MemMeter& m) : prev_(detail::tls_mem_meter) {
    detail::tls_mem_meter = &m;
  }
  ~MeterScope() { detail::tls_mem_meter = prev_; }
  MeterScope(const MeterScope&) = delete;
  MeterScope& operator=(const MeterScope&) = delete;

 private:
  MemMeter* prev_;
};

inline MemMeter* active_meter() { return detail::tls_mem_meter; }

/// RAII registration of one retained activation buffer with the meter that
/// was active at construction. Frees on destruction.
class MeterToken {
 public:
  MeterToken() = default;
  MeterToken(std::string tag, std::uint64_t bytes)
      : meter_(detail::tls_mem_meter), tag_(std::move(tag)), bytes_(bytes) {
    if (meter_ && bytes_) meter_->record_alloc(tag_, bytes_);
  }
  ~MeterToken() { release(); }

  MeterToken(MeterToken&& o) noexcept
      : meter_(o.meter_), tag_(std::move(o.tag_)), bytes_(o.bytes_) {
    o.meter_ = nullptr;
    o.bytes_ = 0;
  }
  MeterToken& operator=(MeterToken&& o) noexcept {
    if (this != &o) {
      release();
      meter_ = o.meter_;
      tag_ = std::move(o.tag_);
      bytes_ = o.bytes_;
      o.meter_ = nullptr;
      o.bytes_ = 0;
    }
    return *this;
  }
  MeterToken(const MeterToken&) = delete;
  MeterToken& operator=(const MeterToken&) = delete;

  void release() {
    if (meter_ && bytes_) meter_->record_free(tag_, bytes_);
    meter_ = nullptr;
    bytes_ = 0;
  }

 private:
  MemMeter* meter_ = nullptr;
  std::string tag_;
  std::uint64_t bytes_ = 0;
};

/// Angle between two flattened gradient vectors, always computed in f64.
struct AngleReport {
  double angle_degrees = 0.0;
  double cosine = 1.0;
  double a_norm = 0.0;
  double b_norm = 0.0;
  bool undefined = false;  // set when either vector has zero norm
};

inline AngleReport grad_angle(const std::vector<double>& a,
                              const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ShapeError("grad_angle: vector lengths " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  Eigen::Map<const Eigen::VectorXd> va(a.data(), static_cast<Index>(a.size()));
  Eigen::Map<const Eigen::VectorXd> vb(b.data(), static_cast<Index>(b.size()));
  AngleReport r;
  r.a_norm = va.norm();
  r.b_norm = vb.norm();
  if (r.a_norm == 0.0 || r.b_norm == 0.0) {
    r.undefined = true;
    r.cosine = std::numeric_limits<double>::quiet_NaN();
    r.angle_degrees = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double c = va.dot(vb) / (r.a_norm * r.b_norm);
  r.cosine = std::clamp(c, -1.0, 1.0);
  r.angle_degrees = std::acos(r.cosine) * (180.0 / 3.14159265358979323846);
  return r;
}

/// Least-squares slope of y against x; used by the depth sweeps.
inline double linear_fit_slope(const std::vector<double>& x,
                               const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("linear_fit_slope: need >= 2 paired points");
  Eigen::Map<const Eigen::VectorXd> vx(x.data(), static_cast<Index>(x.size()));
  Eigen::Map<const Eigen::VectorXd> vy(y.data(), static_cast<Index>(y.size()));
  double mx = vx.mean(), my = vy.mean();
  double sxx = (vx.array() - mx).square().sum();
  double sxy = ((vx.array() - mx) * (vy.array() - my)).sum();
  return sxy / sxx;
}

}  // namespace revnet
