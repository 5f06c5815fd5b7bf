#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace revnet {

using Index = Eigen::Index;

/// Thrown when tensor shapes do not line up; the message names the
/// offending dimension.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch-channel-height-width extent of a dense tensor.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  Index numel() const { return n * c * h * w; }

  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

/// Dense NCHW tensor over f32 or f64, contiguous row-major storage.
/// Value type of every kernel; kernels never mutate their inputs.
template <typename Scalar>
class Tensor {
  static_assert(std::is_floating_point_v<Scalar>);

 public:
  using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstVectorMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(Shape s)
      : shape_(s), elems_(static_cast<std::size_t>(s.numel()), Scalar(0)) {}
  Tensor(Index n, Index c, Index h, Index w) : Tensor(Shape{n, c, h, w}) {}

  static Tensor full(Shape s, Scalar v) {
    Tensor t(s);
    std::fill(t.elems_.begin(), t.elems_.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index numel() const { return static_cast<Index>(elems_.size()); }
  bool empty() const { return elems_.empty(); }
  std::size_t bytes() const { return elems_.size() * sizeof(Scalar); }

  Scalar* data() { return elems_.data(); }
  const Scalar* data() const { return elems_.data(); }

  Scalar& operator[](Index i) { return elems_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const {
    return elems_[static_cast<std::size_t>(i)];
  }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return elems_[static_cast<std::size_t>(offset(n, c, y, x))];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return elems_[static_cast<std::size_t>(offset(n, c, y, x))];
  }

  Index offset(Index n, Index c, Index y, Index x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  VectorMap vec() { return VectorMap(elems_.data(), numel()); }
  ConstVectorMap vec() const { return ConstVectorMap(elems_.data(), numel()); }

  bool all_finite() const {
    for (Scalar v : elems_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Scalar max_abs() const {
    Scalar m = 0;
    for (Scalar v : elems_) m = std::max(m, std::abs(v));
    return m;
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    for (Index i = 0; i < numel(); ++i)
      out[i] = static_cast<To>(elems_[static_cast<std::size_t>(i)]);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require(shape_ == o.shape_, "tensor add: shape " + shape_.str() +
                                    " vs " + o.shape_.str());
    vec() += o.vec();
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require(shape_ == o.shape_, "tensor sub: shape " + shape_.str() +
                                    " vs " + o.shape_.str());
    vec() -= o.vec();
    return *this;
  }
  Tensor& operator*=(Scalar s) {
    vec() *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }

 private:
  Shape shape_{};
  std::vector<Scalar> elems_;
};

/// Deterministic random source; normal deviates via Box-Muller so that
/// streams do not depend on the standard library's distribution choices.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename Scalar>
void fill_normal(Tensor<Scalar>& t, Rng& rng, double stddev) {
  for (Index i = 0; i < t.numel(); ++i)
    t[i] = static_cast<Scalar>(stddev * rng.normal());
}

template <typename Scalar>
void fill_uniform(Tensor<Scalar>& t, Rng& rng, double lo, double hi) {
  for (Index i = 0; i < t.numel(); ++i)
    t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
}

}  // namespace revnet
