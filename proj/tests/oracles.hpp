// Test-only reference implementations. These stay independent of the
// library's vjp code paths: the convolution below is the plain six-loop
// definition, and the finite-difference harness only ever calls forward
// functions.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "revnet/kernels.hpp"
#include "revnet/tensor.hpp"

namespace oracle {

using revnet::Index;
using revnet::KernelParams;
using revnet::Shape;
using revnet::Tensor;

/// Six nested loops straight from the definition of cross-correlation.
/// Accumulation order (c_in, kh, kw) per output, bias last.
template <typename Scalar>
Tensor<Scalar> conv2d_reference(const Tensor<Scalar>& x,
                                const KernelParams<Scalar>& p) {
  const Shape& in = x.shape();
  const Shape& ws = p.weights.shape();
  const Index oh = (in.h + 2 * p.padding - ws.h) / p.stride + 1;
  const Index ow = (in.w + 2 * p.padding - ws.w) / p.stride + 1;
  Tensor<Scalar> y(in.n, ws.n, oh, ow);
  for (Index b = 0; b < in.n; ++b)
    for (Index oc = 0; oc < ws.n; ++oc)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          Scalar acc = 0;
          for (Index ic = 0; ic < ws.c; ++ic)
            for (Index ky = 0; ky < ws.h; ++ky)
              for (Index kx = 0; kx < ws.w; ++kx) {
                const Index iy = oy * p.stride + ky - p.padding;
                const Index ix = ox * p.stride + kx - p.padding;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += x(b, ic, iy, ix) * p.weights(oc, ic, ky, kx);
              }
          if (!p.bias.empty()) acc += p.bias[oc];
          y(b, oc, oy, ox) = acc;
        }
  return y;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename Scalar>
double max_rel_err(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                   double floor = 1e-6) {
  double worst = 0.0;
  for (Index i = 0; i < a.numel(); ++i) {
    const double av = static_cast<double>(a[i]);
    const double bv = static_cast<double>(b[i]);
    const double denom = std::max({std::abs(av), std::abs(bv), floor});
    worst = std::max(worst, std::abs(av - bv) / denom);
  }
  return worst;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
  return worst;
}

/// Central finite differences of a scalar function over every coordinate of
/// `coords`, one coordinate at a time. f64 only.
inline Tensor<double> central_diff(Tensor<double>& coords,
                                   const std::function<double()>& f,
                                   double step = 1e-5) {
  Tensor<double> grad(coords.shape());
  for (Index i = 0; i < coords.numel(); ++i) {
    const double saved = coords[i];
    coords[i] = saved + step;
    const double fp = f();
    coords[i] = saved - step;
    const double fm = f();
    coords[i] = saved;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

/// <t, cot> with a fixed random cotangent; the scalar loss used to turn a
/// vjp check into a gradient check.
template <typename Scalar>
double weighted_sum(const Tensor<Scalar>& t, const Tensor<double>& cot) {
  double s = 0;
  for (Index i = 0; i < t.numel(); ++i)
    s += static_cast<double>(t[i]) * cot[i];
  return s;
}

template <typename Scalar>
Tensor<Scalar> random_tensor(revnet::Shape s, revnet::Rng& rng,
                             double scale = 1.0) {
  Tensor<Scalar> t(s);
  revnet::fill_normal(t, rng, scale);
  return t;
}

}  // namespace oracle
