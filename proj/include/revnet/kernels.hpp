#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "revnet/metrics.hpp"
#include "revnet/tensor.hpp"

namespace revnet {

inline constexpr double kBatchNormEpsilon = 1e-5;

enum class KernelKind { conv, batchnorm, linear };

/// Parameters of one primitive layer. Convolutions hold weights of shape
/// (c_out, c_in, k, k) and an optional bias; batch normalization holds
/// per-channel gamma/beta in `gamma`/`bias`; linear holds (c_out, c_in)
/// weights plus bias.
template <typename Scalar>
struct KernelParams {
  KernelKind kind = KernelKind::conv;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;   // conv/linear bias, or batchnorm beta
  Tensor<Scalar> gamma;  // batchnorm only
  Index stride = 1;
  Index padding = 0;

  static KernelParams conv2d(Index c_out, Index c_in, Index k, Index stride,
                             Index padding, bool with_bias = false) {
    KernelParams p;
    p.kind = KernelKind::conv;
    p.weights = Tensor<Scalar>(c_out, c_in, k, k);
    if (with_bias) p.bias = Tensor<Scalar>(c_out, 1, 1, 1);
    p.stride = stride;
    p.padding = padding;
    return p;
  }

  static KernelParams batchnorm(Index channels) {
    KernelParams p;
    p.kind = KernelKind::batchnorm;
    p.gamma = Tensor<Scalar>::full(Shape{channels, 1, 1, 1}, Scalar(1));
    p.bias = Tensor<Scalar>(channels, 1, 1, 1);
    return p;
  }

  static KernelParams linear(Index c_out, Index c_in, bool with_bias = true) {
    KernelParams p;
    p.kind = KernelKind::linear;
    p.weights = Tensor<Scalar>(c_out, c_in, 1, 1);
    if (with_bias) p.bias = Tensor<Scalar>(c_out, 1, 1, 1);
    return p;
  }

  Index param_count() const {
    return weights.numel() + bias.numel() + gamma.numel();
  }

  template <typename To>
  KernelParams<To> cast() const {
    KernelParams<To> out;
    out.kind = kind;
    out.weights = weights.template cast<To>();
    out.bias = bias.template cast<To>();
    out.gamma = gamma.template cast<To>();
    out.stride = stride;
    out.padding = padding;
    return out;
  }
};

/// Per-channel batch statistics captured by a train-mode batchnorm, kept so
/// that recomputation can replay the exact same normalization.
template <typename Scalar>
struct BatchStats {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> var;
  Scalar epsilon = Scalar(kBatchNormEpsilon);

  Index channels() const { return mean.size(); }

  template <typename To>
  BatchStats<To> cast() const {
    BatchStats<To> out;
    out.mean = mean.template cast<To>();
    out.var = var.template cast<To>();
    out.epsilon = static_cast<To>(epsilon);
    return out;
  }
};

// ---------------------------------------------------------------------------
// convolution

template <typename Scalar>
Shape conv2d_output_shape(const Shape& in, const KernelParams<Scalar>& p) {
  const Shape& ws = p.weights.shape();
  require(p.kind == KernelKind::conv, "conv2d: params kind is not conv");
  require(in.c == ws.c, "conv2d: input channels " + std::to_string(in.c) +
                            " != kernel c_in " + std::to_string(ws.c));
  require(p.stride >= 1, "conv2d: stride must be >= 1");
  require(p.padding >= 0, "conv2d: padding must be >= 0");
  Index oh = (in.h + 2 * p.padding - ws.h) / p.stride + 1;
  Index ow = (in.w + 2 * p.padding - ws.w) / p.stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d: kernel " + ws.str() +
                                  " does not fit input " + in.str());
  return Shape{in.n, ws.n, oh, ow};
}

/// Direct convolution. Each output accumulates its products in fixed
/// (c_in, kh, kw) order starting from zero, bias added last; out-of-bounds
/// taps are skipped. That order is the contract the reference oracle checks
/// bit for bit.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const KernelParams<Scalar>& p) {
  const Shape out_shape = conv2d_output_shape(x.shape(), p);
  const Shape& ws = p.weights.shape();
  const Shape& in = x.shape();
  Tensor<Scalar> y(out_shape);
  const bool has_bias = !p.bias.empty();

  for (Index b = 0; b < out_shape.n; ++b)
    for (Index oc = 0; oc < out_shape.c; ++oc)
      for (Index oy = 0; oy < out_shape.h; ++oy)
        for (Index ox = 0; ox < out_shape.w; ++ox) {
          Scalar acc = 0;
          for (Index ic = 0; ic < ws.c; ++ic)
            for (Index ky = 0; ky < ws.h; ++ky) {
              Index iy = oy * p.stride + ky - p.padding;
              if (iy < 0 || iy >= in.h) continue;
              for (Index kx = 0; kx < ws.w; ++kx) {
                Index ix = ox * p.stride + kx - p.padding;
                if (ix < 0 || ix >= in.w) continue;
                acc += x(b, ic, iy, ix) * p.weights(oc, ic, ky, kx);
              }
            }
          if (has_bias) acc += p.bias[oc];
          y(b, oc, oy, ox) = acc;
        }

  detail::count_madds(static_cast<std::uint64_t>(out_shape.numel()) *
                      static_cast<std::uint64_t>(ws.c * ws.h * ws.w));
  return y;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> dw;
  Tensor<Scalar> db;  // empty when the conv has no bias
};

/// Transposed-Jacobian products of conv2d for input, weights and bias.
template <typename Scalar>
ConvGrads<Scalar> conv2d_vjp(const Tensor<Scalar>& x,
                             const KernelParams<Scalar>& p,
                             const Tensor<Scalar>& dy) {
  const Shape out_shape = conv2d_output_shape(x.shape(), p);
  require(dy.shape() == out_shape, "conv2d_vjp: dy shape " + dy.shape().str() +
                                       " != output shape " + out_shape.str());
  const Shape& ws = p.weights.shape();
  const Shape& in = x.shape();

  ConvGrads<Scalar> g;
  g.dx = Tensor<Scalar>(in);
  g.dw = Tensor<Scalar>(ws);
  if (!p.bias.empty()) g.db = Tensor<Scalar>(p.bias.shape());

  for (Index b = 0; b < out_shape.n; ++b)
    for (Index oc = 0; oc < out_shape.c; ++oc)
      for (Index oy = 0; oy < out_shape.h; ++oy)
        for (Index ox = 0; ox < out_shape.w; ++ox) {
          const Scalar d = dy(b, oc, oy, ox);
          if (!p.bias.empty()) g.db[oc] += d;
          for (Index ic = 0; ic < ws.c; ++ic)
            for (Index ky = 0; ky < ws.h; ++ky) {
              Index iy = oy * p.stride + ky - p.padding;
              if (iy < 0 || iy >= in.h) continue;
              for (Index kx = 0; kx < ws.w; ++kx) {
                Index ix = ox * p.stride + kx - p.padding;
                if (ix < 0 || ix >= in.w) continue;
                g.dx(b, ic, iy, ix) += p.weights(oc, ic, ky, kx) * d;
                g.dw(oc, ic, ky, kx) += x(b, ic, iy, ix) * d;
              }
            }
        }

  detail::count_madds(2 * static_cast<std::uint64_t>(out_shape.numel()) *
                      static_cast<std::uint64_t>(ws.c * ws.h * ws.w));
  return g;
}

// ---------------------------------------------------------------------------
// batch normalization

/// Train mode: normalizes with per-channel mean/biased variance over
/// (n, h, w), returns the statistics used so recomputation can replay them.
template <typename Scalar>
std::pair<Tensor<Scalar>, BatchStats<Scalar>> batchnorm_train(
    const Tensor<Scalar>& x, const KernelParams<Scalar>& p) {
  const Shape& s = x.shape();
  require(p.kind == KernelKind::batchnorm, "batchnorm: params kind mismatch");
  require(p.gamma.numel() == s.c, "batchnorm: gamma length " +
                                      std::to_string(p.gamma.numel()) +
                                      " != channels " + std::to_string(s.c));
  require(p.bias.numel() == s.c, "batchnorm: beta length " +
                                     std::to_string(p.bias.numel()) +
                                     " != channels " + std::to_string(s.c));

  BatchStats<Scalar> st;
  st.mean.resize(s.c);
  st.var.resize(s.c);
  st.epsilon = Scalar(kBatchNormEpsilon);

  const Index m = s.n * s.h * s.w;
  const Index plane = s.h * s.w;
  for (Index c = 0; c < s.c; ++c) {
    Scalar sum = 0;
    for (Index b = 0; b < s.n; ++b) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) sum += px[i];
    }
    const Scalar mean = sum / static_cast<Scalar>(m);
    Scalar sq = 0;
    for (Index b = 0; b < s.n; ++b) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) {
        Scalar d = px[i] - mean;
        sq += d * d;
      }
    }
    st.mean[c] = mean;
    st.var[c] = sq / static_cast<Scalar>(m);
  }

  Tensor<Scalar> y(s);
  for (Index c = 0; c < s.c; ++c) {
    const Scalar inv = Scalar(1) / std::sqrt(st.var[c] + st.epsilon);
    const Scalar scale = p.gamma[c] * inv;
    const Scalar shift = p.bias[c] - st.mean[c] * scale;
    for (Index b = 0; b < s.n; ++b) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      Scalar* py = y.data() + y.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) py[i] = px[i] * scale + shift;
    }
  }

  // stats pass ~1 madd/elem (squared deviation), normalize 1 madd/elem
  detail::count_madds(2 * static_cast<std::uint64_t>(s.numel()));
  return {std::move(y), std::move(st)};
}

/// Replay mode: normalizes with the supplied statistics exactly;
/// deterministic given identical inputs and stats.
template <typename Scalar>
Tensor<Scalar> batchnorm_replay(const Tensor<Scalar>& x,
                                const KernelParams<Scalar>& p,
                                const BatchStats<Scalar>& st) {
  const Shape& s = x.shape();
  require(p.gamma.numel() == s.c, "batchnorm replay: gamma/channel mismatch");
  require(st.channels() == s.c,
          "batchnorm replay: stats channels " + std::to_string(st.channels()) +
              " != input channels " + std::to_string(s.c));

  Tensor<Scalar> y(s);
  const Index plane = s.h * s.w;
  for (Index c = 0; c < s.c; ++c) {
    const Scalar inv = Scalar(1) / std::sqrt(st.var[c] + st.epsilon);
    const Scalar scale = p.gamma[c] * inv;
    const Scalar shift = p.bias[c] - st.mean[c] * scale;
    for (Index b = 0; b < s.n; ++b) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      Scalar* py = y.data() + y.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) py[i] = px[i] * scale + shift;
    }
  }
  detail::count_madds(static_cast<std::uint64_t>(s.numel()));
  return y;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> dgamma;
  Tensor<Scalar> dbeta;
};

/// Gradient of the train-mode normalization: mean and variance are treated
/// as functions of x. `stats` must be the ones the forward call returned.
template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_vjp(const Tensor<Scalar>& x,
                                     const KernelParams<Scalar>& p,
                                     const BatchStats<Scalar>& st,
                                     const Tensor<Scalar>& dy) {
  const Shape& s = x.shape();
  require(dy.shape() == s, "batchnorm_vjp: dy shape " + dy.shape().str() +
                               " != x shape " + s.str());
  require(st.channels() == s.c, "batchnorm_vjp: stats channel mismatch");

  BatchNormGrads<Scalar> g;
  g.dx = Tensor<Scalar>(s);
  g.dgamma = Tensor<Scalar>(p.gamma.shape());
  g.dbeta = Tensor<Scalar>(p.bias.shape());

  const Index m = s.n * s.h * s.w;
  const Index plane = s.h * s.w;
  for (Index c = 0; c < s.c; ++c) {
    const Scalar inv = Scalar(1) / std::sqrt(st.var[c] + st.epsilon);
    const Scalar mean = st.mean[c];

    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (Index b = 0; b < s.n; ++b) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      const Scalar* pd = dy.data() + dy.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) {
        sum_dy += pd[i];
        sum_dy_xhat += pd[i] * ((px[i] - mean) * inv);
      }
    }
    g.dbeta[c] = sum_dy;
    g.dgamma[c] = sum_dy_xhat;

    const Scalar k1 = sum_dy / static_cast<Scalar>(m);
    const Scalar k2 = sum_dy_xhat / static_cast<Scalar>(m);
    const Scalar scale = p.gamma[c] * inv;
    for (Index b = 0; b < s.n; ++b) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      const Scalar* pd = dy.data() + dy.offset(b, c, 0, 0);
      Scalar* pg = g.dx.data() + g.dx.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) {
        const Scalar xhat = (px[i] - mean) * inv;
        pg[i] = scale * (pd[i] - k1 - xhat * k2);
      }
    }
  }

  detail::count_madds(4 * static_cast<std::uint64_t>(s.numel()));
  return g;
}

// ---------------------------------------------------------------------------
// relu

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  for (Index i = 0; i < x.numel(); ++i) y[i] = x[i] > Scalar(0) ? x[i] : 0;
  return y;
}

/// Masks dy where x <= 0; the subgradient at exactly 0 is taken as 0.
template <typename Scalar>
Tensor<Scalar> relu_vjp(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  require(dy.shape() == x.shape(), "relu_vjp: dy shape " + dy.shape().str() +
                                       " != x shape " + x.shape().str());
  Tensor<Scalar> dx(x.shape());
  for (Index i = 0; i < x.numel(); ++i) dx[i] = x[i] > Scalar(0) ? dy[i] : 0;
  return dx;
}

// ---------------------------------------------------------------------------
// pooling, linear head

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  Tensor<Scalar> y(s.n, s.c, 1, 1);
  const Index plane = s.h * s.w;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      const Scalar* px = x.data() + x.offset(b, c, 0, 0);
      Scalar sum = 0;
      for (Index i = 0; i < plane; ++i) sum += px[i];
      y(b, c, 0, 0) = sum * inv;
    }
  detail::count_madds(static_cast<std::uint64_t>(s.numel()));
  return y;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_vjp(const Shape& x_shape,
                                   const Tensor<Scalar>& dy) {
  require(dy.shape().n == x_shape.n && dy.shape().c == x_shape.c &&
              dy.shape().h == 1 && dy.shape().w == 1,
          "global_avg_pool_vjp: dy shape " + dy.shape().str());
  Tensor<Scalar> dx(x_shape);
  const Index plane = x_shape.h * x_shape.w;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
  for (Index b = 0; b < x_shape.n; ++b)
    for (Index c = 0; c < x_shape.c; ++c) {
      const Scalar d = dy(b, c, 0, 0) * inv;
      Scalar* pg = dx.data() + dx.offset(b, c, 0, 0);
      for (Index i = 0; i < plane; ++i) pg[i] = d;
    }
  detail::count_madds(static_cast<std::uint64_t>(x_shape.numel()));
  return dx;
}

/// x: (n, c_in, 1, 1) -> logits (n, c_out, 1, 1); Eigen matrix product.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const KernelParams<Scalar>& p) {
  const Shape& s = x.shape();
  const Shape& ws = p.weights.shape();
  require(p.kind == KernelKind::linear, "linear: params kind mismatch");
  require(s.c == ws.c && s.h == 1 && s.w == 1,
          "linear: input " + s.str() + " vs weights c_in " +
              std::to_string(ws.c));

  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                            Eigen::RowMajor>;
  Eigen::Map<const Mat> xm(x.data(), s.n, s.c);
  Eigen::Map<const Mat> wm(p.weights.data(), ws.n, ws.c);
  Tensor<Scalar> y(s.n, ws.n, 1, 1);
  Eigen::Map<Mat> ym(y.data(), s.n, ws.n);
  ym.noalias() = xm * wm.transpose();
  if (!p.bias.empty()) {
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bm(
        p.bias.data(), ws.n);
    ym.rowwise() += bm.transpose();
  }
  detail::count_madds(static_cast<std::uint64_t>(s.n * ws.n * ws.c));
  return y;
}

template <typename Scalar>
struct LinearGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> dw;
  Tensor<Scalar> db;
};

template <typename Scalar>
LinearGrads<Scalar> linear_vjp(const Tensor<Scalar>& x,
                               const KernelParams<Scalar>& p,
                               const Tensor<Scalar>& dy) {
  const Shape& s = x.shape();
  const Shape& ws = p.weights.shape();
  require(dy.shape().n == s.n && dy.shape().c == ws.n,
          "linear_vjp: dy shape " + dy.shape().str());

  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                            Eigen::RowMajor>;
  Eigen::Map<const Mat> xm(x.data(), s.n, s.c);
  Eigen::Map<const Mat> wm(p.weights.data(), ws.n, ws.c);
  Eigen::Map<const Mat> dym(dy.data(), s.n, ws.n);

  LinearGrads<Scalar> g;
  g.dx = Tensor<Scalar>(s);
  g.dw = Tensor<Scalar>(ws);
  Eigen::Map<Mat> dxm(g.dx.data(), s.n, s.c);
  Eigen::Map<Mat> dwm(g.dw.data(), ws.n, ws.c);
  dxm.noalias() = dym * wm;
  dwm.noalias() = dym.transpose() * xm;
  if (!p.bias.empty()) {
    g.db = Tensor<Scalar>(p.bias.shape());
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> dbm(g.db.data(),
                                                             ws.n);
    dbm = dym.colwise().sum().transpose();
  }
  detail::count_madds(2 * static_cast<std::uint64_t>(s.n * ws.n * ws.c));
  return g;
}

/// Global average pool followed by the linear classifier.
template <typename Scalar>
Tensor<Scalar> pool_and_head(const Tensor<Scalar>& x,
                             const KernelParams<Scalar>& lin) {
  return linear(global_avg_pool(x), lin);
}

template <typename Scalar>
LinearGrads<Scalar> pool_and_head_vjp(const Tensor<Scalar>& x,
                                      const KernelParams<Scalar>& lin,
                                      const Tensor<Scalar>& dlogits) {
  Tensor<Scalar> pooled = global_avg_pool(x);
  LinearGrads<Scalar> g = linear_vjp(pooled, lin, dlogits);
  g.dx = global_avg_pool_vjp(x.shape(), g.dx);
  return g;
}

// ---------------------------------------------------------------------------
// parameter-free downsampling pieces (transition layers)

/// 2x2 average pooling with stride 2; spatial dims must be even.
template <typename Scalar>
Tensor<Scalar> avg_pool2x2(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0,
          "avg_pool2x2: spatial dims must be even, got " + s.str());
  Tensor<Scalar> y(s.n, s.c, s.h / 2, s.w / 2);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c)
      for (Index oy = 0; oy < s.h / 2; ++oy)
        for (Index ox = 0; ox < s.w / 2; ++ox)
          y(b, c, oy, ox) =
              (x(b, c, 2 * oy, 2 * ox) + x(b, c, 2 * oy, 2 * ox + 1) +
               x(b, c, 2 * oy + 1, 2 * ox) + x(b, c, 2 * oy + 1, 2 * ox + 1)) *
              Scalar(0.25);
  detail::count_madds(static_cast<std::uint64_t>(s.numel()));
  return y;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2x2_vjp(const Shape& x_shape, const Tensor<Scalar>& dy) {
  require(dy.shape().h == x_shape.h / 2 && dy.shape().w == x_shape.w / 2 &&
              dy.shape().n == x_shape.n && dy.shape().c == x_shape.c,
          "avg_pool2x2_vjp: dy shape " + dy.shape().str() + " vs input " +
              x_shape.str());
  Tensor<Scalar> dx(x_shape);
  for (Index b = 0; b < x_shape.n; ++b)
    for (Index c = 0; c < x_shape.c; ++c)
      for (Index oy = 0; oy < x_shape.h / 2; ++oy)
        for (Index ox = 0; ox < x_shape.w / 2; ++ox) {
          const Scalar d = dy(b, c, oy, ox) * Scalar(0.25);
          dx(b, c, 2 * oy, 2 * ox) = d;
          dx(b, c, 2 * oy, 2 * ox + 1) = d;
          dx(b, c, 2 * oy + 1, 2 * ox) = d;
          dx(b, c, 2 * oy + 1, 2 * ox + 1) = d;
        }
  detail::count_madds(static_cast<std::uint64_t>(x_shape.numel()));
  return dx;
}

/// Widens a tensor to `out_c` channels by tiling: output channel j is input
/// channel j mod c. Keeps every channel's batch variance nonzero, which a
/// zero fill would not (an exactly-constant channel makes batchnorm's
/// 1/sqrt(var+eps) blow reconstruction error up by ~1/sqrt(eps)).
template <typename Scalar>
Tensor<Scalar> tile_channels(const Tensor<Scalar>& x, Index out_c) {
  const Shape& s = x.shape();
  require(out_c >= s.c, "tile_channels: target channels " +
                            std::to_string(out_c) + " < input channels " +
                            std::to_string(s.c));
  Tensor<Scalar> y(s.n, out_c, s.h, s.w);
  const Index plane = s.h * s.w;
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < out_c; ++c)
      std::copy_n(x.data() + x.offset(b, c % s.c, 0, 0), plane,
                  y.data() + y.offset(b, c, 0, 0));
  return y;
}

/// VJP of tile_channels: replica gradients fold back onto their source
/// channel, summed in ascending replica order.
template <typename Scalar>
Tensor<Scalar> tile_channels_vjp(Index in_c, const Tensor<Scalar>& dy) {
  const Shape& s = dy.shape();
  require(in_c <= s.c, "tile_channels_vjp: source channels " +
                           std::to_string(in_c) + " > output channels " +
                           std::to_string(s.c));
  Tensor<Scalar> dx(s.n, in_c, s.h, s.w);
  const Index plane = s.h * s.w;
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      const Scalar* pd = dy.data() + dy.offset(b, c, 0, 0);
      Scalar* pg = dx.data() + dx.offset(b, c % in_c, 0, 0);
      for (Index i = 0; i < plane; ++i) pg[i] += pd[i];
    }
  return dx;
}

// ---------------------------------------------------------------------------
// loss

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  Tensor<Scalar> dlogits;
};

/// Mean softmax cross entropy over the batch; dlogits = (softmax - onehot)/n.
template <typename Scalar>
LossResult<Scalar> softmax_xent(const Tensor<Scalar>& logits,
                                const std::vector<Index>& labels) {
  const Shape& s = logits.shape();
  require(s.h == 1 && s.w == 1, "softmax_xent: logits shape " + s.str());
  require(static_cast<Index>(labels.size()) == s.n,
          "softmax_xent: batch " + std::to_string(s.n) + " != labels " +
              std::to_string(labels.size()));

  LossResult<Scalar> r;
  r.dlogits = Tensor<Scalar>(s);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(s.n);
  Scalar loss = 0;
  for (Index b = 0; b < s.n; ++b) {
    const Index label = labels[static_cast<std::size_t>(b)];
    require(label >= 0 && label < s.c,
            "softmax_xent: label " + std::to_string(label) +
                " out of range [0, " + std::to_string(s.c) + ")");
    Scalar mx = logits(b, 0, 0, 0);
    for (Index c = 1; c < s.c; ++c) mx = std::max(mx, logits(b, c, 0, 0));
    Scalar z = 0;
    for (Index c = 0; c < s.c; ++c) z += std::exp(logits(b, c, 0, 0) - mx);
    const Scalar log_z = std::log(z) + mx;
    loss += log_z - logits(b, label, 0, 0);
    for (Index c = 0; c < s.c; ++c) {
      Scalar soft = std::exp(logits(b, c, 0, 0) - log_z);
      r.dlogits(b, c, 0, 0) = (soft - Scalar(c == label)) * inv_n;
    }
  }
  r.loss = loss * inv_n;
  return r;
}

}  // namespace revnet
