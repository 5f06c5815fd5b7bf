#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "revnet/residual.hpp"
#include "revnet/tensor.hpp"

namespace revnet {

/// A tensor split into its first and last c/2 channels.
template <typename Scalar>
struct PartitionedTensor {
  Tensor<Scalar> x1;
  Tensor<Scalar> x2;
};

/// Contiguous first-half/second-half channel split; requires an even
/// channel count.
template <typename Scalar>
PartitionedTensor<Scalar> split_channels(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  require(s.c % 2 == 0,
          "split_channels: odd channel count " + std::to_string(s.c));
  const Index half = s.c / 2;
  PartitionedTensor<Scalar> p;
  p.x1 = Tensor<Scalar>(s.n, half, s.h, s.w);
  p.x2 = Tensor<Scalar>(s.n, half, s.h, s.w);
  const Index plane = s.h * s.w;
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < half; ++c) {
      std::copy_n(x.data() + x.offset(b, c, 0, 0), plane,
                  p.x1.data() + p.x1.offset(b, c, 0, 0));
      std::copy_n(x.data() + x.offset(b, half + c, 0, 0), plane,
                  p.x2.data() + p.x2.offset(b, c, 0, 0));
    }
  return p;
}

template <typename Scalar>
Tensor<Scalar> merge_channels(const Tensor<Scalar>& x1,
                              const Tensor<Scalar>& x2) {
  const Shape& s1 = x1.shape();
  const Shape& s2 = x2.shape();
  require(s1.n == s2.n && s1.h == s2.h && s1.w == s2.w,
          "merge_channels: halves disagree, " + s1.str() + " vs " + s2.str());
  Tensor<Scalar> x(s1.n, s1.c + s2.c, s1.h, s1.w);
  const Index plane = s1.h * s1.w;
  for (Index b = 0; b < s1.n; ++b) {
    for (Index c = 0; c < s1.c; ++c)
      std::copy_n(x1.data() + x1.offset(b, c, 0, 0), plane,
                  x.data() + x.offset(b, c, 0, 0));
    for (Index c = 0; c < s2.c; ++c)
      std::copy_n(x2.data() + x2.offset(b, c, 0, 0), plane,
                  x.data() + x.offset(b, s1.c + c, 0, 0));
  }
  return x;
}

template <typename Scalar>
Tensor<Scalar> merge_channels(const PartitionedTensor<Scalar>& p) {
  return merge_channels(p.x1, p.x2);
}

enum class CouplingKind { additive, nice, affine };

/// A reversible block: residual functions F and G on the channel halves.
///
///   forward:  z1 = x1 + F(x2); y2 = x2 + G(z1); y1 = z1
///   reverse:  z1 = y1; x2 = y2 - G(z1); x1 = z1 - F(x2)
///
/// Batch statistics used inside F and G during forward are kept on the
/// block (per use site, so blocks may share a residual function) and
/// replayed during reversal by default.
template <typename Scalar>
struct ReversibleBlock {
  std::shared_ptr<ResidualFn<Scalar>> f;
  std::shared_ptr<ResidualFn<Scalar>> g;
  CouplingKind coupling = CouplingKind::additive;
  std::vector<BatchStats<Scalar>> stats_f;
  std::vector<BatchStats<Scalar>> stats_g;

  static ReversibleBlock basic(Index total_channels) {
    require(total_channels % 2 == 0, "reversible block: channel count " +
                                         std::to_string(total_channels) +
                                         " must be even");
    ReversibleBlock b;
    b.f = std::make_shared<ResidualFn<Scalar>>(
        ResidualFn<Scalar>::basic(total_channels / 2));
    b.g = std::make_shared<ResidualFn<Scalar>>(
        ResidualFn<Scalar>::basic(total_channels / 2));
    return b;
  }

  static ReversibleBlock bottleneck(Index total_channels, Index inner) {
    require(total_channels % 2 == 0, "reversible block: channel count " +
                                         std::to_string(total_channels) +
                                         " must be even");
    ReversibleBlock b;
    b.f = std::make_shared<ResidualFn<Scalar>>(
        ResidualFn<Scalar>::bottleneck(total_channels / 2, inner));
    b.g = std::make_shared<ResidualFn<Scalar>>(
        ResidualFn<Scalar>::bottleneck(total_channels / 2, inner));
    return b;
  }

  void init_he(Rng& rng) {
    f->init_he(rng);
    g->init_he(rng);
  }
  void randomize(Rng& rng, double scale = 0.3) {
    f->randomize(rng, scale);
    g->randomize(rng, scale);
  }

  Index param_count() const { return f->param_count() + g->param_count(); }

  bool has_replay_stats() const {
    return stats_f.size() == static_cast<std::size_t>(f->batchnorm_count()) &&
           stats_g.size() == static_cast<std::size_t>(g->batchnorm_count());
  }

  template <typename To>
  ReversibleBlock<To> cast() const {
    ReversibleBlock<To> out;
    out.f = std::make_shared<ResidualFn<To>>(f->template cast<To>());
    out.g = std::make_shared<ResidualFn<To>>(g->template cast<To>());
    out.coupling = coupling;
    for (const auto& s : stats_f)
      out.stats_f.push_back(s.template cast<To>());
    for (const auto& s : stats_g)
      out.stats_g.push_back(s.template cast<To>());
    return out;
  }
};

/// Additive coupling forward. Captures the batch statistics of F and G on
/// the block for later replay.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> couple_forward(
    ReversibleBlock<Scalar>& block, const Tensor<Scalar>& x1,
    const Tensor<Scalar>& x2) {
  require(x1.shape() == x2.shape(), "couple_forward: halves disagree, " +
                                        x1.shape().str() + " vs " +
                                        x2.shape().str());
  Tensor<Scalar> z1 = x1 + block.f->forward(x2, &block.stats_f);
  Tensor<Scalar> y2 = x2 + block.g->forward(z1, &block.stats_g);
  return {std::move(z1), std::move(y2)};
}

/// Exact algebraic inverse of couple_forward. With replay enabled (the
/// default) F and G re-normalize with the statistics captured during the
/// forward pass; disabling replay measures the extra numerical error of
/// recomputed statistics.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> couple_reverse(
    const ReversibleBlock<Scalar>& block, const Tensor<Scalar>& y1,
    const Tensor<Scalar>& y2, bool replay = true) {
  require(y1.shape() == y2.shape(), "couple_reverse: halves disagree, " +
                                        y1.shape().str() + " vs " +
                                        y2.shape().str());
  if (replay)
    require(block.has_replay_stats(),
            "couple_reverse: replay demanded but block has no captured stats");

  ResidualFn<Scalar>& f = *block.f;
  ResidualFn<Scalar>& g = *block.g;
  Tensor<Scalar> gz = replay ? g.forward_replay(y1, block.stats_g)
                             : g.forward(y1);
  Tensor<Scalar> x2 = y2 - gz;
  Tensor<Scalar> fx = replay ? f.forward_replay(x2, block.stats_f)
                             : f.forward(x2);
  Tensor<Scalar> x1 = y1 - fx;
  return {std::move(x1), std::move(x2)};
}

/// NICE coupling: y1 = x1, y2 = x2 + F(x1).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> nice_forward(
    ResidualFn<Scalar>& f, const Tensor<Scalar>& x1,
    const Tensor<Scalar>& x2) {
  require(x1.shape() == x2.shape(), "nice_forward: halves disagree, " +
                                        x1.shape().str() + " vs " +
                                        x2.shape().str());
  Tensor<Scalar> y2 = x2 + f.forward(x1);
  return {x1, std::move(y2)};
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> nice_reverse(
    ResidualFn<Scalar>& f, const Tensor<Scalar>& y1,
    const Tensor<Scalar>& y2) {
  require(y1.shape() == y2.shape(), "nice_reverse: halves disagree, " +
                                        y1.shape().str() + " vs " +
                                        y2.shape().str());
  Tensor<Scalar> x2 = y2 - f.forward_replay(y1, f.cached_stats);
  return {y1, std::move(x2)};
}

inline constexpr double kAffineClamp = 5.0;

/// Affine coupling: y1 = x1, y2 = x2 * exp(F(x1)) + G(x1), with F's output
/// clamped to [-kAffineClamp, kAffineClamp] before exponentiation.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> affine_forward(
    ResidualFn<Scalar>& f, ResidualFn<Scalar>& g, const Tensor<Scalar>& x1,
    const Tensor<Scalar>& x2) {
  require(x1.shape() == x2.shape(), "affine_forward: halves disagree, " +
                                        x1.shape().str() + " vs " +
                                        x2.shape().str());
  Tensor<Scalar> scale = f.forward(x1);
  Tensor<Scalar> shift = g.forward(x1);
  Tensor<Scalar> y2(x2.shape());
  for (Index i = 0; i < x2.numel(); ++i) {
    const Scalar s = std::clamp(scale[i], Scalar(-kAffineClamp),
                                Scalar(kAffineClamp));
    y2[i] = x2[i] * std::exp(s) + shift[i];
  }
  return {x1, std::move(y2)};
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> affine_reverse(
    ResidualFn<Scalar>& f, ResidualFn<Scalar>& g, const Tensor<Scalar>& y1,
    const Tensor<Scalar>& y2) {
  require(y1.shape() == y2.shape(), "affine_reverse: halves disagree, " +
                                        y1.shape().str() + " vs " +
                                        y2.shape().str());
  Tensor<Scalar> scale = f.forward_replay(y1, f.cached_stats);
  Tensor<Scalar> shift = g.forward_replay(y1, g.cached_stats);
  Tensor<Scalar> x2(y2.shape());
  for (Index i = 0; i < y2.numel(); ++i) {
    const Scalar s = std::clamp(scale[i], Scalar(-kAffineClamp),
                                Scalar(kAffineClamp));
    x2[i] = (y2[i] - shift[i]) * std::exp(-s);
  }
  return {y1, std::move(x2)};
}

}  // namespace revnet
