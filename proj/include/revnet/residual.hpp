#pragma once

#include <string>
#include <utility>
#include <vector>

#include "revnet/kernels.hpp"
#include "revnet/metrics.hpp"
#include "revnet/tensor.hpp"

namespace revnet {

/// Gradients of one KernelParams entry; slots mirror the parameter slots.
template <typename Scalar>
struct KernelGrads {
  Tensor<Scalar> dweights;
  Tensor<Scalar> dbias;
  Tensor<Scalar> dgamma;

  static KernelGrads zeros_like(const KernelParams<Scalar>& p) {
    KernelGrads g;
    if (!p.weights.empty()) g.dweights = Tensor<Scalar>(p.weights.shape());
    if (!p.bias.empty()) g.dbias = Tensor<Scalar>(p.bias.shape());
    if (!p.gamma.empty()) g.dgamma = Tensor<Scalar>(p.gamma.shape());
    return g;
  }

  KernelGrads& operator+=(const KernelGrads& o) {
    if (!o.dweights.empty()) dweights += o.dweights;
    if (!o.dbias.empty()) dbias += o.dbias;
    if (!o.dgamma.empty()) dgamma += o.dgamma;
    return *this;
  }
};

/// Saved per-layer inputs (and batchnorm statistics) from one evaluation of
/// a layer sequence; what the backward sweep consumes. Registered buffers
/// report their bytes to the active MemMeter for as long as the tape lives.
template <typename Scalar>
struct Tape {
  struct Entry {
    Tensor<Scalar> input;
    BatchStats<Scalar> stats;  // batchnorm entries only
  };
  std::vector<Entry> entries;
  std::vector<MeterToken> tokens;

  void save(Tensor<Scalar> input, const std::string& tag) {
    tokens.emplace_back(tag, input.bytes());
    entries.push_back(Entry{std::move(input), {}});
  }
  void save(Tensor<Scalar> input, BatchStats<Scalar> stats,
            const std::string& tag) {
    tokens.emplace_back(tag, input.bytes());
    entries.push_back(Entry{std::move(input), std::move(stats)});
  }

  std::size_t bytes() const {
    std::size_t b = 0;
    for (const Entry& e : entries) b += e.input.bytes();
    return b;
  }
};

enum class ResidualKind { basic, bottleneck, custom };

inline constexpr const char* kActTag = "act";

/// A residual function F (or G): an ordered list of kernels where every
/// batch normalization is followed by an implicit ReLU, so a conv entry
/// computes c_k(x) = Conv(ReLU(BN(x))) when preceded by a batchnorm entry.
///
/// Basic(x) = c3(c3(x)); Bottleneck(x) = c1(c3(c1(x))).
template <typename Scalar>
class ResidualFn {
 public:
  ResidualKind kind = ResidualKind::custom;
  std::vector<KernelParams<Scalar>> params;
  /// Batch statistics captured by the most recent train-mode forward, one
  /// entry per batchnorm layer in order.
  std::vector<BatchStats<Scalar>> cached_stats;

  ResidualFn() = default;

  /// Two 3x3 convs, each pre-activated; channel-preserving, stride 1.
  static ResidualFn basic(Index channels) {
    ResidualFn fn;
    fn.kind = ResidualKind::basic;
    fn.params.push_back(KernelParams<Scalar>::batchnorm(channels));
    fn.params.push_back(
        KernelParams<Scalar>::conv2d(channels, channels, 3, 1, 1));
    fn.params.push_back(KernelParams<Scalar>::batchnorm(channels));
    fn.params.push_back(
        KernelParams<Scalar>::conv2d(channels, channels, 3, 1, 1));
    return fn;
  }

  /// 1x1 down to `inner`, 3x3 at `inner`, 1x1 back up; stride 1 throughout.
  static ResidualFn bottleneck(Index channels, Index inner) {
    ResidualFn fn;
    fn.kind = ResidualKind::bottleneck;
    fn.params.push_back(KernelParams<Scalar>::batchnorm(channels));
    fn.params.push_back(KernelParams<Scalar>::conv2d(inner, channels, 1, 1, 0));
    fn.params.push_back(KernelParams<Scalar>::batchnorm(inner));
    fn.params.push_back(KernelParams<Scalar>::conv2d(inner, inner, 3, 1, 1));
    fn.params.push_back(KernelParams<Scalar>::batchnorm(inner));
    fn.params.push_back(KernelParams<Scalar>::conv2d(channels, inner, 1, 1, 0));
    return fn;
  }

  static ResidualFn custom(std::vector<KernelParams<Scalar>> layers) {
    ResidualFn fn;
    fn.kind = ResidualKind::custom;
    fn.params = std::move(layers);
    return fn;
  }

  Index param_count() const {
    Index n = 0;
    for (const auto& p : params) n += p.param_count();
    return n;
  }

  Index batchnorm_count() const {
    Index n = 0;
    for (const auto& p : params)
      if (p.kind == KernelKind::batchnorm) ++n;
    return n;
  }

  /// True when every conv keeps channel count and spatial dims; required of
  /// the residual functions inside reversible blocks.
  bool preserves_shape(Index channels) const {
    Index c = channels;
    for (const auto& p : params) {
      if (p.kind != KernelKind::conv) continue;
      if (p.stride != 1) return false;
      const Shape& ws = p.weights.shape();
      if (ws.c != c) return false;
      if (2 * p.padding != ws.h - 1) return false;  // "same" padding
      c = ws.n;
    }
    return c == channels;
  }

  /// He fan-in init for convs with the final conv zeroed, so a fresh block
  /// starts as the identity map. gamma = 1, beta = 0.
  void init_he(Rng& rng) {
    Index last_conv = -1;
    for (Index i = 0; i < static_cast<Index>(params.size()); ++i)
      if (params[static_cast<std::size_t>(i)].kind == KernelKind::conv)
        last_conv = i;
    for (Index i = 0; i < static_cast<Index>(params.size()); ++i) {
      auto& p = params[static_cast<std::size_t>(i)];
      if (p.kind != KernelKind::conv) continue;
      if (i == last_conv) {
        p.weights = Tensor<Scalar>(p.weights.shape());
      } else {
        const Shape& ws = p.weights.shape();
        fill_normal(p.weights, rng,
                    std::sqrt(2.0 / static_cast<double>(ws.c * ws.h * ws.w)));
      }
      if (!p.bias.empty()) p.bias = Tensor<Scalar>(p.bias.shape());
    }
  }

  /// Fully random parameters (tests exercise non-identity blocks this way).
  void randomize(Rng& rng, double scale = 0.3) {
    for (auto& p : params) {
      if (!p.weights.empty()) fill_normal(p.weights, rng, scale);
      if (!p.bias.empty()) fill_normal(p.bias, rng, scale);
      if (!p.gamma.empty())
        for (Index i = 0; i < p.gamma.numel(); ++i)
          p.gamma[i] = static_cast<Scalar>(1.0 + scale * rng.normal());
    }
  }

  /// Train-mode forward; captures the batch statistics used (into
  /// `capture` when given, and always into cached_stats).
  Tensor<Scalar> forward(const Tensor<Scalar>& x,
                         std::vector<BatchStats<Scalar>>* capture = nullptr) {
    std::vector<BatchStats<Scalar>> stats;
    Tensor<Scalar> y = run(x, nullptr, &stats, nullptr);
    cached_stats = stats;
    if (capture) *capture = std::move(stats);
    return y;
  }

  /// Recomputation forward: normalizes with previously captured statistics.
  Tensor<Scalar> forward_replay(
      const Tensor<Scalar>& x,
      const std::vector<BatchStats<Scalar>>& stats) const {
    return run(x, &stats, nullptr, nullptr);
  }

  /// Train-mode forward that also saves the per-layer inputs for backward.
  Tensor<Scalar> forward_tape(const Tensor<Scalar>& x, Tape<Scalar>& tape,
                              std::vector<BatchStats<Scalar>>* capture =
                                  nullptr) {
    std::vector<BatchStats<Scalar>> stats;
    Tensor<Scalar> y = run(x, nullptr, &stats, &tape);
    cached_stats = stats;
    if (capture) *capture = std::move(stats);
    return y;
  }

  /// Replay forward with tape; what Algorithm 1 uses during reconstruction
  /// so the vjp can reuse the activations it just computed.
  Tensor<Scalar> forward_replay_tape(
      const Tensor<Scalar>& x, const std::vector<BatchStats<Scalar>>& stats,
      Tape<Scalar>& tape) const {
    return run(x, &stats, nullptr, &tape);
  }

  struct Grads {
    Tensor<Scalar> dx;
    std::vector<KernelGrads<Scalar>> params;
  };

  /// Backward sweep over the taped evaluation. Batchnorm gradients treat
  /// the batch statistics as functions of the input (train-mode Jacobian),
  /// which is what the stored baseline computes.
  Grads backward(const Tape<Scalar>& tape, const Tensor<Scalar>& dy) const {
    require(tape.entries.size() == layer_count(),
            "residual backward: tape has " +
                std::to_string(tape.entries.size()) + " entries, expected " +
                std::to_string(layer_count()));
    Grads g;
    g.params.resize(params.size());
    Tensor<Scalar> d = dy;
    Index entry = static_cast<Index>(tape.entries.size());
    for (Index i = static_cast<Index>(params.size()) - 1; i >= 0; --i) {
      const auto& p = params[static_cast<std::size_t>(i)];
      auto& pg = g.params[static_cast<std::size_t>(i)];
      switch (p.kind) {
        case KernelKind::conv: {
          const auto& e = tape.entries[static_cast<std::size_t>(--entry)];
          ConvGrads<Scalar> cg = conv2d_vjp(e.input, p, d);
          d = std::move(cg.dx);
          pg.dweights = std::move(cg.dw);
          pg.dbias = std::move(cg.db);
          break;
        }
        case KernelKind::batchnorm: {
          // implicit relu after the bn
          const auto& re = tape.entries[static_cast<std::size_t>(--entry)];
          d = relu_vjp(re.input, d);
          const auto& be = tape.entries[static_cast<std::size_t>(--entry)];
          BatchNormGrads<Scalar> bg = batchnorm_vjp(be.input, p, be.stats, d);
          d = std::move(bg.dx);
          pg.dgamma = std::move(bg.dgamma);
          pg.dbias = std::move(bg.dbeta);
          break;
        }
        case KernelKind::linear:
          require(false, "residual backward: linear layer not supported here");
      }
    }
    g.dx = std::move(d);
    return g;
  }

  template <typename To>
  ResidualFn<To> cast() const {
    ResidualFn<To> out;
    out.kind = kind;
    out.params.reserve(params.size());
    for (const auto& p : params) out.params.push_back(p.template cast<To>());
    out.cached_stats.reserve(cached_stats.size());
    for (const auto& s : cached_stats)
      out.cached_stats.push_back(s.template cast<To>());
    return out;
  }

 private:
  std::size_t layer_count() const {
    std::size_t n = 0;
    for (const auto& p : params)
      n += (p.kind == KernelKind::batchnorm) ? 2 : 1;  // bn + implicit relu
    return n;
  }

  Tensor<Scalar> run(const Tensor<Scalar>& x,
                     const std::vector<BatchStats<Scalar>>* replay,
                     std::vector<BatchStats<Scalar>>* capture,
                     Tape<Scalar>* tape) const {
    Tensor<Scalar> cur = x;
    Index bn_index = 0;
    for (const auto& p : params) {
      switch (p.kind) {
        case KernelKind::conv: {
          Tensor<Scalar> next = conv2d(cur, p);
          if (tape) tape->save(std::move(cur), kActTag);
          cur = std::move(next);
          break;
        }
        case KernelKind::batchnorm: {
          Tensor<Scalar> bn_out;
          BatchStats<Scalar> stats;
          if (replay) {
            require(bn_index < static_cast<Index>(replay->size()),
                    "replay: missing stats for batchnorm " +
                        std::to_string(bn_index));
            stats = (*replay)[static_cast<std::size_t>(bn_index)];
            bn_out = batchnorm_replay(cur, p, stats);
          } else {
            auto [y, st] = batchnorm_train(cur, p);
            bn_out = std::move(y);
            stats = std::move(st);
          }
          if (capture) capture->push_back(stats);
          Tensor<Scalar> act = relu(bn_out);
          if (tape) {
            tape->save(std::move(cur), std::move(stats), kActTag);
            tape->save(std::move(bn_out), kActTag);
          }
          cur = std::move(act);
          ++bn_index;
          break;
        }
        case KernelKind::linear:
          require(false, "residual run: linear layer not supported here");
      }
    }
    return cur;
  }
};

}  // namespace revnet
