#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "revnet/coupling.hpp"
#include "revnet/kernels.hpp"
#include "revnet/revgrad.hpp"
#include "revnet/tensor.hpp"

namespace revnet {

enum class Family { resnet, revnet };
enum class Engine { reversible, stored };

/// Declarative network description. `channels` follows the architecture
/// table notation: the first entry is the stem width, the rest are
/// per-group widths; bottleneck groups expand the width fourfold.
struct ArchSpec {
  Family family = Family::revnet;
  bool bottleneck = false;
  std::vector<Index> units;
  std::vector<Index> channels;
  Index classes = 10;
  Index in_channels = 3;
  Index in_height = 32;
  Index in_width = 32;

  Index groups() const { return static_cast<Index>(units.size()); }

  /// Full working width of group g (the reversible block's total channel
  /// count, or the residual unit's output width).
  Index group_width(Index g) const {
    const Index v = channels[static_cast<std::size_t>(g) + 1];
    return bottleneck ? 4 * v : v;
  }

  void validate() const {
    require(!units.empty(), "arch: no groups");
    require(units.size() + 1 == channels.size(),
            "arch: units length " + std::to_string(units.size()) +
                " != channels length " + std::to_string(channels.size()) +
                " - 1");
    for (Index u : units)
      require(u >= 1, "arch: empty group (units must be >= 1)");
    for (Index c : channels)
      require(c >= 1, "arch: channel width must be >= 1");
    if (family == Family::revnet)
      for (Index g = 0; g < groups(); ++g)
        require(group_width(g) % 2 == 0,
                "arch: revnet group width " + std::to_string(group_width(g)) +
                    " must be even for the channel split");
    require(classes >= 2, "arch: need at least 2 classes");
  }
};

/// A plain residual unit: shared pre-activation, a conv body, and an
/// identity or 1x1-projection shortcut.
///
///   h = ReLU(BN(x));  y = body(h) + (proj ? Conv1x1(h) : x)
template <typename Scalar>
struct ResUnit {
  KernelParams<Scalar> pre_bn;
  ResidualFn<Scalar> body;  // custom sequence; may stride on its first conv
  KernelParams<Scalar> proj;  // empty weights -> identity shortcut
  BatchStats<Scalar> pre_stats;

  bool has_proj() const { return !proj.weights.empty(); }

  Index param_count() const {
    return pre_bn.param_count() + body.param_count() +
           (has_proj() ? proj.param_count() : 0);
  }
};

/// Parameter-free downsampling between reversible spans: optional 2x2
/// stride-2 average pooling followed by channel tiling up to the new
/// width. Always non-reversible (pooling discards information), so its
/// input is saved.
struct Transition {
  Index in_channels = 0;
  Index out_channels = 0;
  bool pool = true;
};

template <typename Scalar>
struct NetworkPlan {
  ArchSpec spec;
  KernelParams<Scalar> stem;
  // revnet family
  std::vector<std::optional<Transition>> pre_span;  // one slot per group
  std::vector<std::vector<ReversibleBlock<Scalar>>> spans;
  // resnet family
  std::vector<std::vector<ResUnit<Scalar>>> res_groups;
  // classifier head
  KernelParams<Scalar> head_bn;
  KernelParams<Scalar> head_linear;

  Index transition_count() const {
    Index n = 0;
    for (const auto& t : pre_span)
      if (t.has_value()) ++n;
    return n;
  }
  Index span_count() const { return static_cast<Index>(spans.size()); }

  template <typename To>
  NetworkPlan<To> cast() const {
    NetworkPlan<To> out;
    out.spec = spec;
    out.stem = stem.template cast<To>();
    out.pre_span = pre_span;
    for (const auto& span : spans) {
      out.spans.emplace_back();
      for (const auto& b : span)
        out.spans.back().push_back(b.template cast<To>());
    }
    for (const auto& grp : res_groups) {
      out.res_groups.emplace_back();
      for (const auto& u : grp) {
        ResUnit<To> cu;
        cu.pre_bn = u.pre_bn.template cast<To>();
        cu.body = u.body.template cast<To>();
        cu.proj = u.proj.template cast<To>();
        out.res_groups.back().push_back(std::move(cu));
      }
    }
    out.head_bn = head_bn.template cast<To>();
    out.head_linear = head_linear.template cast<To>();
    return out;
  }
};

namespace detail {

/// Body of a plain residual unit; `stride` applies to the downsampling conv.
template <typename Scalar>
ResidualFn<Scalar> make_res_body(bool bottleneck, Index c_in, Index width,
                                 Index inner, Index stride) {
  std::vector<KernelParams<Scalar>> seq;
  if (!bottleneck) {
    seq.push_back(KernelParams<Scalar>::conv2d(width, c_in, 3, stride, 1));
    seq.push_back(KernelParams<Scalar>::batchnorm(width));
    seq.push_back(KernelParams<Scalar>::conv2d(width, width, 3, 1, 1));
  } else {
    seq.push_back(KernelParams<Scalar>::conv2d(inner, c_in, 1, 1, 0));
    seq.push_back(KernelParams<Scalar>::batchnorm(inner));
    seq.push_back(KernelParams<Scalar>::conv2d(inner, inner, 3, stride, 1));
    seq.push_back(KernelParams<Scalar>::batchnorm(inner));
    seq.push_back(KernelParams<Scalar>::conv2d(width, inner, 1, 1, 0));
  }
  return ResidualFn<Scalar>::custom(std::move(seq));
}

}  // namespace detail

/// Builds the network plan for a spec: stem conv, groups of reversible
/// blocks (revnet) or residual units (resnet), and the BN+ReLU+pool+linear
/// head. RevNet groups are contiguous reversible spans with stride 1;
/// downsampling happens in the parameter-free transitions between them.
template <typename Scalar>
NetworkPlan<Scalar> build(const ArchSpec& spec, std::uint64_t seed = 1) {
  spec.validate();
  NetworkPlan<Scalar> plan;
  plan.spec = spec;
  Rng rng(seed);

  const Index stem_width = spec.channels[0];
  plan.stem =
      KernelParams<Scalar>::conv2d(stem_width, spec.in_channels, 3, 1, 1);
  fill_normal(plan.stem.weights, rng,
              std::sqrt(2.0 / static_cast<double>(spec.in_channels * 9)));

  Index cur_width = stem_width;
  if (spec.family == Family::revnet) {
    plan.pre_span.resize(static_cast<std::size_t>(spec.groups()));
    for (Index g = 0; g < spec.groups(); ++g) {
      const Index width = spec.group_width(g);
      require(width >= cur_width,
              "arch: group width " + std::to_string(width) +
                  " below incoming width " + std::to_string(cur_width) +
                  " (channel tiling cannot shrink)");
      if (g > 0 || width != cur_width)
        plan.pre_span[static_cast<std::size_t>(g)] =
            Transition{cur_width, width, /*pool=*/g > 0};
      plan.spans.emplace_back();
      const Index inner = spec.channels[static_cast<std::size_t>(g) + 1] / 2;
      for (Index u = 0; u < spec.units[static_cast<std::size_t>(g)]; ++u) {
        auto block = spec.bottleneck
                         ? ReversibleBlock<Scalar>::bottleneck(width, inner)
                         : ReversibleBlock<Scalar>::basic(width);
        block.init_he(rng);
        plan.spans.back().push_back(std::move(block));
      }
      cur_width = width;
    }
  } else {
    for (Index g = 0; g < spec.groups(); ++g) {
      const Index width = spec.group_width(g);
      const Index inner = spec.channels[static_cast<std::size_t>(g) + 1];
      plan.res_groups.emplace_back();
      for (Index u = 0; u < spec.units[static_cast<std::size_t>(g)]; ++u) {
        const Index stride = (g > 0 && u == 0) ? 2 : 1;
        ResUnit<Scalar> unit;
        unit.pre_bn = KernelParams<Scalar>::batchnorm(cur_width);
        unit.body = detail::make_res_body<Scalar>(spec.bottleneck, cur_width,
                                                  width, inner, stride);
        unit.body.init_he(rng);
        if (cur_width != width || stride != 1) {
          unit.proj =
              KernelParams<Scalar>::conv2d(width, cur_width, 1, stride, 0);
          fill_normal(unit.proj.weights, rng,
                      std::sqrt(2.0 / static_cast<double>(cur_width)));
        }
        plan.res_groups.back().push_back(std::move(unit));
        cur_width = width;
      }
    }
  }

  plan.head_bn = KernelParams<Scalar>::batchnorm(cur_width);
  plan.head_linear = KernelParams<Scalar>::linear(spec.classes, cur_width);
  fill_normal(plan.head_linear.weights, rng,
              std::sqrt(2.0 / static_cast<double>(cur_width)));
  return plan;
}

/// Exact total of weight/bias/gamma/beta elements.
template <typename Scalar>
Index count_params(const NetworkPlan<Scalar>& plan) {
  Index n = plan.stem.param_count();
  for (const auto& span : plan.spans)
    for (const auto& b : span) n += b.param_count();
  for (const auto& grp : plan.res_groups)
    for (const auto& u : grp) n += u.param_count();
  n += plan.head_bn.param_count() + plan.head_linear.param_count();
  return n;
}

// ---------------------------------------------------------------------------
// forward / backward

template <typename Scalar>
struct UnitTape {
  Tensor<Scalar> x;       // unit input
  Tensor<Scalar> bn_out;  // pre-activation BN output (relu input)
  Tensor<Scalar> h;       // shared pre-activated input
  BatchStats<Scalar> stats;
  Tape<Scalar> body;
  std::vector<MeterToken> tokens;
};

template <typename Scalar>
struct HeadTape {
  Tensor<Scalar> x;       // head input (merged final feature map)
  Tensor<Scalar> bn_out;
  Tensor<Scalar> pooled;
  BatchStats<Scalar> stats;
  std::vector<MeterToken> tokens;
};

/// Everything one forward pass retains for the matching backward pass.
/// The reversible engine keeps span boundaries plus one save per
/// non-reversible layer; the stored engine keeps full tapes.
template <typename Scalar>
struct ForwardState {
  Engine engine = Engine::reversible;
  Tensor<Scalar> stem_input;
  std::vector<StackCheckpoint<Scalar>> span_checkpoints;
  std::vector<StackTapes<Scalar>> span_tapes;          // stored engine only
  std::vector<std::vector<UnitTape<Scalar>>> unit_tapes;  // resnet only
  HeadTape<Scalar> head;
  std::vector<MeterToken> tokens;

  /// Inputs saved because a non-reversible layer consumed them:
  /// the stem input plus one per engaged transition.
  Index nonreversible_save_count() const {
    Index n = 1;  // stem input
    for (const auto& cp : span_checkpoints)
      n += static_cast<Index>(cp.nonreversible_saves.size());
    return n;
  }
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> apply_transition(const Transition& t, const Tensor<Scalar>& x) {
  Tensor<Scalar> cur = t.pool ? avg_pool2x2(x) : x;
  if (t.out_channels != t.in_channels)
    cur = tile_channels(cur, t.out_channels);
  return cur;
}

template <typename Scalar>
Tensor<Scalar> transition_vjp(const Transition& t, const Shape& in_shape,
                              const Tensor<Scalar>& dy) {
  Tensor<Scalar> d = dy;
  if (t.out_channels != t.in_channels)
    d = tile_channels_vjp(t.in_channels, d);
  if (t.pool) d = avg_pool2x2_vjp(in_shape, d);
  return d;
}

}  // namespace detail

/// Forward pass. The reversible engine stores only span boundaries and
/// transition inputs; the stored engine additionally keeps every
/// intermediate activation (tapes), which is the memory baseline.
template <typename Scalar>
Tensor<Scalar> forward(NetworkPlan<Scalar>& plan, const Tensor<Scalar>& x,
                       Engine engine, ForwardState<Scalar>& state) {
  require(x.shape().c == plan.spec.in_channels &&
              x.shape().h == plan.spec.in_height &&
              x.shape().w == plan.spec.in_width,
          "forward: input shape " + x.shape().str() + " does not match spec " +
              std::to_string(plan.spec.in_channels) + "x" +
              std::to_string(plan.spec.in_height) + "x" +
              std::to_string(plan.spec.in_width));
  PhaseScope phase(Phase::forward);
  state = ForwardState<Scalar>{};
  state.engine = engine;
  state.tokens.emplace_back("act.save", x.bytes());
  state.stem_input = x;

  Tensor<Scalar> cur = conv2d(x, plan.stem);

  if (plan.spec.family == Family::revnet) {
    for (std::size_t g = 0; g < plan.spans.size(); ++g) {
      StackCheckpoint<Scalar> cp;
      if (plan.pre_span[g].has_value()) {
        cp.save_nonreversible(static_cast<Index>(g), cur);
        cur = detail::apply_transition(*plan.pre_span[g], cur);
      }
      auto parts = split_channels(cur);
      if (engine == Engine::reversible) {
        StackCheckpoint<Scalar> span_cp =
            stack_forward(plan.spans[g], parts.x1, parts.x2);
        cp.set_boundary(std::move(span_cp.boundary_y1),
                        std::move(span_cp.boundary_y2));
      } else {
        state.span_tapes.resize(plan.spans.size());
        auto [y1, y2] = stack_forward_stored(plan.spans[g], parts.x1,
                                             parts.x2, state.span_tapes[g]);
        cp.set_boundary(std::move(y1), std::move(y2));
      }
      cur = merge_channels(cp.boundary_y1, cp.boundary_y2);
      state.span_checkpoints.push_back(std::move(cp));
    }
  } else {
    state.unit_tapes.resize(plan.res_groups.size());
    for (std::size_t g = 0; g < plan.res_groups.size(); ++g) {
      for (auto& unit : plan.res_groups[g]) {
        UnitTape<Scalar> tape;
        auto [bn_out, st] = batchnorm_train(cur, unit.pre_bn);
        unit.pre_stats = st;
        Tensor<Scalar> h = relu(bn_out);
        Tensor<Scalar> body_out = unit.body.forward_tape(h, tape.body);
        Tensor<Scalar> shortcut =
            unit.has_proj() ? conv2d(h, unit.proj) : cur;
        tape.tokens.emplace_back(kActTag, cur.bytes());
        tape.tokens.emplace_back(kActTag, bn_out.bytes());
        tape.tokens.emplace_back(kActTag, h.bytes());
        tape.x = std::move(cur);
        tape.bn_out = std::move(bn_out);
        tape.h = std::move(h);
        tape.stats = std::move(st);
        cur = body_out + shortcut;
        state.unit_tapes[g].push_back(std::move(tape));
      }
    }
  }

  // classifier head
  auto [bn_out, st] = batchnorm_train(cur, plan.head_bn);
  Tensor<Scalar> h = relu(bn_out);
  Tensor<Scalar> pooled = global_avg_pool(h);
  Tensor<Scalar> logits = linear(pooled, plan.head_linear);
  state.head.tokens.emplace_back("act.save", cur.bytes());
  state.head.tokens.emplace_back("act.save", bn_out.bytes());
  state.head.tokens.emplace_back("act.save", pooled.bytes());
  state.head.x = std::move(cur);
  state.head.bn_out = std::move(bn_out);
  state.head.pooled = std::move(pooled);
  state.head.stats = std::move(st);
  return logits;
}

/// Gradients for every parameter tensor of the plan, in the same traversal
/// order as collect_param_tensors.
template <typename Scalar>
struct PlanGradients {
  KernelGrads<Scalar> stem;
  // revnet: per span, per block, F grads then G grads
  std::vector<std::vector<std::pair<std::vector<KernelGrads<Scalar>>,
                                    std::vector<KernelGrads<Scalar>>>>>
      blocks;
  // resnet: per group, per unit
  struct UnitGrads {
    KernelGrads<Scalar> pre_bn;
    std::vector<KernelGrads<Scalar>> body;
    KernelGrads<Scalar> proj;
  };
  std::vector<std::vector<UnitGrads>> units;
  KernelGrads<Scalar> head_bn;
  KernelGrads<Scalar> head_linear;
  Tensor<Scalar> dinput;
};

/// Backward pass from dlogits; consumes the forward state. The reversible
/// engine reconstructs span activations via repeated block reversal; the
/// stored engine replays its tapes.
template <typename Scalar>
PlanGradients<Scalar> backward(NetworkPlan<Scalar>& plan,
                               ForwardState<Scalar>& state,
                               const Tensor<Scalar>& dlogits,
                               bool replay = true) {
  PhaseScope phase(Phase::backward);
  PlanGradients<Scalar> grads;

  // head
  LinearGrads<Scalar> lg = linear_vjp(state.head.pooled, plan.head_linear,
                                      dlogits);
  grads.head_linear.dweights = std::move(lg.dw);
  grads.head_linear.dbias = std::move(lg.db);
  Tensor<Scalar> dh = global_avg_pool_vjp(state.head.x.shape(), lg.dx);
  dh = relu_vjp(state.head.bn_out, dh);
  BatchNormGrads<Scalar> hbg =
      batchnorm_vjp(state.head.x, plan.head_bn, state.head.stats, dh);
  grads.head_bn.dgamma = std::move(hbg.dgamma);
  grads.head_bn.dbias = std::move(hbg.dbeta);
  Tensor<Scalar> dcur = std::move(hbg.dx);
  state.head = HeadTape<Scalar>{};

  if (plan.spec.family == Family::revnet) {
    grads.blocks.resize(plan.spans.size());
    for (Index g = static_cast<Index>(plan.spans.size()) - 1; g >= 0; --g) {
      auto& span = plan.spans[static_cast<std::size_t>(g)];
      auto& cp = state.span_checkpoints[static_cast<std::size_t>(g)];
      auto dparts = split_channels(dcur);

      StackGrads<Scalar> sg;
      if (state.engine == Engine::reversible)
        sg = stack_backward(span, cp, dparts.x1, dparts.x2, replay);
      else
        sg = stack_backward_stored(
            span, state.span_tapes[static_cast<std::size_t>(g)], dparts.x1,
            dparts.x2);

      auto& span_grads = grads.blocks[static_cast<std::size_t>(g)];
      span_grads.resize(span.size());
      for (std::size_t u = 0; u < span.size(); ++u) {
        span_grads[u].first = std::move(sg.slot(span[u].f.get()));
        span_grads[u].second = std::move(sg.slot(span[u].g.get()));
      }

      dcur = merge_channels(sg.dx1, sg.dx2);
      if (plan.pre_span[static_cast<std::size_t>(g)].has_value()) {
        const Transition& t = *plan.pre_span[static_cast<std::size_t>(g)];
        const Shape& in_shape = cp.nonreversible_saves.front().second.shape();
        dcur = detail::transition_vjp(t, in_shape, dcur);
      }
      cp = StackCheckpoint<Scalar>{};
    }
  } else {
    grads.units.resize(plan.res_groups.size());
    for (Index g = static_cast<Index>(plan.res_groups.size()) - 1; g >= 0;
         --g) {
      auto& grp = plan.res_groups[static_cast<std::size_t>(g)];
      auto& tapes = state.unit_tapes[static_cast<std::size_t>(g)];
      grads.units[static_cast<std::size_t>(g)].resize(grp.size());
      for (Index u = static_cast<Index>(grp.size()) - 1; u >= 0; --u) {
        auto& unit = grp[static_cast<std::size_t>(u)];
        auto& tape = tapes[static_cast<std::size_t>(u)];
        auto& ug = grads.units[static_cast<std::size_t>(g)]
                       [static_cast<std::size_t>(u)];

        auto bg = unit.body.backward(tape.body, dcur);
        ug.body = std::move(bg.params);
        Tensor<Scalar> dh = std::move(bg.dx);
        Tensor<Scalar> dx_shortcut;
        if (unit.has_proj()) {
          ConvGrads<Scalar> pg = conv2d_vjp(tape.h, unit.proj, dcur);
          dh += pg.dx;
          ug.proj.dweights = std::move(pg.dw);
        } else {
          dx_shortcut = dcur;
        }
        dh = relu_vjp(tape.bn_out, dh);
        BatchNormGrads<Scalar> pbg =
            batchnorm_vjp(tape.x, unit.pre_bn, tape.stats, dh);
        ug.pre_bn.dgamma = std::move(pbg.dgamma);
        ug.pre_bn.dbias = std::move(pbg.dbeta);
        dcur = std::move(pbg.dx);
        if (!unit.has_proj()) dcur += dx_shortcut;
        tape = UnitTape<Scalar>{};
      }
    }
  }

  ConvGrads<Scalar> sg = conv2d_vjp(state.stem_input, plan.stem, dcur);
  grads.stem.dweights = std::move(sg.dw);
  grads.dinput = std::move(sg.dx);
  return grads;
}

// ---------------------------------------------------------------------------
// flattened parameter access (sgd, angle probe, grad_check)

template <typename Scalar>
void visit_kernel(std::vector<Tensor<Scalar>*>& out, KernelParams<Scalar>& p) {
  if (!p.weights.empty()) out.push_back(&p.weights);
  if (!p.bias.empty()) out.push_back(&p.bias);
  if (!p.gamma.empty()) out.push_back(&p.gamma);
}

template <typename Scalar>
void visit_kernel_grads(std::vector<Tensor<Scalar>*>& out,
                        KernelGrads<Scalar>& g) {
  if (!g.dweights.empty()) out.push_back(&g.dweights);
  if (!g.dbias.empty()) out.push_back(&g.dbias);
  if (!g.dgamma.empty()) out.push_back(&g.dgamma);
}

/// Every parameter tensor of the plan in a fixed traversal order.
template <typename Scalar>
std::vector<Tensor<Scalar>*> collect_param_tensors(NetworkPlan<Scalar>& plan) {
  std::vector<Tensor<Scalar>*> out;
  visit_kernel(out, plan.stem);
  for (auto& span : plan.spans)
    for (auto& b : span) {
      for (auto& p : b.f->params) visit_kernel(out, p);
      for (auto& p : b.g->params) visit_kernel(out, p);
    }
  for (auto& grp : plan.res_groups)
    for (auto& u : grp) {
      visit_kernel(out, u.pre_bn);
      for (auto& p : u.body.params) visit_kernel(out, p);
      if (u.has_proj()) visit_kernel(out, u.proj);
    }
  visit_kernel(out, plan.head_bn);
  visit_kernel(out, plan.head_linear);
  return out;
}

/// Matching traversal over a PlanGradients; aligned one-to-one with
/// collect_param_tensors.
template <typename Scalar>
std::vector<Tensor<Scalar>*> collect_grad_tensors(PlanGradients<Scalar>& g) {
  std::vector<Tensor<Scalar>*> out;
  visit_kernel_grads(out, g.stem);
  for (auto& span : g.blocks)
    for (auto& [fg, gg] : span) {
      for (auto& kg : fg) visit_kernel_grads(out, kg);
      for (auto& kg : gg) visit_kernel_grads(out, kg);
    }
  for (auto& grp : g.units)
    for (auto& u : grp) {
      visit_kernel_grads(out, u.pre_bn);
      for (auto& kg : u.body) visit_kernel_grads(out, kg);
      visit_kernel_grads(out, u.proj);
    }
  visit_kernel_grads(out, g.head_bn);
  visit_kernel_grads(out, g.head_linear);
  return out;
}

template <typename Scalar>
void visit_kernel_names(std::vector<std::string>& out, const std::string& base,
                        const KernelParams<Scalar>& p) {
  if (!p.weights.empty()) out.push_back(base + ".w");
  if (!p.bias.empty())
    out.push_back(base + (p.kind == KernelKind::batchnorm ? ".beta" : ".b"));
  if (!p.gamma.empty()) out.push_back(base + ".gamma");
}

/// Names aligned one-to-one with collect_param_tensors.
template <typename Scalar>
std::vector<std::string> collect_param_names(const NetworkPlan<Scalar>& plan) {
  std::vector<std::string> out;
  visit_kernel_names(out, "stem", plan.stem);
  for (std::size_t g = 0; g < plan.spans.size(); ++g)
    for (std::size_t u = 0; u < plan.spans[g].size(); ++u) {
      const auto& b = plan.spans[g][u];
      const std::string base =
          "g" + std::to_string(g) + ".b" + std::to_string(u);
      for (std::size_t i = 0; i < b.f->params.size(); ++i)
        visit_kernel_names(out, base + ".f.p" + std::to_string(i),
                           b.f->params[i]);
      for (std::size_t i = 0; i < b.g->params.size(); ++i)
        visit_kernel_names(out, base + ".g.p" + std::to_string(i),
                           b.g->params[i]);
    }
  for (std::size_t g = 0; g < plan.res_groups.size(); ++g)
    for (std::size_t u = 0; u < plan.res_groups[g].size(); ++u) {
      const auto& unit = plan.res_groups[g][u];
      const std::string base =
          "g" + std::to_string(g) + ".u" + std::to_string(u);
      visit_kernel_names(out, base + ".pre_bn", unit.pre_bn);
      for (std::size_t i = 0; i < unit.body.params.size(); ++i)
        visit_kernel_names(out, base + ".body.p" + std::to_string(i),
                           unit.body.params[i]);
      if (unit.has_proj()) visit_kernel_names(out, base + ".proj", unit.proj);
    }
  visit_kernel_names(out, "head_bn", plan.head_bn);
  visit_kernel_names(out, "head_linear", plan.head_linear);
  return out;
}

/// Flattens a gradient set to one f64 vector (for the angle probe).
template <typename Scalar>
std::vector<double> flatten_grads(PlanGradients<Scalar>& g) {
  std::vector<double> out;
  for (Tensor<Scalar>* t : collect_grad_tensors(g))
    for (Index i = 0; i < t->numel(); ++i)
      out.push_back(static_cast<double>((*t)[i]));
  return out;
}

}  // namespace revnet
