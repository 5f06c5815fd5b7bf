#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "revnet/coupling.hpp"
#include "revnet/metrics.hpp"
#include "revnet/residual.hpp"
#include "revnet/tensor.hpp"

namespace revnet {

/// Total derivatives produced by reversing one block: input cotangents plus
/// the weight gradients of F and G, aligned with each function's params.
template <typename Scalar>
struct GradBundle {
  Tensor<Scalar> dx1;
  Tensor<Scalar> dx2;
  std::vector<KernelGrads<Scalar>> dwf;
  std::vector<KernelGrads<Scalar>> dwg;
};

/// What a reversible span retains after its forward pass: the boundary
/// outputs, plus one saved input per non-reversible layer (filled in by the
/// network level; a bare stack of reversible blocks saves nothing else).
template <typename Scalar>
struct StackCheckpoint {
  Tensor<Scalar> boundary_y1;
  Tensor<Scalar> boundary_y2;
  std::vector<std::pair<Index, Tensor<Scalar>>> nonreversible_saves;
  std::vector<MeterToken> tokens;

  void set_boundary(Tensor<Scalar> y1, Tensor<Scalar> y2) {
    tokens.emplace_back("act.boundary", y1.bytes());
    tokens.emplace_back("act.boundary", y2.bytes());
    boundary_y1 = std::move(y1);
    boundary_y2 = std::move(y2);
  }

  void save_nonreversible(Index layer_index, Tensor<Scalar> input) {
    tokens.emplace_back("act.save", input.bytes());
    nonreversible_saves.emplace_back(layer_index, std::move(input));
  }
};

/// Runs a span of reversible blocks forward, capturing per-block batch
/// statistics for replay and keeping only the output boundary.
template <typename Scalar>
StackCheckpoint<Scalar> stack_forward(
    std::vector<ReversibleBlock<Scalar>>& blocks, const Tensor<Scalar>& x1,
    const Tensor<Scalar>& x2) {
  PhaseScope phase(Phase::forward);
  Tensor<Scalar> y1 = x1, y2 = x2;
  for (auto& b : blocks) std::tie(y1, y2) = couple_forward(b, y1, y2);
  StackCheckpoint<Scalar> cp;
  cp.set_boundary(std::move(y1), std::move(y2));
  return cp;
}

template <typename Scalar>
struct BlockReverseResult {
  Tensor<Scalar> x1;
  Tensor<Scalar> x2;
  GradBundle<Scalar> grads;
};

/// Algorithm "reversible residual block backprop", the 4N variant: the
/// activations computed while reconstructing G(z1) and F(x2) are taped and
/// reused by the vjp sweeps instead of being evaluated a third time.
///
///   z1 = y1;  x2 = y2 - G(z1);  x1 = z1 - F(x2)
///   dz1 = dy1 + (dG/dz1)^T dy2,  also yielding dwG
///   dx2 = dy2 + (dF/dx2)^T dz1,  also yielding dwF
///   dx1 = dz1
///
/// Each tape is released right after its last vjp consumer.
template <typename Scalar>
BlockReverseResult<Scalar> block_reverse_backprop(
    const ReversibleBlock<Scalar>& block, const Tensor<Scalar>& y1,
    const Tensor<Scalar>& y2, const Tensor<Scalar>& dy1,
    const Tensor<Scalar>& dy2, bool replay = true) {
  require(y1.shape() == y2.shape() && dy1.shape() == y1.shape() &&
              dy2.shape() == y2.shape(),
          "block_reverse_backprop: shape mismatch, y1 " + y1.shape().str() +
              " y2 " + y2.shape().str() + " dy1 " + dy1.shape().str() +
              " dy2 " + dy2.shape().str());
  if (replay)
    require(block.has_replay_stats(),
            "block_reverse_backprop: replay demanded but block has no "
            "captured stats");
  PhaseScope phase(Phase::backward);

  ResidualFn<Scalar>& f = *block.f;
  ResidualFn<Scalar>& g = *block.g;
  BlockReverseResult<Scalar> out;

  // reconstruction, with tapes
  const Tensor<Scalar>& z1 = y1;
  Tape<Scalar> tape_g;
  Tensor<Scalar> gz =
      replay ? g.forward_replay_tape(z1, block.stats_g, tape_g)
             : g.forward_tape(z1, tape_g);
  out.x2 = y2 - gz;
  Tape<Scalar> tape_f;
  Tensor<Scalar> fx =
      replay ? f.forward_replay_tape(out.x2, block.stats_f, tape_f)
             : f.forward_tape(out.x2, tape_f);
  out.x1 = z1 - fx;

  // backprop, reusing the reconstruction tapes
  auto gg = g.backward(tape_g, dy2);
  tape_g = Tape<Scalar>{};
  Tensor<Scalar> dz1 = dy1 + gg.dx;
  out.grads.dwg = std::move(gg.params);

  auto gf = f.backward(tape_f, dz1);
  tape_f = Tape<Scalar>{};
  out.grads.dx2 = dy2 + gf.dx;
  out.grads.dwf = std::move(gf.params);
  out.grads.dx1 = std::move(dz1);
  return out;
}

/// Weight gradients for every distinct residual function in a stack, in
/// first-encounter order over blocks (F before G). Blocks sharing a
/// function accumulate into the same slot.
template <typename Scalar>
struct StackGrads {
  Tensor<Scalar> dx1;
  Tensor<Scalar> dx2;
  std::vector<const ResidualFn<Scalar>*> fns;
  std::vector<std::vector<KernelGrads<Scalar>>> fn_grads;

  std::vector<KernelGrads<Scalar>>& slot(const ResidualFn<Scalar>* fn) {
    for (std::size_t i = 0; i < fns.size(); ++i)
      if (fns[i] == fn) return fn_grads[i];
    fns.push_back(fn);
    fn_grads.emplace_back();
    return fn_grads.back();
  }

  void accumulate(const ResidualFn<Scalar>* fn,
                  std::vector<KernelGrads<Scalar>>&& grads) {
    auto& s = slot(fn);
    if (s.empty()) {
      s = std::move(grads);
      return;
    }
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += grads[i];
  }
};

namespace detail {

template <typename Scalar>
void register_stack_slots(const std::vector<ReversibleBlock<Scalar>>& blocks,
                          StackGrads<Scalar>& out) {
  for (const auto& b : blocks) {
    out.slot(b.f.get());
    out.slot(b.g.get());
  }
}

}  // namespace detail

/// Applies block reversal repeatedly from the stack's output boundary back
/// to its input. Only a constant number of activation tensors are live at
/// any point, independent of depth.
template <typename Scalar>
StackGrads<Scalar> stack_backward(
    const std::vector<ReversibleBlock<Scalar>>& blocks,
    const StackCheckpoint<Scalar>& checkpoint, const Tensor<Scalar>& dy1,
    const Tensor<Scalar>& dy2, bool replay = true) {
  PhaseScope phase(Phase::backward);
  StackGrads<Scalar> out;
  detail::register_stack_slots(blocks, out);

  Tensor<Scalar> y1 = checkpoint.boundary_y1;
  Tensor<Scalar> y2 = checkpoint.boundary_y2;
  Tensor<Scalar> d1 = dy1;
  Tensor<Scalar> d2 = dy2;
  MeterToken work("act.work", y1.bytes() + y2.bytes() + d1.bytes() +
                                  d2.bytes());

  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    BlockReverseResult<Scalar> r =
        block_reverse_backprop(*it, y1, y2, d1, d2, replay);
    y1 = std::move(r.x1);
    y2 = std::move(r.x2);
    d1 = std::move(r.grads.dx1);
    d2 = std::move(r.grads.dx2);
    out.accumulate(it->f.get(), std::move(r.grads.dwf));
    out.accumulate(it->g.get(), std::move(r.grads.dwg));
  }
  out.dx1 = std::move(d1);
  out.dx2 = std::move(d2);
  return out;
}

/// Tapes retained by a stored-activation forward pass, one pair per block.
template <typename Scalar>
struct StackTapes {
  std::vector<std::pair<Tape<Scalar>, Tape<Scalar>>> per_block;  // (F, G)
};

/// Forward pass that stores every intermediate activation (the baseline).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> stack_forward_stored(
    std::vector<ReversibleBlock<Scalar>>& blocks, const Tensor<Scalar>& x1,
    const Tensor<Scalar>& x2, StackTapes<Scalar>& tapes) {
  PhaseScope phase(Phase::forward);
  Tensor<Scalar> y1 = x1, y2 = x2;
  tapes.per_block.clear();
  tapes.per_block.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    Tensor<Scalar> fx = b.f->forward_tape(y2, tapes.per_block[i].first,
                                          &b.stats_f);
    Tensor<Scalar> z1 = y1 + fx;
    Tensor<Scalar> gz = b.g->forward_tape(z1, tapes.per_block[i].second,
                                          &b.stats_g);
    y2 += gz;
    y1 = std::move(z1);
  }
  return {std::move(y1), std::move(y2)};
}

/// Backward sweep over stored tapes; each block's tapes are released as
/// soon as its vjps are done.
template <typename Scalar>
StackGrads<Scalar> stack_backward_stored(
    const std::vector<ReversibleBlock<Scalar>>& blocks,
    StackTapes<Scalar>& tapes, const Tensor<Scalar>& dy1,
    const Tensor<Scalar>& dy2) {
  require(tapes.per_block.size() == blocks.size(),
          "stack_backward_stored: tape count mismatch");
  PhaseScope phase(Phase::backward);
  StackGrads<Scalar> out;
  detail::register_stack_slots(blocks, out);

  Tensor<Scalar> d1 = dy1;
  Tensor<Scalar> d2 = dy2;
  for (Index i = static_cast<Index>(blocks.size()) - 1; i >= 0; --i) {
    const auto& b = blocks[static_cast<std::size_t>(i)];
    auto& [tape_f, tape_g] = tapes.per_block[static_cast<std::size_t>(i)];

    auto gg = b.g->backward(tape_g, d2);
    tape_g = Tape<Scalar>{};
    Tensor<Scalar> dz1 = d1 + gg.dx;
    out.accumulate(b.g.get(), std::move(gg.params));

    auto gf = b.f->backward(tape_f, dz1);
    tape_f = Tape<Scalar>{};
    d2 += gf.dx;
    out.accumulate(b.f.get(), std::move(gf.params));
    d1 = std::move(dz1);
  }
  out.dx1 = std::move(d1);
  out.dx2 = std::move(d2);
  return out;
}

/// Reference implementation retaining every intermediate activation: runs
/// its own forward from (x1, x2), then backprop over the stored tapes.
/// The correctness oracle and memory baseline for stack_backward.
template <typename Scalar>
StackGrads<Scalar> stored_backprop(std::vector<ReversibleBlock<Scalar>>& blocks,
                                   const Tensor<Scalar>& x1,
                                   const Tensor<Scalar>& x2,
                                   const Tensor<Scalar>& dy1,
                                   const Tensor<Scalar>& dy2) {
  StackTapes<Scalar> tapes;
  stack_forward_stored(blocks, x1, x2, tapes);
  return stack_backward_stored(blocks, tapes, dy1, dy2);
}

// ---------------------------------------------------------------------------
// finite-difference harness

struct GradCheckReport {
  double max_rel_err = 0.0;
  Index checked_coords = 0;
  Index worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool empty() const { return checked_coords == 0; }
};

/// Central-difference comparison of an analytic gradient over parameter
/// coordinates. f64 only; `step` must lie in [1e-7, 1e-3]. When there are
/// more coordinates than `max_coords`, a seeded random subsample of at
/// least 200 coordinates is checked.
inline GradCheckReport grad_check(
    const std::function<double()>& loss,
    const std::vector<double*>& coords,
    const std::vector<double>& analytic, double step = 1e-5,
    Index max_coords = 200, std::uint64_t seed = 0) {
  if (!(step >= 1e-7 && step <= 1e-3))
    throw std::invalid_argument("grad_check: step " + std::to_string(step) +
                                " outside [1e-7, 1e-3]");
  if (coords.size() != analytic.size())
    throw std::invalid_argument("grad_check: coordinate/gradient size "
                                "mismatch");

  GradCheckReport rep;
  const Index total = static_cast<Index>(coords.size());
  std::vector<Index> picks;
  if (total <= max_coords) {
    picks.resize(static_cast<std::size_t>(total));
    for (Index i = 0; i < total; ++i) picks[static_cast<std::size_t>(i)] = i;
  } else {
    Rng rng(seed);
    const Index want = std::max<Index>(max_coords, 200);
    std::vector<char> taken(static_cast<std::size_t>(total), 0);
    while (static_cast<Index>(picks.size()) < std::min(want, total)) {
      Index i = static_cast<Index>(rng.raw() % static_cast<std::uint64_t>(total));
      if (!taken[static_cast<std::size_t>(i)]) {
        taken[static_cast<std::size_t>(i)] = 1;
        picks.push_back(i);
      }
    }
  }

  for (Index i : picks) {
    double* p = coords[static_cast<std::size_t>(i)];
    const double saved = *p;
    *p = saved + step;
    const double fp = loss();
    *p = saved - step;
    const double fm = loss();
    *p = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = i;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
    ++rep.checked_coords;
  }
  return rep;
}

}  // namespace revnet
