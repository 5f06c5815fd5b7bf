#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "revnet/arch.hpp"
#include "revnet/data.hpp"
#include "revnet/metrics.hpp"
#include "revnet/tensor.hpp"

namespace revnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

struct TrainConfig {
  ArchSpec arch;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  Index batch_size = 100;
  Index total_steps = 0;
  std::vector<Index> decay_steps = {40000, 60000};
  double decay_factor = 0.1;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  Index angle_interval = 0;  // 0 disables the angle probe
  Engine engine = Engine::reversible;
  Augment augment = Augment::none;

  std::string data = "synthetic";  // "synthetic" or "cifar10:<path>"
  double synthetic_margin = 1.0;
  double synthetic_noise = 0.25;
  Index synthetic_count = 2048;

  void validate() const {
    arch.validate();
    if (lr <= 0) throw ConfigError("config: lr must be > 0");
    if (batch_size <= 0) throw ConfigError("config: batch_size must be > 0");
    if (total_steps < 0) throw ConfigError("config: total_steps must be >= 0");
    if (decay_factor <= 0) throw ConfigError("config: decay_factor must be > 0");
    for (std::size_t i = 0; i < decay_steps.size(); ++i) {
      if (i > 0 && decay_steps[i] <= decay_steps[i - 1])
        throw ConfigError("config: decay_steps must be strictly increasing");
      if (total_steps > 0 && decay_steps[i] >= total_steps)
        throw ConfigError("config: decay step " +
                          std::to_string(decay_steps[i]) +
                          " is not below total_steps " +
                          std::to_string(total_steps));
    }
  }
};

/// Factor-`decay_factor` drops at each configured step (inclusive).
inline double lr_at(const TrainConfig& cfg, Index step) {
  double lr = cfg.lr;
  for (Index ds : cfg.decay_steps)
    if (step >= ds) lr *= cfg.decay_factor;
  return lr;
}

/// Momentum buffers, one per parameter tensor, zero initialized.
template <typename Scalar>
struct SgdState {
  std::vector<Tensor<Scalar>> velocity;

  static SgdState zeros_like(const std::vector<Tensor<Scalar>*>& params) {
    SgdState s;
    s.velocity.reserve(params.size());
    for (const Tensor<Scalar>* p : params)
      s.velocity.emplace_back(p->shape());
    return s;
  }
};

/// v <- momentum*v + grad + weight_decay*param;  param <- param - lr(step)*v
template <typename Scalar>
void sgd_step(const std::vector<Tensor<Scalar>*>& params,
              const std::vector<Tensor<Scalar>*>& grads,
              SgdState<Scalar>& state, const TrainConfig& cfg, Index step) {
  require(params.size() == grads.size() &&
              params.size() == state.velocity.size(),
          "sgd_step: " + std::to_string(params.size()) + " params vs " +
              std::to_string(grads.size()) + " grads vs " +
              std::to_string(state.velocity.size()) + " velocity slots");
  const Scalar lr = static_cast<Scalar>(lr_at(cfg, step));
  const Scalar mom = static_cast<Scalar>(cfg.momentum);
  const Scalar wd = static_cast<Scalar>(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = *params[i];
    const Tensor<Scalar>& g = *grads[i];
    Tensor<Scalar>& v = state.velocity[i];
    require(p.shape() == g.shape() && p.shape() == v.shape(),
            "sgd_step: slot " + std::to_string(i) + " shape mismatch " +
                p.shape().str() + " vs " + g.shape().str());
    for (Index j = 0; j < p.numel(); ++j) {
      v[j] = mom * v[j] + g[j] + wd * p[j];
      p[j] -= lr * v[j];
    }
  }
}

/// Per-step metrics row; angle_deg is empty unless probed at this step.
struct StepMetrics {
  Index step = 0;
  double loss = 0.0;
  double train_err = 0.0;
  double angle_deg = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t peak_bytes = 0;
};

inline void write_metrics_header(std::ostream& os) {
  os << "step,loss,train_err,angle_deg,peak_bytes\n";
}

inline void write_metrics_row(std::ostream& os, const StepMetrics& m) {
  os << m.step << ',' << std::setprecision(17) << m.loss << ','
     << std::setprecision(6) << m.train_err << ',';
  if (!std::isnan(m.angle_deg))
    os << std::setprecision(10) << m.angle_deg;
  os << ',' << m.peak_bytes << '\n';
}

template <typename Scalar>
struct TrainRun {
  NetworkPlan<Scalar> plan;
  std::vector<StepMetrics> metrics;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double max_angle_deg = 0.0;
};

namespace detail {

template <typename Scalar>
double batch_error(const Tensor<Scalar>& logits,
                   const std::vector<Index>& labels) {
  const Shape& s = logits.shape();
  Index wrong = 0;
  for (Index b = 0; b < s.n; ++b) {
    Index best = 0;
    for (Index c = 1; c < s.c; ++c)
      if (logits(b, c, 0, 0) > logits(b, best, 0, 0)) best = c;
    if (best != labels[static_cast<std::size_t>(b)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(s.n);
}

}  // namespace detail

/// The training loop: deterministic under a fixed seed, single-threaded.
/// Per step: assemble a seeded batch, forward via the configured engine,
/// backward, SGD update; log loss/error/angle/peak bytes. A non-finite
/// loss aborts with the offending step number.
template <typename Scalar>
TrainRun<Scalar> train_run(const TrainConfig& cfg, const Dataset& data,
                           std::ostream& metrics_csv) {
  cfg.validate();
  require(data.classes() == cfg.arch.classes &&
              data.channels() == cfg.arch.in_channels &&
              data.height() == cfg.arch.in_height &&
              data.width() == cfg.arch.in_width,
          "train: dataset shape " + std::to_string(data.channels()) + "x" +
              std::to_string(data.height()) + "x" +
              std::to_string(data.width()) + " (" +
              std::to_string(data.classes()) + " classes) does not match " +
              "arch input");

  TrainRun<Scalar> run;
  run.plan = build<Scalar>(cfg.arch, cfg.seed);
  auto params = collect_param_tensors(run.plan);
  auto sgd = SgdState<Scalar>::zeros_like(params);

  write_metrics_header(metrics_csv);

  for (Index step = 0; step < cfg.total_steps; ++step) {
    Rng step_rng(detail::mix_seed(cfg.seed, 0x57e9,
                                  static_cast<std::uint64_t>(step)));
    std::vector<Index> indices(static_cast<std::size_t>(cfg.batch_size));
    for (auto& i : indices)
      i = static_cast<Index>(step_rng.raw() %
                             static_cast<std::uint64_t>(data.size()));
    auto batch = data.make_batch<Scalar>(indices, cfg.augment, &step_rng);

    StepMetrics m;
    m.step = step;
    MemMeter meter;
    LossResult<Scalar> loss;
    ForwardState<Scalar> state;
    PlanGradients<Scalar> grads;
    {
      MeterScope scope(meter);
      auto logits = forward(run.plan, batch.images, cfg.engine, state);
      loss = softmax_xent(logits, batch.labels);
      m.train_err = detail::batch_error(logits, batch.labels);
      grads = backward(run.plan, state, loss.dlogits);
    }
    m.loss = static_cast<double>(loss.loss);
    m.peak_bytes = meter.peak_bytes();
    if (!std::isfinite(m.loss))
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));

    if (cfg.angle_interval > 0 && step % cfg.angle_interval == 0) {
      // same batch, same parameters, the other engine
      const Engine other = cfg.engine == Engine::reversible
                               ? Engine::stored
                               : Engine::reversible;
      ForwardState<Scalar> st2;
      auto logits2 = forward(run.plan, batch.images, other, st2);
      auto loss2 = softmax_xent(logits2, batch.labels);
      auto grads2 = backward(run.plan, st2, loss2.dlogits);
      auto va = flatten_grads(grads);
      auto vb = flatten_grads(grads2);
      auto rep = grad_angle(va, vb);
      if (!rep.undefined) {
        m.angle_deg = rep.angle_degrees;
        run.max_angle_deg = std::max(run.max_angle_deg, rep.angle_degrees);
      }
    }

    auto gtens = collect_grad_tensors(grads);
    sgd_step(params, gtens, sgd, cfg, step);

    write_metrics_row(metrics_csv, m);
    run.metrics.push_back(m);
    run.final_loss = m.loss;
    run.final_accuracy = 1.0 - m.train_err;
  }
  return run;
}

}  // namespace revnet
