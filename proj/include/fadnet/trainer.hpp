#pragma once

// Adam optimization with the round-based loss-weight schedule: four rounds,
// learning rate reset to 1e-4 at each round boundary and halved every 10
// epochs within a round.

#include <functional>
#include <iostream>
#include <numeric>

#include "fadnet/data_io.hpp"
#include "fadnet/network.hpp"

namespace fadnet {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double initial_lr = 1e-4;
  int halve_every = 10;  // epochs

  double lr_at(int epoch_in_round) const {
    return initial_lr * std::pow(0.5, double(epoch_in_round / halve_every));
  }
};

// Moments are kept in double regardless of parameter precision.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;

  template <typename T>
  static AdamState init_for(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    AdamState s;
    s.m.resize(params.size());
    s.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.m[i].assign(params[i].second.numel(), 0.0);
      s.v[i].assign(params[i].second.numel(), 0.0);
    }
    return s;
  }
};

template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState& state, double lr,
               const OptimizerConfig& cfg = {}) {
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& [name, t] = params[p];
    if (!t.has_grad())
      throw ContractError("adam_step: missing gradient for parameter '" + name + "'");
    auto g = t.grad();
    auto d = t.data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double gi = double(g[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      d[i] = T(double(d[i]) - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

struct ScheduleEntry {
  std::array<double, kNumScales> weights;
  double lr;
};

// round is 1-based, epoch 0-based within the round.
inline ScheduleEntry schedule(int round, int epoch, const LossWeightSchedule& sched,
                              const OptimizerConfig& opt = {}) {
  if (round < 1 || round > int(sched.rounds.size()))
    throw ContractError("schedule: round " + std::to_string(round) + " out of range 1.." +
                        std::to_string(sched.rounds.size()));
  const LossWeightRound& r = sched.rounds[round - 1];
  if (epoch < 0 || epoch >= r.epochs)
    throw ContractError("schedule: epoch " + std::to_string(epoch) + " outside round budget " +
                        std::to_string(r.epochs));
  return {r.weights, opt.lr_at(epoch)};
}

struct TrainConfig {
  int batch_size = 4;
  unsigned seed = 7;
  bool reset_moments_each_round = false;  // lr resets at round boundaries; moments persist
  bool normalize_inputs = true;
  bool eval_train_set = true;  // per-epoch train-set EPE; off saves a full eval pass
  PreprocessConfig preprocess{};
};

struct EpochLog {
  int round = 0, epoch = 0;
  double lr = 0, train_loss = 0, train_epe = 0, test_epe = 0;
};

template <typename T>
struct TrainResult {
  std::vector<EpochLog> log;
  double initial_test_epe = 0;
  std::array<double, 4> round_final_test_epe{};
};

template <typename T>
Tensor<T> batch_concat(const std::vector<Tensor<T>>& ts) {
  const Shape4 s0 = ts[0].shape();
  Tensor<T> out({int(ts.size()) * s0.n, s0.c, s0.h, s0.w});
  std::size_t off = 0;
  for (const auto& t : ts) {
    std::copy_n(t.data().data(), t.numel(), out.data().data() + off);
    off += t.numel();
  }
  return out;
}

template <typename T>
class Trainer {
 public:
  Trainer(FadNet<T>& model, OptimizerConfig opt, LossWeightSchedule sched, TrainConfig cfg)
      : model_(model), opt_(opt), sched_(std::move(sched)), cfg_(cfg),
        state_(AdamState::init_for(model.params().entries())), rng_(cfg.seed) {}

  AdamState& state() { return state_; }
  std::uint64_t& step_count() { return state_.step; }

  // Mean full-resolution EPE over a sample set, model in inference mode.
  double evaluate(const std::vector<StereoSample<T>>& samples) {
    NoGradGuard ng;
    double acc = 0;
    std::size_t n = 0;
    for (const auto& s : samples) {
      Tensor<T> pred = model_.infer(net_input(s.left), net_input(s.right));
      auto r = epe(pred, *s.gt, effective_mask(s));
      if (!r.empty_mask) {
        acc += r.value;
        ++n;
      }
    }
    return n ? acc / double(n) : 0.0;
  }

  // One optimization step on a batch; returns the loss value.
  double train_step(const std::vector<const StereoSample<T>*>& batch,
                    const std::array<double, kNumScales>& weights, double lr) {
    std::vector<Tensor<T>> lefts, rights, gts;
    std::vector<std::vector<std::uint8_t>> valid;
    for (const auto* s : batch) {
      lefts.push_back(net_input(s->left));
      rights.push_back(net_input(s->right));
      gts.push_back(s->gt->detach());
    }
    Tensor<T> left = batch_concat(lefts);
    Tensor<T> right = batch_concat(rights);
    Tensor<T> gt = batch_concat(gts);

    // Fold per-sample occlusion masks into the base validity before the
    // pyramid is built so occluded pixels are excluded at every scale.
    ValidityMask base;
    base.shape = gt.shape();
    base.valid.reserve(gt.numel());
    for (const auto* s : batch) {
      ValidityMask m = effective_mask(*s);
      base.valid.insert(base.valid.end(), m.valid.begin(), m.valid.end());
    }
    GtPyramid<T> pyr = build_gt_pyramid(gt, &base);

    auto out = model_.forward(left, right);
    auto ml = multiscale_loss(out.final.maps, pyr.gt, pyr.masks, weights);
    const double loss_value = double(ml.loss.item());
    if (!std::isfinite(loss_value))
      throw NumericalError("training loss is not finite at step " + std::to_string(state_.step));

    for (auto& [name, p] : model_.params().entries()) p.zero_grad();
    backward(ml.loss);
    adam_step(model_.params().entries(), state_, lr, opt_);
    return loss_value;
  }

  TrainResult<T> train(const std::vector<StereoSample<T>>& train_set,
                       const std::vector<StereoSample<T>>& test_set,
                       std::ostream* metric_log = nullptr,
                       const std::function<void(int /*round*/)>& on_round_end = {}) {
    if (train_set.empty()) throw ContractError("train: empty training set");
    TrainResult<T> result;
    result.initial_test_epe = evaluate(test_set);
    if (metric_log)
      (*metric_log) << "event=init test_epe=" << result.initial_test_epe << "\n";

    std::vector<std::size_t> order(train_set.size());

    for (int round = 1; round <= int(sched_.rounds.size()); ++round) {
      if (cfg_.reset_moments_each_round && round > 1) {
        state_ = AdamState::init_for(model_.params().entries());
      }
      for (int epoch = 0; epoch < sched_.rounds[round - 1].epochs; ++epoch) {
        const ScheduleEntry se = schedule(round, epoch, sched_, opt_);
        // Fresh identity permutation each epoch so the visit order depends
        // only on the rng state, which checkpoints capture.
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng_);
        double loss_acc = 0;
        int batches = 0;
        for (std::size_t i = 0; i + cfg_.batch_size <= order.size(); i += cfg_.batch_size) {
          std::vector<const StereoSample<T>*> batch;
          for (int b = 0; b < cfg_.batch_size; ++b) batch.push_back(&train_set[order[i + b]]);
          loss_acc += train_step(batch, se.weights, se.lr);
          ++batches;
        }
        EpochLog log;
        log.round = round;
        log.epoch = epoch;
        log.lr = se.lr;
        log.train_loss = batches ? loss_acc / batches : 0.0;
        log.train_epe = cfg_.eval_train_set ? evaluate(train_set) : 0.0;
        log.test_epe = evaluate(test_set);
        result.log.push_back(log);
        if (metric_log)
          (*metric_log) << "round=" << round << " epoch=" << epoch << " lr=" << log.lr
                        << " train_loss=" << log.train_loss << " train_epe=" << log.train_epe
                        << " test_epe=" << log.test_epe << "\n";
      }
      result.round_final_test_epe[std::size_t(round - 1)] =
          result.log.empty() ? 0.0 : result.log.back().test_epe;
      if (on_round_end) on_round_end(round);
    }
    return result;
  }

  Tensor<T> net_input(const Tensor<T>& img) const {
    return cfg_.normalize_inputs ? normalize_colors(img, cfg_.preprocess) : img.detach();
  }

  std::string serialize_rng() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }
  void deserialize_rng(const std::string& s) {
    std::istringstream is(s);
    is >> rng_;
  }

 private:
  FadNet<T>& model_;
  OptimizerConfig opt_;
  LossWeightSchedule sched_;
  TrainConfig cfg_;
  AdamState state_;
  std::mt19937 rng_;
};

}  // namespace fadnet
