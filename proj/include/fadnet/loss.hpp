#pragma once

// Multi-scale smooth-L1 supervision, the round-based loss-weight schedule,
// and disparity metrics (EPE, D1 outlier rate) with validity masking.

#include <array>
#include <cstdint>

#include "fadnet/tensor.hpp"

namespace fadnet {

inline constexpr int kNumScales = 7;
inline constexpr double kMaxValidDisparity = 192.0;

// A pixel is valid iff ground truth is finite, > 0 and <= 192.
struct ValidityMask {
  Shape4 shape;
  std::vector<std::uint8_t> valid;

  std::size_t count_valid() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

template <typename T>
ValidityMask make_validity_mask(const Tensor<T>& gt) {
  ValidityMask m;
  m.shape = gt.shape();
  m.valid.resize(gt.numel());
  for (std::size_t i = 0; i < m.valid.size(); ++i) {
    const T v = gt.data()[i];
    m.valid[i] = std::isfinite(double(v)) && v > T(0) && double(v) <= kMaxValidDisparity;
  }
  return m;
}

template <typename T>
ValidityMask full_mask(const Tensor<T>& like) {
  ValidityMask m;
  m.shape = like.shape();
  m.valid.assign(like.numel(), 1);
  return m;
}

template <typename T>
T smooth_l1(T x) {
  const T ax = std::abs(x);
  return ax < T(1) ? T(0.5) * x * x : ax - T(0.5);
}

template <typename T>
struct ScaleLossResult {
  Tensor<T> loss;         // scalar; participates in the tape through pred
  bool empty_mask = false;
  std::size_t valid_count = 0;
};

// Mean smooth-L1 over valid pixels; gradient flows into pred only.
template <typename T>
ScaleLossResult<T> scale_loss(const Tensor<T>& pred, const Tensor<T>& gt, const ValidityMask& mask) {
  require(pred.shape() == gt.shape(),
          "scale_loss: pred " + pred.shape().str() + " vs gt " + gt.shape().str());
  require(mask.shape == pred.shape(), "scale_loss: mask shape mismatch " + mask.shape.str());

  std::size_t n_valid = 0;
  T acc = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (!mask.valid[i]) continue;
    ++n_valid;
    acc += smooth_l1(gt.data()[i] - pred.data()[i]);
  }

  ScaleLossResult<T> r;
  r.valid_count = n_valid;
  r.empty_mask = n_valid == 0;
  const T value = n_valid ? acc / T(n_valid) : T(0);
  auto pp = pred.node();
  auto pg = gt.node();
  auto mvalid = mask.valid;  // copied into the closure
  r.loss = make_op<T>({1, 1, 1, 1}, {value}, {pred}, [pp, pg, mvalid, n_valid](TensorNode<T>& self) {
    if (!pp->requires_grad || n_valid == 0) return;
    pp->ensure_grad();
    const T g = self.grad[0] / T(n_valid);
    for (std::size_t i = 0; i < pp->data.size(); ++i) {
      if (!mvalid[i]) continue;
      const T diff = pg->data[i] - pp->data[i];
      // d smooth_l1(diff)/d pred = -clamp(diff, -1, 1)
      pp->grad[i] -= g * std::min(std::max(diff, T(-1)), T(1));
    }
  });
  return r;
}

struct LossWeightRound {
  std::array<double, kNumScales> weights;
  int epochs;
};

// Four-round coarse-to-fine weight schedule.
struct LossWeightSchedule {
  std::vector<LossWeightRound> rounds;

  static LossWeightSchedule standard() {
    return LossWeightSchedule{{
        {{0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005}, 20},
        {{0.6, 0.32, 0.08, 0.04, 0.02, 0.01, 0.005}, 20},
        {{0.8, 0.16, 0.04, 0.02, 0.01, 0.005, 0.0025}, 20},
        {{1.0, 0, 0, 0, 0, 0, 0}, 30},
    }};
  }

  // Same weight rows with shortened per-round epoch counts for desk-scale runs.
  static LossWeightSchedule desk(std::array<int, 4> epochs) {
    LossWeightSchedule s = standard();
    for (int i = 0; i < 4; ++i) s.rounds[i].epochs = epochs[i];
    return s;
  }
};

template <typename T>
struct MultiScaleLossResult {
  Tensor<T> loss;
  std::array<T, kNumScales> per_scale{};
  bool any_empty_mask = false;
};

template <typename T>
MultiScaleLossResult<T> multiscale_loss(const std::vector<Tensor<T>>& preds,
                                        const std::vector<Tensor<T>>& gt_pyramid,
                                        const std::vector<ValidityMask>& masks,
                                        const std::array<double, kNumScales>& weights) {
  if (preds.size() != kNumScales || gt_pyramid.size() != kNumScales || masks.size() != kNumScales)
    throw DimensionError("multiscale_loss: expected " + std::to_string(kNumScales) + " scales");
  MultiScaleLossResult<T> r;
  Tensor<T> total;
  for (int s = 0; s < kNumScales; ++s) {
    if (weights[s] == 0.0) {
      r.per_scale[s] = T(0);
      continue;  // zero weight contributes nothing and must not leak gradient
    }
    auto sl = scale_loss(preds[s], gt_pyramid[s], masks[s]);
    r.per_scale[s] = sl.loss.item();
    r.any_empty_mask = r.any_empty_mask || sl.empty_mask;
    Tensor<T> term = scale(sl.loss, T(weights[s]));
    total = total.defined() ? add(total, term) : term;
  }
  r.loss = total.defined() ? total : Tensor<T>::zeros({1, 1, 1, 1});
  return r;
}

// Ground-truth pyramid: per factor-2 reduction, a pixel's disparity is the
// mean over the valid pixels of its 2x2 block, halved (disparity is measured
// in pixels of the current width). A coarse pixel is valid when more than
// half of its source pixels are.
template <typename T>
struct GtPyramid {
  std::vector<Tensor<T>> gt;        // kNumScales entries, scale 0 first
  std::vector<ValidityMask> masks;
};

// When base_mask is given it replaces the default validity rule at scale 0
// (callers use it to fold in occlusion masks before downsampling).
template <typename T>
GtPyramid<T> build_gt_pyramid(const Tensor<T>& gt_full,
                              const ValidityMask* base_mask = nullptr) {
  require(gt_full.shape().c == 1, "build_gt_pyramid: disparity must be single-channel");
  if (base_mask)
    require(base_mask->shape == gt_full.shape(), "build_gt_pyramid: base mask shape mismatch");
  GtPyramid<T> p;
  p.gt.push_back(gt_full.detach());
  p.masks.push_back(base_mask ? *base_mask : make_validity_mask(gt_full));
  for (int s = 1; s < kNumScales; ++s) {
    const Tensor<T>& prev = p.gt.back();
    const ValidityMask& pm = p.masks.back();
    const Shape4 ps = prev.shape();
    require(ps.h % 2 == 0 && ps.w % 2 == 0,
            "build_gt_pyramid: dims " + ps.str() + " not divisible at scale " + std::to_string(s));
    const Shape4 os{ps.n, ps.c, ps.h / 2, ps.w / 2};
    Tensor<T> cur(os);
    ValidityMask cm;
    cm.shape = os;
    cm.valid.resize(os.numel());
    for (int b = 0; b < os.n; ++b)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x) {
          T acc = 0;
          int nv = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i =
                  ((std::size_t(b) * ps.c) * ps.h + 2 * y + dy) * ps.w + 2 * x + dx;
              if (pm.valid[i]) {
                acc += prev.data()[i];
                ++nv;
              }
            }
          const std::size_t o = ((std::size_t(b) * os.c) * os.h + y) * os.w + x;
          cm.valid[o] = nv > 2;  // strictly more than half of 4
          cur.data()[o] = nv ? acc / T(nv) / T(2) : T(0);
        }
    p.gt.push_back(std::move(cur));
    p.masks.push_back(std::move(cm));
  }
  return p;
}

// ---- metrics (plain functions, no tape) ----

template <typename T>
struct MetricResult {
  double value = 0.0;
  bool empty_mask = false;
};

// Mean absolute disparity error over valid pixels.
template <typename T>
MetricResult<T> epe(const Tensor<T>& pred, const Tensor<T>& gt, const ValidityMask& mask) {
  require(pred.shape() == gt.shape(), "epe: pred " + pred.shape().str() + " vs gt " + gt.shape().str());
  require(mask.shape == pred.shape(), "epe: mask shape mismatch");
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (!mask.valid[i]) continue;
    acc += std::abs(double(pred.data()[i]) - double(gt.data()[i]));
    ++n;
  }
  if (n == 0) return {0.0, true};
  return {acc / double(n), false};
}

// KITTI-style outlier fraction: error > 3 px and > 5% of ground truth.
template <typename T>
MetricResult<T> d1_rate(const Tensor<T>& pred, const Tensor<T>& gt, const ValidityMask& mask) {
  require(pred.shape() == gt.shape(), "d1_rate: pred " + pred.shape().str() + " vs gt " + gt.shape().str());
  require(mask.shape == pred.shape(), "d1_rate: mask shape mismatch");
  std::size_t n = 0, outliers = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (!mask.valid[i]) continue;
    ++n;
    const double err = std::abs(double(pred.data()[i]) - double(gt.data()[i]));
    if (err > 3.0 && err > 0.05 * double(gt.data()[i])) ++outliers;
  }
  if (n == 0) return {0.0, true};
  return {double(outliers) / double(n), false};
}

}  // namespace fadnet
