#pragma once

// Horizontal-shift correlation cost volumes and disparity-based warping.
// Out-of-bounds reads are zero-filled everywhere, which keeps both operators
// linear in their feature inputs.

#include <optional>

#include "fadnet/conv.hpp"
#include "fadnet/tensor.hpp"

namespace fadnet {

enum class ShiftMode {
  kTwoSidedStride2,  // shifts {-D, -D+2, ..., D}: D+1 channels
  kOneSidedStride1,  // shifts {0, 1, ..., D-1}: D channels
};

enum class CorrNormalize { kNone, kByChannelCount };

struct CorrelationConfig {
  int kernel_half_size = 0;  // patch half-extent k
  int max_range = 20;        // search range D
  ShiftMode shift_mode = ShiftMode::kTwoSidedStride2;
  CorrNormalize normalize = CorrNormalize::kByChannelCount;

  std::vector<int> shift_values() const {
    std::vector<int> shifts;
    if (shift_mode == ShiftMode::kTwoSidedStride2) {
      for (int s = -max_range; s <= max_range; s += 2) shifts.push_back(s);
    } else {
      for (int s = 0; s < max_range; ++s) shifts.push_back(s);
    }
    return shifts;
  }
};

template <typename T>
struct CostVolume {
  Tensor<T> tensor;               // (batch, numShifts, h, w)
  std::vector<int> shift_values;  // aligned with channels
};

namespace detail {

template <typename T>
inline T read_zero_pad(const T* plane, int h, int w, int y, int x) {
  if (y < 0 || y >= h || x < 0 || x >= w) return T(0);
  return plane[std::size_t(y) * w + x];
}

}  // namespace detail

// Eq.-1-style correlation: for each pixel and horizontal shift, the inner
// product of (2k+1)^2 patches over all channels.
template <typename T>
CostVolume<T> patch_correlation(const Tensor<T>& f1, const Tensor<T>& f2,
                                const CorrelationConfig& cfg) {
  const Shape4 s = f1.shape();
  require(s == f2.shape(),
          "patch_correlation: shape mismatch " + s.str() + " vs " + f2.shape().str());
  if (cfg.kernel_half_size < 0) throw ContractError("patch_correlation: k must be >= 0");
  if (cfg.max_range < 1) throw ContractError("patch_correlation: D must be >= 1");

  const std::vector<int> shifts = cfg.shift_values();
  const int NS = int(shifts.size());
  const int k = cfg.kernel_half_size;
  const int C = s.c, H = s.h, W = s.w;
  const T norm = cfg.normalize == CorrNormalize::kByChannelCount ? T(1) / T(C) : T(1);
  const Shape4 os{s.n, NS, H, W};

  std::vector<T> out(os.numel(), T(0));
  const std::size_t plane = std::size_t(H) * W;
  for (int b = 0; b < s.n; ++b) {
    const T* f1b = f1.data().data() + std::size_t(b) * C * plane;
    const T* f2b = f2.data().data() + std::size_t(b) * C * plane;
    T* ob = out.data() + std::size_t(b) * NS * plane;
    for (int si = 0; si < NS; ++si) {
      const int sh = shifts[si];
      T* oc = ob + std::size_t(si) * plane;
      for (int c = 0; c < C; ++c) {
        const T* p1 = f1b + std::size_t(c) * plane;
        const T* p2 = f2b + std::size_t(c) * plane;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            T acc = 0;
            for (int oy = -k; oy <= k; ++oy)
              for (int ox = -k; ox <= k; ++ox)
                acc += detail::read_zero_pad(p1, H, W, y + oy, x + ox) *
                       detail::read_zero_pad(p2, H, W, y + oy, x + ox + sh);
            oc[std::size_t(y) * W + x] += acc * norm;
          }
      }
    }
  }

  auto p1 = f1.node();
  auto p2 = f2.node();
  Tensor<T> result = make_op<T>(os, std::move(out), {f1, f2}, [p1, p2, s, os, shifts, k, norm](TensorNode<T>& self) {
    const int C = s.c, H = s.h, W = s.w, NS = int(shifts.size());
    const std::size_t plane = std::size_t(H) * W;
    // Patch box-sums of gradOut reused for both feature gradients.
    for (int b = 0; b < s.n; ++b) {
      const T* gob = self.grad.data() + std::size_t(b) * NS * plane;
      std::vector<T> box(std::size_t(NS) * plane);
      for (int si = 0; si < NS; ++si) {
        const T* g = gob + std::size_t(si) * plane;
        T* bx = box.data() + std::size_t(si) * plane;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            T acc = 0;
            for (int oy = -k; oy <= k; ++oy)
              for (int ox = -k; ox <= k; ++ox)
                acc += detail::read_zero_pad(g, H, W, y - oy, x - ox);
            bx[std::size_t(y) * W + x] = acc;
          }
      }
      if (p1->requires_grad) {
        p1->ensure_grad();
        for (int c = 0; c < C; ++c) {
          const T* f2p = p2->data.data() + (std::size_t(b) * C + c) * plane;
          T* g1 = p1->grad.data() + (std::size_t(b) * C + c) * plane;
          for (int si = 0; si < NS; ++si) {
            const int sh = shifts[si];
            const T* bx = box.data() + std::size_t(si) * plane;
            for (int y = 0; y < H; ++y)
              for (int x = 0; x < W; ++x)
                g1[std::size_t(y) * W + x] +=
                    norm * bx[std::size_t(y) * W + x] * detail::read_zero_pad(f2p, H, W, y, x + sh);
          }
        }
      }
      if (p2->requires_grad) {
        p2->ensure_grad();
        for (int c = 0; c < C; ++c) {
          const T* f1p = p1->data.data() + (std::size_t(b) * C + c) * plane;
          T* g2 = p2->grad.data() + (std::size_t(b) * C + c) * plane;
          for (int si = 0; si < NS; ++si) {
            const int sh = shifts[si];
            const T* bx = box.data() + std::size_t(si) * plane;
            for (int y = 0; y < H; ++y)
              for (int x = 0; x < W; ++x)
                g2[std::size_t(y) * W + x] +=
                    norm * detail::read_zero_pad(bx, H, W, y, x - sh) *
                    detail::read_zero_pad(f1p, H, W, y, x - sh);
          }
        }
      }
    }
  });
  return CostVolume<T>{result, shifts};
}

// Eq.-2-style point-wise correlation: a learned 3x3 stride-1 convolution per
// stream, then correlation with k = 0. Pass the same weight tensor for both
// streams to share them.
template <typename T>
CostVolume<T> pointwise_correlation(const Tensor<T>& f1, const Tensor<T>& f2,
                                    const Tensor<T>& conv_weight1, const Tensor<T>& conv_weight2,
                                    const CorrelationConfig& cfg) {
  require(f1.shape() == f2.shape(),
          "pointwise_correlation: shape mismatch " + f1.shape().str() + " vs " + f2.shape().str());
  require(conv_weight1.shape().h == 3 && conv_weight1.shape().w == 3,
          "pointwise_correlation: pre-convolution kernel must be 3x3");
  Tensor<T> g1 = conv2d(f1, conv_weight1, 1, 1);
  Tensor<T> g2 = conv2d(f2, conv_weight2, 1, 1);
  CorrelationConfig pw = cfg;
  pw.kernel_half_size = 0;
  return patch_correlation(g1, g2, pw);
}

// Samples `right` at (x - d(x,y), y) with bilinear interpolation along x.
// Differentiable in both the image and the disparity field.
template <typename T>
Tensor<T> warp_by_disparity(const Tensor<T>& right, const Tensor<T>& disparity) {
  const Shape4 rs = right.shape();
  const Shape4 ds = disparity.shape();
  require(ds.c == 1, "warp_by_disparity: disparity must have one channel, got " + ds.str());
  require(rs.n == ds.n && rs.h == ds.h && rs.w == ds.w,
          "warp_by_disparity: image " + rs.str() + " vs disparity " + ds.str());

  const int C = rs.c, H = rs.h, W = rs.w;
  const std::size_t plane = std::size_t(H) * W;
  std::vector<T> out(rs.numel(), T(0));
  for (int b = 0; b < rs.n; ++b) {
    const T* db = disparity.data().data() + std::size_t(b) * plane;
    for (int c = 0; c < C; ++c) {
      const T* rp = right.data().data() + (std::size_t(b) * C + c) * plane;
      T* op = out.data() + (std::size_t(b) * C + c) * plane;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const T xs = T(x) - db[std::size_t(y) * W + x];
          const int x0 = int(std::floor(xs));
          const T a = xs - T(x0);
          const T v0 = detail::read_zero_pad(rp + std::size_t(y) * W, 1, W, 0, x0);
          const T v1 = detail::read_zero_pad(rp + std::size_t(y) * W, 1, W, 0, x0 + 1);
          op[std::size_t(y) * W + x] = (T(1) - a) * v0 + a * v1;
        }
    }
  }

  auto pr = right.node();
  auto pd = disparity.node();
  return make_op<T>(rs, std::move(out), {right, disparity}, [pr, pd, rs](TensorNode<T>& self) {
    const int C = rs.c, H = rs.h, W = rs.w;
    const std::size_t plane = std::size_t(H) * W;
    if (pr->requires_grad) pr->ensure_grad();
    if (pd->requires_grad) pd->ensure_grad();
    for (int b = 0; b < rs.n; ++b) {
      const T* db = pd->data.data() + std::size_t(b) * plane;
      T* gd = pd->requires_grad ? pd->grad.data() + std::size_t(b) * plane : nullptr;
      for (int c = 0; c < C; ++c) {
        const T* rp = pr->data.data() + (std::size_t(b) * C + c) * plane;
        const T* go = self.grad.data() + (std::size_t(b) * C + c) * plane;
        T* gr = pr->requires_grad ? pr->grad.data() + (std::size_t(b) * C + c) * plane : nullptr;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const std::size_t i = std::size_t(y) * W + x;
            const T xs = T(x) - db[i];
            const int x0 = int(std::floor(xs));
            const T a = xs - T(x0);
            const bool in0 = x0 >= 0 && x0 < W;
            const bool in1 = x0 + 1 >= 0 && x0 + 1 < W;
            const T g = go[i];
            if (gr) {
              if (in0) gr[std::size_t(y) * W + x0] += g * (T(1) - a);
              if (in1) gr[std::size_t(y) * W + x0 + 1] += g * a;
            }
            if (gd) {
              const T v0 = in0 ? rp[std::size_t(y) * W + x0] : T(0);
              const T v1 = in1 ? rp[std::size_t(y) * W + x0 + 1] : T(0);
              // d(out)/d(disp) = -d(out)/d(xs) = -(v1 - v0)
              gd[i] -= g * (v1 - v0);
            }
          }
      }
    }
  });
}

}  // namespace fadnet
