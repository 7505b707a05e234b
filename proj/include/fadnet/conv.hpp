#pragma once

// Direct 2-D convolution and its transpose. One set of raw kernels is shared
// between the forward passes and the backward rules so conv_transpose2d is
// the exact adjoint of conv2d by construction.

#include <optional>

#include "fadnet/tensor.hpp"

namespace fadnet {

namespace detail {

// out[b,oc,oh,ow] = bias[oc] + sum_{ic,kh,kw} in[b,ic,oh*s-p+kh,ow*s-p+kw] * w[oc,ic,kh,kw]
template <typename T>
void conv2d_forward_kernel(const Shape4& is, const T* in, const Shape4& ws, const T* w,
                           const T* bias, int stride, int pad, const Shape4& os, T* out) {
  const int IC = is.c, IH = is.h, IW = is.w;
  const int OC = os.c, OH = os.h, OW = os.w;
  const int KH = ws.h, KW = ws.w;
  for (int b = 0; b < is.n; ++b) {
    const T* inb = in + std::size_t(b) * IC * IH * IW;
    T* outb = out + std::size_t(b) * OC * OH * OW;
    for (int oc = 0; oc < OC; ++oc) {
      T* outc = outb + std::size_t(oc) * OH * OW;
      const T bv = bias ? bias[oc] : T(0);
      for (std::size_t i = 0; i < std::size_t(OH) * OW; ++i) outc[i] = bv;
      for (int ic = 0; ic < IC; ++ic) {
        const T* inc = inb + std::size_t(ic) * IH * IW;
        const T* wrow = w + ((std::size_t(oc) * IC + ic) * KH) * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const T wv = wrow[kh * KW + kw];
            if (wv == T(0)) continue;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= IH) continue;
              const T* irow = inc + std::size_t(ih) * IW;
              T* orow = outc + std::size_t(oh) * OW;
              // valid ow range: 0 <= ow*stride - pad + kw < IW
              int ow0 = 0;
              int off = kw - pad;
              while (ow0 * stride + off < 0) ++ow0;
              int ow1 = OW;
              while (ow1 > ow0 && (ow1 - 1) * stride + off >= IW) --ow1;
              if (stride == 1) {
                const T* ip = irow + ow0 + off;
                for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * ip[ow - ow0];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow * stride + off];
              }
            }
          }
        }
      }
    }
  }
}

// gi[b,ic,ih,iw] = sum_{oc,kh,kw} w[oc,ic,kh,kw] * go[b,oc,oh,ow]
// with ih = oh*s - p + kh. Scatter form over outputs, one (b,ic) plane at a time
// stays deterministic.
template <typename T>
void conv2d_input_grad_kernel(const Shape4& os, const T* go, const Shape4& ws, const T* w,
                              int stride, int pad, const Shape4& is, T* gi) {
  const int IC = is.c, IH = is.h, IW = is.w;
  const int OC = os.c, OH = os.h, OW = os.w;
  const int KH = ws.h, KW = ws.w;
  for (int b = 0; b < is.n; ++b) {
    const T* gob = go + std::size_t(b) * OC * OH * OW;
    T* gib = gi + std::size_t(b) * IC * IH * IW;
    for (int ic = 0; ic < IC; ++ic) {
      T* gic = gib + std::size_t(ic) * IH * IW;
      for (int oc = 0; oc < OC; ++oc) {
        const T* goc = gob + std::size_t(oc) * OH * OW;
        const T* wrow = w + ((std::size_t(oc) * IC + ic) * KH) * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const T wv = wrow[kh * KW + kw];
            if (wv == T(0)) continue;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= IH) continue;
              T* grow = gic + std::size_t(ih) * IW;
              const T* gorow = goc + std::size_t(oh) * OW;
              int off = kw - pad;
              int ow0 = 0;
              while (ow0 * stride + off < 0) ++ow0;
              int ow1 = OW;
              while (ow1 > ow0 && (ow1 - 1) * stride + off >= IW) --ow1;
              if (stride == 1) {
                T* gp = grow + ow0 + off;
                for (int ow = ow0; ow < ow1; ++ow) gp[ow - ow0] += wv * gorow[ow];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) grow[ow * stride + off] += wv * gorow[ow];
              }
            }
          }
        }
      }
    }
  }
}

// gw[oc,ic,kh,kw] += sum_{b,oh,ow} in[b,ic,oh*s-p+kh,ow*s-p+kw] * go[b,oc,oh,ow]
template <typename T>
void conv2d_weight_grad_kernel(const Shape4& is, const T* in, const Shape4& os, const T* go,
                               int stride, int pad, const Shape4& ws, T* gw) {
  const int IC = is.c, IH = is.h, IW = is.w;
  const int OC = os.c, OH = os.h, OW = os.w;
  const int KH = ws.h, KW = ws.w;
  for (int b = 0; b < is.n; ++b) {
    const T* inb = in + std::size_t(b) * IC * IH * IW;
    const T* gob = go + std::size_t(b) * OC * OH * OW;
    for (int oc = 0; oc < OC; ++oc) {
      const T* goc = gob + std::size_t(oc) * OH * OW;
      for (int ic = 0; ic < IC; ++ic) {
        const T* inc = inb + std::size_t(ic) * IH * IW;
        T* gwrow = gw + ((std::size_t(oc) * IC + ic) * KH) * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            T acc = 0;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= IH) continue;
              const T* irow = inc + std::size_t(ih) * IW;
              const T* gorow = goc + std::size_t(oh) * OW;
              int off = kw - pad;
              int ow0 = 0;
              while (ow0 * stride + off < 0) ++ow0;
              int ow1 = OW;
              while (ow1 > ow0 && (ow1 - 1) * stride + off >= IW) --ow1;
              if (stride == 1) {
                const T* ip = irow + ow0 + off;
                for (int ow = ow0; ow < ow1; ++ow) acc += ip[ow - ow0] * gorow[ow];
              } else {
                for (int ow = ow0; ow < ow1; ++ow) acc += irow[ow * stride + off] * gorow[ow];
              }
            }
            gwrow[kh * KW + kw] += acc;
          }
        }
      }
    }
  }
}

}  // namespace detail

// weight layout [outC, inC, kH, kW]; zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, int stride, int padding) {
  const Shape4 is = input.shape();
  const Shape4 ws = weight.shape();
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  require(is.c == ws.c, "conv2d: input channels " + std::to_string(is.c) +
                            " != weight inC " + std::to_string(ws.c));
  const int oh = (is.h + 2 * padding - ws.h) / stride + 1;
  const int ow = (is.w + 2 * padding - ws.w) / stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d: kernel " + ws.str() + " larger than padded input " + is.str());
  if (bias) require(bias->shape().c == ws.n && bias->numel() == std::size_t(ws.n),
                    "conv2d: bias channels != weight outC");
  const Shape4 os{is.n, ws.n, oh, ow};

  std::vector<T> out(os.numel());
  detail::conv2d_forward_kernel(is, input.data().data(), ws, weight.data().data(),
                                bias ? bias->data().data() : nullptr, stride, padding, os,
                                out.data());

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  auto pin = input.node();
  auto pw = weight.node();
  std::shared_ptr<TensorNode<T>> pb = bias ? bias->node() : nullptr;
  return make_op<T>(os, std::move(out), inputs, [pin, pw, pb, is, ws, os, stride, padding](TensorNode<T>& self) {
    if (pin->requires_grad) {
      pin->ensure_grad();
      detail::conv2d_input_grad_kernel(os, self.grad.data(), ws, pw->data.data(), stride, padding,
                                       is, pin->grad.data());
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      detail::conv2d_weight_grad_kernel(is, pin->data.data(), os, self.grad.data(), stride,
                                        padding, ws, pw->grad.data());
    }
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      const int OC = os.c;
      const std::size_t plane = std::size_t(os.h) * os.w;
      for (int b = 0; b < os.n; ++b)
        for (int oc = 0; oc < OC; ++oc) {
          const T* g = self.grad.data() + (std::size_t(b) * OC + oc) * plane;
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[i];
          pb->grad[oc] += acc;
        }
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding) {
  return conv2d(input, weight, std::optional<Tensor<T>>{}, stride, padding);
}

// Transposed convolution; weight layout [inC, outC, kH, kW]. Forward equals
// the input-gradient of conv2d with the same weight.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const std::optional<Tensor<T>>& bias, int stride, int padding) {
  const Shape4 is = input.shape();
  const Shape4 ws = weight.shape();
  if (stride < 1) throw ContractError("conv_transpose2d: stride must be >= 1");
  require(is.c == ws.n, "conv_transpose2d: input channels " + std::to_string(is.c) +
                            " != weight inC " + std::to_string(ws.n));
  const int oh = (is.h - 1) * stride - 2 * padding + ws.h;
  const int ow = (is.w - 1) * stride - 2 * padding + ws.w;
  require(oh >= 1 && ow >= 1, "conv_transpose2d: empty output for input " + is.str());
  const Shape4 os{is.n, ws.c, oh, ow};
  if (bias) require(bias->numel() == std::size_t(ws.c), "conv_transpose2d: bias channels != outC");

  // Reuse the conv kernels with roles swapped: input plays gradOut of a conv
  // whose input shape is our output shape.
  std::vector<T> out(os.numel(), T(0));
  detail::conv2d_input_grad_kernel(is, input.data().data(), ws, weight.data().data(), stride,
                                   padding, os, out.data());
  if (bias) {
    const std::size_t plane = std::size_t(os.h) * os.w;
    for (int b = 0; b < os.n; ++b)
      for (int c = 0; c < os.c; ++c) {
        T* o = out.data() + (std::size_t(b) * os.c + c) * plane;
        const T bv = bias->data()[c];
        for (std::size_t i = 0; i < plane; ++i) o[i] += bv;
      }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  auto pin = input.node();
  auto pw = weight.node();
  std::shared_ptr<TensorNode<T>> pb = bias ? bias->node() : nullptr;
  return make_op<T>(os, std::move(out), inputs, [pin, pw, pb, is, ws, os, stride, padding](TensorNode<T>& self) {
    if (pin->requires_grad) {
      pin->ensure_grad();
      // The paired conv maps our output shape back to our input shape; its
      // forward kernel overwrites, so run it into scratch and accumulate.
      std::vector<T> scratch(is.numel());
      detail::conv2d_forward_kernel(os, self.grad.data(), ws, pw->data.data(),
                                    static_cast<const T*>(nullptr), stride, padding, is,
                                    scratch.data());
      for (std::size_t i = 0; i < scratch.size(); ++i) pin->grad[i] += scratch[i];
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      detail::conv2d_weight_grad_kernel(os, self.grad.data(), is, pin->data.data(), stride,
                                        padding, ws, pw->grad.data());
    }
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      const std::size_t plane = std::size_t(os.h) * os.w;
      for (int b = 0; b < os.n; ++b)
        for (int c = 0; c < os.c; ++c) {
          const T* g = self.grad.data() + (std::size_t(b) * os.c + c) * plane;
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[i];
          pb->grad[c] += acc;
        }
    }
  });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, int stride,
                           int padding) {
  return conv_transpose2d(input, weight, std::optional<Tensor<T>>{}, stride, padding);
}

}  // namespace fadnet
