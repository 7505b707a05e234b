#pragma once

// Dense NCHW tensor with reverse-mode differentiation. The graph is built
// implicitly: every op node keeps shared_ptr references to its inputs and a
// backward closure, and backward() replays the closures in reverse
// topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fadnet {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return std::size_t(n) * std::size_t(c) * std::size_t(h) * std::size_t(w);
  }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

// Thread-local switch: when off, ops do not record the graph.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
struct TensorNode {
  Shape4 shape;
  std::vector<T> data;
  std::vector<T> grad;  // lazily allocated, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() : node_(nullptr) {}

  explicit Tensor(Shape4 s, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    node_->shape = s;
    node_->data.assign(s.numel(), T(0));
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape4 s) { return Tensor(s); }

  static Tensor full(Shape4 s, T v) {
    Tensor t(s);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor from(Shape4 s, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != s.numel())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + s.str());
    Tensor t(s, requires_grad);
    t.node_->data = std::move(values);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape4& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->shape.numel(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T& at(int n, int c, int y, int x) {
    const Shape4& s = node_->shape;
    return node_->data[((std::size_t(n) * s.c + c) * s.h + y) * s.w + x];
  }
  T at(int n, int c, int y, int x) const {
    const Shape4& s = node_->shape;
    return node_->data[((std::size_t(n) * s.c + c) * s.h + y) * s.w + x];
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
  }

  // Detached copy sharing nothing with the graph.
  Tensor detach() const {
    Tensor t(shape());
    t.node_->data = node_->data;
    return t;
  }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  static Tensor wrap(std::shared_ptr<TensorNode<T>> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Builds an op output node. When grad mode is off or no input requires grad,
// the result is a plain leaf and the closure is dropped.
template <typename T>
Tensor<T> make_op(Shape4 shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = shape;
  node->data = std::move(data);
  bool track = grad_mode();
  bool any_grad = false;
  if (track) {
    for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
  }
  if (track && any_grad) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::wrap(std::move(node));
}

// Reverse-mode sweep from a scalar loss. Grads accumulate; callers reset
// leaves between steps with zero_grad().
template <typename T>
void backward(Tensor<T> loss) {
  if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss, got " + loss.shape().str());

  // Post-order DFS, iterative.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      TensorNode<T>* child = f.node->parents[f.next_child++].get();
      if (seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise ops ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode<T>& self) {
    for (auto* p : {pa.get(), pb.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto pa = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [pa, factor](TensorNode<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  auto pa = a.node();
  return make_op<T>({1, 1, 1, 1}, {acc}, {a}, [pa](TensorNode<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const T g = self.grad[0];
    for (auto& v : pa->grad) v += g;
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = x.data()[i];
    out[i] = v >= 0 ? v : negative_slope * v;
  }
  auto px = x.node();
  return make_op<T>(x.shape(), std::move(out), {x}, [px, negative_slope](TensorNode<T>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      px->grad[i] += self.grad[i] * (px->data[i] >= 0 ? T(1) : negative_slope);
  });
}

// Clamp at zero, used as the non-negativity activation on disparity heads.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: empty part list");
  Shape4 s0 = parts[0].shape();
  int total_c = 0;
  for (const auto& p : parts) {
    require(p.shape().n == s0.n && p.shape().h == s0.h && p.shape().w == s0.w,
            "concat_channels: spatial/batch mismatch " + p.shape().str() + " vs " + s0.str());
    total_c += p.shape().c;
  }
  Shape4 out_shape{s0.n, total_c, s0.h, s0.w};
  std::vector<T> out(out_shape.numel());
  const std::size_t plane = std::size_t(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    std::size_t dst = (std::size_t(n) * total_c) * plane;
    for (const auto& p : parts) {
      const std::size_t chunk = std::size_t(p.shape().c) * plane;
      std::copy_n(p.data().data() + std::size_t(n) * chunk, chunk, out.data() + dst);
      dst += chunk;
    }
  }
  std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
  for (const auto& p : parts) pnodes.push_back(p.node());
  return make_op<T>(out_shape, std::move(out), parts, [pnodes, s0, total_c, plane](TensorNode<T>& self) {
    for (int n = 0; n < s0.n; ++n) {
      std::size_t src = (std::size_t(n) * total_c) * plane;
      for (auto& p : pnodes) {
        const std::size_t chunk = std::size_t(p->shape.c) * plane;
        if (p->requires_grad) {
          p->ensure_grad();
          T* dst = p->grad.data() + std::size_t(n) * chunk;
          const T* g = self.grad.data() + src;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
        }
        src += chunk;
      }
    }
  });
}

// 2x bilinear upsampling, half-pixel-centered sampling grid. Constant inputs
// stay constant.
template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x) {
  const Shape4 s = x.shape();
  require(s.h >= 1 && s.w >= 1, "bilinear_upsample2x: empty spatial dims");
  const Shape4 os{s.n, s.c, s.h * 2, s.w * 2};

  // Per output coordinate: source index pair and weight, identical for every plane.
  auto axis_coeffs = [](int in_len, int out_len) {
    std::vector<std::tuple<int, int, T>> cs(out_len);  // (i0, i1, frac)
    for (int o = 0; o < out_len; ++o) {
      T src = (T(o) + T(0.5)) / T(2) - T(0.5);
      T clamped = std::min(std::max(src, T(0)), T(in_len - 1));
      int i0 = int(std::floor(clamped));
      int i1 = std::min(i0 + 1, in_len - 1);
      cs[o] = {i0, i1, clamped - T(i0)};
    }
    return cs;
  };
  auto ych = axis_coeffs(s.h, os.h);
  auto xch = axis_coeffs(s.w, os.w);

  std::vector<T> out(os.numel());
  const std::size_t in_plane = std::size_t(s.h) * s.w;
  const std::size_t out_plane = std::size_t(os.h) * os.w;
  const std::size_t planes = std::size_t(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data().data() + p * in_plane;
    T* o = out.data() + p * out_plane;
    for (int oy = 0; oy < os.h; ++oy) {
      auto [y0, y1, fy] = ych[oy];
      for (int ox = 0; ox < os.w; ++ox) {
        auto [x0, x1, fx] = xch[ox];
        T top = in[y0 * s.w + x0] * (T(1) - fx) + in[y0 * s.w + x1] * fx;
        T bot = in[y1 * s.w + x0] * (T(1) - fx) + in[y1 * s.w + x1] * fx;
        o[oy * os.w + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  auto px = x.node();
  return make_op<T>(os, std::move(out), {x},
                    [px, s, os, ych, xch, in_plane, out_plane, planes](TensorNode<T>& self) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t p = 0; p < planes; ++p) {
                        T* gi = px->grad.data() + p * in_plane;
                        const T* go = self.grad.data() + p * out_plane;
                        for (int oy = 0; oy < os.h; ++oy) {
                          auto [y0, y1, fy] = ych[oy];
                          for (int ox = 0; ox < os.w; ++ox) {
                            auto [x0, x1, fx] = xch[ox];
                            T g = go[oy * os.w + ox];
                            gi[y0 * s.w + x0] += g * (T(1) - fy) * (T(1) - fx);
                            gi[y0 * s.w + x1] += g * (T(1) - fy) * fx;
                            gi[y1 * s.w + x0] += g * fy * (T(1) - fx);
                            gi[y1 * s.w + x1] += g * fy * fx;
                          }
                        }
                      }
                    });
}

template <typename T>
Tensor<T> avgpool_downsample(const Tensor<T>& x, int factor) {
  const Shape4 s = x.shape();
  if (factor < 1) throw ContractError("avgpool_downsample: factor must be >= 1");
  require(s.h % factor == 0 && s.w % factor == 0,
          "avgpool_downsample: dims " + s.str() + " not divisible by factor " + std::to_string(factor));
  const Shape4 os{s.n, s.c, s.h / factor, s.w / factor};
  const T inv = T(1) / (T(factor) * T(factor));
  std::vector<T> out(os.numel());
  const std::size_t in_plane = std::size_t(s.h) * s.w;
  const std::size_t out_plane = std::size_t(os.h) * os.w;
  const std::size_t planes = std::size_t(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data().data() + p * in_plane;
    T* o = out.data() + p * out_plane;
    for (int oy = 0; oy < os.h; ++oy)
      for (int ox = 0; ox < os.w; ++ox) {
        T acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += in[(oy * factor + dy) * s.w + ox * factor + dx];
        o[oy * os.w + ox] = acc * inv;
      }
  }
  auto px = x.node();
  return make_op<T>(os, std::move(out), {x},
                    [px, s, os, factor, inv, in_plane, out_plane, planes](TensorNode<T>& self) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t p = 0; p < planes; ++p) {
                        T* gi = px->grad.data() + p * in_plane;
                        const T* go = self.grad.data() + p * out_plane;
                        for (int oy = 0; oy < os.h; ++oy)
                          for (int ox = 0; ox < os.w; ++ox) {
                            T g = go[oy * os.w + ox] * inv;
                            for (int dy = 0; dy < factor; ++dy)
                              for (int dx = 0; dx < factor; ++dx)
                                gi[(oy * factor + dy) * s.w + ox * factor + dx] += g;
                          }
                      }
                    });
}

// ---- initialization ----

// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, int fan_in, std::mt19937& rng) {
  const T bound = T(1) / std::sqrt(T(std::max(fan_in, 1)));
  std::uniform_real_distribution<T> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
}

}  // namespace fadnet
