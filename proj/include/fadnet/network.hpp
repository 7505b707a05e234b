#pragma once

// FADNet topology: a correlation-equipped first stage (RB-NetC) and a
// refinement stage (RB-NetS) that predicts residuals added scale-by-scale to
// the first stage's disparities.
//
// The encoder has `encoder_stages` feature levels: a stride-1 stem at full
// resolution followed by halving Dual-ResBlocks, so seven stages give the
// six factor-2 reductions needed for the seven prediction scales.

#include <map>
#include <random>

#include "fadnet/correlation.hpp"
#include "fadnet/loss.hpp"

namespace fadnet {

struct NetworkConfig {
  int encoder_stages = 7;          // stem + (encoder_stages - 1) halving stages
  int base_channels = 8;
  int channel_cap_multiplier = 8;  // channels double per stage, capped at base * this
  int correlation_after_stage = 3; // correlation consumes the level-3 features (1/8 res)
  CorrelationConfig corr_cfg{};
  bool share_encoder_weights = true;   // Siamese left/right streams in RB-NetC
  bool share_corr_conv_weights = true; // Eq.-2 pre-convolutions shared across streams
  bool include_initial_disparity = true;     // feed c_0 to RB-NetS
  bool include_reconstruction_error = false; // feed |left - warped_left| to RB-NetS
  double negative_slope = 0.1;
  unsigned init_seed = 42;

  int scales() const { return kNumScales; }
  int downsample_factor() const { return 1 << (encoder_stages - 1); }

  int channels_at(int level) const {
    long long ch = (long long)base_channels << level;
    long long cap = (long long)base_channels * channel_cap_multiplier;
    return int(std::min(ch, cap));
  }

  void validate() const {
    if (encoder_stages != kNumScales)
      throw ContractError("NetworkConfig: encoder_stages must equal " + std::to_string(kNumScales));
    if (correlation_after_stage < 1 || correlation_after_stage >= encoder_stages)
      throw ContractError("NetworkConfig: correlation_after_stage out of range");
    if (base_channels < 1) throw ContractError("NetworkConfig: base_channels must be >= 1");
  }
};

template <typename T>
struct MultiScaleOutput {
  std::vector<Tensor<T>> maps;  // kNumScales entries, scale 0 (full res) first
};

// Central parameter registry; layers allocate their tensors through it so
// every parameter has a stable name for checkpoints and the optimizer.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(unsigned seed) : rng_(seed) {}

  Tensor<T> conv_weight(const std::string& name, int out_c, int in_c, int kh, int kw) {
    Tensor<T> t({out_c, in_c, kh, kw}, true);
    init_uniform_fan_in(t, in_c * kh * kw, rng_);
    reg(name, t);
    return t;
  }
  // Transposed-convolution weight, [inC, outC, kH, kW].
  Tensor<T> deconv_weight(const std::string& name, int in_c, int out_c, int kh, int kw) {
    Tensor<T> t({in_c, out_c, kh, kw}, true);
    init_uniform_fan_in(t, in_c * kh * kw, rng_);
    reg(name, t);
    return t;
  }
  Tensor<T> bias(const std::string& name, int c) {
    Tensor<T> t({1, c, 1, 1}, true);
    reg(name, t);  // zero-initialized
    return t;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

 private:
  void reg(const std::string& name, const Tensor<T>& t) {
    for (const auto& [n, _] : entries_)
      if (n == name) throw ContractError("duplicate parameter name: " + name);
    entries_.emplace_back(name, t);
  }

  std::mt19937 rng_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

namespace layers {

template <typename T>
struct Conv {
  Tensor<T> w, b;
  int stride = 1, pad = 1;

  static Conv make(ParamStore<T>& ps, const std::string& name, int in_c, int out_c, int k,
                   int stride) {
    Conv c;
    c.w = ps.conv_weight(name + ".w", out_c, in_c, k, k);
    c.b = ps.bias(name + ".b", out_c);
    c.stride = stride;
    c.pad = (k - 1) / 2;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> bias_flat = b;  // bias stored as (1,c,1,1); conv2d wants outC entries
    return conv2d(x, w, std::optional<Tensor<T>>(bias_flat), stride, pad);
  }
};

template <typename T>
struct Deconv {
  Tensor<T> w, b;
  int stride = 2, pad = 1;

  static Deconv make(ParamStore<T>& ps, const std::string& name, int in_c, int out_c) {
    Deconv d;
    d.w = ps.deconv_weight(name + ".w", in_c, out_c, 4, 4);
    d.b = ps.bias(name + ".b", out_c);
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, w, std::optional<Tensor<T>>(b), stride, pad);
  }
};

// activation(F(x) + shortcut(x)); projection shortcut when shape changes.
template <typename T>
struct ResBlock {
  Conv<T> conv1, conv2;
  std::optional<Conv<T>> proj;
  T slope;

  static ResBlock make(ParamStore<T>& ps, const std::string& name, int in_c, int out_c, int stride,
                       T slope) {
    ResBlock r;
    r.conv1 = Conv<T>::make(ps, name + ".conv1", in_c, out_c, 3, stride);
    r.conv2 = Conv<T>::make(ps, name + ".conv2", out_c, out_c, 3, 1);
    if (stride != 1 || in_c != out_c)
      r.proj = Conv<T>::make(ps, name + ".proj", in_c, out_c, 1, stride);
    r.slope = slope;
    return r;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> f = conv2(leaky_relu(conv1(x), slope));
    Tensor<T> s = proj ? (*proj)(x) : x;
    return leaky_relu(add(f, s), slope);
  }
};

}  // namespace layers

// Stride-1 convolution followed by a stride-2 convolution, halving the map.
template <typename T>
struct DualConv {
  layers::Conv<T> c1, c2;
  T slope;

  static DualConv make(ParamStore<T>& ps, const std::string& name, int in_c, int out_c, T slope) {
    DualConv d;
    d.c1 = layers::Conv<T>::make(ps, name + ".c1", in_c, out_c, 3, 1);
    d.c2 = layers::Conv<T>::make(ps, name + ".c2", out_c, out_c, 3, 2);
    d.slope = slope;
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    require(x.shape().h % 2 == 0 && x.shape().w % 2 == 0,
            "DualConv: input dims must be even, got " + x.shape().str());
    return leaky_relu(c2(leaky_relu(c1(x), slope)), slope);
  }
};

// DualConv with both convolutions replaced by residual blocks.
template <typename T>
struct DualResBlock {
  layers::ResBlock<T> r1, r2;

  static DualResBlock make(ParamStore<T>& ps, const std::string& name, int in_c, int out_c,
                           T slope) {
    DualResBlock d;
    d.r1 = layers::ResBlock<T>::make(ps, name + ".r1", in_c, in_c, 1, slope);
    d.r2 = layers::ResBlock<T>::make(ps, name + ".r2", in_c, out_c, 2, slope);
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    require(x.shape().h % 2 == 0 && x.shape().w % 2 == 0,
            "DualResBlock: input dims must be even, got " + x.shape().str());
    return r2(r1(x));
  }
};

namespace detail {

// Shared encoder-decoder scaffolding for both stages.
template <typename T>
struct Decoder {
  std::vector<layers::Deconv<T>> upconvs;  // index s maps level s -> s-1
  std::vector<layers::Conv<T>> iconvs;     // index s merges at level s
  std::vector<layers::Conv<T>> preds;      // index s predicts at level s
  T slope;
  bool rectify;  // clamp predictions at zero (disparity heads, not residuals)

  static Decoder make(ParamStore<T>& ps, const std::string& name, const NetworkConfig& cfg,
                      bool rectify) {
    Decoder d;
    d.slope = T(cfg.negative_slope);
    d.rectify = rectify;
    const int L = cfg.encoder_stages - 1;  // deepest level
    d.upconvs.resize(L + 1);
    d.iconvs.resize(L + 1);
    d.preds.resize(L + 1);
    for (int s = L; s >= 1; --s)
      d.upconvs[s] = layers::Deconv<T>::make(ps, name + ".up" + std::to_string(s),
                                             cfg.channels_at(s), cfg.channels_at(s - 1));
    for (int s = L - 1; s >= 0; --s) {
      const int in_c = 2 * cfg.channels_at(s) + 1;  // skip + upsampled features + coarse pred
      d.iconvs[s] = layers::Conv<T>::make(ps, name + ".iconv" + std::to_string(s), in_c,
                                          cfg.channels_at(s), 3, 1);
    }
    for (int s = L; s >= 0; --s)
      d.preds[s] = layers::Conv<T>::make(ps, name + ".pred" + std::to_string(s),
                                         cfg.channels_at(s), 1, 3, 1);
    return d;
  }

  // skips[s] are encoder features at level s; returns predictions scale 0 first.
  MultiScaleOutput<T> run(const std::vector<Tensor<T>>& skips) const {
    const int L = int(skips.size()) - 1;
    std::vector<Tensor<T>> maps(L + 1);
    Tensor<T> feat = skips[L];
    Tensor<T> pred = head(preds[L](feat));
    maps[L] = pred;
    for (int s = L; s >= 1; --s) {
      Tensor<T> up = leaky_relu(upconvs[s](feat), slope);
      Tensor<T> up_pred = bilinear_upsample2x(pred);
      feat = leaky_relu(iconvs[s - 1](concat_channels<T>({skips[s - 1], up, up_pred})), slope);
      pred = head(preds[s - 1](feat));
      maps[s - 1] = pred;
    }
    return MultiScaleOutput<T>{std::move(maps)};
  }

 private:
  Tensor<T> head(const Tensor<T>& raw) const { return rectify ? relu(raw) : raw; }
};

}  // namespace detail

// First stage: Siamese encoders, point-wise correlation at 1/8 resolution,
// then a multi-scale decoder producing the initial disparities c_s.
template <typename T>
class RBNetC {
 public:
  RBNetC(ParamStore<T>& ps, const NetworkConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const T slope = T(cfg.negative_slope);
    const int L = cfg.encoder_stages - 1;
    const int cp = cfg.correlation_after_stage;

    stem_ = layers::Conv<T>::make(ps, "netc.stem", 3, cfg.channels_at(0), 3, 1);
    for (int s = 1; s <= cp; ++s)
      pre_corr_.push_back(DualResBlock<T>::make(ps, "netc.enc" + std::to_string(s),
                                                cfg.channels_at(s - 1), cfg.channels_at(s), slope));
    if (!cfg.share_encoder_weights) {
      stem_r_ = layers::Conv<T>::make(ps, "netc.stem_r", 3, cfg.channels_at(0), 3, 1);
      for (int s = 1; s <= cp; ++s)
        pre_corr_r_.push_back(DualResBlock<T>::make(ps, "netc.enc" + std::to_string(s) + "_r",
                                                    cfg.channels_at(s - 1), cfg.channels_at(s),
                                                    slope));
    }

    const int corr_c = int(cfg.corr_cfg.shift_values().size());
    const int redir_c = std::max(cfg.channels_at(cp) / 2, 1);
    corr_w1_ = ps.conv_weight("netc.corr.conv1.w", cfg.channels_at(cp), cfg.channels_at(cp), 3, 3);
    if (!cfg.share_corr_conv_weights)
      corr_w2_ = ps.conv_weight("netc.corr.conv2.w", cfg.channels_at(cp), cfg.channels_at(cp), 3, 3);
    redir_ = layers::Conv<T>::make(ps, "netc.corr.redir", cfg.channels_at(cp), redir_c, 1, 1);
    merge_ = layers::Conv<T>::make(ps, "netc.corr.merge", redir_c + corr_c, cfg.channels_at(cp), 3, 1);

    for (int s = cp + 1; s <= L; ++s)
      post_corr_.push_back(DualResBlock<T>::make(ps, "netc.enc" + std::to_string(s),
                                                 cfg.channels_at(s - 1), cfg.channels_at(s), slope));

    decoder_ = detail::Decoder<T>::make(ps, "netc.dec", cfg, /*rectify=*/true);
  }

  MultiScaleOutput<T> forward(const Tensor<T>& left, const Tensor<T>& right) const {
    check_input(left, right);
    const T slope = T(cfg_.negative_slope);
    const int cp = cfg_.correlation_after_stage;
    const int L = cfg_.encoder_stages - 1;

    std::vector<Tensor<T>> fl, fr;
    fl.push_back(leaky_relu(stem_(left), slope));
    fr.push_back(leaky_relu((cfg_.share_encoder_weights ? stem_ : *stem_r_)(right), slope));
    for (int s = 1; s <= cp; ++s) {
      fl.push_back(pre_corr_[s - 1](fl.back()));
      fr.push_back((cfg_.share_encoder_weights ? pre_corr_ : pre_corr_r_)[s - 1](fr.back()));
    }

    CostVolume<T> cv = pointwise_correlation(
        fl[cp], fr[cp], corr_w1_, cfg_.share_corr_conv_weights ? corr_w1_ : *corr_w2_,
        cfg_.corr_cfg);
    Tensor<T> redir = leaky_relu(redir_(fl[cp]), slope);
    Tensor<T> merged = leaky_relu(merge_(concat_channels<T>({redir, cv.tensor})), slope);

    std::vector<Tensor<T>> skips = fl;
    skips[cp] = merged;
    for (int s = cp + 1; s <= L; ++s) skips.push_back(post_corr_[s - cp - 1](skips.back()));

    return decoder_.run(skips);
  }

 private:
  void check_input(const Tensor<T>& left, const Tensor<T>& right) const {
    require(left.shape() == right.shape(),
            "RBNetC: left " + left.shape().str() + " vs right " + right.shape().str());
    const int f = cfg_.downsample_factor();
    require(left.shape().h % f == 0 && left.shape().w % f == 0,
            "RBNetC: input dims " + left.shape().str() + " must be divisible by " +
                std::to_string(f));
    require(left.shape().c == 3, "RBNetC: expected 3-channel input, got " + left.shape().str());
  }

  NetworkConfig cfg_;
  layers::Conv<T> stem_;
  std::optional<layers::Conv<T>> stem_r_;
  std::vector<DualResBlock<T>> pre_corr_, pre_corr_r_, post_corr_;
  Tensor<T> corr_w1_;
  std::optional<Tensor<T>> corr_w2_;
  layers::Conv<T> redir_, merge_;
  detail::Decoder<T> decoder_;
};

// Second stage: consumes left, right, warped-left (and optionally the initial
// disparity and reconstruction error) and predicts signed residuals r_s.
template <typename T>
class RBNetS {
 public:
  RBNetS(ParamStore<T>& ps, const NetworkConfig& cfg) : cfg_(cfg) {
    const T slope = T(cfg.negative_slope);
    const int L = cfg.encoder_stages - 1;
    int in_c = 9;  // left + right + warped_left
    if (cfg.include_initial_disparity) in_c += 1;
    if (cfg.include_reconstruction_error) in_c += 1;
    stem_ = layers::Conv<T>::make(ps, "nets.stem", in_c, cfg.channels_at(0), 3, 1);
    for (int s = 1; s <= L; ++s)
      enc_.push_back(DualResBlock<T>::make(ps, "nets.enc" + std::to_string(s),
                                           cfg.channels_at(s - 1), cfg.channels_at(s), slope));
    decoder_ = detail::Decoder<T>::make(ps, "nets.dec", cfg, /*rectify=*/false);
  }

  MultiScaleOutput<T> forward(const Tensor<T>& left, const Tensor<T>& right,
                              const Tensor<T>& warped_left, const Tensor<T>& initial_disparity) const {
    std::vector<Tensor<T>> parts{left, right, warped_left};
    if (cfg_.include_initial_disparity) parts.push_back(initial_disparity);
    if (cfg_.include_reconstruction_error) {
      // Per-pixel mean absolute photometric error of the warped view.
      Tensor<T> diff = sub(left, warped_left);
      Tensor<T> sq = mul(diff, diff);
      Tensor<T> err(Shape4{left.shape().n, 1, left.shape().h, left.shape().w});
      // Channel mean without grad participation; the error channel is a cue,
      // not a gradient path.
      {
        const std::size_t plane = std::size_t(left.shape().h) * left.shape().w;
        for (int b = 0; b < left.shape().n; ++b)
          for (std::size_t i = 0; i < plane; ++i) {
            T acc = 0;
            for (int c = 0; c < left.shape().c; ++c)
              acc += sq.data()[(std::size_t(b) * left.shape().c + c) * plane + i];
            err.data()[std::size_t(b) * plane + i] = acc / T(left.shape().c);
          }
      }
      parts.push_back(err);
    }
    Tensor<T> x = concat_channels<T>(parts);
    const T slope = T(cfg_.negative_slope);
    std::vector<Tensor<T>> skips;
    skips.push_back(leaky_relu(stem_(x), slope));
    for (const auto& stage : enc_) skips.push_back(stage(skips.back()));
    return decoder_.run(skips);
  }

 private:
  NetworkConfig cfg_;
  layers::Conv<T> stem_;
  std::vector<DualResBlock<T>> enc_;
  detail::Decoder<T> decoder_;
};

template <typename T>
struct FadNetOutput {
  MultiScaleOutput<T> final;     // d_s = c_s + r_s, exact elementwise sum
  MultiScaleOutput<T> initial;   // c_s from RB-NetC
  MultiScaleOutput<T> residual;  // r_s from RB-NetS
};

template <typename T>
class FadNet {
 public:
  explicit FadNet(const NetworkConfig& cfg)
      : cfg_(cfg), params_(cfg.init_seed), netc_(params_, cfg), nets_(params_, cfg) {}

  FadNetOutput<T> forward(const Tensor<T>& left, const Tensor<T>& right) const {
    FadNetOutput<T> out;
    out.initial = netc_.forward(left, right);
    Tensor<T> warped = warp_by_disparity(right, out.initial.maps[0]);
    out.residual = nets_.forward(left, right, warped, out.initial.maps[0]);
    out.final.maps.resize(kNumScales);
    for (int s = 0; s < kNumScales; ++s)
      out.final.maps[s] = add(out.initial.maps[s], out.residual.maps[s]);
    return out;
  }

  // Full-resolution disparity without recording the graph.
  Tensor<T> infer(const Tensor<T>& left, const Tensor<T>& right) const {
    NoGradGuard ng;
    return forward(left, right).final.maps[0].detach();
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t param_count() const { return params_.param_count(); }

 private:
  NetworkConfig cfg_;
  ParamStore<T> params_;
  RBNetC<T> netc_;
  RBNetS<T> nets_;
};

}  // namespace fadnet
