#include <filesystem>

#include "doctest.h"
#include "fadnet/checkpoint.hpp"
#include "fadnet/network.hpp"
#include "oracles.hpp"

using namespace fadnet;

namespace {

template <typename T>
Tensor<T> lrelu_ref(const Tensor<T>& x, T slope) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] > 0 ? x.data()[i] : slope * x.data()[i];
  return out;
}

template <typename T>
void zero_params(ParamStore<T>& ps) {
  for (auto& [name, t] : ps.entries())
    std::fill(t.data().begin(), t.data().end(), T(0));
}

}  // namespace

TEST_CASE("DualConv: halves the map and matches a two-conv reference") {
  std::mt19937 rng(70);
  ParamStore<float> ps(1);
  auto dc = DualConv<float>::make(ps, "dc", 3, 32, 0.1f);
  auto x = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto y = dc(x);
  CHECK(y.shape() == Shape4{1, 32, 32, 64});

  // Reference path built from the independent convolution oracle.
  auto mid = oracles::conv2d_ref(x, dc.c1.w, &dc.c1.b, 1, 1);
  auto ref = lrelu_ref(oracles::conv2d_ref(lrelu_ref(mid, 0.1f), dc.c2.w, &dc.c2.b, 2, 1), 0.1f);
  CHECK(oracles::max_abs_diff(y, ref) < 1e-4);

  CHECK_THROWS_AS(dc(Tensor<float>::zeros({1, 3, 5, 8})), DimensionError);
}

TEST_CASE("ResBlock: zero weights reduce to the activated shortcut") {
  std::mt19937 rng(71);
  ParamStore<float> ps(2);
  auto rb = layers::ResBlock<float>::make(ps, "rb", 8, 8, 1, 0.1f);
  zero_params(ps);
  auto x = oracles::random_tensor<float>({1, 8, 6, 6}, rng);
  auto y = rb(x);
  // F(x) is zero, the shortcut is the identity, so y = leaky_relu(x).
  auto ref = lrelu_ref(x, 0.1f);
  CHECK(oracles::max_abs_diff(y, ref) == 0.0);

  // Changing channels or stride adds a projection shortcut.
  ParamStore<float> ps2(3);
  auto rb2 = layers::ResBlock<float>::make(ps2, "rb", 8, 16, 2, 0.1f);
  auto y2 = rb2(x);
  CHECK(y2.shape() == Shape4{1, 16, 3, 3});
}

TEST_CASE("DualResBlock: shape and gradient flow") {
  std::mt19937 rng(72);
  ParamStore<float> ps(4);
  auto drb = DualResBlock<float>::make(ps, "drb", 8, 16, 0.1f);
  auto x = oracles::random_tensor<float>({1, 8, 16, 24}, rng, true);
  auto y = drb(x);
  CHECK(y.shape() == Shape4{1, 16, 8, 12});
  for (float v : y.data()) CHECK(std::isfinite(v));

  backward(sum(y));
  bool any_input_grad = false;
  for (float g : x.grad()) any_input_grad = any_input_grad || g != 0.0f;
  CHECK(any_input_grad);
  for (auto& [name, t] : ps.entries()) {
    bool any = false;
    for (float g : t.grad()) any = any || g != 0.0f;
    CHECK_MESSAGE(any, name);
  }
}

TEST_CASE("NetworkConfig: channel progression, downsample factor, validation") {
  NetworkConfig cfg;
  CHECK(cfg.channels_at(0) == 8);
  CHECK(cfg.channels_at(1) == 16);
  CHECK(cfg.channels_at(3) == 64);
  CHECK(cfg.channels_at(4) == 64);  // capped at base * 8
  CHECK(cfg.channels_at(6) == 64);
  CHECK(cfg.downsample_factor() == 64);

  NetworkConfig bad = cfg;
  bad.encoder_stages = 5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.correlation_after_stage = 7;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("RBNetC: seven prediction scales with the right shapes, rectified") {
  std::mt19937 rng(73);
  NetworkConfig cfg;
  ParamStore<float> ps(cfg.init_seed);
  RBNetC<float> netc(ps, cfg);
  auto left = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto right = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto out = netc.forward(left, right);
  REQUIRE(out.maps.size() == kNumScales);
  for (int s = 0; s < kNumScales; ++s) {
    CHECK(out.maps[s].shape() == Shape4{1, 1, 64 >> s, 128 >> s});
    for (float v : out.maps[s].data()) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0f);  // initial disparities are clamped at zero
    }
  }

  CHECK_THROWS_AS(netc.forward(left, Tensor<float>::zeros({1, 3, 64, 64})), DimensionError);
  CHECK_THROWS_AS(netc.forward(Tensor<float>::zeros({1, 3, 60, 128}),
                               Tensor<float>::zeros({1, 3, 60, 128})),
                  DimensionError);
}

TEST_CASE("RBNetC: Siamese weight sharing gives symmetric parameter sets") {
  NetworkConfig shared;
  ParamStore<float> ps_s(1);
  RBNetC<float> a(ps_s, shared);

  NetworkConfig split = shared;
  split.share_encoder_weights = false;
  split.share_corr_conv_weights = false;
  ParamStore<float> ps_u(1);
  RBNetC<float> b(ps_u, split);

  CHECK(ps_u.param_count() > ps_s.param_count());
  bool has_right_stream = false;
  for (auto& [name, t] : ps_u.entries()) has_right_stream = has_right_stream || name == "netc.stem_r.w";
  CHECK(has_right_stream);
  for (auto& [name, t] : ps_s.entries()) CHECK(name.find("_r.") == std::string::npos);
}

TEST_CASE("RBNetS: residuals carry both signs and match the scale shapes") {
  std::mt19937 rng(74);
  NetworkConfig cfg;
  ParamStore<float> ps(5);
  RBNetS<float> nets(ps, cfg);
  auto left = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto right = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto warped = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto init = oracles::random_tensor<float>({1, 1, 64, 128}, rng, false, 0.0f, 10.0f);
  auto out = nets.forward(left, right, warped, init);
  REQUIRE(out.maps.size() == kNumScales);
  bool any_neg = false, any_pos = false;
  for (int s = 0; s < kNumScales; ++s) {
    CHECK(out.maps[s].shape() == Shape4{1, 1, 64 >> s, 128 >> s});
    for (float v : out.maps[s].data()) {
      CHECK(std::isfinite(v));
      any_neg = any_neg || v < 0.0f;
      any_pos = any_pos || v > 0.0f;
    }
  }
  // Unrectified heads with random init produce both signs.
  CHECK(any_neg);
  CHECK(any_pos);
}

TEST_CASE("FadNet: final disparity equals initial plus residual bitwise") {
  std::mt19937 rng(75);
  NetworkConfig cfg;
  FadNet<float> net(cfg);
  auto left = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto right = oracles::random_tensor<float>({1, 3, 64, 128}, rng);
  auto out = net.forward(left, right);
  for (int s = 0; s < kNumScales; ++s) {
    REQUIRE(out.final.maps[s].shape() == out.initial.maps[s].shape());
    for (std::size_t i = 0; i < out.final.maps[s].numel(); ++i)
      CHECK(out.final.maps[s].data()[i] ==
            out.initial.maps[s].data()[i] + out.residual.maps[s].data()[i]);
  }

  // infer() reproduces the full-resolution map without building a graph.
  auto d = net.infer(left, right);
  for (std::size_t i = 0; i < d.numel(); ++i) CHECK(d.data()[i] == out.final.maps[0].data()[i]);
  CHECK(d.node()->parents.empty());
}

TEST_CASE("FadNet: deterministic construction and forward per seed") {
  std::mt19937 rng(76);
  auto left = oracles::random_tensor<float>({1, 3, 64, 64}, rng);
  auto right = oracles::random_tensor<float>({1, 3, 64, 64}, rng);
  NetworkConfig cfg;
  FadNet<float> a(cfg), b(cfg);
  CHECK(a.param_count() == b.param_count());
  auto da = a.infer(left, right);
  auto db = b.infer(left, right);
  for (std::size_t i = 0; i < da.numel(); ++i) CHECK(da.data()[i] == db.data()[i]);

  cfg.init_seed = 43;
  FadNet<float> c(cfg);
  auto dc = c.infer(left, right);
  bool differs = false;
  for (std::size_t i = 0; i < da.numel(); ++i) differs = differs || da.data()[i] != dc.data()[i];
  CHECK(differs);
}

TEST_CASE("FadNet: gradient reaches every trainable parameter") {
  std::mt19937 rng(77);
  NetworkConfig cfg;
  FadNet<float> net(cfg);
  auto left = oracles::random_tensor<float>({1, 3, 64, 64}, rng, false, 0.0f, 1.0f);
  auto right = oracles::random_tensor<float>({1, 3, 64, 64}, rng, false, 0.0f, 1.0f);
  auto gt = oracles::random_tensor<float>({1, 1, 64, 64}, rng, false, 1.0f, 12.0f);

  auto out = net.forward(left, right);
  auto pyr = build_gt_pyramid(gt);
  auto ml = multiscale_loss(out.final.maps, pyr.gt, pyr.masks,
                            LossWeightSchedule::standard().rounds[0].weights);
  CHECK(std::isfinite(ml.loss.item()));
  backward(ml.loss);

  for (auto& [name, t] : net.params().entries()) {
    if (!t.has_grad()) continue;
    bool any = false;
    for (float g : t.grad()) {
      CHECK(std::isfinite(g));
      any = any || g != 0.0f;
    }
    // Rectified prediction heads may be fully clamped at init (dead relu);
    // everything else must receive gradient.
    if (name.rfind("netc.dec.pred", 0) != 0) CHECK_MESSAGE(any, name);
  }
}

TEST_CASE("checkpoint: round trip restores an identical model byte for byte") {
  std::mt19937 rng(78);
  auto left = oracles::random_tensor<float>({1, 3, 64, 64}, rng);
  auto right = oracles::random_tensor<float>({1, 3, 64, 64}, rng);

  NetworkConfig cfg;
  FadNet<float> src(cfg);
  auto bytes = serialize_checkpoint(src.params().entries(), "base_channels=8");

  cfg.init_seed = 99;  // different random init, overwritten by the load
  FadNet<float> dst(cfg);
  std::string snapshot;
  deserialize_checkpoint(bytes, dst.params().entries(), &snapshot);
  CHECK(snapshot == "base_channels=8");

  auto ds = src.infer(left, right);
  auto dd = dst.infer(left, right);
  for (std::size_t i = 0; i < ds.numel(); ++i) CHECK(ds.data()[i] == dd.data()[i]);

  // Re-serialization is byte-identical.
  CHECK(serialize_checkpoint(dst.params().entries(), "base_channels=8") == bytes);
}

TEST_CASE("checkpoint: optional training state round trips exactly") {
  NetworkConfig cfg;
  FadNet<float> net(cfg);
  TrainStateBlob state;
  state.round = 2;
  state.epoch = 7;
  state.step = 1234;
  state.rng_state = "99 42 7";
  for (auto& [name, t] : net.params().entries()) {
    state.m.emplace_back(t.numel(), 0.125);
    state.v.emplace_back(t.numel(), 0.5);
  }
  auto bytes = serialize_checkpoint(net.params().entries(), "", &state);

  TrainStateBlob back;
  bool has_state = false;
  deserialize_checkpoint(bytes, net.params().entries(), nullptr, &back, &has_state);
  CHECK(has_state);
  CHECK(back.round == 2);
  CHECK(back.epoch == 7);
  CHECK(back.step == 1234);
  CHECK(back.rng_state == "99 42 7");
  REQUIRE(back.m.size() == state.m.size());
  CHECK(back.m[0] == state.m[0]);
  CHECK(back.v[3] == state.v[3]);

  bool no_state = true;
  deserialize_checkpoint(serialize_checkpoint(net.params().entries(), ""), net.params().entries(),
                         nullptr, nullptr, &no_state);
  CHECK(!no_state);
}

TEST_CASE("checkpoint: corrupt or incompatible files are rejected") {
  NetworkConfig cfg;
  FadNet<float> net(cfg);
  auto bytes = serialize_checkpoint(net.params().entries(), "cfg");

  CHECK_THROWS_AS(deserialize_checkpoint("XXXXXXXX" + bytes.substr(8), net.params().entries()),
                  FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2), net.params().entries()),
                  FormatError);

  // A model with a different width cannot load the file.
  NetworkConfig wide = cfg;
  wide.base_channels = 16;
  FadNet<float> other(wide);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes, other.params().entries()), FormatError);

  // Double precision is rejected by a float-sized file.
  FadNet<double> dbl(cfg);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes, dbl.params().entries()), FormatError);
}
