#include "doctest.h"
#include "fadnet/loss.hpp"
#include "oracles.hpp"

using namespace fadnet;

TEST_CASE("smooth_l1: closed-form values") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
  CHECK(smooth_l1(-0.5) == doctest::Approx(0.125));
  CHECK(smooth_l1(-2.0) == doctest::Approx(1.5));
  CHECK(smooth_l1(2.0) == doctest::Approx(1.5));
  CHECK(smooth_l1(1.0) == doctest::Approx(0.5));
  CHECK(smooth_l1(-1.0) == doctest::Approx(0.5));
}

TEST_CASE("smooth_l1: continuity and C1 at |x| = 1") {
  const double eps = 1e-7;
  CHECK(std::abs(smooth_l1(1.0 - eps) - smooth_l1(1.0 + eps)) < 1e-6);
  // One-sided difference quotients approach +-1 from both sides.
  auto slope = [](double a, double b) { return (smooth_l1(b) - smooth_l1(a)) / (b - a); };
  CHECK(slope(1.0 - 1e-5, 1.0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(slope(1.0, 1.0 + 1e-5) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(slope(-1.0, -1.0 + 1e-5) == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("smooth_l1: even, non-negative, monotone in |x|") {
  std::mt19937 rng(40);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  double prev = 0;
  for (double x = 0; x < 4.0; x += 0.01) {
    CHECK(smooth_l1(x) >= prev);
    prev = smooth_l1(x);
  }
  for (int i = 0; i < 100; ++i) {
    const double x = dist(rng);
    CHECK(smooth_l1(x) == doctest::Approx(smooth_l1(-x)));
    CHECK(smooth_l1(x) >= 0.0);
  }
}

TEST_CASE("scale_loss: zeros, constant offset, masked oracle") {
  std::mt19937 rng(41);
  auto gt = oracles::random_tensor<float>({1, 1, 6, 8}, rng, false, 1.0f, 20.0f);
  auto mask = full_mask(gt);

  auto zero = scale_loss(gt.detach(), gt, mask);
  CHECK(zero.loss.item() == 0.0f);

  Tensor<float> pred(gt.shape());
  for (std::size_t i = 0; i < pred.numel(); ++i) pred.data()[i] = gt.data()[i] - 2.0f;
  auto off = scale_loss(pred, gt, mask);
  CHECK(off.loss.item() == doctest::Approx(1.5f));

  // 30% random masking, per-pixel loop oracle.
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& v : mask.valid) v = uni(rng) > 0.3;
  auto rnd_pred = oracles::random_tensor<float>(gt.shape(), rng, false, 0.0f, 22.0f);
  auto res = scale_loss(rnd_pred, gt, mask);
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    if (!mask.valid[i]) continue;
    acc += smooth_l1(double(gt.data()[i]) - double(rnd_pred.data()[i]));
    ++n;
  }
  CHECK(double(res.loss.item()) == doctest::Approx(acc / double(n)).epsilon(1e-6));
}

TEST_CASE("scale_loss: empty mask returns 0 with warning flag") {
  auto gt = Tensor<float>::full({1, 1, 2, 2}, 5.0f);
  ValidityMask mask = full_mask(gt);
  std::fill(mask.valid.begin(), mask.valid.end(), 0);
  auto r = scale_loss(Tensor<float>::zeros(gt.shape()), gt, mask);
  CHECK(r.loss.item() == 0.0f);
  CHECK(r.empty_mask);
}

TEST_CASE("scale_loss: invariant to values at masked-out pixels") {
  std::mt19937 rng(42);
  auto gt = oracles::random_tensor<float>({1, 1, 4, 4}, rng, false, 1.0f, 10.0f);
  auto pred = oracles::random_tensor<float>({1, 1, 4, 4}, rng, false, 1.0f, 10.0f);
  ValidityMask mask = full_mask(gt);
  mask.valid[3] = 0;
  mask.valid[7] = 0;
  const float before = scale_loss(pred, gt, mask).loss.item();
  pred.data()[3] = 999.0f;
  gt.data()[7] = -123.0f;
  CHECK(scale_loss(pred, gt, mask).loss.item() == before);
}

TEST_CASE("validity mask: finite, positive, <= 192") {
  auto gt = Tensor<float>::from({1, 1, 1, 5},
                                {0.0f, 5.0f, 192.0f, 193.0f, std::numeric_limits<float>::infinity()});
  auto m = make_validity_mask(gt);
  CHECK(m.valid == std::vector<std::uint8_t>{0, 1, 1, 0, 0});
}

TEST_CASE("LossWeightSchedule: Table rows and epoch counts") {
  auto s = LossWeightSchedule::standard();
  REQUIRE(s.rounds.size() == 4);
  CHECK(s.rounds[0].weights == std::array<double, 7>{0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005});
  CHECK(s.rounds[1].weights == std::array<double, 7>{0.6, 0.32, 0.08, 0.04, 0.02, 0.01, 0.005});
  CHECK(s.rounds[2].weights == std::array<double, 7>{0.8, 0.16, 0.04, 0.02, 0.01, 0.005, 0.0025});
  CHECK(s.rounds[3].weights == std::array<double, 7>{1.0, 0, 0, 0, 0, 0, 0});
  CHECK(s.rounds[0].epochs == 20);
  CHECK(s.rounds[1].epochs == 20);
  CHECK(s.rounds[2].epochs == 20);
  CHECK(s.rounds[3].epochs == 30);
}

namespace {

// Synthetic 7-scale pyramid pair for multiscale_loss tests.
struct PyramidFixture {
  std::vector<Tensor<float>> preds, gts;
  std::vector<ValidityMask> masks;

  explicit PyramidFixture(unsigned seed, int h = 64, int w = 128) {
    std::mt19937 rng(seed);
    for (int s = 0; s < kNumScales; ++s) {
      Shape4 sh{1, 1, h >> s, w >> s};
      preds.push_back(oracles::random_tensor<float>(sh, rng, false, 1.0f, 10.0f));
      gts.push_back(oracles::random_tensor<float>(sh, rng, false, 1.0f, 10.0f));
      masks.push_back(full_mask(gts.back()));
    }
  }
};

}  // namespace

TEST_CASE("multiscale_loss: final-round weights reduce to the full-resolution loss") {
  PyramidFixture f(50);
  auto round4 = LossWeightSchedule::standard().rounds[3].weights;
  auto ml = multiscale_loss(f.preds, f.gts, f.masks, round4);
  auto l0 = scale_loss(f.preds[0], f.gts[0], f.masks[0]);
  CHECK(ml.loss.item() == doctest::Approx(l0.loss.item()));
}

TEST_CASE("multiscale_loss: all-zero weights give zero loss and zero grads") {
  PyramidFixture f(51);
  for (auto& p : f.preds) p.set_requires_grad(true);
  auto ml = multiscale_loss(f.preds, f.gts, f.masks, {0, 0, 0, 0, 0, 0, 0});
  CHECK(ml.loss.item() == 0.0f);
  backward(ml.loss);
  for (auto& p : f.preds)
    for (float g : p.grad()) CHECK(g == 0.0f);
}

TEST_CASE("multiscale_loss: round-1 weights match hand-computed weighted sum") {
  PyramidFixture f(52);
  auto round1 = LossWeightSchedule::standard().rounds[0].weights;
  auto ml = multiscale_loss(f.preds, f.gts, f.masks, round1);
  double expected = 0;
  for (int s = 0; s < kNumScales; ++s)
    expected += round1[s] * double(scale_loss(f.preds[s], f.gts[s], f.masks[s]).loss.item());
  CHECK(double(ml.loss.item()) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("multiscale_loss: linear in the weight vector") {
  PyramidFixture f(53);
  std::array<double, 7> wa{0.3, 0.1, 0, 0.2, 0, 0.05, 0.01};
  std::array<double, 7> wb{0.1, 0.4, 0.2, 0, 0.3, 0, 0.02};
  std::array<double, 7> wsum;
  for (int i = 0; i < 7; ++i) wsum[i] = wa[i] + wb[i];
  const double la = multiscale_loss(f.preds, f.gts, f.masks, wa).loss.item();
  const double lb = multiscale_loss(f.preds, f.gts, f.masks, wb).loss.item();
  const double ls = multiscale_loss(f.preds, f.gts, f.masks, wsum).loss.item();
  CHECK(ls == doctest::Approx(la + lb).epsilon(1e-6));
}

TEST_CASE("multiscale_loss: zero weight blocks gradient to that scale") {
  PyramidFixture f(54);
  for (auto& p : f.preds) p.set_requires_grad(true);
  std::array<double, 7> w{1.0, 0, 0.5, 0, 0, 0, 0};
  backward(multiscale_loss(f.preds, f.gts, f.masks, w).loss);
  bool scale0_nonzero = false, scale2_nonzero = false;
  for (float g : f.preds[0].grad()) scale0_nonzero = scale0_nonzero || g != 0.0f;
  for (float g : f.preds[2].grad()) scale2_nonzero = scale2_nonzero || g != 0.0f;
  CHECK(scale0_nonzero);
  CHECK(scale2_nonzero);
  for (int s : {1, 3, 4, 5, 6})
    for (float g : f.preds[s].grad()) CHECK(g == 0.0f);
}

TEST_CASE("gt pyramid: halves disparity values and applies the majority rule") {
  // Constant disparity 8 at full resolution: scale s value is 8 / 2^s.
  auto gt = Tensor<float>::full({1, 1, 64, 128}, 8.0f);
  auto p = build_gt_pyramid(gt);
  REQUIRE(p.gt.size() == kNumScales);
  for (int s = 0; s < kNumScales; ++s) {
    CHECK(p.gt[s].shape() == Shape4{1, 1, 64 >> s, 128 >> s});
    for (float v : p.gt[s].data()) CHECK(v == doctest::Approx(8.0f / float(1 << s)));
    for (auto m : p.masks[s].valid) CHECK(m == 1);
  }

  // An invalid (zero) quadrant invalidates coarse pixels where it covers >= half.
  auto gt2 = Tensor<float>::full({1, 1, 64, 128}, 10.0f);
  gt2.at(0, 0, 0, 0) = 0;
  gt2.at(0, 0, 0, 1) = 0;
  auto p2 = build_gt_pyramid(gt2);
  CHECK(p2.masks[1].valid[0] == 0);  // 2 of 4 sources invalid
  CHECK(p2.masks[1].valid[1] == 1);
}

TEST_CASE("epe: basics and loop oracle") {
  std::mt19937 rng(55);
  auto gt = oracles::random_tensor<float>({1, 1, 8, 8}, rng, false, 1.0f, 30.0f);
  auto mask = full_mask(gt);
  CHECK(epe(gt.detach(), gt, mask).value == 0.0);

  Tensor<float> off(gt.shape());
  for (std::size_t i = 0; i < off.numel(); ++i) off.data()[i] = gt.data()[i] + 1.0f;
  CHECK(epe(off, gt, mask).value == doctest::Approx(1.0));

  auto pred = oracles::random_tensor<float>(gt.shape(), rng, false, 0.0f, 30.0f);
  double acc = 0;
  for (std::size_t i = 0; i < gt.numel(); ++i)
    acc += std::abs(double(pred.data()[i]) - double(gt.data()[i]));
  CHECK(epe(pred, gt, mask).value == doctest::Approx(acc / double(gt.numel())).epsilon(1e-6));

  // Symmetry.
  CHECK(epe(pred, gt, mask).value == doctest::Approx(epe(gt, pred, mask).value));

  ValidityMask empty = mask;
  std::fill(empty.valid.begin(), empty.valid.end(), 0);
  auto r = epe(pred, gt, empty);
  CHECK(r.value == 0.0);
  CHECK(r.empty_mask);
}

TEST_CASE("d1_rate: thresholds and counting oracle") {
  auto gt = Tensor<float>::full({1, 1, 4, 4}, 10.0f);
  auto mask = full_mask(gt);
  CHECK(d1_rate(gt.detach(), gt, mask).value == 0.0);

  auto pred = Tensor<float>::full({1, 1, 4, 4}, 14.0f);  // error 4 > 3 and > 0.5
  CHECK(d1_rate(pred, gt, mask).value == 1.0);

  // Mixed map with a known outlier count: 5 outliers out of 16.
  Tensor<float> mixed = gt.detach();
  for (int i = 0; i < 5; ++i) mixed.data()[i] = 20.0f;   // error 10: outlier
  for (int i = 5; i < 8; ++i) mixed.data()[i] = 12.0f;   // error 2: inlier
  auto r = d1_rate(mixed, gt, mask);
  CHECK(r.value == doctest::Approx(5.0 / 16.0));
  CHECK(r.value >= 0.0);
  CHECK(r.value <= 1.0);

  // Large relative threshold: error 4 on gt 100 is under 5%.
  auto gt_big = Tensor<float>::full({1, 1, 2, 2}, 100.0f);
  auto pred_big = Tensor<float>::full({1, 1, 2, 2}, 104.0f);
  CHECK(d1_rate(pred_big, gt_big, full_mask(gt_big)).value == 0.0);
}
