#include <filesystem>

#include "doctest.h"
#include "fadnet/correlation.hpp"
#include "fadnet/data_io.hpp"
#include "oracles.hpp"

using namespace fadnet;
namespace fs = std::filesystem;

TEST_CASE("pfm: write/read round trip preserves values and scale") {
  std::mt19937 rng(60);
  auto disp = oracles::random_tensor<float>({1, 1, 5, 7}, rng, false, 0.0f, 50.0f);
  auto bytes = write_pfm(disp, 2.5);
  auto [back, scale] = read_pfm<float>(bytes);
  CHECK(back.shape() == disp.shape());
  CHECK(scale == doctest::Approx(2.5));
  for (std::size_t i = 0; i < disp.numel(); ++i) CHECK(back.data()[i] == disp.data()[i]);

  // A second write of the decoded tensor is byte-identical.
  CHECK(write_pfm(back, 2.5) == bytes);
}

TEST_CASE("pfm: writer emits negative scale and bottom-up rows") {
  auto disp = Tensor<float>::from({1, 1, 2, 1}, {1.0f, 2.0f});
  auto bytes = write_pfm(disp);
  CHECK(bytes.substr(0, 2) == "Pf");
  CHECK(bytes.find("-1") != std::string::npos);  // little-endian marker
  // Payload starts with the bottom row (value 2).
  float first;
  std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
  CHECK(first == 2.0f);
}

TEST_CASE("pfm: three-channel PF and format errors") {
  std::mt19937 rng(61);
  auto img = oracles::random_tensor<float>({1, 3, 4, 6}, rng, false, 0.0f, 1.0f);
  auto bytes = write_pfm(img);
  CHECK(bytes.substr(0, 2) == "PF");
  auto [back, scale] = read_pfm<float>(bytes);
  CHECK(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back.data()[i] == img.data()[i]);

  CHECK_THROWS_AS(read_pfm<float>("P5\n1 1\n-1\n\0\0\0\0"), FormatError);
  CHECK_THROWS_AS(read_pfm<float>(bytes.substr(0, bytes.size() - 4)), FormatError);
  CHECK_THROWS_AS(write_pfm(Tensor<float>::zeros({2, 1, 2, 2})), FormatError);
  CHECK_THROWS_AS(write_pfm(Tensor<float>::zeros({1, 2, 2, 2})), FormatError);
}

TEST_CASE("pfm: big-endian payload decodes") {
  // Hand-built: positive scale, one pixel, value 1.0f stored big-endian.
  std::string bytes = "Pf\n1 1\n1.0\n";
  bytes += '\x3f';
  bytes += '\x80';
  bytes += '\0';
  bytes += '\0';
  auto [t, scale] = read_pfm<float>(bytes);
  CHECK(t.item() == 1.0f);
  CHECK(scale == 1.0);
}

TEST_CASE("png16: round trip, 1/256 quantization, zero marks invalid") {
  std::mt19937 rng(62);
  auto disp = oracles::random_tensor<float>({1, 1, 6, 9}, rng, false, 0.5f, 80.0f);
  auto [back, mask] = read_disparity_png16<float>(write_disparity_png16(disp));
  CHECK(back.shape() == disp.shape());
  for (std::size_t i = 0; i < disp.numel(); ++i) {
    CHECK(std::abs(back.data()[i] - disp.data()[i]) < 1.0f / 512.0f + 1e-6f);
    CHECK(mask.valid[i] == 1);
  }

  // Exact multiples of 1/256 survive unchanged; raw 256 decodes to 1.0.
  auto exact = Tensor<float>::from({1, 1, 1, 4}, {1.0f, 0.5f, 191.0f, 0.0f});
  auto [e_back, e_mask] = read_disparity_png16<float>(write_disparity_png16(exact));
  CHECK(e_back.data()[0] == 1.0f);
  CHECK(e_back.data()[1] == 0.5f);
  CHECK(e_back.data()[2] == 191.0f);
  CHECK(e_back.data()[3] == 0.0f);
  CHECK(e_mask.valid == std::vector<std::uint8_t>{1, 1, 1, 0});
}

TEST_CASE("png16: explicit mask zeroes masked pixels on write") {
  auto disp = Tensor<float>::full({1, 1, 2, 2}, 7.0f);
  ValidityMask m = full_mask(disp);
  m.valid[2] = 0;
  auto [back, rmask] = read_disparity_png16<float>(write_disparity_png16(disp, &m));
  CHECK(back.data()[2] == 0.0f);
  CHECK(rmask.valid == std::vector<std::uint8_t>{1, 1, 0, 1});
}

TEST_CASE("png16: rejects bad signature and wrong depth") {
  CHECK_THROWS_AS(read_disparity_png16<float>("not a png"), FormatError);
  auto good = write_disparity_png16(Tensor<float>::full({1, 1, 2, 2}, 3.0f));
  std::string bad = good;
  bad[16 + 8] = 8;  // IHDR bit depth byte
  CHECK_THROWS_AS(read_disparity_png16<float>(bad), FormatError);
}

TEST_CASE("ppm: round trip within 8-bit quantization") {
  std::mt19937 rng(63);
  auto img = oracles::random_tensor<float>({1, 3, 5, 8}, rng, false, 0.0f, 1.0f);
  auto back = read_ppm<float>(write_ppm(img));
  CHECK(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i)
    CHECK(std::abs(back.data()[i] - img.data()[i]) <= 0.5f / 255.0f + 1e-6f);
  // A second pass is lossless.
  auto back2 = read_ppm<float>(write_ppm(back));
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back2.data()[i] == back.data()[i]);

  CHECK_THROWS_AS(read_ppm<float>("P5\n2 2\n255\n"), FormatError);
  CHECK_THROWS_AS(write_ppm(Tensor<float>::zeros({1, 1, 2, 2})), FormatError);
}

TEST_CASE("normalization: channel means map to zero and the inverse recovers input") {
  PreprocessConfig cfg;
  auto img = Tensor<float>::zeros({1, 3, 2, 2});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) img.at(0, c, y, x) = float(cfg.mean[c]);
  auto n = normalize_colors(img, cfg);
  for (float v : n.data()) CHECK(std::abs(v) < 1e-6f);

  // White maps to (1 - mean) / std per channel.
  auto white = Tensor<float>::full({1, 3, 1, 1}, 1.0f);
  auto nw = normalize_colors(white, cfg);
  for (int c = 0; c < 3; ++c)
    CHECK(nw.at(0, c, 0, 0) ==
          doctest::Approx((1.0 - cfg.mean[c]) / cfg.std_dev[c]).epsilon(1e-5));

  std::mt19937 rng(64);
  auto rnd = oracles::random_tensor<float>({2, 3, 4, 4}, rng, false, 0.0f, 1.0f);
  auto round = denormalize_colors(normalize_colors(rnd, cfg), cfg);
  for (std::size_t i = 0; i < rnd.numel(); ++i)
    CHECK(round.data()[i] == doctest::Approx(rnd.data()[i]).epsilon(1e-5));
}

TEST_CASE("random_crop_pair: determinism, bounds, and shared offsets") {
  auto s = gen_random_dot_stereogram<float>(32, 64, DisparityFieldSpec::layered(6), 100);
  PreprocessConfig cfg;
  cfg.crop_h = 16;
  cfg.crop_w = 24;

  auto a = random_crop_pair(s, cfg, 5);
  auto b = random_crop_pair(s, cfg, 5);
  CHECK(a.left.shape() == Shape4{1, 3, 16, 24});
  for (std::size_t i = 0; i < a.left.numel(); ++i) CHECK(a.left.data()[i] == b.left.data()[i]);
  for (std::size_t i = 0; i < a.gt->numel(); ++i) CHECK(a.gt->data()[i] == b.gt->data()[i]);

  // Locate the offset from the ground truth and verify all planes use it.
  bool found = false;
  for (int y0 = 0; y0 <= 32 - 16 && !found; ++y0)
    for (int x0 = 0; x0 <= 64 - 24 && !found; ++x0) {
      bool match = true;
      for (int y = 0; y < 16 && match; ++y)
        for (int x = 0; x < 24 && match; ++x)
          match = a.gt->at(0, 0, y, x) == s.gt->at(0, 0, y0 + y, x0 + x) &&
                  a.left.at(0, 0, y, x) == s.left.at(0, 0, y0 + y, x0 + x) &&
                  a.right.at(0, 2, y, x) == s.right.at(0, 2, y0 + y, x0 + x);
      found = match;
    }
  CHECK(found);

  // Full-size crop is the identity.
  cfg.crop_h = 32;
  cfg.crop_w = 64;
  auto id = random_crop_pair(s, cfg, 9);
  for (std::size_t i = 0; i < s.left.numel(); ++i) CHECK(id.left.data()[i] == s.left.data()[i]);

  cfg.crop_h = 40;
  CHECK_THROWS_AS(random_crop_pair(s, cfg, 1), ContractError);
}

TEST_CASE("stereogram: zero disparity makes left and right identical") {
  auto s = gen_random_dot_stereogram<float>(16, 32, DisparityFieldSpec::constant(0.0), 7);
  for (std::size_t i = 0; i < s.left.numel(); ++i) CHECK(s.right.data()[i] == s.left.data()[i]);
  for (float v : s.gt->data()) CHECK(v == 0.0f);
  for (auto m : s.occ_mask->valid) CHECK(m == 1);
}

TEST_CASE("stereogram: constant disparity shifts columns and occludes the left edge") {
  const int d = 4;
  auto s = gen_random_dot_stereogram<float>(12, 40, DisparityFieldSpec::constant(d), 8);
  for (float v : s.gt->data()) CHECK(v == float(d));
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool valid = s.occ_mask->valid[std::size_t(y) * 40 + x];
      CHECK(valid == (x >= d));
      if (valid)
        for (int c = 0; c < 3; ++c) CHECK(s.right.at(0, c, y, x - d) == s.left.at(0, c, y, x));
    }
}

TEST_CASE("stereogram: warping right by ground truth reconstructs left where valid") {
  for (unsigned seed : {11u, 12u, 13u}) {
    auto s = gen_random_dot_stereogram<float>(24, 48, DisparityFieldSpec::layered(8, 3), seed);
    auto warped = warp_by_disparity(s.right, *s.gt);
    double acc = 0;
    std::size_t n = 0;
    const std::size_t plane = 24 * 48;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        if (!s.occ_mask->valid[i]) continue;
        acc += std::abs(double(warped.data()[c * plane + i]) - double(s.left.data()[c * plane + i]));
        ++n;
      }
    CHECK(n > 0);
    CHECK(acc / double(n) < 1e-6);
  }
}

TEST_CASE("stereogram: deterministic per seed, bounded layered field") {
  auto a = gen_random_dot_stereogram<float>(16, 32, DisparityFieldSpec::layered(6), 21);
  auto b = gen_random_dot_stereogram<float>(16, 32, DisparityFieldSpec::layered(6), 21);
  auto c = gen_random_dot_stereogram<float>(16, 32, DisparityFieldSpec::layered(6), 22);
  for (std::size_t i = 0; i < a.left.numel(); ++i) CHECK(a.left.data()[i] == b.left.data()[i]);
  bool differs = false;
  for (std::size_t i = 0; i < a.left.numel(); ++i)
    differs = differs || a.left.data()[i] != c.left.data()[i];
  CHECK(differs);
  for (float v : a.gt->data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 6.0f);
  }
  CHECK_THROWS_AS(gen_random_dot_stereogram<float>(16, 32, DisparityFieldSpec::constant(20.0), 1),
                  ContractError);
}

TEST_CASE("manifest: relative path resolution and full sample loading") {
  const fs::path dir = fs::temp_directory_path() / "fadnet_io_test";
  fs::create_directories(dir);

  auto s = gen_random_dot_stereogram<float>(16, 32, DisparityFieldSpec::layered(5), 30);
  write_file_bytes((dir / "l.ppm").string(), write_ppm(s.left));
  write_file_bytes((dir / "r.ppm").string(), write_ppm(s.right));
  write_file_bytes((dir / "d.pfm").string(), write_pfm(*s.gt));
  Tensor<float> mask_as_disp(s.gt->shape());
  for (std::size_t i = 0; i < mask_as_disp.numel(); ++i)
    mask_as_disp.data()[i] = s.occ_mask->valid[i] ? 1.0f : 0.0f;
  write_file_bytes((dir / "m.png").string(), write_disparity_png16(mask_as_disp));

  write_file_bytes((dir / "list.txt").string(),
                   "# comment line\nl.ppm r.ppm d.pfm m.png\nl.ppm r.ppm\n\n");
  auto entries = read_manifest((dir / "list.txt").string());
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].left == (dir / "l.ppm").string());
  CHECK(entries[0].mask == (dir / "m.png").string());
  CHECK(entries[1].gt.empty());

  auto loaded = load_sample<float>(entries[0]);
  CHECK(loaded.left.shape() == Shape4{1, 3, 16, 32});
  REQUIRE(loaded.gt.has_value());
  REQUIRE(loaded.occ_mask.has_value());
  for (std::size_t i = 0; i < s.gt->numel(); ++i) {
    CHECK(loaded.gt->data()[i] == s.gt->data()[i]);
    CHECK(loaded.occ_mask->valid[i] == s.occ_mask->valid[i]);
  }

  auto bare = load_sample<float>(entries[1]);
  CHECK(!bare.gt.has_value());
  CHECK(!bare.occ_mask.has_value());

  CHECK_THROWS_AS(read_manifest((dir / "missing.txt").string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("effective_mask: intersects range validity with the occlusion mask") {
  StereoSample<float> s;
  // With an explicit occlusion mask, zero disparity is real data (the > 0
  // rule only guards against the "0 = missing" disparity-map encoding).
  s.gt = Tensor<float>::from({1, 1, 1, 5}, {5.0f, 0.0f, 200.0f, 5.0f, -1.0f});
  ValidityMask occ;
  occ.shape = s.gt->shape();
  occ.valid = {1, 1, 1, 0, 1};
  s.occ_mask = occ;
  auto m = effective_mask(s);
  CHECK(m.valid == std::vector<std::uint8_t>{1, 1, 0, 0, 0});

  // Without a mask the strict rule applies and zero means missing.
  StereoSample<float> bare;
  bare.gt = Tensor<float>::from({1, 1, 1, 5}, {5.0f, 0.0f, 200.0f, 5.0f, -1.0f});
  auto mb = effective_mask(bare);
  CHECK(mb.valid == std::vector<std::uint8_t>{1, 0, 0, 1, 0});
}
