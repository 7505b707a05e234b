// Batch command-line surface for the stereo toolkit: training, inference,
// evaluation, synthetic data generation, kernel benchmarks, and config
// introspection. Exit codes: 0 success, 2 usage/input error, 3 data/format
// error, 4 numerical failure.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "fadnet/fadnet.hpp"

using namespace fadnet;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "fadnet-0.1.0";

// ---- key=value config ----

struct ToolConfig {
  NetworkConfig net{};
  OptimizerConfig opt{};
  TrainConfig train{};
  std::string schedule_preset = "standard";   // standard | desk
  std::array<int, 4> desk_epochs{3, 3, 3, 4};
  double test_fraction = 0.2;
};

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto h = line.find('#');
    if (h != std::string::npos) line.resize(h);
    const auto ns = line.find_first_not_of(" \t\r");
    if (ns == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

ToolConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  ToolConfig c;
  auto geti = [&](const char* k, int& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = std::stoi(it->second);
  };
  auto getd = [&](const char* k, double& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = std::stod(it->second);
  };
  auto getb = [&](const char* k, bool& dst) {
    if (auto it = kv.find(k); it != kv.end()) {
      if (it->second != "true" && it->second != "false")
        throw FormatError(std::string("config: ") + k + " must be true or false, got '" +
                          it->second + "'");
      dst = it->second == "true";
    }
  };
  auto getu = [&](const char* k, unsigned& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = unsigned(std::stoul(it->second));
  };

  geti("base_channels", c.net.base_channels);
  geti("correlation_after_stage", c.net.correlation_after_stage);
  geti("corr_max_displacement", c.net.corr_cfg.max_range);
  geti("corr_kernel_radius", c.net.corr_cfg.kernel_half_size);
  if (auto it = kv.find("corr_shift_mode"); it != kv.end()) {
    if (it->second == "two_sided_stride2")
      c.net.corr_cfg.shift_mode = ShiftMode::kTwoSidedStride2;
    else if (it->second == "one_sided_stride1")
      c.net.corr_cfg.shift_mode = ShiftMode::kOneSidedStride1;
    else
      throw FormatError("config: corr_shift_mode must be two_sided_stride2 or one_sided_stride1");
  }
  getb("share_encoder_weights", c.net.share_encoder_weights);
  getb("share_corr_conv_weights", c.net.share_corr_conv_weights);
  getb("include_initial_disparity", c.net.include_initial_disparity);
  getb("include_reconstruction_error", c.net.include_reconstruction_error);
  getd("negative_slope", c.net.negative_slope);
  getu("init_seed", c.net.init_seed);

  getd("beta1", c.opt.beta1);
  getd("beta2", c.opt.beta2);
  getd("eps", c.opt.eps);
  getd("initial_lr", c.opt.initial_lr);
  geti("halve_every", c.opt.halve_every);

  geti("batch_size", c.train.batch_size);
  getu("train_seed", c.train.seed);
  getb("reset_moments_each_round", c.train.reset_moments_each_round);
  getb("normalize_inputs", c.train.normalize_inputs);

  if (auto it = kv.find("schedule_preset"); it != kv.end()) {
    if (it->second != "standard" && it->second != "desk")
      throw FormatError("config: schedule_preset must be standard or desk");
    c.schedule_preset = it->second;
  }
  if (auto it = kv.find("desk_epochs"); it != kv.end()) {
    std::istringstream es(it->second);
    std::string tok;
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(es, tok, ',')) throw FormatError("config: desk_epochs needs 4 values");
      c.desk_epochs[i] = std::stoi(tok);
    }
  }
  getd("test_fraction", c.test_fraction);
  if (c.test_fraction < 0.0 || c.test_fraction >= 1.0)
    throw FormatError("config: test_fraction must be in [0, 1)");
  c.net.validate();
  return c;
}

std::string config_to_text(const ToolConfig& c) {
  std::ostringstream os;
  os << "base_channels=" << c.net.base_channels << "\n"
     << "correlation_after_stage=" << c.net.correlation_after_stage << "\n"
     << "corr_max_displacement=" << c.net.corr_cfg.max_range << "\n"
     << "corr_kernel_radius=" << c.net.corr_cfg.kernel_half_size << "\n"
     << "corr_shift_mode="
     << (c.net.corr_cfg.shift_mode == ShiftMode::kTwoSidedStride2 ? "two_sided_stride2"
                                                            : "one_sided_stride1")
     << "\n"
     << "share_encoder_weights=" << (c.net.share_encoder_weights ? "true" : "false") << "\n"
     << "share_corr_conv_weights=" << (c.net.share_corr_conv_weights ? "true" : "false") << "\n"
     << "include_initial_disparity=" << (c.net.include_initial_disparity ? "true" : "false") << "\n"
     << "include_reconstruction_error=" << (c.net.include_reconstruction_error ? "true" : "false")
     << "\n"
     << "negative_slope=" << c.net.negative_slope << "\n"
     << "init_seed=" << c.net.init_seed << "\n"
     << "beta1=" << c.opt.beta1 << "\n"
     << "beta2=" << c.opt.beta2 << "\n"
     << "eps=" << c.opt.eps << "\n"
     << "initial_lr=" << c.opt.initial_lr << "\n"
     << "halve_every=" << c.opt.halve_every << "\n"
     << "batch_size=" << c.train.batch_size << "\n"
     << "train_seed=" << c.train.seed << "\n"
     << "reset_moments_each_round=" << (c.train.reset_moments_each_round ? "true" : "false") << "\n"
     << "normalize_inputs=" << (c.train.normalize_inputs ? "true" : "false") << "\n"
     << "schedule_preset=" << c.schedule_preset << "\n"
     << "desk_epochs=" << c.desk_epochs[0] << "," << c.desk_epochs[1] << "," << c.desk_epochs[2]
     << "," << c.desk_epochs[3] << "\n"
     << "test_fraction=" << c.test_fraction << "\n";
  return os.str();
}

LossWeightSchedule schedule_for(const ToolConfig& c) {
  return c.schedule_preset == "desk" ? LossWeightSchedule::desk(c.desk_epochs)
                                     : LossWeightSchedule::standard();
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const std::string& config_text, unsigned seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
  std::ostringstream os;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  os << "command=" << command << "\n"
     << "version=" << kVersion << "\n"
     << "seed=" << seed << "\n"
     << "timestamp=" << now << "\n";
  for (const auto& p : inputs) os << "input=" << p << "\n";
  for (const auto& p : outputs) os << "output=" << p << "\n";
  os << "config_begin\n" << config_text << "config_end\n";
  write_file_bytes((out_dir / "run_manifest.txt").string(), os.str());
}

// ---- padding to the network's downsample factor ----

Tensor<float> pad_to_multiple(const Tensor<float>& img, int factor) {
  const Shape4 s = img.shape();
  const int ph = (s.h + factor - 1) / factor * factor;
  const int pw = (s.w + factor - 1) / factor * factor;
  if (ph == s.h && pw == s.w) return img.detach();
  Tensor<float> out({s.n, s.c, ph, pw});
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(b, c, y, x) = img.at(b, c, y, x);
  return out;
}

Tensor<float> crop_to(const Tensor<float>& img, int h, int w) {
  const Shape4 s = img.shape();
  if (s.h == h && s.w == w) return img.detach();
  Tensor<float> out({s.n, s.c, h, w});
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(b, c, y, x) = img.at(b, c, y, x);
  return out;
}

// Fixed five-stop gradient (black, blue, cyan, yellow, red) over disparity
// normalized by its maximum; identical inputs give identical images.
std::vector<std::uint8_t> colormap_disparity(const Tensor<float>& disp) {
  const Shape4 s = disp.shape();
  float dmax = 1e-6f;
  for (float v : disp.data()) dmax = std::max(dmax, v);
  static constexpr double stops[5][3] = {
      {0, 0, 0}, {0, 0, 1}, {0, 1, 1}, {1, 1, 0}, {1, 0, 0}};
  std::vector<std::uint8_t> rgb(std::size_t(s.h) * s.w * 3);
  for (std::size_t i = 0; i < std::size_t(s.h) * s.w; ++i) {
    const double t = std::clamp(double(disp.data()[i]) / dmax, 0.0, 1.0) * 4.0;
    const int k = std::min(int(t), 3);
    const double f = t - k;
    for (int c = 0; c < 3; ++c) {
      const double v = stops[k][c] * (1 - f) + stops[k + 1][c] * f;
      rgb[i * 3 + c] = std::uint8_t(std::lround(v * 255.0));
    }
  }
  return rgb;
}

// ---- dataset plumbing ----

std::vector<StereoSample<float>> load_manifest_samples(const std::string& path) {
  std::vector<StereoSample<float>> samples;
  for (const auto& e : read_manifest(path)) samples.push_back(load_sample<float>(e));
  return samples;
}

std::string read_config_file(const std::string& path) {
  if (path.empty()) return "";
  return read_file_bytes(path);
}

// ---- subcommands ----

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_dir) {
  if (!fs::exists(manifest_path))
    throw ContractError("train: dataset manifest not found: " + manifest_path);
  ToolConfig cfg = config_from_kv(parse_kv(read_config_file(config_path)));
  auto samples = load_manifest_samples(manifest_path);
  for (const auto& s : samples)
    if (!s.gt) throw FormatError("train: sample without ground truth: " + s.source_id);

  const std::size_t n_test = std::size_t(double(samples.size()) * cfg.test_fraction);
  if (samples.size() - n_test == 0) throw FormatError("train: no training samples after split");
  std::vector<StereoSample<float>> test_set(samples.end() - n_test, samples.end());
  samples.resize(samples.size() - n_test);

  fs::create_directories(out_dir);
  const std::string config_text = config_to_text(cfg);

  FadNet<float> model(cfg.net);
  Trainer<float> trainer(model, cfg.opt, schedule_for(cfg), cfg.train);

  std::ofstream metric_log(fs::path(out_dir) / "metrics.txt");
  std::vector<std::string> outputs{(fs::path(out_dir) / "metrics.txt").string()};

  auto on_round_end = [&](int round) {
    TrainStateBlob blob;
    blob.round = std::uint32_t(round);
    blob.step = trainer.state().step;
    blob.m = trainer.state().m;
    blob.v = trainer.state().v;
    blob.rng_state = trainer.serialize_rng();
    const auto path = fs::path(out_dir) / ("round_" + std::to_string(round) + ".ckpt");
    write_file_bytes(path.string(),
                     serialize_checkpoint(model.params().entries(), config_text, &blob));
    outputs.push_back(path.string());
    std::cout << "checkpoint round=" << round << " path=" << path.string() << "\n";
  };

  auto result = trainer.train(samples, test_set, &metric_log, on_round_end);
  std::cout << "initial_test_epe=" << result.initial_test_epe
            << " final_test_epe=" << result.round_final_test_epe[3] << "\n";
  write_run_manifest(out_dir, "train", config_text, cfg.train.seed,
                     {config_path, manifest_path}, outputs);
  return 0;
}

std::pair<FadNet<float>, ToolConfig> load_model(const std::string& checkpoint_path) {
  const std::string bytes = read_file_bytes(checkpoint_path);
  // The config snapshot decides the architecture; read it before the weights.
  std::string snapshot;
  {
    // Minimal pre-parse: header + config block only.
    if (bytes.size() < 17 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0)
      throw FormatError("checkpoint: bad magic in " + checkpoint_path);
    std::uint32_t cfg_len;
    std::memcpy(&cfg_len, bytes.data() + 13, 4);
    if (17 + std::size_t(cfg_len) > bytes.size())
      throw FormatError("checkpoint: truncated config in " + checkpoint_path);
    snapshot = bytes.substr(17, cfg_len);
  }
  ToolConfig cfg = config_from_kv(parse_kv(snapshot));
  FadNet<float> model(cfg.net);
  deserialize_checkpoint(bytes, model.params().entries());
  return {std::move(model), cfg};
}

int cmd_infer(const std::string& checkpoint_path, const std::string& left_path,
              const std::string& right_path, const std::string& out_pfm,
              const std::string& out_png) {
  auto [model, cfg] = load_model(checkpoint_path);
  auto left = read_ppm<float>(read_file_bytes(left_path));
  auto right = read_ppm<float>(read_file_bytes(right_path));
  if (!(left.shape() == right.shape()))
    throw ContractError("infer: image sizes differ, left " + left.shape().str() + " vs right " +
                        right.shape().str());

  const int h = left.shape().h, w = left.shape().w;
  const int factor = cfg.net.downsample_factor();
  Tensor<float> nl = cfg.train.normalize_inputs ? normalize_colors(left, cfg.train.preprocess) : left;
  Tensor<float> nr = cfg.train.normalize_inputs ? normalize_colors(right, cfg.train.preprocess) : right;

  const auto t0 = std::chrono::steady_clock::now();
  Tensor<float> disp = model.infer(pad_to_multiple(nl, factor), pad_to_multiple(nr, factor));
  const auto t1 = std::chrono::steady_clock::now();

  disp = crop_to(disp, h, w);
  for (auto& v : disp.data()) v = std::max(v, 0.0f);  // disparity is non-negative
  write_file_bytes(out_pfm, write_pfm(disp));
  if (!out_png.empty())
    write_file_bytes(out_png, write_png_rgb8(h, w, colormap_disparity(disp)));

  const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::cout << "inference_ms=" << ms << " out=" << out_pfm << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path) {
  auto [model, cfg] = load_model(checkpoint_path);
  const auto entries = read_manifest(manifest_path);
  const int factor = cfg.net.downsample_factor();
  double epe_acc = 0, d1_acc = 0;
  std::size_t n = 0, skipped = 0;
  for (const auto& e : entries) {
    auto s = load_sample<float>(e);
    if (!s.gt) {
      std::cout << "sample=" << s.source_id << " skipped=no_gt\n";
      ++skipped;
      continue;
    }
    Tensor<float> nl = cfg.train.normalize_inputs ? normalize_colors(s.left, cfg.train.preprocess)
                                                  : s.left;
    Tensor<float> nr = cfg.train.normalize_inputs ? normalize_colors(s.right, cfg.train.preprocess)
                                                  : s.right;
    Tensor<float> pred = model.infer(pad_to_multiple(nl, factor), pad_to_multiple(nr, factor));
    pred = crop_to(pred, s.left.shape().h, s.left.shape().w);
    const ValidityMask mask = effective_mask(s);
    const auto e_epe = epe(pred, *s.gt, mask);
    const auto e_d1 = d1_rate(pred, *s.gt, mask);
    if (e_epe.empty_mask) {
      std::cout << "sample=" << s.source_id << " skipped=empty_mask\n";
      ++skipped;
      continue;
    }
    std::cout << "sample=" << s.source_id << " epe=" << e_epe.value << " d1=" << e_d1.value << "\n";
    epe_acc += e_epe.value;
    d1_acc += e_d1.value;
    ++n;
  }
  std::cout << "aggregate n=" << n << " skipped=" << skipped
            << " epe=" << (n ? epe_acc / double(n) : 0.0)
            << " d1=" << (n ? d1_acc / double(n) : 0.0) << "\n";
  return 0;
}

int cmd_gen_data(int n, int h, int w, unsigned seed, const std::string& out_dir, int max_disparity,
                 int layers, double constant, bool use_constant) {
  fs::create_directories(out_dir);
  std::ostringstream manifest;
  std::vector<std::string> outputs;
  for (int i = 0; i < n; ++i) {
    const DisparityFieldSpec spec = use_constant
                                        ? DisparityFieldSpec::constant(constant)
                                        : DisparityFieldSpec::layered(max_disparity, layers);
    auto s = gen_random_dot_stereogram<float>(h, w, spec, seed + unsigned(i));
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04d", i);
    const std::string base = (fs::path(out_dir) / stem).string();
    write_file_bytes(base + "_left.ppm", write_ppm(s.left));
    write_file_bytes(base + "_right.ppm", write_ppm(s.right));
    write_file_bytes(base + "_disp.pfm", write_pfm(*s.gt));
    // The occlusion mask travels as a 16-bit PNG with value 1 for valid.
    Tensor<float> m(s.gt->shape());
    for (std::size_t j = 0; j < m.numel(); ++j) m.data()[j] = s.occ_mask->valid[j] ? 1.0f : 0.0f;
    write_file_bytes(base + "_mask.png", write_disparity_png16(m));
    manifest << stem << "_left.ppm " << stem << "_right.ppm " << stem << "_disp.pfm " << stem
             << "_mask.png\n";
    outputs.push_back(base + "_left.ppm");
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  write_file_bytes(manifest_path, manifest.str());
  std::ostringstream cfg;
  cfg << "n=" << n << "\nheight=" << h << "\nwidth=" << w << "\nmax_disparity=" << max_disparity
      << "\nlayers=" << layers << "\n";
  if (use_constant) cfg << "constant=" << constant << "\n";
  write_run_manifest(out_dir, "gen-data", cfg.str(), seed, {}, {manifest_path});
  std::cout << "generated n=" << n << " manifest=" << manifest_path << "\n";
  return 0;
}

struct BenchReport {
  double mean_ms = 0, min_ms = 0, macs = 0;
};

BenchReport bench_kernel(const std::string& kernel, int c, int h, int w, int reps,
                         int max_displacement, int kernel_radius) {
  if (c < 1 || h < 1 || w < 1) throw ContractError("bench: shape dims must be positive");
  if (reps < 1) throw ContractError("bench: reps must be >= 1");
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> dist{-1.0, 1.0};
  auto rand_t = [&](Shape4 s) {
    Tensor<float> t(s);
    for (auto& v : t.data()) v = float(dist(rng));
    return t;
  };

  NoGradGuard ng;
  std::function<void()> run;
  double macs = 0;
  if (kernel == "patch_corr" || kernel == "pointwise_corr") {
    CorrelationConfig cc;
    cc.max_range = max_displacement;
    cc.kernel_half_size = kernel == "patch_corr" ? kernel_radius : 0;
    auto f1 = rand_t({1, c, h, w});
    auto f2 = rand_t({1, c, h, w});
    const double shifts = double(cc.shift_values().size());
    const int k = cc.kernel_half_size;
    macs = shifts * c * h * w * (2 * k + 1) * (2 * k + 1);
    // Both paths time the correlation itself; the point-wise form is the
    // k = 0 special case (its pre-convolutions are ordinary network layers
    // and are benchmarked separately as conv2d).
    run = [=] { patch_correlation(f1, f2, cc); };
  } else if (kernel == "warp") {
    auto right = rand_t({1, c, h, w});
    auto disp = rand_t({1, 1, h, w});
    macs = 2.0 * c * h * w;
    run = [=] { warp_by_disparity(right, disp); };
  } else if (kernel == "conv2d") {
    auto x = rand_t({1, c, h, w});
    auto wt = rand_t({c, c, 3, 3});
    macs = double(c) * c * 9 * h * w;
    run = [=] { conv2d(x, wt, std::optional<Tensor<float>>{}, 1, 1); };
  } else {
    throw ContractError("bench: unknown kernel '" + kernel + "'");
  }

  for (int i = 0; i < 3; ++i) run();  // warmup
  BenchReport r;
  r.min_ms = std::numeric_limits<double>::infinity();
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    r.mean_ms += ms;
    r.min_ms = std::min(r.min_ms, ms);
  }
  r.mean_ms /= reps;
  r.macs = macs;
  return r;
}

int cmd_bench(const std::string& kernel, int c, int h, int w, int reps, int max_displacement,
              int kernel_radius) {
  const BenchReport r = bench_kernel(kernel, c, h, w, reps, max_displacement, kernel_radius);
  std::cout << "kernel=" << kernel << " shape=" << c << "x" << h << "x" << w << " reps=" << reps
            << " mean_ms=" << r.mean_ms << " min_ms=" << r.min_ms
            << " gmacs_per_s=" << r.macs / (r.mean_ms * 1e6) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo disparity toolkit: correlation networks with multi-scale "
               "residual refinement"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, out_dir, checkpoint_path;
  std::string left_path, right_path, out_pfm, out_png;

  auto* train = app.add_subcommand("train", "Train on a dataset manifest");
  train->add_option("--config", config_path, "key=value config file (defaults apply if omitted)");
  train->add_option("--data", manifest_path, "dataset manifest")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* infer = app.add_subcommand("infer", "Predict disparity for one stereo pair");
  infer->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  infer->add_option("--left", left_path, "left image (PPM)")->required();
  infer->add_option("--right", right_path, "right image (PPM)")->required();
  infer->add_option("--out", out_pfm, "output disparity PFM")->required();
  infer->add_option("--color-out", out_png, "optional color-mapped PNG");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  eval->add_option("--data", manifest_path, "dataset manifest")->required();

  int gen_n = 10, gen_h = 64, gen_w = 128, gen_max_d = 12, gen_layers = 4;
  unsigned gen_seed = 1;
  double gen_constant = 0.0;
  auto* gen = app.add_subcommand("gen-data", "Generate random-dot stereogram samples");
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--height", gen_h, "image height");
  gen->add_option("--width", gen_w, "image width");
  gen->add_option("--seed", gen_seed, "base random seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--max-disparity", gen_max_d, "layered field maximum disparity");
  gen->add_option("--layers", gen_layers, "number of disparity layers");
  auto* const_opt = gen->add_option("--constant", gen_constant,
                                    "constant disparity field instead of layered");

  std::string bench_kernel_name;
  int bench_c = 64, bench_h = 32, bench_w = 64, bench_reps = 100, bench_d = 20, bench_k = 1;
  auto* bench = app.add_subcommand("bench", "Time a compute kernel");
  bench->add_option("--kernel", bench_kernel_name,
                    "one of patch_corr, pointwise_corr, warp, conv2d")
      ->required();
  bench->add_option("--channels", bench_c, "feature channels");
  bench->add_option("--height", bench_h, "map height");
  bench->add_option("--width", bench_w, "map width");
  bench->add_option("--reps", bench_reps, "timed repetitions after warmup");
  bench->add_option("--max-displacement", bench_d, "correlation displacement range");
  bench->add_option("--kernel-radius", bench_k, "patch radius for patch_corr");

  auto* dump = app.add_subcommand("dump-config", "Print the full default config");
  dump->add_option("--config", config_path, "optional base config to merge over the defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, manifest_path, out_dir);
    if (infer->parsed()) return cmd_infer(checkpoint_path, left_path, right_path, out_pfm, out_png);
    if (eval->parsed()) return cmd_eval(checkpoint_path, manifest_path);
    if (gen->parsed())
      return cmd_gen_data(gen_n, gen_h, gen_w, gen_seed, out_dir, gen_max_d, gen_layers,
                          gen_constant, const_opt->count() > 0);
    if (bench->parsed())
      return cmd_bench(bench_kernel_name, bench_c, bench_h, bench_w, bench_reps, bench_d, bench_k);
    if (dump->parsed()) {
      ToolConfig cfg = config_from_kv(parse_kv(read_config_file(config_path)));
      std::cout << config_to_text(cfg);
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
