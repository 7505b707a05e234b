#pragma once

// Dataset containers and formats: PFM disparity maps, KITTI-style 16-bit
// disparity PNGs (value/256, 0 = invalid), binary PPM images, line-oriented
// manifests, preprocessing, and a random-dot stereogram generator that
// provides exact desk-scale ground truth.

#include <zlib.h>

#include <array>
#include <filesystem>
#include <optional>

#include "fadnet/checkpoint.hpp"  // file byte helpers
#include "fadnet/loss.hpp"

namespace fadnet {

template <typename T>
struct StereoSample {
  Tensor<T> left, right;               // (1,3,H,W), values in [0,1]
  std::optional<Tensor<T>> gt;         // (1,1,H,W) disparity in pixels
  std::optional<ValidityMask> occ_mask;  // generator/occlusion validity
  std::string source_id;
};

// Validity per the 0 < d <= 192 rule. The > 0 test exists to catch the
// KITTI "0 = missing" disparity encoding; when the sample carries its own
// occlusion mask, zero disparity is real data and only the mask plus the
// range bounds apply.
template <typename T>
ValidityMask effective_mask(const StereoSample<T>& s) {
  if (!s.occ_mask) return make_validity_mask(*s.gt);
  ValidityMask m;
  m.shape = s.gt->shape();
  m.valid.resize(s.gt->numel());
  for (std::size_t i = 0; i < m.valid.size(); ++i) {
    const T v = s.gt->data()[i];
    m.valid[i] = s.occ_mask->valid[i] && std::isfinite(double(v)) && v >= T(0) &&
                 double(v) <= kMaxValidDisparity;
  }
  return m;
}

struct PreprocessConfig {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std_dev{0.229, 0.224, 0.225};
  int crop_h = 384, crop_w = 768;

  static PreprocessConfig sceneflow_style() { return {}; }
  static PreprocessConfig kitti_style() {
    PreprocessConfig c;
    c.crop_h = 256;
    c.crop_w = 1024;
    return c;
  }
};

// ---- PFM ----

// Header "Pf" (1 channel) or "PF" (3 channels); negative scale marks a
// little-endian payload; rows are stored bottom-up.
template <typename T>
std::pair<Tensor<T>, double> read_pfm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("pfm: truncated header at byte " + std::to_string(start));
    return bytes.substr(start, pos - start);
  };
  const std::string magic = next_token();
  int channels;
  if (magic == "Pf")
    channels = 1;
  else if (magic == "PF")
    channels = 3;
  else
    throw FormatError("pfm: bad magic '" + magic + "' at byte 0");
  int w, h;
  double scale;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    scale = std::stod(next_token());
  } catch (const std::exception&) {
    throw FormatError("pfm: malformed header near byte " + std::to_string(pos));
  }
  if (w <= 0 || h <= 0 || scale == 0) throw FormatError("pfm: invalid dimensions or scale");
  ++pos;  // single whitespace after the scale line
  const bool little_endian = scale < 0;
  const std::size_t payload = std::size_t(w) * h * channels * 4;
  if (pos + payload > bytes.size())
    throw FormatError("pfm: truncated payload at byte " + std::to_string(pos) + ", need " +
                      std::to_string(payload) + " bytes");

  Tensor<T> t({1, channels, h, w});
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (int row = 0; row < h; ++row) {
    const int y = h - 1 - row;  // bottom-up to top-down
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        std::uint32_t u;
        const unsigned char* q = p + (std::size_t(row) * w + x) * channels * 4 + std::size_t(c) * 4;
        if (little_endian)
          u = std::uint32_t(q[0]) | std::uint32_t(q[1]) << 8 | std::uint32_t(q[2]) << 16 |
              std::uint32_t(q[3]) << 24;
        else
          u = std::uint32_t(q[3]) | std::uint32_t(q[2]) << 8 | std::uint32_t(q[1]) << 16 |
              std::uint32_t(q[0]) << 24;
        float f;
        std::memcpy(&f, &u, 4);
        t.at(0, c, y, x) = T(f);
      }
  }
  return {t, std::abs(scale)};
}

template <typename T>
std::string write_pfm(const Tensor<T>& t, double scale = 1.0) {
  const Shape4 s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    throw FormatError("pfm: tensor must be 1x1xHxW or 1x3xHxW, got " + s.str());
  std::ostringstream os;
  os << (s.c == 1 ? "Pf" : "PF") << "\n" << s.w << " " << s.h << "\n" << -std::abs(scale) << "\n";
  std::string out = os.str();
  out.reserve(out.size() + std::size_t(s.w) * s.h * s.c * 4);
  for (int row = 0; row < s.h; ++row) {
    const int y = s.h - 1 - row;
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) {
        const float f = float(t.at(0, c, y, x));
        char buf[4];
        std::memcpy(buf, &f, 4);
        out.append(buf, 4);  // little-endian host
      }
  }
  return out;
}

// ---- PNG, 16-bit grayscale (plus an 8-bit RGB writer for visualizations) ----

namespace png_detail {

inline void put_u32be(std::string& out, std::uint32_t v) {
  out.push_back(char(v >> 24));
  out.push_back(char(v >> 16));
  out.push_back(char(v >> 8));
  out.push_back(char(v));
}

inline std::uint32_t get_u32be(const std::string& in, std::size_t pos) {
  if (pos + 4 > in.size()) throw FormatError("png: truncated at byte " + std::to_string(pos));
  const unsigned char* p = reinterpret_cast<const unsigned char*>(in.data() + pos);
  return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 |
         std::uint32_t(p[3]);
}

inline void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32be(out, std::uint32_t(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32be(out, std::uint32_t(::crc32(0, reinterpret_cast<const Bytef*>(body.data()),
                                       uInt(body.size()))));
}

inline std::string deflate_bytes(const std::string& raw) {
  uLongf cap = ::compressBound(uLong(raw.size()));
  std::string out(cap, '\0');
  if (::compress2(reinterpret_cast<Bytef*>(out.data()), &cap,
                  reinterpret_cast<const Bytef*>(raw.data()), uLong(raw.size()), 6) != Z_OK)
    throw FormatError("png: deflate failed");
  out.resize(cap);
  return out;
}

inline std::string inflate_bytes(const std::string& comp, std::size_t expected) {
  std::string out(expected, '\0');
  uLongf len = uLongf(expected);
  if (::uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                   reinterpret_cast<const Bytef*>(comp.data()), uLong(comp.size())) != Z_OK ||
      len != expected)
    throw FormatError("png: inflate failed or size mismatch");
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

// In-place scanline unfiltering, bpp bytes per pixel.
inline void unfilter(std::string& raw, int h, std::size_t row_bytes, int bpp) {
  std::vector<unsigned char> prev(row_bytes, 0);
  for (int y = 0; y < h; ++y) {
    unsigned char* row = reinterpret_cast<unsigned char*>(raw.data()) + std::size_t(y) * (row_bytes + 1);
    const int filter = row[0];
    unsigned char* cur = row + 1;
    for (std::size_t i = 0; i < row_bytes; ++i) {
      const int a = i >= std::size_t(bpp) ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= std::size_t(bpp) ? prev[i - bpp] : 0;
      int v = cur[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw FormatError("png: unknown filter type " + std::to_string(filter));
      }
      cur[i] = static_cast<unsigned char>(v);
    }
    std::copy(cur, cur + row_bytes, prev.begin());
  }
}

inline const char kSignature[9] = "\x89PNG\r\n\x1a\n";

}  // namespace png_detail

// KITTI disparity encoding: 16-bit grayscale, disparity = raw/256, 0 invalid.
template <typename T>
std::pair<Tensor<T>, ValidityMask> read_disparity_png16(const std::string& bytes) {
  using namespace png_detail;
  if (bytes.size() < 8 || bytes.compare(0, 8, kSignature, 8) != 0)
    throw FormatError("png: bad signature");
  std::size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = -1;
  std::string idat;
  while (pos < bytes.size()) {
    const std::uint32_t len = get_u32be(bytes, pos);
    if (pos + 12 + len > bytes.size()) throw FormatError("png: truncated chunk at byte " + std::to_string(pos));
    const std::string type = bytes.substr(pos + 4, 4);
    const std::string data = bytes.substr(pos + 8, len);
    pos += 12 + len;
    if (type == "IHDR") {
      w = int(get_u32be(data, 0));
      h = int(get_u32be(data, 4));
      bit_depth = static_cast<unsigned char>(data[8]);
      color_type = static_cast<unsigned char>(data[9]);
      if (data[12] != 0) throw FormatError("png: interlaced images unsupported");
    } else if (type == "IDAT") {
      idat += data;
    } else if (type == "IEND") {
      break;
    }
  }
  if (w <= 0 || h <= 0) throw FormatError("png: missing IHDR");
  if (bit_depth != 16 || color_type != 0)
    throw FormatError("png: expected 16-bit grayscale, got bit depth " + std::to_string(bit_depth) +
                      " color type " + std::to_string(color_type));
  const std::size_t row_bytes = std::size_t(w) * 2;
  std::string raw = inflate_bytes(idat, std::size_t(h) * (row_bytes + 1));
  unfilter(raw, h, row_bytes, 2);

  Tensor<T> t({1, 1, h, w});
  ValidityMask mask;
  mask.shape = t.shape();
  mask.valid.resize(t.numel());
  for (int y = 0; y < h; ++y) {
    const unsigned char* row =
        reinterpret_cast<const unsigned char*>(raw.data()) + std::size_t(y) * (row_bytes + 1) + 1;
    for (int x = 0; x < w; ++x) {
      const std::uint16_t v = std::uint16_t(row[2 * x]) << 8 | row[2 * x + 1];
      t.at(0, 0, y, x) = T(v) / T(256);
      mask.valid[std::size_t(y) * w + x] = v > 0;
    }
  }
  return {t, mask};
}

template <typename T>
std::string write_disparity_png16(const Tensor<T>& disparity, const ValidityMask* mask = nullptr) {
  using namespace png_detail;
  const Shape4 s = disparity.shape();
  if (s.n != 1 || s.c != 1) throw FormatError("png16: disparity must be 1x1xHxW, got " + s.str());
  std::string raw;
  raw.reserve(std::size_t(s.h) * (std::size_t(s.w) * 2 + 1));
  for (int y = 0; y < s.h; ++y) {
    raw.push_back('\0');  // filter type 0
    for (int x = 0; x < s.w; ++x) {
      double v = double(disparity.at(0, 0, y, x)) * 256.0;
      if (mask && !mask->valid[std::size_t(y) * s.w + x]) v = 0;
      const std::uint16_t u = std::uint16_t(std::min(std::max(v + 0.5, 0.0), 65535.0));
      raw.push_back(char(u >> 8));
      raw.push_back(char(u & 0xff));
    }
  }
  std::string out(kSignature, 8);
  std::string ihdr;
  put_u32be(ihdr, std::uint32_t(s.w));
  put_u32be(ihdr, std::uint32_t(s.h));
  ihdr += std::string("\x10\x00\x00\x00\x00", 5);  // 16-bit, grayscale
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", deflate_bytes(raw));
  append_chunk(out, "IEND", "");
  return out;
}

// 8-bit RGB PNG, used by the disparity visualization.
inline std::string write_png_rgb8(int h, int w, const std::vector<std::uint8_t>& rgb) {
  using namespace png_detail;
  if (rgb.size() != std::size_t(h) * w * 3) throw FormatError("png: rgb buffer size mismatch");
  std::string raw;
  raw.reserve(std::size_t(h) * (std::size_t(w) * 3 + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(rgb.data()) + std::size_t(y) * w * 3,
               std::size_t(w) * 3);
  }
  std::string out(kSignature, 8);
  std::string ihdr;
  put_u32be(ihdr, std::uint32_t(w));
  put_u32be(ihdr, std::uint32_t(h));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit, truecolor
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", deflate_bytes(raw));
  append_chunk(out, "IEND", "");
  return out;
}

// ---- PPM (binary P6), the compression-free image path ----

template <typename T>
std::string write_ppm(const Tensor<T>& img) {
  const Shape4 s = img.shape();
  if (s.n != 1 || s.c != 3) throw FormatError("ppm: image must be 1x3xHxW, got " + s.str());
  std::ostringstream os;
  os << "P6\n" << s.w << " " << s.h << "\n255\n";
  std::string out = os.str();
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(std::max(double(img.at(0, c, y, x)), 0.0), 1.0);
        out.push_back(char(std::uint8_t(v * 255.0 + 0.5)));
      }
  return out;
}

template <typename T>
Tensor<T> read_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {  // comment line
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("ppm: truncated header");
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P6") throw FormatError("ppm: bad magic");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw FormatError("ppm: only maxval 255 supported");
  ++pos;  // single whitespace before payload
  if (pos + std::size_t(w) * h * 3 > bytes.size()) throw FormatError("ppm: truncated payload");
  Tensor<T> t({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) =
            T(static_cast<unsigned char>(bytes[pos + (std::size_t(y) * w + x) * 3 + c])) / T(255);
  return t;
}

// ---- preprocessing ----

template <typename T>
Tensor<T> normalize_colors(const Tensor<T>& img, const PreprocessConfig& cfg) {
  require(img.shape().c == 3, "normalize_colors: expected 3 channels, got " + img.shape().str());
  Tensor<T> out(img.shape());
  const std::size_t plane = std::size_t(img.shape().h) * img.shape().w;
  for (int b = 0; b < img.shape().n; ++b)
    for (int c = 0; c < 3; ++c) {
      const T m = T(cfg.mean[c]), sd = T(cfg.std_dev[c]);
      const T* in = img.data().data() + (std::size_t(b) * 3 + c) * plane;
      T* o = out.data().data() + (std::size_t(b) * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] = (in[i] - m) / sd;
    }
  return out;
}

template <typename T>
Tensor<T> denormalize_colors(const Tensor<T>& img, const PreprocessConfig& cfg) {
  require(img.shape().c == 3, "denormalize_colors: expected 3 channels");
  Tensor<T> out(img.shape());
  const std::size_t plane = std::size_t(img.shape().h) * img.shape().w;
  for (int b = 0; b < img.shape().n; ++b)
    for (int c = 0; c < 3; ++c) {
      const T m = T(cfg.mean[c]), sd = T(cfg.std_dev[c]);
      const T* in = img.data().data() + (std::size_t(b) * 3 + c) * plane;
      T* o = out.data().data() + (std::size_t(b) * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] = in[i] * sd + m;
    }
  return out;
}

namespace detail {

template <typename T>
Tensor<T> crop(const Tensor<T>& t, int y0, int x0, int ch, int cw) {
  const Shape4 s = t.shape();
  Tensor<T> out({s.n, s.c, ch, cw});
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) out.at(b, c, y, x) = t.at(b, c, y0 + y, x0 + x);
  return out;
}

}  // namespace detail

// Same offset for left, right, and ground truth; a horizontal crop does not
// change disparity values.
template <typename T>
StereoSample<T> random_crop_pair(const StereoSample<T>& sample, const PreprocessConfig& cfg,
                                 unsigned rng_seed) {
  const Shape4 s = sample.left.shape();
  if (cfg.crop_h > s.h || cfg.crop_w > s.w)
    throw ContractError("random_crop_pair: crop " + std::to_string(cfg.crop_h) + "x" +
                        std::to_string(cfg.crop_w) + " larger than image " + s.str());
  std::mt19937 rng(rng_seed);
  const int y0 = s.h == cfg.crop_h ? 0 : int(rng() % unsigned(s.h - cfg.crop_h + 1));
  const int x0 = s.w == cfg.crop_w ? 0 : int(rng() % unsigned(s.w - cfg.crop_w + 1));
  StereoSample<T> out;
  out.source_id = sample.source_id;
  out.left = detail::crop(sample.left, y0, x0, cfg.crop_h, cfg.crop_w);
  out.right = detail::crop(sample.right, y0, x0, cfg.crop_h, cfg.crop_w);
  if (sample.gt) out.gt = detail::crop(*sample.gt, y0, x0, cfg.crop_h, cfg.crop_w);
  if (sample.occ_mask) {
    ValidityMask m;
    m.shape = {1, 1, cfg.crop_h, cfg.crop_w};
    m.valid.resize(m.shape.numel());
    for (int y = 0; y < cfg.crop_h; ++y)
      for (int x = 0; x < cfg.crop_w; ++x)
        m.valid[std::size_t(y) * cfg.crop_w + x] =
            sample.occ_mask->valid[std::size_t(y0 + y) * s.w + (x0 + x)];
    out.occ_mask = m;
  }
  return out;
}

// ---- random-dot stereogram generator ----

struct DisparityFieldSpec {
  enum class Kind { kConstant, kLayered } kind = Kind::kLayered;
  double constant_value = 4.0;  // used by kConstant
  int max_disparity = 12;       // used by kLayered
  int num_layers = 4;

  static DisparityFieldSpec constant(double d) {
    return {Kind::kConstant, d, 0, 0};
  }
  static DisparityFieldSpec layered(int max_d, int layers = 4) {
    return {Kind::kLayered, 0.0, max_d, layers};
  }
};

// The left image is dense random dots; the right image is the left shifted
// per pixel by an integer disparity field, nearest-surface-wins, with noise
// in disoccluded holes. Pixels that lose the scatter (occluded) or fall out
// of frame are marked invalid.
template <typename T>
StereoSample<T> gen_random_dot_stereogram(int h, int w, const DisparityFieldSpec& spec,
                                          unsigned rng_seed) {
  std::mt19937 rng(rng_seed);

  // Integer disparity field.
  std::vector<int> field(std::size_t(h) * w);
  const int bound = w / 4;
  if (spec.kind == DisparityFieldSpec::Kind::kConstant) {
    const int d = int(std::lround(spec.constant_value));
    if (d < 0 || d >= bound)
      throw ContractError("stereogram: disparity " + std::to_string(spec.constant_value) +
                          " outside [0, " + std::to_string(bound) + ")");
    std::fill(field.begin(), field.end(), d);
  } else {
    if (spec.max_disparity < 1 || spec.max_disparity >= bound)
      throw ContractError("stereogram: max_disparity " + std::to_string(spec.max_disparity) +
                          " outside [1, " + std::to_string(bound) + ")");
    const int base = int(rng() % unsigned(spec.max_disparity / 2 + 1));
    std::fill(field.begin(), field.end(), base);
    for (int l = 0; l < spec.num_layers; ++l) {
      // Rectangles with larger disparity overlay (nearer surfaces).
      const int rw = std::max(4, int(rng() % unsigned(w / 2)));
      const int rh = std::max(4, int(rng() % unsigned(h / 2)));
      const int rx = int(rng() % unsigned(std::max(w - rw, 1)));
      const int ry = int(rng() % unsigned(std::max(h - rh, 1)));
      const int d = 1 + int(rng() % unsigned(spec.max_disparity));
      for (int y = ry; y < ry + rh; ++y)
        for (int x = rx; x < rx + rw; ++x)
          field[std::size_t(y) * w + x] = std::max(field[std::size_t(y) * w + x], d);
    }
  }

  // Dense random-dot left image.
  Tensor<T> left({1, 3, h, w});
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (auto& v : left.data()) v = T(uni(rng));

  // Scatter left into right; larger disparity (nearer) wins collisions.
  Tensor<T> right({1, 3, h, w});
  for (auto& v : right.data()) v = T(uni(rng));  // disocclusion fill noise
  std::vector<int> winner(std::size_t(h) * w, -1);  // winning source column per right pixel
  std::vector<int> winner_d(std::size_t(h) * w, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int d = field[std::size_t(y) * w + x];
      const int xr = x - d;
      if (xr < 0) continue;
      const std::size_t i = std::size_t(y) * w + xr;
      if (d > winner_d[i]) {
        winner_d[i] = d;
        winner[i] = x;
        for (int c = 0; c < 3; ++c) right.at(0, c, y, xr) = left.at(0, c, y, x);
      }
    }

  Tensor<T> gt({1, 1, h, w});
  ValidityMask mask;
  mask.shape = gt.shape();
  mask.valid.resize(gt.numel());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = std::size_t(y) * w + x;
      const int d = field[i];
      gt.at(0, 0, y, x) = T(d);
      const int xr = x - d;
      mask.valid[i] = xr >= 0 && winner[std::size_t(y) * w + xr] == x;
    }

  StereoSample<T> s;
  s.left = std::move(left);
  s.right = std::move(right);
  s.gt = std::move(gt);
  s.occ_mask = std::move(mask);
  s.source_id = "rds:" + std::to_string(rng_seed);
  return s;
}

// ---- manifests: one sample per line, "left right gt [mask]" ----

struct ManifestEntry {
  std::string left, right, gt, mask;  // paths; gt/mask may be empty
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest: " + path);
  const auto dir = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    ls >> e.left >> e.right >> e.gt >> e.mask;
    if (e.left.empty() || e.right.empty())
      throw FormatError("manifest: malformed line '" + line + "'");
    auto resolve = [&](std::string& p) {
      if (!p.empty() && !std::filesystem::path(p).is_absolute()) p = (dir / p).string();
    };
    resolve(e.left);
    resolve(e.right);
    resolve(e.gt);
    resolve(e.mask);
    entries.push_back(std::move(e));
  }
  return entries;
}

template <typename T>
StereoSample<T> load_sample(const ManifestEntry& e) {
  StereoSample<T> s;
  s.left = read_ppm<T>(read_file_bytes(e.left));
  s.right = read_ppm<T>(read_file_bytes(e.right));
  s.source_id = e.left;
  if (!e.gt.empty()) {
    auto [gt, scale] = read_pfm<T>(read_file_bytes(e.gt));
    s.gt = gt;
  }
  if (!e.mask.empty()) {
    auto [m, mask] = read_disparity_png16<T>(read_file_bytes(e.mask));
    s.occ_mask = mask;
  }
  return s;
}

}  // namespace fadnet
