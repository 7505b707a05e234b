#pragma once

// Versioned binary parameter container. Layout:
//   magic "FADNCKPT", u32 version, u8 scalar_size,
//   u32 config_len, config bytes (key=value snapshot),
//   u32 param_count, per param: u16 name_len, name, 4x u32 dims, u64 offset,
//   u64 blob_len, raw little-endian scalars,
//   u8 has_train_state, optional train-state section.
// Offsets are element offsets into the blob; round-trips are byte-exact.

#include <cstring>
#include <fstream>
#include <sstream>

#include "fadnet/tensor.hpp"

namespace fadnet {

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'D', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainStateBlob {
  std::uint32_t round = 1;   // 1-based
  std::uint32_t epoch = 0;   // 0-based within round
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;  // Adam moments, parameter order
  std::string rng_state;                  // serialized mt19937 stream
};

namespace detail {

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

template <typename V>
V take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(V) > in.size())
    throw FormatError("checkpoint: truncated at byte " + std::to_string(pos));
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

inline std::string take_bytes(const std::string& in, std::size_t& pos, std::size_t n) {
  if (pos + n > in.size())
    throw FormatError("checkpoint: truncated at byte " + std::to_string(pos));
  std::string s = in.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const std::vector<std::pair<std::string, Tensor<T>>>& params,
                                 const std::string& config_snapshot,
                                 const TrainStateBlob* state = nullptr) {
  std::string out(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint8_t>(out, sizeof(T));
  detail::put<std::uint32_t>(out, std::uint32_t(config_snapshot.size()));
  out += config_snapshot;
  detail::put<std::uint32_t>(out, std::uint32_t(params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    detail::put<std::uint16_t>(out, std::uint16_t(name.size()));
    out += name;
    const Shape4 s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) detail::put<std::uint32_t>(out, std::uint32_t(d));
    detail::put<std::uint64_t>(out, offset);
    offset += t.numel();
  }
  detail::put<std::uint64_t>(out, offset);
  for (const auto& [name, t] : params)
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(T));

  detail::put<std::uint8_t>(out, state ? 1 : 0);
  if (state) {
    detail::put<std::uint32_t>(out, state->round);
    detail::put<std::uint32_t>(out, state->epoch);
    detail::put<std::uint64_t>(out, state->step);
    detail::put<std::uint32_t>(out, std::uint32_t(state->m.size()));
    for (const auto& vec : state->m) {
      detail::put<std::uint64_t>(out, vec.size());
      out.append(reinterpret_cast<const char*>(vec.data()), vec.size() * sizeof(double));
    }
    for (const auto& vec : state->v) {
      detail::put<std::uint64_t>(out, vec.size());
      out.append(reinterpret_cast<const char*>(vec.data()), vec.size() * sizeof(double));
    }
    detail::put<std::uint32_t>(out, std::uint32_t(state->rng_state.size()));
    out += state->rng_state;
  }
  return out;
}

// Loads parameters in place; shapes and names must match the live model.
template <typename T>
void deserialize_checkpoint(const std::string& bytes,
                            std::vector<std::pair<std::string, Tensor<T>>>& params,
                            std::string* config_snapshot = nullptr,
                            TrainStateBlob* state = nullptr, bool* has_state = nullptr) {
  std::size_t pos = 0;
  if (detail::take_bytes(bytes, pos, 8) != std::string(kCheckpointMagic, 8))
    throw FormatError("checkpoint: bad magic");
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto scalar_size = detail::take<std::uint8_t>(bytes, pos);
  if (scalar_size != sizeof(T))
    throw FormatError("checkpoint: precision mismatch, file has " + std::to_string(scalar_size) +
                      "-byte scalars");
  const auto cfg_len = detail::take<std::uint32_t>(bytes, pos);
  std::string cfg = detail::take_bytes(bytes, pos, cfg_len);
  if (config_snapshot) *config_snapshot = cfg;

  const auto count = detail::take<std::uint32_t>(bytes, pos);
  if (count != params.size())
    throw FormatError("checkpoint: parameter count " + std::to_string(count) +
                      " does not match model (" + std::to_string(params.size()) + ")");
  struct Entry {
    std::string name;
    Shape4 shape;
    std::uint64_t offset;
  };
  std::vector<Entry> manifest(count);
  for (auto& e : manifest) {
    const auto name_len = detail::take<std::uint16_t>(bytes, pos);
    e.name = detail::take_bytes(bytes, pos, name_len);
    e.shape.n = int(detail::take<std::uint32_t>(bytes, pos));
    e.shape.c = int(detail::take<std::uint32_t>(bytes, pos));
    e.shape.h = int(detail::take<std::uint32_t>(bytes, pos));
    e.shape.w = int(detail::take<std::uint32_t>(bytes, pos));
    e.offset = detail::take<std::uint64_t>(bytes, pos);
  }
  const auto blob_len = detail::take<std::uint64_t>(bytes, pos);
  const std::size_t blob_start = pos;
  if (blob_start + blob_len * sizeof(T) > bytes.size())
    throw FormatError("checkpoint: truncated blob at byte " + std::to_string(blob_start));
  for (std::size_t i = 0; i < count; ++i) {
    auto& [name, t] = params[i];
    const Entry& e = manifest[i];
    if (e.name != name)
      throw FormatError("checkpoint: parameter '" + e.name + "' does not match model '" + name + "'");
    if (!(e.shape == t.shape()))
      throw FormatError("checkpoint: shape mismatch on '" + name + "': file " + e.shape.str() +
                        " vs model " + t.shape().str());
    std::memcpy(t.data().data(), bytes.data() + blob_start + e.offset * sizeof(T),
                t.numel() * sizeof(T));
  }
  pos = blob_start + blob_len * sizeof(T);

  const auto has = detail::take<std::uint8_t>(bytes, pos);
  if (has_state) *has_state = has != 0;
  if (has && state) {
    state->round = detail::take<std::uint32_t>(bytes, pos);
    state->epoch = detail::take<std::uint32_t>(bytes, pos);
    state->step = detail::take<std::uint64_t>(bytes, pos);
    const auto n = detail::take<std::uint32_t>(bytes, pos);
    auto read_moments = [&](std::vector<std::vector<double>>& dst) {
      dst.resize(n);
      for (auto& vec : dst) {
        const auto len = detail::take<std::uint64_t>(bytes, pos);
        std::string raw = detail::take_bytes(bytes, pos, len * sizeof(double));
        vec.resize(len);
        std::memcpy(vec.data(), raw.data(), raw.size());
      }
    };
    read_moments(state->m);
    read_moments(state->v);
    const auto rng_len = detail::take<std::uint32_t>(bytes, pos);
    state->rng_state = detail::take_bytes(bytes, pos, rng_len);
  }
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write file: " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw FormatError("short write to " + path);
}

}  // namespace fadnet
