#pragma once

// Binary checkpoint, little-endian throughout:
//   "COFILLCK" | u32 version
//   | str config text | tensor adjacency
//   | u64 N | f64[N] mean | f64[N] std
//   | u64 count | count x (str name | tensor value)
//   | u64 training steps
// where str = u64 length + bytes, tensor = u64 rank + u64[rank] dims + f64[] data.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cofill/config.hpp"
#include "cofill/model.hpp"

namespace cofill {

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'F', 'I', 'L', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Tensor adjacency;
  Normalizer normalizer;
  std::vector<std::pair<std::string, Tensor>> params;
  std::uint64_t steps = 0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string source)
      : buf_(std::move(bytes)), source_(std::move(source)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw ParseError(source_ + ": truncated checkpoint");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const std::uint64_t n = u64();
    return raw(n);
  }
  Tensor tensor() {
    const std::uint64_t rank = u64();
    if (rank > 8) throw ParseError(source_ + ": implausible tensor rank");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(u64());
    const std::size_t count = numel(shape);
    need(count * 8);
    std::vector<double> data(count);
    for (double& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.str(ck.config.to_text());
  w.tensor(ck.adjacency);
  w.u64(ck.normalizer.mean.size());
  for (double v : ck.normalizer.mean) w.f64(v);
  for (double v : ck.normalizer.stddev) w.f64(v);
  w.u64(ck.params.size());
  for (const auto& [name, t] : ck.params) {
    w.str(name);
    w.tensor(t);
  }
  w.u64(ck.steps);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes, const std::string& source = "checkpoint") {
  detail::ByteReader r(std::move(bytes), source);
  if (std::memcmp(r.raw(sizeof(kCheckpointMagic)).data(), kCheckpointMagic,
                  sizeof(kCheckpointMagic)) != 0)
    throw ParseError(source + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError(source + ": checkpoint format version " + std::to_string(version) +
                     " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config = parse_config_text(r.str(), source + " (embedded config)");
  ck.adjacency = r.tensor();
  const std::uint64_t n = r.u64();
  ck.normalizer.mean.resize(n);
  ck.normalizer.stddev.resize(n);
  for (double& v : ck.normalizer.mean) v = r.f64();
  for (double& v : ck.normalizer.stddev) v = r.f64();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    ck.params.emplace_back(std::move(name), r.tensor());
  }
  ck.steps = r.u64();
  if (!r.done()) throw ParseError(source + ": trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  csv::write_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

inline std::vector<std::pair<std::string, Tensor>> named_values(const ParamStore& store) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, v] : store.entries()) out.emplace_back(name, v.value());
  return out;
}

/// Copies checkpoint tensors into a model built from the same configuration.
inline void load_params(ParamStore& store, const std::vector<std::pair<std::string, Tensor>>& values) {
  if (values.size() != store.size())
    throw ParseError("checkpoint holds " + std::to_string(values.size()) +
                     " parameters, model expects " + std::to_string(store.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& [name, expected] = store.entries()[i];
    if (values[i].first != name)
      throw ParseError("checkpoint parameter " + std::to_string(i) + " is '" + values[i].first +
                       "', model expects '" + name + "'");
    Var v = expected;
    if (v.shape() != values[i].second.shape())
      throw ParseError("checkpoint parameter '" + name + "' has shape " +
                       shape_str(values[i].second.shape()) + ", model expects " +
                       shape_str(v.shape()));
    v.mutable_value() = values[i].second;
  }
}

}  // namespace cofill
