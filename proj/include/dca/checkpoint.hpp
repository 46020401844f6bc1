#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dca/config.hpp"
#include "dca/image.hpp"
#include "dca/model.hpp"

namespace dca {

// Layout, all integers little-endian:
//   "DCAM" | u32 version | u64 n | n bytes of UTF-8 JSON model config
//   then per parameter in DcaModel::parameters() order: u64 count | count x f64
inline constexpr char kCheckpointMagic[4] = {'D', 'C', 'A', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t uint(std::size_t width, const char* what) {
    if (bytes_.size() - pos_ < width)
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::span<const std::uint8_t> take(std::uint64_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(DcaModel& model) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(kCheckpointVersion >> (8 * i)));
  const std::string config = to_json(model.config()).dump();
  detail::put_u64(out, config.size());
  out.insert(out.end(), config.begin(), config.end());
  for (Parameter* p : model.parameters()) {
    detail::put_u64(out, p->tensor.size());
    for (double v : p->tensor.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline DcaModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic)))
    throw CheckpointError("not a checkpoint: magic bytes are not DCAM");
  const auto version = in.uint(4, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto length = in.uint(8, "config length");
  const auto text = in.take(length, "config");
  ModelConfig config = model_config_from_json(parse_json_text(std::string(text.begin(), text.end()), "checkpoint config"));

  DcaModel model(config, 0);
  for (Parameter* p : model.parameters()) {
    const auto count = in.uint(8, "parameter length");
    if (count != p->tensor.size())
      throw CheckpointError("parameter " + p->name + " holds " + std::to_string(count) + " values, expected " +
                            std::to_string(p->tensor.size()));
    for (double& v : p->tensor.mutable_values()) v = std::bit_cast<double>(in.uint(8, p->name.c_str()));
  }
  if (!in.done())
    throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - in.position()) + " trailing bytes");
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, DcaModel& model) {
  write_file_atomic(path, encode_checkpoint(model));
}

inline DcaModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace dca
