#include "uma2/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "uma2/common.hpp"

namespace uma2 {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(byte()) << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(byte()) << (8 * b);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  void expect_done() const {
    if (!done()) throw CheckpointError(path_ + ": trailing bytes after checkpoint payload");
  }

 private:
  unsigned char byte() { return static_cast<unsigned char>(data_[pos_++]); }
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError(path_ + ": truncated checkpoint");
  }

  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, ckpt.meta.seed);
  put_u64(out, ckpt.meta.epochs_completed);
  put_f64(out, ckpt.meta.best_metric);
  put_u64(out, ckpt.meta.best_epoch);
  put_u64(out, ckpt.meta.epochs_since_best);
  put_u64(out, ckpt.meta.user_dim);
  put_u64(out, ckpt.meta.item_dim);
  out.push_back(static_cast<char>(ckpt.meta.sharing_mode));
  put_u32(out, static_cast<std::uint32_t>(ckpt.meta.model_dims.size()));
  for (std::uint64_t d : ckpt.meta.model_dims) put_u64(out, d);
  put_u32(out, static_cast<std::uint32_t>(ckpt.meta.nsdn_dims.size()));
  for (std::uint64_t d : ckpt.meta.nsdn_dims) put_u64(out, d);
  put_u32(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& [name, values] : ckpt.blocks) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u64(out, values.size());
    for (double v : values) put_f64(out, v);
  }

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("checkpoint write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string data((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  Reader r(std::move(data), path.string());
  const std::string magic = r.bytes(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a UMA2CKPT file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                          " unsupported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ckpt;
  ckpt.meta.seed = r.u64();
  ckpt.meta.epochs_completed = r.u64();
  ckpt.meta.best_metric = r.f64();
  ckpt.meta.best_epoch = r.u64();
  ckpt.meta.epochs_since_best = r.u64();
  ckpt.meta.user_dim = r.u64();
  ckpt.meta.item_dim = r.u64();
  ckpt.meta.sharing_mode = static_cast<std::uint8_t>(r.bytes(1)[0]);
  const std::uint32_t n_model_dims = r.u32();
  for (std::uint32_t i = 0; i < n_model_dims; ++i) ckpt.meta.model_dims.push_back(r.u64());
  const std::uint32_t n_nsdn_dims = r.u32();
  for (std::uint32_t i = 0; i < n_nsdn_dims; ++i) ckpt.meta.nsdn_dims.push_back(r.u64());

  const std::uint32_t n_blocks = r.u32();
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint64_t count = r.u64();
    Vec values;
    values.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) values.push_back(r.f64());
    ckpt.blocks.emplace(name, std::move(values));
  }
  r.expect_done();
  return ckpt;
}

}  // namespace uma2
