#include "davlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "davlab/errors.hpp"

namespace davlab::ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'V', 'L', 'A', 'B', 'C', 'K'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint64_t u64() { return uint(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::vector<double>& Checkpoint::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw CheckpointError("checkpoint has no array '" + name + "'");
  return it->second;
}

void save(const Checkpoint& ck, const std::string& path) {
  nlohmann::json header = ck.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, values] : ck.arrays) {
    header["arrays"].push_back({{"name", name}, {"length", values.size()}});
  }
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, ck.version);
  put_u64(out, ck.config_hash);
  put_u64(out, h.size());
  out += h;
  for (const auto& [name, values] : ck.arrays) {
    put_u64(out, values.size());
    for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  // write-then-rename so a crash never leaves a half-written checkpoint
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("short write on checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data));
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw CheckpointError("'" + path + "' is not a davlab checkpoint");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kFormatVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(ck.version) + " is not supported (expected " +
                          std::to_string(kFormatVersion) + ")");
  }
  ck.config_hash = r.u64();
  const std::uint64_t hlen = r.u64();
  try {
    ck.meta = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(hlen)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is corrupt: ") + e.what());
  }
  for (const auto& a : ck.meta.at("arrays")) {
    const std::uint64_t n = r.u64();
    if (n != a.at("length").get<std::uint64_t>()) throw CheckpointError("checkpoint array length mismatch");
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    ck.arrays.emplace(a.at("name").get<std::string>(), std::move(values));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint arrays");
  ck.meta.erase("arrays");
  return ck;
}

}  // namespace davlab::ckpt
