#include "dreamnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dreamnet/errors.hpp"

namespace dreamnet {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint " + source_ + ": truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 6);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.header.size()));
  out += ckpt.header;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
    for (double v : t.data) put_le<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kCheckpointMagic, 6) != 0) {
    throw ParseError("checkpoint " + source + ": bad magic (expected DNETv1)");
  }
  Reader r(bytes, source);
  r.get_bytes(6);
  Checkpoint ckpt;
  ckpt.header = r.get_bytes(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.get_bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw ParseError("checkpoint " + source + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.get<double>();
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw ParseError("checkpoint " + source + ": trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace dreamnet
