#include "kgalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kgalign {
namespace {

constexpr char kMagic[4] = {'K', 'G', 'A', 'C'};

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  template <class U>
  U get_le() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<const Parameter<float>*>& params) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name().size()));
    out += p->name();
    const auto& shape = p->value().shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_le<std::uint64_t>(out, d);
    for (float f : p->value().values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(4) != std::string(kMagic, 4)) throw CheckpointError("checkpoint: bad magic");
  const auto version = in.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = in.get_le<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = in.get_bytes(in.get_le<std::uint32_t>());
    const auto rank = in.get_le<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(in.get_le<std::uint64_t>());
      n *= d;
    }
    std::vector<float> values(n);
    for (auto& f : values) f = std::bit_cast<float>(in.get_le<std::uint32_t>());
    if (!out.emplace(name, Tensor<float>(std::move(shape), std::move(values))).second) {
      throw CheckpointError("checkpoint: duplicate parameter '" + name + "'");
    }
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<const Parameter<float>*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot write " + path.string());
  const auto bytes = encode_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

void assign_parameters(const NamedTensors& tensors, const std::vector<Parameter<float>*>& params) {
  for (auto* p : params) {
    auto it = tensors.find(p->name());
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing parameter '" + p->name() + "'");
    if (it->second.shape() != p->value().shape()) {
      throw CheckpointError("checkpoint: shape mismatch for '" + p->name() + "': file " +
                            it->second.shape_string() + " vs model " + p->value().shape_string());
    }
    p->value() = it->second;
    p->zero_grad();
  }
}

}  // namespace kgalign
