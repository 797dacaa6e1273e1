#include "gcnn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gcnn/error.hpp"

namespace gcnn {
namespace {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<long>(pos_),
                                  bytes_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated data");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
  }
  throw FormatError("checkpoint: unknown dtype code");
}

template <class T>
T decode_scalar(const std::uint8_t* p, DType d) {
  if (d == DType::kF32) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return static_cast<T>(std::bit_cast<float>(u));
  }
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(std::bit_cast<double>(u));
}

}  // namespace

template <class T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = dtype_of<T>();
  for (auto e : t.shape()) rec.extents.push_back(e);
  rec.payload.reserve(t.size() * sizeof(T));
  for (T v : t.data()) {
    if constexpr (sizeof(T) == 4)
      put_le(rec.payload, std::bit_cast<std::uint32_t>(v));
    else
      put_le(rec.payload, std::bit_cast<std::uint64_t>(v));
  }
  for (auto& existing : tensors)
    if (existing.name == name) {
      existing = std::move(rec);
      return;
    }
  tensors.push_back(std::move(rec));
}

template <class T>
Tensor<T> Checkpoint::get(const std::string& name) const {
  const TensorRecord* rec = find(name);
  if (!rec) throw FormatError("checkpoint: missing tensor '" + name + "'");
  Shape shape(rec->extents.begin(), rec->extents.end());
  const std::size_t n = shape_numel(shape), sz = dtype_size(rec->dtype);
  if (rec->payload.size() != n * sz) throw FormatError("checkpoint: payload size mismatch for '" + name + "'");
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = decode_scalar<T>(rec->payload.data() + i * sz, rec->dtype);
  return Tensor<T>(std::move(shape), std::move(data));
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out{'G', 'C', 'N', 'N'};
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.push_back(static_cast<std::uint8_t>(t.extents.size()));
    for (auto e : t.extents) put_le<std::uint64_t>(out, e);
    out.insert(out.end(), t.payload.begin(), t.payload.end());
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config_text.size()));
  out.insert(out.end(), config_text.begin(), config_text.end());
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), "GCNN", 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = r.le<std::uint16_t>();
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  Checkpoint ck;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto len = r.le<std::uint32_t>();
    const auto name = r.take(len);
    t.name.assign(name.begin(), name.end());
    const auto code = r.le<std::uint8_t>();
    if (code != 1 && code != 2) throw FormatError("checkpoint: unknown dtype code for '" + t.name + "'");
    t.dtype = static_cast<DType>(code);
    const auto rank = r.le<std::uint8_t>();
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.extents.push_back(r.le<std::uint64_t>());
      n *= t.extents.back();
    }
    t.payload = r.take(n * dtype_size(t.dtype));
    ck.tensors.push_back(std::move(t));
  }
  const auto clen = r.le<std::uint32_t>();
  const auto cfg = r.take(clen);
  ck.config_text.assign(cfg.begin(), cfg.end());
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = serialize();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + tmp + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  try {
    return deserialize(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;

}  // namespace gcnn
