#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcnn/tensor.hpp"

namespace gcnn {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }

struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> payload;  // little-endian scalars

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

// Binary layout (all integers little-endian):
//   "GCNN" | u16 version | u32 tensor count
//   per tensor: u32 name length | name | u8 dtype | u8 rank | u64 extents[rank] | payload
//   u32 config length | config text (canonical key-value block)
struct Checkpoint {
  static constexpr std::uint16_t kVersion = 1;

  std::vector<TensorRecord> tensors;
  std::string config_text;

  template <class T>
  void put(const std::string& name, const Tensor<T>& t);
  // Converts between f32 and f64 payloads when needed.
  template <class T>
  Tensor<T> get(const std::string& name) const;
  const TensorRecord* find(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace gcnn
