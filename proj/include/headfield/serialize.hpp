#pragma once

// Tensor wire format (little-endian):
//
//   u32   header_length
//   u8    dtype tag (1 = f32, 2 = f64)
//   u32   rank
//   i64   extent[rank]
//   T     data[numel]
//
// header_length counts the bytes of the dtype/rank/extent block.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

#include "headfield/tensor.hpp"

namespace headfield {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

namespace detail {

template <class V>
void put(std::string& out, V value) {
  char buf[sizeof(V)];
  std::memcpy(buf, &value, sizeof(V));
  out.append(buf, sizeof(V));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class V>
  V get() {
    need(sizeof(V));
    V value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("truncated tensor payload");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
void serialize_tensor(const Tensor<T>& t, std::string& out) {
  std::string header;
  detail::put<std::uint8_t>(header, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put<std::uint32_t>(header, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put<std::int64_t>(header, e);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  const auto& v = t.values();
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

template <class T>
std::string serialize_tensor(const Tensor<T>& t) {
  std::string out;
  serialize_tensor(t, out);
  return out;
}

/// Reads one tensor record. Values stored in the other precision are converted.
template <class T>
Tensor<T> deserialize_tensor(detail::ByteReader& reader) {
  const auto header_len = reader.get<std::uint32_t>();
  const auto start = reader.position();
  const auto tag = reader.get<std::uint8_t>();
  if (tag != 1 && tag != 2) throw IoError("unknown dtype tag " + std::to_string(tag));
  const auto rank = reader.get<std::uint32_t>();
  Shape shape(rank);
  for (auto& e : shape) e = reader.get<std::int64_t>();
  if (reader.position() - start != header_len) throw IoError("tensor header length mismatch");
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<T> values(n);
  if (tag == 1) {
    auto raw = reader.take(n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, raw.data() + i * sizeof(float), sizeof(float));
      values[i] = static_cast<T>(f);
    }
  } else {
    auto raw = reader.take(n * sizeof(double));
    for (std::size_t i = 0; i < n; ++i) {
      double d;
      std::memcpy(&d, raw.data() + i * sizeof(double), sizeof(double));
      values[i] = static_cast<T>(d);
    }
  }
  return Tensor<T>::from(std::move(shape), std::move(values));
}

template <class T>
Tensor<T> deserialize_tensor(std::string_view bytes) {
  detail::ByteReader reader(bytes);
  auto t = deserialize_tensor<T>(reader);
  if (reader.remaining() != 0) throw IoError("trailing bytes after tensor payload");
  return t;
}

}  // namespace headfield
