#pragma once

// Tensor container used for checkpoints and extractor weight files.
//
//   bytes 0..3   magic "HNRF"
//   u32          format version (1)
//   u64          header length H
//   H bytes      JSON header; "tensors" is the directory
//                [{"name", "offset", "size"}] with offsets relative to the payload
//   payload      tensor records back to back (see serialize.hpp)
//
// All integers are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "headfield/image_io.hpp"
#include "headfield/serialize.hpp"

namespace headfield {

inline constexpr char kContainerMagic[4] = {'H', 'N', 'R', 'F'};
inline constexpr std::uint32_t kContainerVersion = 1;

template <class T>
std::string encode_container(nlohmann::json header, const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  std::string payload;
  nlohmann::json directory = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    const auto offset = payload.size();
    serialize_tensor(t, payload);
    directory.push_back({{"name", name}, {"offset", offset}, {"size", payload.size() - offset}});
  }
  header["dtype"] = dtype_name(dtype_of<T>());
  header["tensors"] = std::move(directory);
  const auto text = header.dump();
  std::string out(kContainerMagic, 4);
  detail::put<std::uint32_t>(out, kContainerVersion);
  detail::put<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

template <class T>
struct Container {
  nlohmann::json header;
  std::map<std::string, Tensor<T>> tensors;
  std::vector<std::string> order;

  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("container has no tensor '" + name + "'");
    return it->second;
  }
};

namespace detail {

// Parses the preamble and header; `payload_start` receives the payload offset.
inline nlohmann::json parse_container_preamble(std::string_view bytes, std::size_t& payload_start) {
  detail::ByteReader reader(bytes);
  const auto magic = reader.take(4);
  if (magic != std::string_view(kContainerMagic, 4)) throw IoError("not a headfield container (bad magic)");
  const auto version = reader.get<std::uint32_t>();
  if (version != kContainerVersion) throw IoError("unsupported container version " + std::to_string(version));
  const auto len = reader.get<std::uint64_t>();
  if (len > reader.remaining()) throw IoError("container header truncated");
  const auto text = reader.take(static_cast<std::size_t>(len));
  payload_start = reader.position();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("container header is not valid JSON: ") + ex.what());
  }
}

}  // namespace detail

/// Header of a container without decoding the payload.
inline nlohmann::json read_container_header(std::string_view bytes) {
  std::size_t start = 0;
  return detail::parse_container_preamble(bytes, start);
}

template <class T>
Container<T> decode_container(std::string_view bytes) {
  Container<T> c;
  std::size_t payload_start = 0;
  c.header = detail::parse_container_preamble(bytes, payload_start);
  const auto payload = bytes.substr(payload_start);
  if (!c.header.contains("tensors") || !c.header["tensors"].is_array()) throw IoError("container has no tensor directory");
  for (const auto& entry : c.header["tensors"]) {
    const auto name = entry.at("name").template get<std::string>();
    const auto offset = entry.at("offset").template get<std::size_t>();
    const auto size = entry.at("size").template get<std::size_t>();
    if (offset > payload.size() || size > payload.size() - offset) throw IoError("tensor '" + name + "' lies outside the payload");
    c.tensors.emplace(name, deserialize_tensor<T>(payload.substr(offset, size)));
    c.order.push_back(name);
  }
  return c;
}

template <class T>
Container<T> load_container(const std::filesystem::path& path) {
  return decode_container<T>(read_file(path));
}

}  // namespace headfield
