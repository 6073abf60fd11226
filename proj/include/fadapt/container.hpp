#pragma once

// Binary tensor container ("FAT1"):
//   bytes 0..3   magic "FAT1"
//   bytes 4..7   header length N, uint32 little-endian
//   N bytes      UTF-8 JSON {"dtype":"f32"|"f64","shape":[...]}
//   payload      little-endian row-major values
// Bundles are directories of containers plus an index.json.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include "json.hpp"
#include <string>
#include <vector>

#include "fadapt/tensor.hpp"

namespace fadapt {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class T>
std::string encode_tensor(const Tensor<T>& t) {
  json hdr = {{"dtype", dtype_name<T>()}, {"shape", t.shape()}};
  const std::string h = hdr.dump();
  std::string out = "FAT1";
  const auto n = static_cast<std::uint32_t>(h.size());
  out.append(reinterpret_cast<const char*>(&n), 4);
  out += h;
  out.append(reinterpret_cast<const char*>(t.vec().data()), t.numel() * sizeof(T));
  return out;
}

/// Decodes a container, converting the payload to T when the stored dtype differs.
template <class T>
Tensor<T> decode_tensor(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "FAT1") != 0) throw EnvironmentError("not a FAT1 tensor container");
  std::uint32_t n;
  std::memcpy(&n, bytes.data() + 4, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(n)) throw EnvironmentError("truncated FAT1 header");
  json hdr;
  try {
    hdr = json::parse(bytes.substr(8, n));
  } catch (const json::exception& e) {
    throw EnvironmentError(std::string("bad FAT1 header: ") + e.what());
  }
  const std::string dtype = hdr.at("dtype").get<std::string>();
  const Shape shape = hdr.at("shape").get<Shape>();
  const std::size_t count = numel_of(shape);
  const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
  if (width == 0) throw EnvironmentError("unsupported dtype '" + dtype + "'");
  if (bytes.size() != 8 + n + count * width) throw EnvironmentError("FAT1 payload size mismatch");
  const char* p = bytes.data() + 8 + n;
  std::vector<T> data(count);
  if (width == 4) {
    std::vector<float> tmp(count);
    std::memcpy(tmp.data(), p, count * 4);
    std::copy(tmp.begin(), tmp.end(), data.begin());
  } else {
    std::vector<double> tmp(count);
    std::memcpy(tmp.data(), p, count * 8);
    std::transform(tmp.begin(), tmp.end(), data.begin(), [](double v) { return static_cast<T>(v); });
  }
  return Tensor<T>(shape, std::move(data));
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw EnvironmentError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw EnvironmentError("write failed for '" + path.string() + "'");
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw EnvironmentError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(f), {});
}

template <class T>
void save_tensor(const fs::path& path, const Tensor<T>& t) {
  write_file(path, encode_tensor(t));
}

template <class T>
Tensor<T> load_tensor(const fs::path& path) {
  return decode_tensor<T>(read_file(path));
}

/// Named tensors, ordered by name.
template <class T>
using TensorBundle = std::map<std::string, Tensor<T>>;

/// Writes one container per tensor plus index.json {"tensors": {name: file}, "blocks": {...}, "meta": {...}}.
/// Block grouping is the prefix before the last '.' of each name.
template <class T>
void save_bundle(const fs::path& dir, const TensorBundle<T>& bundle, const json& meta = json::object()) {
  fs::create_directories(dir);
  json index = {{"tensors", json::object()}, {"blocks", json::object()}, {"meta", meta}};
  for (const auto& [name, t] : bundle) {
    const std::string file = name + ".fat";
    save_tensor(dir / file, t);
    index["tensors"][name] = file;
    const auto dot = name.rfind('.');
    const std::string block = dot == std::string::npos ? name : name.substr(0, dot);
    index["blocks"][block].push_back(file);
  }
  write_file(dir / "index.json", index.dump(2) + "\n");
}

template <class T>
TensorBundle<T> load_bundle(const fs::path& dir, json* meta = nullptr) {
  const fs::path idx = dir / "index.json";
  if (!fs::exists(idx)) throw EnvironmentError("missing bundle index '" + idx.string() + "'");
  json index = json::parse(read_file(idx));
  TensorBundle<T> out;
  for (auto& [name, file] : index.at("tensors").items()) out.emplace(name, load_tensor<T>(dir / file.template get<std::string>()));
  if (meta) *meta = index.value("meta", json::object());
  return out;
}

}  // namespace fadapt
