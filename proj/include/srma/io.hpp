#pragma once

#include <bit>
#include <fstream>

#include <json.hpp>

#include "srma/weights.hpp"

// File interchange:
//  - tensor dump: <prefix>.json shape descriptor + <prefix>.raw little-endian
//    value buffer (test interchange format),
//  - weight manifest: <prefix>.json index of {name, shape, dtype, byte_offset}
//    + <prefix>.bin single raw blob; round-trips are bit-exact.

namespace srma {

static_assert(std::endian::native == std::endian::little,
              "raw buffer formats assume a little-endian host");

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

namespace detail {

template <typename S>
void write_raw(std::ofstream& f, const S* data, int64_t n) {
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(S)));
}

template <typename S>
void read_raw(std::ifstream& f, S* data, int64_t n) {
  f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(S)));
  require(f.gcount() == static_cast<std::streamsize>(n * sizeof(S)), "truncated raw buffer");
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path);
  return nlohmann::json::parse(f);
}

}  // namespace detail

template <typename S>
void save_tensor_dump(const Tensor<S>& t, const std::string& prefix) {
  nlohmann::json j;
  j["dtype"] = dtype_name<S>();
  j["shape"] = t.shape();
  std::ofstream jf(prefix + ".json");
  require(jf.good(), "cannot write: " + prefix + ".json");
  jf << j.dump(2) << "\n";
  std::ofstream rf(prefix + ".raw", std::ios::binary | std::ios::trunc);
  require(rf.good(), "cannot write: " + prefix + ".raw");
  detail::write_raw(rf, t.data(), t.numel());
}

template <typename S>
Tensor<S> load_tensor_dump(const std::string& prefix) {
  nlohmann::json j = detail::load_json(prefix + ".json");
  require(j.at("dtype").get<std::string>() == dtype_name<S>(),
          "tensor dump dtype mismatch in " + prefix);
  Shape shape = j.at("shape").get<Shape>();
  std::vector<S> data(static_cast<size_t>(shape_numel(shape)));
  std::ifstream rf(prefix + ".raw", std::ios::binary);
  require(rf.good(), "cannot open: " + prefix + ".raw");
  detail::read_raw(rf, data.data(), static_cast<int64_t>(data.size()));
  return Tensor<S>::from_data(std::move(shape), std::move(data));
}

template <typename S>
void save_weights(const WeightStore<S>& w, const std::string& prefix) {
  nlohmann::json idx;
  idx["format"] = "srma-weights-v1";
  idx["dtype"] = dtype_name<S>();
  idx["blob"] = prefix.substr(prefix.find_last_of('/') + 1) + ".bin";
  nlohmann::json entries = nlohmann::json::array();
  int64_t offset = 0;
  std::ofstream bf(prefix + ".bin", std::ios::binary | std::ios::trunc);
  require(bf.good(), "cannot write: " + prefix + ".bin");
  for (const auto& name : w.names()) {
    const Tensor<S>& t = w.get(name);
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = dtype_name<S>();
    e["byte_offset"] = offset;
    entries.push_back(std::move(e));
    detail::write_raw(bf, t.data(), t.numel());
    offset += t.numel() * static_cast<int64_t>(sizeof(S));
  }
  idx["entries"] = std::move(entries);
  std::ofstream jf(prefix + ".json");
  require(jf.good(), "cannot write: " + prefix + ".json");
  jf << idx.dump(2) << "\n";
}

/// Load a manifest into an existing store; every entry must match an
/// existing name and shape (values are replaced in place).
template <typename S>
void load_weights(WeightStore<S>& w, const std::string& prefix) {
  nlohmann::json idx = detail::load_json(prefix + ".json");
  require(idx.at("dtype").get<std::string>() == dtype_name<S>(),
          "weight manifest dtype mismatch (expected " + std::string(dtype_name<S>()) + ")");
  const std::string dir =
      prefix.find_last_of('/') == std::string::npos ? "" : prefix.substr(0, prefix.find_last_of('/') + 1);
  const std::string blob = dir + idx.at("blob").get<std::string>();
  std::ifstream bf(blob, std::ios::binary);
  require(bf.good(), "cannot open weight blob: " + blob);
  size_t seen = 0;
  for (const auto& e : idx.at("entries")) {
    const std::string name = e.at("name").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    require(w.has(name), "manifest names unknown parameter: " + name);
    const Tensor<S>& t = w.get(name);
    require(t.shape() == shape, "manifest shape mismatch for " + name);
    bf.seekg(static_cast<std::streamoff>(e.at("byte_offset").get<int64_t>()));
    detail::read_raw(bf, const_cast<Tensor<S>&>(t).mutable_data(), t.numel());
    ++seen;
  }
  require(seen == w.size(), "manifest does not cover every parameter");
}

}  // namespace srma
