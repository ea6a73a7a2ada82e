#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "lightnmt/model.hpp"

namespace lightnmt {

// Self-describing container: magic, format version, JSON header, then named
// float64 matrices. Integers are stored little-endian (host order on the
// supported platforms).
struct TensorFile {
  static constexpr char kMagic[8] = {'L', 'N', 'M', 'T', 'W', 'G', 'T', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<double>>> tensors;

  const Tensor<double>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {
template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("weight file truncated");
  return v;
}
}  // namespace detail

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(TensorFile::kMagic, sizeof TensorFile::kMagic);
  detail::put<std::uint32_t>(out, TensorFile::kVersion);
  const std::string header = f.header.dump();
  detail::put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::put<std::uint64_t>(out, f.tensors.size());
  for (const auto& [name, t] : f.tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint64_t>(out, t.rows());
    detail::put<std::uint64_t>(out, t.cols());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[sizeof TensorFile::kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, TensorFile::kMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a lightnmt weight file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != TensorFile::kVersion)
    throw DataError("unsupported weight file version " + std::to_string(version));
  TensorFile f;
  std::string header(detail::get<std::uint64_t>(in), '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header.size())))
    throw DataError("weight file truncated");
  try {
    f.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt weight file header: " + std::string(e.what()));
  }
  const auto count = detail::get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(detail::get<std::uint32_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw DataError("weight file truncated");
    const auto rows = detail::get<std::uint64_t>(in);
    const auto cols = detail::get<std::uint64_t>(in);
    Tensor<double> t({rows, cols});
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw DataError("weight file truncated");
    f.tensors.emplace_back(std::move(name), std::move(t));
  }
  return f;
}

inline constexpr const char* kParamPrefix = "param/";

template <class T>
TensorFile model_to_file(const ModelWeights<T>& w) {
  TensorFile f;
  f.header["kind"] = "model";
  f.header["config"] = w.cfg;
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : w.targets)
    targets.push_back({{"language", t.language}, {"vocab", t.vocab}});
  f.header["targets"] = targets;
  for_each_param(w, [&](const std::string& name, const Var<T>& v, ParamGroup) {
    f.tensors.emplace_back(kParamPrefix + name, v.value().template cast<double>());
  });
  return f;
}

template <class T>
ModelWeights<T> model_from_file(const TensorFile& f) {
  ModelConfig cfg;
  std::vector<std::pair<std::string, std::vector<int>>> targets;
  try {
    cfg = f.header.at("config").get<ModelConfig>();
    for (const auto& t : f.header.at("targets"))
      targets.emplace_back(t.at("language").get<std::string>(), t.at("vocab").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("weight file header: " + std::string(e.what()));
  }
  std::mt19937_64 rng(0);
  ModelWeights<T> w = build_model<T>(cfg, rng);
  if (targets.size() != w.targets.size())
    throw DataError("weight file lists " + std::to_string(targets.size()) + " decoders, config implies " +
                    std::to_string(w.targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto& t = w.targets[i];
    if (t.language != targets[i].first)
      throw DataError("weight file decoder order does not match the config");
    if (!targets[i].second.empty()) {
      t.embed = Var<T>::parameter(Tensor<T>({targets[i].second.size(), cfg.d_model}));
      t.set_vocab(targets[i].second, cfg.vocab_size);
    }
  }
  std::size_t used = 0;
  for_each_param(w, [&](const std::string& name, const Var<T>& v, ParamGroup) {
    const Tensor<double>* t = f.find(kParamPrefix + name);
    if (!t) throw DataError("weight file is missing parameter " + name);
    if (t->rows() != v.rows() || t->cols() != v.cols())
      throw DataError("parameter " + name + " has shape " + shape_str(t->shape()) +
                      ", expected " + shape_str(v.shape()));
    Var<T> target = v;
    target.mutable_value() = t->template cast<T>();
    ++used;
  });
  std::size_t stored = 0;
  for (const auto& [name, _] : f.tensors) stored += name.starts_with(kParamPrefix);
  if (stored != used)
    throw DataError("weight file has " + std::to_string(stored - used) + " unexpected parameters");
  return w;
}

template <class T>
void save_model(const std::filesystem::path& path, const ModelWeights<T>& w) {
  write_tensor_file(path, model_to_file(w));
}

template <class T>
ModelWeights<T> load_model(const std::filesystem::path& path) {
  return model_from_file<T>(read_tensor_file(path));
}

}  // namespace lightnmt
