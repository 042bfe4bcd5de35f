#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cparr/tensor.hpp"

namespace cparr {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

// Checkpoint = <base>.manifest.json (tensor names/shapes/offsets) plus
// <base>.f64, a flat little-endian float64 blob. Round-trips byte-exactly.

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const std::filesystem::path& base,
                            const std::vector<NamedTensor>& tensors) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["tensors"] = nlohmann::json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const NamedTensor& nt : tensors) {
    nlohmann::json entry;
    entry["name"] = nt.name;
    entry["shape"] = nt.tensor->shape;
    entry["offset"] = offset;
    manifest["tensors"].push_back(entry);
    const char* raw = reinterpret_cast<const char*>(nt.tensor->data.data());
    blob.append(raw, nt.tensor->size() * sizeof(double));
    offset += nt.tensor->size();
  }
  std::filesystem::create_directories(base.parent_path());
  write_file_atomic(base.string() + ".f64", blob);
  write_file_atomic(base.string() + ".manifest.json", manifest.dump(2) + "\n");
}

inline bool checkpoint_exists(const std::filesystem::path& base) {
  return std::filesystem::exists(base.string() + ".manifest.json") &&
         std::filesystem::exists(base.string() + ".f64");
}

inline void load_checkpoint(const std::filesystem::path& base,
                            const std::vector<NamedTensor>& tensors) {
  std::ifstream mf(base.string() + ".manifest.json");
  if (!mf) throw std::runtime_error("missing checkpoint manifest: " + base.string());
  nlohmann::json manifest = nlohmann::json::parse(mf);
  std::ifstream bf(base.string() + ".f64", std::ios::binary);
  if (!bf) throw std::runtime_error("missing checkpoint blob: " + base.string());
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  for (const NamedTensor& nt : tensors) {
    bool found = false;
    for (const auto& entry : manifest.at("tensors")) {
      if (entry.at("name").get<std::string>() != nt.name) continue;
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape != nt.tensor->shape) {
        throw std::runtime_error("checkpoint shape mismatch for tensor: " + nt.name);
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t bytes = nt.tensor->size() * sizeof(double);
      if (offset * sizeof(double) + bytes > blob.size()) {
        throw std::runtime_error("checkpoint blob truncated: " + base.string());
      }
      std::memcpy(nt.tensor->data.data(), blob.data() + offset * sizeof(double), bytes);
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("checkpoint missing tensor: " + nt.name);
  }
}

}  // namespace cparr
