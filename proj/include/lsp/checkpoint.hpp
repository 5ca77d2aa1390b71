#pragma once

// Self-describing binary archive: magic, JSON header, raw tensor payload.
//
//   bytes 0..7   "LSPARCH1"
//   bytes 8..15  little-endian uint64 header length L
//   next L bytes UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "dtype",
//                "shape": [n,c,h,w], "offset", "count"}]}
//   remainder    tensor data, offsets relative to the end of the header

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "lsp/tensor.hpp"

namespace lsp {

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<double>> tensors;  // widened on load
  std::map<std::string, std::string> dtypes;       // "f32" or "f64" as stored
};

template <typename Scalar>
void save_archive(const std::filesystem::path& path, const nlohmann::json& meta,
                  const std::map<std::string, const Tensor<Scalar>*>& tensors);

TensorArchive load_archive(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames, so readers never see partial files.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace lsp
