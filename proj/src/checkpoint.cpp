#include "lsp/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lsp/error.hpp"

namespace lsp {

namespace {

constexpr char kMagic[8] = {'L', 'S', 'P', 'A', 'R', 'C', 'H', '1'};

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}

}  // namespace

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
void save_archive(const std::filesystem::path& path, const nlohmann::json& meta,
                  const std::map<std::string, const Tensor<Scalar>*>& tensors) {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name<Scalar>()},
                                 {"shape", {t->n(), t->c(), t->h(), t->w()}},
                                 {"offset", offset},
                                 {"count", t->size()}});
    offset += static_cast<std::uint64_t>(t->size()) * sizeof(Scalar);
  }
  const std::string hdr = header.dump();
  std::string bytes;
  bytes.reserve(16 + hdr.size() + offset);
  bytes.append(kMagic, 8);
  const std::uint64_t len = hdr.size();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  bytes += hdr;
  for (const auto& [name, t] : tensors) {
    bytes.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(Scalar));
  }
  atomic_write(path, bytes);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DataError(path.string() + ": not an LSP archive");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + len > bytes.size()) throw DataError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt header: " + e.what());
  }
  const std::size_t base = 16 + len;
  TensorArchive ar;
  ar.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("tensors")) {
    const auto shape = e.at("shape").get<std::array<int, 4>>();
    const std::string dtype = e.at("dtype");
    const std::size_t off = e.at("offset"), count = e.at("count");
    const std::size_t width = dtype == "f32" ? 4 : 8;
    if (base + off + count * width > bytes.size()) {
      throw DataError(path.string() + ": truncated tensor " + e.at("name").get<std::string>());
    }
    Tensor<double> t(shape[0], shape[1], shape[2], shape[3]);
    if (static_cast<std::size_t>(t.size()) != count) throw DataError(path.string() + ": bad tensor size");
    const char* src = bytes.data() + base + off;
    for (std::size_t k = 0; k < count; ++k) {
      if (width == 4) {
        float v;
        std::memcpy(&v, src + 4 * k, 4);
        t.data()[k] = v;
      } else {
        double v;
        std::memcpy(&v, src + 8 * k, 8);
        t.data()[k] = v;
      }
    }
    const std::string name = e.at("name");
    ar.tensors.emplace(name, std::move(t));
    ar.dtypes[name] = dtype;
  }
  return ar;
}

template void save_archive<float>(const std::filesystem::path&, const nlohmann::json&,
                                  const std::map<std::string, const Tensor<float>*>&);
template void save_archive<double>(const std::filesystem::path&, const nlohmann::json&,
                                   const std::map<std::string, const Tensor<double>*>&);

}  // namespace lsp
