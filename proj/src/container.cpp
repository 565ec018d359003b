#include "ppl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ppl {

static_assert(std::endian::native == std::endian::little, "bundle IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'P', 'L', 'B', 'N', 'D', 'L', '\0'};

const char* dtype_name() { return sizeof(Real) == 4 ? "f32" : "f64"; }

}  // namespace

const Tensor* TensorBundle::find(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& TensorBundle::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw std::runtime_error("bundle has no tensor named '" + std::string(name) + "'");
}

void write_bundle(const std::filesystem::path& path, std::string_view kind,
                  const TensorBundle& bundle) {
  nlohmann::json header;
  header["kind"] = kind;
  header["dtype"] = dtype_name();
  header["meta"] = bundle.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : bundle.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kBundleVersion;
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : bundle.tensors) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(Real)));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TensorBundle read_bundle(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + ": not a tensor bundle");
  }
  std::uint32_t version = 0;
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != kBundleVersion) {
    throw std::runtime_error(path.string() + ": unsupported bundle version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(text);
  if (header.at("kind").get<std::string>() != expected_kind) {
    throw std::runtime_error(path.string() + ": expected a '" + std::string(expected_kind) +
                             "' bundle, found '" + header.at("kind").get<std::string>() + "'");
  }
  if (header.at("dtype").get<std::string>() != dtype_name()) {
    throw std::runtime_error(path.string() + ": stored precision " +
                             header.at("dtype").get<std::string>() + " differs from this build");
  }
  TensorBundle bundle;
  bundle.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<Real> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(Real)));
    if (!in) throw std::runtime_error(path.string() + ": truncated payload");
    bundle.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return bundle;
}

}  // namespace ppl
