#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ppl/tensor.hpp"

namespace ppl {

/// Named tensors plus free-form JSON metadata. Used for checkpoints and CAM
/// exports.
///
/// On-disk layout (little endian):
///   bytes 0..7   magic "PPLBNDL\0"
///   u32          format version (1)
///   u32          header length L
///   L bytes      JSON header {"kind","dtype","meta","tensors":[{"name","shape","offset"}]}
///   payload      contiguous scalars, `offset` counted in elements
struct TensorBundle {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
};

inline constexpr std::uint32_t kBundleVersion = 1;

void write_bundle(const std::filesystem::path& path, std::string_view kind,
                  const TensorBundle& bundle);
/// Throws std::runtime_error on a bad magic, unknown version, kind mismatch or
/// truncated payload.
TensorBundle read_bundle(const std::filesystem::path& path, std::string_view expected_kind);

}  // namespace ppl
