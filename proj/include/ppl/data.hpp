#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppl/png_io.hpp"

namespace ppl {

/// Multi-hot image-level labels, one 0/1 flag per class.
using LabelVector = std::vector<std::uint8_t>;

/// Image plus labels only. This is all the training code ever sees.
struct LabeledImage {
  Tensor image;  // 3×H×W in [0,1]
  LabelVector labels;
};
using TrainingView = std::vector<LabeledImage>;

struct Sample {
  std::string name;
  Tensor image;
  LabelVector labels;
  LabelImage gt_mask;  // ids 1..C for classes, 0 background, 255 ignore; empty when absent
};

struct Dataset {
  std::size_t num_classes = 0;
  bool has_masks = false;
  std::vector<Sample> samples;

  /// Mask-free view for the trainer.
  TrainingView training_view() const;
  /// Throws when masks are missing, for commands that evaluate.
  void require_masks(const std::string& command) const;
};

/// Thrown for malformed on-disk datasets; the message names the file/line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_images = 100;
  std::size_t image_side = 96;
  std::size_t n_classes = 6;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  double min_size = 0.34;  // object diameter as a fraction of the side
  double max_size = 0.50;
  double min_visible = 0.6;  // fraction of each object that must stay unoccluded
  double marker_scale = 0.28;  // marker half-width relative to the object radius
  std::size_t max_retries = 60;

  void validate() const;
  nlohmann::json to_json() const;
};

struct GenerationReport {
  std::size_t regenerated = 0;  // samples redrawn after infeasible placement
};

/// Pure function of the config. Each class is a shape × texture combination
/// with a small saturated marker (the discriminative part) on a larger body.
Dataset generate(const SynthConfig& cfg, GenerationReport* report = nullptr);

/// Sample i of the generated set, independent of the others.
Sample generate_sample(const SynthConfig& cfg, std::size_t index, GenerationReport* report = nullptr);

/// Labels derived from a mask: class c present iff id c+1 occupies a pixel.
LabelVector labels_from_mask(const LabelImage& mask, std::size_t num_classes);

/// Seeded disjoint split; the second part holds `n_eval` samples.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t n_eval, std::uint64_t seed);

/// root/images/<name>.png, root/labels.csv ("filename,class_0,..."), and
/// root/masks/<name>.png when masks are present.
void write_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace ppl
