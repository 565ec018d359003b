#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ppl/cam.hpp"
#include "ppl/png_io.hpp"

namespace ppl {

/// counts[gt][pred] over {background} ∪ classes. Ignore pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_labels);

  std::size_t size() const { return n_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }
  std::uint64_t total() const;

  /// Adds one image. Throws on a grid mismatch or a label outside the matrix.
  void accumulate(const LabelImage& pred, const LabelImage& gt);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt for zero-union labels
  double mean = 0;
};

/// IoU_c = TP/(TP+FP+FN) per label; zero-union labels are left out of the mean.
IouReport miou(const ConfusionMatrix& cm);

struct ForegroundScore {
  double precision = 0;  // correctly labelled foreground / predicted foreground
  double recall = 0;     // correctly labelled foreground / ground-truth foreground
};

/// Class-aware foreground precision and recall (ignore pixels excluded).
ForegroundScore foreground_score(const ConfusionMatrix& cm);

struct SweepRow {
  double tau = 0;
  double precision = 0;
  double recall = 0;
  double miou = 0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::size_t best = 0;  // row with the highest mIoU (first on ties)

  const SweepRow& best_row() const { return rows.at(best); }
};

/// Evenly spaced thresholds lo, lo+step, ..., hi (inclusive, rounded to 1e-9).
std::vector<double> threshold_range(double lo, double hi, double step);

/// Pseudo-masks for each τ scored against the ground truth.
SweepTable pr_sweep(const std::vector<CamStack>& cams, const std::vector<LabelImage>& gts,
                    const std::vector<double>& thresholds, std::size_t num_classes);

inline constexpr int kSweepCsvVersion = 1;

/// Line 1: "# ppl-sweep v1", line 2: "tau,precision,recall,miou", one row per τ.
void write_sweep_csv(const std::filesystem::path& path, const SweepTable& table);
SweepTable read_sweep_csv(const std::filesystem::path& path);
void write_iou_csv(const std::filesystem::path& path, const IouReport& report);
/// Two panels: precision against recall, and mIoU against τ.
void write_sweep_svg(const std::filesystem::path& path, const SweepTable& table, const std::string& title);

std::string format_fixed(double v, int digits = 6);

}  // namespace ppl
