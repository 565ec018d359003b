#include "ppl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ppl/rng.hpp"

namespace ppl {

namespace {

constexpr std::size_t kMaxClasses = 9;
constexpr int kSuper = 4;  // supersampling per axis for anti-aliasing
constexpr double kTextureAmplitude = 0.10;

using Color = std::array<double, 3>;

constexpr std::array<Color, kMaxClasses> kMarkerColors{{{1.0, 0.0, 0.0},
                                                        {0.0, 0.9, 0.0},
                                                        {0.0, 0.25, 1.0},
                                                        {1.0, 1.0, 0.0},
                                                        {1.0, 0.0, 1.0},
                                                        {0.0, 1.0, 1.0},
                                                        {1.0, 0.5, 0.0},
                                                        {0.5, 0.0, 1.0},
                                                        {1.0, 1.0, 1.0}}};

enum class ShapeKind { disk, square, triangle };

struct Object {
  std::size_t cls = 0;
  double cx = 0, cy = 0, radius = 0, angle = 0;
  Color body{};
  double marker_x = 0, marker_y = 0, marker_half = 0;

  ShapeKind shape() const { return static_cast<ShapeKind>(cls % 3); }
  std::size_t texture() const { return (cls / 3) % 3; }

  // Object-frame coordinates of a world point.
  std::pair<double, double> local(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {c * dx + s * dy, -s * dx + c * dy};
  }

  bool inside_body(double x, double y) const {
    const auto [u, v] = local(x, y);
    switch (shape()) {
      case ShapeKind::disk:
        return u * u + v * v <= radius * radius;
      case ShapeKind::square:
        return std::abs(u) <= 0.82 * radius && std::abs(v) <= 0.82 * radius;
      case ShapeKind::triangle: {
        const double inradius = 0.65 * radius;
        for (double a : {-90.0, 30.0, 150.0}) {
          const double t = a * std::numbers::pi / 180.0;
          if (u * std::cos(t) + v * std::sin(t) > inradius) return false;
        }
        return true;
      }
    }
    return false;
  }

  bool inside_marker(double x, double y) const {
    return std::abs(x - marker_x) <= marker_half && std::abs(y - marker_y) <= marker_half;
  }

  double texture_value(double x, double y) const {
    const auto [u, v] = local(x, y);
    const double tau = 2.0 * std::numbers::pi;
    switch (texture()) {
      case 0:
        return std::sin(tau * u / 5.0);
      case 1:
        return std::sin(tau * u / 8.0) * std::sin(tau * v / 8.0) >= 0 ? 1.0 : -1.0;
      default:
        return std::sin(tau * std::sqrt(u * u + v * v) / 5.0);
    }
  }

  double extent() const { return shape() == ShapeKind::triangle ? 1.3 * radius : radius; }
};

// Per-pixel coverage of one object: body fraction and marker fraction.
struct Coverage {
  std::vector<float> body;
  std::vector<float> marker;
};

Coverage rasterize(const Object& o, std::size_t side) {
  Coverage cov{std::vector<float>(side * side, 0.f), std::vector<float>(side * side, 0.f)};
  const double reach = o.extent() + 1.0;
  const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(o.cy - reach)));
  const auto y1 = static_cast<std::size_t>(std::min<double>(side, std::ceil(o.cy + reach)));
  const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(o.cx - reach)));
  const auto x1 = static_cast<std::size_t>(std::min<double>(side, std::ceil(o.cx + reach)));
  constexpr float inv = 1.0f / (kSuper * kSuper);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      int body = 0;
      int marker = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper;
          const double py = y + (sy + 0.5) / kSuper;
          if (!o.inside_body(px, py)) continue;
          ++body;
          if (o.inside_marker(px, py)) ++marker;
        }
      }
      cov.body[y * side + x] = body * inv;
      cov.marker[y * side + x] = marker * inv;
    }
  }
  return cov;
}

constexpr int kOwnerBackground = -1;
constexpr int kOwnerIgnore = -2;

// Topmost object covering ≥ 3/4 of the pixel owns it; a topmost partial cover
// (1/4 .. 3/4) marks the pixel as ignore.
std::vector<int> owners(const std::vector<Coverage>& covs, std::size_t side) {
  std::vector<int> own(side * side, kOwnerBackground);
  for (std::size_t p = 0; p < own.size(); ++p) {
    for (std::size_t i = covs.size(); i-- > 0;) {
      const float c = covs[i].body[p];
      if (c >= 0.75f) {
        own[p] = static_cast<int>(i);
        break;
      }
      if (c >= 0.25f) {
        own[p] = kOwnerIgnore;
        break;
      }
    }
  }
  return own;
}

bool visibility_ok(const std::vector<Coverage>& covs, std::size_t side, double min_visible) {
  const auto own = owners(covs, side);
  for (std::size_t i = 0; i < covs.size(); ++i) {
    std::size_t full = 0;
    std::size_t visible = 0;
    for (std::size_t p = 0; p < own.size(); ++p) {
      if (covs[i].body[p] >= 0.75f) ++full;
      if (own[p] == static_cast<int>(i)) ++visible;
    }
    if (full == 0 || static_cast<double>(visible) < min_visible * static_cast<double>(full)) return false;
    // The marker itself is never occluded.
    for (std::size_t p = 0; p < own.size(); ++p) {
      if (covs[i].marker[p] <= 0) continue;
      for (std::size_t j = i + 1; j < covs.size(); ++j) {
        if (covs[j].body[p] > 0) return false;
      }
    }
  }
  return true;
}

Object draw_object(std::size_t cls, const SynthConfig& cfg, Rng& rng) {
  const double side = static_cast<double>(cfg.image_side);
  Object o;
  o.cls = cls;
  o.radius = 0.5 * side * rng.uniform(cfg.min_size, cfg.max_size);
  o.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double margin = o.extent();
  o.cx = rng.uniform(margin, side - margin);
  o.cy = rng.uniform(margin, side - margin);
  for (auto& ch : o.body) ch = rng.uniform(0.25, 0.75);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double reach = o.shape() == ShapeKind::triangle ? 0.30 * o.radius : 0.45 * o.radius;
  o.marker_x = o.cx + reach * std::cos(phi);
  o.marker_y = o.cy + reach * std::sin(phi);
  o.marker_half = cfg.marker_scale * o.radius;
  return o;
}

std::vector<Real> background(std::size_t side, Rng& rng) {
  std::vector<double> base(3);
  for (auto& b : base) b = rng.uniform(0.35, 0.65);
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    const double len = rng.uniform(30.0, 80.0);
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    waves.push_back({2 * std::numbers::pi / len * std::cos(dir), 2 * std::numbers::pi / len * std::sin(dir),
                     rng.uniform(0.0, 2 * std::numbers::pi), rng.uniform(0.03, 0.08)});
  }
  std::vector<Real> img(3 * side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double shade = 0;
      for (const auto& w : waves) shade += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      for (std::size_t c = 0; c < 3; ++c) {
        img[(c * side + y) * side + x] = static_cast<Real>(base[c] + shade + rng.uniform(-0.03, 0.03));
      }
    }
  }
  return img;
}

// One attempt; returns false when objects cannot be placed within the retry budget.
bool try_generate(const SynthConfig& cfg, std::uint64_t seed, Sample& out) {
  Rng rng(seed);
  const std::size_t side = cfg.image_side;
  const std::size_t count = cfg.min_shapes + rng.below(cfg.max_shapes - cfg.min_shapes + 1);
  std::vector<std::size_t> classes(cfg.n_classes);
  std::iota(classes.begin(), classes.end(), 0);
  for (std::size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng.below(i)]);
  classes.resize(std::min(count, classes.size()));

  std::vector<Object> objects;
  std::vector<Coverage> covs;
  for (std::size_t cls : classes) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      Object o = draw_object(cls, cfg, rng);
      covs.push_back(rasterize(o, side));
      if (visibility_ok(covs, side, cfg.min_visible)) {
        objects.push_back(o);
        placed = true;
      } else {
        covs.pop_back();
      }
    }
    if (!placed) return false;
  }

  std::vector<Real> img = background(side, rng);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Object& o = objects[i];
    const Color& mc = kMarkerColors[o.cls];
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const std::size_t p = y * side + x;
        const double body = covs[i].body[p];
        if (body <= 0) continue;
        const double marker = covs[i].marker[p];
        const double tex = kTextureAmplitude * o.texture_value(x + 0.5, y + 0.5);
        for (std::size_t c = 0; c < 3; ++c) {
          const double skin = std::clamp(o.body[c] + tex, 0.0, 1.0);
          const double color = (marker * mc[c] + (body - marker) * skin) / body;
          Real& dst = img[(c * side + y) * side + x];
          dst = static_cast<Real>(dst * (1 - body) + color * body);
        }
      }
    }
  }
  // Quantize to 8 bits so a PNG round trip is exact.
  for (auto& v : img) {
    const double b = std::lround(std::clamp<double>(v, 0.0, 1.0) * 255.0);
    v = static_cast<Real>(b) / Real(255);
  }

  const auto own = owners(covs, side);
  out.gt_mask = LabelImage{side, side, std::vector<std::uint8_t>(side * side, 0)};
  for (std::size_t p = 0; p < own.size(); ++p) {
    if (own[p] == kOwnerIgnore) {
      out.gt_mask.labels[p] = kIgnoreLabel;
    } else if (own[p] >= 0) {
      out.gt_mask.labels[p] = static_cast<std::uint8_t>(objects[own[p]].cls + 1);
    }
  }
  out.image = Tensor({3, side, side}, std::move(img));
  out.labels = labels_from_mask(out.gt_mask, cfg.n_classes);
  return true;
}

std::string sample_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05zu", index);
  return buf;
}

}  // namespace

TrainingView Dataset::training_view() const {
  TrainingView view;
  view.reserve(samples.size());
  for (const auto& s : samples) view.push_back({s.image, s.labels});
  return view;
}

void Dataset::require_masks(const std::string& command) const {
  if (!has_masks) {
    throw DataError(command + ": dataset has no ground-truth masks (masks/ directory missing)");
  }
}

void SynthConfig::validate() const {
  if (n_images == 0) throw std::invalid_argument("synth: n_images must be >= 1");
  if (n_classes == 0 || n_classes > kMaxClasses) {
    throw std::invalid_argument("synth: n_classes must be in 1.." + std::to_string(kMaxClasses));
  }
  if (min_shapes == 0 || min_shapes > max_shapes) {
    throw std::invalid_argument("synth: need 1 <= min_shapes <= max_shapes");
  }
  if (image_side < 32) throw std::invalid_argument("synth: image_side must be >= 32");
  if (!(min_size > 0 && min_size <= max_size && max_size < 0.8)) {
    throw std::invalid_argument("synth: object size fractions must satisfy 0 < min <= max < 0.8");
  }
  if (!(min_visible > 0 && min_visible <= 1)) throw std::invalid_argument("synth: min_visible must be in (0,1]");
  if (!(marker_scale > 0 && marker_scale <= 0.5)) throw std::invalid_argument("synth: marker_scale must be in (0,0.5]");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"seed", seed},           {"n_images", n_images},     {"image_side", image_side},
          {"n_classes", n_classes}, {"min_shapes", min_shapes}, {"max_shapes", max_shapes},
          {"min_size", min_size},   {"max_size", max_size},     {"min_visible", min_visible}, {"marker_scale", marker_scale},
          {"max_retries", max_retries}};
}

LabelVector labels_from_mask(const LabelImage& mask, std::size_t num_classes) {
  LabelVector labels(num_classes, 0);
  for (auto v : mask.labels) {
    if (v != 0 && v != kIgnoreLabel && v <= num_classes) labels[v - 1] = 1;
  }
  return labels;
}

Sample generate_sample(const SynthConfig& cfg, std::size_t index, GenerationReport* report) {
  cfg.validate();
  Sample s;
  s.name = sample_name(index);
  const std::uint64_t base = derive_seed(cfg.seed, index);
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (try_generate(cfg, derive_seed(base, attempt), s)) break;
    if (report != nullptr) ++report->regenerated;
    std::fprintf(stderr, "synth: %s placement infeasible, regenerating (attempt %llu)\n",
                 s.name.c_str(), static_cast<unsigned long long>(attempt + 1));
  }
  return s;
}

Dataset generate(const SynthConfig& cfg, GenerationReport* report) {
  cfg.validate();
  Dataset ds;
  ds.num_classes = cfg.n_classes;
  ds.has_masks = true;
  ds.samples.reserve(cfg.n_images);
  for (std::size_t i = 0; i < cfg.n_images; ++i) ds.samples.push_back(generate_sample(cfg, i, report));
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t n_eval, std::uint64_t seed) {
  if (n_eval > ds.samples.size()) throw std::invalid_argument("split: n_eval exceeds dataset size");
  std::vector<std::size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5917));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::size_t> eval_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  Dataset train{ds.num_classes, ds.has_masks, {}};
  Dataset eval{ds.num_classes, ds.has_masks, {}};
  for (auto i : train_idx) train.samples.push_back(ds.samples[i]);
  for (auto i : eval_idx) eval.samples.push_back(ds.samples[i]);
  return {std::move(train), std::move(eval)};
}

void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  if (ds.has_masks) fs::create_directories(root / "masks");
  std::ofstream csv(root / "labels.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (root / "labels.csv").string());
  csv << "filename";
  for (std::size_t c = 0; c < ds.num_classes; ++c) csv << ",class_" << c;
  csv << '\n';
  for (const auto& s : ds.samples) {
    const std::string file = s.name + ".png";
    write_rgb_png(root / "images" / file, s.image);
    if (ds.has_masks) write_label_png(root / "masks" / file, s.gt_mask);
    csv << file;
    for (auto v : s.labels) csv << ',' << static_cast<int>(v);
    csv << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path csv_path = root / "labels.csv";
  std::ifstream csv(csv_path);
  if (!csv) throw DataError(csv_path.string() + ": labels file not found");
  Dataset ds;
  ds.has_masks = fs::is_directory(root / "masks");
  std::string line;
  std::size_t line_no = 0;
  bool have_classes = false;
  while (std::getline(csv, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line_no == 1 && !fields.empty() && fields[0] == "filename") {
      ds.num_classes = fields.size() - 1;
      have_classes = true;
      continue;
    }
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    if (fields.size() < 2) throw DataError(where + ": expected filename followed by class flags");
    if (!have_classes) {
      ds.num_classes = fields.size() - 1;
      have_classes = true;
    }
    if (fields.size() - 1 != ds.num_classes) {
      throw DataError(where + ": expected " + std::to_string(ds.num_classes) + " class flags, found " +
                      std::to_string(fields.size() - 1));
    }
    Sample s;
    s.name = fs::path(fields[0]).stem().string();
    for (std::size_t c = 1; c < fields.size(); ++c) {
      if (fields[c] != "0" && fields[c] != "1") {
        throw DataError(where + ": class flag '" + fields[c] + "' is not 0 or 1");
      }
      s.labels.push_back(fields[c] == "1" ? 1 : 0);
    }
    const fs::path image_path = root / "images" / fields[0];
    if (!fs::exists(image_path)) throw DataError(where + ": image " + fields[0] + " not found");
    s.image = read_rgb_png(image_path);
    if (ds.has_masks) {
      const fs::path mask_path = root / "masks" / fields[0];
      if (!fs::exists(mask_path)) throw DataError(where + ": mask for " + fields[0] + " not found");
      s.gt_mask = read_label_png(mask_path);
      if (s.gt_mask.height != s.image.dim(1) || s.gt_mask.width != s.image.dim(2)) {
        throw DataError(fields[0] + ": mask size differs from image size");
      }
      if (labels_from_mask(s.gt_mask, ds.num_classes) != s.labels) {
        throw DataError(fields[0] + ": labels in labels.csv disagree with the classes in its mask");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw DataError(csv_path.string() + ": no samples");
  return ds;
}

}  // namespace ppl
