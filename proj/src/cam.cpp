#include "ppl/cam.hpp"

#include "ppl/container.hpp"
#include "ppl/ops.hpp"
#include "ppl/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ppl {

Map2d raw_cam(const Tensor& feature, const Tensor& omega, std::size_t cls) {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  if (feature.rank() == 3) {
    c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  } else if (feature.rank() == 4 && feature.dim(0) == 1) {
    c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
  } else {
    throw ShapeError("raw_cam: expected one C×h×w feature, got " + shape_str(feature.shape()));
  }
  if (omega.rank() != 2 || omega.dim(1) != c) {
    throw ShapeError("raw_cam: classifier weights " + shape_str(omega.shape()) + " do not match " +
                     std::to_string(c) + " feature channels");
  }
  if (cls >= omega.dim(0)) {
    throw ShapeError("raw_cam: unknown class " + std::to_string(cls) + " (classifier has " +
                     std::to_string(omega.dim(0)) + ")");
  }
  Map2d out(h, w);
  auto f = feature.data();
  auto wt = omega.data().subspan(cls * c, c);
  std::vector<double> acc(h * w, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double wk = wt[k];
    const Real* plane = f.data() + k * h * w;
    for (std::size_t i = 0; i < h * w; ++i) acc[i] += wk * plane[i];
  }
  for (std::size_t i = 0; i < h * w; ++i) out.values[i] = static_cast<Real>(acc[i]);
  return out;
}

Map2d normalize_cam(const Map2d& map) {
  Map2d out = map;
  Real peak = 0;
  for (auto& v : out.values) {
    v = std::max(v, Real(0));
    peak = std::max(peak, v);
  }
  if (peak <= Real(0)) {
    std::fill(out.values.begin(), out.values.end(), Real(0));
    return out;
  }
  for (auto& v : out.values) v /= peak;
  return out;
}

Tensor segment_weights(const PatchNetwork& net, std::size_t segment) {
  const Tensor& w = net.backbone().head().weight.value;
  const std::size_t c2 = net.backbone().config().head_channels();
  if (segment > net.branches().size()) {
    throw ShapeError("segment_weights: segment " + std::to_string(segment) + " out of range");
  }
  return ops::narrow(w, 1, segment * c2, c2);
}

std::vector<std::size_t> present_classes(const LabelVector& labels) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c]) out.push_back(c);
  }
  return out;
}

std::vector<CamStack> segment_cams(const PatchNetwork& net, const Tensor& image,
                                   const std::vector<std::size_t>& classes) {
  const BranchOutputs out = net.forward(image);
  std::vector<Tensor> feats{out.f_hat};
  feats.insert(feats.end(), out.f_tilde.begin(), out.f_tilde.end());
  std::vector<CamStack> stacks;
  for (std::size_t s = 0; s < feats.size(); ++s) {
    const Tensor omega = segment_weights(net, s);
    CamStack st;
    st.classes = classes;
    for (auto c : classes) st.maps.push_back(raw_cam(feats[s], omega, c));
    stacks.push_back(std::move(st));
  }
  return stacks;
}

std::vector<CamStack> fuse_scales(const Tensor& image, const PatchNetwork& net,
                                  const std::vector<double>& scales,
                                  const std::vector<std::size_t>& classes) {
  if (scales.empty()) throw std::invalid_argument("fuse_scales: no scales given");
  const auto& cfg = net.backbone().config();
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const std::size_t ref_h = cfg.extent_after(kNumStages, h);
  const std::size_t ref_w = cfg.extent_after(kNumStages, w);
  std::vector<CamStack> fused;
  for (double s : scales) {
    if (!(s > 0)) throw std::invalid_argument("fuse_scales: scale must be positive");
    const auto sh = static_cast<std::size_t>(std::lround(h * s));
    const auto sw = static_cast<std::size_t>(std::lround(w * s));
    if (sh < cfg.min_input || sw < cfg.min_input) {
      throw ShapeError("fuse_scales: scale " + std::to_string(s) + " gives a " + std::to_string(sh) + "×" +
                       std::to_string(sw) + " image, below the minimum input side " +
                       std::to_string(cfg.min_input));
    }
    const Tensor scaled = resize_image(image, sh, sw);
    auto stacks = segment_cams(net, scaled, classes);
    if (fused.empty()) {
      fused.resize(stacks.size());
      for (std::size_t b = 0; b < stacks.size(); ++b) {
        fused[b].classes = classes;
        fused[b].maps.assign(classes.size(), Map2d(ref_h, ref_w));
      }
    }
    for (std::size_t b = 0; b < stacks.size(); ++b) {
      for (std::size_t i = 0; i < classes.size(); ++i) {
        const Map2d& m = stacks[b].maps[i];
        const Map2d resized = (m.height == ref_h && m.width == ref_w) ? m : resize_bilinear(m, ref_h, ref_w);
        auto& dst = fused[b].maps[i].values;
        for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += resized.values[p];
      }
    }
  }
  for (auto& st : fused) {
    for (auto& m : st.maps) m = normalize_cam(m);
    st.normalized = true;
  }
  return fused;
}

CamStack average_branch_cams(const std::vector<CamStack>& stacks) {
  if (stacks.empty()) throw std::invalid_argument("average_branch_cams: no stacks");
  const CamStack& ref = stacks.front();
  for (std::size_t s = 1; s < stacks.size(); ++s) {
    if (stacks[s].classes != ref.classes) {
      throw ShapeError("average_branch_cams: stack " + std::to_string(s) + " has a different class set");
    }
    if (stacks[s].height() != ref.height() || stacks[s].width() != ref.width()) {
      throw ShapeError("average_branch_cams: stack " + std::to_string(s) + " grid " +
                       std::to_string(stacks[s].height()) + "×" + std::to_string(stacks[s].width()) +
                       " differs from " + std::to_string(ref.height()) + "×" + std::to_string(ref.width()));
    }
  }
  CamStack out;
  out.classes = ref.classes;
  const double inv = 1.0 / static_cast<double>(stacks.size());
  for (std::size_t i = 0; i < ref.maps.size(); ++i) {
    Map2d mean(ref.height(), ref.width());
    for (std::size_t p = 0; p < mean.values.size(); ++p) {
      double acc = 0;
      for (const auto& st : stacks) acc += st.maps[i].values[p];
      mean.values[p] = static_cast<Real>(acc * inv);
    }
    out.maps.push_back(normalize_cam(mean));
  }
  out.normalized = true;
  return out;
}

CamStack upsample(const CamStack& stack, std::size_t height, std::size_t width) {
  CamStack out;
  out.classes = stack.classes;
  for (const auto& m : stack.maps) out.maps.push_back(normalize_cam(resize_bilinear(m, height, width)));
  out.normalized = true;
  return out;
}

PseudoMask threshold_to_mask(const CamStack& stack, double tau) {
  PseudoMask pm;
  pm.tau = tau;
  const std::size_t h = stack.height();
  const std::size_t w = stack.width();
  pm.mask = LabelImage{h, w, std::vector<std::uint8_t>(h * w, 0)};
  for (std::size_t p = 0; p < h * w; ++p) {
    Real best = -1;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < stack.maps.size(); ++i) {
      if (stack.maps[i].values[p] > best) {
        best = stack.maps[i].values[p];
        best_i = i;
      }
    }
    if (!stack.maps.empty() && best >= tau) {
      pm.mask.labels[p] = static_cast<std::uint8_t>(stack.classes[best_i] + 1);
    }
  }
  return pm;
}

CamStack infer_cam(const PatchNetwork& net, const Tensor& image, const LabelVector& labels,
                   const std::vector<double>& scales) {
  const auto classes = present_classes(labels);
  const auto stacks = fuse_scales(image, net, scales, classes);
  return upsample(average_branch_cams(stacks), image.dim(1), image.dim(2));
}

void write_cam_file(const std::filesystem::path& path, const CamStack& stack, const nlohmann::json& meta) {
  TensorBundle b;
  b.meta = meta;
  b.meta["classes"] = stack.classes;
  b.meta["height"] = stack.height();
  b.meta["width"] = stack.width();
  b.meta["normalized"] = stack.normalized;
  if (!stack.maps.empty()) {
    std::vector<Real> data;
    for (const auto& m : stack.maps) data.insert(data.end(), m.values.begin(), m.values.end());
    b.add("cam", Tensor({stack.maps.size(), stack.height(), stack.width()}, std::move(data)));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_bundle(path, "cam", b);
}

CamStack read_cam_file(const std::filesystem::path& path, nlohmann::json* meta) {
  const TensorBundle b = read_bundle(path, "cam");
  CamStack st;
  st.classes = b.meta.at("classes").get<std::vector<std::size_t>>();
  st.normalized = b.meta.value("normalized", true);
  const auto h = b.meta.at("height").get<std::size_t>();
  const auto w = b.meta.at("width").get<std::size_t>();
  if (!st.classes.empty()) {
    const Tensor& t = b.at("cam");
    if (t.shape() != Shape{st.classes.size(), h, w}) {
      throw std::runtime_error(path.string() + ": cam tensor shape " + shape_str(t.shape()) +
                               " does not match its metadata");
    }
    for (std::size_t i = 0; i < st.classes.size(); ++i) {
      Map2d m(h, w);
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(i * h * w), h * w, m.values.begin());
      st.maps.push_back(std::move(m));
    }
  }
  if (meta) *meta = b.meta;
  return st;
}

void write_cam_heatmap(const std::filesystem::path& path, const CamStack& stack) {
  Map2d peak(stack.height(), stack.width());
  for (const auto& m : stack.maps) {
    for (std::size_t p = 0; p < m.values.size(); ++p) peak.values[p] = std::max(peak.values[p], m.values[p]);
  }
  write_heatmap_png(path, peak);
}

}  // namespace ppl
