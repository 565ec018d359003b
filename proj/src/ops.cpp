#include "ppl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace ppl::ops {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->needs_grad()) return true;
  }
  return false;
}

void record(std::vector<Tensor> inputs, Tensor& out, GradTape::BackwardFn fn) {
  active_tape()->record(std::move(inputs), out, std::move(fn));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Batch view of a spatial tensor: rank 3 is a single sample.
struct Nchw {
  std::size_t n, c, h, w;
};

Nchw as_nchw(const Tensor& t, const char* op) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  throw ShapeError(std::string(op) + ": expected C×H×W or N×C×H×W input, got " +
                   shape_str(t.shape()));
}

Shape spatial_shape(const Tensor& like, std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) {
  if (like.rank() == 3) return {c, h, w};
  return {n, c, h, w};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  Tensor y = make_result(a.shape(), std::move(out));
  if (grad_enabled({&a, &b})) {
    record({a, b}, y, [](std::span<const Real> g, std::span<std::span<Real>> gin) {
      for (auto& gi : gin) {
        if (gi.empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  Tensor y = make_result(a.shape(), std::move(out));
  if (grad_enabled({&a, &b})) {
    record({a, b}, y, [a, b](std::span<const Real> g, std::span<std::span<Real>> gin) {
      auto da = a.data();
      auto db = b.data();
      if (!gin[0].empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * db[i];
      }
      if (!gin[1].empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * da[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, Real s) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  Tensor y = make_result(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    record({a}, y, [s](std::span<const Real> g, std::span<std::span<Real>> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += s * g[i];
    });
  }
  return y;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  Tensor y = make_result({1}, {static_cast<Real>(acc)});
  if (grad_enabled({&a})) {
    record({a}, y, [](std::span<const Real> g, std::span<std::span<Real>> gin) {
      for (auto& v : gin[0]) v += g[0];
    });
  }
  return y;
}

Tensor relu(const Tensor& a) {
  std::vector<Real> out(a.numel());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] > Real(0) ? da[i] : Real(0);
  Tensor y = make_result(a.shape(), std::move(out));
  if (grad_enabled({&a})) {
    record({a}, y, [a](std::span<const Real> g, std::span<std::span<Real>> gin) {
      auto da = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (da[i] > Real(0)) gin[0][i] += g[i];
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor y = make_result(std::move(shape), std::vector<Real>(a.data().begin(), a.data().end()));
  if (grad_enabled({&a})) {
    record({a}, y, [](std::span<const Real> g, std::span<std::span<Real>> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    });
  }
  return y;
}

Tensor stop_gradient(const Tensor& a) {
  return make_result(a.shape(), std::vector<Real>(a.data().begin(), a.data().end()));
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t padding) {
  const auto x = as_nchw(input, "conv2d");
  if (weight.rank() != 4) {
    throw ShapeError("conv2d: weight must be C_out×C_in×k×k, got " + shape_str(weight.shape()));
  }
  const std::size_t co = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (weight.dim(1) != x.c) {
    throw ShapeError("conv2d: input channel dimension is " + std::to_string(x.c) +
                     " but weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (bias && (bias->rank() != 1 || bias->dim(0) != co)) {
    throw ShapeError("conv2d: bias length must equal output channels " + std::to_string(co));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (k > x.h + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded height " +
                     std::to_string(x.h + 2 * padding));
  }
  if (k > x.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded width " +
                     std::to_string(x.w + 2 * padding));
  }
  const std::size_t ho = (x.h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (x.w + 2 * padding - k) / stride + 1;
  const std::size_t ckk = x.c * k * k;
  const std::size_t p = ho * wo;
  const std::size_t np = x.n * p;

  // im2col: row r=(c,kh,kw), column n*P + oh*Wo + ow.
  std::vector<Real> cols(ckk * np);
  const auto xin = input.data();
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t c = 0; c < x.c; ++c) {
      const Real* plane = xin.data() + (n * x.c + c) * x.h * x.w;
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw) {
          Real* row = cols.data() + ((c * k + kh) * k + kw) * np + n * p;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                            static_cast<std::ptrdiff_t>(padding);
            Real* dst = row + oh * wo;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(x.h)) {
              std::fill(dst, dst + wo, Real(0));
              continue;
            }
            const Real* src = plane + ih * x.w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                              static_cast<std::ptrdiff_t>(padding);
              dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(x.w)) ? Real(0) : src[iw];
            }
          }
        }
      }
    }
  }

  RowMat out_tmp(co, np);
  ConstMapMat wmat(weight.data().data(), co, ckk);
  ConstMapMat cmat(cols.data(), ckk, np);
  out_tmp.noalias() = wmat * cmat;

  std::vector<Real> out(x.n * co * p);
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t o = 0; o < co; ++o) {
      const Real b = bias ? bias->data()[o] : Real(0);
      const Real* src = out_tmp.data() + o * np + n * p;
      Real* dst = out.data() + (n * co + o) * p;
      for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] + b;
    }
  }
  Tensor y = make_result(spatial_shape(input, x.n, co, ho, wo), std::move(out));

  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  if (!grad_enabled({&input, &weight, bias_ptr})) return y;

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool keep_cols = weight.needs_grad();
  auto saved_cols = std::make_shared<std::vector<Real>>(keep_cols ? std::move(cols)
                                                                  : std::vector<Real>{});
  record(std::move(inputs), y,
         [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
           RowMat gmat(co, np);
           for (std::size_t n = 0; n < x.n; ++n) {
             for (std::size_t o = 0; o < co; ++o) {
               const Real* src = g.data() + (n * co + o) * p;
               std::copy(src, src + p, gmat.data() + o * np + n * p);
             }
           }
           if (!gin[1].empty()) {
             ConstMapMat cm(saved_cols->data(), ckk, np);
             MapMat gw(gin[1].data(), co, ckk);
             gw.noalias() += gmat * cm.transpose();
           }
           if (gin.size() > 2 && !gin[2].empty()) {
             for (std::size_t o = 0; o < co; ++o) gin[2][o] += gmat.row(o).sum();
           }
           if (!gin[0].empty()) {
             ConstMapMat wm(weight.data().data(), co, ckk);
             RowMat dcols(ckk, np);
             dcols.noalias() = wm.transpose() * gmat;
             Real* gx = gin[0].data();
             for (std::size_t n = 0; n < x.n; ++n) {
               for (std::size_t c = 0; c < x.c; ++c) {
                 Real* plane = gx + (n * x.c + c) * x.h * x.w;
                 for (std::size_t kh = 0; kh < k; ++kh) {
                   for (std::size_t kw = 0; kw < k; ++kw) {
                     const Real* row = dcols.data() + ((c * k + kh) * k + kw) * np + n * p;
                     for (std::size_t oh = 0; oh < ho; ++oh) {
                       const auto ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                       static_cast<std::ptrdiff_t>(padding);
                       if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(x.h)) continue;
                       Real* dst = plane + ih * x.w;
                       const Real* src = row + oh * wo;
                       for (std::size_t ow = 0; ow < wo; ++ow) {
                         const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                         static_cast<std::ptrdiff_t>(padding);
                         if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(x.w)) dst[iw] += src[ow];
                       }
                     }
                   }
                 }
               }
             }
           }
         });
  return y;
}

Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::size_t groups, Real eps) {
  const auto x = as_nchw(input, "group_norm");
  if (gamma.numel() != x.c || beta.numel() != x.c) {
    throw ShapeError("group_norm: scale/shift length must equal channel count " +
                     std::to_string(x.c));
  }
  if (groups == 0 || x.c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(x.c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const std::size_t cg = x.c / groups;
  const std::size_t hw = x.h * x.w;
  const std::size_t m = cg * hw;
  auto xin = input.data();
  auto gm = gamma.data();
  auto bt = beta.data();

  auto xhat = std::make_shared<std::vector<Real>>(input.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(x.n * groups);
  std::vector<Real> out(input.numel());
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (n * x.c + g * cg) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += xin[base + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = xin[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*inv_std)[n * groups + g] = static_cast<Real>(inv);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t c = g * cg + i / hw;
        const auto xh = static_cast<Real>((xin[base + i] - mean) * inv);
        (*xhat)[base + i] = xh;
        out[base + i] = xh * gm[c] + bt[c];
      }
    }
  }
  Tensor y = make_result(input.shape(), std::move(out));
  if (!grad_enabled({&input, &gamma, &beta})) return y;

  record({input, gamma, beta}, y,
         [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
           const auto& xh = *xhat;
           auto gm = gamma.data();
           if (!gin[1].empty() || !gin[2].empty()) {
             for (std::size_t n = 0; n < x.n; ++n) {
               for (std::size_t c = 0; c < x.c; ++c) {
                 const std::size_t base = (n * x.c + c) * hw;
                 double sg = 0.0;
                 double sb = 0.0;
                 for (std::size_t i = 0; i < hw; ++i) {
                   sg += g[base + i] * xh[base + i];
                   sb += g[base + i];
                 }
                 if (!gin[1].empty()) gin[1][c] += static_cast<Real>(sg);
                 if (!gin[2].empty()) gin[2][c] += static_cast<Real>(sb);
               }
             }
           }
           if (gin[0].empty()) return;
           std::vector<Real> dxhat(m);
           for (std::size_t n = 0; n < x.n; ++n) {
             for (std::size_t grp = 0; grp < groups; ++grp) {
               const std::size_t base = (n * x.c + grp * cg) * hw;
               double s1 = 0.0;
               double s2 = 0.0;
               for (std::size_t i = 0; i < m; ++i) {
                 const std::size_t c = grp * cg + i / hw;
                 dxhat[i] = g[base + i] * gm[c];
                 s1 += dxhat[i];
                 s2 += static_cast<double>(dxhat[i]) * xh[base + i];
               }
               const double inv = (*inv_std)[n * groups + grp];
               const double md = static_cast<double>(m);
               for (std::size_t i = 0; i < m; ++i) {
                 gin[0][base + i] +=
                     static_cast<Real>(inv / md * (md * dxhat[i] - s1 - xh[base + i] * s2));
               }
             }
           }
         });
  return y;
}

Tensor avg_pool2d(const Tensor& input, std::size_t k) {
  const auto x = as_nchw(input, "avg_pool2d");
  if (k == 0 || k > x.h || k > x.w) {
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " does not fit " +
                     std::to_string(x.h) + "×" + std::to_string(x.w));
  }
  const std::size_t ho = x.h / k;
  const std::size_t wo = x.w / k;
  const Real inv = Real(1) / static_cast<Real>(k * k);
  auto xin = input.data();
  std::vector<Real> out(x.n * x.c * ho * wo, Real(0));
  for (std::size_t nc = 0; nc < x.n * x.c; ++nc) {
    const Real* src = xin.data() + nc * x.h * x.w;
    Real* dst = out.data() + nc * ho * wo;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        Real acc = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) acc += src[(oh * k + i) * x.w + ow * k + j];
        }
        dst[oh * wo + ow] = acc * inv;
      }
    }
  }
  Tensor y = make_result(spatial_shape(input, x.n, x.c, ho, wo), std::move(out));
  if (grad_enabled({&input})) {
    record({input}, y, [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
      for (std::size_t nc = 0; nc < x.n * x.c; ++nc) {
        Real* dst = gin[0].data() + nc * x.h * x.w;
        const Real* src = g.data() + nc * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const Real v = src[oh * wo + ow] * inv;
            for (std::size_t i = 0; i < k; ++i) {
              for (std::size_t j = 0; j < k; ++j) dst[(oh * k + i) * x.w + ow * k + j] += v;
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor global_avg_pool(const Tensor& input) {
  const auto x = as_nchw(input, "global_avg_pool");
  const std::size_t hw = x.h * x.w;
  auto xin = input.data();
  std::vector<Real> out(x.n * x.c);
  for (std::size_t nc = 0; nc < x.n * x.c; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += xin[nc * hw + i];
    out[nc] = static_cast<Real>(acc / static_cast<double>(hw));
  }
  Shape shape = input.rank() == 3 ? Shape{x.c} : Shape{x.n, x.c};
  Tensor y = make_result(std::move(shape), std::move(out));
  if (grad_enabled({&input})) {
    record({input}, y, [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
      const Real inv = Real(1) / static_cast<Real>(hw);
      for (std::size_t nc = 0; nc < x.n * x.c; ++nc) {
        const Real v = g[nc] * inv;
        for (std::size_t i = 0; i < hw; ++i) gin[0][nc * hw + i] += v;
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("linear: expected N×C_in input and C_out×C_in weight");
  }
  const std::size_t n = input.dim(0);
  const std::size_t ci = input.dim(1);
  const std::size_t co = weight.dim(0);
  if (weight.dim(1) != ci) {
    throw ShapeError("linear: input feature dimension is " + std::to_string(ci) +
                     " but weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias && bias->numel() != co) {
    throw ShapeError("linear: bias length must equal " + std::to_string(co));
  }
  auto xin = input.data();
  auto w = weight.data();
  std::vector<Real> out(n * co);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < co; ++o) {
      double acc = bias ? bias->data()[o] : 0.0;
      for (std::size_t j = 0; j < ci; ++j) acc += static_cast<double>(xin[i * ci + j]) * w[o * ci + j];
      out[i * co + o] = static_cast<Real>(acc);
    }
  }
  Tensor y = make_result({n, co}, std::move(out));
  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  if (!grad_enabled({&input, &weight, bias_ptr})) return y;
  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  record(std::move(inputs), y,
         [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
           auto xin = input.data();
           auto w = weight.data();
           for (std::size_t i = 0; i < n; ++i) {
             for (std::size_t o = 0; o < co; ++o) {
               const Real go = g[i * co + o];
               if (!gin[0].empty()) {
                 for (std::size_t j = 0; j < ci; ++j) gin[0][i * ci + j] += go * w[o * ci + j];
               }
               if (!gin[1].empty()) {
                 for (std::size_t j = 0; j < ci; ++j) gin[1][o * ci + j] += go * xin[i * ci + j];
               }
               if (gin.size() > 2 && !gin[2].empty()) gin[2][o] += go;
             }
           }
         });
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch at input " + std::to_string(i));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) {
        throw ShapeError("concat: input " + std::to_string(i) + " dimension " + std::to_string(d) +
                         " is " + std::to_string(s[d]) + ", expected " + std::to_string(ref[d]));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<Real> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t chunk = t.dim(axis) * inner;
    auto src = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, out.data() + o * out_row + off);
    }
    off += chunk;
  }
  Tensor y = make_result(out_shape, std::move(out));

  bool any = false;
  for (const auto& t : parts) any = any || t.needs_grad();
  if (active_tape() == nullptr || !any) return y;
  std::vector<std::size_t> chunks;
  for (const auto& t : parts) chunks.push_back(t.dim(axis) * inner);
  record(parts, y, [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
    for (std::size_t i = 0; i < gin.size(); ++i) {
      if (gin[i].empty()) continue;
      for (std::size_t o = 0; o < outer; ++o) {
        const Real* src = g.data() + o * out_row + offsets[i];
        Real* dst = gin[i].data() + o * chunks[i];
        for (std::size_t j = 0; j < chunks[i]; ++j) dst[j] += src[j];
      }
    }
  });
  return y;
}

Tensor narrow(const Tensor& input, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = input.shape();
  if (axis >= s.size()) throw ShapeError("narrow: axis " + std::to_string(axis) + " out of range");
  if (length == 0 || start + length > s[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") exceeds dimension " +
                     std::to_string(axis) + " of extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = length * inner;
  const std::size_t off = start * inner;
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<Real> out(outer * out_row);
  auto src = input.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.data() + o * in_row + off, out_row, out.data() + o * out_row);
  }
  Tensor y = make_result(std::move(out_shape), std::move(out));
  if (grad_enabled({&input})) {
    record({input}, y, [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
      for (std::size_t o = 0; o < outer; ++o) {
        Real* dst = gin[0].data() + o * in_row + off;
        const Real* gs = g.data() + o * out_row;
        for (std::size_t j = 0; j < out_row; ++j) dst[j] += gs[j];
      }
    });
  }
  return y;
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor multilabel_soft_margin_loss(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "multilabel_soft_margin_loss");
  if (logits.rank() != 2) {
    throw ShapeError("multilabel_soft_margin_loss: expected N×C logits, got " +
                     shape_str(logits.shape()));
  }
  auto z = logits.data();
  auto t = targets.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    // -[y log σ(z) + (1-y) log(1-σ(z))] = y·softplus(-z) + (1-y)·softplus(z)
    acc += t[i] * softplus(-zi) + (1.0 - t[i]) * softplus(zi);
  }
  const double denom = static_cast<double>(z.size());
  Tensor y = make_result({1}, {static_cast<Real>(acc / denom)});
  if (grad_enabled({&logits})) {
    record({logits, targets}, y, [=](std::span<const Real> g, std::span<std::span<Real>> gin) {
      if (gin[0].empty()) return;
      auto z = logits.data();
      auto t = targets.data();
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(z[i])));
        gin[0][i] += static_cast<Real>(g[0] * (sig - t[i]) / denom);
      }
    });
  }
  return y;
}

}  // namespace ppl::ops
