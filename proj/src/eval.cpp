#include "ppl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ppl {

ConfusionMatrix::ConfusionMatrix(std::size_t num_labels) : n_(num_labels), counts_(num_labels * num_labels, 0) {
  if (num_labels < 2) throw std::invalid_argument("confusion matrix needs background and at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::accumulate(const LabelImage& pred, const LabelImage& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("accumulate: prediction is " + std::to_string(pred.height) + "×" + std::to_string(pred.width) +
                     " but ground truth is " + std::to_string(gt.height) + "×" + std::to_string(gt.width));
  }
  for (std::size_t p = 0; p < gt.labels.size(); ++p) {
    const auto g = gt.labels[p];
    if (g == kIgnoreLabel) continue;
    const auto q = pred.labels[p];
    if (g >= n_ || q >= n_) {
      throw std::invalid_argument("accumulate: label " + std::to_string(std::max(g, q)) + " outside " +
                                  std::to_string(n_) + " labels");
    }
    ++counts_[g * n_ + q];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw std::invalid_argument("merge: confusion matrices differ in size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IouReport miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("miou: confusion matrix is empty");
  const std::size_t n = cm.size();
  IouReport r;
  r.per_class.resize(n);
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t tp = cm.at(c, c);
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += *r.per_class[c];
    ++used;
  }
  r.mean = sum / static_cast<double>(used);
  return r;
}

ForegroundScore foreground_score(const ConfusionMatrix& cm) {
  const std::size_t n = cm.size();
  std::uint64_t tp = 0;
  std::uint64_t pred_fg = 0;
  std::uint64_t gt_fg = 0;
  for (std::size_t g = 0; g < n; ++g) {
    for (std::size_t p = 0; p < n; ++p) {
      const auto v = cm.at(g, p);
      if (p > 0) pred_fg += v;
      if (g > 0) gt_fg += v;
      if (g > 0 && g == p) tp += v;
    }
  }
  ForegroundScore s;
  s.precision = pred_fg ? static_cast<double>(tp) / static_cast<double>(pred_fg) : 1.0;
  s.recall = gt_fg ? static_cast<double>(tp) / static_cast<double>(gt_fg) : 1.0;
  return s;
}

std::vector<double> threshold_range(double lo, double hi, double step) {
  if (!(step > 0) || hi < lo) throw std::invalid_argument("threshold_range: need step > 0 and hi >= lo");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(std::round((lo + step * static_cast<double>(i)) * 1e9) / 1e9);
  return out;
}

SweepTable pr_sweep(const std::vector<CamStack>& cams, const std::vector<LabelImage>& gts,
                    const std::vector<double>& thresholds, std::size_t num_classes) {
  if (gts.empty()) throw std::invalid_argument("pr_sweep: no ground-truth masks");
  if (cams.size() != gts.size()) {
    throw std::invalid_argument("pr_sweep: " + std::to_string(cams.size()) + " CAMs for " +
                                std::to_string(gts.size()) + " masks");
  }
  if (thresholds.empty()) throw std::invalid_argument("pr_sweep: no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0 && thresholds[i] < 1)) {
      throw std::invalid_argument("pr_sweep: threshold " + format_fixed(thresholds[i]) + " outside (0,1)");
    }
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw std::invalid_argument("pr_sweep: thresholds must be strictly increasing");
    }
  }
  SweepTable table;
  for (double tau : thresholds) {
    ConfusionMatrix cm(num_classes + 1);
    for (std::size_t i = 0; i < cams.size(); ++i) cm.accumulate(threshold_to_mask(cams[i], tau).mask, gts[i]);
    const auto fg = foreground_score(cm);
    table.rows.push_back({tau, fg.precision, fg.recall, miou(cm).mean});
  }
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    if (table.rows[i].miou > table.rows[table.best].miou) table.best = i;
  }
  return table;
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

}  // namespace

void write_sweep_csv(const std::filesystem::path& path, const SweepTable& table) {
  auto os = open_out(path);
  os << "# ppl-sweep v" << kSweepCsvVersion << "\n";
  os << "tau,precision,recall,miou\n";
  for (const auto& r : table.rows) {
    os << format_fixed(r.tau, 4) << ',' << format_fixed(r.precision) << ',' << format_fixed(r.recall) << ','
       << format_fixed(r.miou) << '\n';
  }
}

SweepTable read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "# ppl-sweep v" + std::to_string(kSweepCsvVersion)) {
    throw std::runtime_error(path.string() + ": unsupported sweep CSV version line '" + line + "'");
  }
  std::getline(is, line);
  SweepTable t;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    SweepRow r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream ls(line);
    if (!(ls >> r.tau >> c1 >> r.precision >> c2 >> r.recall >> c3 >> r.miou) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed sweep row");
    }
    t.rows.push_back(r);
  }
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    if (t.rows[i].miou > t.rows[t.best].miou) t.best = i;
  }
  return t;
}

void write_iou_csv(const std::filesystem::path& path, const IouReport& report) {
  auto os = open_out(path);
  os << "label,iou\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    os << (c == 0 ? std::string("background") : "class_" + std::to_string(c - 1)) << ',';
    if (report.per_class[c]) os << format_fixed(*report.per_class[c]);
    os << '\n';
  }
  os << "mean," << format_fixed(report.mean) << '\n';
}

void write_sweep_svg(const std::filesystem::path& path, const SweepTable& table, const std::string& title) {
  constexpr double kW = 320, kH = 240, kPad = 36;
  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kW << "\" height=\"" << kH + 24
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"8\" y=\"16\" font-size=\"13\">" << title << "</text>\n";
  auto panel = [&](double ox, const char* xlabel, const char* ylabel, double xmin, double xmax, auto xy) {
    const double x0 = ox + kPad, y0 = 24 + kH - kPad, w = kW - 2 * kPad, h = kH - 2 * kPad;
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 - h << "\" width=\"" << w << "\" height=\"" << h
       << "\" fill=\"none\" stroke=\"#888\"/>\n";
    os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + 24 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    os << "<text x=\"" << ox + 10 << "\" y=\"" << y0 - h / 2 << "\" transform=\"rotate(-90 " << ox + 10 << ' '
       << y0 - h / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
    const double span = xmax > xmin ? xmax - xmin : 1.0;
    for (const auto& r : table.rows) {
      const auto [x, y] = xy(r);
      os << format_fixed(x0 + (x - xmin) / span * w, 2) << ',' << format_fixed(y0 - y * h, 2) << ' ';
    }
    os << "\"/>\n";
  };
  panel(0, "recall", "precision", 0.0, 1.0, [](const SweepRow& r) { return std::pair{r.recall, r.precision}; });
  const double tmin = table.rows.empty() ? 0 : table.rows.front().tau;
  const double tmax = table.rows.empty() ? 1 : table.rows.back().tau;
  panel(kW, "tau", "mIoU", tmin, tmax, [](const SweepRow& r) { return std::pair{r.tau, r.miou}; });
  os << "</svg>\n";
}

}  // namespace ppl
