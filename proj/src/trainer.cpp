#include "ppl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ppl/eval.hpp"
#include "ppl/image.hpp"

namespace ppl {

Tensor multilabel_loss(const Tensor& logits, const std::vector<LabelVector>& labels) {
  const Tensor rows = logits.rank() == 1 ? ops::reshape(logits, {1, logits.dim(0)}) : logits;
  if (rows.rank() != 2) throw ShapeError("multilabel_loss: logits must be N×C, got " + shape_str(logits.shape()));
  const std::size_t n = rows.dim(0);
  const std::size_t c = rows.dim(1);
  if (labels.size() != n) {
    throw ShapeError("multilabel_loss: " + std::to_string(labels.size()) + " label vectors for " +
                     std::to_string(n) + " logit rows");
  }
  std::vector<Real> y(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i].size() != c) {
      throw ShapeError("multilabel_loss: label vector " + std::to_string(i) + " has length " +
                       std::to_string(labels[i].size()) + ", logits have " + std::to_string(c) + " classes");
    }
    for (std::size_t k = 0; k < c; ++k) y[i * c + k] = labels[i][k] ? Real(1) : Real(0);
  }
  return ops::multilabel_soft_margin_loss(rows, Tensor({n, c}, std::move(y)));
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (crop_side == 0) throw std::invalid_argument("train: crop_side must be positive");
  if (!(scale_min > 0 && scale_min <= scale_max)) {
    throw std::invalid_argument("train: rescale range must satisfy 0 < scale_min <= scale_max");
  }
  OptimizerConfig o = optim;
  o.max_iter = 1;
  o.validate();
}

void write_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,epoch,mean_loss,lr\n";
  for (const auto& r : log) {
    os << r.step << ',' << r.epoch << ',' << format_fixed(r.mean_loss, 6) << ',' << format_fixed(r.lr, 8) << '\n';
  }
}

Tensor augment_image(const Tensor& image, const TrainConfig& cfg, Rng& rng) {
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double f = s * static_cast<double>(cfg.crop_side) / static_cast<double>(std::max(h, w));
  const auto oh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h * f)));
  const auto ow = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w * f)));
  Tensor out = (oh == h && ow == w) ? image : resize_image(image, oh, ow);
  if (rng.bernoulli(0.5)) out = flip_horizontal(out);
  const auto side = static_cast<std::ptrdiff_t>(cfg.crop_side);
  auto offset = [&](std::size_t extent) -> std::ptrdiff_t {
    const auto e = static_cast<std::ptrdiff_t>(extent);
    if (e >= side) return static_cast<std::ptrdiff_t>(rng.below(static_cast<std::uint64_t>(e - side + 1)));
    return -static_cast<std::ptrdiff_t>(rng.below(static_cast<std::uint64_t>(side - e + 1)));
  };
  const auto top = offset(oh);
  const auto left = offset(ow);
  return crop_or_pad(out, top, left, cfg.crop_side, cfg.crop_side, static_cast<Real>(cfg.pad_value));
}

namespace {

Tensor plain_input(const Tensor& image, std::size_t side) {
  if (image.dim(1) == side && image.dim(2) == side) return image;
  return resize_image(image, side, side);
}

}  // namespace

void train_epochs(PatchNetwork& net, const TrainingView& data, const TrainConfig& cfg, TrainLog* log,
                  std::size_t step_index) {
  if (data.empty()) throw std::invalid_argument("train_epochs: empty dataset");
  cfg.validate();
  if (cfg.epochs == 0) return;
  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  OptimizerConfig oc = cfg.optim;
  oc.max_iter = cfg.epochs * per_epoch;
  Sgd sgd(oc);

  auto params = net.parameters();
  for (Parameter* p : params) {
    p->lr_multiplier = (cfg.boost_new_layers && p->new_layer) ? static_cast<Real>(oc.new_layer_lr_multiplier) : Real(1);
  }

  Rng rng(derive_seed(cfg.seed, 0x747261696eULL));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t side = cfg.crop_side;
  const std::size_t plane = 3 * side * side;
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const double epoch_lr = poly_lr(iter, oc);
    double loss_sum = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t first = b * cfg.batch_size;
      const std::size_t count = std::min(cfg.batch_size, n - first);
      std::vector<Real> pixels(count * plane);
      std::vector<LabelVector> labels;
      for (std::size_t k = 0; k < count; ++k) {
        const auto& item = data[order[first + k]];
        if (item.image.rank() != 3 || item.image.dim(0) != 3) {
          throw ShapeError("train_epochs: expected a 3×H×W image, got " + shape_str(item.image.shape()));
        }
        const Tensor img = cfg.augment ? augment_image(item.image, cfg, rng) : plain_input(item.image, side);
        std::copy(img.data().begin(), img.data().end(), pixels.begin() + static_cast<std::ptrdiff_t>(k * plane));
        labels.push_back(item.labels);
      }
      const Tensor batch({count, 3, side, side}, std::move(pixels));
      for (Parameter* p : params) p->value.zero_grad();
      GradTape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = multilabel_loss(net.forward(batch).logits, labels);
      }
      if (loss.needs_grad()) tape.backward(loss);
      sgd.step(params, iter);
      ++iter;
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(count);
    }
    if (log) log->push_back({step_index, epoch + 1, loss_sum / static_cast<double>(n), epoch_lr});
  }
  for (Parameter* p : params) p->value.zero_grad();
}

// ---------------------------------------------------------------------------

nlohmann::json backbone_to_json(const BackboneConfig& cfg) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : cfg.stages) {
    stages.push_back({{"index", s.stage_index},
                      {"in", s.in_channels},
                      {"out", s.out_channels},
                      {"blocks", s.blocks},
                      {"stride", s.stride}});
  }
  return {{"in_channels", cfg.in_channels},     {"stem_channels", cfg.stem_channels},
          {"stem_stride", cfg.stem_stride},     {"stem_pool", cfg.stem_pool},
          {"stages", stages},                   {"num_classes", cfg.num_classes},
          {"norm_group_size", cfg.norm_group_size}, {"min_input", cfg.min_input},
          {"input_mean", cfg.input_mean},       {"input_scale", cfg.input_scale}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig cfg;
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.stem_channels = j.at("stem_channels").get<std::size_t>();
  cfg.stem_stride = j.at("stem_stride").get<std::size_t>();
  cfg.stem_pool = j.at("stem_pool").get<bool>();
  const auto& st = j.at("stages");
  if (st.size() != static_cast<std::size_t>(kNumStages)) throw std::runtime_error("checkpoint: expected 4 stages");
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    cfg.stages[i].stage_index = st[i].at("index").get<int>();
    cfg.stages[i].in_channels = st[i].at("in").get<std::size_t>();
    cfg.stages[i].out_channels = st[i].at("out").get<std::size_t>();
    cfg.stages[i].blocks = st[i].at("blocks").get<std::size_t>();
    cfg.stages[i].stride = st[i].at("stride").get<std::size_t>();
  }
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.norm_group_size = j.at("norm_group_size").get<std::size_t>();
  cfg.min_input = j.at("min_input").get<std::size_t>();
  cfg.input_mean = j.at("input_mean").get<double>();
  cfg.input_scale = j.at("input_scale").get<double>();
  cfg.validate();
  return cfg;
}

TensorBundle make_checkpoint(const PatchNetwork& net, const CheckpointInfo& info, const Sgd* optimizer) {
  TensorBundle b;
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& s : net.specs()) branches.push_back({s.stage, s.grid});
  b.meta = {{"backbone", backbone_to_json(net.backbone().config())},
            {"branches", branches},
            {"detach", net.detached()},
            {"frozen_prefix", net.backbone().frozen_prefix()},
            {"step", info.step},
            {"config_hash", info.config_hash},
            {"extra", info.extra}};
  // Read-only walk over the parameter list.
  for (Parameter* p : const_cast<PatchNetwork&>(net).parameters()) b.add(p->name, p->value.clone());
  if (optimizer) {
    for (const auto& [name, v] : optimizer->velocity()) b.add("velocity/" + name, Tensor({v.size()}, v));
  }
  return b;
}

namespace {

PatchNetwork build_network(const BackboneConfig& cfg, const std::vector<BranchSpec>& specs, bool detach,
                           std::uint64_t seed) {
  StagedBackbone bb(cfg, derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  std::vector<PatchBranch> branches;
  for (const auto& s : specs) branches.push_back(PatchBranch::make(s, cfg, rng));
  if (!specs.empty()) bb.reset_head(cfg.head_channels() * (1 + specs.size()), rng);
  return PatchNetwork(std::move(bb), std::move(branches), detach);
}

void copy_into(Parameter& dst, const Tensor& src) {
  if (dst.value.shape() != src.shape()) {
    throw ShapeError("parameter " + dst.name + " has shape " + shape_str(dst.value.shape()) + ", source has " +
                     shape_str(src.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.value.mutable_data().begin());
}

std::vector<BranchSpec> specs_from_json(const nlohmann::json& j) {
  std::vector<BranchSpec> specs;
  for (const auto& s : j) specs.push_back({s.at(0).get<int>(), s.at(1).get<std::size_t>()});
  return specs;
}

}  // namespace

PatchNetwork restore_network(const TensorBundle& bundle) {
  const auto& m = bundle.meta;
  PatchNetwork net = build_network(backbone_from_json(m.at("backbone")), specs_from_json(m.at("branches")),
                                   m.at("detach").get<bool>(), 0);
  for (Parameter* p : net.parameters()) copy_into(*p, bundle.at(p->name));
  net.backbone().set_frozen_prefix(m.value("frozen_prefix", 0));
  return net;
}

PatchNetwork clone_network(const PatchNetwork& net) { return restore_network(make_checkpoint(net, {})); }

void save_checkpoint(const std::filesystem::path& path, const PatchNetwork& net, const CheckpointInfo& info) {
  write_bundle(path, "checkpoint", make_checkpoint(net, info));
}

PatchNetwork load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const TensorBundle b = read_bundle(path, "checkpoint");
  if (info) {
    info->step = b.meta.value("step", std::size_t{0});
    info->config_hash = b.meta.value("config_hash", std::string());
    info->extra = b.meta.value("extra", nlohmann::json::object());
  }
  return restore_network(b);
}

// ---------------------------------------------------------------------------

PatchNetwork train_plain(const BackboneConfig& cfg, const TrainingView& data, const TrainConfig& tc, TrainLog* log) {
  PatchNetwork net = build_network(cfg, {}, false, derive_seed(tc.seed, 0x706c61696eULL));
  train_epochs(net, data, tc, log, 0);
  return net;
}

PatchNetwork attach_branches(const PatchNetwork& init, const std::vector<BranchSpec>& specs, bool detach,
                             std::uint64_t seed) {
  const auto& cfg = init.backbone().config();
  PatchNetwork net = build_network(cfg, specs, detach, seed);
  std::map<std::string, const Tensor*> source;
  auto& src_net = const_cast<PatchNetwork&>(init);
  for (Parameter* p : src_net.parameters()) source[p->name] = &p->value;
  for (Parameter* p : net.parameters()) {
    if (p->name.rfind("branch", 0) == 0 || p->name.rfind("head.", 0) == 0) continue;
    copy_into(*p, *source.at(p->name));
  }
  // Global segment of the classifier.
  const std::size_t c2 = cfg.head_channels();
  const Tensor& w_src = init.backbone().head().weight.value;
  Tensor& w_dst = net.backbone().head().weight.value;
  const std::size_t src_cols = w_src.dim(1);
  const std::size_t dst_cols = w_dst.dim(1);
  for (std::size_t r = 0; r < cfg.num_classes; ++r) {
    for (std::size_t k = 0; k < c2; ++k) w_dst.mutable_data()[r * dst_cols + k] = w_src.data()[r * src_cols + k];
  }
  copy_into(net.backbone().head().bias, init.backbone().head().bias.value);
  return net;
}

ProgressiveSchedule ProgressiveSchedule::standard(std::size_t epochs_per_step) {
  return parse("2:2,3:4,4:6", epochs_per_step, 0.1, 0.01);
}

ProgressiveSchedule ProgressiveSchedule::parse(const std::string& text, std::size_t epochs_per_step,
                                               double first_lr, double later_lr) {
  ProgressiveSchedule s;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("schedule: entry '" + item + "' is not stage:K");
    }
    ScheduleStep st;
    try {
      std::size_t used = 0;
      st.branch.stage = std::stoi(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("");
      const std::string k = item.substr(colon + 1);
      st.branch.grid = std::stoul(k, &used);
      if (used != k.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::invalid_argument("schedule: entry '" + item + "' is not stage:K");
    }
    st.epochs = epochs_per_step;
    st.lr = s.steps.empty() ? first_lr : later_lr;
    s.steps.push_back(st);
  }
  if (s.steps.empty()) throw std::invalid_argument("schedule: no steps given");
  return s;
}

std::string ProgressiveSchedule::to_string() const {
  std::string out;
  for (const auto& st : steps) {
    if (!out.empty()) out += ',';
    out += std::to_string(st.branch.stage) + ":" + std::to_string(st.branch.grid);
  }
  return out;
}

void ProgressiveSchedule::validate(const BackboneConfig& cfg, std::optional<std::size_t> input_side) const {
  if (steps.empty()) throw std::invalid_argument("schedule: no steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0 && steps[i].branch.stage <= steps[i - 1].branch.stage) {
      throw std::invalid_argument("schedule: destruct stages must be strictly increasing (step " +
                                  std::to_string(i + 1) + " has stage " + std::to_string(steps[i].branch.stage) +
                                  " after stage " + std::to_string(steps[i - 1].branch.stage) + ")");
    }
    if (!(steps[i].lr > 0)) throw std::invalid_argument("schedule: step " + std::to_string(i + 1) + " lr must be > 0");
    validate_branches({steps[i].branch}, cfg, input_side);
  }
}

PatchNetwork run_implicit(const PatchNetwork& init, const ProgressiveSchedule& schedule, const TrainingView& data,
                          const TrainConfig& tc, TrainLog* log, const StepSink& sink, std::size_t resume_after) {
  schedule.validate(init.backbone().config(), tc.crop_side);
  if (resume_after == 0 && !init.branches().empty()) {
    throw std::invalid_argument("run_implicit: initial model must be a plain classifier");
  }
  if (resume_after > schedule.steps.size()) {
    throw std::invalid_argument("run_implicit: cannot resume after step " + std::to_string(resume_after) + " of " +
                                std::to_string(schedule.steps.size()));
  }
  PatchNetwork current = clone_network(init);
  for (std::size_t s = resume_after; s < schedule.steps.size(); ++s) {
    const auto& step = schedule.steps[s];
    std::vector<BranchSpec> specs{step.branch};
    if (s == 0 && schedule.multi_stage_first_step) {
      specs.clear();
      for (const auto& st : schedule.steps) specs.push_back(st.branch);
    }
    PatchNetwork net = attach_branches(current, specs, false, derive_seed(tc.seed, 100 + s));
    if (s > 0) net.backbone().set_frozen_prefix(step.branch.stage);
    TrainConfig t = tc;
    t.epochs = step.epochs;
    t.optim.lr_init = step.lr;
    t.seed = derive_seed(tc.seed, 200 + s);
    train_epochs(net, data, t, log, s + 1);
    if (sink) sink(s + 1, net);
    current = std::move(net);
  }
  return current;
}

PatchNetwork run_explicit(const PatchNetwork& init, const std::vector<BranchSpec>& specs, const TrainingView& data,
                          const TrainConfig& tc, TrainLog* log) {
  if (!init.branches().empty()) throw std::invalid_argument("run_explicit: initial model must be a plain classifier");
  validate_branches(specs, init.backbone().config(), tc.crop_side);
  PatchNetwork net = attach_branches(init, specs, true, derive_seed(tc.seed, 300));
  TrainConfig t = tc;
  t.seed = derive_seed(tc.seed, 301);
  train_epochs(net, data, t, log, 1);
  return net;
}

}  // namespace ppl
