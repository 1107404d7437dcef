#include "occfeat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

#include "occfeat/adam.hpp"
#include "occfeat/rng.hpp"

namespace occfeat::harness {

using student::StudentNetwork;

std::size_t Dataset::input_channels() const {
  if (samples.empty() || samples[0].images.empty()) throw std::logic_error("Dataset: no images");
  return samples[0].images[0].dim(0);
}

Dataset make_dataset(std::vector<synth::SceneSample> scenes, const GridSpec& grid,
                     std::size_t val_count, bool with_targets, std::size_t pull_z_cells) {
  if (scenes.size() <= val_count) {
    throw std::invalid_argument("dataset has " + std::to_string(scenes.size()) +
                                " samples, not enough for " + std::to_string(val_count) +
                                " validation samples plus training");
  }
  Dataset ds;
  ds.grid = grid;
  ds.val_count = val_count;
  std::vector<std::pair<std::vector<geom::CameraModel>, std::shared_ptr<const student::PullProjection>>>
      pulls;
  for (auto& sc : scenes) {
    Sample s;
    s.id = sc.id;
    if (with_targets) s.targets = data::compute_targets(sc, grid);
    s.images = std::move(sc.images);
    s.cameras = std::move(sc.cameras);
    s.labels = std::move(sc.bev_labels);
    for (const auto& [cams, pull] : pulls) {
      if (cams == s.cameras) s.pull = pull;
    }
    if (!s.pull) {
      s.pull = std::make_shared<const student::PullProjection>(s.cameras, grid, pull_z_cells);
      pulls.emplace_back(s.cameras, s.pull);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& dir, std::size_t val_count, bool require_targets,
                     std::size_t pull_z_cells) {
  auto files = data::read_dataset(dir);
  std::vector<std::optional<data::SampleTargets>> targets;
  for (const auto& s : files.samples) {
    const bool present = std::filesystem::exists(dir / (s.id + ".occ.oft"));
    if (present || require_targets) {
      targets.push_back(data::read_targets(dir, s.id, files.grid));
    } else {
      targets.emplace_back();
    }
  }
  Dataset ds = make_dataset(std::move(files.samples), files.grid, val_count, false, pull_z_cells);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) ds.samples[i].targets = std::move(targets[i]);
  return ds;
}

student::StudentConfig student_config(const RunConfig& cfg, const Dataset& ds) {
  student::StudentConfig c;
  c.input_channels = ds.input_channels();
  c.encoder_channels = cfg.encoder_channels;
  c.bev_channels = cfg.bev_channels;
  c.teacher_dim = ds.input_channels();
  for (const auto& s : ds.samples) {
    if (s.targets) {
      c.teacher_dim = s.targets->features.features.dim(0);
      break;
    }
  }
  c.seg_classes = 2;
  c.grid = ds.grid;
  c.pull_z_cells = cfg.pull_z_cells;
  c.validate();
  return c;
}

std::vector<std::size_t> label_subset(std::size_t n_train, double fraction, std::uint64_t seed) {
  if (n_train == 0) throw std::invalid_argument("label_subset: no training samples");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("label_subset: fraction must be in (0, 1]");
  }
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_train))));
  std::vector<std::size_t> perm(n_train);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "labels"));
  for (std::size_t i = n_train; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  perm.resize(std::min(count, n_train));
  return perm;
}

double iou(const Tensor& pred, const Tensor& truth, int cls) {
  require_same_dims(pred, truth, "iou");
  std::size_t inter = 0, uni = 0;
  const double c = cls;
  for (std::size_t v = 0; v < pred.size(); ++v) {
    const bool p = pred[v] == c, t = truth[v] == c;
    inter += p && t;
    uni += p || t;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string format_loss_csv(const std::vector<StepLog>& log) {
  std::string out = "step,l_occ,l_feat,total,n_valid\n";
  char buf[160];
  for (const auto& s : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%zu\n", s.step, s.l_occ, s.l_feat,
                  s.total, s.n_valid);
    out += buf;
  }
  return out;
}

double objective(bool arm_occ, bool arm_feat, double lambda, double l_occ, double l_feat) {
  if (arm_occ && arm_feat) return loss::total_loss(l_occ, l_feat, lambda).total;
  if (arm_occ) return l_occ;
  if (arm_feat) return l_feat;
  return 0.0;
}

StepLog pretrain_batch(StudentNetwork& net, const Dataset& ds, std::span<const std::size_t> batch,
                       bool arm_occ, bool arm_feat, double lambda, bool backward) {
  StepLog log;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  // Weight of each loss gradient in the objective.
  const double w_occ = arm_occ ? 1.0 : 0.0;
  const double w_feat = arm_feat ? (arm_occ ? lambda : 1.0) : 0.0;
  for (std::size_t idx : batch) {
    const Sample& s = ds.samples.at(idx);
    if (!s.targets) throw std::invalid_argument("pretrain: sample " + s.id + " has no targets");
    StudentNetwork::Tape tape;
    const auto out = net.forward_pretrain(s.images, *s.pull, tape);
    auto occ = loss::occupancy_loss(out.occupancy, s.targets->occupancy.data);
    auto feat = loss::distillation_loss(out.features, s.targets->features.features,
                                        s.targets->features.valid_mask);
    log.l_occ += occ.value * inv_b;
    log.l_feat += feat.value * inv_b;
    log.n_valid += feat.count;
    if (backward && (w_occ != 0.0 || w_feat != 0.0)) {
      occ.grad *= w_occ * inv_b;
      feat.grad *= w_feat * inv_b;
      net.backward_pretrain(w_occ != 0.0 ? &occ.grad : nullptr,
                            w_feat != 0.0 ? &feat.grad : nullptr, tape);
    }
  }
  log.total = objective(arm_occ, arm_feat, lambda, log.l_occ, log.l_feat);
  return log;
}

std::vector<nn::Parameter*> pretrain_parameters(StudentNetwork& net, bool arm_occ, bool arm_feat) {
  auto params = net.backbone_parameters();
  for (auto* p : net.unsplat_parameters()) params.push_back(p);
  if (arm_occ) {
    for (auto* p : net.occ_head_parameters()) params.push_back(p);
  }
  if (arm_feat) {
    for (auto* p : net.feat_head_parameters()) params.push_back(p);
  }
  return params;
}

namespace {

// Epoch-wise shuffled cycling over a fixed index set.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> pool, std::size_t batch, std::uint64_t seed)
      : pool_(std::move(pool)), batch_(std::min(batch, pool_.size())), rng_(seed) {
    shuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == pool_.size()) {
        shuffle();
        if (!out.empty()) break;
      }
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

  // Batches per pass over the pool, the last one possibly short.
  std::size_t batches_per_epoch() const { return (pool_.size() + batch_ - 1) / batch_; }

 private:
  void shuffle() {
    for (std::size_t i = pool_.size(); i > 1; --i) std::swap(pool_[i - 1], pool_[rng_.index(i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> pool_;
  std::size_t batch_;
  Rng rng_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace

PretrainResult pretrain(const RunConfig& cfg, const Dataset& ds) {
  cfg.validate();
  if (!cfg.arm_occ && !cfg.arm_feat) throw std::invalid_argument("pretrain: no loss arm enabled");
  PretrainResult result{StudentNetwork(student_config(cfg, ds), cfg.seed, true), {}};
  auto& net = result.network;
  nn::Adam adam(pretrain_parameters(net, cfg.arm_occ, cfg.arm_feat),
                {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  BatchStream stream(range(0, ds.train_count()), cfg.batch_size,
                     derive_seed(cfg.seed, "pretrain/order"));
  const std::size_t steps = cfg.epochs * stream.batches_per_epoch();
  for (std::size_t step = 0; step < steps; ++step) {
    const auto batch = stream.next();
    adam.zero_grad();
    StepLog log = pretrain_batch(net, ds, batch, cfg.arm_occ, cfg.arm_feat, cfg.lambda);
    log.step = step;
    adam.step();
    result.log.push_back(log);
  }
  return result;
}

std::string format_metrics(const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "vehicle_iou = %.17g\nbackground_iou = %.17g\nmean_iou = %.17g\n"
                "labeled_samples = %zu\neval_samples = %zu\n",
                m.vehicle_iou, m.background_iou, m.mean_iou, m.labeled_samples, m.eval_samples);
  std::string out = buf;
  if (!m.losses.empty()) {
    std::snprintf(buf, sizeof buf, "final_loss = %.17g\n", m.losses.back());
    out += buf;
  }
  return out;
}

double cross_entropy(const Tensor& logits, const Tensor& labels, Tensor* grad) {
  if (logits.ndim() != 3 || labels.dims() != Shape{logits.dim(1), logits.dim(2)}) {
    throw std::invalid_argument("cross_entropy: logits " + shape_string(logits.dims()) +
                                " vs labels " + shape_string(labels.dims()));
  }
  const std::size_t k = logits.dim(0);
  const std::size_t cells = labels.size();
  const double inv_n = 1.0 / static_cast<double>(cells);
  if (grad) *grad = Tensor(logits.dims());
  double sum = 0.0;
  std::vector<double> p(k);
  for (std::size_t v = 0; v < cells; ++v) {
    const auto y = static_cast<std::size_t>(labels[v]);
    if (y >= k) throw std::invalid_argument("cross_entropy: label out of range");
    double mx = logits[v];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits[c * cells + v]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += p[c] = std::exp(logits[c * cells + v] - mx);
    sum -= logits[y * cells + v] - mx - std::log(z);
    if (grad) {
      for (std::size_t c = 0; c < k; ++c) {
        (*grad)[c * cells + v] = inv_n * (p[c] / z - (c == y ? 1.0 : 0.0));
      }
    }
  }
  return sum * inv_n;
}

Tensor predict_labels(StudentNetwork& net, const Sample& s) {
  StudentNetwork::Tape tape;
  const Tensor logits = net.forward_seg(s.images, *s.pull, tape);
  const std::size_t k = logits.dim(0);
  const std::size_t cells = logits.dim(1) * logits.dim(2);
  Tensor out({logits.dim(1), logits.dim(2)});
  for (std::size_t v = 0; v < cells; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * cells + v] > logits[best * cells + v]) best = c;
    }
    out[v] = static_cast<double>(best);
  }
  return out;
}

MetricsReport evaluate(StudentNetwork& net, const Dataset& ds, std::span<const std::size_t> indices) {
  // Pool cells across samples so sparse scenes do not dominate.
  std::size_t inter[2] = {0, 0}, uni[2] = {0, 0};
  for (std::size_t idx : indices) {
    const Sample& s = ds.samples.at(idx);
    const Tensor pred = predict_labels(net, s);
    for (std::size_t v = 0; v < pred.size(); ++v) {
      for (int c = 0; c < 2; ++c) {
        const bool p = pred[v] == c, t = s.labels[v] == c;
        inter[c] += p && t;
        uni[c] += p || t;
      }
    }
  }
  MetricsReport m;
  auto ratio = [](std::size_t i, std::size_t u) {
    return u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
  };
  m.background_iou = ratio(inter[0], uni[0]);
  m.vehicle_iou = ratio(inter[1], uni[1]);
  m.mean_iou = 0.5 * (m.background_iou + m.vehicle_iou);
  m.eval_samples = indices.size();
  return m;
}

FinetuneResult finetune(const RunConfig& cfg, const Dataset& ds,
                        std::optional<StudentNetwork> init) {
  cfg.validate();
  const auto expected = student_config(cfg, ds);
  if (!init) {
    init.emplace(expected, cfg.seed, false);
  } else {
    const auto& c = init->config();
    if (c.input_channels != expected.input_channels || !(c.grid == expected.grid) ||
        c.seg_classes != expected.seg_classes) {
      throw std::invalid_argument("finetune: checkpoint architecture does not match the dataset");
    }
  }
  FinetuneResult result{std::move(*init), {}};
  auto& net = result.network;

  const auto subset = label_subset(ds.train_count(), cfg.fraction, cfg.seed);
  nn::Adam adam(net.segmentation_parameters(), {.lr = cfg.finetune_lr});
  BatchStream stream(subset, cfg.batch_size, derive_seed(cfg.seed, "finetune/order"));
  for (std::size_t step = 0; step < cfg.finetune_steps; ++step) {
    const auto batch = stream.next();
    adam.zero_grad();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t idx : batch) {
      const Sample& s = ds.samples[idx];
      StudentNetwork::Tape tape;
      const Tensor logits = net.forward_seg(s.images, *s.pull, tape);
      Tensor grad;
      loss += inv_b * cross_entropy(logits, s.labels, &grad);
      grad *= inv_b;
      net.backward_seg(grad, tape);
    }
    adam.step();
    result.metrics.losses.push_back(loss);
  }
  const auto val = range(ds.train_count(), ds.samples.size());
  auto losses = std::move(result.metrics.losses);
  result.metrics = evaluate(net, ds, val);
  result.metrics.losses = std::move(losses);
  result.metrics.labeled_samples = subset.size();
  return result;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> AblationTable::per_seed(const std::string& arm, double lambda) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.arm == arm && r.lambda == lambda) out.push_back(r.vehicle_iou);
  }
  return out;
}

double AblationTable::median(const std::string& arm, double lambda) const {
  return harness::median(per_seed(arm, lambda));
}

AblationTable ablate(const RunConfig& cfg, const Dataset& ds, std::span<const std::uint64_t> seeds,
                     const Progress& progress) {
  if (seeds.size() < 3) throw std::invalid_argument("ablate: at least 3 seeds are required");
  AblationTable table;
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  for (std::uint64_t seed : seeds) {
    RunConfig base = cfg;
    base.seed = seed;
    auto run = [&](const std::string& arm, bool occ, bool feat, double lambda) {
      RunConfig c = base;
      c.arm_occ = occ;
      c.arm_feat = feat;
      c.lambda = lambda;
      std::optional<StudentNetwork> init;
      if (occ || feat) init.emplace(pretrain(c, ds).network);
      const double v = finetune(c, ds, std::move(init)).metrics.vehicle_iou;
      char buf[128];
      std::snprintf(buf, sizeof buf, "seed %llu %s lambda=%g vehicle_iou=%.4f",
                    static_cast<unsigned long long>(seed), arm.c_str(), lambda, v);
      say(buf);
      return v;
    };
    const double none = run("none", false, false, 0.0);
    const double occ = run("occ", true, false, 0.0);
    const double feat = run("feat", false, true, cfg.lambda);
    const double both = run("both", true, true, cfg.lambda);
    table.rows.push_back({"none", 0.0, seed, none});
    table.rows.push_back({"occ", 0.0, seed, occ});
    table.rows.push_back({"feat", cfg.lambda, seed, feat});
    table.rows.push_back({"both", cfg.lambda, seed, both});
    table.rows.push_back({"lambda", 0.0, seed, occ});
    table.rows.push_back({"lambda", cfg.lambda, seed, both});
    for (double l : cfg.sweep_lambdas) {
      if (l == 0.0 || l == cfg.lambda) continue;
      table.rows.push_back({"lambda", l, seed, run("lambda", true, true, l)});
    }
  }
  return table;
}

std::string format_ablation_csv(const AblationTable& table) {
  std::string out = "arm,lambda,seed,vehicle_iou\n";
  char buf[160];
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%llu,%.17g\n", r.arm.c_str(), r.lambda,
                  static_cast<unsigned long long>(r.seed), r.vehicle_iou);
    out += buf;
    if (std::find(keys.begin(), keys.end(), std::pair{r.arm, r.lambda}) == keys.end()) {
      keys.emplace_back(r.arm, r.lambda);
    }
  }
  for (const auto& [arm, lambda] : keys) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,median,%.17g\n", arm.c_str(), lambda,
                  table.median(arm, lambda));
    out += buf;
  }
  return out;
}

}  // namespace occfeat::harness
