#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "occfeat/config.hpp"
#include "occfeat/dataset.hpp"
#include "occfeat/losses.hpp"
#include "occfeat/student.hpp"

namespace occfeat::harness {

// One scene as the training loops consume it.
struct Sample {
  std::string id;
  std::vector<Tensor> images;               // per camera [N_in,H,W]
  std::vector<geom::CameraModel> cameras;
  Tensor labels;                            // [H_B,W_B], 1 = vehicle
  std::optional<data::SampleTargets> targets;
  std::shared_ptr<const student::PullProjection> pull;
};

struct Dataset {
  GridSpec grid;
  std::vector<Sample> samples;
  std::size_t val_count = 0;  // the last val_count samples form the validation split

  std::size_t train_count() const { return samples.size() - val_count; }
  std::size_t input_channels() const;
};

// Pull projections are shared between samples with identical rigs.
Dataset make_dataset(std::vector<synth::SceneSample> scenes, const GridSpec& grid,
                     std::size_t val_count, bool with_targets, std::size_t pull_z_cells);
// Targets are read from disk when present; with require_targets a missing file
// is an error naming it.
Dataset load_dataset(const std::filesystem::path& dir, std::size_t val_count, bool require_targets,
                     std::size_t pull_z_cells);

student::StudentConfig student_config(const RunConfig& cfg, const Dataset& ds);

// max(1, round(fraction * n)) training indices from a seed-fixed permutation,
// so subsets for growing fractions are nested.
std::vector<std::size_t> label_subset(std::size_t n_train, double fraction, std::uint64_t seed);

// |pred ∩ true| / |pred ∪ true| for cells equal to `cls`; 1 when both are empty.
double iou(const Tensor& pred_labels, const Tensor& true_labels, int cls);

struct StepLog {
  std::size_t step = 0;
  double l_occ = 0.0;
  double l_feat = 0.0;
  double total = 0.0;  // the optimized objective
  std::size_t n_valid = 0;
};

std::string format_loss_csv(const std::vector<StepLog>& log);

// Objective for the enabled arms: occ+feat -> l_occ + lambda*l_feat,
// occ -> l_occ, feat -> l_feat.
double objective(bool arm_occ, bool arm_feat, double lambda, double l_occ, double l_feat);

// One forward/backward over `batch`, gradients averaged over the batch and
// accumulated into `net`. Returns the batch-mean losses.
StepLog pretrain_batch(student::StudentNetwork& net, const Dataset& ds,
                       std::span<const std::size_t> batch, bool arm_occ, bool arm_feat,
                       double lambda, bool backward = true);

// Parameters touched by the enabled arms.
std::vector<nn::Parameter*> pretrain_parameters(student::StudentNetwork& net, bool arm_occ,
                                                bool arm_feat);

struct PretrainResult {
  student::StudentNetwork network;
  std::vector<StepLog> log;
};

// Adam on the training split for cfg.epochs epochs with a seed-fixed shuffle.
// Throws std::invalid_argument when no arm is enabled or targets are missing.
PretrainResult pretrain(const RunConfig& cfg, const Dataset& ds);

struct MetricsReport {
  double vehicle_iou = 0.0;
  double background_iou = 0.0;
  double mean_iou = 0.0;
  std::vector<double> losses;  // finetuning loss per step
  std::size_t labeled_samples = 0;
  std::size_t eval_samples = 0;
};

std::string format_metrics(const MetricsReport& m);

// Mean cross-entropy over BEV cells and its gradient wrt the logits.
double cross_entropy(const Tensor& logits, const Tensor& labels, Tensor* grad);

// Predicted labels [H_B,W_B] by argmax over classes.
Tensor predict_labels(student::StudentNetwork& net, const Sample& s);

// Pooled IoU over the given sample indices.
MetricsReport evaluate(student::StudentNetwork& net, const Dataset& ds,
                       std::span<const std::size_t> indices);

struct FinetuneResult {
  student::StudentNetwork network;
  MetricsReport metrics;
};

// Trains encoder, BEV decoder and seg head with Adam at constant lr on the
// label subset, then evaluates on the validation split. `init` is consumed;
// nullopt means a fresh network from cfg.seed. A pretraining head, if still
// attached, is carried along untouched.
FinetuneResult finetune(const RunConfig& cfg, const Dataset& ds,
                        std::optional<student::StudentNetwork> init);

struct AblationRow {
  std::string arm;  // none, occ, feat, both, lambda
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double vehicle_iou = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  // Median vehicle IoU of rows matching (arm, lambda).
  double median(const std::string& arm, double lambda) const;
  std::vector<double> per_seed(const std::string& arm, double lambda) const;
};

using Progress = std::function<void(const std::string&)>;

// Arms none/occ/feat/both per seed, then the lambda sweep over
// {0, cfg.lambda} ∪ cfg.sweep_lambdas with 0 and cfg.lambda reusing the occ
// and both runs. Each arm pretrains and finetunes with the run seed.
AblationTable ablate(const RunConfig& cfg, const Dataset& ds, std::span<const std::uint64_t> seeds,
                     const Progress& progress = {});

std::string format_ablation_csv(const AblationTable& table);

double median(std::vector<double> values);

}  // namespace occfeat::harness
