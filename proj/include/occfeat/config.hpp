#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace occfeat {

// Flat `key = value` run configuration. Blank lines and `#` comments are
// ignored; unknown keys are an error so typos do not silently fall back to
// defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data;
  std::size_t val_count = 16;

  // Pretraining.
  std::size_t epochs = 12;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 1e-7;
  double lambda = 0.01;
  bool arm_occ = true;
  bool arm_feat = true;

  // Finetuning.
  double fraction = 0.01;
  std::size_t finetune_steps = 300;
  double finetune_lr = 3e-4;
  std::filesystem::path ckpt;  // empty: fresh init

  // Student.
  std::size_t encoder_channels = 16;
  std::size_t bev_channels = 32;
  std::size_t pull_z_cells = 16;

  // Ablation: extra lambda values beyond the arms (0 and `lambda` reuse them).
  std::vector<double> sweep_lambdas{1e-4, 1e-3, 1e-1, 1.0};

  // Throws std::invalid_argument for an unknown key or malformed value.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string arms_string() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& config);

// "occ,feat" / "occ" / "feat" / "none"
void parse_arms(const std::string& text, bool& occ, bool& feat);
std::vector<double> parse_double_list(const std::string& text);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace occfeat
