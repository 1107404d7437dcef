// occfeat: dataset generation, pretraining, finetuning, ablation and
// visualization from one binary. Run `occfeat <command> --help` for flags.

#include <chrono>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "occfeat/checkpoint.hpp"
#include "occfeat/config.hpp"
#include "occfeat/dataset.hpp"
#include "occfeat/grad_suite.hpp"
#include "occfeat/harness.hpp"
#include "occfeat/synth_world.hpp"
#include "occfeat/viz.hpp"

namespace fs = std::filesystem;
using namespace occfeat;

namespace {

struct Overrides {
  std::optional<std::string> config;
  // deque keeps the bound references stable as flags are added.
  std::deque<std::pair<std::string, std::optional<std::string>>> flags;

  void add(CLI::App* app, const std::string& key, const std::string& help) {
    flags.emplace_back(key, std::nullopt);
    app->add_option("--" + key, flags.back().second, help);
  }

  RunConfig resolve() const {
    RunConfig cfg = config ? load_run_config(*config) : RunConfig{};
    for (const auto& [key, value] : flags) {
      if (value) cfg.set(key, *value);
    }
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::size_t find_sample(const harness::Dataset& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].id == id) return i;
  }
  throw std::runtime_error("scene '" + id + "' is not in the dataset manifest");
}

// Predicted teacher features and the occupancy mask of one scene.
std::pair<Tensor, Tensor> scene_features(student::StudentNetwork& net, const harness::Sample& s) {
  if (!s.targets) throw std::runtime_error("scene " + s.id + " has no targets (run `targets` first)");
  student::StudentNetwork::Tape tape;
  auto out = net.forward_pretrain(s.images, *s.pull, tape);
  return {std::move(out.features), s.targets->occupancy.data};
}

VoxelIndex parse_query(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stoul(item));
  if (v.size() != 3) throw std::invalid_argument("--query expects k,i,j");
  return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occfeat: occupancy and feature pretraining for BEV students"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic multi-camera dataset");
  std::uint64_t gen_seed = 0;
  std::size_t gen_n = 80;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--n", gen_n, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();

  // targets
  auto* tgt = app.add_subcommand("targets", "Compute occupancy and feature targets");
  std::string tgt_data;
  tgt->add_option("--data", tgt_data, "Dataset directory")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain the student with occupancy/feature losses");
  Overrides pre_o;
  std::string pre_out;
  pre->add_option("--config", pre_o.config, "Config file");
  pre->add_option("--out", pre_out, "Checkpoint directory")->required();
  for (const char* k : {"seed", "data", "arms", "lambda", "epochs", "lr", "batch_size"}) {
    pre_o.add(pre, k, std::string("Override config key ") + k);
  }

  // finetune
  auto* ft = app.add_subcommand("finetune", "Finetune BEV vehicle segmentation and report IoU");
  Overrides ft_o;
  std::string ft_out;
  bool ft_drop = false;
  ft->add_option("--config", ft_o.config, "Config file");
  ft->add_option("--out", ft_out, "Directory for metrics.txt, loss.csv and the finetuned model");
  ft->add_flag("--drop-pretrain-head", ft_drop, "Do not load the pretraining head tensors");
  for (const char* k : {"seed", "data", "ckpt", "fraction", "finetune_steps", "finetune_lr"}) {
    ft_o.add(ft, k, std::string("Override config key ") + k);
  }

  // ablate
  auto* abl = app.add_subcommand("ablate", "Loss-arm ablation and lambda sweep over seeds");
  Overrides abl_o;
  std::string abl_seeds = "0,1,2", abl_out;
  abl->add_option("--config", abl_o.config, "Config file");
  abl->add_option("--seeds", abl_seeds, "Comma-separated seeds (at least 3)");
  abl->add_option("--out", abl_out, "CSV table")->required();
  for (const char* k : {"data", "lambda", "sweep_lambdas", "epochs", "fraction"}) {
    abl_o.add(abl, k, std::string("Override config key ") + k);
  }

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::size_t gc_seeds = 20;
  double gc_tol = 1e-4;
  gc->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--tol", gc_tol, "Maximum relative error");

  // viz-pca
  auto* vp = app.add_subcommand("viz-pca", "PCA-colored top view of predicted features");
  Overrides vp_o;
  std::string vp_ckpt, vp_scene, vp_basis, vp_out;
  vp->add_option("--config", vp_o.config, "Config file");
  vp_o.add(vp, "data", "Dataset directory");
  vp->add_option("--ckpt", vp_ckpt, "Pretrained checkpoint")->required();
  vp->add_option("--scene", vp_scene, "Scene id")->required();
  vp->add_option("--basis-from", vp_basis, "Fit the PCA basis on this scene instead");
  vp->add_option("--out", vp_out, "Output PPM")->required();

  // viz-corr
  auto* vc = app.add_subcommand("viz-corr", "Feature correlation map for a query voxel");
  Overrides vc_o;
  std::string vc_ckpt, vc_scene, vc_query, vc_out;
  vc->add_option("--config", vc_o.config, "Config file");
  vc_o.add(vc, "data", "Dataset directory");
  vc->add_option("--ckpt", vc_ckpt, "Pretrained checkpoint")->required();
  vc->add_option("--scene", vc_scene, "Scene id")->required();
  vc->add_option("--query", vc_query, "Query voxel k,i,j")->required();
  vc->add_option("--out", vc_out, "Output PPM")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Stopwatch clock;
    if (gen->parsed()) {
      synth::WorldConfig world;
      std::vector<synth::SceneSample> samples;
      for (std::size_t i = 0; i < gen_n; ++i) samples.push_back(synth::generate_sample(gen_seed, i, world));
      data::write_dataset(samples, world.grid, gen_out);
      std::printf("wrote %zu scenes to %s\n", gen_n, gen_out.c_str());
    } else if (tgt->parsed()) {
      const auto grid = data::read_grid(tgt_data);
      std::size_t n = 0;
      for (const auto& id : data::read_manifest(tgt_data)) {
        const auto s = data::read_sample(tgt_data, id, grid);
        data::write_targets(tgt_data, id, data::compute_targets(s, grid));
        ++n;
      }
      std::printf("wrote targets for %zu scenes\n", n);
    } else if (pre->parsed()) {
      const RunConfig cfg = pre_o.resolve();
      const auto ds = harness::load_dataset(cfg.data, cfg.val_count, true, cfg.pull_z_cells);
      auto result = harness::pretrain(cfg, ds);
      save_checkpoint(result.network, pre_out);
      write_text(fs::path(pre_out) / "loss.csv", harness::format_loss_csv(result.log));
      write_text(fs::path(pre_out) / "config.txt", format_run_config(cfg));
      const auto& first = result.log.front();
      const auto& last = result.log.back();
      std::printf("pretrain arms=%s steps=%zu total %.6f -> %.6f\n", cfg.arms_string().c_str(),
                  result.log.size(), first.total, last.total);
    } else if (ft->parsed()) {
      const RunConfig cfg = ft_o.resolve();
      const auto ds = harness::load_dataset(cfg.data, cfg.val_count, false, cfg.pull_z_cells);
      std::optional<student::StudentNetwork> init;
      if (!cfg.ckpt.empty()) init.emplace(load_checkpoint(cfg.ckpt, ft_drop));
      auto result = harness::finetune(cfg, ds, std::move(init));
      const auto& m = result.metrics;
      if (!ft_out.empty()) {
        const fs::path out(ft_out);
        write_text(out / "metrics.txt", harness::format_metrics(m));
        std::string csv = "step,loss\n";
        char buf[64];
        for (std::size_t i = 0; i < m.losses.size(); ++i) {
          std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, m.losses[i]);
          csv += buf;
        }
        write_text(out / "loss.csv", csv);
        if (result.network.has_pretrain_head()) result.network.drop_pretrain_head();
        save_checkpoint(result.network, out / "model");
      }
      std::printf("finetune labeled=%zu vehicle_iou=%.4f background_iou=%.4f mean_iou=%.4f\n",
                  m.labeled_samples, m.vehicle_iou, m.background_iou, m.mean_iou);
    } else if (abl->parsed()) {
      const RunConfig cfg = abl_o.resolve();
      const auto seeds = parse_seed_list(abl_seeds);
      const auto ds = harness::load_dataset(cfg.data, cfg.val_count, true, cfg.pull_z_cells);
      const auto table = harness::ablate(cfg, ds, seeds, [](const std::string& msg) {
        std::printf("%s\n", msg.c_str());
        std::fflush(stdout);
      });
      write_text(abl_out, harness::format_ablation_csv(table));
      for (const char* arm : {"none", "occ", "feat", "both"}) {
        const double l = std::string(arm) == "feat" || std::string(arm) == "both" ? cfg.lambda : 0.0;
        std::printf("median %-5s %.4f\n", arm, table.median(arm, l));
      }
    } else if (gc->parsed()) {
      std::vector<std::uint64_t> seeds(gc_seeds);
      for (std::size_t i = 0; i < gc_seeds; ++i) seeds[i] = i;
      nn::GradCheckOptions opt;
      opt.tol = gc_tol;
      bool ok = true;
      double worst = 0.0;
      for (const auto& e : run_gradient_suite(seeds, opt)) {
        ok = ok && e.report.passed;
        worst = std::max(worst, e.report.max_rel_error);
        if (!e.report.passed) {
          std::printf("FAIL %s seed=%llu max_rel=%.3e at %s\n", e.name.c_str(),
                      static_cast<unsigned long long>(e.seed), e.report.max_rel_error,
                      e.report.worst.c_str());
        }
      }
      std::printf("gradcheck %s: %zu seeds, max relative error %.3e\n", ok ? "passed" : "FAILED",
                  gc_seeds, worst);
      if (!ok) return 1;
    } else if (vp->parsed()) {
      const RunConfig cfg = vp_o.resolve();
      auto net = load_checkpoint(vp_ckpt);
      const auto ds = harness::load_dataset(cfg.data, 0, false, net.config().pull_z_cells);
      const auto [volume, mask] = scene_features(net, ds.samples[find_sample(ds, vp_scene)]);
      Tensor fit_rows;
      if (vp_basis.empty()) {
        fit_rows = viz::masked_features(volume, mask);
      } else {
        const auto [bv, bm] = scene_features(net, ds.samples[find_sample(ds, vp_basis)]);
        fit_rows = viz::masked_features(bv, bm);
      }
      if (fit_rows.empty()) throw std::runtime_error("no occupied voxels to fit the PCA basis");
      const auto basis = viz::fit_pca(fit_rows);
      viz::write_image(viz::render_pca_topview(volume, mask, basis), vp_out);
      std::printf("wrote %s\n", vp_out.c_str());
    } else if (vc->parsed()) {
      const RunConfig cfg = vc_o.resolve();
      auto net = load_checkpoint(vc_ckpt);
      const auto ds = harness::load_dataset(cfg.data, 0, false, net.config().pull_z_cells);
      const auto [volume, mask] = scene_features(net, ds.samples[find_sample(ds, vc_scene)]);
      viz::write_image(viz::render_correlation(volume, parse_query(vc_query), mask), vc_out);
      std::printf("wrote %s\n", vc_out.c_str());
    }
    std::printf("elapsed %.1f s\n", clock.seconds());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
