#include "occfeat/grad_suite.hpp"

#include <cmath>

#include "occfeat/harness.hpp"
#include "occfeat/losses.hpp"
#include "occfeat/rng.hpp"
#include "occfeat/student.hpp"
#include "occfeat/synth_world.hpp"

namespace occfeat {

namespace {

using nn::GradCheckOptions;
using nn::ModuleGraph;
using nn::Parameter;

Tensor random_tensor(const Shape& dims, Rng& rng, double scale = 1.0) {
  Tensor t(dims);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// Small rig and grid that keep the full-network check fast.
struct TinyWorld {
  GridSpec grid;
  std::vector<geom::CameraModel> cameras;
};

TinyWorld tiny_world() {
  TinyWorld w;
  w.grid.x_range = {-6.0, 6.0};
  w.grid.y_range = {-6.0, 6.0};
  w.grid.z_range = {0.0, 3.0};
  w.grid.z_cells = 2;
  w.grid.h_cells = 6;
  w.grid.w_cells = 6;
  synth::RigConfig rig;
  rig.cameras = 3;
  rig.image_width = 16;
  rig.image_height = 12;
  rig.feature_width = 4;
  rig.feature_height = 3;
  rig.hfov = 2.2;
  w.cameras = synth::make_rig(rig);
  return w;
}

student::StudentConfig tiny_student(const GridSpec& grid) {
  student::StudentConfig c;
  c.input_channels = 3;
  c.encoder_channels = 3;
  c.bev_channels = 4;
  c.teacher_dim = 3;
  c.seg_classes = 2;
  c.grid = grid;
  c.pull_z_cells = 4;
  return c;
}

GradSuiteEntry check_graph(const std::string& name, std::uint64_t seed, ModuleGraph graph,
                           const Shape& in_dims, const GradCheckOptions& opt) {
  Rng rng(derive_seed(seed, name));
  graph.initialize(rng);
  const Tensor x = random_tensor(in_dims, rng);
  Tensor probe = graph.forward(x);
  auto loss = nn::random_projection_loss(probe.dims(), derive_seed(seed, name + "/probe"));
  return {name, seed, nn::grad_check(graph, x, loss, opt)};
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::span<const std::uint64_t> seeds,
                                               const GradCheckOptions& options) {
  std::vector<GradSuiteEntry> out;
  const TinyWorld world = tiny_world();
  for (std::uint64_t seed : seeds) {
    GradCheckOptions opt = options;
    opt.seed = seed;

    {
      ModuleGraph g("conv3x3");
      g.emplace<nn::Conv2d>(3, 4, 3);
      out.push_back(check_graph("conv2d_3x3", seed, std::move(g), {3, 6, 5}, opt));
    }
    {
      ModuleGraph g("conv3x3s2");
      g.emplace<nn::Conv2d>(3, 4, 3, 2);
      out.push_back(check_graph("conv2d_3x3_stride2", seed, std::move(g), {3, 7, 6}, opt));
    }
    {
      ModuleGraph g("conv1x1");
      g.emplace<nn::Conv2d>(3, 5, 1);
      out.push_back(check_graph("conv2d_1x1", seed, std::move(g), {3, 4, 4}, opt));
    }
    {
      ModuleGraph g("conv3d");
      g.emplace<nn::Conv3d1x1x1>(3, 4);
      out.push_back(check_graph("conv3d_1x1x1", seed, std::move(g), {3, 2, 3, 3}, opt));
    }
    {
      ModuleGraph g("norm");
      g.emplace<nn::InstanceNorm2d>();
      out.push_back(check_graph("instance_norm2d", seed, std::move(g), {3, 4, 5}, opt));
    }
    {
      ModuleGraph g("relu");
      g.emplace<nn::ReLU>();
      out.push_back(check_graph("relu", seed, std::move(g), {2, 4, 4}, opt));
    }
    {
      ModuleGraph g("softplus");
      g.emplace<nn::Softplus>();
      out.push_back(check_graph("softplus", seed, std::move(g), {2, 4, 4}, opt));
    }
    {
      ModuleGraph g("sigmoid");
      g.emplace<nn::Sigmoid>();
      out.push_back(check_graph("sigmoid", seed, std::move(g), {2, 4, 4}, opt));
    }
    {
      ModuleGraph g("reshape");
      g.emplace<nn::ReshapeToVolume>(3);
      out.push_back(check_graph("reshape_to_volume", seed, std::move(g), {6, 3, 2}, opt));
    }

    // Pull projection, with the camera feature maps as the checked variables.
    {
      Rng rng(derive_seed(seed, "pull"));
      const student::PullProjection pull(world.cameras, world.grid, 4);
      std::vector<Parameter> feats;
      for (std::size_t c = 0; c < world.cameras.size(); ++c) {
        const auto& cam = world.cameras[c];
        feats.emplace_back("feat" + std::to_string(c), Shape{2, cam.feature_height, cam.feature_width});
        feats.back().value = random_tensor(feats.back().value.dims(), rng);
      }
      const Tensor w = random_tensor({2, world.grid.h_cells, world.grid.w_cells}, rng);
      auto eval = [&] {
        std::vector<Tensor> maps;
        for (const auto& p : feats) maps.push_back(p.value);
        return dot(pull.forward(maps), w);
      };
      const auto grads = pull.backward(w);
      std::vector<Parameter*> ptrs;
      for (std::size_t c = 0; c < feats.size(); ++c) {
        feats[c].grad = grads[c];
        ptrs.push_back(&feats[c]);
      }
      out.push_back({"pull_projection", seed, nn::grad_check(ptrs, eval, opt)});
    }

    // Losses wrt their predictions.
    {
      Rng rng(derive_seed(seed, "bce"));
      Parameter pred("pred", {2, 3, 4});
      Tensor target(pred.value.dims());
      for (std::size_t v = 0; v < target.size(); ++v) {
        pred.value[v] = rng.uniform(0.05, 0.95);
        target[v] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      }
      pred.grad = loss::occupancy_loss(pred.value, target).grad;
      Parameter* ptrs[] = {&pred};
      out.push_back({"occupancy_loss", seed,
                     nn::grad_check(ptrs, [&] { return loss::occupancy_loss(pred.value, target).value; }, opt)});
    }
    {
      Rng rng(derive_seed(seed, "cos"));
      Parameter pred("pred", {4, 2, 3, 3});
      pred.value = random_tensor(pred.value.dims(), rng);
      const Tensor target = random_tensor(pred.value.dims(), rng);
      Tensor mask({2, 3, 3});
      for (double& m : mask.values()) m = rng.uniform() < 0.5 ? 1.0 : 0.0;
      mask[0] = 1.0;
      pred.grad = loss::distillation_loss(pred.value, target, mask).grad;
      Parameter* ptrs[] = {&pred};
      out.push_back({"distillation_loss", seed,
                     nn::grad_check(ptrs, [&] { return loss::distillation_loss(pred.value, target, mask).value; }, opt)});
    }

    // Full student under l_occ + lambda * l_feat, and the segmentation path.
    {
      Rng rng(derive_seed(seed, "student"));
      const auto cfg = tiny_student(world.grid);
      student::StudentNetwork net(cfg, seed);
      const student::PullProjection pull(world.cameras, world.grid, cfg.pull_z_cells);
      std::vector<Tensor> images;
      for (const auto& cam : world.cameras) {
        images.push_back(random_tensor({cfg.input_channels, cam.image_height, cam.image_width}, rng));
      }
      const Shape vol{world.grid.z_cells, world.grid.h_cells, world.grid.w_cells};
      Tensor occ(vol), mask(vol);
      for (std::size_t v = 0; v < occ.size(); ++v) {
        occ[v] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        mask[v] = occ[v] != 0.0 && rng.uniform() < 0.8 ? 1.0 : 0.0;
      }
      Shape fdims{cfg.teacher_dim};
      fdims.insert(fdims.end(), vol.begin(), vol.end());
      const Tensor ytgt = random_tensor(fdims, rng);
      const double lambda = 0.5;

      auto eval = [&] {
        student::StudentNetwork::Tape tape;
        const auto o = net.forward_pretrain(images, pull, tape);
        return loss::occupancy_loss(o.occupancy, occ).value +
               lambda * loss::distillation_loss(o.features, ytgt, mask).value;
      };
      net.zero_grad();
      student::StudentNetwork::Tape tape;
      const auto o = net.forward_pretrain(images, pull, tape);
      auto lo = loss::occupancy_loss(o.occupancy, occ);
      auto lf = loss::distillation_loss(o.features, ytgt, mask);
      lf.grad *= lambda;
      net.backward_pretrain(&lo.grad, &lf.grad, tape);
      const auto params = harness::pretrain_parameters(net, true, true);
      out.push_back({"student_pretrain_objective", seed, nn::grad_check(params, eval, opt)});

      Tensor labels({world.grid.h_cells, world.grid.w_cells});
      for (double& l : labels.values()) l = rng.uniform() < 0.3 ? 1.0 : 0.0;
      auto seg_eval = [&] {
        student::StudentNetwork::Tape t;
        return harness::cross_entropy(net.forward_seg(images, pull, t), labels, nullptr);
      };
      net.zero_grad();
      student::StudentNetwork::Tape seg_tape;
      Tensor grad;
      harness::cross_entropy(net.forward_seg(images, pull, seg_tape), labels, &grad);
      net.backward_seg(grad, seg_tape);
      out.push_back({"student_segmentation", seed,
                     nn::grad_check(net.segmentation_parameters(), seg_eval, opt)});
    }
  }
  return out;
}

}  // namespace occfeat
