#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "occfeat/geometry.hpp"
#include "occfeat/grid.hpp"
#include "occfeat/module_graph.hpp"

namespace occfeat::student {

struct StudentConfig {
  std::size_t input_channels = 16;    // N_in, channels of the per-camera input maps
  std::size_t encoder_channels = 16;  // N_I
  std::size_t bev_channels = 32;      // N_B
  std::size_t teacher_dim = 16;       // N_y
  std::size_t seg_classes = 2;        // K
  GridSpec grid = GridSpec::desk();
  std::size_t pull_z_cells = 16;      // Z_P, at least grid.z_cells

  void validate() const;
};

// Encoder output stride: two stride-2 convolutions.
inline constexpr std::size_t kEncoderStride = 4;

// Linear operator lifting per-camera feature maps to a BEV map.
//
// Lattice points are the voxel centers of a pull_z_cells-tall copy of the
// grid. Each point is bilinearly sampled in every camera where it projects
// validly and in bounds; the point value is the mean over those cameras. A
// BEV cell is the mean over its sampled points, zero if there are none.
class PullProjection {
 public:
  PullProjection(std::span<const geom::CameraModel> cameras, const GridSpec& grid,
                 std::size_t pull_z_cells);

  // feats: per camera [C, H_f, W_f] -> [C, H_B, W_B]
  Tensor forward(std::span<const Tensor> feats) const;
  // Gradient wrt each camera's feature map.
  std::vector<Tensor> backward(const Tensor& grad_bev) const;

  std::size_t camera_count() const { return feature_dims_.size(); }
  // Number of BEV cells with at least one sampled lattice point.
  std::size_t covered_cells() const;

 private:
  struct Tap {
    std::uint32_t bev;
    std::uint32_t camera;
    std::uint32_t offset;
    double weight;
  };
  std::vector<Tap> taps_;
  std::vector<std::array<std::size_t, 2>> feature_dims_;  // (H_f, W_f) per camera
  std::size_t h_cells_, w_cells_;
};

Tensor pull_project(std::span<const Tensor> feats, std::span<const geom::CameraModel> cameras,
                    const GridSpec& grid, std::size_t pull_z_cells);

class StudentNetwork {
 public:
  // Parameters are drawn from per-submodule streams of `seed`, so the seg path
  // initializes identically with or without the pretraining head.
  StudentNetwork(const StudentConfig& config, std::uint64_t seed, bool with_pretrain_head = true);

  StudentNetwork(StudentNetwork&&) = default;
  StudentNetwork& operator=(StudentNetwork&&) = default;

  struct Tape {
    std::vector<nn::ModuleGraph::Tape> encoder;
    const PullProjection* pull = nullptr;
    nn::ModuleGraph::Tape decoder, unsplat, occ, feat, seg;
  };

  // Per-camera [N_in,H,W] -> [N_I,H/4,W/4], shared weights.
  std::vector<Tensor> encode(std::span<const Tensor> images, Tape& tape) const;
  // [N_I,H_B,W_B] -> F_B [N_B,H_B,W_B]
  Tensor decode_bev(const Tensor& bev_in, Tape& tape) const;
  // F_B -> F_V [N_B,Z_B,H_B,W_B]
  Tensor unsplat(const Tensor& bev_features, Tape& tape) const;
  // F_V -> occupancy probabilities [Z_B,H_B,W_B]
  Tensor occ_predict(const Tensor& volume, Tape& tape) const;
  // F_V -> predicted teacher features [N_y,Z_B,H_B,W_B]
  Tensor feat_predict(const Tensor& volume, Tape& tape) const;
  // F_B -> logits [K,H_B,W_B]
  Tensor seg_predict(const Tensor& bev_features, Tape& tape) const;

  // Images through encoder, projection and decoder to F_B.
  Tensor forward_bev(std::span<const Tensor> images, const PullProjection& pull, Tape& tape) const;

  struct PretrainOutput {
    Tensor bev_features;  // F_B
    Tensor volume;        // F_V
    Tensor occupancy;     // O-hat
    Tensor features;      // Y-hat
  };
  PretrainOutput forward_pretrain(std::span<const Tensor> images, const PullProjection& pull,
                                  Tape& tape) const;
  // Either gradient may be null when that head does not contribute.
  void backward_pretrain(const Tensor* grad_occupancy, const Tensor* grad_features, const Tape& tape);

  Tensor forward_seg(std::span<const Tensor> images, const PullProjection& pull, Tape& tape) const;
  void backward_seg(const Tensor& grad_logits, const Tape& tape);

  // Backward from dL/dF_B through decoder, projection and encoder.
  void backward_bev(const Tensor& grad_bev_features, const Tape& tape);

  bool has_pretrain_head() const { return unsplat_.has_value(); }
  void drop_pretrain_head();

  std::vector<nn::Parameter*> parameters();
  // Encoder, BEV decoder and segmentation head.
  std::vector<nn::Parameter*> segmentation_parameters();
  // Encoder and BEV decoder.
  std::vector<nn::Parameter*> backbone_parameters();
  std::vector<nn::Parameter*> unsplat_parameters();
  std::vector<nn::Parameter*> occ_head_parameters();
  std::vector<nn::Parameter*> feat_head_parameters();
  void zero_grad();

  const StudentConfig& config() const { return config_; }
  nn::ModuleGraph& unsplat_graph();

 private:
  nn::ModuleGraph& head(std::optional<nn::ModuleGraph>& g, const char* what);
  const nn::ModuleGraph& head(const std::optional<nn::ModuleGraph>& g, const char* what) const;

  StudentConfig config_;
  nn::ModuleGraph encoder_{"encoder"};
  nn::ModuleGraph decoder_{"bev_decoder"};
  std::optional<nn::ModuleGraph> unsplat_;
  std::optional<nn::ModuleGraph> occ_head_;
  std::optional<nn::ModuleGraph> feat_head_;
  nn::ModuleGraph seg_head_{"seg_head"};
};

}  // namespace occfeat::student
