#include "occfeat/student.hpp"

#include <stdexcept>
#include <string>

namespace occfeat::student {

using nn::ModuleGraph;
using nn::Parameter;

void StudentConfig::validate() const {
  if (input_channels == 0 || encoder_channels == 0 || bev_channels == 0 || teacher_dim == 0 ||
      seg_classes == 0) {
    throw std::invalid_argument("StudentConfig: channel counts must be positive");
  }
  grid.validate();
  if (pull_z_cells < grid.z_cells) {
    throw std::invalid_argument("StudentConfig: pull_z_cells must be at least grid.z_cells");
  }
}

// ---------------------------------------------------------------------------

PullProjection::PullProjection(std::span<const geom::CameraModel> cameras, const GridSpec& grid,
                               std::size_t pull_z_cells)
    : h_cells_(grid.h_cells), w_cells_(grid.w_cells) {
  if (pull_z_cells == 0) throw std::invalid_argument("PullProjection: pull_z_cells must be positive");
  const GridSpec lattice = grid.with_z_cells(pull_z_cells);
  for (const auto& cam : cameras) feature_dims_.push_back({cam.feature_height, cam.feature_width});

  struct PointTap {
    std::uint32_t camera;
    geom::BilinearTaps taps;
  };
  std::vector<Tap> column;
  std::vector<PointTap> point;
  for (std::size_t i = 0; i < h_cells_; ++i) {
    for (std::size_t j = 0; j < w_cells_; ++j) {
      column.clear();
      std::size_t sampled_points = 0;
      for (std::size_t k = 0; k < pull_z_cells; ++k) {
        const geom::Vec3 p = lattice.voxel_center({k, i, j});
        point.clear();
        for (std::size_t c = 0; c < cameras.size(); ++c) {
          const auto& cam = cameras[c];
          const auto proj = geom::project(p, cam);
          if (!proj.valid) continue;
          const auto f = geom::pixel_to_feature(proj.u, proj.v, cam);
          const auto taps = geom::bilinear_taps(cam.feature_height, cam.feature_width, f.uf, f.vf);
          if (taps.in_bounds) point.push_back({static_cast<std::uint32_t>(c), taps});
        }
        if (point.empty()) continue;
        ++sampled_points;
        const double cam_weight = 1.0 / static_cast<double>(point.size());
        for (const auto& pt : point) {
          for (std::size_t t = 0; t < 4; ++t) {
            if (pt.taps.weights[t] == 0.0) continue;
            column.push_back({static_cast<std::uint32_t>(i * w_cells_ + j), pt.camera,
                              static_cast<std::uint32_t>(pt.taps.offsets[t]),
                              cam_weight * pt.taps.weights[t]});
          }
        }
      }
      // Vertical mean over the sampled points of this column.
      for (auto& tap : column) tap.weight /= static_cast<double>(sampled_points);
      taps_.insert(taps_.end(), column.begin(), column.end());
    }
  }
}

Tensor PullProjection::forward(std::span<const Tensor> feats) const {
  if (feats.size() != feature_dims_.size()) {
    throw std::invalid_argument("pull_project: expected " + std::to_string(feature_dims_.size()) +
                                " feature maps, got " + std::to_string(feats.size()));
  }
  const std::size_t channels = feats.empty() ? 0 : feats[0].dim(0);
  for (std::size_t c = 0; c < feats.size(); ++c) {
    const Shape want{channels, feature_dims_[c][0], feature_dims_[c][1]};
    if (feats[c].dims() != want) {
      throw std::invalid_argument("pull_project: camera " + std::to_string(c) + " features " +
                                  shape_string(feats[c].dims()) + ", expected " +
                                  shape_string(want));
    }
  }
  const std::size_t plane = h_cells_ * w_cells_;
  Tensor out({channels, h_cells_, w_cells_});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    double* dst = out.data() + ch * plane;
    for (const auto& t : taps_) {
      const auto& d = feature_dims_[t.camera];
      dst[t.bev] += t.weight * feats[t.camera][ch * d[0] * d[1] + t.offset];
    }
  }
  return out;
}

std::vector<Tensor> PullProjection::backward(const Tensor& grad_bev) const {
  if (grad_bev.ndim() != 3 || grad_bev.dim(1) != h_cells_ || grad_bev.dim(2) != w_cells_) {
    throw std::invalid_argument("pull_project backward: gradient dims " +
                                shape_string(grad_bev.dims()));
  }
  const std::size_t channels = grad_bev.dim(0);
  const std::size_t plane = h_cells_ * w_cells_;
  std::vector<Tensor> grads;
  for (const auto& d : feature_dims_) grads.emplace_back(Shape{channels, d[0], d[1]});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* src = grad_bev.data() + ch * plane;
    for (const auto& t : taps_) {
      const auto& d = feature_dims_[t.camera];
      grads[t.camera][ch * d[0] * d[1] + t.offset] += t.weight * src[t.bev];
    }
  }
  return grads;
}

std::size_t PullProjection::covered_cells() const {
  std::vector<bool> seen(h_cells_ * w_cells_, false);
  for (const auto& t : taps_) seen[t.bev] = true;
  std::size_t n = 0;
  for (bool s : seen) n += s;
  return n;
}

Tensor pull_project(std::span<const Tensor> feats, std::span<const geom::CameraModel> cameras,
                    const GridSpec& grid, std::size_t pull_z_cells) {
  return PullProjection(cameras, grid, pull_z_cells).forward(feats);
}

// ---------------------------------------------------------------------------

namespace {

void init_graph(ModuleGraph& g, std::uint64_t seed) {
  Rng rng(derive_seed(seed, g.name()));
  g.initialize(rng);
}

void append(std::vector<Parameter*>& out, ModuleGraph& g) {
  for (auto* p : g.parameters()) out.push_back(p);
}

}  // namespace

StudentNetwork::StudentNetwork(const StudentConfig& config, std::uint64_t seed,
                               bool with_pretrain_head)
    : config_(config) {
  config_.validate();
  const std::size_t n_in = config_.input_channels;
  const std::size_t n_i = config_.encoder_channels;
  const std::size_t n_b = config_.bev_channels;
  const std::size_t z_b = config_.grid.z_cells;

  encoder_.emplace<nn::Conv2d>(n_in, n_i, 3, 2);
  encoder_.emplace<nn::InstanceNorm2d>();
  encoder_.emplace<nn::ReLU>();
  encoder_.emplace<nn::Conv2d>(n_i, n_i, 3, 2);
  encoder_.emplace<nn::InstanceNorm2d>();
  encoder_.emplace<nn::ReLU>();
  encoder_.emplace<nn::Conv2d>(n_i, n_i, 3);

  decoder_.emplace<nn::Conv2d>(n_i, n_b, 3);
  decoder_.emplace<nn::InstanceNorm2d>();
  decoder_.emplace<nn::ReLU>();
  decoder_.emplace<nn::Conv2d>(n_b, n_b, 3);

  seg_head_.emplace<nn::Conv2d>(n_b, config_.seg_classes, 1);

  init_graph(encoder_, seed);
  init_graph(decoder_, seed);
  init_graph(seg_head_, seed);

  if (with_pretrain_head) {
    unsplat_.emplace("unsplat");
    unsplat_->emplace<nn::Conv2d>(n_b, n_b, 3);
    unsplat_->emplace<nn::InstanceNorm2d>();
    unsplat_->emplace<nn::ReLU>();
    unsplat_->emplace<nn::Conv2d>(n_b, n_b * z_b, 1);
    unsplat_->emplace<nn::ReshapeToVolume>(z_b);
    unsplat_->emplace<nn::Conv3d1x1x1>(n_b, 2 * n_b);
    unsplat_->emplace<nn::Softplus>();
    unsplat_->emplace<nn::Conv3d1x1x1>(2 * n_b, n_b);

    occ_head_.emplace("occ_head");
    occ_head_->emplace<nn::Conv3d1x1x1>(n_b, 1);
    occ_head_->emplace<nn::Sigmoid>();

    feat_head_.emplace("feat_head");
    feat_head_->emplace<nn::Conv3d1x1x1>(n_b, config_.teacher_dim);

    init_graph(*unsplat_, seed);
    init_graph(*occ_head_, seed);
    init_graph(*feat_head_, seed);
  }
}

ModuleGraph& StudentNetwork::head(std::optional<ModuleGraph>& g, const char* what) {
  if (!g) throw std::logic_error(std::string("StudentNetwork: ") + what + " was dropped");
  return *g;
}

const ModuleGraph& StudentNetwork::head(const std::optional<ModuleGraph>& g,
                                        const char* what) const {
  if (!g) throw std::logic_error(std::string("StudentNetwork: ") + what + " was dropped");
  return *g;
}

std::vector<Tensor> StudentNetwork::encode(std::span<const Tensor> images, Tape& tape) const {
  if (images.empty()) throw std::invalid_argument("encode: no images");
  const Shape& dims = images[0].dims();
  if (dims.size() != 3 || dims[0] != config_.input_channels) {
    throw std::invalid_argument("encode: image dims " + shape_string(dims) + ", expected [" +
                                std::to_string(config_.input_channels) + ",H,W]");
  }
  tape.encoder.assign(images.size(), {});
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (std::size_t c = 0; c < images.size(); ++c) {
    if (images[c].dims() != dims) {
      throw std::invalid_argument("encode: camera " + std::to_string(c) + " dims " +
                                  shape_string(images[c].dims()) + " differ from camera 0");
    }
    out.push_back(encoder_.forward(images[c], tape.encoder[c]));
  }
  return out;
}

Tensor StudentNetwork::decode_bev(const Tensor& bev_in, Tape& tape) const {
  return decoder_.forward(bev_in, tape.decoder);
}

Tensor StudentNetwork::unsplat(const Tensor& bev_features, Tape& tape) const {
  return head(unsplat_, "unsplat").forward(bev_features, tape.unsplat);
}

Tensor StudentNetwork::occ_predict(const Tensor& volume, Tape& tape) const {
  Tensor o = head(occ_head_, "occ_head").forward(volume, tape.occ);
  return o.reshaped({o.dim(1), o.dim(2), o.dim(3)});
}

Tensor StudentNetwork::feat_predict(const Tensor& volume, Tape& tape) const {
  return head(feat_head_, "feat_head").forward(volume, tape.feat);
}

Tensor StudentNetwork::seg_predict(const Tensor& bev_features, Tape& tape) const {
  return seg_head_.forward(bev_features, tape.seg);
}

Tensor StudentNetwork::forward_bev(std::span<const Tensor> images, const PullProjection& pull,
                                   Tape& tape) const {
  const auto feats = encode(images, tape);
  tape.pull = &pull;
  return decode_bev(pull.forward(feats), tape);
}

StudentNetwork::PretrainOutput StudentNetwork::forward_pretrain(std::span<const Tensor> images,
                                                                const PullProjection& pull,
                                                                Tape& tape) const {
  PretrainOutput out;
  out.bev_features = forward_bev(images, pull, tape);
  out.volume = unsplat(out.bev_features, tape);
  out.occupancy = occ_predict(out.volume, tape);
  out.features = feat_predict(out.volume, tape);
  return out;
}

void StudentNetwork::backward_pretrain(const Tensor* grad_occupancy, const Tensor* grad_features,
                                       const Tape& tape) {
  auto& unsplat_graph = head(unsplat_, "unsplat");
  const auto& g = config_.grid;
  const Shape volume_dims{config_.bev_channels, g.z_cells, g.h_cells, g.w_cells};
  Tensor grad_volume(volume_dims);
  if (grad_occupancy) {
    const Tensor g = grad_occupancy->reshaped({1, volume_dims[1], volume_dims[2], volume_dims[3]});
    grad_volume += head(occ_head_, "occ_head").backward(g, tape.occ);
  }
  if (grad_features) grad_volume += head(feat_head_, "feat_head").backward(*grad_features, tape.feat);
  backward_bev(unsplat_graph.backward(grad_volume, tape.unsplat), tape);
}

Tensor StudentNetwork::forward_seg(std::span<const Tensor> images, const PullProjection& pull,
                                   Tape& tape) const {
  return seg_predict(forward_bev(images, pull, tape), tape);
}

void StudentNetwork::backward_seg(const Tensor& grad_logits, const Tape& tape) {
  backward_bev(seg_head_.backward(grad_logits, tape.seg), tape);
}

void StudentNetwork::backward_bev(const Tensor& grad_bev_features, const Tape& tape) {
  if (!tape.pull) throw std::logic_error("StudentNetwork: backward without forward_bev");
  const Tensor grad_bev_in = decoder_.backward(grad_bev_features, tape.decoder);
  const auto grad_feats = tape.pull->backward(grad_bev_in);
  // Fixed camera order keeps the shared-weight accumulation deterministic.
  for (std::size_t c = 0; c < grad_feats.size(); ++c) encoder_.backward(grad_feats[c], tape.encoder[c]);
}

void StudentNetwork::drop_pretrain_head() {
  unsplat_.reset();
  occ_head_.reset();
  feat_head_.reset();
}

std::vector<Parameter*> StudentNetwork::parameters() {
  auto out = backbone_parameters();
  if (unsplat_) {
    append(out, *unsplat_);
    append(out, *occ_head_);
    append(out, *feat_head_);
  }
  append(out, seg_head_);
  return out;
}

std::vector<Parameter*> StudentNetwork::segmentation_parameters() {
  auto out = backbone_parameters();
  append(out, seg_head_);
  return out;
}

std::vector<Parameter*> StudentNetwork::backbone_parameters() {
  std::vector<Parameter*> out;
  append(out, encoder_);
  append(out, decoder_);
  return out;
}

std::vector<Parameter*> StudentNetwork::unsplat_parameters() {
  std::vector<Parameter*> out;
  append(out, head(unsplat_, "unsplat"));
  return out;
}

std::vector<Parameter*> StudentNetwork::occ_head_parameters() {
  std::vector<Parameter*> out;
  append(out, head(occ_head_, "occ_head"));
  return out;
}

std::vector<Parameter*> StudentNetwork::feat_head_parameters() {
  std::vector<Parameter*> out;
  append(out, head(feat_head_, "feat_head"));
  return out;
}

void StudentNetwork::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

ModuleGraph& StudentNetwork::unsplat_graph() { return head(unsplat_, "unsplat"); }

}  // namespace occfeat::student
