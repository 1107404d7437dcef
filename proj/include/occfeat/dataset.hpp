#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "occfeat/grid.hpp"
#include "occfeat/synth_world.hpp"
#include "occfeat/targets.hpp"

namespace occfeat::data {

// Directory layout:
//   manifest.txt            one sample id per line
//   grid.txt                the voxel grid the labels and targets refer to
//   <id>.points.oft         [N,3] f64
//   <id>.cam<k>.feat.oft    [N_y,H_f,W_f] f32 teacher map
//   <id>.cam<k>.img.oft     [N_y,H,W] f32 student input
//   <id>.labels.oft         [H_B,W_B] f64
//   <id>.rig.txt            per camera: fx fy cx cy W H Wf Hf, then [R|t] row-major
//   <id>.occ.oft, <id>.ytgt.oft, <id>.ymask.oft   targets, written by write_targets

std::string format_rig(const std::vector<geom::CameraModel>& cameras);
std::vector<geom::CameraModel> parse_rig(const std::string& text, const std::string& origin);

void write_dataset(const std::vector<synth::SceneSample>& samples, const GridSpec& grid,
                   const std::filesystem::path& dir);

struct DatasetFiles {
  GridSpec grid;
  std::vector<synth::SceneSample> samples;
};

// Throws FormatError / std::runtime_error naming the offending file.
DatasetFiles read_dataset(const std::filesystem::path& dir);
std::vector<std::string> read_manifest(const std::filesystem::path& dir);
GridSpec read_grid(const std::filesystem::path& dir);
synth::SceneSample read_sample(const std::filesystem::path& dir, const std::string& id,
                               const GridSpec& grid);

struct SampleTargets {
  targets::OccupancyGrid occupancy;
  targets::FeatureTargetVolume features;
};

SampleTargets compute_targets(const synth::SceneSample& sample, const GridSpec& grid);
void write_targets(const std::filesystem::path& dir, const std::string& id, const SampleTargets& t);
// Throws std::runtime_error naming the missing file.
SampleTargets read_targets(const std::filesystem::path& dir, const std::string& id,
                           const GridSpec& grid);

}  // namespace occfeat::data
