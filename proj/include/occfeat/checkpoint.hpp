#pragma once

#include <filesystem>

#include "occfeat/student.hpp"

namespace occfeat {

// Checkpoint directory:
//   manifest.txt    one line per parameter: name ndim dim0 dim1 ...
//   student.txt     architecture (channel counts, pull height)
//   grid.txt        the voxel grid
//   <name>.oft      one f64 tensor per parameter
void save_checkpoint(student::StudentNetwork& net, const std::filesystem::path& dir);

// With drop_pretrain_head the unsplat/occ/feat tensors are never read and the
// returned network has no pretraining head. Throws std::runtime_error or
// FormatError naming the offending file.
student::StudentNetwork load_checkpoint(const std::filesystem::path& dir,
                                        bool drop_pretrain_head = false);

student::StudentConfig read_student_config(const std::filesystem::path& dir);

// True for parameters of the unsplat, occupancy or feature heads.
bool is_pretrain_head_parameter(const std::string& name);

}  // namespace occfeat
