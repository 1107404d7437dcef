#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "occfeat/tensor.hpp"

namespace occfeat {

// OFT1 tensor file:
//   bytes 0-3   magic "OFT1"
//   byte  4     dtype code (1 = f32, 2 = f64)
//   byte  5     ndim
//   bytes 6-11  reserved, zero
//   ndim x u64  little-endian dims
//   raw little-endian scalars, row-major
enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_oft(const Tensor& t, Dtype dtype = Dtype::f64);
// `origin` is used in error messages.
Tensor decode_oft(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void write_oft(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_oft(const std::filesystem::path& path);

}  // namespace occfeat
