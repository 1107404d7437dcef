#include "occfeat/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace occfeat {
namespace {

constexpr std::size_t kFixedHeader = 12;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_oft(const Tensor& t, Dtype dtype) {
  if (t.ndim() > 255) throw FormatError("OFT1: too many dims");
  std::vector<std::uint8_t> out{'O', 'F', 'T', '1'};
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.ndim()));
  out.insert(out.end(), 6, 0);
  for (auto d : t.dims()) put_u64(out, d);
  const std::size_t width = dtype == Dtype::f32 ? 4 : 8;
  out.reserve(out.size() + width * t.size());
  for (double v : t.values()) {
    if (dtype == Dtype::f32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_oft(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError("OFT1 " + origin + ": " + why);
  };
  if (bytes.size() < kFixedHeader) throw fail("truncated header");
  if (std::memcmp(bytes.data(), "OFT1", 4) != 0) throw fail("bad magic");
  const auto code = bytes[4];
  if (code != 1 && code != 2) throw fail("unknown dtype code " + std::to_string(code));
  const std::size_t ndim = bytes[5];
  for (std::size_t i = 6; i < kFixedHeader; ++i) {
    if (bytes[i] != 0) throw fail("reserved bytes not zero");
  }
  if (ndim == 0) throw fail("zero dims");
  const std::size_t header = kFixedHeader + 8 * ndim;
  if (bytes.size() < header) throw fail("truncated dims");
  Shape dims(ndim);
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    dims[i] = get_u64(bytes.data() + kFixedHeader + 8 * i);
    if (dims[i] > (std::size_t{1} << 40)) throw fail("invalid dim");
    count *= dims[i];
    if (count > (std::size_t{1} << 40)) throw fail("invalid dims");
  }
  const std::size_t width = code == 1 ? 4 : 8;
  if (bytes.size() != header + width * count) {
    throw fail(bytes.size() < header + width * count ? "truncated data" : "trailing bytes");
  }
  std::vector<double> values(count);
  const std::uint8_t* p = bytes.data() + header;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    values[i] = code == 1 ? static_cast<double>(std::bit_cast<float>(get_u32(p)))
                          : std::bit_cast<double>(get_u64(p));
  }
  return Tensor(std::move(dims), std::move(values));
}

void write_oft(const std::filesystem::path& path, const Tensor& t, Dtype dtype) {
  const auto bytes = encode_oft(t, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_oft(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("OFT1 " + path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_oft(bytes, path.string());
}

}  // namespace occfeat
