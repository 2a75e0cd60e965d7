#include "viewalign/descriptor_grid.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "viewalign/errors.hpp"

namespace viewalign {

namespace {

constexpr std::array<char, 4> kGridMagic{'D', 'G', 'R', 'D'};
constexpr std::array<char, 4> kDepthMagic{'D', 'P', 'T', 'H'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xFFu), static_cast<char>((v >> 8) & 0xFFu),
                                  static_cast<char>((v >> 16) & 0xFFu),
                                  static_cast<char>((v >> 24) & 0xFFu)};
  out.write(bytes.data(), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw Error(ErrorCode::kInvalidFile, "truncated file");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  if (!in.read(got.data(), 4) || got != magic) {
    throw Error(ErrorCode::kInvalidFile,
                "bad magic, expected " + std::string(magic.begin(), magic.end()));
  }
}

int checked_int(std::uint32_t v, const char* field) {
  if (v > static_cast<std::uint32_t>(1u << 30)) {
    throw Error(ErrorCode::kInvalidFile, std::string("implausible ") + field);
  }
  return static_cast<int>(v);
}

}  // namespace

int DescriptorGrid::cells_along(int extent, int patch_size, int stride) {
  if (extent < patch_size) return 0;
  return 1 + (extent - patch_size) / stride;
}

DescriptorGrid DescriptorGrid::allocate(int image_width, int image_height, int patch_size,
                                        int stride, int dim) {
  if (patch_size < 1 || stride < 1 || dim < 1) {
    throw Error(ErrorCode::kInvalidArgument, "patch_size, stride and dim must be positive");
  }
  DescriptorGrid g;
  g.patch_size = patch_size;
  g.stride = stride;
  g.dim = dim;
  g.image_width = image_width;
  g.image_height = image_height;
  g.rows = cells_along(image_height, patch_size, stride);
  g.cols = cells_along(image_width, patch_size, stride);
  g.descriptors = DescriptorMatrix::Zero(g.cell_count(), dim);
  g.saliency = Eigen::VectorXf::Zero(g.cell_count());
  return g;
}

PixelPoint DescriptorGrid::cell_center(int index) const {
  const int row = index / cols;
  const int col = index % cols;
  const double half = patch_size / 2.0;
  return {col * static_cast<double>(stride) + half, row * static_cast<double>(stride) + half};
}

void DescriptorGrid::validate(double norm_tol) const {
  if (patch_size < 1 || stride < 1 || dim < 1) {
    throw Error(ErrorCode::kInvalidFile, "non-positive patch_size, stride or dim");
  }
  if (rows != cells_along(image_height, patch_size, stride) ||
      cols != cells_along(image_width, patch_size, stride)) {
    throw Error(ErrorCode::kInvalidFile, "grid dimensions disagree with image/patch/stride");
  }
  if (descriptors.rows() != cell_count() || descriptors.cols() != dim ||
      saliency.size() != cell_count()) {
    throw Error(ErrorCode::kInvalidFile, "descriptor storage size mismatch");
  }
  for (int i = 0; i < cell_count(); ++i) {
    const double n = descriptors.row(i).cast<double>().norm();
    if (!(std::abs(n - 1.0) <= norm_tol)) {
      throw Error(ErrorCode::kInvalidFile, "descriptor " + std::to_string(i) + " has norm " +
                                               std::to_string(n));
    }
    if (!(saliency[i] >= 0.0f && saliency[i] <= 1.0f)) {
      throw Error(ErrorCode::kInvalidFile, "saliency out of [0,1] at cell " + std::to_string(i));
    }
  }
}

DepthMap DepthMap::zeros(int width, int height) {
  DepthMap d;
  d.width = width;
  d.height = height;
  d.meters.assign(static_cast<std::size_t>(width) * height, 0.0f);
  return d;
}

double DepthMap::sample_nearest(const PixelPoint& px) const {
  const long x = std::lround(px.u);
  const long y = std::lround(px.v);
  if (x < 0 || y < 0 || x >= width || y >= height) return 0.0;
  return at(static_cast<int>(x), static_cast<int>(y));
}

void write_grid(std::ostream& out, const DescriptorGrid& grid) {
  out.write(kGridMagic.data(), 4);
  for (int v : {static_cast<int>(kGridFormatVersion), grid.rows, grid.cols, grid.dim,
                grid.patch_size, grid.stride, grid.image_width, grid.image_height}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (int i = 0; i < grid.cell_count(); ++i) {
    for (int j = 0; j < grid.dim; ++j) put_f32(out, grid.descriptors(i, j));
  }
  for (int i = 0; i < grid.cell_count(); ++i) put_f32(out, grid.saliency[i]);
  if (!out) throw Error(ErrorCode::kInvalidFile, "write failed");
}

DescriptorGrid read_grid(std::istream& in) {
  expect_magic(in, kGridMagic);
  const std::uint32_t version = get_u32(in);
  if (version != kGridFormatVersion) {
    throw Error(ErrorCode::kInvalidFile, "unsupported grid version " + std::to_string(version));
  }
  DescriptorGrid g;
  g.rows = checked_int(get_u32(in), "rows");
  g.cols = checked_int(get_u32(in), "cols");
  g.dim = checked_int(get_u32(in), "dim");
  g.patch_size = checked_int(get_u32(in), "patch_size");
  g.stride = checked_int(get_u32(in), "stride");
  g.image_width = checked_int(get_u32(in), "image_w");
  g.image_height = checked_int(get_u32(in), "image_h");
  if (static_cast<long long>(g.rows) * g.cols * g.dim > (1LL << 31)) {
    throw Error(ErrorCode::kInvalidFile, "grid too large");
  }
  g.descriptors.resize(g.cell_count(), g.dim);
  g.saliency.resize(g.cell_count());
  for (int i = 0; i < g.cell_count(); ++i) {
    for (int j = 0; j < g.dim; ++j) g.descriptors(i, j) = get_f32(in);
  }
  for (int i = 0; i < g.cell_count(); ++i) g.saliency[i] = get_f32(in);
  g.validate();
  return g;
}

void save_grid(const std::filesystem::path& path, const DescriptorGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  write_grid(out, grid);
}

DescriptorGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  return read_grid(in);
}

void write_depth(std::ostream& out, const DepthMap& depth) {
  out.write(kDepthMagic.data(), 4);
  put_u32(out, kDepthFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(depth.width));
  put_u32(out, static_cast<std::uint32_t>(depth.height));
  for (float m : depth.meters) put_f32(out, m);
  if (!out) throw Error(ErrorCode::kInvalidFile, "write failed");
}

DepthMap read_depth(std::istream& in) {
  expect_magic(in, kDepthMagic);
  const std::uint32_t version = get_u32(in);
  if (version != kDepthFormatVersion) {
    throw Error(ErrorCode::kInvalidFile, "unsupported depth version " + std::to_string(version));
  }
  DepthMap d;
  d.width = checked_int(get_u32(in), "width");
  d.height = checked_int(get_u32(in), "height");
  d.meters.resize(static_cast<std::size_t>(d.width) * d.height);
  for (float& m : d.meters) m = get_f32(in);
  return d;
}

void save_depth(const std::filesystem::path& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  write_depth(out, depth);
}

DepthMap load_depth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  return read_depth(in);
}

}  // namespace viewalign
