#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "viewalign/geometry.hpp"

namespace viewalign {

// Row-major storage: one descriptor per row, cells ordered row-major over the
// patch grid.
using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense per-patch descriptor field with per-patch saliency.
struct DescriptorGrid {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  int patch_size = 1;
  int stride = 1;
  int image_width = 0;
  int image_height = 0;
  DescriptorMatrix descriptors;  // (rows*cols) x dim, unit rows
  Eigen::VectorXf saliency;      // rows*cols, in [0, 1]

  // Allocates storage for a grid covering an image of the given size.
  static DescriptorGrid allocate(int image_width, int image_height, int patch_size, int stride,
                                 int dim);

  static int cells_along(int extent, int patch_size, int stride);

  int cell_count() const { return rows * cols; }
  int cell_index(int row, int col) const { return row * cols + col; }
  // Patch-center pixel of a cell.
  PixelPoint cell_center(int index) const;

  // Throws InvalidFile on violated header arithmetic, norms, or saliency range.
  void validate(double norm_tol = 1e-4) const;
};

// Per-pixel metric depth; 0 and non-finite values mean "missing".
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> meters;

  static DepthMap zeros(int width, int height);

  float at(int x, int y) const { return meters[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return meters[static_cast<std::size_t>(y) * width + x]; }
  // Nearest-pixel lookup; out-of-image positions read as missing.
  double sample_nearest(const PixelPoint& px) const;
};

inline constexpr std::uint32_t kGridFormatVersion = 1;
inline constexpr std::uint32_t kDepthFormatVersion = 1;

// Little-endian "DGRD" file: 9 u32 header words (magic, version, rows, cols,
// dim, patch_size, stride, image_w, image_h), float32 descriptors, then
// float32 saliency.
void write_grid(std::ostream& out, const DescriptorGrid& grid);
DescriptorGrid read_grid(std::istream& in);
void save_grid(const std::filesystem::path& path, const DescriptorGrid& grid);
DescriptorGrid load_grid(const std::filesystem::path& path);

// Little-endian "DPTH" file: magic, version, width, height, then float32
// meters row-major.
void write_depth(std::ostream& out, const DepthMap& depth);
DepthMap read_depth(std::istream& in);
void save_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap load_depth(const std::filesystem::path& path);

}  // namespace viewalign
