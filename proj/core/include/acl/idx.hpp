#pragma once

// IDX (MNIST) file reader. Files ending in ".gz" are decompressed on the fly.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "acl/data.hpp"

namespace acl::data {

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

// Throw IdxError with kind io, bad_magic, truncated or bad_shape.
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

// Pixels scaled by 1/255 and flattened row-major; count mismatch between the
// two files raises IdxError::Kind::count_mismatch.
LabelledSet load_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path);

// Locates "<stem>" or "<stem>.gz" under dir; throws IdxError(io) if neither exists.
std::filesystem::path find_idx_file(const std::filesystem::path& dir, const std::string& stem);

}  // namespace acl::data
