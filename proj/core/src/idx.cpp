#include "acl/idx.hpp"

#include <zlib.h>

#include <array>
#include <cstdio>
#include <memory>
#include <string>

#include "acl/error.hpp"

namespace acl::data {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

bool is_gzip(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  if (is_gzip(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
    std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);
    for (;;) {
      const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
      if (n < 0) throw IdxError(IdxError::Kind::truncated, "corrupt gzip stream in " + path.string());
      if (n == 0) break;
      out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    return out;
  }
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  std::unique_ptr<std::FILE, decltype(&std::fclose)> guard(f, &std::fclose);
  for (;;) {
    const std::size_t n = std::fread(chunk.data(), 1, chunk.size(), f);
    out.insert(out.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(n));
    if (n < chunk.size()) break;
  }
  if (std::ferror(f)) throw IdxError(IdxError::Kind::io, "read error on " + path.string());
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void expect_header(const std::vector<std::uint8_t>& b, std::size_t words,
                   std::uint32_t magic, const std::filesystem::path& path) {
  if (b.size() < 4 * words) {
    throw IdxError(IdxError::Kind::truncated, "header truncated in " + path.string());
  }
  const std::uint32_t got = be32(b, 0);
  if (got != magic) {
    throw IdxError(IdxError::Kind::bad_magic,
                   "bad magic " + std::to_string(got) + " in " + path.string() +
                       " (expected " + std::to_string(magic) + ")");
  }
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  expect_header(bytes, 4, kImagesMagic, path);
  IdxImages img;
  img.count = be32(bytes, 4);
  img.rows = be32(bytes, 8);
  img.cols = be32(bytes, 12);
  if (img.rows == 0 || img.cols == 0) {
    throw IdxError(IdxError::Kind::bad_shape, "zero image dimension in " + path.string());
  }
  const std::uint64_t payload = std::uint64_t{img.count} * img.rows * img.cols;
  if (bytes.size() - 16 < payload) {
    throw IdxError(IdxError::Kind::truncated,
                   "payload truncated in " + path.string() + ": expected " +
                       std::to_string(payload) + " bytes, found " +
                       std::to_string(bytes.size() - 16));
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  expect_header(bytes, 2, kLabelsMagic, path);
  const std::uint32_t count = be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw IdxError(IdxError::Kind::truncated, "label payload truncated in " + path.string());
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

LabelledSet load_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path) {
  const IdxImages img = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (labels.size() != img.count) {
    throw IdxError(IdxError::Kind::count_mismatch,
                   std::to_string(img.count) + " images but " + std::to_string(labels.size()) +
                       " labels");
  }
  const auto d = static_cast<Eigen::Index>(img.rows) * img.cols;
  Matrix x(static_cast<Eigen::Index>(img.count), d);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    x.data()[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return LabelledSet(std::move(x), std::vector<int>(labels.begin(), labels.end()));
}

std::filesystem::path find_idx_file(const std::filesystem::path& dir, const std::string& stem) {
  const auto plain = dir / stem;
  if (std::filesystem::exists(plain)) return plain;
  const auto gz = dir / (stem + ".gz");
  if (std::filesystem::exists(gz)) return gz;
  throw IdxError(IdxError::Kind::io, "no " + stem + "[.gz] under " + dir.string());
}

}  // namespace acl::data
