#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rspnet/rng.hpp"
#include "rspnet/tensor.hpp"

namespace rspnet {

/// Grayscale image and per-pixel class ids (255 = ignore), both row-major H x W.
struct SegSample {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> image;
  std::vector<std::uint8_t> labels;

  friend bool operator==(const SegSample&, const SegSample&) = default;
};

using Dataset = std::vector<SegSample>;

/// Rectangles and discs with class-correlated intensities on a textured noise
/// background (class 0). Deterministic per seed.
Dataset synth_dataset(std::uint64_t seed, std::int64_t count, std::int64_t size, int num_classes);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, std::int64_t height, std::int64_t width, std::span<const std::uint8_t> pixels);
std::vector<std::uint8_t> read_pgm(const std::string& path, std::int64_t& height, std::int64_t& width);

/// Writes NNNN.img.pgm / NNNN.lab.pgm pairs into `dir` (created if missing).
void save_dataset(const Dataset& data, const std::string& dir);
/// Reads every NNNN.img.pgm / NNNN.lab.pgm pair in index order.
Dataset load_dataset(const std::string& dir);

/// Labels must be < num_classes or the ignore value.
void validate_labels(const Dataset& data, int num_classes);

template <typename T>
struct Batch {
  Tensor<T> images;                  // (N, 1, H, W)
  std::vector<std::uint8_t> labels;  // (N, H, W)
};

/// Stacks the samples at `indices`. When a sample is larger than crop_h x
/// crop_w a crop is taken at an offset drawn from `rng`, or centered when
/// `rng` is null. All selected samples must share the resulting size.
template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, std::int64_t crop_h,
                    std::int64_t crop_w, Rng* rng = nullptr);

/// Pixel intensity as fed to the network.
inline double normalize_intensity(std::uint8_t v) { return (static_cast<double>(v) - 127.5) / 64.0; }

}  // namespace rspnet
