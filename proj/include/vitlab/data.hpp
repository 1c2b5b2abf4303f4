#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vitlab/tensor.hpp"

namespace vitlab {

// RGB image, f64 channels in [0,1], row-major (row, col, channel).
struct Image {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int64_t h, int64_t w) : height(h), width(w), pixels(static_cast<size_t>(h * w * 3), 0.0) {}

  double& at(int64_t y, int64_t x, int64_t c) {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  double at(int64_t y, int64_t x, int64_t c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

// Binary PPM (P6, maxval 255) decode; values map v/255.
Image decode_ppm(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_ppm(const Image& image);

// Binary PGM (P5, maxval 255). Grids hold values in [0,1]; encode rounds to
// the nearest 8-bit level.
std::vector<unsigned char> encode_pgm(std::span<const double> grid, int64_t height, int64_t width);
std::vector<double> decode_pgm(std::span<const unsigned char> bytes, int64_t* height,
                               int64_t* width);

// Bilinear, align-corners, channelwise.
Image resize_bilinear(const Image& image, int64_t height, int64_t width);

// (v - mean) / std per channel; result is an image-shaped tensor [H x W x 3].
Tensor normalize(const Image& image, const std::array<double, 3>& mean,
                 const std::array<double, 3>& std);

struct SyntheticSpec {
  int64_t classes = 8;
  int64_t per_class = 16;
  int64_t image_size = 32;
  uint64_t seed = 42;
};

struct Dataset {
  struct Item {
    int64_t label = 0;
    int64_t store_index = -1;  // index into `store`, or -1 when path-backed
    std::string path;
  };
  std::vector<Item> items;
  int64_t num_classes = 0;
  std::string split;
  std::vector<Image> store;
  std::string base_dir;

  size_t size() const { return items.size(); }
  Image image(size_t i) const;
};

// Deterministic class-textured images over a uniform "sky" background that
// fills the top half of every image. Byte-stable for a fixed seed.
Dataset make_synthetic(const SyntheticSpec& spec);

// CSV manifest, one "relative_path,label" per line. Paths resolve against the
// manifest's directory.
Dataset load_manifest(const std::string& path);

// Synthetic train/val pair for run configs (val uses seed+1).
struct DataConfig {
  int64_t classes = 8;
  int64_t per_class = 16;
  int64_t val_per_class = 8;
  int64_t image_size = 32;
  uint64_t seed = 42;
  void validate() const;
};

Dataset make_synthetic_train(const DataConfig& cfg);
Dataset make_synthetic_val(const DataConfig& cfg);

}  // namespace vitlab
