#ifndef AAMULET_DATA_IO_HPP_
#define AAMULET_DATA_IO_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "aamulet/tensor.hpp"

namespace aamulet {

// One training/evaluation pair: RGB image in [0,1] and a strictly binary
// mask at the same resolution.
struct ImageSample {
  Tensor<float> image;  // (1, 3, h, w)
  Tensor<float> mask;   // (1, 1, h, w), values exactly 0 or 1
  std::string id;
};

// Binary netpbm codecs, maxval 255 only. Images map bytes to [0,1] by /255;
// writing quantizes by rounding, so write-then-read is exact after the
// initial 8-bit quantization.
Tensor<float> read_ppm(const std::string& path);              // (1,3,h,w)
void write_ppm(const std::string& path, const Tensor<float>& image);
Tensor<float> read_pgm(const std::string& path);              // (1,1,h,w)
void write_pgm(const std::string& path, const Tensor<float>& map);

enum class ShapeKind { ellipse, rectangle, triangle };

// Deterministic synthetic salient-shape dataset: textured background (base
// colour + linear gradient + noise) with 1..3 high-contrast shapes whose
// union is the ground-truth mask.
struct SynthSpec {
  int image_h = 64;
  int image_w = 64;
  int shapes_min = 1;
  int shapes_max = 3;
  std::vector<ShapeKind> kinds = {ShapeKind::ellipse, ShapeKind::rectangle,
                                  ShapeKind::triangle};
  double contrast_min = 0.3;
  double contrast_max = 0.5;
  double noise = 0.03;
  double gradient = 0.2;
  int margin = 2;                 // default profile: shapes fully inside
  bool boundary_profile = false;  // allow shapes to touch/cross the border
  std::uint64_t seed = 42;

  void validate() const;
};

// Geometry of one rendered shape, exposed so tests can re-derive the mask
// from first principles.
struct ShapeDesc {
  ShapeKind kind;
  // rectangle: x0, y0, width, height (integers stored as doubles)
  // ellipse:   cx, cy, rx, ry
  // triangle:  x0, y0, x1, y1, x2, y2
  double p[6] = {0, 0, 0, 0, 0, 0};
};

std::vector<ImageSample> generate_synthetic(const SynthSpec& spec, int n);
std::vector<ImageSample> generate_synthetic(
    const SynthSpec& spec, int n, std::vector<std::vector<ShapeDesc>>* shapes);

// Pixel-center point-in-shape test used by the rasterizer (and by test
// oracles): triangles use inclusive edge functions oriented toward the
// interior, ellipses an inclusive quadratic inequality.
bool shape_contains(const ShapeDesc& shape, int x, int y);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // resolved against the manifest directory
  std::string mask_path;
};

// Writes <id>.ppm / <id>.pgm pairs plus manifest.tsv into dir; returns the
// manifest path. Manifest lines are id<TAB>image<TAB>mask, UTF-8, LF.
std::string save_dataset(const std::vector<ImageSample>& samples,
                         const std::string& dir);

std::string write_manifest(const std::vector<ManifestEntry>& entries,
                           const std::string& dir);

std::vector<ManifestEntry> parse_manifest(const std::string& path);

// Loads every referenced pair; a missing file fails with all offending ids.
std::vector<ImageSample> read_manifest(const std::string& path);

}  // namespace aamulet

#endif  // AAMULET_DATA_IO_HPP_
