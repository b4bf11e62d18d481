#include "aamulet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aamulet/rng.hpp"

namespace fs = std::filesystem;

namespace aamulet {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

bool is_space(std::uint8_t b) {
  return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\f' ||
         b == '\v';
}

struct PnmHeader {
  int w = 0, h = 0, maxval = 0;
  std::size_t payload_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& bytes,
                           const char* magic, const std::string& path) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(path + ": " + what + " at byte offset " +
                      std::to_string(pos));
  };
  if (bytes.size() < 2 || bytes[0] != std::uint8_t(magic[0]) ||
      bytes[1] != std::uint8_t(magic[1]))
    throw fail(std::string("expected magic ") + magic);
  pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
      throw fail("expected decimal header field");
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 30) throw fail("header field out of range");
      ++pos;
    }
    return v;
  };
  PnmHeader hd;
  hd.w = int(next_int());
  hd.h = int(next_int());
  hd.maxval = int(next_int());
  if (hd.w < 1 || hd.h < 1) throw fail("non-positive image dimensions");
  if (hd.maxval != 255)
    throw ParseError(path + ": unsupported maxval " +
                     std::to_string(hd.maxval) + " (only 255)");
  if (pos >= bytes.size() || !is_space(bytes[pos]))
    throw fail("expected single whitespace before payload");
  hd.payload_offset = pos + 1;
  return hd;
}

std::uint8_t quantize(float v) {
  const double c = std::min(std::max(double(v), 0.0), 1.0);
  return std::uint8_t(std::lround(c * 255.0));
}

}  // namespace

Tensor<float> read_ppm(const std::string& path) {
  const auto bytes = read_file(path);
  const PnmHeader hd = parse_pnm_header(bytes, "P6", path);
  const std::size_t need = std::size_t(hd.w) * hd.h * 3;
  if (bytes.size() - hd.payload_offset < need)
    throw ParseError(path + ": truncated payload at byte offset " +
                     std::to_string(bytes.size()));
  Tensor<float> img(Shape{1, 3, hd.h, hd.w});
  auto& data = img.mutable_data();
  const std::uint8_t* p = bytes.data() + hd.payload_offset;
  const std::int64_t plane = std::int64_t(hd.h) * hd.w;
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      data[c * plane + i] = float(p[i * 3 + c]) / 255.0f;
  return img;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3)
    throw ShapeError("write_ppm: image must be (1,3,h,w), got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) +
                    "\n255\n";
  const std::int64_t plane = std::int64_t(s.h) * s.w;
  out.reserve(out.size() + std::size_t(plane) * 3);
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      out.push_back(char(quantize(image.data()[c * plane + i])));
  write_file(path, out);
}

Tensor<float> read_pgm(const std::string& path) {
  const auto bytes = read_file(path);
  const PnmHeader hd = parse_pnm_header(bytes, "P5", path);
  const std::size_t need = std::size_t(hd.w) * hd.h;
  if (bytes.size() - hd.payload_offset < need)
    throw ParseError(path + ": truncated payload at byte offset " +
                     std::to_string(bytes.size()));
  Tensor<float> map(Shape{1, 1, hd.h, hd.w});
  auto& data = map.mutable_data();
  const std::uint8_t* p = bytes.data() + hd.payload_offset;
  for (std::size_t i = 0; i < need; ++i) data[i] = float(p[i]) / 255.0f;
  return map;
}

void write_pgm(const std::string& path, const Tensor<float>& map) {
  const Shape s = map.shape();
  if (s.n != 1 || s.c != 1)
    throw ShapeError("write_pgm: map must be (1,1,h,w), got " + s.str());
  std::string out = "P5\n" + std::to_string(s.w) + " " + std::to_string(s.h) +
                    "\n255\n";
  for (float v : map.data()) out.push_back(char(quantize(v)));
  write_file(path, out);
}

void SynthSpec::validate() const {
  if (image_h < 8 || image_w < 8)
    throw ConfigError("data.image_hw must be at least 8x8");
  if (shapes_min < 1 || shapes_max < shapes_min)
    throw ConfigError("data.shapes range must satisfy 1 <= min <= max");
  if (kinds.empty()) throw ConfigError("data.kinds must not be empty");
  if (!(contrast_min > 0) || contrast_min > contrast_max || contrast_max > 0.5)
    throw ConfigError("data.contrast range must satisfy 0 < min <= max <= 0.5");
  if (noise < 0 || gradient < 0)
    throw ConfigError("data.noise and data.gradient must be >= 0");
  if (margin < 0) throw ConfigError("data.margin must be >= 0");
}

bool shape_contains(const ShapeDesc& sh, int x, int y) {
  const double px = x + 0.5;
  const double py = y + 0.5;
  switch (sh.kind) {
    case ShapeKind::rectangle:
      return x >= int(sh.p[0]) && x < int(sh.p[0]) + int(sh.p[2]) &&
             y >= int(sh.p[1]) && y < int(sh.p[1]) + int(sh.p[3]);
    case ShapeKind::ellipse: {
      const double dx = (px - sh.p[0]) / sh.p[2];
      const double dy = (py - sh.p[1]) / sh.p[3];
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::triangle: {
      // Inclusive edge functions, CCW orientation; ties land inside.
      double ax = sh.p[0], ay = sh.p[1];
      double bx = sh.p[2], by = sh.p[3];
      double cx = sh.p[4], cy = sh.p[5];
      const double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
      if (area < 0) {
        std::swap(bx, cx);
        std::swap(by, cy);
      }
      auto edge = [&](double x0, double y0, double x1, double y1) {
        return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
      };
      return edge(ax, ay, bx, by) >= 0 && edge(bx, by, cx, cy) >= 0 &&
             edge(cx, cy, ax, ay) >= 0;
    }
  }
  return false;
}

namespace {

ShapeDesc draw_shape(Rng& rng, const SynthSpec& spec) {
  const int w = spec.image_w;
  const int h = spec.image_h;
  const int m = spec.margin;
  ShapeDesc sh;
  sh.kind = spec.kinds[std::size_t(rng.uniform_int(0, std::int64_t(spec.kinds.size()) - 1))];
  switch (sh.kind) {
    case ShapeKind::rectangle: {
      if (!spec.boundary_profile) {
        const int aw = int(rng.uniform_int(3, std::max(3, std::min(w / 2, w - 2 * m))));
        const int ah = int(rng.uniform_int(3, std::max(3, std::min(h / 2, h - 2 * m))));
        sh.p[0] = double(rng.uniform_int(m, w - m - aw));
        sh.p[1] = double(rng.uniform_int(m, h - m - ah));
        sh.p[2] = aw;
        sh.p[3] = ah;
      } else {
        const int aw = int(rng.uniform_int(3, w / 2));
        const int ah = int(rng.uniform_int(3, h / 2));
        sh.p[0] = double(rng.uniform_int(-aw / 2, w - aw / 2));
        sh.p[1] = double(rng.uniform_int(-ah / 2, h - ah / 2));
        sh.p[2] = aw;
        sh.p[3] = ah;
      }
      break;
    }
    case ShapeKind::ellipse: {
      if (!spec.boundary_profile) {
        const double rx = rng.uniform(2.0, w / 4.0);
        const double ry = rng.uniform(2.0, h / 4.0);
        sh.p[0] = rng.uniform(m + rx, w - m - rx);
        sh.p[1] = rng.uniform(m + ry, h - m - ry);
        sh.p[2] = rx;
        sh.p[3] = ry;
      } else {
        sh.p[2] = rng.uniform(2.0, w / 4.0);
        sh.p[3] = rng.uniform(2.0, h / 4.0);
        sh.p[0] = rng.uniform(0.0, double(w));
        sh.p[1] = rng.uniform(0.0, double(h));
      }
      break;
    }
    case ShapeKind::triangle: {
      const double lo_x = spec.boundary_profile ? -w / 4.0 : double(m);
      const double hi_x = spec.boundary_profile ? w * 1.25 : double(w - 1 - m);
      const double lo_y = spec.boundary_profile ? -h / 4.0 : double(m);
      const double hi_y = spec.boundary_profile ? h * 1.25 : double(h - 1 - m);
      for (int i = 0; i < 3; ++i) {
        sh.p[2 * i] = rng.uniform(lo_x, hi_x);
        sh.p[2 * i + 1] = rng.uniform(lo_y, hi_y);
      }
      break;
    }
  }
  return sh;
}

}  // namespace

std::vector<ImageSample> generate_synthetic(
    const SynthSpec& spec, int n, std::vector<std::vector<ShapeDesc>>* shapes) {
  spec.validate();
  if (n < 1) throw ConfigError("generate_synthetic: count must be >= 1");
  const int w = spec.image_w;
  const int h = spec.image_h;
  const std::int64_t plane = std::int64_t(h) * w;
  std::vector<ImageSample> samples;
  samples.reserve(std::size_t(n));
  if (shapes) shapes->assign(std::size_t(n), {});

  for (int idx = 0; idx < n; ++idx) {
    Rng rng(Rng::stream_seed(spec.seed, std::uint64_t(idx)));
    Tensor<float> image(Shape{1, 3, h, w});
    Tensor<float> mask(Shape{1, 1, h, w});
    auto& img = image.mutable_data();
    auto& msk = mask.mutable_data();

    double base[3];
    for (double& b : base) b = rng.uniform(0.2, 0.8);
    const double theta = rng.uniform(0.0, 6.283185307179586);
    const double amp = rng.uniform(0.0, spec.gradient);
    const double gx = std::cos(theta);
    const double gy = std::sin(theta);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double t = ((x + 0.5) / w - 0.5) * gx + ((y + 0.5) / h - 0.5) * gy;
          double v = base[c] + amp * t + spec.noise * rng.uniform(-1.0, 1.0);
          img[c * plane + y * std::int64_t(w) + x] =
              float(std::min(std::max(v, 0.0), 1.0));
        }

    const int count = int(rng.uniform_int(spec.shapes_min, spec.shapes_max));
    std::vector<std::uint8_t> support(static_cast<std::size_t>(plane), 0);
    for (int k = 0; k < count; ++k) {
      ShapeDesc sh = draw_shape(rng, spec);
      if (sh.kind == ShapeKind::triangle) {
        // thin triangles rasterize to almost nothing; retry a few times
        for (int attempt = 0; attempt < 8; ++attempt) {
          std::int64_t area = 0;
          for (int y = 0; y < h && area < 9; ++y)
            for (int x = 0; x < w; ++x)
              if (shape_contains(sh, x, y)) ++area;
          if (area >= 9) break;
          for (int i = 0; i < 3; ++i) {
            sh.p[2 * i] = rng.uniform(double(spec.margin), double(w - 1 - spec.margin));
            sh.p[2 * i + 1] = rng.uniform(double(spec.margin), double(h - 1 - spec.margin));
          }
        }
      }
      std::fill(support.begin(), support.end(), std::uint8_t(0));
      std::int64_t area = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (shape_contains(sh, x, y)) {
            support[y * std::int64_t(w) + x] = 1;
            ++area;
          }
      const double delta = rng.uniform(spec.contrast_min, spec.contrast_max);
      if (area == 0) continue;  // fully outside the canvas (boundary profile)
      for (int c = 0; c < 3; ++c) {
        double mean = 0;
        for (std::int64_t i = 0; i < plane; ++i)
          if (support[i]) mean += img[c * plane + i];
        mean /= double(area);
        const double fill = mean <= 0.5 ? mean + delta : mean - delta;
        for (std::int64_t i = 0; i < plane; ++i)
          if (support[i]) img[c * plane + i] = float(fill);
      }
      for (std::int64_t i = 0; i < plane; ++i)
        if (support[i]) msk[i] = 1.0f;
      if (shapes) (*shapes)[std::size_t(idx)].push_back(sh);
    }

    char id[16];
    std::snprintf(id, sizeof id, "s%05d", idx);
    samples.push_back(ImageSample{std::move(image), std::move(mask), id});
  }
  return samples;
}

std::vector<ImageSample> generate_synthetic(const SynthSpec& spec, int n) {
  return generate_synthetic(spec, n, nullptr);
}

std::string write_manifest(const std::vector<ManifestEntry>& entries,
                           const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.tsv").string();
  std::string out;
  for (const auto& e : entries)
    out += e.id + "\t" + e.image_path + "\t" + e.mask_path + "\n";
  write_file(path, out);
  return path;
}

std::string save_dataset(const std::vector<ImageSample>& samples,
                         const std::string& dir) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  entries.reserve(samples.size());
  for (const auto& s : samples) {
    const std::string img_name = s.id + ".ppm";
    const std::string mask_name = s.id + ".pgm";
    write_ppm((fs::path(dir) / img_name).string(), s.image);
    write_pgm((fs::path(dir) / mask_name).string(), s.mask);
    entries.push_back({s.id, img_name, mask_name});
  }
  return write_manifest(entries, dir);
}

std::vector<ManifestEntry> parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": manifest lines must be id<TAB>image<TAB>mask");
    ManifestEntry e;
    e.id = line.substr(0, t1);
    auto resolve = [&](std::string p) {
      return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    e.image_path = resolve(line.substr(t1 + 1, t2 - t1 - 1));
    e.mask_path = resolve(line.substr(t2 + 1));
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ImageSample> read_manifest(const std::string& path) {
  const auto entries = parse_manifest(path);
  std::string missing;
  for (const auto& e : entries) {
    if (!fs::exists(e.image_path) || !fs::exists(e.mask_path))
      missing += missing.empty() ? e.id : (", " + e.id);
  }
  if (!missing.empty())
    throw MissingDataError("manifest " + path +
                           " references missing files for ids: " + missing);
  std::vector<ImageSample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) {
    ImageSample s;
    s.id = e.id;
    s.image = read_ppm(e.image_path);
    s.mask = read_pgm(e.mask_path);
    for (auto& v : s.mask.mutable_data()) v = v > 0.5f ? 1.0f : 0.0f;
    if (s.image.shape().h != s.mask.shape().h ||
        s.image.shape().w != s.mask.shape().w)
      throw ShapeError("sample " + e.id + ": image " + s.image.shape().str() +
                       " and mask " + s.mask.shape().str() + " disagree");
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace aamulet
