#include "vitlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "vitlab/rng.hpp"

namespace vitlab {

namespace {

// Netpbm header token reader: skips whitespace and '#' comments.
struct PnmCursor {
  std::span<const unsigned char> bytes;
  size_t pos = 0;

  int peek() const { return pos < bytes.size() ? bytes[pos] : -1; }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const unsigned char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
  }

  int64_t read_int(const char* what) {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      throw ParseError(std::string("pnm: expected ") + what);
    }
    int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (int64_t{1} << 30)) throw ParseError(std::string("pnm: absurd ") + what);
      ++pos;
    }
    return v;
  }
};

unsigned char quantize(double v) {
  const double clamped = std::min(1.0, std::max(0.0, v));
  return static_cast<unsigned char>(std::lround(clamped * 255.0));
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

Image decode_ppm(std::span<const unsigned char> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw ParseError("ppm: bad magic, expected P6");
  }
  PnmCursor cur{bytes, 2};
  const int64_t w = cur.read_int("width");
  const int64_t h = cur.read_int("height");
  const int64_t maxval = cur.read_int("maxval");
  if (w <= 0 || h <= 0) throw ParseError("ppm: non-positive dimensions");
  if (maxval != 255) throw ParseError("ppm: unsupported maxval " + std::to_string(maxval));
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) {
    throw ParseError("ppm: missing header terminator");
  }
  ++cur.pos;  // single whitespace byte separates header from payload
  const size_t need = static_cast<size_t>(w * h * 3);
  if (bytes.size() - cur.pos < need) throw ParseError("ppm: truncated payload");
  Image img(h, w);
  for (size_t i = 0; i < need; ++i) {
    img.pixels[i] = static_cast<double>(bytes[cur.pos + i]) / 255.0;
  }
  return img;
}

std::vector<unsigned char> encode_ppm(const Image& image) {
  std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                       "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) out.push_back(quantize(v));
  return out;
}

std::vector<unsigned char> encode_pgm(std::span<const double> grid, int64_t height, int64_t width) {
  if (height <= 0 || width <= 0 || static_cast<int64_t>(grid.size()) != height * width) {
    throw ShapeError("pgm: grid size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + grid.size());
  for (double v : grid) out.push_back(quantize(v));
  return out;
}

std::vector<double> decode_pgm(std::span<const unsigned char> bytes, int64_t* height,
                               int64_t* width) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw ParseError("pgm: bad magic, expected P5");
  }
  PnmCursor cur{bytes, 2};
  const int64_t w = cur.read_int("width");
  const int64_t h = cur.read_int("height");
  const int64_t maxval = cur.read_int("maxval");
  if (w <= 0 || h <= 0) throw ParseError("pgm: non-positive dimensions");
  if (maxval != 255) throw ParseError("pgm: unsupported maxval " + std::to_string(maxval));
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) {
    throw ParseError("pgm: missing header terminator");
  }
  ++cur.pos;
  const size_t need = static_cast<size_t>(w * h);
  if (bytes.size() - cur.pos < need) throw ParseError("pgm: truncated payload");
  std::vector<double> grid(need);
  for (size_t i = 0; i < need; ++i) {
    grid[i] = static_cast<double>(bytes[cur.pos + i]) / 255.0;
  }
  *height = h;
  *width = w;
  return grid;
}

Image resize_bilinear(const Image& image, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize_bilinear: target dims must be >= 1");
  if (height == image.height && width == image.width) return image;
  Image out(height, width);
  const double sy = height > 1 ? static_cast<double>(image.height - 1) / static_cast<double>(height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(image.width - 1) / static_cast<double>(width - 1) : 0.0;
  for (int64_t y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) * sy;
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) * sx;
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (int64_t c = 0; c < 3; ++c) {
        const double top = lerp(image.at(y0, x0, c), image.at(y0, x1, c), tx);
        const double bot = lerp(image.at(y1, x0, c), image.at(y1, x1, c), tx);
        out.at(y, x, c) = lerp(top, bot, ty);
      }
    }
  }
  return out;
}

Tensor normalize(const Image& image, const std::array<double, 3>& mean,
                 const std::array<double, 3>& std) {
  for (double s : std) {
    if (s <= 0.0) throw ContractError("normalize: std must be positive");
  }
  Tensor out({image.height, image.width, 3});
  auto o = out.data();
  for (size_t i = 0; i < image.pixels.size(); ++i) {
    const size_t c = i % 3;
    o[i] = (image.pixels[i] - mean[c]) / std[c];
  }
  return out;
}

Image Dataset::image(size_t i) const {
  const Item& item = items.at(i);
  if (item.store_index >= 0) return store[static_cast<size_t>(item.store_index)];
  std::filesystem::path p(item.path);
  if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
  return decode_ppm(read_file(p.string()));
}

namespace {

// Two texture colors per class, chosen far apart in RGB so the classes stay
// linearly separable for the toy model. Values are 8-bit levels.
constexpr unsigned char kClassColors[8][2][3] = {
    {{200, 40, 40}, {40, 16, 16}},    // red stripes
    {{40, 200, 40}, {16, 40, 16}},    // green stripes
    {{40, 40, 200}, {16, 16, 40}},    // blue checks
    {{220, 220, 40}, {60, 60, 16}},   // yellow bands
    {{220, 40, 220}, {60, 16, 60}},   // magenta bands
    {{40, 220, 220}, {16, 60, 60}},   // cyan checks
    {{230, 140, 30}, {70, 45, 12}},   // orange diagonals
    {{140, 230, 120}, {45, 70, 35}},  // lime diagonals
};

bool texture_selector(int64_t cls, int64_t y, int64_t x, int64_t phase_y, int64_t phase_x) {
  const int64_t yy = y + phase_y;
  const int64_t xx = x + phase_x;
  switch (cls % 8) {
    case 0: return (yy / 2) % 2 == 0;                      // horizontal stripes, period 2
    case 1: return (xx / 2) % 2 == 0;                      // vertical stripes, period 2
    case 2: return ((yy / 2) + (xx / 2)) % 2 == 0;         // fine checkerboard
    case 3: return (yy / 4) % 2 == 0;                      // horizontal bands, period 4
    case 4: return (xx / 4) % 2 == 0;                      // vertical bands, period 4
    case 5: return ((yy / 4) + (xx / 4)) % 2 == 0;         // coarse checkerboard
    case 6: return ((yy + xx) / 3) % 2 == 0;               // diagonal stripes
    default: return ((yy - xx + 4096) / 3) % 2 == 0;       // anti-diagonal stripes
  }
}

int64_t clamp_u8(int64_t v) { return std::min<int64_t>(255, std::max<int64_t>(0, v)); }

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1 || spec.image_size < 2) {
    throw ContractError("make_synthetic: invalid spec");
  }
  Rng rng(spec.seed);
  Dataset ds;
  ds.num_classes = spec.classes;
  ds.split = "synthetic";
  const int64_t side = spec.image_size;
  const int64_t sky_rows = side / 2;  // uniform background: top half of the image
  for (int64_t cls = 0; cls < spec.classes; ++cls) {
    for (int64_t s = 0; s < spec.per_class; ++s) {
      Image img(side, side);
      // Per-image uniform sky color; bright so it never collides with textures.
      const int64_t sky_r = 170 + rng.uniform_int(70);
      const int64_t sky_g = 170 + rng.uniform_int(70);
      const int64_t sky_b = 170 + rng.uniform_int(70);
      // Per-image texture phase and color jitter keep samples distinct.
      const int64_t phase_y = rng.uniform_int(8);
      const int64_t phase_x = rng.uniform_int(8);
      const int64_t jitter[3] = {rng.uniform_int(17) - 8, rng.uniform_int(17) - 8,
                                 rng.uniform_int(17) - 8};
      for (int64_t y = 0; y < side; ++y) {
        for (int64_t x = 0; x < side; ++x) {
          int64_t rgb[3];
          if (y < sky_rows) {
            rgb[0] = sky_r;
            rgb[1] = sky_g;
            rgb[2] = sky_b;
          } else {
            const bool on = texture_selector(cls, y, x, phase_y, phase_x);
            const unsigned char* base = kClassColors[cls % 8][on ? 0 : 1];
            for (int64_t c = 0; c < 3; ++c) {
              // Per-pixel noise decorrelates neighbouring texture patches.
              const int64_t noise = rng.uniform_int(13) - 6;
              rgb[c] = clamp_u8(base[c] + jitter[c] + noise);
            }
          }
          for (int64_t c = 0; c < 3; ++c) {
            img.at(y, x, c) = static_cast<double>(rgb[c]) / 255.0;
          }
        }
      }
      ds.items.push_back({cls, static_cast<int64_t>(ds.store.size()), ""});
      ds.store.push_back(std::move(img));
    }
  }
  return ds;
}

Dataset load_manifest(const std::string& path) {
  std::string text = read_text_file(path);
  Dataset ds;
  ds.base_dir = std::filesystem::path(path).parent_path().string();
  ds.split = "manifest";
  std::istringstream in(text);
  std::string line;
  int64_t line_no = 0;
  int64_t max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw ParseError("manifest: malformed line " + std::to_string(line_no) + ": " + line);
    }
    const std::string rel = line.substr(0, comma);
    const std::string label_str = line.substr(comma + 1);
    int64_t label = 0;
    try {
      size_t used = 0;
      label = std::stoll(label_str, &used);
      if (used != label_str.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("manifest: bad label at line " + std::to_string(line_no) + ": " +
                       label_str);
    }
    if (label < 0) {
      throw ParseError("manifest: negative label at line " + std::to_string(line_no));
    }
    ds.items.push_back({label, -1, rel});
    max_label = std::max(max_label, label);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

void DataConfig::validate() const {
  if (classes < 1) throw ContractError("data.classes must be >= 1");
  if (per_class < 1) throw ContractError("data.per_class must be >= 1");
  if (val_per_class < 0) throw ContractError("data.val_per_class must be >= 0");
  if (image_size < 2) throw ContractError("data.image_size must be >= 2");
}

Dataset make_synthetic_train(const DataConfig& cfg) {
  cfg.validate();
  Dataset ds = make_synthetic({cfg.classes, cfg.per_class, cfg.image_size, cfg.seed});
  ds.split = "train";
  return ds;
}

Dataset make_synthetic_val(const DataConfig& cfg) {
  cfg.validate();
  Dataset ds = make_synthetic({cfg.classes, cfg.val_per_class, cfg.image_size, cfg.seed + 1});
  ds.split = "val";
  return ds;
}

}  // namespace vitlab
