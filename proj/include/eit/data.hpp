#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "eit/rng.hpp"
#include "eit/tensor.hpp"

// Synthetic concealed-shapes dataset plus the preprocessing pipeline. A
// sample hides one shape (disc, square, triangle) inside a textured
// background; the fill is the background texture itself sampled at a random
// offset, so the interior carries no class signal. The only reliable cue is a
// thin boundary ring whose contrast scales with `difficulty`: at 0 the object
// is invisible by construction, at 1 the outline is plain.

namespace eit {

struct Sample {
  Tensor<double> image;        // (3,H,W), values in [0,255]
  int label = 0;               // 0 disc, 1 square, 2 triangle
  std::array<double, 4> box{}; // (cx,cy,w,h) normalized to [0,1]
  uint64_t seed = 0;
};

namespace detail {

// stationary texture field on a 2H x 2W lattice so a shifted read stays in
// range: low-frequency sinusoid over a per-channel base plus white noise
struct TextureField {
  int h2, w2;
  std::array<double, 3> base;
  double amp, kx, ky, phx, phy;
  std::vector<double> noise;  // (3,h2,w2)

  TextureField(int h, int w, Rng& rng) : h2(2 * h), w2(2 * w) {
    for (auto& b : base) b = rng.uniform(90.0, 160.0);
    amp = rng.uniform(15.0, 35.0);
    kx = 2.0 * 3.14159265358979323846 * rng.uniform(0.5, 2.5) / w;
    ky = 2.0 * 3.14159265358979323846 * rng.uniform(0.5, 2.5) / h;
    phx = rng.uniform(0.0, 6.28318530717958647692);
    phy = rng.uniform(0.0, 6.28318530717958647692);
    const double sigma = rng.uniform(8.0, 16.0);
    noise.resize(static_cast<size_t>(3) * h2 * w2);
    for (auto& n : noise) n = sigma * rng.normal();
  }

  double at(int c, int y, int x) const {
    return base[static_cast<size_t>(c)] +
           amp * std::sin(kx * x + phx) * std::sin(ky * y + phy) +
           noise[(static_cast<size_t>(c) * h2 + y) * w2 + x];
  }
};

inline bool in_triangle(double px, double py, double cx, double cy, double e) {
  // upright isoceles: apex (cx,cy-e), base corners (cx±e, cy+e)
  const double ax = cx, ay = cy - e, bx = cx - e, by = cy + e, qx = cx + e, qy = cy + e;
  auto side = [](double x0, double y0, double x1, double y1, double x, double y) {
    return (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
  };
  const double d0 = side(ax, ay, bx, by, px, py);
  const double d1 = side(bx, by, qx, qy, px, py);
  const double d2 = side(qx, qy, ax, ay, px, py);
  return (d0 >= 0 && d1 >= 0 && d2 >= 0) || (d0 <= 0 && d1 <= 0 && d2 <= 0);
}

}  // namespace detail

// deterministic generator; the optional `masks` out-parameter exposes the
// foreground masks for tests and visualization
inline std::vector<Sample> gen_concealed_shapes(int n, int h = 32, int w = 32,
                                                double difficulty = 0.5, uint64_t seed = 0,
                                                std::vector<Tensor<double>>* masks = nullptr) {
  if (n < 0) throw ConfigError("gen_concealed_shapes: negative count");
  if (std::min(h, w) < 12)
    throw ConfigError("gen_concealed_shapes: shape does not fit a " + std::to_string(h) + "x" +
                      std::to_string(w) + " image");
  if (difficulty < 0.0 || difficulty > 1.0)
    throw ConfigError("gen_concealed_shapes: difficulty outside [0,1]");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.seed = Rng::derive(seed, static_cast<uint64_t>(i));
    s.label = i % 3;
    Rng rng(s.seed);
    detail::TextureField field(h, w, rng);

    const double e = rng.uniform(0.15, 0.30) * std::min(h, w);
    const double cx = rng.uniform(e + 1.0, w - e - 2.0);
    const double cy = rng.uniform(e + 1.0, h - e - 2.0);
    const int ox = static_cast<int>(rng.uniform_int(w));  // fill displacement
    const int oy = static_cast<int>(rng.uniform_int(h));

    std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        bool inside = false;
        if (s.label == 0) {
          inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= e * e;
        } else if (s.label == 1) {
          inside = std::abs(px - cx) <= e && std::abs(py - cy) <= e;
        } else {
          inside = detail::in_triangle(px, py, cx, cy, e);
        }
        mask[static_cast<size_t>(y) * w + x] = inside ? 1 : 0;
      }

    s.image = Tensor<double>({3, h, w});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool inside = mask[static_cast<size_t>(y) * w + x] != 0;
          double v = inside ? field.at(c, y + oy, x + ox) : field.at(c, y, x);
          if (inside) {
            // inner boundary ring: the one place difficulty shows
            const bool edge = x == 0 || x == w - 1 || y == 0 || y == h - 1 ||
                              !mask[static_cast<size_t>(y) * w + x - 1] ||
                              !mask[static_cast<size_t>(y) * w + x + 1] ||
                              !mask[static_cast<size_t>(y - 1) * w + x] ||
                              !mask[static_cast<size_t>(y + 1) * w + x];
            if (edge) v += 60.0 * difficulty;
          }
          s.image.data()[(static_cast<int64_t>(c) * h + y) * w + x] =
              std::min(255.0, std::max(0.0, v));
        }

    int x0 = w, x1 = -1, y0 = h, y1 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask[static_cast<size_t>(y) * w + x]) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    s.box = {(x0 + x1 + 1.0) / (2.0 * w), (y0 + y1 + 1.0) / (2.0 * h),
             (x1 - x0 + 1.0) / w, (y1 - y0 + 1.0) / h};

    if (masks) {
      Tensor<double> m({h, w});
      for (int64_t p = 0; p < m.numel(); ++p) m.data()[p] = mask[static_cast<size_t>(p)];
      masks->push_back(m);
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct PreprocessConfig {
  double flip_prob = 0.5;
  double ratio_lo = 0.1, ratio_hi = 2.0;
  int crop = 32;  // target canvas, defaults to the generator resolution
  double min_extent = 1e-2;
  std::array<double, 3> means{123.675, 116.28, 103.53};
  std::array<double, 3> stds{58.395, 57.12, 57.375};
  double pad_value = 114.0;

  void validate() const {
    if (crop < 1) throw ConfigError("preprocess: crop must be positive");
    if (!(ratio_lo < ratio_hi) || ratio_lo <= 0.0)
      throw ConfigError("preprocess: bad resize ratio range");
    if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("preprocess: bad flip_prob");
  }
};

struct Prepped {
  Tensor<double> image;  // (3,crop,crop), normalized
  int label = 0;
  std::array<double, 4> box{};  // normalized to the crop canvas
  bool has_box = false;
};

// train path: flip, aspect-preserving random resize, random crop, tiny-box
// drop; both paths: normalize and pad to the crop canvas
inline Prepped preprocess(const Sample& s, const PreprocessConfig& cfg, bool train,
                          uint64_t seed) {
  cfg.validate();
  const int h = s.image.dim(1), w = s.image.dim(2);
  Rng rng(seed);

  std::vector<double> img(s.image.data(), s.image.data() + s.image.numel());
  double bx = s.box[0], by = s.box[1], bw = s.box[2], bh = s.box[3];
  int ih = h, iw = w;

  if (train) {
    if (rng.bernoulli(cfg.flip_prob)) {
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ih; ++y)
          for (int x = 0; x < iw / 2; ++x)
            std::swap(img[(static_cast<size_t>(c) * ih + y) * iw + x],
                      img[(static_cast<size_t>(c) * ih + y) * iw + iw - 1 - x]);
      bx = 1.0 - bx;
    }
    const double ratio = rng.uniform(cfg.ratio_lo, cfg.ratio_hi);
    const int rh = std::max(1, static_cast<int>(std::lround(ih * ratio)));
    const int rw = std::max(1, static_cast<int>(std::lround(iw * ratio)));
    if (rh != ih || rw != iw) {
      std::vector<double> res(static_cast<size_t>(3) * rh * rw);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < rh; ++y) {
          const int sy = std::min(ih - 1, y * ih / rh);
          for (int x = 0; x < rw; ++x) {
            const int sx = std::min(iw - 1, x * iw / rw);
            res[(static_cast<size_t>(c) * rh + y) * rw + x] =
                img[(static_cast<size_t>(c) * ih + sy) * iw + sx];
          }
        }
      img.swap(res);
      ih = rh;
      iw = rw;
    }
  }

  // random crop window for training, top-left placement otherwise
  const int wy =
      train && ih > cfg.crop ? static_cast<int>(rng.uniform_int(ih - cfg.crop + 1)) : 0;
  const int wx =
      train && iw > cfg.crop ? static_cast<int>(rng.uniform_int(iw - cfg.crop + 1)) : 0;
  const int copy_h = std::min(cfg.crop, ih - wy);
  const int copy_w = std::min(cfg.crop, iw - wx);

  Prepped out;
  out.label = s.label;
  out.image = Tensor<double>({3, cfg.crop, cfg.crop});
  for (int c = 0; c < 3; ++c) {
    const double mean = cfg.means[static_cast<size_t>(c)], sd = cfg.stds[static_cast<size_t>(c)];
    for (int y = 0; y < cfg.crop; ++y)
      for (int x = 0; x < cfg.crop; ++x) {
        const double raw = (y < copy_h && x < copy_w)
                               ? img[(static_cast<size_t>(c) * ih + (wy + y)) * iw + (wx + x)]
                               : cfg.pad_value;
        out.image.data()[(static_cast<int64_t>(c) * cfg.crop + y) * cfg.crop + x] =
            (raw - mean) / sd;
      }
  }

  // box into crop-canvas pixels, clip to the copied region, renormalize
  const double px0 = std::max(0.0, (bx - bw / 2) * iw - wx);
  const double px1 = std::min(static_cast<double>(copy_w), (bx + bw / 2) * iw - wx);
  const double py0 = std::max(0.0, (by - bh / 2) * ih - wy);
  const double py1 = std::min(static_cast<double>(copy_h), (by + bh / 2) * ih - wy);
  if (px1 > px0 && py1 > py0) {
    const double nw = (px1 - px0) / cfg.crop, nh = (py1 - py0) / cfg.crop;
    if (nw >= cfg.min_extent && nh >= cfg.min_extent) {
      out.box = {(px0 + px1) / (2.0 * cfg.crop), (py0 + py1) / (2.0 * cfg.crop), nw, nh};
      out.has_box = true;
    }
  }
  return out;
}

// directory layout: <name>.manifest (plain text) + <name>.f32 (little-endian
// float32 image payload, sample-major, 3*H*W values per sample)
inline void save_dataset(const std::string& dir, const std::string& name,
                         const std::vector<Sample>& samples) {
  if (samples.empty()) throw ConfigError("save_dataset: empty split");
  const int h = samples[0].image.dim(1), w = samples[0].image.dim(2);
  std::ofstream man(dir + "/" + name + ".manifest");
  if (!man) throw ConfigError("save_dataset: cannot write manifest in " + dir);
  man << "concealed-shapes v1\n";
  man << "count " << samples.size() << "\n";
  man << "height " << h << "\nwidth " << w << "\n";
  man << "data " << name << ".f32\n";
  man << "columns id label cx cy w h seed\n";
  std::ofstream bin(dir + "/" + name + ".f32", std::ios::binary);
  if (!bin) throw ConfigError("save_dataset: cannot write payload in " + dir);
  man.precision(17);
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.image.dim(1) != h || s.image.dim(2) != w)
      throw ShapeError("save_dataset: mixed resolutions in one split");
    man << i << " " << s.label << " " << s.box[0] << " " << s.box[1] << " " << s.box[2] << " "
        << s.box[3] << " " << s.seed << "\n";
    for (int64_t p = 0; p < s.image.numel(); ++p) {
      const float v = static_cast<float>(s.image.data()[p]);
      bin.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
}

inline std::vector<Sample> load_dataset(const std::string& dir, const std::string& name) {
  std::ifstream man(dir + "/" + name + ".manifest");
  if (!man) throw ConfigError("load_dataset: missing manifest " + dir + "/" + name + ".manifest");
  std::string tag, version;
  man >> tag >> version;
  if (tag != "concealed-shapes" || version != "v1")
    throw ConfigError("load_dataset: unrecognized manifest header");
  size_t count = 0;
  int h = 0, w = 0;
  std::string key, datafile;
  man >> key >> count >> key >> h >> key >> w >> key >> datafile;
  std::string line;
  std::getline(man, line);  // rest of data line
  std::getline(man, line);  // columns comment
  std::ifstream bin(dir + "/" + datafile, std::ios::binary);
  if (!bin) throw ConfigError("load_dataset: missing payload " + dir + "/" + datafile);
  std::vector<Sample> out(count);
  for (size_t i = 0; i < count; ++i) {
    size_t id = 0;
    Sample& s = out[i];
    man >> id >> s.label >> s.box[0] >> s.box[1] >> s.box[2] >> s.box[3] >> s.seed;
    if (id != i) throw ConfigError("load_dataset: manifest ids out of order");
    s.image = Tensor<double>({3, h, w});
    for (int64_t p = 0; p < s.image.numel(); ++p) {
      float v = 0;
      bin.read(reinterpret_cast<char*>(&v), sizeof(float));
      s.image.data()[p] = static_cast<double>(v);
    }
    if (!bin) throw ConfigError("load_dataset: truncated payload");
  }
  return out;
}

}  // namespace eit
