#pragma once

// In-memory image corpora, procedural desk-scale datasets and the on-disk
// manifest format (directory of PNGs + manifest.json).

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "gduap/errors.hpp"
#include "gduap/image_ops.hpp"
#include "gduap/io.hpp"
#include "gduap/model_adapter.hpp"
#include "gduap/rng.hpp"
#include "gduap/tensor.hpp"

namespace gduap {

struct Sample {
  Image image;
  int label = -1;  // classification label, -1 when absent
  LabelMap mask;   // per-pixel labels, empty when absent
};

struct Corpus {
  std::string id;
  int num_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<Image> images() const {
    std::vector<Image> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image);
    return out;
  }
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }
  Corpus head(std::size_t n) const {
    Corpus c{id, num_classes, {}};
    c.samples.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(std::min(n, samples.size())));
    return c;
  }
};

// Per-channel mean over all pixels of a corpus.
inline std::vector<double> channel_mean(const Corpus& c) {
  if (c.empty()) throw IngestionError("channel_mean of an empty corpus");
  const int C = c.samples[0].image.shape[2];
  std::vector<double> sum(C, 0.0);
  std::size_t n = 0;
  for (const auto& s : c.samples) {
    for (std::size_t i = 0; i < s.image.size(); ++i) sum[i % C] += s.image[i];
    n += s.image.size() / C;
  }
  for (auto& v : sum) v /= static_cast<double>(n);
  return sum;
}

namespace synth {

namespace detail {

struct Canvas {
  Image img;
  int H, W;
  explicit Canvas(int h, int w) : img({h, w, 3}), H(h), W(w) {}
  void put(int y, int x, const std::array<double, 3>& col) {
    for (int c = 0; c < 3; ++c) img[(y * W + x) * 3 + c] = static_cast<float>(col[c]);
  }
};

// Smooth background: base colour plus a random linear ramp.
inline void paint_background(Canvas& cv, Rng& rng, std::array<double, 3>& base) {
  for (auto& b : base) b = uniform(rng, 50, 205);
  const double gy = uniform(rng, -1.2, 1.2), gx = uniform(rng, -1.2, 1.2);
  for (int y = 0; y < cv.H; ++y)
    for (int x = 0; x < cv.W; ++x) {
      std::array<double, 3> col;
      for (int c = 0; c < 3; ++c) col[c] = base[c] + gy * (y - cv.H / 2.0) + gx * (x - cv.W / 2.0);
      cv.put(y, x, col);
    }
}

inline std::array<double, 3> contrasting(Rng& rng, const std::array<double, 3>& base) {
  std::array<double, 3> col;
  const double sign = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
  for (int c = 0; c < 3; ++c) col[c] = std::clamp(base[c] + sign * uniform(rng, 15, 40), 0.0, 255.0);
  return col;
}

inline void add_noise(Image& im, Rng& rng, double sigma) {
  std::normal_distribution<double> n(0, sigma);
  for (auto& v : im.data) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 255.0));
}

// Inside-test for the ten desk shape classes, in coordinates relative to the
// shape centre (u, v) with half-size s.
inline bool desk_inside(int cls, double u, double v, double s, double phase) {
  const double au = std::abs(u), av = std::abs(v);
  switch (cls) {
    case 0: return u * u + v * v <= s * s;                                   // disk
    case 1: return au <= s * 0.85 && av <= s * 0.85;                         // square
    case 2: return v <= s * 0.8 && v >= -s * 0.8 && au <= (v + s * 0.8) * 0.6;  // triangle
    case 3: return (au <= s * 0.3 && av <= s) || (av <= s * 0.3 && au <= s);  // plus
    case 4: return au <= s && av <= s && std::fmod(v + s + phase + 64, 6.0) < 3.0;  // horizontal bars
    case 5: return au <= s && av <= s && std::fmod(u + s + phase + 64, 6.0) < 3.0;  // vertical bars
    case 6: {                                                                 // ring
      const double r2 = u * u + v * v;
      return r2 <= s * s && r2 >= (s * 0.55) * (s * 0.55);
    }
    case 7: return au <= s && av <= s && (std::abs(u - v) <= s * 0.3 || std::abs(u + v) <= s * 0.3);  // X
    case 8: return au <= s && av <= s &&                                      // checkerboard
                   (static_cast<int>(std::floor((u + 64) / 4)) + static_cast<int>(std::floor((v + 64) / 4))) % 2 == 0;
    case 9: return au <= s && av <= s && (au >= s * 0.6 || av >= s * 0.6);  // frame
  }
  return false;
}

}  // namespace detail

// Ten-class 32x32 RGB shapes dataset. Labels cycle through the classes so any
// prefix is class-balanced.
inline Corpus desk10(std::size_t count, std::uint64_t seed, int size = 32) {
  Corpus c{"desk10-s" + std::to_string(seed), 10, {}};
  c.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    const int cls = static_cast<int>(i % 10);
    detail::Canvas cv(size, size);
    std::array<double, 3> base{};
    detail::paint_background(cv, rng, base);
    const auto fg = detail::contrasting(rng, base);
    const double s = uniform(rng, 0.26, 0.4) * size;
    const double cy = size / 2.0 + uniform(rng, -0.12, 0.12) * size;
    const double cx = size / 2.0 + uniform(rng, -0.12, 0.12) * size;
    const double phase = uniform(rng, 0, 6);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (detail::desk_inside(cls, x + 0.5 - cx, y + 0.5 - cy, s, phase)) cv.put(y, x, fg);
    detail::add_noise(cv.img, rng, 6.0);
    c.samples.push_back({std::move(cv.img), cls, {}});
  }
  return c;
}

// Unrelated natural-ish images (overlapping blobs on textured ground) used as
// the substitute validation set. Unlabelled.
inline Corpus substitute(std::size_t count, std::uint64_t seed, int size = 32) {
  Corpus c{"substitute-s" + std::to_string(seed), 0, {}};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed ^ 0x5AB5ull, i));
    detail::Canvas cv(size, size);
    std::array<double, 3> base{};
    detail::paint_background(cv, rng, base);
    const int blobs = uniform_int(rng, 2, 5);
    for (int b = 0; b < blobs; ++b) {
      std::array<double, 3> col;
      for (auto& v : col) v = uniform(rng, 20, 235);
      const double cy = uniform(rng, 0, size), cx = uniform(rng, 0, size);
      const double ry = uniform(rng, 3, size / 2.5), rx = uniform(rng, 3, size / 2.5);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) cv.put(y, x, col);
        }
    }
    detail::add_noise(cv.img, rng, 10.0);
    c.samples.push_back({std::move(cv.img), -1, {}});
  }
  return c;
}

// Segmentation toy set: class 0 is background, 1..3 are disk/square/triangle.
inline Corpus toyseg(std::size_t count, std::uint64_t seed, int size = 32) {
  Corpus c{"toyseg-s" + std::to_string(seed), 4, {}};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed ^ 0x7E6ull, i));
    detail::Canvas cv(size, size);
    std::array<double, 3> base{};
    detail::paint_background(cv, rng, base);
    LabelMap mask(static_cast<std::size_t>(size) * size, 0);
    const int shapes = uniform_int(rng, 1, 3);
    for (int k = 0; k < shapes; ++k) {
      const int cls = uniform_int(rng, 1, 3);
      const auto fg = detail::contrasting(rng, base);
      const double s = uniform(rng, 0.15, 0.42) * size;
      const double cy = uniform(rng, 0.25, 0.75) * size, cx = uniform(rng, 0.25, 0.75) * size;
      const int shape_code = cls == 1 ? 0 : cls == 2 ? 1 : 2;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (detail::desk_inside(shape_code, x + 0.5 - cx, y + 0.5 - cy, s, 0)) {
            cv.put(y, x, fg);
            mask[static_cast<std::size_t>(y) * size + x] = cls;
          }
    }
    detail::add_noise(cv.img, rng, 6.0);
    c.samples.push_back({std::move(cv.img), -1, std::move(mask)});
  }
  return c;
}

}  // namespace synth

// ---------------------------------------------------------------------------
// Manifest format:
//   {"dataset_id": str, "num_classes": int,
//    "entries": [{"image_path": str, "label_path": str|null, "label": int|null,
//                 "split": "train"|"test"|...}, ...]}
// Paths are relative to the manifest's directory. Label maps are 8-bit
// single-channel PNGs holding class indices.

inline Corpus load_split(const std::filesystem::path& root, const std::string& split) {
  const auto manifest_path = std::filesystem::is_directory(root) ? root / "manifest.json" : root;
  const auto dir = manifest_path.parent_path();
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  Corpus c{m.value("dataset_id", manifest_path.string()) + ":" + split, m.value("num_classes", 0), {}};
  for (const auto& e : m.at("entries")) {
    if (e.value("split", std::string{}) != split) continue;
    const auto img_path = dir / e.at("image_path").get<std::string>();
    cv::Mat mat = cv::imread(img_path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw IngestionError("cannot decode image '" + img_path.string() + "'");
    if (mat.channels() == 4) cv::cvtColor(mat, mat, cv::COLOR_BGRA2BGR);
    Sample s{img::from_mat_u8(mat), -1, {}};
    if (e.contains("label") && !e["label"].is_null()) s.label = e["label"].get<int>();
    if (e.contains("label_path") && !e["label_path"].is_null()) {
      const auto lp = dir / e["label_path"].get<std::string>();
      cv::Mat lm = cv::imread(lp.string(), cv::IMREAD_GRAYSCALE);
      if (lm.empty()) throw IngestionError("cannot decode label map '" + lp.string() + "'");
      s.mask.assign(lm.begin<unsigned char>(), lm.end<unsigned char>());
    }
    c.samples.push_back(std::move(s));
  }
  return c;
}

// Writes every (split, corpus) pair under `root` and a manifest listing them.
inline void write_dataset(const std::filesystem::path& root, const std::string& dataset_id,
                          const std::vector<std::pair<std::string, const Corpus*>>& splits) {
  std::filesystem::create_directories(root / "images");
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  int num_classes = 0;
  for (const auto& [split, corpus] : splits) {
    num_classes = std::max(num_classes, corpus->num_classes);
    for (std::size_t i = 0; i < corpus->size(); ++i) {
      const auto& s = corpus->samples[i];
      const std::string stem = split + "_" + std::to_string(i);
      const std::string ip = "images/" + stem + ".png";
      if (!cv::imwrite((root / ip).string(), img::to_mat_u8(s.image)))
        throw IngestionError("cannot write '" + (root / ip).string() + "'");
      nlohmann::ordered_json e{{"image_path", ip}, {"label_path", nullptr}, {"label", nullptr}, {"split", split}};
      if (s.label >= 0) e["label"] = s.label;
      if (!s.mask.empty()) {
        const std::string lp = "images/" + stem + "_label.png";
        cv::Mat lm(s.image.shape[0], s.image.shape[1], CV_8UC1);
        std::copy(s.mask.begin(), s.mask.end(), lm.begin<unsigned char>());
        cv::imwrite((root / lp).string(), lm);
        e["label_path"] = lp;
      }
      entries.push_back(std::move(e));
    }
  }
  nlohmann::ordered_json m{{"dataset_id", dataset_id}, {"num_classes", num_classes}, {"entries", entries}};
  io::write_file(root / "manifest.json", m.dump(2) + "\n");
}

}  // namespace gduap
