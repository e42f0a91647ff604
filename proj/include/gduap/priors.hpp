#pragma once

// Optimization-time input streams: zeros (no prior), Gaussian pseudo-data
// cropped from a double-size canvas (range prior) and real samples (data
// prior), plus the "less background" curation for segmentation corpora.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gduap/datasets.hpp"
#include "gduap/errors.hpp"
#include "gduap/image_ops.hpp"
#include "gduap/rng.hpp"
#include "gduap/tensor.hpp"

namespace gduap {

enum class PriorMode { none, range, data };

inline const char* to_string(PriorMode m) {
  switch (m) {
    case PriorMode::none: return "none";
    case PriorMode::range: return "range";
    case PriorMode::data: return "data";
  }
  return "none";
}

inline PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "none") return PriorMode::none;
  if (s == "range") return PriorMode::range;
  if (s == "data") return PriorMode::data;
  throw ConfigError("unknown prior mode '" + s + "'");
}

// Two-sided 99.9% quantile of the standard normal.
inline constexpr double kNormalQuantile999 = 3.2905;

struct AugmentSpec {
  bool enabled = true;
  bool crop = true;
  std::array<double, 2> blur_sigma_range{0.0, 3.0};
  std::array<double, 2> rotation_degrees_range{-10.0, 10.0};

  void validate() const {
    if (blur_sigma_range[0] > blur_sigma_range[1] || blur_sigma_range[0] < 0)
      throw ConfigError("blur_sigma_range must be a nonempty range of nonnegative values");
    if (rotation_degrees_range[0] > rotation_degrees_range[1])
      throw ConfigError("rotation_degrees_range must be nonempty");
  }
};

class PriorSource {
 public:
  PriorMode mode() const { return mode_; }
  const InputShape& input_shape() const { return shape_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& sigma() const { return sigma_; }
  const Image& canvas() const { return canvas_; }
  const AugmentSpec& augment() const { return augment_; }

  static PriorSource none(const InputShape& shape) {
    PriorSource p;
    p.mode_ = PriorMode::none;
    p.shape_ = shape;
    return p;
  }

  // d ~ N(mean, sigma) with sigma = min(mean, 255 - mean) / 3.2905 per
  // channel, so 99.9% of the canvas lies inside [0,255].
  static PriorSource range(std::vector<double> mean, const InputShape& shape, std::uint64_t seed,
                           AugmentSpec augment = {}) {
    if (static_cast<int>(mean.size()) != shape.channels)
      throw ConfigError("range prior needs one mean per channel");
    augment.validate();
    PriorSource p;
    p.mode_ = PriorMode::range;
    p.shape_ = shape;
    p.augment_ = augment;
    for (double m : mean) {
      if (!(m > 0.0 && m < 255.0)) throw DegenerateSigma("range prior mean must lie strictly inside (0,255)");
      p.sigma_.push_back(std::min(m, 255.0 - m) / kNormalQuantile999);
    }
    p.mean_ = std::move(mean);
    p.canvas_ = Image({2 * shape.height, 2 * shape.width, shape.channels});
    Rng rng(mix_seed(seed, 0xCA57A5));
    std::normal_distribution<double> n01(0.0, 1.0);
    const int C = shape.channels;
    for (std::size_t i = 0; i < p.canvas_.size(); ++i)
      p.canvas_[i] = static_cast<float>(p.mean_[i % C] + p.sigma_[i % C] * n01(rng));
    return p;
  }

  // Cycles through `stream` in order, restarting at the end. Augmentation is
  // off unless requested.
  static PriorSource data(Corpus stream, const InputShape& shape, AugmentSpec augment = {false}) {
    if (stream.empty()) throw IngestionError("data prior stream is empty");
    augment.validate();
    for (const auto& s : stream.samples)
      if (image_shape(s.image) != shape) throw IngestionError("data prior image does not match victim input");
    PriorSource p;
    p.mode_ = PriorMode::data;
    p.shape_ = shape;
    p.augment_ = augment;
    p.stream_ = std::move(stream);
    return p;
  }

  // Top-left corner of a crop window inside the canvas, uniform over every
  // valid position.
  std::pair<int, int> draw_crop(Rng& rng) const {
    if (!augment_.enabled || !augment_.crop) return {0, 0};
    return {uniform_int(rng, 0, canvas_.shape[0] - shape_.height),
            uniform_int(rng, 0, canvas_.shape[1] - shape_.width)};
  }

  std::vector<Image> sample(std::size_t batch_size, Rng& rng) {
    std::vector<Image> out;
    out.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
      switch (mode_) {
        case PriorMode::none:
          out.push_back(make_image(shape_));
          break;
        case PriorMode::range: {
          const auto [y, x] = draw_crop(rng);
          out.push_back(augmented(img::crop(canvas_, y, x, shape_.height, shape_.width), rng));
          break;
        }
        case PriorMode::data:
          out.push_back(augmented(stream_.samples[cursor_].image, rng));
          cursor_ = (cursor_ + 1) % stream_.size();
          break;
      }
    }
    return out;
  }

 private:
  Image augmented(Image im, Rng& rng) const {
    if (!augment_.enabled) return im;
    const auto& rr = augment_.rotation_degrees_range;
    const auto& br = augment_.blur_sigma_range;
    const double angle = rr[0] == rr[1] ? rr[0] : uniform(rng, rr[0], rr[1]);
    const double sigma = br[0] == br[1] ? br[0] : uniform(rng, br[0], br[1]);
    return img::gaussian_blur(img::rotate(im, angle), sigma);
  }

  PriorMode mode_ = PriorMode::none;
  InputShape shape_;
  std::vector<double> mean_, sigma_;
  Image canvas_;
  AugmentSpec augment_;
  Corpus stream_;
  std::size_t cursor_ = 0;
};

struct CurationStats {
  std::size_t kept = 0;
  std::size_t total = 0;
  double background_fraction_before = 0;
  double background_fraction_after = 0;
};

// Keeps samples whose background-pixel fraction is below `threshold`.
inline Corpus curate_less_bg(const Corpus& data, int bg_class, double threshold = 0.5,
                             CurationStats* stats = nullptr) {
  CurationStats st;
  st.total = data.size();
  Corpus out{data.id + ":less_bg", data.num_classes, {}};
  std::size_t bg_all = 0, px_all = 0, bg_kept = 0, px_kept = 0;
  for (const auto& s : data.samples) {
    if (s.mask.empty()) throw IngestionError("curate_less_bg needs per-pixel labels");
    const auto bg = static_cast<std::size_t>(std::count(s.mask.begin(), s.mask.end(), bg_class));
    bg_all += bg;
    px_all += s.mask.size();
    if (static_cast<double>(bg) < threshold * static_cast<double>(s.mask.size())) {
      bg_kept += bg;
      px_kept += s.mask.size();
      out.samples.push_back(s);
    }
  }
  st.kept = out.size();
  st.background_fraction_before = px_all ? static_cast<double>(bg_all) / px_all : 0.0;
  st.background_fraction_after = px_kept ? static_cast<double>(bg_kept) / px_kept : 0.0;
  if (stats) *stats = st;
  if (out.empty())
    throw CurationError("no sample below background fraction " + std::to_string(threshold) + " (0 of " +
                        std::to_string(st.total) + " kept, corpus background fraction " +
                        std::to_string(st.background_fraction_before) + ")");
  return out;
}

}  // namespace gduap
