#pragma once

// Input-transformation defense harness. Each row of a grid reports clean
// accuracy under the transform and, per perturbation, the fooling rate of
// defended-adversarial against defended-clean predictions.

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gduap/crafting.hpp"
#include "gduap/errors.hpp"
#include "gduap/image_ops.hpp"
#include "gduap/metrics.hpp"
#include "gduap/model_adapter.hpp"

namespace gduap::defense {

enum class Kind { none, ten_crop, gaussian_smooth, median_smooth, bilateral, bit_reduce, jpeg };

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::none: return "none";
    case Kind::ten_crop: return "ten_crop";
    case Kind::gaussian_smooth: return "gaussian_smooth";
    case Kind::median_smooth: return "median_smooth";
    case Kind::bilateral: return "bilateral";
    case Kind::bit_reduce: return "bit_reduce";
    case Kind::jpeg: return "jpeg";
  }
  return "none";
}

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : {Kind::none, Kind::ten_crop, Kind::gaussian_smooth, Kind::median_smooth, Kind::bilateral,
                 Kind::bit_reduce, Kind::jpeg})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown transform '" + s + "'");
}

struct TransformSpec {
  Kind kind = Kind::none;
  double sigma = 1.0;           // gaussian_smooth
  int window = 3;               // median_smooth
  double sigma_spatial = 3.0;   // bilateral
  double sigma_range = 30.0;    // bilateral
  int bits = 3;                 // bit_reduce
  int quality = 75;             // jpeg
  double crop_fraction = 0.875; // ten_crop

  void validate() const {
    switch (kind) {
      case Kind::gaussian_smooth:
        if (!(sigma >= 0)) throw ConfigError("gaussian_smooth sigma must be >= 0");
        break;
      case Kind::median_smooth:
        if (window < 1 || window % 2 == 0) throw ConfigError("median_smooth window must be odd and >= 1");
        break;
      case Kind::bilateral:
        if (!(sigma_spatial > 0) || !(sigma_range > 0)) throw ConfigError("bilateral sigmas must be positive");
        break;
      case Kind::bit_reduce:
        if (bits < 1 || bits > 7) throw ConfigError("bit_reduce bits must be in [1,7]");
        break;
      case Kind::jpeg:
        if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must be in [1,100]");
        break;
      case Kind::ten_crop:
        if (!(crop_fraction > 0 && crop_fraction <= 1)) throw ConfigError("ten_crop fraction must be in (0,1]");
        break;
      case Kind::none:
        break;
    }
  }

  std::string name() const { return to_string(kind); }

  std::string params() const {
    char buf[96];
    switch (kind) {
      case Kind::gaussian_smooth: std::snprintf(buf, sizeof buf, "sigma=%g", sigma); break;
      case Kind::median_smooth: std::snprintf(buf, sizeof buf, "window=%d", window); break;
      case Kind::bilateral:
        std::snprintf(buf, sizeof buf, "sigma_spatial=%g;sigma_range=%g", sigma_spatial, sigma_range);
        break;
      case Kind::bit_reduce: std::snprintf(buf, sizeof buf, "bits=%d", bits); break;
      case Kind::jpeg: std::snprintf(buf, sizeof buf, "quality=%d", quality); break;
      case Kind::ten_crop: std::snprintf(buf, sizeof buf, "crop_fraction=%g", crop_fraction); break;
      case Kind::none: buf[0] = '\0'; break;
    }
    return buf;
  }
};

inline Image apply(const TransformSpec& t, const Image& x) {
  t.validate();
  switch (t.kind) {
    case Kind::none:
    case Kind::ten_crop:  // cropping happens at scoring time
      return x;
    case Kind::gaussian_smooth: return img::clamp_pixels(img::gaussian_blur(x, t.sigma));
    case Kind::median_smooth: return img::median_filter(x, t.window);
    case Kind::bilateral: return img::clamp_pixels(img::bilateral_filter(x, t.sigma_spatial, t.sigma_range));
    case Kind::bit_reduce: return img::bit_reduce(x, t.bits);
    case Kind::jpeg: return img::jpeg_roundtrip(x, t.quality);
  }
  return x;
}

inline std::vector<Image> apply(const TransformSpec& t, const std::vector<Image>& batch) {
  std::vector<Image> out;
  out.reserve(batch.size());
  for (const auto& x : batch) out.push_back(apply(t, x));
  return out;
}

// The ten views: four corners and the centre, each also mirrored, resized
// back to the input resolution.
inline std::vector<Image> ten_crop_views(const Image& x, double fraction) {
  const int H = x.shape[0], W = x.shape[1];
  const int h = std::max(1, static_cast<int>(std::lround(H * fraction)));
  const int w = std::max(1, static_cast<int>(std::lround(W * fraction)));
  const std::pair<int, int> corners[] = {{0, 0}, {0, W - w}, {H - h, 0}, {H - h, W - w}, {(H - h) / 2, (W - w) / 2}};
  std::vector<Image> views;
  for (const auto& [y, x0] : corners) {
    Image c = img::resize_bilinear(img::crop(x, y, x0, h, w), H, W);
    views.push_back(img::flip_horizontal(c));
    views.push_back(std::move(c));
  }
  return views;
}

// Prediction of the defended model for one input.
inline LabelMap defended_predict(const ModelAdapter& model, const TransformSpec& t, const Image& x) {
  if (t.kind != Kind::ten_crop) return model.forward({apply(t, x)})[0];
  if (model.task() != Task::classification) throw ContractError("ten_crop is defined for classifiers only");
  Tensor<float> avg;
  for (const auto& v : ten_crop_views(x, t.crop_fraction)) {
    auto s = model.scores(v);
    if (avg.empty())
      avg = std::move(s);
    else
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += s[i];
  }
  for (auto& v : avg.data) v /= 10.0f;
  return model.labels_from_scores(avg);
}

struct LabeledPerturbation {
  std::string name;
  const Perturbation* perturbation;
};

struct DefenseRow {
  std::string transform;
  std::string params;
  double clean_metric = 0;  // top-1 for classifiers, mIoU for segmentation
  std::vector<double> fooling;
};

struct DefenseGrid {
  std::vector<std::string> perturbation_names;
  std::vector<DefenseRow> rows;
};

// Clean metric under the defense, and per perturbation the fooling rate of
// defended(x + delta) against defended(x).
inline DefenseRow evaluate_defended(const ModelAdapter& model, const TransformSpec& t,
                                    const std::vector<LabeledPerturbation>& perturbations, const Corpus& test_set) {
  if (test_set.empty()) throw ContractError("defense evaluation needs a nonempty test set");
  t.validate();
  for (const auto& p : perturbations)
    if (p.perturbation->shape() != model.input_shape())
      throw ContractError("perturbation '" + p.name + "' does not match the model input");
  DefenseRow row{t.name(), t.params(), 0, {}};
  std::vector<LabelMap> clean;
  for (const auto& s : test_set.samples) clean.push_back(defended_predict(model, t, s.image));

  auto fooling = [&](const std::vector<LabelMap>& adv) {
    if (model.task() == Task::classification) {
      std::vector<int> a, c;
      for (std::size_t i = 0; i < adv.size(); ++i) {
        a.push_back(adv[i][0]);
        c.push_back(clean[i][0]);
      }
      return metrics::fooling_rate(a, c);
    }
    return metrics::gfr_miou(adv, clean, model.num_classes());
  };

  if (model.task() == Task::classification) {
    std::vector<int> pred;
    for (const auto& c : clean) pred.push_back(c[0]);
    row.clean_metric = metrics::top1(pred, test_set.labels());
  } else {
    std::vector<LabelMap> ref;
    for (const auto& s : test_set.samples) ref.push_back(s.mask);
    row.clean_metric = metrics::miou(clean, ref, model.num_classes());
  }
  for (const auto& p : perturbations) {
    std::vector<LabelMap> adv;
    for (const auto& s : test_set.samples)
      adv.push_back(defended_predict(model, t, add_clipped(s.image, p.perturbation->delta)));
    row.fooling.push_back(fooling(adv));
  }
  return row;
}

inline DefenseGrid evaluate_grid(const ModelAdapter& model, const std::vector<TransformSpec>& transforms,
                                 const std::vector<LabeledPerturbation>& perturbations, const Corpus& test_set) {
  DefenseGrid g;
  for (const auto& p : perturbations) g.perturbation_names.push_back(p.name);
  for (const auto& t : transforms) g.rows.push_back(evaluate_defended(model, t, perturbations, test_set));
  return g;
}

// ---------------------------------------------------------------------------
// CSV: transform,params,clean_top1,<one fooling column per perturbation>.

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string to_csv(const DefenseGrid& g) {
  std::ostringstream os;
  os << "transform,params,clean_top1";
  for (const auto& n : g.perturbation_names) os << ',' << n;
  os << '\n';
  for (const auto& r : g.rows) {
    os << r.transform << ',' << r.params << ',' << format_value(r.clean_metric);
    for (double f : r.fooling) os << ',' << format_value(f);
    os << '\n';
  }
  return os.str();
}

namespace detail {
inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline bool is_identifier(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}
}  // namespace detail

// Parses and validates a grid CSV: header layout, known transform names,
// parameter syntax and numeric cells in [0,1]. Throws FormatError with the
// offending line number.
inline DefenseGrid parse_grid_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  DefenseGrid g;
  auto fail = [&](const std::string& why) { throw FormatError("grid csv line " + std::to_string(lineno) + ": " + why); };
  if (!std::getline(is, line)) throw FormatError("grid csv is empty");
  ++lineno;
  const auto header = detail::split(line, ',');
  if (header.size() < 3 || header[0] != "transform" || header[1] != "params" || header[2] != "clean_top1")
    fail("header must start with transform,params,clean_top1");
  for (std::size_t i = 3; i < header.size(); ++i) {
    if (!detail::is_identifier(header[i])) fail("bad perturbation column name '" + header[i] + "'");
    g.perturbation_names.push_back(header[i]);
  }
  while (std::getline(is, line)) {
    ++lineno;
    const auto cells = detail::split(line, ',');
    if (cells.size() != header.size()) fail("expected " + std::to_string(header.size()) + " cells");
    DefenseRow r;
    try {
      kind_from_string(cells[0]);
    } catch (const ConfigError&) {
      fail("unknown transform '" + cells[0] + "'");
    }
    r.transform = cells[0];
    if (!cells[1].empty())
      for (const auto& kv : detail::split(cells[1], ';')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == kv.size()) fail("bad parameter '" + kv + "'");
      }
    r.params = cells[1];
    auto number = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || end != s.c_str() + s.size()) fail("not a number: '" + s + "'");
      if (!(v >= 0.0 && v <= 1.0)) fail("value outside [0,1]: " + s);
      return v;
    };
    r.clean_metric = number(cells[2]);
    for (std::size_t i = 3; i < cells.size(); ++i) r.fooling.push_back(number(cells[i]));
    g.rows.push_back(std::move(r));
  }
  return g;
}

}  // namespace gduap::defense
