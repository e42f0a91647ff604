#pragma once

// Fooling rate, generalized fooling rate GFR(M) = (R - M(y_adv, y_clean)) / R,
// and the task metrics it is instantiated with.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gduap/errors.hpp"
#include "gduap/model_adapter.hpp"

namespace gduap::metrics {

enum class Direction { higher_better, lower_better };

struct MetricSpec {
  std::string name;
  double range_max = 1.0;
  Direction direction = Direction::higher_better;
};

inline const MetricSpec kTop1{"top1", 1.0, Direction::higher_better};
inline const MetricSpec kMeanIoU{"miou", 1.0, Direction::higher_better};

// GFR from an already-evaluated metric value.
inline double gfr_from_value(const MetricSpec& spec, double value) {
  if (spec.direction != Direction::higher_better)
    throw ContractError("GFR is only defined for higher-is-better metrics ('" + spec.name + "')");
  if (!(spec.range_max > 0)) throw ContractError("GFR needs a positive metric range");
  return (spec.range_max - value) / spec.range_max;
}

// GFR of `metric(pred_adv, pred_clean)`; no ground truth is involved.
template <class Pred, class Metric>
double gfr(const MetricSpec& spec, const std::vector<Pred>& pred_adv, const std::vector<Pred>& pred_clean,
           Metric&& metric) {
  if (pred_adv.size() != pred_clean.size()) throw ContractError("GFR: prediction sets differ in length");
  if (pred_adv.empty()) throw ContractError("GFR: empty prediction sets");
  return gfr_from_value(spec, metric(pred_adv, pred_clean));
}

inline double top1(const std::vector<int>& pred, const std::vector<int>& ref) {
  if (pred.size() != ref.size()) throw ContractError("top1: length mismatch");
  if (pred.empty()) throw ContractError("top1: empty input");
  std::size_t same = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) same += pred[i] == ref[i];
  return static_cast<double>(same) / static_cast<double>(pred.size());
}

// Fraction of inputs whose label changed: GFR(Top1).
inline double fooling_rate(const std::vector<int>& labels_adv, const std::vector<int>& labels_clean) {
  return gfr(kTop1, labels_adv, labels_clean, top1);
}

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<long long> counts;  // [ref][pred]

  explicit ConfusionMatrix(int c) : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  void add(const LabelMap& pred, const LabelMap& ref) {
    if (pred.size() != ref.size()) throw ContractError("miou: map size mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] < 0 || pred[i] >= num_classes || ref[i] < 0 || ref[i] >= num_classes)
        throw InvalidInput("miou: label outside [0, num_classes)");
      ++counts[static_cast<std::size_t>(ref[i]) * num_classes + pred[i]];
    }
  }
  long long at(int ref, int pred) const { return counts[static_cast<std::size_t>(ref) * num_classes + pred]; }
};

// Mean IoU over classes from a confusion matrix accumulated over all maps.
// Classes absent from both prediction and reference are excluded unless
// `strict`, in which case they score 0 and the mean runs over every class.
inline double miou(const std::vector<LabelMap>& pred_maps, const std::vector<LabelMap>& ref_maps, int num_classes,
                   bool strict = false) {
  if (pred_maps.size() != ref_maps.size()) throw ContractError("miou: map count mismatch");
  if (num_classes < 1) throw InvalidInput("miou: num_classes must be positive");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < pred_maps.size(); ++i) cm.add(pred_maps[i], ref_maps[i]);
  double sum = 0;
  int valid = 0;
  for (int c = 0; c < num_classes; ++c) {
    long long tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const long long denom = tp + fp + fn;
    if (denom == 0) {
      if (strict) ++valid;
      continue;
    }
    sum += static_cast<double>(tp) / static_cast<double>(denom);
    ++valid;
  }
  if (valid == 0) throw UndefinedMetric("miou: no class present in either map set");
  return sum / valid;
}

inline double gfr_miou(const std::vector<LabelMap>& adv, const std::vector<LabelMap>& clean, int num_classes) {
  return gfr(kMeanIoU, adv, clean,
             [&](const auto& a, const auto& c) { return miou(a, c, num_classes); });
}

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // thresholds 1.25, 1.25^2, 1.25^3
};

namespace detail {
inline void check_depths(const std::vector<double>& pred, const std::vector<double>& ref) {
  if (pred.size() != ref.size() || pred.empty()) throw ContractError("depth metrics: size mismatch or empty");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!(pred[i] > 0) || !(ref[i] > 0)) throw ContractError("depth metrics need strictly positive depths");
}
}  // namespace detail

inline double delta_accuracy(const std::vector<double>& pred, const std::vector<double>& ref, double threshold) {
  detail::check_depths(pred, ref);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += std::max(pred[i] / ref[i], ref[i] / pred[i]) < threshold;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

inline DepthMetrics depth_metrics(const std::vector<double>& pred, const std::vector<double>& ref) {
  detail::check_depths(pred, ref);
  DepthMetrics m;
  const double n = static_cast<double>(pred.size());
  double se = 0, sel = 0;
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], r = ref[i], d = p - r;
    m.abs_rel += std::abs(d) / r;
    m.sq_rel += d * d / r;
    se += d * d;
    const double dl = std::log(p) - std::log(r);
    sel += dl * dl;
    const double ratio = std::max(p / r, r / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(se / n);
  m.rmse_log = std::sqrt(sel / n);
  m.delta1 = static_cast<double>(d1) / n;
  m.delta2 = static_cast<double>(d2) / n;
  m.delta3 = static_cast<double>(d3) / n;
  return m;
}

// GFR w.r.t. the delta-threshold accuracy between adversarial and clean
// depth predictions (R = 1).
inline double gfr_depth(const std::vector<double>& pred_adv, const std::vector<double>& pred_clean,
                        double threshold = 1.25) {
  return gfr(MetricSpec{"delta<" + std::to_string(threshold), 1.0, Direction::higher_better}, std::vector<std::vector<double>>{pred_adv},
             std::vector<std::vector<double>>{pred_clean},
             [&](const auto& a, const auto& c) { return delta_accuracy(a[0], c[0], threshold); });
}

// Decimal value with 6 significant digits.
inline double round6(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

struct MetricReport {
  std::map<std::string, double> clean;
  std::map<std::string, double> adversarial;
  std::map<std::string, double> gfr;
  std::size_t n_samples = 0;

  nlohmann::ordered_json to_json() const {
    if (n_samples == 0) throw ContractError("metric report without samples");
    auto section = [](const std::map<std::string, double>& m) {
      nlohmann::ordered_json j = nlohmann::ordered_json::object();
      for (const auto& [k, v] : m) j[k] = round6(v);
      return j;
    };
    return {{"n_samples", n_samples}, {"clean", section(clean)}, {"adversarial", section(adversarial)},
            {"gfr", section(gfr)}};
  }

  static MetricReport from_json(const nlohmann::json& j) {
    MetricReport r;
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.clean = j.at("clean").get<std::map<std::string, double>>();
    r.adversarial = j.at("adversarial").get<std::map<std::string, double>>();
    r.gfr = j.at("gfr").get<std::map<std::string, double>>();
    return r;
  }
};

}  // namespace gduap::metrics
