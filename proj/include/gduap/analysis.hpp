#pragma once

// Representation-level studies of a crafted perturbation: per-layer relative
// activation shift, the ||f(x+d)-f(x)|| vs ||f(d)|| correlation over a
// crafting run, and relative shift at the classifier input vs fooling rate.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gduap/crafting.hpp"
#include "gduap/errors.hpp"
#include "gduap/model_adapter.hpp"
#include "gduap/tensor.hpp"

namespace gduap::analysis {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw UndefinedMetric("pearson needs two equal-length series of size >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw UndefinedMetric("pearson of a constant series");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Ranks starting at 1; ties share their average rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks(a), ranks(b));
}

namespace detail {
inline double l2_span(const float* p, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(p[i]) * p[i];
  return std::sqrt(s);
}
inline double l2_diff_span(const float* p, const float* q, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - q[i];
    s += d * d;
  }
  return std::sqrt(s);
}
}  // namespace detail

// ---------------------------------------------------------------------------

struct ShiftProfile {
  std::vector<std::pair<std::string, double>> per_layer;  // percent
  std::size_t n_samples = 0;
  std::vector<std::size_t> skipped;  // per layer, zero-norm clean activations
};

// Conv, block_end and dense layers in execution order.
inline std::vector<std::string> profile_layers(const ModelAdapter& m) {
  std::vector<std::string> ids = m.catalog().crafting_layers();
  for (const auto& n : m.network().nodes())
    if (n.op == nn::Op::dense) ids.push_back(n.id);
  std::sort(ids.begin(), ids.end(),
            [&](const auto& a, const auto& b) { return m.catalog().index_of(a) < m.catalog().index_of(b); });
  return ids;
}

// Mean over samples of 100 * ||l(x + d) - l(x)|| / ||l(x)|| per layer.
inline ShiftProfile layer_shift_profile(const ModelAdapter& model, const Image& delta, const std::vector<Image>& samples,
                                        const std::vector<std::string>& layer_ids) {
  if (samples.empty()) throw ContractError("layer shift profile needs a nonempty sample set");
  if (image_shape(delta) != model.input_shape()) throw ContractError("perturbation does not match the model input");
  ShiftProfile prof;
  prof.n_samples = samples.size();
  std::vector<double> sum(layer_ids.size(), 0.0);
  std::vector<std::size_t> used(layer_ids.size(), 0);
  prof.skipped.assign(layer_ids.size(), 0);
  for (const auto& x : samples) {
    const auto clean = model.activations({x}, layer_ids);
    const auto adv = model.activations({add_clipped(x, delta)}, layer_ids);
    for (std::size_t l = 0; l < layer_ids.size(); ++l) {
      const std::size_t n = clean[l].size();
      const double base = detail::l2_span(clean[l].data.data(), n);
      if (base == 0) {
        ++prof.skipped[l];
        continue;
      }
      sum[l] += 100.0 * detail::l2_diff_span(adv[l].data.data(), clean[l].data.data(), n) / base;
      ++used[l];
    }
  }
  for (std::size_t l = 0; l < layer_ids.size(); ++l)
    prof.per_layer.emplace_back(layer_ids[l], used[l] ? sum[l] / static_cast<double>(used[l]) : 0.0);
  return prof;
}

// Spearman correlation between layer depth (position in the list) and shift.
inline double depth_monotonicity(const ShiftProfile& p) {
  std::vector<double> depth, shift;
  for (std::size_t i = 0; i < p.per_layer.size(); ++i) {
    depth.push_back(static_cast<double>(i));
    shift.push_back(p.per_layer[i].second);
  }
  return spearman(depth, shift);
}

// ---------------------------------------------------------------------------

struct RecordedDelta {
  long iteration;
  Image delta;
};

// Crafting observer that keeps the perturbation at every iteration that
// triggers a rescale (i.e. just before the halving), plus a uniformly spaced
// fallback series.
class DeltaRecorder {
 public:
  explicit DeltaRecorder(long uniform_every = 100) : every_(std::max(1L, uniform_every)) {}

  CraftObserver observer() {
    return {[this](const IterationInfo& it) {
      if (it.rescale) pre_rescale_.push_back({it.iteration, it.delta});
      if (it.iteration % every_ == 0) uniform_.push_back({it.iteration, it.delta});
    }};
  }

  const std::vector<RecordedDelta>& pre_rescale() const { return pre_rescale_; }
  const std::vector<RecordedDelta>& uniform() const { return uniform_; }

 private:
  long every_;
  std::vector<RecordedDelta> pre_rescale_, uniform_;
};

struct CorrelationPoint {
  long iteration;
  double shift_norm;  // mean over x of ||f(x + d) - f(x)||
  double delta_norm;  // ||f(d)||
};

struct CorrelationTrace {
  std::vector<CorrelationPoint> points;
  std::optional<double> pearson_r;  // empty when degenerate
  bool degenerate = false;
  bool uniform_fallback = false;
  std::string layer_id;
};

inline std::string final_conv_layer(const ModelAdapter& m) {
  std::string id;
  for (const auto& n : m.network().nodes())
    if (n.op == nn::Op::conv && n.kind == LayerKind::conv) id = n.id;
  if (id.empty()) throw CatalogError("model has no conv layer");
  return id;
}

inline CorrelationTrace correlation_trace(const DeltaRecorder& rec, const ModelAdapter& model,
                                          const std::string& layer_id, const std::vector<Image>& held_out) {
  if (held_out.empty()) throw ContractError("correlation trace needs a held-out batch");
  CorrelationTrace tr;
  tr.layer_id = layer_id;
  const auto* series = &rec.pre_rescale();
  if (series->size() < 3) {
    series = &rec.uniform();
    tr.uniform_fallback = true;
  }
  if (series->size() < 3) throw ContractError("fewer than 3 recorded iterations");
  const auto clean = model.activations(held_out, {layer_id})[0];
  const std::size_t per = clean.size() / held_out.size();
  for (const auto& r : *series) {
    std::vector<Image> adv;
    for (const auto& x : held_out) adv.push_back(add_clipped(x, r.delta));
    const auto a = model.activations(adv, {layer_id})[0];
    double shift = 0;
    for (std::size_t b = 0; b < held_out.size(); ++b)
      shift += detail::l2_diff_span(a.data.data() + b * per, clean.data.data() + b * per, per);
    shift /= static_cast<double>(held_out.size());
    const auto fd = model.activations({r.delta}, {layer_id})[0];
    tr.points.push_back({r.iteration, shift, detail::l2_span(fd.data.data(), fd.size())});
  }
  std::vector<double> xs, ys;
  for (const auto& p : tr.points) {
    xs.push_back(p.shift_norm);
    ys.push_back(p.delta_norm);
  }
  try {
    tr.pearson_r = pearson(xs, ys);
  } catch (const UndefinedMetric&) {
    tr.degenerate = true;
  }
  return tr;
}

// ---------------------------------------------------------------------------

struct ShiftFoolingRow {
  std::string name;
  double relative_shift = 0;  // ||g(x+d) - g(x)|| / ||g(x)|| at the classifier input, mean over x
  double fooling_rate = 0;
};

// Layer feeding the final output node.
inline std::string classifier_input_layer(const ModelAdapter& m) {
  const auto& nodes = m.network().nodes();
  if (nodes.empty() || nodes.back().inputs.empty()) throw CatalogError("model has no output layer");
  return nodes[static_cast<std::size_t>(nodes.back().inputs[0])].id;
}

inline std::vector<ShiftFoolingRow> shift_vs_fooling_table(
    const ModelAdapter& model, const std::vector<std::pair<std::string, const Perturbation*>>& perturbations,
    const std::vector<Image>& test_set) {
  if (test_set.empty()) throw ContractError("shift table needs a nonempty test set");
  const std::string layer = classifier_input_layer(model);
  const auto clean_labels = model.forward(test_set);
  std::vector<ShiftFoolingRow> rows;
  for (const auto& [name, p] : perturbations) {
    if (p->shape() != model.input_shape()) throw ContractError("perturbation '" + name + "' does not match the model");
    const auto prof = layer_shift_profile(model, p->delta, test_set, {layer});
    rows.push_back({name, prof.per_layer[0].second / 100.0, evaluate_fooling(model, test_set, clean_labels, p->delta)});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.fooling_rate < b.fooling_rate; });
  return rows;
}

// ---------------------------------------------------------------------------
// CSV writers, values with 6 significant digits.

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string to_csv(const ShiftProfile& p) {
  std::ostringstream os;
  os << "layer_id,relative_shift_percent\n";
  for (const auto& [id, s] : p.per_layer) os << id << ',' << fmt6(s) << '\n';
  return os.str();
}

inline std::string to_csv(const CorrelationTrace& t) {
  std::ostringstream os;
  os << "iteration,shift_norm,delta_norm\n";
  for (const auto& p : t.points) os << p.iteration << ',' << fmt6(p.shift_norm) << ',' << fmt6(p.delta_norm) << '\n';
  return os.str();
}

inline std::string to_csv(const std::vector<ShiftFoolingRow>& rows) {
  std::ostringstream os;
  os << "perturbation,relative_shift,fooling_rate\n";
  for (const auto& r : rows) os << r.name << ',' << fmt6(r.relative_shift) << ',' << fmt6(r.fooling_rate) << '\n';
  return os.str();
}

}  // namespace gduap::analysis
