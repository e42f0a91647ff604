#pragma once

// Data-free universal perturbation crafting: activation-energy objective,
// Adam updates with max-norm clipping, saturation-driven rescaling and
// validation with patience-based stopping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gduap/datasets.hpp"
#include "gduap/errors.hpp"
#include "gduap/io.hpp"
#include "gduap/metrics.hpp"
#include "gduap/model_adapter.hpp"
#include "gduap/priors.hpp"
#include "gduap/rng.hpp"
#include "gduap/tensor.hpp"

namespace gduap {

enum class Aggregation { log_product, mean };

inline const char* to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "log_product"; }

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "log_product") return Aggregation::log_product;
  if (s == "mean") return Aggregation::mean;
  throw ConfigError("unknown aggregation '" + s + "'");
}

struct PerturbationMeta {
  std::string model_id;
  std::string prior_mode;  // none | range | data | baseline
  std::uint64_t seed = 0;
  long iterations_run = 0;
  double validation_fooling_rate = 0.0;

  friend bool operator==(const PerturbationMeta&, const PerturbationMeta&) = default;
};

struct Perturbation {
  Image delta;
  double xi = 10.0;
  PerturbationMeta meta;

  InputShape shape() const { return image_shape(delta); }
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

struct CraftConfig {
  double xi = 10.0;
  double lr = 0.1;
  double theta = 1e-5;
  int patience_H = 10;
  int val_every_saturating = 200;
  int val_every_quiet = 400;
  long max_iterations = 40000;
  PriorMode prior_mode = PriorMode::none;
  Aggregation aggregation = Aggregation::log_product;
  std::uint64_t seed = 0;
  int batch_size = 0;  // 0 -> 16 with a prior, 1 without

  int effective_batch_size() const {
    if (batch_size > 0) return batch_size;
    return prior_mode == PriorMode::none ? 1 : 16;
  }

  void validate() const {
    if (!(xi > 0)) throw ConfigError("xi must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (!(theta > 0)) throw ConfigError("theta must be positive");
    if (patience_H < 1) throw ConfigError("patience_H must be >= 1");
    if (val_every_saturating < 1 || val_every_quiet < 1) throw ConfigError("validation cadence must be >= 1");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
  }
};

// log(||l||_2 + eps) guard for the activation objective.
inline constexpr double kNormEpsilon = 1e-10;

// Objective over batched activations:
//   log_product: -sum_b sum_i log(||l_i(b)||_2 + eps)
//   mean:        -sum_b sum_i log(mean(l_i(b)) + eps)
template <class T>
ActivationObjective<T> activation_objective(std::vector<std::string> layer_ids, Aggregation aggregation) {
  if (layer_ids.empty()) throw ContractError("activation objective needs at least one layer");
  ActivationObjective<T> obj;
  obj.layer_ids = std::move(layer_ids);
  obj.fn = [aggregation](const std::vector<Tensor<T>>& acts) {
    LossEval<T> ev;
    double loss = 0;
    for (const auto& a : acts) {
      Tensor<T> g(a.shape);
      const std::size_t batch = static_cast<std::size_t>(a.shape[0]);
      const std::size_t n = a.size() / batch;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* v = a.ptr() + b * n;
        T* gv = g.ptr() + b * n;
        if (aggregation == Aggregation::log_product) {
          double ss = 0;
          for (std::size_t k = 0; k < n; ++k) ss += static_cast<double>(v[k]) * v[k];
          const double norm = std::sqrt(ss);
          loss -= std::log(norm + kNormEpsilon);
          if (norm > 0) {
            const double s = -1.0 / (norm * (norm + kNormEpsilon));
            for (std::size_t k = 0; k < n; ++k) gv[k] = static_cast<T>(s * v[k]);
          }
        } else {
          double sum = 0;
          for (std::size_t k = 0; k < n; ++k) sum += v[k];
          const double mean = sum / static_cast<double>(n);
          loss -= std::log(mean + kNormEpsilon);
          const double s = -1.0 / (static_cast<double>(n) * (mean + kNormEpsilon));
          for (std::size_t k = 0; k < n; ++k) gv[k] = static_cast<T>(s);
        }
      }
      ev.grads.push_back(std::move(g));
    }
    ev.value = {static_cast<T>(loss)};
    return ev;
  };
  return obj;
}

template <class T>
T activation_loss(const BasicModelAdapter<T>& adapter, const std::vector<Tensor<T>>& input_batch,
                  const std::vector<std::string>& layer_ids, Aggregation aggregation) {
  const auto obj = activation_objective<T>(layer_ids, aggregation);
  return obj.fn(adapter.activations(input_batch, layer_ids)).value[0];
}

// No prior: delta itself, unclipped. Range/data prior: clip(g + delta, 0, 255).
inline std::vector<Image> make_input(PriorSource& prior, const Image& delta, std::size_t batch_size, Rng& rng) {
  if (image_shape(delta) != prior.input_shape()) throw InvalidInput("perturbation does not match prior input shape");
  auto batch = prior.sample(batch_size, rng);
  if (prior.mode() == PriorMode::none) {
    for (auto& b : batch) b = delta;
    return batch;
  }
  for (auto& b : batch) b = add_clipped(b, delta);
  return batch;
}

// Adam moments for a single perturbation tensor.
struct AdamState {
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One Adam descent step on the loss followed by a hard clip to [-xi, xi].
inline void step(Image& delta, const Image& gradient, double lr, double xi, AdamState& st) {
  if (delta.shape != gradient.shape) throw InvalidInput("step: gradient shape mismatch");
  if (st.m.size() != delta.size()) {
    st.m.assign(delta.size(), 0.0);
    st.v.assign(delta.size(), 0.0);
  }
  ++st.t;
  const double c1 = 1 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1 - std::pow(st.beta2, static_cast<double>(st.t));
  const float bound = static_cast<float>(xi);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double g = gradient[i];
    st.m[i] = st.beta1 * st.m[i] + (1 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1 - st.beta2) * g * g;
    const double upd = lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
    delta[i] = std::clamp(static_cast<float>(delta[i] - upd), -bound, bound);
  }
}

// Fraction of elements sitting exactly on the clipping boundary.
inline double saturation_fraction(const Image& delta, double xi) {
  if (delta.empty()) return 0.0;
  const float bound = static_cast<float>(xi);
  std::size_t n = 0;
  for (float v : delta.data) n += std::abs(v) == bound;
  return static_cast<double>(n) / static_cast<double>(delta.size());
}

struct SaturationMonitor {
  double p_prev = 0.0;
  double p_curr = 0.0;
};

enum class SaturationDecision { keep, rescale };

// Rescale when saturation grew by less than theta since the previous
// iteration. A perturbation with no saturated element before or after the
// step has nothing to rescale.
inline SaturationDecision saturation_decision(double p_prev, double p_curr, double theta) {
  if (p_prev == 0.0 && p_curr == 0.0) return SaturationDecision::keep;
  return (p_curr - p_prev) < theta ? SaturationDecision::rescale : SaturationDecision::keep;
}

inline SaturationDecision saturation_check(SaturationMonitor& monitor, const Image& delta, double xi, double theta) {
  monitor.p_curr = saturation_fraction(delta, xi);
  return saturation_decision(monitor.p_prev, monitor.p_curr, theta);
}

inline void rescale_half(Image& delta) {
  for (auto& v : delta.data) v *= 0.5f;
}

// Fooling rate of `delta` on a corpus: label flips for classifiers,
// GFR(mIoU) for segmentation. Inputs are clip(x + delta, 0, 255).
inline double evaluate_fooling(const ModelAdapter& model, const std::vector<Image>& images,
                               const std::vector<LabelMap>& clean, const Image& delta) {
  std::vector<LabelMap> adv;
  adv.reserve(images.size());
  for (const auto& x : images) adv.push_back(model.forward({add_clipped(x, delta)})[0]);
  if (model.task() == Task::classification) {
    std::vector<int> a, c;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      a.push_back(adv[i][0]);
      c.push_back(clean[i][0]);
    }
    return metrics::fooling_rate(a, c);
  }
  return metrics::gfr_miou(adv, clean, model.num_classes());
}

struct HistoryEntry {
  long iteration = 0;
  double loss = 0;
  double saturation = 0;
  std::optional<double> validation_fooling_rate;
};

struct CraftResult {
  Perturbation best;
  std::vector<HistoryEntry> history;
  std::vector<long> rescale_events;
  std::vector<std::pair<long, double>> checkpoints;  // (iteration, fooling rate)
  bool truncated = false;
};

// Per-iteration hook. `delta` is the post-clip perturbation before any
// rescale decided in the same iteration is applied.
struct IterationInfo {
  long iteration;
  double loss;
  double saturation;
  bool rescale;
  const Image& delta;
};

struct CraftObserver {
  std::function<void(const IterationInfo&)> on_iteration;
  // (iteration, delta before halving, delta after halving)
  std::function<void(long, const Image&, const Image&)> on_rescale;
};

inline Perturbation random_baseline(const InputShape& shape, double xi, std::uint64_t seed) {
  Perturbation p{make_image(shape), xi, {"", "baseline", seed, 0, 0.0}};
  Rng rng(mix_seed(seed, 0xBA5E));
  std::uniform_real_distribution<float> u(static_cast<float>(-xi), static_cast<float>(xi));
  for (auto& v : p.delta.data) v = u(rng);
  return p;
}

inline CraftResult craft(const ModelAdapter& adapter, const CraftConfig& config, PriorSource& prior,
                         const Corpus& substitute_set, const CraftObserver& observer = {}) {
  config.validate();
  if (substitute_set.empty()) throw ContractError("substitute set must be nonempty");
  if (prior.mode() != config.prior_mode) throw ConfigError("prior source does not match config prior_mode");
  if (prior.input_shape() != adapter.input_shape()) throw InvalidInput("prior does not match victim input");

  const auto layers = adapter.catalog().crafting_layers();
  const auto objective = activation_objective<float>(layers, config.aggregation);
  const std::size_t batch = static_cast<std::size_t>(config.effective_batch_size());
  const auto val_images = substitute_set.images();
  const auto val_clean = adapter.forward(val_images);
  const float bound = static_cast<float>(config.xi);

  Rng rng(mix_seed(config.seed, 0xC4AF7));
  CraftResult result;
  Perturbation init = random_baseline(adapter.input_shape(), config.xi, config.seed);
  Image delta = std::move(init.delta);

  AdamState adam;
  SaturationMonitor monitor;
  monitor.p_prev = saturation_fraction(delta, config.xi);

  struct Checkpoint {
    long iteration;
    double fooling;
    Image delta;
  };
  std::deque<Checkpoint> window;  // at most H + 1 most recent checkpoints
  long since_checkpoint = 0;
  bool rescaled_since_checkpoint = false;
  bool converged = false;
  long t = 0;

  auto validate_now = [&](long iter) {
    const double f = evaluate_fooling(adapter, val_images, val_clean, delta);
    result.checkpoints.emplace_back(iter, f);
    result.history.back().validation_fooling_rate = f;
    window.push_back({iter, f, delta});
    since_checkpoint = 0;
    rescaled_since_checkpoint = false;
    return f;
  };

  while (t < config.max_iterations) {
    ++t;
    const auto inputs = make_input(prior, delta, batch, rng);
    float loss = 0;
    const auto grads = adapter.input_gradient(objective, inputs, &loss);
    Image g(delta.shape);
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      const bool clipped_input = prior.mode() != PriorMode::none;
      for (std::size_t i = 0; i < g.size(); ++i) {
        // clip(x + delta) passes no gradient where it saturates
        if (clipped_input && (inputs[b][i] <= 0.0f || inputs[b][i] >= 255.0f)) continue;
        g[i] += grads[b][i];
      }
    }
    step(delta, g, config.lr, config.xi, adam);
    if (max_abs(delta) > bound) throw std::logic_error("max-norm invariant violated after clipping");

    const auto decision = saturation_check(monitor, delta, config.xi, config.theta);
    const bool rescale = decision == SaturationDecision::rescale;
    result.history.push_back({t, static_cast<double>(loss), monitor.p_curr, std::nullopt});
    if (observer.on_iteration) observer.on_iteration({t, static_cast<double>(loss), monitor.p_curr, rescale, delta});
    if (rescale) {
      if (observer.on_rescale) {
        const Image before = delta;
        rescale_half(delta);
        observer.on_rescale(t, before, delta);
      } else {
        rescale_half(delta);
      }
      result.rescale_events.push_back(t);
      rescaled_since_checkpoint = true;
    }
    monitor.p_prev = saturation_fraction(delta, config.xi);

    ++since_checkpoint;
    if ((rescaled_since_checkpoint && since_checkpoint >= config.val_every_saturating) ||
        since_checkpoint >= config.val_every_quiet) {
      const double f = validate_now(t);
      if (static_cast<int>(window.size()) > config.patience_H) {
        double lo = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k + 1 < window.size(); ++k) lo = std::min(lo, window[k].fooling);
        if (f < lo) {
          converged = true;
          break;
        }
        window.pop_front();
      }
    }
  }

  if (!converged) {
    result.truncated = true;
    if (window.empty() || window.back().iteration != t) validate_now(t);
    while (static_cast<int>(window.size()) > config.patience_H) window.pop_front();
  } else {
    window.pop_back();  // the final checkpoint fell below the whole window
  }

  // argmax over the patience window; later checkpoints win ties
  const Checkpoint* best = &window.front();
  for (const auto& c : window)
    if (c.fooling >= best->fooling) best = &c;

  result.best.delta = best->delta;
  result.best.xi = config.xi;
  result.best.meta = {adapter.model_id(), to_string(config.prior_mode), config.seed, t, best->fooling};
  return result;
}

// ---------------------------------------------------------------------------
// Perturbation container: "UAPF", version byte, u32 header length, JSON
// header, row-major raw f32 values.

inline constexpr std::uint8_t kPerturbationFormatVersion = 1;

inline std::string encode_perturbation(const Perturbation& p) {
  const auto s = p.shape();
  io::ordered_json h;
  h["shape"] = {s.height, s.width, s.channels};
  h["dtype"] = "f32";
  h["xi"] = p.xi;
  h["model_id"] = p.meta.model_id;
  h["prior_mode"] = p.meta.prior_mode;
  h["seed"] = p.meta.seed;
  h["iterations_run"] = p.meta.iterations_run;
  h["validation_fooling_rate"] = p.meta.validation_fooling_rate;
  std::string buf = "UAPF";
  buf.push_back(static_cast<char>(kPerturbationFormatVersion));
  io::put_json(buf, h);
  io::put_f32(buf, p.delta.data);
  return buf;
}

inline Perturbation decode_perturbation(std::string bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("UAPF");
  if (const auto v = r.u8(); v != kPerturbationFormatVersion)
    throw FormatError("unsupported perturbation format version " + std::to_string(v));
  const auto h = r.json();
  try {
    if (h.at("dtype").get<std::string>() != "f32") throw FormatError("perturbation dtype must be f32");
    const auto shape = h.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("perturbation shape must be (H,W,C)");
    Perturbation p;
    p.xi = h.at("xi").get<double>();
    p.meta = {h.at("model_id").get<std::string>(), h.at("prior_mode").get<std::string>(),
              h.at("seed").get<std::uint64_t>(), h.at("iterations_run").get<long>(),
              h.at("validation_fooling_rate").get<double>()};
    p.delta = Image(shape);
    r.f32(p.delta.data);
    if (!r.at_end()) throw FormatError("trailing bytes after perturbation payload");
    if (max_abs(p.delta) > static_cast<float>(p.xi)) throw FormatError("perturbation exceeds its max-norm budget");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("perturbation header: ") + e.what());
  }
}

inline void save_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  io::write_file(path, encode_perturbation(p));
}

inline Perturbation load_perturbation(const std::filesystem::path& path) {
  return decode_perturbation(io::read_file(path));
}

}  // namespace gduap
