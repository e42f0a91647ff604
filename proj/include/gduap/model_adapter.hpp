#pragma once

// Uniform victim-model interface: predictions, named-layer activations and
// input gradients of activation-level objectives.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gduap/errors.hpp"
#include "gduap/io.hpp"
#include "gduap/nn/architectures.hpp"
#include "gduap/nn/network.hpp"
#include "gduap/tensor.hpp"

namespace gduap {

using nn::Architecture;
using nn::LayerCatalog;
using nn::LayerKind;

enum class Task { classification, segmentation };

inline const char* to_string(Task t) {
  return t == Task::classification ? "classification" : "segmentation";
}

inline Task task_of(Architecture a) {
  return a == Architecture::toy_fcn ? Task::segmentation : Task::classification;
}

struct VictimSpec {
  Architecture architecture = Architecture::small_conv_a;
  int num_classes = 10;
  std::string train_dataset_id;
  std::uint64_t seed = 0;
  InputShape input{32, 32, 3};
};

// One label per image for classifiers, one per pixel (row-major) for
// segmentation networks.
using LabelMap = std::vector<int>;

// Value and gradient of a scalar objective defined over a batch of
// activations. `grads[l]` matches the batched tensor of layer l.
template <class T>
struct LossEval {
  Buffer<T> value;
  std::vector<Tensor<T>> grads;
};

template <class T>
struct ActivationObjective {
  std::vector<std::string> layer_ids;
  std::function<LossEval<T>(const std::vector<Tensor<T>>&)> fn;
};

template <class T>
class BasicModelAdapter {
 public:
  using Batch = std::vector<Tensor<T>>;

  BasicModelAdapter(std::string model_id, VictimSpec spec, nn::Network<T> net)
      : model_id_(std::move(model_id)), spec_(std::move(spec)), net_(std::move(net)) {
    if (net_.input_shape() != spec_.input) throw InvalidInput("network input does not match victim spec");
  }

  // Fresh, initialized network for `spec`.
  static BasicModelAdapter create(std::string model_id, const VictimSpec& spec) {
    nn::Network<T> net(spec.input, nn::build_graph(spec.architecture, spec.input, spec.num_classes));
    net.initialize(spec.seed);
    return BasicModelAdapter(std::move(model_id), spec, std::move(net));
  }

  const std::string& model_id() const { return model_id_; }
  const VictimSpec& spec() const { return spec_; }
  const InputShape& input_shape() const { return spec_.input; }
  Task task() const { return task_of(spec_.architecture); }
  int num_classes() const { return spec_.num_classes; }
  const LayerCatalog& catalog() const { return net_.catalog(); }
  const nn::Network<T>& network() const { return net_; }
  nn::Network<T>& mutable_network() { return net_; }

  template <class U>
  BasicModelAdapter<U> cast() const {
    return BasicModelAdapter<U>(model_id_, spec_, net_.template cast<U>());
  }

  // Pre-argmax scores of the final node. (num_classes) for classifiers,
  // (num_classes, H, W) for segmentation.
  Tensor<T> scores(const Tensor<T>& x) const {
    check_input(x);
    auto tr = net_.forward(x);
    const int last = static_cast<int>(catalog().size()) - 1;
    Tensor<T> out;
    out.shape = catalog()[last].output_shape;
    out.data = std::move(tr.out[last]);
    return out;
  }

  // Lowest class index wins ties.
  LabelMap labels_from_scores(const Tensor<T>& s) const {
    if (task() == Task::classification) {
      return {static_cast<int>(std::max_element(s.data.begin(), s.data.end()) - s.data.begin())};
    }
    const int C = s.shape[0], HW = s.shape[1] * s.shape[2];
    LabelMap m(HW, 0);
    for (int p = 0; p < HW; ++p) {
      T best = s[p];
      for (int c = 1; c < C; ++c)
        if (s[static_cast<std::size_t>(c) * HW + p] > best) {
          best = s[static_cast<std::size_t>(c) * HW + p];
          m[p] = c;
        }
    }
    return m;
  }

  std::vector<LabelMap> forward(const Batch& x) const {
    std::vector<LabelMap> out;
    out.reserve(x.size());
    for (const auto& img : x) out.push_back(labels_from_scores(scores(img)));
    return out;
  }

  // Classifier convenience: one label per image.
  std::vector<int> classify(const Batch& x) const {
    if (task() != Task::classification) throw ContractError("classify() on a segmentation model");
    std::vector<int> out;
    out.reserve(x.size());
    for (const auto& img : x) out.push_back(labels_from_scores(scores(img))[0]);
    return out;
  }

  // One tensor per requested layer, batch-major: (N, ...layer shape).
  std::vector<Tensor<T>> activations(const Batch& x, const std::vector<std::string>& layer_ids) const {
    std::vector<int> idx;
    for (const auto& id : layer_ids) idx.push_back(catalog().index_of(id));
    std::vector<Tensor<T>> out;
    if (idx.empty()) return out;
    for (int i : idx) {
      auto s = catalog()[i].output_shape;
      s.insert(s.begin(), static_cast<int>(x.size()));
      out.emplace_back(std::move(s));
    }
    const int last = *std::max_element(idx.begin(), idx.end());
    for (std::size_t b = 0; b < x.size(); ++b) {
      check_input(x[b]);
      auto tr = net_.forward(x[b], last);
      for (std::size_t l = 0; l < idx.size(); ++l) {
        const auto& src = tr.out[idx[l]];
        std::copy(src.begin(), src.end(), out[l].data.begin() + static_cast<std::ptrdiff_t>(b * src.size()));
      }
    }
    return out;
  }

  // Gradient of objective.fn(activations(x, objective.layer_ids)) w.r.t. x.
  // `value_out`, when given, receives the scalar loss.
  Batch input_gradient(const ActivationObjective<T>& objective, const Batch& x, T* value_out = nullptr) const {
    std::vector<int> idx;
    for (const auto& id : objective.layer_ids) idx.push_back(catalog().index_of(id));
    const int last = idx.empty() ? 0 : *std::max_element(idx.begin(), idx.end());
    std::vector<nn::Trace<T>> traces;
    traces.reserve(x.size());
    std::vector<Tensor<T>> acts;
    for (int i : idx) {
      auto s = catalog()[i].output_shape;
      s.insert(s.begin(), static_cast<int>(x.size()));
      acts.emplace_back(std::move(s));
    }
    for (std::size_t b = 0; b < x.size(); ++b) {
      check_input(x[b]);
      traces.push_back(net_.forward(x[b], last));
      for (std::size_t l = 0; l < idx.size(); ++l) {
        const auto& src = traces.back().out[idx[l]];
        std::copy(src.begin(), src.end(), acts[l].data.begin() + static_cast<std::ptrdiff_t>(b * src.size()));
      }
    }
    LossEval<T> ev = objective.fn(acts);
    if (ev.value.size() != 1) throw ContractError("objective must return exactly one scalar");
    if (ev.grads.size() != idx.size()) throw ContractError("objective returned wrong number of gradients");
    for (std::size_t l = 0; l < idx.size(); ++l)
      if (ev.grads[l].shape != acts[l].shape) throw ContractError("objective gradient shape mismatch");
    if (value_out) *value_out = ev.value[0];

    Batch grads;
    grads.reserve(x.size());
    for (std::size_t b = 0; b < x.size(); ++b) {
      std::vector<std::pair<int, Buffer<T>>> seeds;
      for (std::size_t l = 0; l < idx.size(); ++l) {
        const std::size_t n = traces[b].out[idx[l]].size();
        auto first = ev.grads[l].data.begin() + static_cast<std::ptrdiff_t>(b * n);
        seeds.emplace_back(idx[l], Buffer<T>(first, first + static_cast<std::ptrdiff_t>(n)));
      }
      grads.push_back(net_.backward(traces[b], std::move(seeds), nullptr, true));
    }
    return grads;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    const auto& s = spec_.input;
    if (x.shape != std::vector<int>{s.height, s.width, s.channels})
      throw InvalidInput("input shape does not match model input " + to_string(s));
  }

  std::string model_id_;
  VictimSpec spec_;
  nn::Network<T> net_;
};

using ModelAdapter = BasicModelAdapter<float>;

// Weight container: "UAPW", u32 header length, JSON header, then per
// parameter a length-prefixed JSON shape record followed by raw f32 values.
inline std::string encode_weights(const ModelAdapter& m) {
  io::ordered_json header;
  header["model_id"] = m.model_id();
  header["architecture_id"] = nn::to_string(m.spec().architecture);
  header["num_classes"] = m.num_classes();
  header["seed"] = m.spec().seed;
  header["train_dataset_id"] = m.spec().train_dataset_id;
  header["input_shape"] = {m.input_shape().height, m.input_shape().width, m.input_shape().channels};
  io::ordered_json cat = io::ordered_json::array();
  for (const auto& e : m.catalog().entries())
    cat.push_back({{"layer_id", e.id}, {"kind", nn::to_string(e.kind)}, {"output_shape", e.output_shape}});
  header["layer_catalog"] = cat;

  std::string buf = "UAPW";
  io::put_json(buf, header);
  for (const auto& p : m.network().params()) {
    io::put_json(buf, io::ordered_json{{"name", p.name}, {"shape", p.shape}});
    io::put_f32(buf, p.value);
  }
  return buf;
}

inline ModelAdapter decode_weights(std::string bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("UAPW");
  const auto h = r.json();
  try {
    VictimSpec spec;
    spec.architecture = nn::architecture_from_string(h.at("architecture_id").get<std::string>());
    spec.num_classes = h.at("num_classes").get<int>();
    spec.seed = h.at("seed").get<std::uint64_t>();
    spec.train_dataset_id = h.value("train_dataset_id", std::string{});
    const auto is = h.at("input_shape").get<std::vector<int>>();
    if (is.size() != 3) throw FormatError("input_shape must have 3 entries");
    spec.input = {is[0], is[1], is[2]};
    nn::Network<float> net(spec.input, nn::build_graph(spec.architecture, spec.input, spec.num_classes));
    const auto& entries = net.catalog().entries();
    const auto& cat = h.at("layer_catalog");
    if (cat.size() != entries.size()) throw FormatError("layer catalog does not match architecture");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (cat[i].at("layer_id").get<std::string>() != entries[i].id ||
          nn::layer_kind_from_string(cat[i].at("kind").get<std::string>()) != entries[i].kind ||
          cat[i].at("output_shape").get<std::vector<int>>() != entries[i].output_shape)
        throw FormatError("layer catalog entry " + std::to_string(i) + " does not match architecture");
    }
    for (auto& p : net.params()) {
      const auto rec = r.json();
      if (rec.at("name").get<std::string>() != p.name || rec.at("shape").get<std::vector<int>>() != p.shape)
        throw FormatError("unexpected parameter record for '" + p.name + "'");
      r.f32(p.value);
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last parameter");
    return ModelAdapter(h.at("model_id").get<std::string>(), spec, std::move(net));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weight header: ") + e.what());
  }
}

inline void save_weights(const ModelAdapter& m, const std::filesystem::path& path) {
  io::write_file(path, encode_weights(m));
}

inline ModelAdapter load_weights(const std::filesystem::path& path) {
  return decode_weights(io::read_file(path));
}

}  // namespace gduap
