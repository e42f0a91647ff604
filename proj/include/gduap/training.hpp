#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "gduap/datasets.hpp"
#include "gduap/errors.hpp"
#include "gduap/model_adapter.hpp"
#include "gduap/rng.hpp"

namespace gduap {

struct TrainOptions {
  int epochs = 8;
  int batch_size = 32;
  double lr = 2e-3;
  double weight_decay = 1e-4;
};

namespace detail {

// Softmax cross-entropy over `classes` logits spaced `stride` apart. Writes
// d(loss)/d(logit) scaled by `scale` and returns the loss.
inline double softmax_xent(const float* logits, float* grad, int classes, std::size_t stride, int target,
                           double scale) {
  double mx = logits[0];
  for (int c = 1; c < classes; ++c) mx = std::max<double>(mx, logits[c * stride]);
  double z = 0;
  for (int c = 0; c < classes; ++c) z += std::exp(logits[c * stride] - mx);
  for (int c = 0; c < classes; ++c) {
    const double p = std::exp(logits[c * stride] - mx) / z;
    grad[c * stride] = static_cast<float>(scale * (p - (c == target ? 1.0 : 0.0)));
  }
  return scale * -(logits[target * stride] - mx - std::log(z));
}

}  // namespace detail

// Trains a fresh victim with Adam on softmax cross-entropy (per pixel for
// segmentation). Single-threaded and fully determined by spec.seed.
inline ModelAdapter train_victim(const VictimSpec& spec, const Corpus& data, const TrainOptions& opt = {},
                                 std::string model_id = {}) {
  if (data.empty()) throw IngestionError("training corpus is empty");
  const Task task = task_of(spec.architecture);
  std::set<int> classes;
  for (const auto& s : data.samples) {
    if (image_shape(s.image) != spec.input) throw IngestionError("training image shape mismatch");
    for (float v : s.image.data)
      if (!(v >= 0.0f && v <= 255.0f)) throw IngestionError("training pixels must lie in [0,255]");
    if (task == Task::classification) {
      if (s.label < 0 || s.label >= spec.num_classes) throw IngestionError("label out of range");
      classes.insert(s.label);
    } else {
      if (s.mask.size() != static_cast<std::size_t>(spec.input.height) * spec.input.width)
        throw IngestionError("segmentation sample without a full label map");
      for (int l : s.mask) {
        if (l < 0 || l >= spec.num_classes) throw IngestionError("mask label out of range");
        classes.insert(l);
      }
    }
  }
  if (classes.size() < 2) throw InvalidInput("training corpus must contain at least 2 classes");

  if (model_id.empty()) model_id = nn::to_string(spec.architecture) + "-s" + std::to_string(spec.seed);
  VictimSpec s = spec;
  if (s.train_dataset_id.empty()) s.train_dataset_id = data.id;
  auto model = ModelAdapter::create(model_id, s);
  auto& net = model.mutable_network();
  auto& params = net.params();

  std::vector<Buffer<float>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].value.size(), 0.0f);
    m2[i].assign(params[i].value.size(), 0.0f);
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;

  Rng rng(mix_seed(spec.seed, 0x7A11));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int last = static_cast<int>(net.catalog().size()) - 1;
  const std::size_t steps_per_epoch = (data.size() + opt.batch_size - 1) / opt.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch) * opt.epochs;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      auto grads = net.zero_grads();
      const double inv_b = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& smp = data.samples[order[k]];
        auto tr = net.forward(smp.image);
        Buffer<float> g(tr.out[last].size());
        if (task == Task::classification) {
          detail::softmax_xent(tr.out[last].data(), g.data(), spec.num_classes, 1, smp.label, inv_b);
        } else {
          const std::size_t hw = smp.mask.size();
          for (std::size_t p = 0; p < hw; ++p)
            detail::softmax_xent(tr.out[last].data() + p, g.data() + p, spec.num_classes, hw, smp.mask[p],
                                 inv_b / static_cast<double>(hw));
        }
        net.backward(tr, {{last, std::move(g)}}, &grads, false);
      }
      ++step;
      // cosine decay to 5% of the base rate
      const double progress = static_cast<double>(step) / total_steps;
      const double lr = opt.lr * (0.05 + 0.95 * 0.5 * (1 + std::cos(3.141592653589793 * progress)));
      const double c1 = 1 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1 - std::pow(b2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        const bool is_weight = i % 2 == 0;
        auto& w = params[i].value;
        for (std::size_t j = 0; j < w.size(); ++j) {
          double gj = grads[i][j];
          if (is_weight) gj += opt.weight_decay * w[j];
          m1[i][j] = static_cast<float>(b1 * m1[i][j] + (1 - b1) * gj);
          m2[i][j] = static_cast<float>(b2 * m2[i][j] + (1 - b2) * gj * gj);
          w[j] -= static_cast<float>(lr * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + eps));
        }
      }
    }
  }
  return model;
}

}  // namespace gduap
