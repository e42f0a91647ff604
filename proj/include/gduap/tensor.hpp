#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gduap/errors.hpp"

namespace gduap {

// Storage aligned for the widest SIMD width Eigen was built for; keeps
// vectorized kernels on the same code path regardless of heap layout.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

// Spatial input geometry of a victim network. Pixels are interleaved (HWC).
struct InputShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

inline std::string to_string(const InputShape& s) {
  return "(" + std::to_string(s.height) + "," + std::to_string(s.width) + "," +
         std::to_string(s.channels) + ")";
}

// Dense row-major tensor. Network feature maps use (C, H, W); images and
// perturbations use (H, W, C).
template <class T>
struct Tensor {
  std::vector<int> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using Image = Tensor<float>;

inline Image make_image(const InputShape& s, float fill = 0.0f) {
  return Image({s.height, s.width, s.channels}, fill);
}

inline InputShape image_shape(const Image& img) {
  if (img.shape.size() != 3) throw InvalidInput("image must be rank 3 (H,W,C)");
  return {img.shape[0], img.shape[1], img.shape[2]};
}

template <class T>
T l2_norm(const Tensor<T>& t) {
  // accumulate in double so float tensors keep precision
  double s = 0.0;
  for (const T& v : t.data) s += static_cast<double>(v) * static_cast<double>(v);
  return static_cast<T>(std::sqrt(s));
}

template <class T>
T max_abs(const Tensor<T>& t) {
  T m = T(0);
  for (const T& v : t.data) m = std::max(m, static_cast<T>(std::abs(v)));
  return m;
}

// Elementwise a + b clipped to [lo, hi].
inline Image add_clipped(const Image& a, const Image& b, float lo = 0.0f, float hi = 255.0f) {
  if (a.shape != b.shape) throw InvalidInput("add_clipped: shape mismatch");
  Image out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i] + b[i], lo, hi);
  return out;
}

}  // namespace gduap
