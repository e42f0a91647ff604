#pragma once

// Minimal inference/backprop engine for small convolutional DAGs. Every node
// has a single output buffer in (C, H, W) order; the first node holds the raw
// HWC input transposed to CHW so that activations of any node, including the
// input, can be addressed by name.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gduap/errors.hpp"
#include "gduap/tensor.hpp"

namespace gduap::nn {

enum class LayerKind { conv, block_end, fc, other };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::block_end: return "block_end";
    case LayerKind::fc: return "fc";
    case LayerKind::other: return "other";
  }
  return "other";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "block_end") return LayerKind::block_end;
  if (s == "fc") return LayerKind::fc;
  if (s == "other") return LayerKind::other;
  throw FormatError("unknown layer kind '" + s + "'");
}

enum class Op { input, normalize, conv, add, maxpool, dense, upsample };

struct NodeSpec {
  std::string id;
  Op op = Op::input;
  LayerKind kind = LayerKind::other;
  std::vector<int> inputs;
  bool relu = false;
  int out_channels = 0;  // conv
  int kernel = 3;        // conv, odd; padding keeps spatial size
  int out_features = 0;  // dense
  int factor = 2;        // maxpool window / upsample factor
};

struct LayerEntry {
  std::string id;
  LayerKind kind = LayerKind::other;
  std::vector<int> output_shape;
  friend bool operator==(const LayerEntry&, const LayerEntry&) = default;
};

// Ordered execution catalog of a network.
class LayerCatalog {
 public:
  LayerCatalog() = default;
  explicit LayerCatalog(std::vector<LayerEntry> entries) : entries_(std::move(entries)) {
    bool has_feature_layer = false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!index_.emplace(entries_[i].id, static_cast<int>(i)).second)
        throw CatalogError("duplicate layer id '" + entries_[i].id + "'");
      has_feature_layer |= entries_[i].kind == LayerKind::conv ||
                           entries_[i].kind == LayerKind::block_end;
    }
    if (!entries_.empty() && !has_feature_layer)
      throw CatalogError("catalog has no conv or block_end layer");
  }

  const std::vector<LayerEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const LayerEntry& operator[](std::size_t i) const { return entries_[i]; }

  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw CatalogError("unknown layer id '" + id + "'");
    return it->second;
  }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  // Layers the activation objective is maximized at: independent conv layers
  // plus the last layer of every block.
  std::vector<std::string> crafting_layers() const {
    std::vector<std::string> ids;
    for (const auto& e : entries_)
      if (e.kind == LayerKind::conv || e.kind == LayerKind::block_end) ids.push_back(e.id);
    return ids;
  }

  friend bool operator==(const LayerCatalog& a, const LayerCatalog& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<LayerEntry> entries_;
  std::unordered_map<std::string, int> index_;
};

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  Buffer<T> value;
};

// Per-node forward buffers. Kept so that backward can reuse im2col matrices
// and pooling switches.
template <class T>
struct Trace {
  std::vector<Buffer<T>> out;
  std::vector<Buffer<T>> cols;
  std::vector<std::vector<int>> switches;
};

template <class T>
using ParamGrads = std::vector<Buffer<T>>;

template <class T>
class Network {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Matrix>;
  using CMapM = Eigen::Map<const Matrix>;

  // Pixels enter in [0,255]; this affine map is internal to the network.
  static constexpr double kInputCenter = 127.5;
  static constexpr double kInputScale = 64.0;

  Network() = default;

  Network(InputShape input, std::vector<NodeSpec> nodes) : input_(input), nodes_(std::move(nodes)) {
    if (nodes_.empty() || nodes_[0].op != Op::input)
      throw InvalidInput("network must start with an input node");
    shapes_.resize(nodes_.size());
    param_index_.assign(nodes_.size(), -1);
    shapes_[0] = {input_.channels, input_.height, input_.width};
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      for (int in : n.inputs)
        if (in < 0 || in >= static_cast<int>(i))
          throw InvalidInput("node '" + n.id + "' references a later node");
      if (n.inputs.empty()) throw InvalidInput("node '" + n.id + "' has no inputs");
      const auto& src = shapes_[n.inputs[0]];
      switch (n.op) {
        case Op::normalize:
          shapes_[i] = src;
          break;
        case Op::conv: {
          if (src.size() != 3 || n.kernel % 2 == 0) throw InvalidInput("bad conv node '" + n.id + "'");
          const int k = n.kernel;
          param_index_[i] = static_cast<int>(params_.size());
          params_.push_back({n.id + ".weight", {n.out_channels, src[0], k, k}, {}});
          params_.push_back({n.id + ".bias", {n.out_channels}, {}});
          shapes_[i] = {n.out_channels, src[1], src[2]};
          break;
        }
        case Op::add:
          if (n.inputs.size() != 2 || shapes_[n.inputs[1]] != src)
            throw InvalidInput("add node '" + n.id + "' needs two equal-shaped inputs");
          shapes_[i] = src;
          break;
        case Op::maxpool:
          if (src[1] % n.factor || src[2] % n.factor)
            throw InvalidInput("pool node '" + n.id + "' does not divide its input");
          shapes_[i] = {src[0], src[1] / n.factor, src[2] / n.factor};
          break;
        case Op::dense: {
          const int in_features = static_cast<int>(Tensor<T>::count(src));
          param_index_[i] = static_cast<int>(params_.size());
          params_.push_back({n.id + ".weight", {n.out_features, in_features}, {}});
          params_.push_back({n.id + ".bias", {n.out_features}, {}});
          shapes_[i] = {n.out_features};
          break;
        }
        case Op::upsample:
          shapes_[i] = {src[0], src[1] * n.factor, src[2] * n.factor};
          break;
        case Op::input:
          throw InvalidInput("only the first node may be an input");
      }
    }
    for (auto& p : params_) p.value.assign(Tensor<T>::count(p.shape), T(0));
    std::vector<LayerEntry> entries;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      entries.push_back({nodes_[i].id, nodes_[i].kind, shapes_[i]});
    catalog_ = LayerCatalog(std::move(entries));
  }

  // He-normal weights, zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < params_.size(); i += 2) {
      auto& w = params_[i];
      const std::size_t fan_in = Tensor<T>::count(w.shape) / static_cast<std::size_t>(w.shape[0]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : w.value) v = static_cast<T>(dist(rng));
      std::fill(params_[i + 1].value.begin(), params_[i + 1].value.end(), T(0));
    }
  }

  const InputShape& input_shape() const { return input_; }
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const LayerCatalog& catalog() const { return catalog_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  const std::vector<int>& output_shape(int node) const { return shapes_[node]; }

  template <class U>
  Network<U> cast() const {
    Network<U> out(input_, nodes_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.params()[i].value.assign(params_[i].value.begin(), params_[i].value.end());
    return out;
  }

  ParamGrads<T> zero_grads() const {
    ParamGrads<T> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) g[i].assign(params_[i].value.size(), T(0));
    return g;
  }

  // Runs nodes [0, last]; last < 0 means the whole graph.
  Trace<T> forward(const Tensor<T>& image, int last = -1) const {
    if (image.shape != std::vector<int>{input_.height, input_.width, input_.channels})
      throw InvalidInput("input shape does not match network input " + to_string(input_));
    const int n_nodes = static_cast<int>(nodes_.size());
    if (last < 0 || last >= n_nodes) last = n_nodes - 1;
    Trace<T> tr;
    tr.out.resize(n_nodes);
    tr.cols.resize(n_nodes);
    tr.switches.resize(n_nodes);
    {
      auto& o = tr.out[0];
      const int H = input_.height, W = input_.width, C = input_.channels;
      o.resize(image.size());
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          for (int c = 0; c < C; ++c) o[(c * H + y) * W + x] = image[(y * W + x) * C + c];
    }
    for (int i = 1; i <= last; ++i) forward_node(i, tr);
    return tr;
  }

  // Backpropagates `seeds` (gradients w.r.t. node outputs). Accumulates into
  // `param_grads` when non-null. Returns d/d(input) in HWC order when
  // `want_input` is set, otherwise an empty tensor.
  Tensor<T> backward(const Trace<T>& tr, std::vector<std::pair<int, Buffer<T>>> seeds,
                     ParamGrads<T>* param_grads, bool want_input = true) const {
    const int n_nodes = static_cast<int>(nodes_.size());
    std::vector<Buffer<T>> g(n_nodes);
    int top = 0;
    for (auto& [node, grad] : seeds) {
      if (tr.out[node].size() != grad.size()) throw ContractError("seed gradient size mismatch");
      if (g[node].empty())
        g[node] = std::move(grad);
      else
        for (std::size_t k = 0; k < grad.size(); ++k) g[node][k] += grad[k];
      top = std::max(top, node);
    }
    const int stop = want_input ? 0 : 1;
    for (int i = top; i > stop; --i) {
      if (g[i].empty()) continue;
      backward_node(i, tr, g, param_grads, want_input);
      g[i].clear();
      g[i].shrink_to_fit();
    }
    Tensor<T> dx;
    if (!want_input) return dx;
    dx = Tensor<T>({input_.height, input_.width, input_.channels});
    if (g[0].empty()) return dx;
    const int H = input_.height, W = input_.width, C = input_.channels;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c) dx[(y * W + x) * C + c] = g[0][(c * H + y) * W + x];
    return dx;
  }

 private:
  void forward_node(int i, Trace<T>& tr) const {
    const auto& n = nodes_[i];
    const auto& src_shape = shapes_[n.inputs[0]];
    const auto& src = tr.out[n.inputs[0]];
    auto& out = tr.out[i];
    switch (n.op) {
      case Op::normalize: {
        out.resize(src.size());
        const T c = static_cast<T>(kInputCenter), s = static_cast<T>(1.0 / kInputScale);
        for (std::size_t k = 0; k < src.size(); ++k) out[k] = (src[k] - c) * s;
        break;
      }
      case Op::conv: {
        const int Cin = src_shape[0], H = src_shape[1], W = src_shape[2], k = n.kernel;
        auto& cols = tr.cols[i];
        im2col(src.data(), Cin, H, W, k, cols);
        const int K = Cin * k * k, HW = H * W;
        out.assign(static_cast<std::size_t>(n.out_channels) * HW, T(0));
        const auto& w = params_[param_index_[i]].value;
        const auto& b = params_[param_index_[i] + 1].value;
        MapM Y(out.data(), n.out_channels, HW);
        Y.noalias() = CMapM(w.data(), n.out_channels, K) * CMapM(cols.data(), K, HW);
        for (int oc = 0; oc < n.out_channels; ++oc) Y.row(oc).array() += b[oc];
        break;
      }
      case Op::add: {
        const auto& other = tr.out[n.inputs[1]];
        out.resize(src.size());
        for (std::size_t k = 0; k < src.size(); ++k) out[k] = src[k] + other[k];
        break;
      }
      case Op::maxpool: {
        const int C = src_shape[0], H = src_shape[1], W = src_shape[2], f = n.factor;
        const int Ho = H / f, Wo = W / f;
        out.resize(static_cast<std::size_t>(C) * Ho * Wo);
        auto& sw = tr.switches[i];
        sw.resize(out.size());
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
              int best = (c * H + y * f) * W + x * f;
              for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) {
                  const int idx = (c * H + y * f + dy) * W + x * f + dx;
                  if (src[idx] > src[best]) best = idx;
                }
              const int o = (c * Ho + y) * Wo + x;
              out[o] = src[best];
              sw[o] = best;
            }
        break;
      }
      case Op::dense: {
        const int in = static_cast<int>(src.size());
        const auto& w = params_[param_index_[i]].value;
        const auto& b = params_[param_index_[i] + 1].value;
        out.resize(n.out_features);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(out.data(), n.out_features);
        y.noalias() = CMapM(w.data(), n.out_features, in) *
                      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(src.data(), in);
        for (int o = 0; o < n.out_features; ++o) out[o] += b[o];
        break;
      }
      case Op::upsample: {
        const int C = src_shape[0], H = src_shape[1], W = src_shape[2], f = n.factor;
        const int Ho = H * f, Wo = W * f;
        out.assign(static_cast<std::size_t>(C) * Ho * Wo, T(0));
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < Ho; ++y) {
            const auto [y0, y1, wy] = bilinear_tap(y, f, H);
            for (int x = 0; x < Wo; ++x) {
              const auto [x0, x1, wx] = bilinear_tap(x, f, W);
              const T* s = src.data() + static_cast<std::size_t>(c) * H * W;
              out[(c * Ho + y) * Wo + x] =
                  (1 - wy) * ((1 - wx) * s[y0 * W + x0] + wx * s[y0 * W + x1]) +
                  wy * ((1 - wx) * s[y1 * W + x0] + wx * s[y1 * W + x1]);
            }
          }
        break;
      }
      case Op::input:
        break;
    }
    if (n.relu)
      for (auto& v : out) v = v > T(0) ? v : T(0);
  }

  void backward_node(int i, const Trace<T>& tr, std::vector<Buffer<T>>& g,
                     ParamGrads<T>* pg, bool want_input) const {
    const auto& n = nodes_[i];
    auto& gi = g[i];
    if (n.relu) {
      const auto& out = tr.out[i];
      for (std::size_t k = 0; k < gi.size(); ++k)
        if (!(out[k] > T(0))) gi[k] = T(0);
    }
    const int src_id = n.inputs[0];
    const auto& src_shape = shapes_[src_id];
    auto ensure = [&](int node) -> Buffer<T>& {
      if (g[node].empty()) g[node].assign(tr.out[node].size(), T(0));
      return g[node];
    };
    // Gradients never need to flow into the raw input unless requested.
    const bool feed_src = want_input || src_id > 0;
    switch (n.op) {
      case Op::normalize: {
        if (!feed_src) break;
        auto& gs = ensure(src_id);
        const T s = static_cast<T>(1.0 / kInputScale);
        for (std::size_t k = 0; k < gi.size(); ++k) gs[k] += gi[k] * s;
        break;
      }
      case Op::conv: {
        const int Cin = src_shape[0], H = src_shape[1], W = src_shape[2], k = n.kernel;
        const int K = Cin * k * k, HW = H * W;
        const auto& w = params_[param_index_[i]].value;
        CMapM dY(gi.data(), n.out_channels, HW);
        CMapM cols(tr.cols[i].data(), K, HW);
        if (pg) {
          MapM dW((*pg)[param_index_[i]].data(), n.out_channels, K);
          dW.noalias() += dY * cols.transpose();
          auto& db = (*pg)[param_index_[i] + 1];
          for (int oc = 0; oc < n.out_channels; ++oc) db[oc] += dY.row(oc).sum();
        }
        if (!feed_src) break;
        Buffer<T> dcols(static_cast<std::size_t>(K) * HW);
        MapM(dcols.data(), K, HW).noalias() = CMapM(w.data(), n.out_channels, K).transpose() * dY;
        col2im(dcols.data(), Cin, H, W, k, ensure(src_id));
        break;
      }
      case Op::add: {
        for (int in : n.inputs) {
          if (in == 0 && !want_input) continue;
          auto& gs = ensure(in);
          for (std::size_t k = 0; k < gi.size(); ++k) gs[k] += gi[k];
        }
        break;
      }
      case Op::maxpool: {
        if (!feed_src) break;
        auto& gs = ensure(src_id);
        const auto& sw = tr.switches[i];
        for (std::size_t k = 0; k < gi.size(); ++k) gs[sw[k]] += gi[k];
        break;
      }
      case Op::dense: {
        const auto& src = tr.out[src_id];
        const int in = static_cast<int>(src.size());
        const auto& w = params_[param_index_[i]].value;
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dy(gi.data(), n.out_features);
        if (pg) {
          MapM dW((*pg)[param_index_[i]].data(), n.out_features, in);
          dW.noalias() += dy * Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(src.data(), in);
          auto& db = (*pg)[param_index_[i] + 1];
          for (int o = 0; o < n.out_features; ++o) db[o] += gi[o];
        }
        if (!feed_src) break;
        auto& gs = ensure(src_id);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gs.data(), in).noalias() +=
            CMapM(w.data(), n.out_features, in).transpose() * dy;
        break;
      }
      case Op::upsample: {
        if (!feed_src) break;
        const int C = src_shape[0], H = src_shape[1], W = src_shape[2], f = n.factor;
        const int Ho = H * f, Wo = W * f;
        auto& gs = ensure(src_id);
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < Ho; ++y) {
            const auto [y0, y1, wy] = bilinear_tap(y, f, H);
            for (int x = 0; x < Wo; ++x) {
              const auto [x0, x1, wx] = bilinear_tap(x, f, W);
              const T d = gi[(c * Ho + y) * Wo + x];
              T* s = gs.data() + static_cast<std::size_t>(c) * H * W;
              s[y0 * W + x0] += (1 - wy) * (1 - wx) * d;
              s[y0 * W + x1] += (1 - wy) * wx * d;
              s[y1 * W + x0] += wy * (1 - wx) * d;
              s[y1 * W + x1] += wy * wx * d;
            }
          }
        break;
      }
      case Op::input:
        break;
    }
  }

  struct Tap {
    int lo, hi;
    T w;
  };

  // Half-pixel-centre bilinear sampling with edge clamping.
  static Tap bilinear_tap(int dst, int factor, int src_len) {
    double s = (dst + 0.5) / factor - 0.5;
    if (s < 0) s = 0;
    int lo = static_cast<int>(std::floor(s));
    if (lo > src_len - 1) lo = src_len - 1;
    const int hi = std::min(lo + 1, src_len - 1);
    return {lo, hi, static_cast<T>(s - lo)};
  }

  static void im2col(const T* src, int C, int H, int W, int k, Buffer<T>& cols) {
    const int p = k / 2;
    cols.assign(static_cast<std::size_t>(C) * k * k * H * W, T(0));
    T* dst = cols.data();
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          for (int y = 0; y < H; ++y) {
            const int iy = y + ky - p;
            if (iy < 0 || iy >= H) {
              dst += W;
              continue;
            }
            const T* row = src + (c * H + iy) * W;
            const int x_lo = std::max(0, p - kx), x_hi = std::min(W, W + p - kx);
            for (int x = x_lo; x < x_hi; ++x) dst[x] = row[x + kx - p];
            dst += W;
          }
        }
  }

  static void col2im(const T* cols, int C, int H, int W, int k, Buffer<T>& dst) {
    const int p = k / 2;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          for (int y = 0; y < H; ++y) {
            const int iy = y + ky - p;
            if (iy >= 0 && iy < H) {
              T* row = dst.data() + (c * H + iy) * W;
              const int x_lo = std::max(0, p - kx), x_hi = std::min(W, W + p - kx);
              for (int x = x_lo; x < x_hi; ++x) row[x + kx - p] += cols[x];
            }
            cols += W;
          }
        }
  }

  InputShape input_;
  std::vector<NodeSpec> nodes_;
  std::vector<std::vector<int>> shapes_;
  std::vector<int> param_index_;
  std::vector<Param<T>> params_;
  LayerCatalog catalog_;
};

}  // namespace gduap::nn
