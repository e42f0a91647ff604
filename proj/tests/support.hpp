#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gduap/model_adapter.hpp"
#include "gduap/tensor.hpp"

namespace gduap::fixture {

inline Image random_image(const InputShape& s, std::mt19937_64& rng, double lo = 0.0, double hi = 255.0) {
  Image im = make_image(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : im.data) v = static_cast<float>(u(rng));
  return im;
}

template <class T>
Tensor<T> random_tensor(const InputShape& s, std::mt19937_64& rng, double lo, double hi) {
  Tensor<T> t({s.height, s.width, s.channels});
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

// input -> conv(ReLU) -> conv(ReLU), no normalization node.
inline std::vector<nn::NodeSpec> two_conv_nodes(int c1 = 4, int c2 = 3) {
  std::vector<nn::NodeSpec> n(3);
  n[0].id = "input";
  n[0].op = nn::Op::input;
  n[1] = {"conv1", nn::Op::conv, LayerKind::conv, {0}, true, c1, 3};
  n[2] = {"conv2", nn::Op::conv, LayerKind::conv, {1}, true, c2, 3};
  return n;
}

template <class T>
BasicModelAdapter<T> adapter_from(const std::vector<nn::NodeSpec>& nodes, const InputShape& in, std::uint64_t seed,
                                  Architecture arch = Architecture::small_conv_a, int num_classes = 10) {
  nn::Network<T> net(in, nodes);
  net.initialize(seed);
  VictimSpec spec{arch, num_classes, "test", seed, in};
  return BasicModelAdapter<T>("test-net", spec, std::move(net));
}

// Plain-loop evaluation of a network graph in double precision, CHW layout.
// Shares no code with the optimized forward pass.
inline std::vector<std::vector<double>> oracle_forward(const nn::Network<float>& net, const Image& x) {
  const auto& nodes = net.nodes();
  const auto& params = net.params();
  std::vector<std::vector<double>> out(nodes.size());
  std::vector<std::vector<int>> shape(nodes.size());
  const int H = x.shape[0], W = x.shape[1], C = x.shape[2];
  out[0].resize(static_cast<std::size_t>(C) * H * W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out[0][(c * H + y) * W + xx] = x.data[(y * W + xx) * C + c];
  shape[0] = {C, H, W};
  std::size_t pi = 0;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const auto& s = out[n.inputs[0]];
    const auto& ss = shape[n.inputs[0]];
    auto& o = out[i];
    switch (n.op) {
      case nn::Op::normalize:
        for (double v : s) o.push_back((v - 127.5) / 64.0);
        shape[i] = ss;
        break;
      case nn::Op::conv: {
        const auto& w = params[pi].value;
        const auto& b = params[pi + 1].value;
        pi += 2;
        const int ci = ss[0], h = ss[1], wd = ss[2], k = n.kernel, p = k / 2;
        o.assign(static_cast<std::size_t>(n.out_channels) * h * wd, 0.0);
        for (int oc = 0; oc < n.out_channels; ++oc)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wd; ++xx) {
              double acc = b[oc];
              for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int sy = y + ky - p, sx = xx + kx - p;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                    acc += static_cast<double>(w[((oc * ci + ic) * k + ky) * k + kx]) * s[(ic * h + sy) * wd + sx];
                  }
              o[(oc * h + y) * wd + xx] = acc;
            }
        shape[i] = {n.out_channels, h, wd};
        break;
      }
      case nn::Op::add:
        for (std::size_t k = 0; k < s.size(); ++k) o.push_back(s[k] + out[n.inputs[1]][k]);
        shape[i] = ss;
        break;
      case nn::Op::maxpool: {
        const int f = n.factor, ho = ss[1] / f, wo = ss[2] / f;
        for (int c = 0; c < ss[0]; ++c)
          for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
              double m = -INFINITY;
              for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) m = std::max(m, s[(c * ss[1] + y * f + dy) * ss[2] + xx * f + dx]);
              o.push_back(m);
            }
        shape[i] = {ss[0], ho, wo};
        break;
      }
      case nn::Op::dense: {
        const auto& w = params[pi].value;
        const auto& b = params[pi + 1].value;
        pi += 2;
        for (int r = 0; r < n.out_features; ++r) {
          double acc = b[r];
          for (std::size_t k = 0; k < s.size(); ++k) acc += static_cast<double>(w[r * s.size() + k]) * s[k];
          o.push_back(acc);
        }
        shape[i] = {n.out_features};
        break;
      }
      case nn::Op::upsample: {
        const int f = n.factor, h = ss[1], wd = ss[2];
        auto src_coord = [&](int d, int len) {
          const double c = std::clamp((d + 0.5) / f - 0.5, 0.0, static_cast<double>(len - 1));
          const int lo = static_cast<int>(std::floor(c));
          return std::tuple<int, int, double>{lo, std::min(lo + 1, len - 1), c - lo};
        };
        for (int c = 0; c < ss[0]; ++c)
          for (int y = 0; y < h * f; ++y)
            for (int xx = 0; xx < wd * f; ++xx) {
              const auto [y0, y1, ty] = src_coord(y, h);
              const auto [x0, x1, tx] = src_coord(xx, wd);
              const double* p = s.data() + static_cast<std::size_t>(c) * h * wd;
              o.push_back((1 - ty) * ((1 - tx) * p[y0 * wd + x0] + tx * p[y0 * wd + x1]) +
                          ty * ((1 - tx) * p[y1 * wd + x0] + tx * p[y1 * wd + x1]));
            }
        shape[i] = {ss[0], h * f, wd * f};
        break;
      }
      case nn::Op::input:
        break;
    }
    if (n.relu)
      for (auto& v : o) v = std::max(v, 0.0);
  }
  return out;
}

}  // namespace gduap::fixture
