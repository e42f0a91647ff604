#pragma once

#include <string>
#include <vector>

#include "gduap/errors.hpp"
#include "gduap/nn/network.hpp"

namespace gduap::nn {

enum class Architecture { small_conv_a, small_conv_b, toy_fcn };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::small_conv_a: return "small_conv_a";
    case Architecture::small_conv_b: return "small_conv_b";
    case Architecture::toy_fcn: return "toy_fcn";
  }
  return "";
}

inline Architecture architecture_from_string(const std::string& s) {
  if (s == "small_conv_a") return Architecture::small_conv_a;
  if (s == "small_conv_b") return Architecture::small_conv_b;
  if (s == "toy_fcn") return Architecture::toy_fcn;
  throw ConfigError("unknown architecture '" + s + "'");
}

namespace detail {

class GraphBuilder {
 public:
  GraphBuilder() {
    nodes_.push_back({"input", Op::input, LayerKind::other, {}});
    nodes_.push_back({"input_norm", Op::normalize, LayerKind::other, {0}});
  }

  int last() const { return static_cast<int>(nodes_.size()) - 1; }

  int conv(const std::string& id, int from, int channels, LayerKind kind, bool relu = true,
           int kernel = 3) {
    NodeSpec n{id, Op::conv, kind, {from}, relu};
    n.out_channels = channels;
    n.kernel = kernel;
    return push(std::move(n));
  }
  int add(const std::string& id, int a, int b, LayerKind kind) {
    return push({id, Op::add, kind, {a, b}, true});
  }
  int pool(const std::string& id, int from) { return push({id, Op::maxpool, LayerKind::other, {from}}); }
  int dense(const std::string& id, int from, int features, bool relu) {
    NodeSpec n{id, Op::dense, LayerKind::fc, {from}, relu};
    n.out_features = features;
    return push(std::move(n));
  }
  int upsample(const std::string& id, int from, int factor) {
    NodeSpec n{id, Op::upsample, LayerKind::other, {from}};
    n.factor = factor;
    return push(std::move(n));
  }

  std::vector<NodeSpec> take() { return std::move(nodes_); }

 private:
  int push(NodeSpec n) {
    nodes_.push_back(std::move(n));
    return last();
  }
  std::vector<NodeSpec> nodes_;
};

}  // namespace detail

// small_conv_a: 4 conv (ReLU) + 2 fc.
// small_conv_b: 3 residual blocks of two convs each (block_end marks the
//   post-addition ReLU) + 1 fc. Inner convs are tagged `other` so that layer
//   selection lands on block ends only.
// toy_fcn: 4 conv + 1x1 conv head + bilinear upsample to input resolution.
inline std::vector<NodeSpec> build_graph(Architecture arch, const InputShape& input, int num_classes) {
  if (num_classes < 2) throw InvalidInput("num_classes must be >= 2");
  detail::GraphBuilder g;
  switch (arch) {
    case Architecture::small_conv_a: {
      int x = g.conv("conv1", g.last(), 8, LayerKind::conv);
      x = g.pool("pool1", x);
      x = g.conv("conv2", x, 16, LayerKind::conv);
      x = g.conv("conv3", x, 32, LayerKind::conv);
      x = g.pool("pool2", x);
      x = g.conv("conv4", x, 32, LayerKind::conv);
      x = g.pool("pool3", x);
      x = g.dense("fc1", x, 64, true);
      g.dense("fc2", x, num_classes, false);
      break;
    }
    case Architecture::small_conv_b: {
      int x = g.last();
      const int widths[] = {8, 16, 32};
      for (int b = 0; b < 3; ++b) {
        const std::string p = "block" + std::to_string(b + 1);
        const int a = g.conv(p + "_conv1", x, widths[b], LayerKind::other);
        const int c = g.conv(p + "_conv2", a, widths[b], LayerKind::other, false);
        const int skip = g.conv(p + "_proj", x, widths[b], LayerKind::other, false, 1);
        x = g.add(p + "_out", c, skip, LayerKind::block_end);
        x = g.pool(p + "_pool", x);
      }
      g.dense("fc", x, num_classes, false);
      break;
    }
    case Architecture::toy_fcn: {
      if (input.height % 4 || input.width % 4) throw InvalidInput("toy_fcn needs input divisible by 4");
      int x = g.conv("conv1", g.last(), 8, LayerKind::conv);
      x = g.pool("pool1", x);
      x = g.conv("conv2", x, 16, LayerKind::conv);
      x = g.pool("pool2", x);
      x = g.conv("conv3", x, 32, LayerKind::conv);
      x = g.conv("conv4", x, 32, LayerKind::conv);
      x = g.conv("head", x, num_classes, LayerKind::other, false, 1);
      g.upsample("upsample", x, 4);
      break;
    }
  }
  return g.take();
}

}  // namespace gduap::nn
