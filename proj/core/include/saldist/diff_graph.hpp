#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "saldist/grid.hpp"

namespace saldist {

// Op kinds and their shape rules (checked at forward time):
//
//   Input              bound by name; any shape.
//   Conv2d             x: Ci x H x W, weight: Co x Ci x (k*k), bias: Co x 1 x 1.
//                      Output Co x ((H + 2p - k) / s + 1) x ((W + 2p - k) / s + 1),
//                      zero padding p, stride s.
//   Sigmoid, Relu      elementwise, shape preserved.
//   Add                identical shapes.
//   Multiply           identical shapes, or b of shape C x 1 x 1 gating a: C x H x W.
//   ConcatChannels     equal H x W; channels stacked in argument order.
//   ChannelSum         C x H x W -> 1 x H x W.
//   SpatialMean        C x H x W -> C x 1 x 1.
//   GlobalAvgPool      same computation as SpatialMean (named for SE blocks).
//   SubtractBroadcast  x: C x H x W minus m: C x 1 x 1 per channel.
//   FullyConnected     v: In x 1 x 1, weight: 1 x Out x In, bias: Out x 1 x 1.
//   ResizeBilinear     per-channel pixel-centre bilinear to a fixed H' x W'.
//   Scale              factor * x + offset.
//   CornerInversion    1 x H x W; returns 1 - y when the mean over the four
//                      corner patches exceeds 0.5, else y. The decision is
//                      made in forward and is a constant for backward.
enum class OpKind {
  Input,
  Conv2d,
  Sigmoid,
  Relu,
  Add,
  Multiply,
  ConcatChannels,
  ChannelSum,
  SpatialMean,
  GlobalAvgPool,
  SubtractBroadcast,
  FullyConnected,
  ResizeBilinear,
  Scale,
  CornerInversion,
};

std::string_view op_name(OpKind kind);

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

// Named leaf values supplied to forward. Holds pointers; the referenced grids
// must outlive the forward call.
class Bindings {
 public:
  Bindings& bind(std::string name, const Grid& value);
  const Grid* find(const std::string& name) const;

 private:
  std::map<std::string, const Grid*, std::less<>> values_;
};

using Gradients = std::map<std::string, Grid, std::less<>>;

// A recorded computation over Grids with reverse-mode gradients. Nodes are
// appended in topological order; the last node added is the terminal output.
class DiffGraph {
 public:
  NodeId input(std::string name);
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t kernel, std::size_t stride,
                std::size_t padding);
  NodeId sigmoid(NodeId x);
  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId multiply(NodeId a, NodeId b);
  NodeId concat_channels(std::vector<NodeId> parts);
  NodeId channel_sum(NodeId x);
  NodeId spatial_mean(NodeId x);
  NodeId global_avg_pool(NodeId x);
  NodeId subtract_broadcast(NodeId x, NodeId mean);
  NodeId fully_connected(NodeId v, NodeId weight, NodeId bias);
  NodeId resize_bilinear(NodeId x, std::size_t out_h, std::size_t out_w);
  NodeId scale(NodeId x, double factor, double offset = 0.0);
  NodeId corner_inversion(NodeId x);

  // Evaluates every node. Throws ShapeError naming the node on incompatible
  // shapes and NumericalError if any node produces a non-finite value.
  const Grid& forward(const Bindings& inputs);

  // Reverse pass from `seed` (shaped like the terminal output). Returns the
  // accumulated gradient for every Input node, keyed by name. Allowed once
  // per forward.
  Gradients backward(const Grid& seed);

  const Grid& value(NodeId id) const;
  bool inverted(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  NodeId output() const;

 private:
  struct Node {
    Node(OpKind k, std::vector<NodeId> in) : kind(k), inputs(std::move(in)) {}

    OpKind kind;
    std::vector<NodeId> inputs;
    std::string name;  // Input only
    std::size_t kernel = 0, stride = 1, padding = 0;
    std::size_t out_h = 0, out_w = 0;
    double factor = 1.0, offset = 0.0;
    bool flipped = false;  // CornerInversion decision from the last forward
    Grid value;
  };

  NodeId push(Node node);
  void eval(std::size_t index);
  void propagate(std::size_t index, std::vector<Grid>& grads);
  std::string describe(std::size_t index) const;

  std::vector<Node> nodes_;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

// Mean over the four corner patches of a 1 x H x W map; each patch is
// max(1, H/8) x max(1, W/8).
double corner_mean(const Grid& y);

}  // namespace saldist
