#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "saldist/diff_graph.hpp"
#include "saldist/grid.hpp"
#include "saldist/rng.hpp"

namespace saldist {

// Architecture of the desk-scale detector.
//
//   stem       conv4x4 s2   3 -> 8
//   enc1       conv4x4 s2   8 -> 16,  conv3x3 s1 16 -> 16   E3, stride 4
//   enc2       conv4x4 s2  16 -> 32,  conv3x3 s1 32 -> 32   E4, stride 8
//   enc3       conv4x4 s2  32 -> 64,  conv3x3 s1 64 -> 64   E5, stride 16
//   se3/4/5    SE gates on each stage (reduction 4)
//   fuse       SE gate on concat(F3, F4, F5 resized to stride 4), 112 channels
//
// Every conv sees its input minus the per-channel spatial mean and uses
// padding 1, and is followed by |z|. The head then subtracts the per-channel
// spatial mean, sums channels, applies sigmoid and the corner-based inversion
// and resizes back to the input resolution.
namespace arch {
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kDownKernel = 4;
inline constexpr std::size_t kStemWidth = 8;
inline constexpr std::size_t kStageWidths[3] = {16, 32, 64};
inline constexpr std::size_t kFusedWidth = 16 + 32 + 64;
inline constexpr std::size_t kReduction = 4;
inline constexpr std::size_t kInputMultiple = 16;
}  // namespace arch

// Named model parameters in their fixed documented order, plus the number of
// optimiser steps applied so far.
class ModelParams {
 public:
  // Parameter names and shapes, in checkpoint order.
  static const std::vector<std::pair<std::string, Shape>>& layout();

  // Convolution and fully-connected weights ~ U(-g/sqrt(fan_in), g/sqrt(fan_in))
  // with gain g = sqrt(6), biases zero.
  static ModelParams initialize(Rng& rng);

  // Builds from explicit values; names and shapes must match layout() exactly.
  static ModelParams from_entries(std::vector<std::pair<std::string, Grid>> entries, std::uint64_t step);

  const Grid& get(const std::string& name) const;
  Grid& get(const std::string& name);
  const std::vector<std::pair<std::string, Grid>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Grid>>& entries() { return entries_; }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  void bind(Bindings& bindings) const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::vector<std::pair<std::string, Grid>> entries_;
  std::uint64_t step_ = 0;
};

struct SeBlockSpec {
  std::string prefix;  // parameter names are <prefix>.fc1.weight etc.
  std::size_t channels = 0;
  std::size_t reduction = arch::kReduction;

  std::size_t reduced() const;
};

const SeBlockSpec& se_spec(int stage);  // stage 3, 4 or 5
const SeBlockSpec& fusion_se_spec();

// Graph builders. Parameters are graph inputs named as in ModelParams::layout().
NodeId build_se_block(DiffGraph& graph, NodeId features, const SeBlockSpec& spec);

struct EncoderNodes {
  NodeId e3, e4, e5;
};
EncoderNodes build_encoder(DiffGraph& graph, NodeId image);

struct HeadNodes {
  NodeId fused;      // H
  NodeId centered;   // channel sum of H - mean(H), stride 4
  NodeId saliency;   // sigmoid of `centered`, stride 4
  NodeId inverted;   // after corner inversion, stride 4
  NodeId output;     // resized to the input resolution
};
HeadNodes build_activation_head(DiffGraph& graph, const EncoderNodes& features, std::size_t out_h,
                                std::size_t out_w);

// Evaluated forms of the builders above.
Grid se_block(const ModelParams& params, const SeBlockSpec& spec, const Grid& features);

struct EncoderFeatures {
  Grid e3, e4, e5;
};
EncoderFeatures encoder_forward(const ModelParams& params, const Grid& image);

struct HeadOutput {
  Grid centered;  // pre-sigmoid stride-4 plane
  Grid saliency;  // stride-4 plane after sigmoid, before inversion
  bool inverted = false;
  Grid y;  // final map at out_h x out_w
};
HeadOutput activation_head(const ModelParams& params, const EncoderFeatures& features, std::size_t out_h,
                           std::size_t out_w);

// Returns 1 - y when the corner-patch mean of y is strictly above 0.5.
Grid corner_inversion(const Grid& y);

// Full image -> saliency pass kept alive for a backward pass.
class ForwardPass {
 public:
  ForwardPass(const ModelParams& params, const Grid& image);

  const Grid& prediction() const { return graph_.value(head_.output); }
  bool inverted() const { return graph_.inverted(head_.inverted); }

  // Gradients of every parameter given d(loss)/d(prediction).
  Gradients backward(const Grid& seed);

 private:
  DiffGraph graph_;
  HeadNodes head_;
};

// Saliency map for one image.
Grid predict(const ModelParams& params, const Grid& image);

}  // namespace saldist
