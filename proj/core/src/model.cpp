#include "saldist/model.hpp"

#include <algorithm>
#include <cmath>

#include "saldist/errors.hpp"

namespace saldist {

namespace {

const double kInitGain = std::sqrt(6.0);

constexpr const char* kImageInput = "image";

struct ConvSpec {
  const char* name;
  std::size_t in, out, stride;

  std::size_t kernel() const { return stride == 2 ? arch::kDownKernel : arch::kKernel; }
};

constexpr ConvSpec kConvs[] = {
    {"stem", 3, arch::kStemWidth, 2},
    {"enc1.down", arch::kStemWidth, 16, 2},
    {"enc1.conv", 16, 16, 1},
    {"enc2.down", 16, 32, 2},
    {"enc2.conv", 32, 32, 1},
    {"enc3.down", 32, 64, 2},
    {"enc3.conv", 64, 64, 1},
};

Shape conv_weight_shape(const ConvSpec& c) { return Shape{c.out, c.in, c.kernel() * c.kernel()}; }

std::vector<std::pair<std::string, Shape>> make_layout() {
  std::vector<std::pair<std::string, Shape>> layout;
  for (const ConvSpec& c : kConvs) {
    layout.emplace_back(std::string(c.name) + ".weight", conv_weight_shape(c));
    layout.emplace_back(std::string(c.name) + ".bias", Shape{c.out, 1, 1});
  }
  for (const SeBlockSpec* se : {&se_spec(3), &se_spec(4), &se_spec(5), &fusion_se_spec()}) {
    const std::size_t r = se->reduced();
    layout.emplace_back(se->prefix + ".fc1.weight", Shape{1, r, se->channels});
    layout.emplace_back(se->prefix + ".fc1.bias", Shape{r, 1, 1});
    layout.emplace_back(se->prefix + ".fc2.weight", Shape{1, se->channels, r});
    layout.emplace_back(se->prefix + ".fc2.bias", Shape{se->channels, 1, 1});
  }
  return layout;
}

double fan_in(const std::string& name, const Shape& s) {
  if (name.find(".fc") != std::string::npos) return static_cast<double>(s.width);
  return static_cast<double>(s.height * s.width);
}

NodeId conv_abs(DiffGraph& g, NodeId x, const ConvSpec& c) {
  const std::string n = c.name;
  const NodeId w = g.input(n + ".weight");
  const NodeId b = g.input(n + ".bias");
  // Zero padding then acts as padding with the channel mean.
  const NodeId centred = g.subtract_broadcast(x, g.spatial_mean(x));
  const NodeId z = g.conv2d(centred, w, b, c.kernel(), c.stride, 1);
  // |z| as relu(z) + relu(-z), so light and dark objects respond alike.
  return g.add(g.relu(z), g.relu(g.scale(z, -1.0)));
}

void require_stage(const Grid& e, std::size_t channels, const char* which) {
  if (e.channels() != channels || e.height() == 0 || e.width() == 0) {
    throw ShapeError(std::string("activation head: ") + which + " expected " + std::to_string(channels) +
                     " channels, got " + e.shape().str());
  }
}

}  // namespace

std::size_t SeBlockSpec::reduced() const { return std::max<std::size_t>(1, channels / reduction); }

const SeBlockSpec& se_spec(int stage) {
  static const SeBlockSpec specs[3] = {{"se3", 16}, {"se4", 32}, {"se5", 64}};
  if (stage < 3 || stage > 5) throw ParameterError("SE stage must be 3, 4 or 5");
  return specs[stage - 3];
}

const SeBlockSpec& fusion_se_spec() {
  static const SeBlockSpec spec{"fuse", arch::kFusedWidth};
  return spec;
}

const std::vector<std::pair<std::string, Shape>>& ModelParams::layout() {
  static const auto layout = make_layout();
  return layout;
}

ModelParams ModelParams::initialize(Rng& rng) {
  ModelParams p;
  for (const auto& [name, shape] : layout()) {
    Grid g(shape);
    if (name.ends_with(".weight")) {
      const double bound = kInitGain / std::sqrt(fan_in(name, shape));
      for (double& v : g.values()) v = rng.uniform(-bound, bound);
    }
    p.entries_.emplace_back(name, std::move(g));
  }
  return p;
}

ModelParams ModelParams::from_entries(std::vector<std::pair<std::string, Grid>> entries, std::uint64_t step) {
  const auto& want = layout();
  if (entries.size() != want.size()) {
    throw FormatError("expected " + std::to_string(want.size()) + " parameters, got " +
                      std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (entries[i].first != want[i].first) {
      throw FormatError("parameter " + std::to_string(i) + " is '" + entries[i].first + "', expected '" +
                        want[i].first + "'");
    }
    if (entries[i].second.shape() != want[i].second) {
      throw FormatError("parameter '" + want[i].first + "' has shape " + entries[i].second.shape().str() +
                        ", expected " + want[i].second.str());
    }
  }
  ModelParams p;
  p.entries_ = std::move(entries);
  p.step_ = step;
  return p;
}

const Grid& ModelParams::get(const std::string& name) const {
  for (const auto& [n, g] : entries_)
    if (n == name) return g;
  throw ParameterError("unknown parameter '" + name + "'");
}

Grid& ModelParams::get(const std::string& name) {
  return const_cast<Grid&>(std::as_const(*this).get(name));
}

void ModelParams::bind(Bindings& bindings) const {
  for (const auto& [name, g] : entries_) bindings.bind(name, g);
}

NodeId build_se_block(DiffGraph& graph, NodeId features, const SeBlockSpec& spec) {
  const NodeId pooled = graph.global_avg_pool(features);
  const NodeId w1 = graph.input(spec.prefix + ".fc1.weight");
  const NodeId b1 = graph.input(spec.prefix + ".fc1.bias");
  const NodeId w2 = graph.input(spec.prefix + ".fc2.weight");
  const NodeId b2 = graph.input(spec.prefix + ".fc2.bias");
  const NodeId hidden = graph.relu(graph.fully_connected(pooled, w1, b1));
  const NodeId gate = graph.sigmoid(graph.fully_connected(hidden, w2, b2));
  return graph.multiply(features, gate);
}

EncoderNodes build_encoder(DiffGraph& graph, NodeId image) {
  NodeId x = conv_abs(graph, image, kConvs[0]);
  EncoderNodes out{};
  NodeId* stages[3] = {&out.e3, &out.e4, &out.e5};
  for (int s = 0; s < 3; ++s) {
    x = conv_abs(graph, x, kConvs[1 + 2 * s]);
    x = conv_abs(graph, x, kConvs[2 + 2 * s]);
    *stages[s] = x;
  }
  return out;
}

HeadNodes build_activation_head(DiffGraph& graph, const EncoderNodes& features, std::size_t out_h,
                                std::size_t out_w) {
  // E3 sits at stride 4; deeper stages are upsampled to its size.
  const std::size_t h4 = out_h / 4, w4 = out_w / 4;
  const NodeId f3 = build_se_block(graph, features.e3, se_spec(3));
  const NodeId f4 = graph.resize_bilinear(build_se_block(graph, features.e4, se_spec(4)), h4, w4);
  const NodeId f5 = graph.resize_bilinear(build_se_block(graph, features.e5, se_spec(5)), h4, w4);
  HeadNodes head{};
  head.fused = build_se_block(graph, graph.concat_channels({f3, f4, f5}), fusion_se_spec());
  const NodeId mean = graph.spatial_mean(head.fused);
  head.centered = graph.channel_sum(graph.subtract_broadcast(head.fused, mean));
  head.saliency = graph.sigmoid(head.centered);
  head.inverted = graph.corner_inversion(head.saliency);
  head.output = graph.resize_bilinear(head.inverted, out_h, out_w);
  return head;
}

Grid se_block(const ModelParams& params, const SeBlockSpec& spec, const Grid& features) {
  if (features.channels() != spec.channels) {
    throw ShapeError("SE block '" + spec.prefix + "' expects " + std::to_string(spec.channels) +
                     " channels, got " + features.shape().str());
  }
  DiffGraph graph;
  build_se_block(graph, graph.input("features"), spec);
  Bindings b;
  params.bind(b);
  b.bind("features", features);
  return graph.forward(b);
}

EncoderFeatures encoder_forward(const ModelParams& params, const Grid& image) {
  if (image.channels() != 3) throw ShapeError("encoder expects a 3-channel image, got " + image.shape().str());
  if (image.height() % arch::kInputMultiple != 0 || image.width() % arch::kInputMultiple != 0 ||
      image.height() == 0 || image.width() == 0) {
    throw ShapeError("encoder input " + image.shape().str() + ": height and width must be positive multiples of " +
                     std::to_string(arch::kInputMultiple));
  }
  DiffGraph graph;
  const EncoderNodes nodes = build_encoder(graph, graph.input(kImageInput));
  Bindings b;
  params.bind(b);
  b.bind(kImageInput, image);
  graph.forward(b);
  return EncoderFeatures{graph.value(nodes.e3), graph.value(nodes.e4), graph.value(nodes.e5)};
}

HeadOutput activation_head(const ModelParams& params, const EncoderFeatures& features, std::size_t out_h,
                           std::size_t out_w) {
  require_stage(features.e3, arch::kStageWidths[0], "E3");
  require_stage(features.e4, arch::kStageWidths[1], "E4");
  require_stage(features.e5, arch::kStageWidths[2], "E5");
  const std::size_t h3 = features.e3.height(), w3 = features.e3.width();
  if (features.e4.height() * 2 != h3 || features.e4.width() * 2 != w3 || features.e5.height() * 4 != h3 ||
      features.e5.width() * 4 != w3) {
    throw ShapeError("activation head: stage sizes " + features.e3.shape().str() + ", " +
                     features.e4.shape().str() + ", " + features.e5.shape().str() +
                     " are not at strides 4/8/16 of one input");
  }
  if (out_h != h3 * 4 || out_w != w3 * 4) {
    throw ShapeError("activation head: output size must be 4x the E3 size");
  }
  DiffGraph graph;
  const EncoderNodes nodes{graph.input("e3"), graph.input("e4"), graph.input("e5")};
  const HeadNodes head = build_activation_head(graph, nodes, out_h, out_w);
  Bindings b;
  params.bind(b);
  b.bind("e3", features.e3).bind("e4", features.e4).bind("e5", features.e5);
  graph.forward(b);
  return HeadOutput{graph.value(head.centered), graph.value(head.saliency), graph.inverted(head.inverted),
                    graph.value(head.output)};
}

Grid corner_inversion(const Grid& y) {
  require_single_channel(y, "corner_inversion");
  if (corner_mean(y) <= 0.5) return y;
  Grid out = y;
  for (double& v : out.values()) v = 1.0 - v;
  return out;
}

ForwardPass::ForwardPass(const ModelParams& params, const Grid& image) {
  if (image.channels() != 3 || image.height() % arch::kInputMultiple != 0 ||
      image.width() % arch::kInputMultiple != 0 || image.empty()) {
    throw ShapeError("model input " + image.shape().str() + ": expected 3 channels with sides divisible by " +
                     std::to_string(arch::kInputMultiple));
  }
  const EncoderNodes enc = build_encoder(graph_, graph_.input(kImageInput));
  head_ = build_activation_head(graph_, enc, image.height(), image.width());
  Bindings b;
  params.bind(b);
  b.bind(kImageInput, image);
  graph_.forward(b);
}

Gradients ForwardPass::backward(const Grid& seed) {
  Gradients grads = graph_.backward(seed);
  grads.erase(kImageInput);
  return grads;
}

Grid predict(const ModelParams& params, const Grid& image) { return ForwardPass(params, image).prediction(); }

}  // namespace saldist
