#include "saldist/diff_graph.hpp"

#include <algorithm>
#include <cmath>

#include "saldist/errors.hpp"

namespace saldist {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::Multiply: return "multiply";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::ChannelSum: return "channel_sum";
    case OpKind::SpatialMean: return "spatial_mean";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::SubtractBroadcast: return "subtract_broadcast";
    case OpKind::FullyConnected: return "fully_connected";
    case OpKind::ResizeBilinear: return "resize_bilinear";
    case OpKind::Scale: return "scale";
    case OpKind::CornerInversion: return "corner_inversion";
  }
  return "unknown";
}

Bindings& Bindings::bind(std::string name, const Grid& value) {
  values_[std::move(name)] = &value;
  return *this;
}

const Grid* Bindings::find(const std::string& name) const {
  auto it = values_.find(name);
  return it == values_.end() ? nullptr : it->second;
}

double corner_mean(const Grid& y) {
  require_single_channel(y, "corner statistic");
  const std::size_t ph = std::max<std::size_t>(1, y.height() / 8);
  const std::size_t pw = std::max<std::size_t>(1, y.width() / 8);
  double total = 0.0;
  const std::size_t y_starts[2] = {0, y.height() - ph};
  const std::size_t x_starts[2] = {0, y.width() - pw};
  for (std::size_t y0 : y_starts)
    for (std::size_t x0 : x_starts)
      for (std::size_t dy = 0; dy < ph; ++dy)
        for (std::size_t dx = 0; dx < pw; ++dx) total += y.at(0, y0 + dy, x0 + dx);
  return total / static_cast<double>(4 * ph * pw);
}

namespace {

double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Output index range [lo, hi) for which `o * stride + tap - padding` lies in [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t in, std::size_t out, std::size_t tap,
                                                std::size_t stride, std::size_t padding) {
  std::size_t lo = 0;
  if (padding > tap) lo = (padding - tap + stride - 1) / stride;
  // largest o with o * stride + tap - padding <= in - 1
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(padding) -
                             static_cast<std::ptrdiff_t>(tap);
  if (top < 0) return {0, 0};
  std::size_t hi = static_cast<std::size_t>(top) / stride + 1;
  hi = std::min(hi, out);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

}  // namespace

NodeId DiffGraph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in.index >= nodes_.size()) {
      throw StateError("graph node inputs must reference earlier nodes (node " +
                       std::to_string(nodes_.size()) + " references " + std::to_string(in.index) + ")");
    }
  }
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  return NodeId{nodes_.size() - 1};
}

NodeId DiffGraph::input(std::string name) {
  Node n{OpKind::Input, {}};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId DiffGraph::conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t kernel, std::size_t stride,
                         std::size_t padding) {
  if (kernel == 0 || stride == 0) throw ParameterError("conv2d kernel and stride must be positive");
  Node n{OpKind::Conv2d, {x, weight, bias}};
  n.kernel = kernel;
  n.stride = stride;
  n.padding = padding;
  return push(std::move(n));
}

NodeId DiffGraph::sigmoid(NodeId x) { return push(Node{OpKind::Sigmoid, {x}}); }
NodeId DiffGraph::relu(NodeId x) { return push(Node{OpKind::Relu, {x}}); }
NodeId DiffGraph::add(NodeId a, NodeId b) { return push(Node{OpKind::Add, {a, b}}); }
NodeId DiffGraph::multiply(NodeId a, NodeId b) { return push(Node{OpKind::Multiply, {a, b}}); }

NodeId DiffGraph::concat_channels(std::vector<NodeId> parts) {
  if (parts.empty()) throw ParameterError("concat_channels needs at least one input");
  return push(Node{OpKind::ConcatChannels, std::move(parts)});
}

NodeId DiffGraph::channel_sum(NodeId x) { return push(Node{OpKind::ChannelSum, {x}}); }
NodeId DiffGraph::spatial_mean(NodeId x) { return push(Node{OpKind::SpatialMean, {x}}); }
NodeId DiffGraph::global_avg_pool(NodeId x) { return push(Node{OpKind::GlobalAvgPool, {x}}); }

NodeId DiffGraph::subtract_broadcast(NodeId x, NodeId mean) {
  return push(Node{OpKind::SubtractBroadcast, {x, mean}});
}

NodeId DiffGraph::fully_connected(NodeId v, NodeId weight, NodeId bias) {
  return push(Node{OpKind::FullyConnected, {v, weight, bias}});
}

NodeId DiffGraph::resize_bilinear(NodeId x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ParameterError("resize target must be at least 1x1");
  Node n{OpKind::ResizeBilinear, {x}};
  n.out_h = out_h;
  n.out_w = out_w;
  return push(std::move(n));
}

NodeId DiffGraph::scale(NodeId x, double factor, double offset) {
  Node n{OpKind::Scale, {x}};
  n.factor = factor;
  n.offset = offset;
  return push(std::move(n));
}

NodeId DiffGraph::corner_inversion(NodeId x) { return push(Node{OpKind::CornerInversion, {x}}); }

NodeId DiffGraph::output() const {
  if (nodes_.empty()) throw StateError("graph has no nodes");
  return NodeId{nodes_.size() - 1};
}

const Grid& DiffGraph::value(NodeId id) const {
  if (!forward_done_) throw StateError("graph values requested before forward");
  return nodes_.at(id.index).value;
}

bool DiffGraph::inverted(NodeId id) const {
  if (!forward_done_) throw StateError("inversion state requested before forward");
  return nodes_.at(id.index).flipped;
}

std::string DiffGraph::describe(std::size_t index) const {
  return "node " + std::to_string(index) + " (" + std::string(op_name(nodes_[index].kind)) + ")";
}

const Grid& DiffGraph::forward(const Bindings& inputs) {
  if (nodes_.empty()) throw StateError("forward on an empty graph");
  forward_done_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::Input) {
      const Grid* bound = inputs.find(n.name);
      if (bound == nullptr) throw StateError("input '" + n.name + "' is not bound");
      n.value = *bound;
    } else {
      eval(i);
    }
    if (!n.value.all_finite()) throw NumericalError(describe(i) + " produced a non-finite value");
  }
  forward_done_ = true;
  backward_done_ = false;
  return nodes_.back().value;
}

void DiffGraph::eval(std::size_t index) {
  Node& n = nodes_[index];
  auto in = [&](std::size_t k) -> const Grid& { return nodes_[n.inputs[k].index].value; };
  auto mismatch = [&](const std::string& detail) { return ShapeError(describe(index) + ": " + detail); };

  switch (n.kind) {
    case OpKind::Input: break;
    case OpKind::Conv2d: {
      const Grid& x = in(0);
      const Grid& w = in(1);
      const Grid& b = in(2);
      const std::size_t k = n.kernel, s = n.stride, p = n.padding;
      const std::size_t co_n = w.channels();
      const Shape want_w{co_n, x.channels(), k * k};
      if (w.shape() != want_w) {
        throw mismatch("weight expected " + want_w.str() + ", got " + w.shape().str());
      }
      if (b.shape() != Shape{co_n, 1, 1}) {
        throw mismatch("bias expected " + Shape{co_n, 1, 1}.str() + ", got " + b.shape().str());
      }
      if (x.height() + 2 * p < k || x.width() + 2 * p < k) {
        throw mismatch("input " + x.shape().str() + " smaller than kernel " + std::to_string(k));
      }
      const std::size_t oh = (x.height() + 2 * p - k) / s + 1;
      const std::size_t ow = (x.width() + 2 * p - k) / s + 1;
      Grid out(Shape{co_n, oh, ow});
      for (std::size_t co = 0; co < co_n; ++co) {
        auto dst = out.channel(co);
        std::fill(dst.begin(), dst.end(), b[co]);
        for (std::size_t ci = 0; ci < x.channels(); ++ci) {
          auto src = x.channel(ci);
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto [oy0, oy1] = valid_range(x.height(), oh, ky, s, p);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto [ox0, ox1] = valid_range(x.width(), ow, kx, s, p);
              const double wv = w.at(co, ci, ky * k + kx);
              for (std::size_t oy = oy0; oy < oy1; ++oy) {
                const std::size_t iy = oy * s + ky - p;
                const double* srow = src.data() + iy * x.width();
                double* drow = dst.data() + oy * ow;
                for (std::size_t ox = ox0; ox < ox1; ++ox) drow[ox] += wv * srow[ox * s + kx - p];
              }
            }
          }
        }
      }
      n.value = std::move(out);
      break;
    }
    case OpKind::Sigmoid: {
      Grid out = in(0);
      for (double& v : out.values()) v = sigmoid_scalar(v);
      n.value = std::move(out);
      break;
    }
    case OpKind::Relu: {
      Grid out = in(0);
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      n.value = std::move(out);
      break;
    }
    case OpKind::Add: {
      if (in(0).shape() != in(1).shape()) {
        throw mismatch("operands " + in(0).shape().str() + " and " + in(1).shape().str());
      }
      Grid out = in(0);
      out += in(1);
      n.value = std::move(out);
      break;
    }
    case OpKind::Multiply: {
      const Grid& a = in(0);
      const Grid& b = in(1);
      Grid out = a;
      if (b.shape() == a.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      } else if (b.shape() == Shape{a.channels(), 1, 1}) {
        for (std::size_t c = 0; c < a.channels(); ++c)
          for (double& v : out.channel(c)) v *= b[c];
      } else {
        throw mismatch("operands " + a.shape().str() + " and " + b.shape().str() +
                       " (expected equal shapes or a Cx1x1 gate)");
      }
      n.value = std::move(out);
      break;
    }
    case OpKind::ConcatChannels: {
      const Grid& first = in(0);
      std::size_t total = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Grid& g = in(k);
        if (g.height() != first.height() || g.width() != first.width()) {
          throw mismatch("part " + std::to_string(k) + " has shape " + g.shape().str() +
                         ", expected spatial size " + std::to_string(first.height()) + "x" +
                         std::to_string(first.width()));
        }
        total += g.channels();
      }
      Grid out(Shape{total, first.height(), first.width()});
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const auto src = in(k).values();
        std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += src.size();
      }
      n.value = std::move(out);
      break;
    }
    case OpKind::ChannelSum: {
      const Grid& x = in(0);
      Grid out(Shape{1, x.height(), x.width()});
      for (std::size_t c = 0; c < x.channels(); ++c) {
        const auto src = x.channel(c);
        for (std::size_t i = 0; i < src.size(); ++i) out[i] += src[i];
      }
      n.value = std::move(out);
      break;
    }
    case OpKind::SpatialMean:
    case OpKind::GlobalAvgPool: {
      const Grid& x = in(0);
      Grid out(Shape{x.channels(), 1, 1});
      const double inv = 1.0 / static_cast<double>(x.shape().plane());
      for (std::size_t c = 0; c < x.channels(); ++c) {
        double acc = 0.0;
        for (double v : x.channel(c)) acc += v;
        out[c] = acc * inv;
      }
      n.value = std::move(out);
      break;
    }
    case OpKind::SubtractBroadcast: {
      const Grid& x = in(0);
      const Grid& m = in(1);
      if (m.shape() != Shape{x.channels(), 1, 1}) {
        throw mismatch("mean expected " + Shape{x.channels(), 1, 1}.str() + ", got " + m.shape().str());
      }
      Grid out = x;
      for (std::size_t c = 0; c < x.channels(); ++c)
        for (double& v : out.channel(c)) v -= m[c];
      n.value = std::move(out);
      break;
    }
    case OpKind::FullyConnected: {
      const Grid& v = in(0);
      const Grid& w = in(1);
      const Grid& b = in(2);
      if (v.height() != 1 || v.width() != 1) throw mismatch("input must be Cx1x1, got " + v.shape().str());
      if (w.channels() != 1 || w.width() != v.channels()) {
        throw mismatch("weight expected 1xOutx" + std::to_string(v.channels()) + ", got " + w.shape().str());
      }
      if (b.shape() != Shape{w.height(), 1, 1}) {
        throw mismatch("bias expected " + Shape{w.height(), 1, 1}.str() + ", got " + b.shape().str());
      }
      Grid out(Shape{w.height(), 1, 1});
      for (std::size_t o = 0; o < w.height(); ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < v.channels(); ++i) acc += w.at(0, o, i) * v[i];
        out[o] = acc;
      }
      n.value = std::move(out);
      break;
    }
    case OpKind::ResizeBilinear:
      n.value = saldist::resize_bilinear(in(0), n.out_h, n.out_w);
      break;
    case OpKind::Scale: {
      Grid out = in(0);
      for (double& v : out.values()) v = n.factor * v + n.offset;
      n.value = std::move(out);
      break;
    }
    case OpKind::CornerInversion: {
      const Grid& y = in(0);
      if (y.channels() != 1) throw mismatch("expected a single-channel map, got " + y.shape().str());
      n.flipped = corner_mean(y) > 0.5;
      Grid out = y;
      if (n.flipped)
        for (double& v : out.values()) v = 1.0 - v;
      n.value = std::move(out);
      break;
    }
  }
}

Gradients DiffGraph::backward(const Grid& seed) {
  if (!forward_done_) throw StateError("backward called before forward");
  if (backward_done_) throw StateError("backward already ran for this forward; run forward again");
  require_shape(seed.shape(), nodes_.back().value.shape(), "backward seed");
  backward_done_ = true;

  std::vector<Grid> grads(nodes_.size());
  grads.back() = seed;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (grads[i].empty()) continue;
    propagate(i, grads);
  }

  Gradients result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != OpKind::Input) continue;
    Grid g = grads[i].empty() ? Grid(n.value.shape()) : std::move(grads[i]);
    auto it = result.find(n.name);
    if (it == result.end()) {
      result.emplace(n.name, std::move(g));
    } else {
      it->second += g;
    }
  }
  return result;
}

void DiffGraph::propagate(std::size_t index, std::vector<Grid>& grads) {
  const Node& n = nodes_[index];
  const Grid& g = grads[index];
  auto in = [&](std::size_t k) -> const Grid& { return nodes_[n.inputs[k].index].value; };
  auto accumulate = [&](std::size_t k, Grid contribution) {
    Grid& target = grads[n.inputs[k].index];
    if (target.empty()) {
      target = std::move(contribution);
    } else {
      target += contribution;
    }
  };

  switch (n.kind) {
    case OpKind::Input: break;
    case OpKind::Conv2d: {
      const Grid& x = in(0);
      const Grid& w = in(1);
      const std::size_t k = n.kernel, s = n.stride, p = n.padding;
      const std::size_t oh = g.height(), ow = g.width();
      Grid dx(x.shape());
      Grid dw(w.shape());
      Grid db(Shape{w.channels(), 1, 1});
      for (std::size_t co = 0; co < w.channels(); ++co) {
        const auto dy = g.channel(co);
        double acc = 0.0;
        for (double v : dy) acc += v;
        db[co] = acc;
        for (std::size_t ci = 0; ci < x.channels(); ++ci) {
          const auto src = x.channel(ci);
          auto dsrc = dx.channel(ci);
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto [oy0, oy1] = valid_range(x.height(), oh, ky, s, p);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto [ox0, ox1] = valid_range(x.width(), ow, kx, s, p);
              const double wv = w.at(co, ci, ky * k + kx);
              double wacc = 0.0;
              for (std::size_t oy = oy0; oy < oy1; ++oy) {
                const std::size_t iy = oy * s + ky - p;
                const double* srow = src.data() + iy * x.width();
                double* drow = dsrc.data() + iy * x.width();
                const double* grow = dy.data() + oy * ow;
                for (std::size_t ox = ox0; ox < ox1; ++ox) {
                  const std::size_t ix = ox * s + kx - p;
                  wacc += grow[ox] * srow[ix];
                  drow[ix] += wv * grow[ox];
                }
              }
              dw.at(co, ci, ky * k + kx) += wacc;
            }
          }
        }
      }
      accumulate(0, std::move(dx));
      accumulate(1, std::move(dw));
      accumulate(2, std::move(db));
      break;
    }
    case OpKind::Sigmoid: {
      Grid dx = g;
      const Grid& y = n.value;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
      accumulate(0, std::move(dx));
      break;
    }
    case OpKind::Relu: {
      Grid dx = g;
      const Grid& x = in(0);
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(x[i] > 0.0)) dx[i] = 0.0;
      accumulate(0, std::move(dx));
      break;
    }
    case OpKind::Add:
      accumulate(0, g);
      accumulate(1, g);
      break;
    case OpKind::Multiply: {
      const Grid& a = in(0);
      const Grid& b = in(1);
      Grid da = g;
      if (b.shape() == a.shape()) {
        Grid dbv = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] *= b[i];
          dbv[i] *= a[i];
        }
        accumulate(0, std::move(da));
        accumulate(1, std::move(dbv));
      } else {
        Grid dbv(b.shape());
        for (std::size_t c = 0; c < a.channels(); ++c) {
          auto dac = da.channel(c);
          const auto ac = a.channel(c);
          const auto gc = g.channel(c);
          double acc = 0.0;
          for (std::size_t i = 0; i < gc.size(); ++i) {
            acc += gc[i] * ac[i];
            dac[i] *= b[c];
          }
          dbv[c] = acc;
        }
        accumulate(0, std::move(da));
        accumulate(1, std::move(dbv));
      }
      break;
    }
    case OpKind::ConcatChannels: {
      std::size_t first = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t c = in(k).channels();
        accumulate(k, g.channels_slice(first, c));
        first += c;
      }
      break;
    }
    case OpKind::ChannelSum: {
      const Grid& x = in(0);
      Grid dx(x.shape());
      for (std::size_t c = 0; c < x.channels(); ++c) {
        auto d = dx.channel(c);
        std::copy(g.values().begin(), g.values().end(), d.begin());
      }
      accumulate(0, std::move(dx));
      break;
    }
    case OpKind::SpatialMean:
    case OpKind::GlobalAvgPool: {
      const Grid& x = in(0);
      Grid dx(x.shape());
      const double inv = 1.0 / static_cast<double>(x.shape().plane());
      for (std::size_t c = 0; c < x.channels(); ++c)
        for (double& v : dx.channel(c)) v = g[c] * inv;
      accumulate(0, std::move(dx));
      break;
    }
    case OpKind::SubtractBroadcast: {
      Grid dm(in(1).shape());
      for (std::size_t c = 0; c < g.channels(); ++c) {
        double acc = 0.0;
        for (double v : g.channel(c)) acc += v;
        dm[c] = -acc;
      }
      accumulate(0, g);
      accumulate(1, std::move(dm));
      break;
    }
    case OpKind::FullyConnected: {
      const Grid& v = in(0);
      const Grid& w = in(1);
      Grid dv(v.shape());
      Grid dw(w.shape());
      for (std::size_t o = 0; o < w.height(); ++o) {
        for (std::size_t i = 0; i < v.channels(); ++i) {
          dv[i] += w.at(0, o, i) * g[o];
          dw.at(0, o, i) = g[o] * v[i];
        }
      }
      accumulate(0, std::move(dv));
      accumulate(1, std::move(dw));
      accumulate(2, g);
      break;
    }
    case OpKind::ResizeBilinear:
      accumulate(0, resize_bilinear_backward(g, in(0).shape()));
      break;
    case OpKind::Scale: {
      Grid dx = g;
      dx *= n.factor;
      accumulate(0, std::move(dx));
      break;
    }
    case OpKind::CornerInversion: {
      Grid dx = g;
      if (n.flipped) dx *= -1.0;
      accumulate(0, std::move(dx));
      break;
    }
  }
}

}  // namespace saldist
