#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "saldist/diff_graph.hpp"
#include "saldist/errors.hpp"
#include "saldist/grad_check.hpp"
#include "saldist/losses.hpp"
#include "saldist/texture.hpp"
#include "support.hpp"

using namespace saldist;
using testing::random_grid;

namespace {

struct OpCase {
  std::string name;
  std::vector<std::pair<std::string, Grid>> inputs;
  std::function<void(DiffGraph&, const std::vector<NodeId>&)> build;
};

// f(inputs) = <graph output, w> for a fixed random w; checks d f / d input for
// every input against central differences.
double worst_op_error(const OpCase& op, std::uint64_t seed) {
  auto run = [&](const std::vector<std::pair<std::string, Grid>>& inputs, const Grid* seed_grid, Gradients* grads) {
    DiffGraph g;
    std::vector<NodeId> ids;
    for (const auto& [name, value] : inputs) ids.push_back(g.input(name));
    op.build(g, ids);
    Bindings b;
    for (const auto& [name, value] : inputs) b.bind(name, value);
    const Grid out = g.forward(b);
    if (grads) *grads = g.backward(*seed_grid);
    return out;
  };

  Rng rng(seed);
  const Grid probe = run(op.inputs, nullptr, nullptr);
  const Grid w = random_grid(rng, probe.shape());
  Gradients grads;
  run(op.inputs, &w, &grads);

  double worst = 0.0;
  for (std::size_t k = 0; k < op.inputs.size(); ++k) {
    auto f = [&](const Grid& x) {
      auto inputs = op.inputs;
      inputs[k].second = x;
      return testing::dot(run(inputs, nullptr, nullptr), w);
    };
    worst = std::max(worst, grad_check(f, op.inputs[k].second, grads.at(op.inputs[k].first), 1e-5));
  }
  return worst;
}

}  // namespace

TEST_CASE("sigmoid of zeros is one half") {
  DiffGraph g;
  g.sigmoid(g.input("x"));
  const Grid x(1, 2, 2);
  const Grid& y = g.forward(Bindings().bind("x", x));
  for (double v : y.values()) CHECK(v == 0.5);
}

TEST_CASE("channel sum collapses channels") {
  DiffGraph g;
  g.channel_sum(g.input("x"));
  const Grid x(Shape{3, 1, 1}, {1.0, 2.0, 3.0});
  const Grid& y = g.forward(Bindings().bind("x", x));
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == 6.0);
}

TEST_CASE("sigmoid derivative at zero") {
  DiffGraph g;
  g.sigmoid(g.input("x"));
  const Grid x(1, 1, 1);
  g.forward(Bindings().bind("x", x));
  const Gradients grads = g.backward(Grid(1, 1, 1, 1.0));
  CHECK(grads.at("x")[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("bilinear upsampling fixture") {
  const Grid x(Shape{1, 1, 2}, {0.0, 1.0});
  const Grid y = resize_bilinear(x, 1, 4);
  // Pixel centres of the 4-wide output map to source positions -0.25, 0.25, 0.75, 1.25.
  REQUIRE(y.shape() == Shape{1, 1, 4});
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.25);
  CHECK(y[2] == 0.75);
  CHECK(y[3] == 1.0);
}

TEST_CASE("bilinear resize is the identity at the same size") {
  Rng rng(4);
  const Grid x = random_grid(rng, {2, 5, 7});
  CHECK(resize_bilinear(x, 5, 7) == x);
}

TEST_CASE("bilinear backward is the adjoint of the forward resize") {
  Rng rng(9);
  const std::pair<std::size_t, std::size_t> sizes[] = {{3, 9}, {12, 5}, {8, 8}, {1, 1}};
  for (auto [oh, ow] : sizes) {
    const Grid x = random_grid(rng, {2, 6, 4});
    const Grid y = random_grid(rng, {2, oh, ow});
    const double lhs = testing::dot(resize_bilinear(x, oh, ow), y);
    const double rhs = testing::dot(x, resize_bilinear_backward(y, x.shape()));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("nearest resize keeps binary masks binary") {
  Grid mask(1, 10, 10);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 5; x < 10; ++x) mask.at(0, y, x) = 1.0;
  const Grid out = resize_nearest(mask, 16, 16);
  for (double v : out.values()) CHECK((v == 0.0 || v == 1.0));
  CHECK(out.at(0, 0, 0) == 0.0);
  CHECK(out.at(0, 15, 15) == 1.0);
}

TEST_CASE("flip_horizontal mirrors every channel") {
  Grid x(Shape{2, 1, 3}, {1, 2, 3, 4, 5, 6});
  const Grid y = flip_horizontal(x);
  CHECK(y == Grid(Shape{2, 1, 3}, {3, 2, 1, 6, 5, 4}));
  CHECK(flip_horizontal(y) == x);
}

TEST_CASE("every op matches central differences") {
  Rng rng(17);
  const Shape s{2, 5, 6};
  // Relu inputs stay away from the kink.
  const Grid relu_in = testing::random_grid_avoiding(rng, s, -1.0, 1.0, 0.0, 0.05);

  Grid corners_high(1, 8, 8);
  for (double& v : corners_high.values()) v = rng.uniform(0.7, 0.9);
  corners_high.at(0, 4, 4) = 0.2;

  std::vector<OpCase> cases;
  cases.push_back({"conv2d s1 p1",
                   {{"x", random_grid(rng, {3, 6, 5})}, {"w", random_grid(rng, {4, 3, 9})}, {"b", random_grid(rng, {4, 1, 1})}},
                   [](DiffGraph& g, const auto& id) { g.conv2d(id[0], id[1], id[2], 3, 1, 1); }});
  cases.push_back({"conv2d s2 p1",
                   {{"x", random_grid(rng, {2, 8, 8})}, {"w", random_grid(rng, {3, 2, 9})}, {"b", random_grid(rng, {3, 1, 1})}},
                   [](DiffGraph& g, const auto& id) { g.conv2d(id[0], id[1], id[2], 3, 2, 1); }});
  cases.push_back({"conv2d s2 p0",
                   {{"x", random_grid(rng, {2, 7, 9})}, {"w", random_grid(rng, {2, 2, 9})}, {"b", random_grid(rng, {2, 1, 1})}},
                   [](DiffGraph& g, const auto& id) { g.conv2d(id[0], id[1], id[2], 3, 2, 0); }});
  cases.push_back({"sigmoid", {{"x", random_grid(rng, s, -3, 3)}}, [](DiffGraph& g, const auto& id) { g.sigmoid(id[0]); }});
  cases.push_back({"relu", {{"x", relu_in}}, [](DiffGraph& g, const auto& id) { g.relu(id[0]); }});
  cases.push_back({"add", {{"a", random_grid(rng, s)}, {"b", random_grid(rng, s)}},
                   [](DiffGraph& g, const auto& id) { g.add(id[0], id[1]); }});
  cases.push_back({"multiply", {{"a", random_grid(rng, s)}, {"b", random_grid(rng, s)}},
                   [](DiffGraph& g, const auto& id) { g.multiply(id[0], id[1]); }});
  cases.push_back({"multiply gate", {{"a", random_grid(rng, s)}, {"b", random_grid(rng, {2, 1, 1})}},
                   [](DiffGraph& g, const auto& id) { g.multiply(id[0], id[1]); }});
  cases.push_back({"concat", {{"a", random_grid(rng, {1, 4, 3})}, {"b", random_grid(rng, {3, 4, 3})}},
                   [](DiffGraph& g, const auto& id) { g.concat_channels({id[0], id[1]}); }});
  cases.push_back({"channel sum", {{"x", random_grid(rng, s)}}, [](DiffGraph& g, const auto& id) { g.channel_sum(id[0]); }});
  cases.push_back({"spatial mean", {{"x", random_grid(rng, s)}}, [](DiffGraph& g, const auto& id) { g.spatial_mean(id[0]); }});
  cases.push_back({"global pool", {{"x", random_grid(rng, s)}}, [](DiffGraph& g, const auto& id) { g.global_avg_pool(id[0]); }});
  cases.push_back({"subtract broadcast", {{"x", random_grid(rng, s)}, {"m", random_grid(rng, {2, 1, 1})}},
                   [](DiffGraph& g, const auto& id) { g.subtract_broadcast(id[0], id[1]); }});
  cases.push_back({"fully connected",
                   {{"v", random_grid(rng, {5, 1, 1})}, {"w", random_grid(rng, {1, 3, 5})}, {"b", random_grid(rng, {3, 1, 1})}},
                   [](DiffGraph& g, const auto& id) { g.fully_connected(id[0], id[1], id[2]); }});
  cases.push_back({"resize up", {{"x", random_grid(rng, {2, 3, 4})}},
                   [](DiffGraph& g, const auto& id) { g.resize_bilinear(id[0], 7, 9); }});
  cases.push_back({"resize down", {{"x", random_grid(rng, {2, 9, 8})}},
                   [](DiffGraph& g, const auto& id) { g.resize_bilinear(id[0], 4, 3); }});
  cases.push_back({"scale", {{"x", random_grid(rng, s)}}, [](DiffGraph& g, const auto& id) { g.scale(id[0], -1.5, 0.25); }});
  cases.push_back({"corner inversion flipped", {{"y", corners_high}},
                   [](DiffGraph& g, const auto& id) { g.corner_inversion(id[0]); }});
  cases.push_back({"corner inversion kept", {{"y", random_grid(rng, {1, 8, 8}, 0.1, 0.3)}},
                   [](DiffGraph& g, const auto& id) { g.corner_inversion(id[0]); }});

  for (const OpCase& op : cases) {
    CAPTURE(op.name);
    CHECK(worst_op_error(op, 101) < 1e-4);
  }
}

TEST_CASE("concat backward routes seed slices to their inputs") {
  const Grid a(1, 2, 2, 1.0), b(2, 2, 2, 2.0), c(1, 2, 2, 3.0);
  for (std::size_t hot = 0; hot < 16; ++hot) {
    DiffGraph gg;
    gg.concat_channels({gg.input("a"), gg.input("b"), gg.input("c")});
    gg.forward(Bindings().bind("a", a).bind("b", b).bind("c", c));
    Grid seed(4, 2, 2);
    seed[hot] = 1.0;
    const Gradients grads = gg.backward(seed);
    const std::size_t channel = hot / 4, pixel = hot % 4;
    const char* owner = channel == 0 ? "a" : channel < 3 ? "b" : "c";
    const std::size_t local = channel == 0 ? pixel : channel < 3 ? (channel - 1) * 4 + pixel : pixel;
    for (const char* name : {"a", "b", "c"}) {
      const Grid& gr = grads.at(name);
      for (std::size_t i = 0; i < gr.size(); ++i) {
        const double want = (std::string(name) == owner && i == local) ? 1.0 : 0.0;
        CHECK(gr[i] == want);
      }
    }
  }
}

TEST_CASE("shape errors name the offending node") {
  DiffGraph g;
  g.add(g.input("a"), g.input("b"));
  const Grid a(1, 2, 2), b(1, 3, 2);
  try {
    g.forward(Bindings().bind("a", a).bind("b", b));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("add") != std::string::npos);
    CHECK(what.find("1x3x2") != std::string::npos);
  }
}

TEST_CASE("unbound inputs are reported") {
  DiffGraph g;
  g.sigmoid(g.input("missing"));
  CHECK_THROWS_AS(g.forward(Bindings()), Error);
}

TEST_CASE("backward requires a fresh forward") {
  DiffGraph g;
  g.sigmoid(g.input("x"));
  const Grid x(1, 1, 1), seed(1, 1, 1, 1.0);
  CHECK_THROWS_AS(g.backward(seed), StateError);
  g.forward(Bindings().bind("x", x));
  CHECK_NOTHROW(g.backward(seed));
  CHECK_THROWS_AS(g.backward(seed), StateError);
  g.forward(Bindings().bind("x", x));
  CHECK_NOTHROW(g.backward(seed));
}

TEST_CASE("backward rejects a mis-shaped seed") {
  DiffGraph g;
  g.sigmoid(g.input("x"));
  const Grid x(1, 2, 2);
  g.forward(Bindings().bind("x", x));
  CHECK_THROWS_AS(g.backward(Grid(1, 1, 1)), ShapeError);
}

TEST_CASE("non-finite inputs are rejected in forward") {
  DiffGraph g;
  g.sigmoid(g.input("x"));
  Grid x(1, 1, 2);
  x[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.forward(Bindings().bind("x", x)), NumericalError);
}

TEST_CASE("grad_check harness on the losses") {
  Rng rng(23);
  SUBCASE("csd at rho 0 away from one half") {
    const Grid p = testing::random_grid_avoiding(rng, {1, 6, 6}, 0.05, 0.95, 0.5, 0.05);
    auto f = [](const Grid& x) { return csd_loss(x, 0.0); };
    CHECK(grad_check(f, p, 1e-5) < 1e-4);
  }
  SUBCASE("btm on a random 8x8 prediction") {
    const Grid p = random_grid(rng, {1, 8, 8}, 0.0, 1.0);
    const Grid image = random_grid(rng, {3, 8, 8}, 0.0, 1.0);
    const ModalityStack stack(image, {}, {});
    const Grid mask = boundary_mask(p);
    const TextureField app = texture_appearance(stack, 5, 200.0);
    auto f = [&](const Grid& x) { return btm_loss_fixed(x, mask, app); };
    CHECK(grad_check(f, p, 1e-5) < 1e-4);
  }
}

TEST_CASE("grad_check reports non-finite probes") {
  auto f = [](const Grid& x) { return std::log(x[0]); };
  const Grid at(Shape{1, 1, 1}, {0.0});
  CHECK_THROWS_AS(grad_check(f, at, Grid(1, 1, 1), 1e-5), NumericalError);
}

TEST_CASE("grid statistics and shape checks") {
  const Grid g(Shape{1, 2, 2}, {1.0, -2.0, 3.0, 4.0});
  CHECK(g.sum() == 6.0);
  CHECK(g.mean() == 1.5);
  CHECK(g.min() == -2.0);
  CHECK(g.max() == 4.0);
  CHECK(g.all_finite());
  CHECK_THROWS_AS(Grid(Shape{1, 2, 2}, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(require_shape({1, 2, 2}, {1, 2, 3}, "x"), ShapeError);
  CHECK(g.channels_slice(0, 1) == g);
}
