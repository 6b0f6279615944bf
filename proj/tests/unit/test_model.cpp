#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "saldist/errors.hpp"
#include "saldist/losses.hpp"
#include "saldist/model.hpp"
#include "support.hpp"

using namespace saldist;

namespace {

// Every SE gate pinned open (sigmoid(800) == 1) or shut (sigmoid(-800) == 0).
void force_gates(ModelParams& p, double bias) {
  for (auto& [name, g] : p.entries()) {
    if (name.find(".fc2.weight") != std::string::npos)
      for (double& v : g.values()) v = 0.0;
    if (name.find(".fc2.bias") != std::string::npos)
      for (double& v : g.values()) v = bias;
  }
}

ModelParams seeded(std::uint64_t seed) {
  Rng rng(seed);
  return ModelParams::initialize(rng);
}

EncoderFeatures constant_features(double c) {
  return EncoderFeatures{Grid(16, 4, 4, c), Grid(32, 2, 2, c), Grid(64, 1, 1, c)};
}

}  // namespace

TEST_CASE("parameter layout is fixed and checked on rebuild") {
  const auto& layout = ModelParams::layout();
  std::set<std::string> names;
  for (const auto& [n, s] : layout) names.insert(n);
  CHECK(names.size() == layout.size());
  CHECK(layout.front().first == "stem.weight");
  CHECK(layout.back().first == "fuse.fc2.bias");
  CHECK(names.count("enc3.conv.weight") == 1);
  CHECK(names.count("se4.fc1.weight") == 1);

  ModelParams p = seeded(1);
  auto entries = p.entries();
  CHECK(ModelParams::from_entries(entries, 7).step() == 7);

  auto renamed = entries;
  renamed[2].first = "stem2.weight";
  CHECK_THROWS_AS(ModelParams::from_entries(renamed, 0), FormatError);
  auto reshaped = entries;
  reshaped[0].second = Grid(1, 1, 1);
  CHECK_THROWS_AS(ModelParams::from_entries(reshaped, 0), FormatError);
  entries.pop_back();
  CHECK_THROWS_AS(ModelParams::from_entries(entries, 0), FormatError);
}

TEST_CASE("initialisation draws bounded weights and zero biases") {
  const ModelParams p = seeded(4);
  CHECK(p == seeded(4));
  CHECK(!(p == seeded(5)));
  for (const auto& [name, g] : p.entries()) {
    if (name.ends_with(".bias")) {
      CHECK(g.sum() == 0.0);
      continue;
    }
    const double fan = name.find(".fc") != std::string::npos ? static_cast<double>(g.width())
                                                               : static_cast<double>(g.height() * g.width());
    const double bound = std::sqrt(6.0) / std::sqrt(fan);
    double lo = 0.0, hi = 0.0;
    for (double v : g.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= -bound);
    CHECK(hi <= bound);
    CHECK(hi - lo > bound);
  }
}

TEST_CASE("SE block with forced gates") {
  Rng rng(9);
  const Grid features = testing::random_grid(rng, {16, 5, 6});
  ModelParams p = seeded(2);

  force_gates(p, 800.0);
  CHECK(se_block(p, se_spec(3), features) == features);

  force_gates(p, -800.0);
  for (double v : se_block(p, se_spec(3), features).values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(se_block(p, se_spec(4), features), ShapeError);
  CHECK(fusion_se_spec().channels == 112);
  CHECK(se_spec(5).reduced() == 16);
  CHECK_THROWS_AS(se_spec(6), ParameterError);
}

TEST_CASE("SE pooling of a constant input returns the channel constants") {
  Grid features(3, 4, 4);
  for (std::size_t c = 0; c < 3; ++c)
    for (double& v : features.channel(c)) v = 0.1 * static_cast<double>(c + 1);
  DiffGraph g;
  const NodeId pooled = g.global_avg_pool(g.input("f"));
  Bindings b;
  b.bind("f", features);
  g.forward(b);
  for (std::size_t c = 0; c < 3; ++c) CHECK(g.value(pooled)[c] == doctest::Approx(0.1 * (c + 1)).epsilon(1e-15));
}

TEST_CASE("encoder stage shapes") {
  Rng rng(3);
  const ModelParams p = seeded(3);
  const EncoderFeatures f = encoder_forward(p, testing::random_grid(rng, {3, 64, 64}, 0.0, 1.0));
  CHECK(f.e3.shape() == Shape{16, 16, 16});
  CHECK(f.e4.shape() == Shape{32, 8, 8});
  CHECK(f.e5.shape() == Shape{64, 4, 4});

  const EncoderFeatures z = encoder_forward(p, Grid(3, 32, 32, 0.0));
  for (const Grid* g : {&z.e3, &z.e4, &z.e5})
    for (double v : g->values()) CHECK(v == 0.0);

  try {
    encoder_forward(p, Grid(3, 40, 40));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("16") != std::string::npos);
  }
  CHECK_THROWS_AS(encoder_forward(p, Grid(1, 32, 32)), ShapeError);
}

TEST_CASE("constant features give a flat half map") {
  const ModelParams p = seeded(6);
  const HeadOutput h = activation_head(p, constant_features(0.4), 16, 16);
  CHECK(!h.inverted);
  for (double v : h.centered.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  for (double v : h.y.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pre-sigmoid plane has zero mean") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelParams p = seeded(20 + trial);
    const EncoderFeatures f{testing::random_grid(rng, {16, 8, 8}, 0.0, 2.0), testing::random_grid(rng, {32, 4, 4}, 0.0, 2.0),
                            testing::random_grid(rng, {64, 2, 2}, 0.0, 2.0)};
    const HeadOutput h = activation_head(p, f, 32, 32);
    CHECK(std::abs(h.centered.mean()) < 1e-10);
    for (double v : h.saliency.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (double v : h.y.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("a single spike lights exactly one stride-4 pixel") {
  ModelParams p = seeded(7);
  force_gates(p, 800.0);
  EncoderFeatures f = constant_features(0.3);
  f.e3.at(5, 1, 2) = 2.0;
  const HeadOutput h = activation_head(p, f, 16, 16);
  std::size_t above = 0;
  for (double v : h.saliency.values()) above += v > 0.5;
  CHECK(above == 1);
  CHECK(h.saliency.at(0, 1, 2) > 0.5);
}

TEST_CASE("mean subtraction commutes with the channel sum") {
  Rng rng(14);
  const ModelParams p = seeded(8);
  DiffGraph g;
  const EncoderNodes nodes{g.input("e3"), g.input("e4"), g.input("e5")};
  const HeadNodes head = build_activation_head(g, nodes, 32, 32);
  const Grid e3 = testing::random_grid(rng, {16, 8, 8}, 0.0, 1.0);
  const Grid e4 = testing::random_grid(rng, {32, 4, 4}, 0.0, 1.0);
  const Grid e5 = testing::random_grid(rng, {64, 2, 2}, 0.0, 1.0);
  Bindings b;
  p.bind(b);
  b.bind("e3", e3).bind("e4", e4).bind("e5", e5);
  g.forward(b);
  const Grid& fused = g.value(head.fused);
  Grid summed(1, fused.height(), fused.width());
  for (std::size_t c = 0; c < fused.channels(); ++c)
    for (std::size_t i = 0; i < summed.size(); ++i) summed[i] += fused.channel(c)[i];
  const double m = summed.mean();
  for (std::size_t i = 0; i < summed.size(); ++i)
    CHECK(g.value(head.centered)[i] == doctest::Approx(summed[i] - m).epsilon(1e-12));
}

TEST_CASE("head rejects stage shapes from different inputs") {
  const ModelParams p = seeded(9);
  EncoderFeatures f = constant_features(0.1);
  f.e4 = Grid(32, 4, 4);
  CHECK_THROWS_AS(activation_head(p, f, 16, 16), ShapeError);
  f = constant_features(0.1);
  f.e5 = Grid(8, 1, 1);
  CHECK_THROWS_AS(activation_head(p, f, 16, 16), ShapeError);
  CHECK_THROWS_AS(activation_head(p, constant_features(0.1), 20, 16), ShapeError);
}

TEST_CASE("corner inversion rule") {
  Grid centre(1, 16, 16, 0.1);
  for (std::size_t y = 5; y < 11; ++y)
    for (std::size_t x = 5; x < 11; ++x) centre.at(0, y, x) = 0.9;
  CHECK(corner_inversion(centre) == centre);

  Grid corners(1, 16, 16, 0.9);
  for (std::size_t y = 5; y < 11; ++y)
    for (std::size_t x = 5; x < 11; ++x) corners.at(0, y, x) = 0.1;
  const Grid flipped = corner_inversion(corners);
  for (std::size_t i = 0; i < corners.size(); ++i) CHECK(flipped[i] == 1.0 - corners[i]);

  Grid tie(1, 8, 8, 0.2);
  tie.at(0, 0, 0) = 0.75;
  tie.at(0, 0, 7) = 0.75;
  tie.at(0, 7, 0) = 0.25;
  tie.at(0, 7, 7) = 0.25;
  CHECK(corner_mean(tie) == 0.5);
  CHECK(corner_inversion(tie) == tie);
}

TEST_CASE("corner inversion is idempotent") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const Grid y = testing::random_grid(rng, {1, 9, 12}, 0.0, 1.0);
    const Grid once = corner_inversion(y);
    CHECK(corner_mean(once) <= 0.5);
    CHECK(corner_inversion(once) == once);
  }
}

TEST_CASE("predictions are deterministic") {
  Rng rng(16);
  const ModelParams p = seeded(10);
  const Grid img = testing::random_grid(rng, {3, 32, 32}, 0.0, 1.0);
  const Grid a = predict(p, img);
  CHECK(a == predict(p, img));
  CHECK(a.shape() == Shape{1, 32, 32});
}

TEST_CASE("end-to-end gradients match finite differences") {
  // One network whose corner decision flips, one whose does not.
  bool seen[2] = {false, false};
  for (std::uint64_t seed = 1; seed < 40 && !(seen[0] && seen[1]); ++seed) {
    Rng rng(seed);
    const ModelParams params = ModelParams::initialize(rng);
    const Grid img = testing::random_grid(rng, {3, 16, 16}, 0.0, 1.0);
    const double rho = 0.3;
    ForwardPass fp(params, img);
    const bool inv = fp.inverted();
    if (seen[inv]) continue;
    seen[inv] = true;
    CAPTURE(inv);
    const Gradients grads = fp.backward(csd_loss(fp.prediction(), rho).gradient);
    auto loss = [&](const ModelParams& p) { return csd_loss(predict(p, img), rho).value; };
    for (const auto& [name, value] : params.entries()) {
      CAPTURE(name);
      const Grid& analytic = grads.at(name);
      const std::size_t stride = std::max<std::size_t>(1, value.size() / 6);
      for (std::size_t i = 0; i < value.size(); i += stride) {
        const double eps = 1e-5;
        ModelParams a = params, b = params;
        a.get(name)[i] += eps;
        b.get(name)[i] -= eps;
        const double fd = (loss(a) - loss(b)) / (2.0 * eps);
        CHECK(std::abs(analytic[i] - fd) <= 1e-3 * std::max(std::abs(fd), 1e-6));
      }
    }
  }
  CHECK(seen[0]);
  CHECK(seen[1]);
}
