#include <algorithm>
#include <fstream>
#include <string>

#include "doctest.h"
#include "saldist/dataset.hpp"
#include "saldist/errors.hpp"
#include "saldist/netpbm.hpp"
#include "support.hpp"

using namespace saldist;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

// F-measure of a hard mask, straight from the confusion counts.
double mask_fbeta(const std::vector<bool>& pos, const Grid& gt) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g = gt[i] > 0.5;
    tp += pos[i] && g;
    fp += pos[i] && !g;
    fn += !pos[i] && g;
  }
  if (tp == 0) return 0.0;
  const double p = tp / (tp + fp), r = tp / (tp + fn);
  return 1.3 * p * r / (0.3 * p + r);
}

double best_single_channel_fbeta(const SyntheticSample& s) {
  double best = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (int t = 0; t <= 255; ++t) {
      const double thr = t / 255.0;
      std::vector<bool> above(s.gt.size()), below(s.gt.size());
      for (std::size_t i = 0; i < s.gt.size(); ++i) {
        above[i] = s.rgb.channel(c)[i] > thr;
        below[i] = !above[i];
      }
      best = std::max({best, mask_fbeta(above, s.gt), mask_fbeta(below, s.gt)});
    }
  }
  return best;
}

}  // namespace

TEST_CASE("half grey rounds away from zero") {
  const Grid g(1, 2, 3, 0.5);
  const Grid back = decode_netpbm(encode_netpbm(g));
  for (double v : back.values()) CHECK(v == 128.0 / 255.0);
}

TEST_CASE("8-bit images round-trip exactly") {
  Rng rng(1);
  for (std::size_t channels : {1u, 3u}) {
    Grid g(Shape{channels, 7, 5});
    for (double& v : g.values()) v = static_cast<double>(rng.below(256)) / 255.0;
    const auto bytes = encode_netpbm(g);
    const Grid back = decode_netpbm(bytes);
    CHECK(back == g);
    CHECK(encode_netpbm(back) == bytes);
  }
  const auto p6 = encode_netpbm(Grid(3, 1, 1, 1.0));
  CHECK(std::string(p6.begin(), p6.begin() + 2) == "P6");
}

TEST_CASE("netpbm decoding errors carry byte offsets") {
  auto expect_format = [](const std::string& text) {
    try {
      decode_netpbm(bytes_of(text));
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      const std::string what = e.what();
      CHECK(what.find("byte offset") != std::string::npos);
    }
  };
  expect_format("P6\n2 2\n65535\n");
  expect_format("P3\n1 1\n255\n");
  expect_format(std::string("P5\n2 2\n255\n") + "\x01\x02");
  expect_format("P5\n2");
  CHECK_THROWS_AS(encode_netpbm(Grid(2, 2, 2, 0.5)), ShapeError);
  CHECK_THROWS_AS(encode_netpbm(Grid(1, 2, 2, 1.5)), ValidationError);
}

TEST_CASE("files on disk round-trip") {
  const fs::path dir = testing::scratch_dir("netpbm");
  Rng rng(2);
  Grid g(3, 4, 4);
  for (double& v : g.values()) v = static_cast<double>(rng.below(256)) / 255.0;
  write_image(g, dir / "a.ppm");
  CHECK(read_image(dir / "a.ppm") == g);
  CHECK_THROWS_AS(read_image(dir / "missing.ppm"), IoError);
}

TEST_CASE("manifest keeps file order and rejects duplicates") {
  const fs::path dir = testing::scratch_dir("manifest");
  {
    std::ofstream out(dir / "m.tsv");
    out << "b\timg/b.ppm\t-\t-\t-\t-\n";
    out << "a\timg/a.ppm\tgt/a.pgm\td/a.pgm\t-\tf/a.pgm\n";
  }
  const DatasetManifest m = read_manifest(dir / "m.tsv");
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].id == "b");
  CHECK(!m.records[0].gt);
  CHECK(*m.records[1].gt == "gt/a.pgm");
  CHECK(*m.records[1].depth == "d/a.pgm");
  CHECK(!m.records[1].thermal);
  CHECK(*m.records[1].modality(Modality::Flow) == "f/a.pgm");

  write_manifest(m, dir / "copy.tsv");
  const DatasetManifest again = read_manifest(dir / "copy.tsv");
  CHECK(again.records.size() == 2);
  CHECK(again.records[1].id == "a");

  {
    std::ofstream out(dir / "dup.tsv");
    out << "a\tx\t-\t-\t-\t-\na\ty\t-\t-\t-\t-\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "dup.tsv"), FormatError);
  {
    std::ofstream out(dir / "short.tsv");
    out << "a\tx\t-\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "short.tsv"), FormatError);
}

TEST_CASE("zero-noise blob pixels match the mask exactly") {
  SyntheticSpec spec;
  spec.count = 10;
  spec.noise = 0.0;
  spec.blobs_min = spec.blobs_max = 1;
  spec.seed = 3;
  for (const SyntheticSample& s : generate_synthetic(spec)) {
    // Exactly two colours: background and blob.
    std::size_t fg_pixels = 0, gt_pixels = 0;
    double fg[3];
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      if (s.gt[i] == 1.0) {
        for (std::size_t c = 0; c < 3; ++c) fg[c] = s.rgb.channel(c)[i];
        break;
      }
    }
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      bool same = true;
      for (std::size_t c = 0; c < 3; ++c) same = same && s.rgb.channel(c)[i] == fg[c];
      fg_pixels += same;
      gt_pixels += s.gt[i] == 1.0;
    }
    CHECK(gt_pixels > 0);
    CHECK(fg_pixels == gt_pixels);
  }
}

TEST_CASE("generator is deterministic in its seed") {
  SyntheticSpec spec;
  spec.count = 4;
  spec.modalities = {Modality::Depth, Modality::Flow};
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].rgb == b[i].rgb);
    CHECK(a[i].extras[1].second == b[i].extras[1].second);
  }
  spec.seed = 2;
  CHECK(!(generate_synthetic(spec)[0].rgb == a[0].rgb));

  const fs::path d1 = testing::scratch_dir("gen1"), d2 = testing::scratch_dir("gen2");
  spec.count = 3;
  gen_synthetic(spec, d1);
  gen_synthetic(spec, d2);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), d1);
    CHECK(read_file_bytes(entry.path()) == read_file_bytes(d2 / rel));
  }
}

TEST_CASE("depth is higher on the blobs") {
  SyntheticSpec spec;
  spec.count = 20;
  spec.modalities = {Modality::Depth, Modality::Thermal, Modality::Flow};
  for (const SyntheticSample& s : generate_synthetic(spec)) {
    for (const auto& [m, plane] : s.extras) {
      double fg = 0, bg = 0, nf = 0, nb = 0;
      for (std::size_t i = 0; i < plane.size(); ++i) {
        if (s.gt[i] == 1.0) {
          fg += plane[i];
          ++nf;
        } else {
          bg += plane[i];
          ++nb;
        }
      }
      CHECK(fg / nf > bg / nb);
    }
  }
}

TEST_CASE("a single colour channel threshold solves the task") {
  SyntheticSpec spec;
  spec.count = 30;
  spec.seed = 5;
  double total = 0.0;
  const auto samples = generate_synthetic(spec);
  for (const SyntheticSample& s : samples) total += best_single_channel_fbeta(s);
  CHECK(total / static_cast<double>(samples.size()) >= 0.9);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.side = 50;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.noise = 0.4;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.blobs_min = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.modalities = {Modality::Depth, Modality::Depth};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK(parse_blob_kind(blob_kind_name(BlobKind::RoundedRect)) == BlobKind::RoundedRect);
  CHECK_THROWS_AS(parse_blob_kind("triangle"), ConfigError);
}

TEST_CASE("loading resizes planes and pads missing modalities") {
  const fs::path dir = testing::scratch_dir("load");
  SyntheticSpec spec;
  spec.count = 3;
  spec.side = 32;
  spec.modalities = {Modality::Depth};
  const DatasetManifest m = gen_synthetic(spec, dir);
  const auto raw = generate_synthetic(spec);

  const auto same = load_dataset(m, 32, {Modality::Depth, Modality::Thermal});
  REQUIRE(same.size() == 3);
  CHECK(same[1].id == raw[1].id);
  CHECK(same[1].rgb() == decode_netpbm(encode_netpbm(raw[1].rgb)));
  CHECK(same[1].stack.available(Modality::Depth));
  CHECK(!same[1].stack.available(Modality::Thermal));
  for (double v : same[1].stack.planes().channel(4)) CHECK(v == kMissingModalityValue);

  const auto big = load_dataset(m, 64, {Modality::Depth});
  CHECK(big[0].stack.height() == 64);
  for (double v : big[0].gt->values()) CHECK((v == 0.0 || v == 1.0));

  fs::remove(dir / "images" / (raw[2].id + ".ppm"));
  try {
    load_dataset(m, 32, {});
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(raw[2].id) != std::string::npos);
  }
}
