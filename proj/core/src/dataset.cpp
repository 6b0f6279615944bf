#include "saldist/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "saldist/errors.hpp"
#include "saldist/netpbm.hpp"
#include "saldist/rng.hpp"

namespace saldist {

const std::optional<std::string>& ManifestRecord::modality(Modality m) const {
  switch (m) {
    case Modality::Depth: return depth;
    case Modality::Thermal: return thermal;
    case Modality::Flow: return flow;
  }
  return depth;
}

std::optional<std::string>& ManifestRecord::modality(Modality m) {
  return const_cast<std::optional<std::string>&>(std::as_const(*this).modality(m));
}

namespace {

std::optional<std::string> optional_field(const std::string& s) {
  if (s == "-") return std::nullopt;
  return s;
}

std::string field_or_dash(const std::optional<std::string>& s) { return s ? *s : "-"; }

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 6) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 6 tab-separated fields, got " +
                        std::to_string(fields.size()));
    }
    if (!ids.insert(fields[0]).second) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + fields[0] + "'");
    }
    manifest.records.push_back(ManifestRecord{fields[0], fields[1], optional_field(fields[2]),
                                              optional_field(fields[3]), optional_field(fields[4]),
                                              optional_field(fields[5])});
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest '" + path.string() + "' for writing");
  for (const ManifestRecord& r : manifest.records) {
    out << r.id << '\t' << r.image << '\t' << field_or_dash(r.gt) << '\t' << field_or_dash(r.depth) << '\t'
        << field_or_dash(r.thermal) << '\t' << field_or_dash(r.flow) << '\n';
  }
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest, std::size_t side,
                                 const std::vector<Modality>& declared) {
  std::vector<Sample> samples;
  samples.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records) {
    try {
      Grid rgb = read_image(manifest.resolve(r.image));
      if (rgb.channels() != 3) throw FormatError("image is not RGB (P6)");
      rgb = resize_bilinear(rgb, side, side);
      std::vector<std::optional<Grid>> extras;
      for (Modality m : declared) {
        const auto& rel = r.modality(m);
        if (!rel) {
          extras.emplace_back(std::nullopt);
          continue;
        }
        Grid plane = read_image(manifest.resolve(*rel));
        if (plane.channels() != 1) throw FormatError(std::string(modality_name(m)) + " plane is not grey (P5)");
        extras.emplace_back(resize_bilinear(plane, side, side));
      }
      Sample s{r.id, stack_modalities(rgb, declared, extras), std::nullopt};
      if (r.gt) {
        Grid gt = read_image(manifest.resolve(*r.gt));
        if (gt.channels() != 1) throw FormatError("ground truth is not grey (P5)");
        s.gt = resize_nearest(gt, side, side);
      }
      samples.push_back(std::move(s));
    } catch (const IoError& e) {
      throw IoError("sample '" + r.id + "': " + e.what());
    } catch (const Error& e) {
      throw FormatError("sample '" + r.id + "': " + e.what());
    }
  }
  return samples;
}

std::string_view blob_kind_name(BlobKind kind) {
  switch (kind) {
    case BlobKind::Ellipse: return "ellipse";
    case BlobKind::RoundedRect: return "rect";
    case BlobKind::Mixed: return "mixed";
  }
  return "unknown";
}

BlobKind parse_blob_kind(std::string_view name) {
  for (BlobKind k : {BlobKind::Ellipse, BlobKind::RoundedRect, BlobKind::Mixed})
    if (blob_kind_name(k) == name) return k;
  throw ConfigError("unknown blob kind '" + std::string(name) + "' (expected ellipse, rect or mixed)");
}

void SyntheticSpec::validate() const {
  if (count == 0) throw ConfigError("synthetic count must be at least 1");
  if (side == 0 || side % 16 != 0) throw ConfigError("synthetic side " + std::to_string(side) + " must be a positive multiple of 16");
  if (blobs_min == 0 || blobs_min > blobs_max) throw ConfigError("blob count range must satisfy 1 <= min <= max");
  if (!(noise >= 0.0)) throw ConfigError("noise amplitude must be non-negative");
  if (!(contrast > 0.0 && contrast <= 0.9)) throw ConfigError("contrast must lie in (0, 0.9]");
  if (!(noise < contrast)) throw ConfigError("noise amplitude must be below the contrast offset");
  std::set<Modality> seen(modalities.begin(), modalities.end());
  if (seen.size() != modalities.size()) throw ConfigError("duplicate modality declaration");
}

namespace {

struct Blob {
  bool ellipse;
  double cx, cy, a, b, cos_t, sin_t, corner;

  // Normalised radius: < 1 inside, 0 at the centre; nullopt outside.
  std::optional<double> radius(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double u = cos_t * dx + sin_t * dy;
    const double v = -sin_t * dx + cos_t * dy;
    if (ellipse) {
      const double r2 = (u * u) / (a * a) + (v * v) / (b * b);
      if (r2 > 1.0) return std::nullopt;
      return std::sqrt(r2);
    }
    if (std::abs(u) > a || std::abs(v) > b) return std::nullopt;
    const double qx = std::max(std::abs(u) - (a - corner), 0.0);
    const double qy = std::max(std::abs(v) - (b - corner), 0.0);
    if (qx * qx + qy * qy > corner * corner) return std::nullopt;
    return std::max(std::abs(u) / a, std::abs(v) / b);
  }
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

SyntheticSample render(const SyntheticSpec& spec, Rng& rng, std::size_t index) {
  const std::size_t n = spec.side;
  const double side = static_cast<double>(n);

  double bg[3], fg[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = rng.uniform(0.2, 0.8);
    double dir = rng.coin() ? 1.0 : -1.0;
    if (bg[c] + dir * spec.contrast > 0.95 || bg[c] + dir * spec.contrast < 0.05) dir = -dir;
    fg[c] = clamp01(bg[c] + dir * spec.contrast);
  }

  const std::size_t blob_count = spec.blobs_min + rng.below(spec.blobs_max - spec.blobs_min + 1);
  std::vector<Blob> blobs;
  for (std::size_t b = 0; b < blob_count; ++b) {
    bool ellipse = spec.kind == BlobKind::Ellipse;
    if (spec.kind == BlobKind::Mixed) ellipse = rng.coin();
    const double cx = rng.uniform(0.3, 0.7) * side;
    const double cy = rng.uniform(0.3, 0.7) * side;
    const double a = rng.uniform(0.18, 0.30) * side;
    const double bb = rng.uniform(0.18, 0.30) * side;
    const double theta = rng.uniform(0.0, std::numbers::pi);
    blobs.push_back(Blob{ellipse, cx, cy, a, bb, std::cos(theta), std::sin(theta), 0.35 * std::min(a, bb)});
  }

  SyntheticSample s{sample_id(index), Grid(Shape{3, n, n}), Grid(Shape{1, n, n}), {}};
  Grid radius(Shape{1, n, n}, -1.0);  // smallest normalised radius over covering blobs; -1 = background
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (const Blob& blob : blobs) {
        if (auto r = blob.radius(px, py)) {
          double& best = radius.at(0, y, x);
          best = best < 0.0 ? *r : std::min(best, *r);
        }
      }
      const bool inside = radius.at(0, y, x) >= 0.0;
      s.gt.at(0, y, x) = inside ? 1.0 : 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = inside ? fg[c] : bg[c];
        s.rgb.at(c, y, x) = clamp01(base + rng.uniform(-spec.noise, spec.noise));
      }
    }
  }

  for (Modality m : spec.modalities) {
    Grid plane(Shape{1, n, n});
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double r = radius.at(0, y, x);
        const bool inside = r >= 0.0;
        double v = 0.0;
        switch (m) {
          case Modality::Depth:
            v = inside ? 0.55 + 0.35 * (1.0 - r) : 0.2 + 0.1 * static_cast<double>(y) / side;
            break;
          case Modality::Thermal: v = inside ? 0.8 : 0.3; break;
          case Modality::Flow: v = inside ? 0.85 : 0.5; break;
        }
        plane.at(0, y, x) = clamp01(v + rng.uniform(-spec.noise, spec.noise));
      }
    }
    s.extras.emplace_back(m, std::move(plane));
  }
  return s;
}

}  // namespace

std::vector<SyntheticSample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<SyntheticSample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(render(spec, rng, i));
  return out;
}

std::vector<Sample> to_samples(const std::vector<SyntheticSample>& raw, const std::vector<Modality>& declared) {
  std::vector<Sample> samples;
  samples.reserve(raw.size());
  for (const SyntheticSample& s : raw) {
    std::vector<std::optional<Grid>> extras;
    for (Modality m : declared) {
      auto it = std::find_if(s.extras.begin(), s.extras.end(), [&](const auto& e) { return e.first == m; });
      extras.push_back(it == s.extras.end() ? std::nullopt : std::optional<Grid>(it->second));
    }
    samples.push_back(Sample{s.id, stack_modalities(s.rgb, declared, extras), s.gt});
  }
  return samples;
}

DatasetManifest gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  const auto raw = generate_synthetic(spec);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "gt", ec);
  for (Modality m : spec.modalities) fs::create_directories(out_dir / std::string(modality_name(m)), ec);
  if (ec) throw IoError("cannot create dataset directories under '" + out_dir.string() + "': " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  for (const SyntheticSample& s : raw) {
    ManifestRecord r;
    r.id = s.id;
    r.image = "images/" + s.id + ".ppm";
    r.gt = "gt/" + s.id + ".pgm";
    write_image(s.rgb, out_dir / r.image);
    write_image(s.gt, out_dir / *r.gt);
    for (const auto& [m, plane] : s.extras) {
      const std::string rel = std::string(modality_name(m)) + "/" + s.id + ".pgm";
      write_image(plane, out_dir / rel);
      r.modality(m) = rel;
    }
    manifest.records.push_back(std::move(r));
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace saldist
