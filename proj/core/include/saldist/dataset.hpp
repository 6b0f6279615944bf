#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "saldist/grid.hpp"
#include "saldist/texture.hpp"

namespace saldist {

// One training/evaluation instance. The stack carries RGB in channels 0-2.
struct Sample {
  std::string id;
  ModalityStack stack;
  std::optional<Grid> gt;  // evaluation only

  Grid rgb() const { return stack.rgb(); }
};

struct ManifestRecord {
  std::string id;
  std::string image;
  std::optional<std::string> gt;
  std::optional<std::string> depth;
  std::optional<std::string> thermal;
  std::optional<std::string> flow;

  const std::optional<std::string>& modality(Modality m) const;
  std::optional<std::string>& modality(Modality m);
};

// Text manifest, one record per line:
//   id<TAB>image<TAB>gt|-<TAB>depth|-<TAB>thermal|-<TAB>flow|-
// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Loads every record in file order, bilinearly resizing planes to side x side
// (ground truth uses nearest neighbour) and padding undeclared-but-missing
// modalities with constant planes.
std::vector<Sample> load_dataset(const DatasetManifest& manifest, std::size_t side,
                                 const std::vector<Modality>& declared);

enum class BlobKind { Ellipse, RoundedRect, Mixed };

struct SyntheticSpec {
  std::size_t count = 200;
  std::size_t side = 64;
  std::size_t blobs_min = 1;
  std::size_t blobs_max = 2;
  BlobKind kind = BlobKind::Mixed;
  double contrast = 0.3;  // per-channel colour offset between blob and background
  double noise = 0.05;    // additive uniform noise amplitude
  std::vector<Modality> modalities;
  std::uint64_t seed = 1;

  void validate() const;
};

// Synthetic samples in memory: RGB, GT mask, and one plane per declared
// modality (depth: ramp rising towards blob centres; thermal: warm blobs;
// flow: constant motion magnitude on blobs). Deterministic in spec.seed.
struct SyntheticSample {
  std::string id;
  Grid rgb;
  Grid gt;
  std::vector<std::pair<Modality, Grid>> extras;
};

std::vector<SyntheticSample> generate_synthetic(const SyntheticSpec& spec);

// Converts generated samples into loaded Samples stacked over `declared`
// (extras not declared are dropped; declared-but-absent ones are padded).
std::vector<Sample> to_samples(const std::vector<SyntheticSample>& raw, const std::vector<Modality>& declared);

// Writes images/, gt/, one directory per modality, and manifest.tsv under
// `out_dir`. Returns the manifest.
DatasetManifest gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

std::string_view blob_kind_name(BlobKind kind);
BlobKind parse_blob_kind(std::string_view name);

}  // namespace saldist
