#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "saldist/dataset.hpp"
#include "saldist/losses.hpp"
#include "saldist/model.hpp"

namespace saldist {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 8;
  std::size_t side = 64;
  std::vector<std::size_t> ref_sides{48, 96};
  double lr = 0.1;
  double momentum = 0.9;
  double alpha = 200.0;
  LossWeights weights{};
  std::size_t k = 5;
  std::uint64_t seed = 1;
  std::vector<Modality> modalities;

  // Second-stage detector.
  std::size_t stage2_epochs = 10;
  double stage2_lr = 0.005;

  void validate() const;
};

// Linear curriculum progress: step / (total - 1), and 1 for a single-step schedule.
double rho_at(std::size_t step, std::size_t total_steps);

// lr0 * (1 - step / total).
double lr_at(std::size_t step, std::size_t total_steps, double lr0);

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossReport loss;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_fbeta = 0.0;
  double mean_mae = 0.0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;  // only when an evaluation set is supplied
  double wall_seconds = 0.0;
};

// `step,rho,lr,csd_main,csd_ref,btm_main,btm_ref,ms,total` header and one row
// per step, 17 significant digits.
void write_run_log(std::ostream& out, const RunLog& log);

// Observer for each optimisation step: the per-sample predictions the loss was
// computed on (after augmentation) and the batch-mean report.
struct StepTrace {
  std::size_t step;
  double rho;
  std::span<const Grid> main_predictions;
  std::span<const Grid> ref_predictions;
  const LossReport& report;
};

struct TrainHooks {
  std::function<void(const StepTrace&)> on_step;
  const std::vector<Sample>* eval_set = nullptr;  // per-epoch F-beta / MAE summary
};

// Momentum SGD over ModelParams: v = mu v + g; p -= lr v.
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum) : momentum_(momentum) {}
  void step(ModelParams& params, const Gradients& grads, double lr);

 private:
  double momentum_;
  Gradients velocity_;
};

struct Stage1Result {
  ModelParams params;
  RunLog log;
};

// Self-distillation on unlabeled samples (every sample at config.side).
// Throws NumericalError naming the step when the loss goes non-finite.
Stage1Result train_stage1(const TrainConfig& config, const std::vector<Sample>& dataset,
                          const TrainHooks& hooks = {});

struct PseudoLabel {
  std::string sample_id;
  std::string checkpoint_id;
  Grid label;
};

// One pass of 3x3 majority smoothing on a binary map; windows are clipped at
// the border and ties keep the centre value.
Grid median_smooth_binary(const Grid& binary);

// Threshold the main-scale prediction at 0.5 and smooth once.
std::vector<PseudoLabel> generate_pseudo_labels(const ModelParams& params, const std::vector<Sample>& dataset,
                                                const std::string& checkpoint_id);

struct Stage2Result {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean IOU loss per epoch
  std::vector<double> step_loss;
};

// Fresh detector trained with the IOU loss against the labels (matched to
// samples by id). Uses config.stage2_epochs and config.stage2_lr.
Stage2Result train_stage2(const TrainConfig& config, const std::vector<Sample>& dataset,
                          const std::vector<PseudoLabel>& labels);

// Checkpoint: "A2S2", u32 version, then per parameter u32 name length, name,
// u32 rank (3), u32 dims, f64 data; trailing u64 step. Little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams read_checkpoint(const std::filesystem::path& path);

// FNV-1a 64 of the bytes as 16 hex digits.
std::string content_id(std::span<const std::uint8_t> bytes);

// Label directory: <id>.pgm per label plus labels.tsv (`id<TAB>file<TAB>checkpoint`).
void write_label_set(const std::vector<PseudoLabel>& labels, const std::filesystem::path& dir);
std::vector<PseudoLabel> read_label_set(const std::filesystem::path& dir);

}  // namespace saldist
