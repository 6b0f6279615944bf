#include "saldist/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "saldist/errors.hpp"
#include "saldist/metrics.hpp"
#include "saldist/netpbm.hpp"
#include "saldist/rng.hpp"

namespace saldist {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (side == 0 || side % arch::kInputMultiple != 0) {
    throw ConfigError("side " + std::to_string(side) + " must be a positive multiple of 16");
  }
  if (ref_sides.empty()) throw ConfigError("at least one reference side is required");
  for (std::size_t r : ref_sides) {
    if (r == 0 || r % arch::kInputMultiple != 0) {
      throw ConfigError("reference side " + std::to_string(r) + " must be a positive multiple of 16");
    }
  }
  if (!(lr >= 0.0) || !(stage2_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (k < 3 || k % 2 == 0) throw ConfigError("k must be odd and at least 3");
  if (stage2_epochs == 0) throw ConfigError("stage2_epochs must be at least 1");
  try {
    weights.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

double rho_at(std::size_t step, std::size_t total_steps) {
  if (total_steps == 0 || step >= total_steps) {
    throw ParameterError("rho_at: step " + std::to_string(step) + " outside schedule of " +
                         std::to_string(total_steps));
  }
  if (total_steps == 1) return 1.0;
  return static_cast<double>(step) / static_cast<double>(total_steps - 1);
}

double lr_at(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0 || step >= total_steps) {
    throw ParameterError("lr_at: step " + std::to_string(step) + " outside schedule of " +
                         std::to_string(total_steps));
  }
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch) {
  return (dataset_size + batch - 1) / batch;
}

void write_run_log(std::ostream& out, const RunLog& log) {
  out << "step,rho,lr,csd_main,csd_ref,btm_main,btm_ref,ms,total\n";
  for (const StepRecord& s : log.steps) {
    const LossReport& r = s.loss;
    out << s.step << ',' << format_g17(r.rho) << ',' << format_g17(s.lr) << ',' << format_g17(r.csd_main) << ','
        << format_g17(r.csd_ref) << ',' << format_g17(r.btm_main) << ',' << format_g17(r.btm_ref) << ','
        << format_g17(r.ms) << ',' << format_g17(r.total) << '\n';
  }
}

void MomentumSgd::step(ModelParams& params, const Gradients& grads, double lr) {
  for (auto& [name, value] : params.entries()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto [it, fresh] = velocity_.try_emplace(name, value.shape());
    Grid& v = it->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      v[i] = momentum_ * v[i] + g->second[i];
      value[i] -= lr * v[i];
    }
  }
  params.set_step(params.step() + 1);
}

namespace {

void require_dataset(const std::vector<Sample>& dataset, std::size_t side) {
  if (dataset.empty()) throw ConfigError("dataset is empty");
  for (const Sample& s : dataset) {
    if (s.stack.height() != side || s.stack.width() != side) {
      throw ConfigError("sample '" + s.id + "' is " + std::to_string(s.stack.height()) + "x" +
                        std::to_string(s.stack.width()) + ", expected " + std::to_string(side) + "x" +
                        std::to_string(side));
    }
  }
}

void accumulate(Gradients& total, const Gradients& part) {
  for (const auto& [name, g] : part) {
    auto it = total.find(name);
    if (it == total.end()) {
      total.emplace(name, g);
    } else {
      it->second += g;
    }
  }
}

void scale(Gradients& grads, double factor) {
  for (auto& [name, g] : grads) g *= factor;
}

LossReport mean_report(const std::vector<LossReport>& reports) {
  LossReport m;
  for (const LossReport& r : reports) {
    m.csd_main += r.csd_main;
    m.csd_ref += r.csd_ref;
    m.btm_main += r.btm_main;
    m.btm_ref += r.btm_ref;
    m.ms += r.ms;
    m.total += r.total;
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  m.csd_main *= inv;
  m.csd_ref *= inv;
  m.btm_main *= inv;
  m.btm_ref *= inv;
  m.ms *= inv;
  m.total *= inv;
  m.rho = reports.front().rho;
  return m;
}

std::string describe(const LossReport& r) {
  return "csd_main=" + format_g17(r.csd_main) + " csd_ref=" + format_g17(r.csd_ref) +
         " btm_main=" + format_g17(r.btm_main) + " btm_ref=" + format_g17(r.btm_ref) + " ms=" + format_g17(r.ms) +
         " total=" + format_g17(r.total);
}

EpochSummary summarize(const ModelParams& params, const std::vector<Sample>& eval_set, std::size_t epoch) {
  EpochSummary s{epoch, 0.0, 0.0};
  std::size_t n = 0;
  for (const Sample& sample : eval_set) {
    if (!sample.gt) continue;
    const Grid y = predict(params, sample.rgb());
    s.mean_fbeta += f_beta(y, *sample.gt);
    s.mean_mae += mae(y, *sample.gt);
    ++n;
  }
  if (n > 0) {
    s.mean_fbeta /= static_cast<double>(n);
    s.mean_mae /= static_cast<double>(n);
  }
  return s;
}

}  // namespace

Stage1Result train_stage1(const TrainConfig& config, const std::vector<Sample>& dataset, const TrainHooks& hooks) {
  config.validate();
  require_dataset(dataset, config.side);
  const auto started = std::chrono::steady_clock::now();

  Rng rng(config.seed);
  Stage1Result result{ModelParams::initialize(rng), {}};
  ModelParams& params = result.params;
  MomentumSgd optimizer(config.momentum);

  const std::size_t per_epoch = steps_per_epoch(dataset.size(), config.batch);
  const std::size_t total_steps = config.epochs * per_epoch;
  std::vector<std::size_t> order(dataset.size());
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t first = b * config.batch;
      const std::size_t last = std::min(first + config.batch, order.size());
      const double rho = rho_at(step, total_steps);
      const double lr = lr_at(step, total_steps, config.lr);
      std::vector<bool> flips;
      for (std::size_t i = first; i < last; ++i) flips.push_back(rng.coin());
      const std::size_t ref_side = config.ref_sides[rng.below(config.ref_sides.size())];

      Gradients grads;
      std::vector<LossReport> reports;
      std::vector<Grid> main_preds, ref_preds;
      try {
        for (std::size_t i = first; i < last; ++i) {
          const Sample& sample = dataset[order[i]];
          const ModalityStack stack = flips[i - first] ? sample.stack.flipped() : sample.stack;
          const ModalityStack stack_ref = stack.resized(ref_side, ref_side);
          ForwardPass main(params, stack.rgb());
          ForwardPass ref(params, stack_ref.rgb());
          const TotalLoss loss = total_loss(DualScale{main.prediction(), ref.prediction(), stack, stack_ref},
                                            config.weights, rho, config.k, config.alpha);
          if (!std::isfinite(loss.report.total)) {
            throw NumericalError("non-finite loss at step " + std::to_string(step) + ": " + describe(loss.report));
          }
          accumulate(grads, main.backward(loss.grad_main));
          accumulate(grads, ref.backward(loss.grad_ref));
          reports.push_back(loss.report);
          if (hooks.on_step) {
            main_preds.push_back(main.prediction());
            ref_preds.push_back(ref.prediction());
          }
        }
      } catch (const NumericalError& e) {
        const std::string what = e.what();
        if (what.find("at step") != std::string::npos) throw;
        throw NumericalError("step " + std::to_string(step) + ": " + what);
      }
      scale(grads, 1.0 / static_cast<double>(last - first));
      const LossReport report = mean_report(reports);
      optimizer.step(params, grads, lr);
      result.log.steps.push_back(StepRecord{step, lr, report});
      if (hooks.on_step) hooks.on_step(StepTrace{step, rho, main_preds, ref_preds, report});
    }
    if (hooks.eval_set != nullptr) result.log.epochs.push_back(summarize(params, *hooks.eval_set, epoch));
  }
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

Grid median_smooth_binary(const Grid& binary) {
  require_single_channel(binary, "median smoothing");
  const std::size_t h = binary.height(), w = binary.width();
  Grid out(binary.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t ones = 0, total = 0;
      for (std::size_t yy = y == 0 ? 0 : y - 1; yy <= std::min(y + 1, h - 1); ++yy) {
        for (std::size_t xx = x == 0 ? 0 : x - 1; xx <= std::min(x + 1, w - 1); ++xx) {
          ones += binary.at(0, yy, xx) > 0.5;
          ++total;
        }
      }
      if (2 * ones > total) {
        out.at(0, y, x) = 1.0;
      } else if (2 * ones < total) {
        out.at(0, y, x) = 0.0;
      } else {
        out.at(0, y, x) = binary.at(0, y, x) > 0.5 ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

std::vector<PseudoLabel> generate_pseudo_labels(const ModelParams& params, const std::vector<Sample>& dataset,
                                                const std::string& checkpoint_id) {
  std::vector<PseudoLabel> labels;
  labels.reserve(dataset.size());
  for (const Sample& s : dataset) {
    if (s.stack.planes().channels() < 3 || s.stack.height() % arch::kInputMultiple != 0 ||
        s.stack.width() % arch::kInputMultiple != 0) {
      throw ConfigError("sample '" + s.id + "' does not fit the model input (" + s.stack.planes().shape().str() + ")");
    }
    if (!dataset.empty() && s.stack.declared() != dataset.front().stack.declared()) {
      throw ConfigError("sample '" + s.id + "' declares a different modality set than the rest of the dataset");
    }
    Grid y = predict(params, s.rgb());
    for (double& v : y.values()) v = v > 0.5 ? 1.0 : 0.0;
    labels.push_back(PseudoLabel{s.id, checkpoint_id, median_smooth_binary(y)});
  }
  return labels;
}

Stage2Result train_stage2(const TrainConfig& config, const std::vector<Sample>& dataset,
                          const std::vector<PseudoLabel>& labels) {
  config.validate();
  require_dataset(dataset, config.side);
  std::map<std::string, const Grid*> by_id;
  for (const PseudoLabel& l : labels) by_id[l.sample_id] = &l.label;
  std::vector<const Grid*> matched;
  for (const Sample& s : dataset) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw ConfigError("no pseudo label for sample '" + s.id + "'");
    require_shape(it->second->shape(), Shape{1, config.side, config.side}, "pseudo label '" + s.id + "'");
    matched.push_back(it->second);
  }

  // Stage 2 draws from its own stream so it never replays stage 1's draws.
  Rng rng(config.seed + 1);
  Stage2Result result{ModelParams::initialize(rng), {}, {}};
  MomentumSgd optimizer(config.momentum);
  const std::size_t per_epoch = steps_per_epoch(dataset.size(), config.batch);
  const std::size_t total_steps = config.stage2_epochs * per_epoch;
  std::vector<std::size_t> order(dataset.size());
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.stage2_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t first = b * config.batch;
      const std::size_t last = std::min(first + config.batch, order.size());
      const double lr = lr_at(step, total_steps, config.stage2_lr);
      Gradients grads;
      double batch_loss = 0.0;
      for (std::size_t i = first; i < last; ++i) {
        const Sample& sample = dataset[order[i]];
        const bool flip = rng.coin();
        const Grid image = flip ? flip_horizontal(sample.rgb()) : sample.rgb();
        const Grid label = flip ? flip_horizontal(*matched[order[i]]) : *matched[order[i]];
        ForwardPass pass(result.params, image);
        const ValueGrad loss = iou_loss(pass.prediction(), label);
        if (!std::isfinite(loss.value)) {
          throw NumericalError("non-finite IOU loss at stage-2 step " + std::to_string(step));
        }
        accumulate(grads, pass.backward(loss.gradient));
        batch_loss += loss.value;
      }
      const double n = static_cast<double>(last - first);
      scale(grads, 1.0 / n);
      optimizer.step(result.params, grads, lr);
      result.step_loss.push_back(batch_loss / n);
      epoch_loss += batch_loss;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  return result;
}

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " more bytes)");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "A2S2";

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  for (const auto& [name, g] : params.entries()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(3);
    w.u32(static_cast<std::uint32_t>(g.channels()));
    w.u32(static_cast<std::uint32_t>(g.height()));
    w.u32(static_cast<std::uint32_t>(g.width()));
    for (double v : g.values()) w.f64(v);
  }
  w.u64(params.step());
  return w.take();
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(kMagic.size()) != kMagic) throw FormatError("not a checkpoint: bad magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<std::pair<std::string, Grid>> entries;
  while (r.remaining() > 8) {
    const std::uint32_t name_len = r.u32();
    if (name_len > 256) throw FormatError("implausible parameter name length at byte offset " + std::to_string(r.offset()));
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank != 3) throw FormatError("parameter '" + name + "' has rank " + std::to_string(rank) + ", expected 3");
    Shape s{r.u32(), r.u32(), r.u32()};
    if (s.size() * 8 > r.remaining()) {
      throw FormatError("parameter '" + name + "' data truncated at byte offset " + std::to_string(r.offset()));
    }
    std::vector<double> values(s.size());
    for (double& v : values) v = r.f64();
    entries.emplace_back(std::move(name), Grid(s, std::move(values)));
  }
  const std::uint64_t step = r.u64();
  return ModelParams::from_entries(std::move(entries), step);
}

void write_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(params));
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string content_id(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

void write_label_set(const std::vector<PseudoLabel>& labels, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create label directory '" + dir.string() + "': " + ec.message());
  std::ofstream index(dir / "labels.tsv", std::ios::trunc);
  if (!index) throw IoError("cannot write '" + (dir / "labels.tsv").string() + "'");
  for (const PseudoLabel& l : labels) {
    const std::string file = l.sample_id + ".pgm";
    write_image(l.label, dir / file);
    index << l.sample_id << '\t' << file << '\t' << l.checkpoint_id << '\n';
  }
  if (!index) throw IoError("failed writing '" + (dir / "labels.tsv").string() + "'");
}

std::vector<PseudoLabel> read_label_set(const std::filesystem::path& dir) {
  std::ifstream index(dir / "labels.tsv");
  if (!index) throw IoError("cannot open '" + (dir / "labels.tsv").string() + "'");
  std::vector<PseudoLabel> labels;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, file, ckpt;
    if (!std::getline(ss, id, '\t') || !std::getline(ss, file, '\t') || !std::getline(ss, ckpt)) {
      throw FormatError("malformed labels.tsv line: '" + line + "'");
    }
    Grid label = read_image(dir / file);
    if (label.channels() != 1) throw FormatError("label '" + id + "' is not a grey image");
    labels.push_back(PseudoLabel{id, ckpt, std::move(label)});
  }
  return labels;
}

}  // namespace saldist
