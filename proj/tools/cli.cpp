#include "cli.hpp"

#include <CLI11.hpp>

#include <cerrno>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "saldist/errors.hpp"
#include "saldist/losses.hpp"
#include "saldist/metrics.hpp"
#include "saldist/netpbm.hpp"

namespace saldist::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<KeySpec> kSyntheticKeys = {
    {"out", "", "dataset directory to create"},
    {"count", "200", "number of samples"},
    {"side", "64", "image side, multiple of 16"},
    {"blobs_min", "1", "fewest blobs per image"},
    {"blobs_max", "2", "most blobs per image"},
    {"kind", "mixed", "blob shape: ellipse, rect or mixed"},
    {"contrast", "0.3", "per-channel colour offset of the blobs"},
    {"noise", "0.05", "additive uniform noise amplitude"},
    {"modalities", "", "extra planes to render: depth,thermal,flow"},
    {"seed", "1", "generator seed"},
};

std::vector<KeySpec> training_keys(bool with_labels) {
  std::vector<KeySpec> k = {
      {"manifest", "", "dataset manifest (manifest.tsv)"},
      {"run", "", "run directory for artifacts"},
  };
  if (with_labels) k.push_back({"labels", "", "pseudo-label directory"});
  const std::vector<KeySpec> rest = {
      {"side", "64", "main input side, multiple of 16"},
      {"modalities", "", "declared modalities: depth,thermal,flow"},
      {"epochs", "20", "stage-1 epochs"},
      {"batch", "8", "batch size"},
      {"ref_sides", "48,96", "reference sides, multiples of 16"},
      {"lr", "0.1", "stage-1 initial learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"alpha", "200", "appearance texture sharpness"},
      {"lambda_c", "1", "confidence (CSD) weight"},
      {"lambda_b", "0.05", "boundary (BTM) weight"},
      {"lambda_m", "1", "multi-scale weight"},
      {"k", "5", "texture window side, odd"},
      {"seed", "1", "training seed"},
      {"stage2_epochs", "10", "stage-2 epochs"},
      {"stage2_lr", "0.005", "stage-2 initial learning rate"},
  };
  k.insert(k.end(), rest.begin(), rest.end());
  return k;
}

const std::map<std::string, std::vector<KeySpec>, std::less<>>& key_table() {
  static const std::map<std::string, std::vector<KeySpec>, std::less<>> table = {
      {"gendata", kSyntheticKeys},
      {"train", training_keys(false)},
      {"pseudo",
       {
           {"manifest", "", "dataset manifest"},
           {"checkpoint", "", "stage-1 checkpoint"},
           {"run", "", "run directory; labels go to <run>/labels"},
           {"side", "64", "input side, multiple of 16"},
           {"modalities", "", "declared modalities"},
       }},
      {"retrain", training_keys(true)},
      {"eval",
       {
           {"manifest", "", "dataset manifest with ground truth"},
           {"checkpoint", "", "checkpoint to evaluate (or use labels)"},
           {"labels", "", "label directory to evaluate (or use checkpoint)"},
           {"side", "64", "evaluation side, multiple of 16"},
           {"out", "", "report path"},
       }},
      {"landscape",
       {
           {"out", "", "CSV path"},
           {"losses", "csd,l1,bce", "losses to sample: csd, l1, bce"},
           {"rhos", "0,0.25,0.5,0.75,1", "curriculum progress values"},
           {"p_step", "0.001", "spacing of p on (0, 1)"},
       }},
  };
  return table;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

const std::string& get(const Settings& s, std::string_view key) {
  auto it = s.find(key);
  if (it == s.end()) throw ConfigError("missing setting '" + std::string(key) + "'");
  return it->second;
}

const std::string& required(const Settings& s, std::string_view key) {
  const std::string& v = get(s, key);
  if (v.empty()) throw ConfigError("'" + std::string(key) + "' is required");
  return v;
}

std::size_t to_count(std::string_view key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(std::string_view key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno != 0 || !std::isfinite(d)) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + v + "'");
  }
  return d;
}

std::vector<Modality> to_modalities(const std::string& v) {
  std::vector<Modality> out;
  for (const std::string& name : split_list(v)) {
    const auto m = parse_modality(name);
    if (!m) throw ConfigError("unknown modality '" + name + "' (expected depth, thermal or flow)");
    out.push_back(*m);
  }
  return out;
}

fs::path run_dir(const Settings& s) {
  const fs::path dir = required(s, "run");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string echo_name(std::string_view command) {
  return command == "train" || command == "gendata" ? "config.txt" : "config." + std::string(command) + ".txt";
}

std::vector<Sample> load_samples(const Settings& s, std::size_t side, const std::vector<Modality>& declared) {
  return load_dataset(read_manifest(required(s, "manifest")), side, declared);
}

int cmd_gendata(const Settings& s, std::ostream& out) {
  const SyntheticSpec spec = synthetic_spec_from(s);
  spec.validate();
  const fs::path dir = required(s, "out");
  const DatasetManifest m = gen_synthetic(spec, dir);
  write_text(dir / echo_name("gendata"), render_config("gendata", s));
  out << "gendata: " << m.records.size() << " samples at " << spec.side << "x" << spec.side << " (seed " << spec.seed
      << ") -> " << (dir / "manifest.tsv").string() << '\n';
  return kOk;
}

int cmd_train(const Settings& s, std::ostream& out) {
  const TrainConfig cfg = train_config_from(s);
  cfg.validate();
  const auto samples = load_samples(s, cfg.side, cfg.modalities);
  const fs::path dir = run_dir(s);
  write_text(dir / echo_name("train"), render_config("train", s));
  const Stage1Result r = train_stage1(cfg, samples);
  write_checkpoint(r.params, dir / "stage1.ckpt");
  std::ostringstream log;
  write_run_log(log, r.log);
  write_text(dir / "runlog.csv", log.str());
  out << "train: " << r.log.steps.size() << " steps on " << samples.size() << " samples, final total "
      << format_g17(r.log.steps.back().loss.total) << ", checkpoint " << content_id(encode_checkpoint(r.params))
      << '\n';
  return kOk;
}

int cmd_pseudo(const Settings& s, std::ostream& out) {
  const std::size_t side = to_count("side", get(s, "side"));
  const auto declared = to_modalities(get(s, "modalities"));
  const fs::path ckpt = required(s, "checkpoint");
  required(s, "manifest");
  const fs::path dir = run_dir(s);
  const auto bytes = read_file_bytes(ckpt);
  const ModelParams params = decode_checkpoint(bytes);
  const auto samples = load_samples(s, side, declared);
  write_text(dir / echo_name("pseudo"), render_config("pseudo", s));
  const auto labels = generate_pseudo_labels(params, samples, content_id(bytes));
  write_label_set(labels, dir / "labels");
  out << "pseudo: " << labels.size() << " labels from checkpoint " << content_id(bytes) << " -> "
      << (dir / "labels").string() << '\n';
  return kOk;
}

int cmd_retrain(const Settings& s, std::ostream& out) {
  const TrainConfig cfg = train_config_from(s);
  cfg.validate();
  const fs::path labels_dir = required(s, "labels");
  const auto samples = load_samples(s, cfg.side, cfg.modalities);
  const fs::path dir = run_dir(s);
  const auto labels = read_label_set(labels_dir);
  write_text(dir / echo_name("retrain"), render_config("retrain", s));
  const Stage2Result r = train_stage2(cfg, samples, labels);
  write_checkpoint(r.params, dir / "stage2.ckpt");
  std::ostringstream log;
  log << "epoch,iou_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) log << e << ',' << format_g17(r.epoch_loss[e]) << '\n';
  write_text(dir / "stage2_loss.csv", log.str());
  out << "retrain: " << r.step_loss.size() << " steps, final epoch IOU loss " << format_g17(r.epoch_loss.back())
      << ", checkpoint " << content_id(encode_checkpoint(r.params)) << '\n';
  return kOk;
}

int cmd_eval(const Settings& s, std::ostream& out) {
  const std::size_t side = to_count("side", get(s, "side"));
  const std::string& ckpt = get(s, "checkpoint");
  const std::string& labels_dir = get(s, "labels");
  if (ckpt.empty() == labels_dir.empty()) throw ConfigError("eval needs exactly one of 'checkpoint' or 'labels'");
  const fs::path report_path = required(s, "out");
  const auto samples = load_samples(s, side, {});

  std::vector<Grid> preds;
  preds.reserve(samples.size());
  if (!ckpt.empty()) {
    const ModelParams params = read_checkpoint(ckpt);
    for (const Sample& smp : samples) preds.push_back(predict(params, smp.rgb()));
  } else {
    std::map<std::string, Grid, std::less<>> by_id;
    for (PseudoLabel& l : read_label_set(labels_dir)) by_id.emplace(l.sample_id, std::move(l.label));
    for (const Sample& smp : samples) {
      auto it = by_id.find(smp.id);
      if (it == by_id.end()) throw ConfigError("no label for sample '" + smp.id + "'");
      preds.push_back(it->second.height() == side && it->second.width() == side
                          ? it->second
                          : resize_nearest(it->second, side, side));
    }
  }
  std::vector<ScoredPair> pairs;
  for (std::size_t i = 0; i < samples.size(); ++i)
    pairs.push_back(ScoredPair{samples[i].id, &preds[i], samples[i].gt ? &*samples[i].gt : nullptr});
  const EvalReport report = evaluate_dataset(pairs);
  std::ostringstream text;
  write_eval_report(text, report);
  write_text(report_path, text.str());
  out << "eval: " << report.count() << " samples, mean F_beta " << format_g17(report.mean_fbeta) << ", MAE "
      << format_g17(report.mean_mae) << ", E " << format_g17(report.mean_emeasure) << '\n';
  return kOk;
}

int cmd_landscape(const Settings& s, std::ostream& out) {
  std::vector<LandscapeLoss> losses;
  for (const std::string& n : split_list(get(s, "losses"))) {
    try {
      losses.push_back(parse_landscape_loss(n));
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
  std::vector<double> rhos;
  for (const std::string& r : split_list(get(s, "rhos"))) rhos.push_back(to_real("rhos", r));
  const double step = to_real("p_step", get(s, "p_step"));
  if (!(step > 0.0 && step < 0.5)) throw ConfigError("'p_step' must lie in (0, 0.5)");
  std::vector<double> ps;
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  for (std::size_t i = 1; i < n; ++i) ps.push_back(static_cast<double>(i) * step);
  const fs::path path = required(s, "out");
  std::vector<LandscapeRow> rows;
  try {
    rows = landscape_export(losses, rhos, ps);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  std::ostringstream text;
  write_landscape_csv(text, rows);
  write_text(path, text.str());
  out << "landscape: " << rows.size() << " rows -> " << path.string() << '\n';
  return kOk;
}

int dispatch(std::string_view command, const Settings& s, std::ostream& out) {
  if (command == "gendata") return cmd_gendata(s, out);
  if (command == "train") return cmd_train(s, out);
  if (command == "pseudo") return cmd_pseudo(s, out);
  if (command == "retrain") return cmd_retrain(s, out);
  if (command == "eval") return cmd_eval(s, out);
  return cmd_landscape(s, out);
}

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"gendata", "train", "pseudo", "retrain", "eval", "landscape"};
  return names;
}

const std::vector<KeySpec>& keys_for(std::string_view command) {
  auto it = key_table().find(command);
  if (it == key_table().end()) throw ConfigError("unknown command '" + std::string(command) + "'");
  return it->second;
}

Settings parse_config_text(std::string_view text, std::string_view command, const std::string& source) {
  const auto& keys = keys_for(command);
  Settings out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + t + "'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; });
    if (!known) throw ConfigError(where + ": unknown key '" + key + "' for " + std::string(command));
    if (!out.emplace(key, value).second) throw ConfigError(where + ": key '" + key + "' given twice");
  }
  return out;
}

Settings merge_settings(std::string_view command, const Settings& file, const Settings& flags) {
  Settings out;
  for (const KeySpec& k : keys_for(command)) out[k.name] = k.fallback;
  for (const Settings* layer : {&file, &flags}) {
    for (const auto& [k, v] : *layer) {
      if (!out.contains(k)) throw ConfigError("unknown key '" + k + "' for " + std::string(command));
      out[k] = v;
    }
  }
  return out;
}

std::string render_config(std::string_view command, const Settings& settings) {
  std::string text = "# saldist " + std::string(command) + "\n";
  for (const KeySpec& k : keys_for(command)) {
    auto it = settings.find(k.name);
    text += k.name + "=" + (it == settings.end() ? k.fallback : it->second) + "\n";
  }
  return text;
}

TrainConfig train_config_from(const Settings& s) {
  TrainConfig c;
  c.side = to_count("side", get(s, "side"));
  c.modalities = to_modalities(get(s, "modalities"));
  c.epochs = to_count("epochs", get(s, "epochs"));
  c.batch = to_count("batch", get(s, "batch"));
  c.ref_sides.clear();
  for (const std::string& r : split_list(get(s, "ref_sides"))) c.ref_sides.push_back(to_count("ref_sides", r));
  c.lr = to_real("lr", get(s, "lr"));
  c.momentum = to_real("momentum", get(s, "momentum"));
  c.alpha = to_real("alpha", get(s, "alpha"));
  c.weights.confidence = to_real("lambda_c", get(s, "lambda_c"));
  c.weights.boundary = to_real("lambda_b", get(s, "lambda_b"));
  c.weights.multiscale = to_real("lambda_m", get(s, "lambda_m"));
  c.k = to_count("k", get(s, "k"));
  c.seed = to_count("seed", get(s, "seed"));
  c.stage2_epochs = to_count("stage2_epochs", get(s, "stage2_epochs"));
  c.stage2_lr = to_real("stage2_lr", get(s, "stage2_lr"));
  return c;
}

SyntheticSpec synthetic_spec_from(const Settings& s) {
  SyntheticSpec spec;
  spec.count = to_count("count", get(s, "count"));
  spec.side = to_count("side", get(s, "side"));
  spec.blobs_min = to_count("blobs_min", get(s, "blobs_min"));
  spec.blobs_max = to_count("blobs_max", get(s, "blobs_max"));
  spec.kind = parse_blob_kind(get(s, "kind"));
  spec.contrast = to_real("contrast", get(s, "contrast"));
  spec.noise = to_real("noise", get(s, "noise"));
  spec.modalities = to_modalities(get(s, "modalities"));
  spec.seed = to_count("seed", get(s, "seed"));
  return spec;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kNumericalError;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kIoError;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
    return kConfigError;
  }
  return kFailure;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised salient object detection at desk scale", "saldist"};
  app.require_subcommand(1);

  struct Parsed {
    CLI::App* sub = nullptr;
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<std::unique_ptr<Parsed>> parsed;
  for (const std::string& name : commands()) {
    auto p = std::make_unique<Parsed>();
    p->sub = app.add_subcommand(name);
    p->sub->add_option("--config", p->config, "flat key=value settings file");
    for (const KeySpec& k : keys_for(name)) {
      p->options[k.name] = p->sub->add_option("--" + k.name, p->values[k.name], k.help)->default_str(
          k.fallback.empty() ? "\"\"" : k.fallback);
    }
    parsed.push_back(std::move(p));
  }
  app.get_subcommand("gendata")->description("write a synthetic dataset and manifest");
  app.get_subcommand("train")->description("stage-1 self-distillation training");
  app.get_subcommand("pseudo")->description("export pseudo labels from a stage-1 checkpoint");
  app.get_subcommand("retrain")->description("stage-2 training on pseudo labels");
  app.get_subcommand("eval")->description("score a checkpoint or label set against ground truth");
  app.get_subcommand("landscape")->description("export loss/gradient landscapes as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  for (const auto& p : parsed) {
    if (!p->sub->parsed()) continue;
    const std::string command = p->sub->get_name();
    try {
      Settings file;
      if (!p->config.empty()) {
        std::ifstream in(p->config, std::ios::binary);
        if (!in) throw IoError("cannot open config file '" + p->config + "'");
        std::stringstream text;
        text << in.rdbuf();
        file = parse_config_text(text.str(), command, p->config);
      }
      Settings flags;
      for (const auto& [k, opt] : p->options)
        if (opt->count() > 0) flags[k] = p->values[k];
      return dispatch(command, merge_settings(command, file, flags), out);
    } catch (const std::exception& e) {
      err << "saldist " << command << ": " << e.what() << '\n';
      return exit_code_for(e);
    }
  }
  return kFailure;
}

}  // namespace saldist::cli
