#pragma once

// Orchestration: sweep plans, the JSON-lines run registry, resumable sweeps,
// dataset preparation, run-directory manifests and the fit/project reports
// behind the command-line tool.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pixscale/genquality.hpp"
#include "pixscale/imaging.hpp"
#include "pixscale/model.hpp"
#include "pixscale/plot.hpp"
#include "pixscale/probe.hpp"
#include "pixscale/scaling.hpp"
#include "pixscale/training.hpp"

namespace pixscale {

namespace fs = std::filesystem;

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"batch_size", c.batch_size},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"adam_eps", c.adam_eps},
                        {"peak_lr", c.peak_lr},
                        {"warmup_steps", c.warmup_steps},
                        {"final_lr_ratio", c.final_lr_ratio},
                        {"seed", c.seed},
                        {"eval_fraction", c.eval_fraction},
                        {"clip_norm", c.clip_norm},
                        {"augment", c.augment},
                        {"random_crop", c.augment_cfg.random_crop},
                        {"crop_min_area", c.augment_cfg.min_area},
                        {"flip_probability", c.augment_cfg.flip_probability}};
}

// ---------------------------------------------------------------------------
// Evaluation settings shared by sweeps and the probe/fd commands

struct ProbeSettings {
  std::vector<double> lrs = default_probe_lrs();
  int epochs = 40;
  int batch = 64;
  std::size_t images = 2000;  // taken from the front of the training split
  std::uint64_t seed = 0;
};

struct FdSettings {
  std::size_t references = 400;  // held-out images completed
  int samples_per_ref = 1;
  int visible_rows = -1;  // -1: top half
  double temperature = 1.0;
  std::string extractor = "pca";  // pca | mean | probe:<layer>
  int pca_dims = 16;
  std::size_t pca_fit_images = 1000;  // from the training split
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const ProbeSettings& p) {
  return nlohmann::json{{"lrs", p.lrs}, {"epochs", p.epochs}, {"batch", p.batch}, {"images", p.images}, {"seed", p.seed}};
}

inline nlohmann::json to_json(const FdSettings& f) {
  return nlohmann::json{{"references", f.references}, {"samples_per_ref", f.samples_per_ref},
                        {"visible_rows", f.visible_rows}, {"temperature", f.temperature},
                        {"extractor", f.extractor},   {"pca_dims", f.pca_dims},
                        {"pca_fit_images", f.pca_fit_images}, {"seed", f.seed}};
}

/// The train/held-out split used by training, so probes and FD references
/// line up with what the model did and did not see.
inline Split evaluation_split(const Dataset& ds, const TrainConfig& cfg) {
  return split_dataset(ds.size(), cfg.eval_fraction, cfg.seed);
}

inline ProbeResult run_probe(const Params<float>& params, const PaletteCodec& codec, const Dataset& ds,
                             const Split& split, const ProbeSettings& ps, int workers) {
  require(ds.num_classes() >= 2, "probe needs a labelled dataset with at least 2 classes");
  const std::size_t n = std::min(ps.images, split.train.size());
  require(n >= 10, "probe needs at least 10 images");
  const std::vector<std::size_t> idx(split.train.begin(), split.train.begin() + static_cast<std::ptrdiff_t>(n));
  const auto seqs = encode_all(ds, idx, codec);
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t i : idx) {
    require(ds.images[i].label.has_value(), "probe image " + std::to_string(i) + " has no label");
    labels.push_back(*ds.images[i].label);
  }
  ProbeConfig cfg;
  cfg.epochs = ps.epochs;
  cfg.batch = ps.batch;
  return best_layer_probe(params, seqs, labels, ps.lrs, cfg, ps.seed, {}, workers);
}

inline std::unique_ptr<Extractor> make_extractor(const FdSettings& fs_, const Params<float>& params,
                                                 const PaletteCodec& codec, const Dataset& ds, const Split& split) {
  if (fs_.extractor == "mean") return std::make_unique<MeanPixelExtractor>();
  if (fs_.extractor == "pca") {
    const std::size_t n = std::min(fs_.pca_fit_images, split.train.size());
    std::vector<ImageGrid> fit;
    fit.reserve(n);
    for (std::size_t i = 0; i < n; ++i) fit.push_back(ds.images[split.train[i]]);
    return std::make_unique<PcaExtractor>(fit, fs_.pca_dims);
  }
  if (fs_.extractor.rfind("probe:", 0) == 0) {
    int layer = 0;
    try {
      layer = std::stoi(fs_.extractor.substr(6));
    } catch (const std::exception&) {
      throw Error("bad extractor " + fs_.extractor);
    }
    return std::make_unique<ProbeFeatureExtractor>(params, codec, layer);
  }
  throw Error("unknown extractor " + fs_.extractor + " (expected pca, mean or probe:<layer>)");
}

/// Completion FD against held-out references. The PCA extractor is fit on
/// training images only, so it does not depend on the model being scored.
inline CompletionFdResult run_fd(const Params<float>& params, const PaletteCodec& codec, const Dataset& ds,
                                 const Split& split, const FdSettings& fs_, int workers) {
  const std::size_t n = std::min(fs_.references, split.heldout.size());
  require(n >= 2, "FD needs at least 2 held-out references");
  std::vector<ImageGrid> refs;
  refs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) refs.push_back(ds.images[split.heldout[i]]);
  const auto extractor = make_extractor(fs_, params, codec, ds, split);
  CompletionConfig cc;
  cc.samples_per_ref = fs_.samples_per_ref;
  cc.visible_rows = fs_.visible_rows;
  cc.temperature = fs_.temperature;
  cc.seed = fs_.seed;
  cc.workers = workers;
  return completion_fd(params, codec, refs, n, *extractor, cc);
}

// ---------------------------------------------------------------------------
// Sweep plans

struct SweepCell {
  std::string label;
  ModelSpec spec;
  double budget = 0;
};

struct SweepPlan {
  std::string profile;
  int resolution = 8;
  std::string codec = "grayscale";  // grayscale | kmeans
  int codec_k = 256;
  std::vector<double> budgets;
  std::vector<SweepCell> cells;  // budget-major
  std::vector<std::string> metrics = {metric::eval_loss};
  TrainConfig train;
  std::size_t synthetic_images = 20000;  // used when no prepared dataset exists
  std::uint64_t data_seed = 1;
  ProbeSettings probe;
  FdSettings fd;
  bool needs_compute_flag = false;

  void validate() const {
    require(!budgets.empty(), "sweep plan has no budgets");
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      require(budgets[i] > 0, "sweep budgets must be positive");
      require(i == 0 || budgets[i] > budgets[i - 1], "sweep budgets must be strictly increasing");
    }
    require(!cells.empty(), "sweep plan has no cells");
    std::set<std::string> seen;
    for (const auto& c : cells) {
      c.spec.validate();
      require(std::find(budgets.begin(), budgets.end(), c.budget) != budgets.end(),
              "cell " + c.label + " uses a budget outside the plan");
      require(c.spec.max_seq == resolution * resolution, "cell " + c.label + " max_seq does not equal s^2");
      require(c.spec.vocab == codec_k, "cell " + c.label + " vocabulary does not match codec K");
      require(seen.insert(run_key(c.spec, c.budget, train.seed, resolution)).second,
              "duplicate sweep cell " + c.label);
    }
    for (double b : budgets)
      require(std::any_of(cells.begin(), cells.end(), [&](const auto& c) { return c.budget == b; }),
              "budget " + plot::fmt(b) + " has no cells");
    for (const auto& m : metrics) metric_direction(m);
    train.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json cj = nlohmann::json::array();
    for (const auto& c : cells) cj.push_back({{"label", c.label}, {"spec", c.spec}, {"C", c.budget}});
    return nlohmann::json{{"profile", profile},     {"s", resolution},     {"codec", codec},
                          {"K", codec_k},           {"budgets", budgets},  {"cells", cj},
                          {"metrics", metrics},     {"train", pixscale::to_json(train)},
                          {"synthetic_images", synthetic_images}, {"data_seed", data_seed},
                          {"probe", pixscale::to_json(probe)},    {"fd", pixscale::to_json(fd)}};
  }
};

inline std::string cell_label(const ModelSpec& s) {
  return "L" + std::to_string(s.layers) + "-d" + std::to_string(s.hidden) + "-m" + std::to_string(s.mlp) + "-h" +
         std::to_string(s.heads);
}

/// Desk-scale profile: synthetic grayscale images at s x s, two-layer models
/// whose widths bracket each budget's optimum. Widths were chosen from pilot
/// runs so the optimum falls inside every ladder at s = 8.
inline SweepPlan desk_plan(int s = 8, std::uint64_t seed = 0) {
  require(s >= 2, "desk profile resolution must be at least 2");
  SweepPlan p;
  p.profile = s == 8 ? "desk8" : "desk" + std::to_string(s);
  p.resolution = s;
  p.budgets = {3e11, 1e12, 3e12};
  const std::vector<std::vector<int>> widths = {{8, 12, 16, 24, 32}, {12, 16, 24, 32, 48}, {16, 24, 32, 48, 64}};
  for (std::size_t b = 0; b < p.budgets.size(); ++b)
    for (int d : widths[b]) {
      const ModelSpec spec{2, d, d * 8 / 3 / 2 * 2, 2, 256, s * s};
      p.cells.push_back({cell_label(spec), spec, p.budgets[b]});
    }
  p.train.batch_size = 8;
  p.train.warmup_steps = 100;
  p.train.peak_lr = 1e-3;
  p.train.augment = true;
  p.train.augment_cfg.random_crop = false;  // flips only: crops of 8x8 frames destroy the content
  p.train.seed = seed;
  p.train.eval_batch = 200;
  p.probe.seed = seed;
  p.fd.seed = seed;
  p.fd.visible_rows = s / 2;
  return p;
}

/// The published grid: four budgets, each with one base architecture and its
/// six IsoFLOP variants (28 runs) at 32 x 32 with batch 512.
inline SweepPlan paper32_plan(std::uint64_t seed = 0) {
  SweepPlan p;
  p.profile = "paper32";
  p.resolution = 32;
  p.budgets = {4.5e18, 1.12e19, 2.8e19, 7e19};
  p.needs_compute_flag = true;
  const auto bases = base_configs(256, 32 * 32);
  for (std::size_t b = 0; b < p.budgets.size(); ++b) {
    p.cells.push_back({kBaseConfigNames[b], bases[b], p.budgets[b]});
    for (const auto& v : isoflop_variants(bases[b]))
      p.cells.push_back({std::string(kBaseConfigNames[b]) + "/" + cell_label(v), v, p.budgets[b]});
  }
  p.metrics = {metric::eval_loss, metric::probe_accuracy, metric::frechet_distance};
  p.train.seed = seed;
  p.synthetic_images = 0;
  p.probe.seed = seed;
  p.fd.seed = seed;
  return p;
}

inline SweepPlan named_plan(const std::string& name, std::uint64_t seed = 0) {
  if (name == "desk8") return desk_plan(8, seed);
  if (name.rfind("desk", 0) == 0 && name.size() > 4) {
    int s = 0;
    try {
      s = std::stoi(name.substr(4));
    } catch (const std::exception&) {
      throw Error("unknown profile " + name);
    }
    return desk_plan(s, seed);
  }
  if (name == "paper32") return paper32_plan(seed);
  throw Error("unknown profile " + name + " (expected desk8, desk<s> or paper32)");
}

/// Keeps only the cells at the listed budgets (each must be in the plan).
inline void restrict_budgets(SweepPlan& plan, const std::vector<double>& keep) {
  if (keep.empty()) return;
  for (double b : keep)
    require(std::any_of(plan.budgets.begin(), plan.budgets.end(), [&](double x) { return std::abs(x / b - 1) < 1e-9; }),
            "budget " + plot::fmt(b) + " is not in profile " + plan.profile);
  auto wanted = [&](double b) {
    return std::any_of(keep.begin(), keep.end(), [&](double x) { return std::abs(x / b - 1) < 1e-9; });
  };
  std::erase_if(plan.budgets, [&](double b) { return !wanted(b); });
  std::erase_if(plan.cells, [&](const SweepCell& c) { return !wanted(c.budget); });
}

// ---------------------------------------------------------------------------
// Run registry

/// Append-only JSON-lines file of RunRecords with unique keys. Each append
/// writes one complete line and flushes, so an interrupted sweep leaves a
/// valid file.
class RunRegistry {
 public:
  RunRegistry() = default;

  explicit RunRegistry(std::string path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
      for (auto& r : parse(binio::read_file(path_), path_)) add(std::move(r));
    }
  }

  static std::vector<RunRecord> parse(const std::string& text, const std::string& origin) {
    std::vector<RunRecord> out;
    std::set<std::string> keys;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      RunRecord r;
      try {
        r = nlohmann::json::parse(line).get<RunRecord>();
      } catch (const std::exception& e) {
        throw Error(origin + ":" + std::to_string(lineno) + ": invalid record: " + e.what());
      }
      require(keys.insert(r.key).second, origin + ":" + std::to_string(lineno) + ": duplicate key " + r.key);
      out.push_back(std::move(r));
    }
    return out;
  }

  static std::string format(const RunRecord& r) { return nlohmann::json(r).dump() + "\n"; }

  const std::string& path() const { return path_; }
  const std::vector<RunRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& key) const { return keys_.count(key) != 0; }

  const RunRecord* find(const std::string& key) const {
    for (const auto& r : records_)
      if (r.key == key) return &r;
    return nullptr;
  }

  void append(const RunRecord& r) {
    require(!contains(r.key), "registry already contains key " + r.key);
    if (!path_.empty()) {
      if (const auto parent = fs::path(path_).parent_path(); !parent.empty()) fs::create_directories(parent);
      std::ofstream out(path_, std::ios::app | std::ios::binary);
      require(static_cast<bool>(out), "cannot open registry " + path_);
      out << format(r);
      out.flush();
      require(static_cast<bool>(out), "failed writing registry " + path_);
    }
    add(r);
  }

 private:
  void add(RunRecord r) {
    keys_.insert(r.key);
    records_.push_back(std::move(r));
  }

  std::string path_;
  std::vector<RunRecord> records_;
  std::set<std::string> keys_;
};

// ---------------------------------------------------------------------------
// Run directory

struct RunDir {
  fs::path root;

  explicit RunDir(const std::string& dir) : root(dir) { fs::create_directories(root); }

  std::string registry() const { return (root / "registry.jsonl").string(); }
  std::string failures() const { return (root / "failures.jsonl").string(); }
  std::string timings() const { return (root / "timings.jsonl").string(); }
  std::string dataset() const { return (root / "dataset.pxs").string(); }
  std::string codec() const { return (root / "dataset.codec.json").string(); }
  std::string checkpoint(const std::string& key) const { return (root / "checkpoints" / (key + ".pxck")).string(); }
  std::string manifest() const { return (root / "manifest.json").string(); }
  std::string file(const std::string& rel) const { return (root / rel).string(); }

  /// Records `entry` under `section` in manifest.json. Entries hold only
  /// inputs and output paths, never timestamps, so reruns rewrite the same
  /// bytes.
  void record(const std::string& section, const nlohmann::json& entry) const {
    nlohmann::json m = nlohmann::json::object();
    if (fs::exists(manifest())) {
      try {
        m = nlohmann::json::parse(binio::read_file(manifest()));
      } catch (const std::exception& e) {
        throw Error("corrupt manifest " + manifest() + ": " + e.what());
      }
    }
    m[section] = entry;
    write_text(manifest(), m.dump(2) + "\n");
  }

  static void write_text(const std::string& path, const std::string& text) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    binio::write_file(path, text);
  }
};

inline void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  require(static_cast<bool>(out), "cannot open " + path);
  out << line << '\n';
}

// ---------------------------------------------------------------------------
// Dataset preparation

struct PrepareConfig {
  std::string data_dir;            // directory with manifest.txt; empty: synthetic
  std::size_t synthetic_images = 0;
  std::uint64_t seed = 0;
  int resolution = 8;
  std::string codec = "grayscale";  // grayscale | kmeans
  int codec_k = 16;
  std::string out_file;            // packed dataset path
};

struct PrepareResult {
  std::string dataset_path;
  std::string codec_path;
  std::string manifest_path;
  std::size_t count = 0;
  PaletteCodec codec;
};

inline std::string codec_path_for(const std::string& dataset_path) {
  const fs::path p(dataset_path);
  return (p.parent_path() / (p.stem().string() + ".codec.json")).string();
}

inline std::string manifest_path_for(const std::string& dataset_path) {
  const fs::path p(dataset_path);
  return (p.parent_path() / (p.stem().string() + ".manifest.json")).string();
}

/// Packs images at the target resolution, fits or selects the codec and
/// writes dataset, codec and manifest. Outputs depend only on the inputs.
inline PrepareResult prepare_dataset(const PrepareConfig& cfg) {
  require(!cfg.out_file.empty(), "prepare needs an output file");
  require(cfg.resolution >= 1, "resolution must be positive");
  Dataset ds;
  nlohmann::json source;
  if (!cfg.data_dir.empty()) {
    ds = read_image_directory(cfg.data_dir, cfg.resolution);
    source = {{"kind", "directory"}, {"path", cfg.data_dir}};
  } else {
    require(cfg.synthetic_images > 0, "prepare needs a data directory or a synthetic image count");
    ds = synthetic_dataset(cfg.synthetic_images, cfg.resolution, cfg.seed);
    source = {{"kind", "synthetic"}, {"images", cfg.synthetic_images}, {"seed", cfg.seed}};
  }
  PaletteCodec codec;
  if (cfg.codec == "grayscale") {
    require(ds.channels == 1, "grayscale codec needs single-channel images; use the kmeans codec for color");
    codec = PaletteCodec::grayscale();
  } else if (cfg.codec == "kmeans") {
    codec = fit_palette(ds.images, cfg.codec_k, cfg.seed);
  } else {
    throw Error("unknown codec " + cfg.codec + " (expected grayscale or kmeans)");
  }
  PrepareResult res;
  res.dataset_path = cfg.out_file;
  res.codec_path = codec_path_for(cfg.out_file);
  res.manifest_path = manifest_path_for(cfg.out_file);
  res.count = ds.size();
  res.codec = codec;
  const std::string packed = pack_dataset(ds);
  if (const auto parent = fs::path(cfg.out_file).parent_path(); !parent.empty()) fs::create_directories(parent);
  binio::write_file(res.dataset_path, packed);
  binio::write_file(res.codec_path, codec.to_json().dump(2) + "\n");
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a64(packed)));
  const nlohmann::json manifest = {{"source", source},
                                   {"count", ds.size()},
                                   {"s", ds.resolution},
                                   {"channels", ds.channels},
                                   {"classes", ds.num_classes()},
                                   {"codec", {{"mode", cfg.codec}, {"K", codec.vocab}}},
                                   {"dataset", fs::path(res.dataset_path).filename().string()},
                                   {"codec_file", fs::path(res.codec_path).filename().string()},
                                   {"fnv1a64", hash}};
  binio::write_file(res.manifest_path, manifest.dump(2) + "\n");
  return res;
}

inline PaletteCodec load_codec(const std::string& path) {
  try {
    return PaletteCodec::from_json(nlohmann::json::parse(binio::read_file(path)));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("corrupt codec file " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepOptions {
  int workers = 1;         // threads inside one training run
  int parallel_cells = 1;  // > 1: train this many cells at once, one thread each
  long max_cells = -1;     // stop after this many new trainings (-1: all)
  bool save_checkpoints = true;
  std::function<void(const std::string&)> log;
};

struct SweepSummary {
  std::size_t trained = 0;
  std::size_t skipped = 0;  // already in the registry
  std::size_t failed = 0;
  std::size_t pending = 0;  // left for a later resume (max_cells)
};

inline nlohmann::json to_json(const SweepSummary& s) {
  return nlohmann::json{{"trained", s.trained}, {"skipped", s.skipped}, {"failed", s.failed}, {"pending", s.pending}};
}

/// Trains one cell and evaluates the plan's metrics. Wall time is returned
/// separately so the record itself is reproducible.
inline std::pair<RunRecord, Checkpoint> run_cell(const SweepPlan& plan, const SweepCell& cell, const Dataset& ds,
                                                 const PaletteCodec& codec, int workers, double& seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = plan.train;
  cfg.workers = workers;
  TrainResult tr = train(cell.spec, ds, codec, cell.budget, cfg);
  const Split split = evaluation_split(ds, plan.train);
  for (const auto& m : plan.metrics) {
    if (m == metric::probe_accuracy) {
      tr.record.metrics[m] = run_probe(tr.checkpoint.params, codec, ds, split, plan.probe, workers).best_accuracy;
    } else if (m == metric::frechet_distance) {
      tr.record.metrics[m] = run_fd(tr.checkpoint.params, codec, ds, split, plan.fd, workers).distance;
    }
  }
  tr.record.wall_seconds = 0;
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(tr.record), std::move(tr.checkpoint)};
}

/// Trains every plan cell missing from the registry, in plan order. Failures
/// are logged to failures.jsonl and the sweep moves on; completed records are
/// appended as they finish, so an interrupted sweep resumes where it stopped.
inline SweepSummary run_sweep(const SweepPlan& plan, const Dataset& ds, const PaletteCodec& codec, RunRegistry& registry,
                              const RunDir& dir, const SweepOptions& opt = {}) {
  plan.validate();
  require(ds.resolution == plan.resolution, "dataset resolution " + std::to_string(ds.resolution) +
                                                " does not match plan resolution " + std::to_string(plan.resolution));
  require(codec.vocab == plan.codec_k, "codec K does not match the plan");
  require(opt.parallel_cells >= 1, "parallel cells must be at least 1");
  auto log = [&](const std::string& msg) {
    if (opt.log) opt.log(msg);
  };
  SweepSummary sum;
  std::vector<const SweepCell*> todo;
  for (const auto& c : plan.cells) {
    if (registry.contains(run_key(c.spec, c.budget, plan.train.seed, plan.resolution))) {
      ++sum.skipped;
    } else {
      todo.push_back(&c);
    }
  }
  if (opt.max_cells >= 0 && todo.size() > static_cast<std::size_t>(opt.max_cells)) {
    sum.pending = todo.size() - static_cast<std::size_t>(opt.max_cells);
    todo.resize(static_cast<std::size_t>(opt.max_cells));
  }

  struct Outcome {
    std::optional<RunRecord> record;
    std::optional<Checkpoint> checkpoint;
    std::string error;
    double seconds = 0;
  };
  const std::size_t group = static_cast<std::size_t>(opt.parallel_cells);
  const int inner_workers = opt.parallel_cells > 1 ? 1 : opt.workers;
  for (std::size_t start = 0; start < todo.size(); start += group) {
    const std::size_t count = std::min(group, todo.size() - start);
    std::vector<Outcome> out(count);
    parallel_for(count, static_cast<int>(count), [&](std::size_t i) {
      try {
        auto [rec, ck] = run_cell(plan, *todo[start + i], ds, codec, inner_workers, out[i].seconds);
        out[i].record = std::move(rec);
        out[i].checkpoint = std::move(ck);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    });
    // Single writer, plan order: the registry is the same for any group size.
    for (std::size_t i = 0; i < count; ++i) {
      const SweepCell& cell = *todo[start + i];
      const std::string key = run_key(cell.spec, cell.budget, plan.train.seed, plan.resolution);
      if (!out[i].record) {
        ++sum.failed;
        append_line(dir.failures(), nlohmann::json{{"key", key}, {"label", cell.label}, {"C", cell.budget},
                                                   {"error", out[i].error}}.dump());
        log("FAILED " + cell.label + " C=" + plot::fmt(cell.budget) + ": " + out[i].error);
        continue;
      }
      if (opt.save_checkpoints) {
        fs::create_directories(fs::path(dir.checkpoint(key)).parent_path());
        save_checkpoint(dir.checkpoint(key), *out[i].checkpoint);
      }
      registry.append(*out[i].record);
      append_line(dir.timings(), nlohmann::json{{"key", key}, {"wall_seconds", out[i].seconds}}.dump());
      ++sum.trained;
      log(cell.label + " C=" + plot::fmt(cell.budget) + " N=" + std::to_string(out[i].record->params) +
          " eval_loss=" + plot::fmt(out[i].record->final_eval_loss, "%.4f") + " (" +
          plot::fmt(out[i].seconds, "%.1f") + "s)");
    }
  }
  return sum;
}

/// Loads the prepared dataset under the run directory, or generates and
/// stores the plan's synthetic corpus when none exists yet.
inline std::pair<Dataset, PaletteCodec> sweep_dataset(const SweepPlan& plan, const RunDir& dir,
                                                       const std::string& data_path = {}) {
  const std::string path = data_path.empty() ? dir.dataset() : data_path;
  if (fs::exists(path)) {
    Dataset ds = load_dataset(path);
    const std::string cp = codec_path_for(path);
    PaletteCodec codec = fs::exists(cp) ? load_codec(cp) : PaletteCodec::grayscale();
    return {std::move(ds), std::move(codec)};
  }
  require(data_path.empty(), "dataset not found: " + data_path);
  require(plan.synthetic_images > 0, "profile " + plan.profile + " needs a prepared dataset (run prepare first)");
  require(plan.codec == "grayscale", "synthetic data is grayscale; prepare a dataset for other codecs");
  PrepareConfig pc;
  pc.synthetic_images = plan.synthetic_images;
  pc.seed = plan.data_seed;
  pc.resolution = plan.resolution;
  pc.out_file = dir.dataset();
  prepare_dataset(pc);
  return {load_dataset(dir.dataset()), load_codec(dir.codec())};
}

/// Record with the best metric value at the largest budget; the natural
/// compute-optimal model of a finished sweep.
inline const RunRecord& best_record(const std::vector<RunRecord>& records, const std::string& metric_name = metric::eval_loss) {
  require(!records.empty(), "registry is empty");
  double top = 0;
  for (const auto& r : records) top = std::max(top, r.budget);
  const bool maximize = metric_direction(metric_name) == Direction::maximize;
  const RunRecord* best = nullptr;
  double best_v = 0;
  for (const auto& r : records) {
    if (std::abs(r.budget / top - 1.0) > 0.01) continue;
    double v;
    if (metric_name == metric::eval_loss) {
      v = r.final_eval_loss;
    } else {
      const auto it = r.metrics.find(metric_name);
      if (it == r.metrics.end()) continue;
      v = it->second;
    }
    if (!best || (maximize ? v > best_v : v < best_v)) best = &r, best_v = v;
  }
  require(best != nullptr, "no record at the largest budget has metric " + metric_name);
  return *best;
}

// ---------------------------------------------------------------------------
// Fit / project reports

inline ScalingReport fit_registry(const std::vector<RunRecord>& records, const std::string& metric_name,
                                  std::optional<int> resolution = std::nullopt) {
  auto profiles = build_profiles(records, metric_name, resolution);
  require(!profiles.empty(), "insufficient data: no runs with metric " + metric_name);
  if (!resolution) {
    const int s0 = profiles.front().resolution;
    for (const auto& p : profiles)
      require(p.resolution == s0, "registry mixes resolutions; pass a resolution to fit one of them");
  }
  return analyze(profiles);
}

struct ProjectionModel {
  PowerLawFit n_fit;
  PowerLawFit d_fit;
  std::optional<FrontierFit> frontier;
  std::string metric = metric::eval_loss;
};

inline ProjectionModel projection_model_from_fit(const nlohmann::json& fit) {
  ProjectionModel m;
  try {
    m.n_fit = fit.at("a").get<PowerLawFit>();
    m.d_fit = fit.at("b").get<PowerLawFit>();
    m.metric = fit.at("metric").get<std::string>();
    if (fit.contains("frontier")) m.frontier = fit.at("frontier").get<FrontierFit>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed fit report: ") + e.what());
  }
  return m;
}

/// Exponent a plus one (C, N_opt) calibration point; D follows from 6ND = C,
/// so its exponent is 1 - a.
inline ProjectionModel projection_model_calibrated(double a, double budget, double n_opt) {
  require(budget > 0 && n_opt > 0, "calibration point must be positive");
  require(a > 0 && a < 1, "exponent must be in (0, 1)");
  ProjectionModel m;
  m.n_fit = calibrated_power_law(a, budget, n_opt);
  m.d_fit = calibrated_power_law(1.0 - a, budget, budget / (6.0 * n_opt));
  return m;
}

inline std::vector<Projection> project_all(const ProjectionModel& m, const std::vector<double>& budgets, int resolution) {
  require(!budgets.empty(), "no budgets to project");
  std::vector<Projection> out;
  for (double c : budgets) out.push_back(project(m.n_fit, m.d_fit, m.frontier ? &*m.frontier : nullptr, c, resolution));
  return out;
}

inline std::string forecast_text(double now, double target, double growth) {
  return plot::fmt(forecast_years(now, target, growth), "%.1f") + " years";
}

}  // namespace pixscale
