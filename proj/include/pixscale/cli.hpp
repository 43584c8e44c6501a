#pragma once

// Command-line surface. Every subcommand reads defaults, then an optional
// key = value config file, then explicit flags (highest precedence), and
// writes its outputs under --run-dir, recording them in manifest.json.

#include <iostream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pixscale/sweep.hpp"

namespace pixscale::cli {

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    require(pos == v.size(), "");
    return d;
  } catch (const std::exception&) {
    throw Error("config key " + key + ": not a number: " + v);
  }
}

/// Config keys not consumed by the training section, checked against the
/// command's own vocabulary.
class ConfigReader {
 public:
  explicit ConfigReader(const std::string& path) {
    if (!path.empty()) map_ = load_config(path);
  }

  const ConfigMap& map() const { return map_; }
  void mark(const std::vector<std::string>& keys) { used_.insert(keys.begin(), keys.end()); }

  std::optional<std::string> str(const std::string& key) {
    const auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::optional<double> num(const std::string& key) {
    const auto v = str(key);
    if (!v) return std::nullopt;
    return parse_double(key, *v);
  }

  void finish() const {
    for (const auto& [k, v] : map_) require(used_.count(k) != 0, "unknown config key " + k);
  }

 private:
  ConfigMap map_;
  std::set<std::string> used_;
};

struct Common {
  std::string run_dir = "run";
  std::string config;
  std::uint64_t seed = 0;
  int workers = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--run-dir", run_dir, "Run directory for all outputs")->capture_default_str();
    app->add_option("--config", config, "key = value config file (flags override it)");
    seed_opt = app->add_option("--seed", seed, "Random seed");
    workers_opt = app->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  }

  /// Flag value if given, else the config value, else the default.
  void resolve(ConfigReader& cfg) {
    if (!seed_opt->count())
      if (const auto v = cfg.str("seed")) {
        try {
          std::size_t pos = 0;
          seed = std::stoull(*v, &pos);
          require(pos == v->size(), "");
        } catch (const std::exception&) {
          throw Error("config key seed: not an unsigned integer: " + *v);
        }
      }
    if (!workers_opt->count())
      if (const auto v = cfg.num("workers")) workers = static_cast<int>(*v);
    cfg.mark({"seed", "workers"});
    require(workers >= 1, "workers must be at least 1");
  }
};

template <class T>
void take(CLI::Option* opt, T& field, const std::optional<double>& cfg_value) {
  if (!opt->count() && cfg_value) field = static_cast<T>(*cfg_value);
}

inline std::string rel(const RunDir& dir, const std::string& path) {
  return fs::path(path).lexically_relative(dir.root).string();
}

/// Model selection shared by probe and fd: an explicit checkpoint, a registry
/// key, or the best eval-loss record at the largest budget.
struct ModelChoice {
  std::string checkpoint;
  std::string key;
  CLI::Option* split_seed_opt = nullptr;
  std::uint64_t split_seed = 0;
  std::string data;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "PXCK checkpoint to evaluate");
    app->add_option("--key", key, "Registry key whose checkpoint to evaluate");
    split_seed_opt = app->add_option("--split-seed", split_seed, "Training seed that defined the held-out split");
    app->add_option("--data", data, "Packed dataset (default: the run directory's)");
  }

  struct Resolved {
    Checkpoint ck;
    std::string name;
    std::uint64_t split_seed = 0;
  };

  Resolved resolve(const RunDir& dir, std::uint64_t fallback_seed) const {
    Resolved r;
    r.split_seed = split_seed_opt->count() ? split_seed : fallback_seed;
    if (!checkpoint.empty()) {
      r.ck = load_checkpoint(checkpoint);
      r.name = fs::path(checkpoint).stem().string();
      return r;
    }
    RunRegistry reg(dir.registry());
    const RunRecord* rec = key.empty() ? &best_record(reg.records()) : reg.find(key);
    require(rec != nullptr, "registry has no key " + key);
    r.ck = load_checkpoint(dir.checkpoint(rec->key));
    r.name = rec->key;
    if (!split_seed_opt->count()) r.split_seed = rec->seed;
    return r;
  }

  std::pair<Dataset, PaletteCodec> dataset(const RunDir& dir) const {
    const std::string path = data.empty() ? dir.dataset() : data;
    require(fs::exists(path), "dataset not found: " + path + " (run prepare or sweep first)");
    const std::string cp = codec_path_for(path);
    return {load_dataset(path), fs::exists(cp) ? load_codec(cp) : PaletteCodec::grayscale()};
  }
};

/// The training split as the sweep defined it (eval fraction from the run
/// manifest when present).
inline Split split_for(const RunDir& dir, const Dataset& ds, std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  if (fs::exists(dir.manifest())) {
    const auto m = nlohmann::json::parse(binio::read_file(dir.manifest()));
    if (m.contains("sweep")) tc.eval_fraction = m["sweep"]["plan"]["train"].value("eval_fraction", tc.eval_fraction);
  }
  return evaluation_split(ds, tc);
}

}  // namespace detail

/// Runs one command line. Errors print a single `error: <reason>` line and
/// return nonzero.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Compute-optimal scaling studies for pixel-level autoregressive image models", "pixscale"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // prepare
  Common prep_c;
  PrepareConfig prep;
  std::string prep_out;
  auto* prepare = app.add_subcommand("prepare", "Pack images (or a synthetic corpus) and persist the codec");
  prep_c.add(prepare);
  auto* prep_dir_opt = prepare->add_option("--data-dir", prep.data_dir, "Directory with manifest.txt and PGM/PPM files");
  auto* prep_syn_opt = prepare->add_option("--synthetic", prep.synthetic_images, "Generate this many synthetic images");
  auto* prep_res_opt = prepare->add_option("--resolution", prep.resolution, "Target side length s");
  auto* prep_codec_opt = prepare->add_option("--codec", prep.codec, "grayscale or kmeans");
  auto* prep_k_opt = prepare->add_option("--k", prep.codec_k, "Palette size for kmeans");
  prepare->add_option("--out", prep_out, "Packed dataset path (default <run-dir>/dataset.pxs)");

  // sweep
  Common sw_c;
  std::string profile = "desk8", data_path, emit_plan;
  std::vector<double> sw_budgets;
  std::vector<std::string> sw_metrics;
  int sw_res = 0, parallel_cells = 1;
  long max_cells = -1;
  bool compute_flag = false, quiet = false;
  auto* sweep = app.add_subcommand("sweep", "Train every IsoFLOP cell of a profile not yet in the registry");
  sw_c.add(sweep);
  auto* sw_profile_opt = sweep->add_option("--profile", profile, "desk8, desk<s> or paper32");
  auto* sw_budget_opt = sweep->add_option("--budget", sw_budgets, "Restrict to these budgets (repeatable)");
  auto* sw_res_opt = sweep->add_option("--resolution", sw_res, "Resolution for desk profiles");
  auto* sw_metric_opt = sweep->add_option("--metric", sw_metrics, "Metrics to evaluate per cell (repeatable)");
  auto* sw_par_opt = sweep->add_option("--parallel-cells", parallel_cells, "Train this many cells concurrently");
  auto* sw_max_opt = sweep->add_option("--max-cells", max_cells, "Stop after this many new trainings");
  sweep->add_option("--data", data_path, "Packed dataset (default <run-dir>/dataset.pxs, generated if missing)");
  sweep->add_flag("--i-have-the-compute", compute_flag, "Allow the 32x32 large-grid profile");
  sweep->add_option("--emit-plan", emit_plan, "Write the plan JSON to this path and exit");
  sweep->add_flag("--quiet", quiet, "No per-cell progress lines");

  // probe
  Common pr_c;
  ModelChoice pr_m;
  ProbeSettings ps;
  std::string pr_out;
  auto* probe = app.add_subcommand("probe", "Linear-probe accuracy over the (layer x learning rate) grid");
  pr_c.add(probe);
  pr_m.add(probe);
  auto* pr_ep_opt = probe->add_option("--epochs", ps.epochs, "SGD epochs");
  auto* pr_im_opt = probe->add_option("--images", ps.images, "Training-split images used by the probe");
  auto* pr_b_opt = probe->add_option("--batch", ps.batch, "SGD batch size");
  auto* pr_lr_opt = probe->add_option("--lr", ps.lrs, "Learning-rate grid (repeatable)");
  probe->add_option("--out", pr_out, "Result JSON (default <run-dir>/probe/<model>.json)");

  // fd
  Common fd_c;
  ModelChoice fd_m;
  FdSettings fset;
  bool untrained = false;
  int sheet = 0;
  std::string fd_out;
  auto* fd = app.add_subcommand("fd", "Completion Frechet distance against held-out references");
  fd_c.add(fd);
  fd_m.add(fd);
  auto* fd_ref_opt = fd->add_option("--references", fset.references, "Held-out references completed");
  auto* fd_smp_opt = fd->add_option("--samples", fset.samples_per_ref, "Completions per reference");
  auto* fd_vis_opt = fd->add_option("--visible-rows", fset.visible_rows, "Rows given to the model (-1: half)");
  auto* fd_tmp_opt = fd->add_option("--temperature", fset.temperature, "Sampling temperature");
  auto* fd_ext_opt = fd->add_option("--extractor", fset.extractor, "pca, mean or probe:<layer>");
  auto* fd_dim_opt = fd->add_option("--pca-dims", fset.pca_dims, "PCA feature dimension");
  fd->add_flag("--untrained", untrained, "Score the same spec at its initialization instead");
  fd->add_option("--contact-sheet", sheet, "Also write an SVG of this many completions");
  fd->add_option("--out", fd_out, "Result JSON (default <run-dir>/fd/<model>.json)");

  // fit / plot
  Common fit_c, plot_c;
  std::string fit_registry_path, plot_registry_path, fit_metric = metric::eval_loss, plot_metric = metric::eval_loss;
  std::vector<double> fit_budgets, plot_budgets;
  int fit_res = 0, plot_res = 0;
  auto* fit = app.add_subcommand("fit", "Fit IsoFLOP parabolas and compute-optimal power laws");
  fit_c.add(fit);
  fit->add_option("--registry", fit_registry_path, "Registry (default <run-dir>/registry.jsonl)");
  auto* fit_metric_opt = fit->add_option("--metric", fit_metric, "eval_loss, probe_accuracy or frechet_distance");
  auto* fit_res_opt = fit->add_option("--resolution", fit_res, "Only records at this resolution");
  fit->add_option("--budget", fit_budgets, "Only these budgets (repeatable)");
  auto* plot = app.add_subcommand("plot", "SVG figures for a registry fit");
  plot_c.add(plot);
  plot->add_option("--registry", plot_registry_path, "Registry (default <run-dir>/registry.jsonl)");
  auto* plot_metric_opt = plot->add_option("--metric", plot_metric, "Metric to plot");
  auto* plot_res_opt = plot->add_option("--resolution", plot_res, "Only records at this resolution");
  plot->add_option("--budget", plot_budgets, "Only these budgets (repeatable)");

  // project
  Common pj_c;
  std::string pj_fit, pj_metric = metric::eval_loss, pj_cal;
  std::vector<double> pj_budgets;
  int pj_res = 0;
  double pj_a = 0;
  auto* project_cmd = app.add_subcommand("project", "Project N_opt, D_opt and the metric to larger budgets");
  pj_c.add(project_cmd);
  project_cmd->add_option("--fit", pj_fit, "Fit report JSON (default <run-dir>/fit/<metric>.json)");
  project_cmd->add_option("--metric", pj_metric, "Metric of the fit report");
  project_cmd->add_option("--budget", pj_budgets, "Budgets to project (repeatable)")->required();
  project_cmd->add_option("--resolution", pj_res, "Resolution s for per-pixel columns");
  auto* pj_a_opt = project_cmd->add_option("--exponent", pj_a, "Use this N_opt exponent instead of a fit");
  project_cmd->add_option("--calibrate", pj_cal, "C:N_opt calibration point for --exponent");

  // forecast
  std::vector<double> fc;
  auto* forecast = app.add_subcommand("forecast", "Years until compute grows from NOW to TARGET at GROWTH x/year");
  forecast->add_option("values", fc, "NOW TARGET GROWTH: current FLOPs, target FLOPs, annual growth factor")
      ->expected(3)
      ->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 2;
  }

  try {
    if (*prepare) {
      ConfigReader cfg(prep_c.config);
      prep_c.resolve(cfg);
      if (auto v = cfg.str("data_dir"); v && !prep_dir_opt->count()) prep.data_dir = *v;
      take(prep_syn_opt, prep.synthetic_images, cfg.num("synthetic_images"));
      take(prep_res_opt, prep.resolution, cfg.num("resolution"));
      if (auto v = cfg.str("codec"); v && !prep_codec_opt->count()) prep.codec = *v;
      take(prep_k_opt, prep.codec_k, cfg.num("codec_k"));
      cfg.finish();
      const RunDir dir(prep_c.run_dir);
      prep.seed = prep_c.seed;
      prep.out_file = prep_out.empty() ? dir.dataset() : prep_out;
      const PrepareResult r = prepare_dataset(prep);
      dir.record("prepare", {{"resolution", prep.resolution},
                             {"codec", prep.codec},
                             {"seed", prep.seed},
                             {"outputs", {r.dataset_path, r.codec_path, r.manifest_path}}});
      out << "prepared " << r.count << " images at " << prep.resolution << "x" << prep.resolution << " -> "
          << r.dataset_path << "\n";
      return 0;
    }

    if (*sweep) {
      ConfigReader cfg(sw_c.config);
      sw_c.resolve(cfg);
      if (auto v = cfg.str("profile"); v && !sw_profile_opt->count()) profile = *v;
      take(sw_res_opt, sw_res, cfg.num("resolution"));
      SweepPlan plan = named_plan(profile, sw_c.seed);
      if (sw_res > 0 && sw_res != plan.resolution) {
        require(profile.rfind("desk", 0) == 0, "profile " + profile + " has a fixed resolution");
        plan = desk_plan(sw_res, sw_c.seed);
      }
      cfg.mark(apply_train_config(cfg.map(), plan.train));
      plan.train.seed = sw_c.seed;
      plan.probe.seed = plan.fd.seed = sw_c.seed;
      if (auto v = cfg.str("budgets"); v && !sw_budget_opt->count())
          for (const auto& b : split_list(*v)) sw_budgets.push_back(parse_double("budgets", b));
      restrict_budgets(plan, sw_budgets);
      if (auto v = cfg.str("metrics"); v && !sw_metric_opt->count()) sw_metrics = split_list(*v);
      if (!sw_metrics.empty()) plan.metrics = sw_metrics;
      if (std::find(plan.metrics.begin(), plan.metrics.end(), metric::eval_loss) == plan.metrics.end())
        plan.metrics.insert(plan.metrics.begin(), metric::eval_loss);
      take(sw_par_opt, parallel_cells, cfg.num("parallel_cells"));
      take(sw_max_opt, max_cells, cfg.num("max_cells"));
      if (auto v = cfg.num("synthetic_images")) plan.synthetic_images = static_cast<std::size_t>(*v);
      if (auto v = cfg.num("data_seed")) plan.data_seed = static_cast<std::uint64_t>(*v);
      if (auto v = cfg.num("probe_epochs")) plan.probe.epochs = static_cast<int>(*v);
      if (auto v = cfg.num("probe_images")) plan.probe.images = static_cast<std::size_t>(*v);
      if (auto v = cfg.num("fd_references")) plan.fd.references = static_cast<std::size_t>(*v);
      if (auto v = cfg.str("fd_extractor")) plan.fd.extractor = *v;
      cfg.finish();
      plan.validate();
      if (!emit_plan.empty()) {
        RunDir::write_text(emit_plan, plan.to_json().dump(2) + "\n");
        out << "wrote plan " << plan.profile << " (" << plan.cells.size() << " cells) to " << emit_plan << "\n";
        return 0;
      }
      require(!plan.needs_compute_flag || compute_flag,
              "profile " + plan.profile + " needs large-scale compute; pass --i-have-the-compute to run it");
      const RunDir dir(sw_c.run_dir);
      auto [ds, codec] = sweep_dataset(plan, dir, data_path);
      dir.record("sweep", {{"plan", plan.to_json()},
                           {"dataset", data_path.empty() ? rel(dir, dir.dataset()) : data_path},
                           {"registry", rel(dir, dir.registry())},
                           {"checkpoints", "checkpoints"},
                           {"failures", rel(dir, dir.failures())}});
      RunRegistry reg(dir.registry());
      SweepOptions opt;
      opt.workers = sw_c.workers;
      opt.parallel_cells = parallel_cells;
      opt.max_cells = max_cells;
      if (!quiet) opt.log = [&](const std::string& m) { out << m << std::endl; };
      const SweepSummary s = run_sweep(plan, ds, codec, reg, dir, opt);
      out << "sweep " << plan.profile << ": trained " << s.trained << ", skipped " << s.skipped << ", failed "
          << s.failed << ", pending " << s.pending << "\n";
      return s.failed > 0 ? 3 : 0;
    }

    if (*probe) {
      ConfigReader cfg(pr_c.config);
      pr_c.resolve(cfg);
      take(pr_ep_opt, ps.epochs, cfg.num("probe_epochs"));
      take(pr_im_opt, ps.images, cfg.num("probe_images"));
      take(pr_b_opt, ps.batch, cfg.num("probe_batch"));
      if (auto v = cfg.str("probe_lrs"); v && !pr_lr_opt->count()) {
          ps.lrs.clear();
          for (const auto& x : split_list(*v)) ps.lrs.push_back(parse_double("probe_lrs", x));
        }
      cfg.finish();
      ps.seed = pr_c.seed;
      const RunDir dir(pr_c.run_dir);
      const auto model = pr_m.resolve(dir, pr_c.seed);
      const auto [ds, codec] = pr_m.dataset(dir);
      const Split split = split_for(dir, ds, model.split_seed);
      const ProbeResult r = run_probe(model.ck.params, codec, ds, split, ps, pr_c.workers);
      const std::string path = pr_out.empty() ? dir.file("probe/" + model.name + ".json") : pr_out;
      nlohmann::json j = r;
      j["model"] = model.name;
      j["chance"] = 1.0 / ds.num_classes();
      j["settings"] = to_json(ps);
      RunDir::write_text(path, j.dump(2) + "\n");
      dir.record("probe/" + model.name, {{"settings", to_json(ps)}, {"output", path}});
      out << "probe " << model.name << ": best accuracy " << plot::fmt(r.best_accuracy, "%.4f") << " at layer "
          << r.best_layer << ", lr " << r.best_lr << " (chance " << plot::fmt(1.0 / ds.num_classes(), "%.3f")
          << ")\n";
      return 0;
    }

    if (*fd) {
      ConfigReader cfg(fd_c.config);
      fd_c.resolve(cfg);
      take(fd_ref_opt, fset.references, cfg.num("fd_references"));
      take(fd_smp_opt, fset.samples_per_ref, cfg.num("fd_samples"));
      take(fd_vis_opt, fset.visible_rows, cfg.num("fd_visible_rows"));
      take(fd_tmp_opt, fset.temperature, cfg.num("fd_temperature"));
      take(fd_dim_opt, fset.pca_dims, cfg.num("fd_pca_dims"));
      if (auto v = cfg.str("fd_extractor"); v && !fd_ext_opt->count()) fset.extractor = *v;
      cfg.finish();
      fset.seed = fd_c.seed;
      const RunDir dir(fd_c.run_dir);
      auto model = fd_m.resolve(dir, fd_c.seed);
      if (untrained) {
        model.ck.params = init_params<float>(model.ck.spec, derive_seed(model.split_seed, 0x1417));
        model.name += ".init";
      }
      const auto [ds, codec] = fd_m.dataset(dir);
      const Split split = split_for(dir, ds, model.split_seed);
      const CompletionFdResult r = run_fd(model.ck.params, codec, ds, split, fset, fd_c.workers);
      const std::string path = fd_out.empty() ? dir.file("fd/" + model.name + ".json") : fd_out;
      nlohmann::json j = r;
      j["model"] = model.name;
      j["settings"] = to_json(fset);
      RunDir::write_text(path, j.dump(2) + "\n");
      nlohmann::json entry = {{"settings", to_json(fset)}, {"output", path}};
      if (sheet > 0) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(sheet), r.generated.size());
        const std::string svg_path = dir.file("fd/" + model.name + ".samples.svg");
        RunDir::write_text(svg_path, plot::contact_sheet_svg(std::span(r.generated.data(), n), 10, 4));
        entry["contact_sheet"] = svg_path;
      }
      dir.record("fd/" + model.name, entry);
      out << "fd " << model.name << ": " << plot::fmt(r.distance, "%.6g") << " (" << r.n_reference
          << " references, " << r.n_generated << " completions, " << fset.extractor << ")\n";
      return 0;
    }

    auto load_fit = [](Common& c, const std::string& registry_path, std::string& m, CLI::Option* m_opt, int& res,
                       CLI::Option* res_opt, std::vector<double> budgets) {
      ConfigReader cfg(c.config);
      c.resolve(cfg);
      if (auto v = cfg.str("metric"); v && !m_opt->count()) m = *v;
      take(res_opt, res, cfg.num("resolution"));
      cfg.finish();
      metric_direction(m);
      const RunDir dir(c.run_dir);
      std::vector<RunRecord> records = RunRegistry(registry_path.empty() ? dir.registry() : registry_path).records();
      require(!records.empty(), "registry is empty");
      if (!budgets.empty())
        std::erase_if(records, [&](const RunRecord& r) {
          return std::none_of(budgets.begin(), budgets.end(), [&](double b) { return std::abs(r.budget / b - 1) < 0.01; });
        });
      return std::pair{dir, fit_registry(records, m, res > 0 ? std::optional<int>(res) : std::nullopt)};
    };

    if (*fit) {
      auto [dir, rep] = load_fit(fit_c, fit_registry_path, fit_metric, fit_metric_opt, fit_res, fit_res_opt, fit_budgets);
      const std::string json_path = dir.file("fit/" + fit_metric + ".json");
      const std::string csv_path = dir.file("fit/" + fit_metric + "_optima.csv");
      RunDir::write_text(json_path, nlohmann::json(rep).dump(2) + "\n");
      RunDir::write_text(csv_path, plot::optima_csv(rep));
      dir.record("fit/" + fit_metric, {{"outputs", {json_path, csv_path}}});
      for (const auto& o : rep.optima)
        out << "C=" << plot::fmt(o.budget) << " N_opt=" << plot::fmt(o.n_opt) << " D_opt=" << plot::fmt(o.d_opt)
            << " value_opt=" << plot::fmt(o.value_opt, "%.5g") << (o.boundary ? " (boundary)" : "")
            << (o.extrapolated ? " (extrapolated)" : "") << "\n";
      out << "a=" << plot::fmt(rep.n_fit.exponent, "%.4f") << " b=" << plot::fmt(rep.d_fit.exponent, "%.4f")
          << " a+b=" << plot::fmt(rep.n_fit.exponent + rep.d_fit.exponent, "%.4f") << "\n";
      return 0;
    }

    if (*plot) {
      auto [dir, rep] =
          load_fit(plot_c, plot_registry_path, plot_metric, plot_metric_opt, plot_res, plot_res_opt, plot_budgets);
      std::vector<std::string> files;
      auto emit = [&](const std::string& name, const std::string& svg) {
        files.push_back(dir.file("plots/" + plot_metric + "_" + name + ".svg"));
        RunDir::write_text(files.back(), svg);
      };
      emit("isoflop", plot::isoflop_svg(rep));
      emit("optimum", plot::optimum_svg(rep));
      emit("ratio", plot::ratio_svg(rep));
      dir.record("plot/" + plot_metric, {{"outputs", files}});
      for (const auto& f : files) out << f << "\n";
      return 0;
    }

    if (*project_cmd) {
      ConfigReader cfg(pj_c.config);
      pj_c.resolve(cfg);
      cfg.finish();
      const RunDir dir(pj_c.run_dir);
      ProjectionModel model;
      int s = pj_res;
      if (pj_a_opt->count()) {
        const auto colon = pj_cal.find(':');
        require(colon != std::string::npos, "--exponent needs --calibrate C:N_opt");
        model = projection_model_calibrated(pj_a, parse_double("calibrate", pj_cal.substr(0, colon)),
                                            parse_double("calibrate", pj_cal.substr(colon + 1)));
        model.metric = pj_metric;
      } else {
        const std::string path = pj_fit.empty() ? dir.file("fit/" + pj_metric + ".json") : pj_fit;
        require(fs::exists(path), "fit report not found: " + path + " (run fit first)");
        const auto j = nlohmann::json::parse(binio::read_file(path));
        model = projection_model_from_fit(j);
        if (s <= 0) s = j.value("s", 0);
      }
      require(s >= 1, "projection needs --resolution");
      const auto rows = project_all(model, pj_budgets, s);
      const std::string csv_path = dir.file("projections/" + model.metric + "_s" + std::to_string(s) + ".csv");
      const std::string json_path = dir.file("projections/" + model.metric + "_s" + std::to_string(s) + ".json");
      RunDir::write_text(csv_path, plot::projections_csv(rows));
      RunDir::write_text(json_path, nlohmann::json(rows).dump(2) + "\n");
      dir.record("project/" + model.metric + "_s" + std::to_string(s), {{"outputs", {csv_path, json_path}}});
      out << plot::projections_csv(rows);
      return 0;
    }

    if (*forecast) {
      out << forecast_text(fc[0], fc[1], fc[2]) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace pixscale::cli
