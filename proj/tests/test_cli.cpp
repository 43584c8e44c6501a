#include <gtest/gtest.h>

#include <sstream>

#include "pixscale/cli.hpp"

using namespace pixscale;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pixscale_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SweepPlan tiny_plan(std::uint64_t seed = 3) {
  SweepPlan p;
  p.profile = "tiny";
  p.resolution = 4;
  p.budgets = {2e7, 4e7};
  for (double c : p.budgets)
    for (int d : {8, 12, 16}) {
      const ModelSpec spec{1, d, 2 * d, 2, 256, 16};
      p.cells.push_back({cell_label(spec), spec, c});
    }
  p.train.batch_size = 8;
  p.train.warmup_steps = 5;
  p.train.seed = seed;
  p.train.eval_fraction = 0.1;
  p.synthetic_images = 200;
  return p;
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int rc = cli::run(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

}  // namespace

TEST(Registry, RoundTripIsExact) {
  const fs::path dir = fresh_dir("registry_rt");
  const std::string path = (dir / "r.jsonl").string();
  SyntheticTruth truth;
  const std::vector<double> budgets = {1e18, 3.3e18};
  const std::vector<double> ladder = {-0.4, 0, 0.4};
  auto recs = synthetic_records(truth, budgets, ladder, 7);
  recs[0].metrics[metric::probe_accuracy] = 0.1 + 0.2;  // not exactly representable in short decimal
  recs[1].final_eval_loss = 1.0 / 3.0;
  {
    RunRegistry reg(path);
    for (const auto& r : recs) reg.append(r);
  }
  const RunRegistry back(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(nlohmann::json(back.records()[i]), nlohmann::json(recs[i]));
    EXPECT_EQ(back.records()[i].final_eval_loss, recs[i].final_eval_loss);
  }
  EXPECT_EQ(back.records()[0].metrics.at(metric::probe_accuracy), 0.1 + 0.2);
  // Re-serializing reproduces the file byte for byte.
  std::string again;
  for (const auto& r : back.records()) again += RunRegistry::format(r);
  EXPECT_EQ(again, binio::read_file(path));
}

TEST(Registry, RejectsDuplicatesAndMalformedLines) {
  RunRegistry reg;
  RunRecord r;
  r.key = "k1";
  reg.append(r);
  EXPECT_THROW(reg.append(r), Error);
  const std::string line = RunRegistry::format(r);
  try {
    RunRegistry::parse(line + line, "reg.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "reg.jsonl:2: duplicate key k1");
  }
  try {
    RunRegistry::parse(line + "{not json\n", "reg.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("reg.jsonl:2: invalid record", 0), 0u);
  }
}

TEST(Plans, ProfilesValidate) {
  const SweepPlan desk = desk_plan(8, 1);
  desk.validate();
  EXPECT_EQ(desk.budgets.size(), 3u);
  EXPECT_EQ(desk.cells.size(), 15u);
  const SweepPlan large = paper32_plan();
  large.validate();
  EXPECT_EQ(large.budgets.size(), 4u);
  EXPECT_EQ(large.cells.size(), 28u);
  EXPECT_TRUE(large.needs_compute_flag);
  SweepPlan bad = desk;
  std::swap(bad.budgets[0], bad.budgets[1]);
  EXPECT_THROW(bad.validate(), Error);
  SweepPlan dup = desk;
  dup.cells.push_back(dup.cells.front());
  EXPECT_THROW(dup.validate(), Error);
}

TEST(Sweep, TwoBudgetsThreeModelsGiveSixEntriesAndResumeIsANoOp) {
  const fs::path d = fresh_dir("sweep6");
  const SweepPlan plan = tiny_plan();
  const RunDir dir(d.string());
  auto [ds, codec] = sweep_dataset(plan, dir);
  RunRegistry reg(dir.registry());
  const SweepSummary s = run_sweep(plan, ds, codec, reg, dir);
  EXPECT_EQ(s.trained, 6u);
  EXPECT_EQ(s.failed, 0u);
  EXPECT_EQ(RunRegistry(dir.registry()).size(), 6u);
  for (const auto& r : reg.records()) EXPECT_TRUE(fs::exists(dir.checkpoint(r.key)));
  const std::string before = binio::read_file(dir.registry());
  RunRegistry again(dir.registry());
  const SweepSummary s2 = run_sweep(plan, ds, codec, again, dir);
  EXPECT_EQ(s2.trained, 0u);
  EXPECT_EQ(s2.skipped, 6u);
  EXPECT_EQ(binio::read_file(dir.registry()), before);
}

TEST(Sweep, InterruptedAfterThreeCellsResumesWithExactlyThreeMore) {
  const fs::path d = fresh_dir("sweep_resume");
  const SweepPlan plan = tiny_plan();
  const RunDir dir(d.string());
  auto [ds, codec] = sweep_dataset(plan, dir);
  {
    RunRegistry reg(dir.registry());
    SweepOptions opt;
    opt.max_cells = 3;
    const SweepSummary s = run_sweep(plan, ds, codec, reg, dir, opt);
    EXPECT_EQ(s.trained, 3u);
    EXPECT_EQ(s.pending, 3u);
  }
  RunRegistry reg(dir.registry());
  EXPECT_EQ(reg.size(), 3u);
  const SweepSummary s = run_sweep(plan, ds, codec, reg, dir);
  EXPECT_EQ(s.trained, 3u);
  EXPECT_EQ(s.skipped, 3u);
  EXPECT_EQ(reg.size(), 6u);

  // Same records as an uninterrupted sweep.
  const fs::path d2 = fresh_dir("sweep_full");
  const RunDir dir2(d2.string());
  RunRegistry full(dir2.registry());
  run_sweep(plan, ds, codec, full, dir2);
  EXPECT_EQ(binio::read_file(dir2.registry()), binio::read_file(dir.registry()));
}

TEST(Sweep, FailuresAreRecordedAndTheSweepContinues) {
  const fs::path d = fresh_dir("sweep_fail");
  SweepPlan plan = tiny_plan();
  plan.budgets.insert(plan.budgets.begin(), 1e3);  // below one optimizer step for any model
  const ModelSpec spec{1, 8, 16, 2, 256, 16};
  plan.cells.insert(plan.cells.begin(), {cell_label(spec), spec, 1e3});
  const RunDir dir(d.string());
  auto [ds, codec] = sweep_dataset(plan, dir);
  RunRegistry reg(dir.registry());
  const SweepSummary s = run_sweep(plan, ds, codec, reg, dir);
  EXPECT_EQ(s.failed, 1u);
  EXPECT_EQ(s.trained, 6u);
  const auto fail = nlohmann::json::parse(binio::read_file(dir.failures()));
  EXPECT_EQ(fail.at("key"), run_key(spec, 1e3, plan.train.seed, 4));
  EXPECT_FALSE(fail.at("error").get<std::string>().empty());
}

TEST(Sweep, ParallelCellsMatchSequentialBytes) {
  const SweepPlan plan = tiny_plan(9);
  const fs::path a = fresh_dir("seq"), b = fresh_dir("par");
  const RunDir da(a.string()), db(b.string());
  auto [ds, codec] = sweep_dataset(plan, da);
  RunRegistry ra(da.registry()), rb(db.registry());
  run_sweep(plan, ds, codec, ra, da);
  SweepOptions opt;
  opt.parallel_cells = 4;
  run_sweep(plan, ds, codec, rb, db, opt);
  EXPECT_EQ(binio::read_file(da.registry()), binio::read_file(db.registry()));
  for (const auto& r : ra.records())
    EXPECT_EQ(binio::read_file(da.checkpoint(r.key)), binio::read_file(db.checkpoint(r.key)));
}

TEST(Sweep, MetricsAreEvaluatedPerCell) {
  const fs::path d = fresh_dir("sweep_metrics");
  SweepPlan plan = tiny_plan();
  restrict_budgets(plan, {2e7});
  plan.metrics = {metric::eval_loss, metric::probe_accuracy, metric::frechet_distance};
  plan.probe.epochs = 3;
  plan.probe.images = 100;
  plan.probe.lrs = {0.1};
  plan.fd.references = 10;
  plan.fd.pca_dims = 4;
  plan.fd.pca_fit_images = 50;
  const RunDir dir(d.string());
  auto [ds, codec] = sweep_dataset(plan, dir);
  RunRegistry reg(dir.registry());
  EXPECT_EQ(run_sweep(plan, ds, codec, reg, dir).trained, 3u);
  for (const auto& r : reg.records()) {
    EXPECT_TRUE(r.metrics.count(metric::probe_accuracy));
    EXPECT_GE(r.metrics.at(metric::frechet_distance), 0.0);
  }
}

TEST(Prepare, SizeArithmeticAndByteIdenticalReruns) {
  const fs::path d = fresh_dir("prepare");
  write_image_directory((d / "raw").string(), synthetic_dataset(100, 64, 5));
  PrepareConfig pc;
  pc.data_dir = (d / "raw").string();
  pc.resolution = 8;
  pc.out_file = (d / "out" / "data.pxs").string();
  const PrepareResult r = prepare_dataset(pc);
  EXPECT_EQ(r.count, 100u);
  // 4-byte magic + three u32 fields, 100 * 8 * 8 pixel bytes, 100 u16 labels.
  EXPECT_EQ(fs::file_size(r.dataset_path), 16u + 100u * 64u + 200u);
  const std::string b1 = binio::read_file(r.dataset_path), c1 = binio::read_file(r.codec_path),
                    m1 = binio::read_file(r.manifest_path);
  prepare_dataset(pc);
  EXPECT_EQ(binio::read_file(r.dataset_path), b1);
  EXPECT_EQ(binio::read_file(r.codec_path), c1);
  EXPECT_EQ(binio::read_file(r.manifest_path), m1);
  EXPECT_EQ(load_dataset(r.dataset_path).resolution, 8);
}

TEST(Prepare, CorruptImageNamesThePath) {
  const fs::path d = fresh_dir("prepare_bad");
  write_image_directory((d / "raw").string(), synthetic_dataset(3, 8, 5));
  binio::write_file((d / "raw" / "img000001.pgm").string(), "P5\n8 8\n255\nxx");
  PrepareConfig pc;
  pc.data_dir = (d / "raw").string();
  pc.out_file = (d / "out.pxs").string();
  try {
    prepare_dataset(pc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("img000001.pgm"), std::string::npos) << e.what();
  }
  pc.data_dir = (d / "missing").string();
  EXPECT_THROW(prepare_dataset(pc), Error);
}

TEST(Cli, ForecastPrintsYears) {
  std::string out;
  EXPECT_EQ(run_cli({"forecast", "1e20", "1e24", "10"}, &out), 0);
  EXPECT_EQ(out, "4.0 years\n");
}

TEST(Cli, ErrorsAreOneLineAndNonzero) {
  std::string out, err;
  EXPECT_NE(run_cli({"forecast", "1e20", "1e24", "0.5"}, &out, &err), 0);
  EXPECT_EQ(err, "error: annual growth factor must exceed 1\n");
  EXPECT_NE(run_cli({"sweep", "--profile", "nope", "--run-dir", fresh_dir("bad").string()}, &out, &err), 0);
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);
  EXPECT_NE(run_cli({"fit", "--run-dir", fresh_dir("empty").string()}, &out, &err), 0);
  EXPECT_EQ(err.rfind("error: ", 0), 0u);
  EXPECT_NE(run_cli({"sweep", "--profile", "paper32", "--run-dir", fresh_dir("p32").string()}, &out, &err), 0);
  EXPECT_NE(err.find("--i-have-the-compute"), std::string::npos);
}

TEST(Cli, FlagsOverrideConfigFile) {
  const fs::path d = fresh_dir("cfg");
  binio::write_file((d / "c.cfg").string(), "# desk settings\nseed = 11\npeak_lr = 0.002\nbudgets = 3e11\n");
  const std::string plan_a = (d / "a.json").string(), plan_b = (d / "b.json").string();
  ASSERT_EQ(run_cli({"sweep", "--config", (d / "c.cfg").string(), "--emit-plan", plan_a}), 0);
  ASSERT_EQ(run_cli({"sweep", "--config", (d / "c.cfg").string(), "--seed", "5", "--budget", "1e12", "--emit-plan",
                     plan_b}),
            0);
  const auto a = nlohmann::json::parse(binio::read_file(plan_a));
  const auto b = nlohmann::json::parse(binio::read_file(plan_b));
  EXPECT_EQ(a["train"]["seed"], 11);
  EXPECT_EQ(a["train"]["peak_lr"], 0.002);
  EXPECT_EQ(a["budgets"], nlohmann::json::array({3e11}));
  EXPECT_EQ(b["train"]["seed"], 5);
  EXPECT_EQ(b["train"]["peak_lr"], 0.002);
  EXPECT_EQ(b["budgets"], nlohmann::json::array({1e12}));
  binio::write_file((d / "bad.cfg").string(), "no_such_key = 1\n");
  std::string err;
  EXPECT_NE(run_cli({"sweep", "--config", (d / "bad.cfg").string(), "--emit-plan", plan_a}, nullptr, &err), 0);
  EXPECT_EQ(err, "error: unknown config key no_such_key\n");
}

TEST(Cli, ProjectFromPublishedCalibrationReproducesRows) {
  // 32x32 accuracy rows: calibrate at 1e22 and predict 1e23 and 1e24.
  const fs::path d = fresh_dir("project");
  std::string out;
  ASSERT_EQ(run_cli({"project", "--run-dir", d.string(), "--exponent", "0.56", "--calibrate", "1e22:4.02e9",
                     "--budget", "1e23", "--budget", "1e24", "--resolution", "32"},
                    &out),
            0);
  const auto rows = nlohmann::json::parse(binio::read_file((d / "projections" / "eval_loss_s32.json").string()));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(rows[0]["N_opt"].get<double>() / 14.71e9, 1.0, 0.10);
  EXPECT_NEAR(rows[1]["N_opt"].get<double>() / 53.8e9, 1.0, 0.10);
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
}

TEST(Cli, FitOnSyntheticRegistryProjectsTenfold) {
  const fs::path d = fresh_dir("fit");
  SyntheticTruth truth;
  truth.noise = 0.0;
  truth.center_jitter = 0.0;
  const std::vector<double> budgets = {1e18, 3e18, 1e19, 3e19};
  const std::vector<double> ladder = {-0.6, -0.4, -0.2, 0, 0.2, 0.4, 0.6};
  RunRegistry reg((d / "registry.jsonl").string());
  for (const auto& r : synthetic_records(truth, budgets, ladder, 1)) reg.append(r);
  std::string out;
  ASSERT_EQ(run_cli({"fit", "--run-dir", d.string()}, &out), 0) << out;
  ASSERT_EQ(run_cli({"project", "--run-dir", d.string(), "--budget", "3e20"}, &out), 0) << out;
  ASSERT_EQ(run_cli({"plot", "--run-dir", d.string()}, &out), 0) << out;
  const auto rows = nlohmann::json::parse(binio::read_file((d / "projections" / "eval_loss_s32.json").string()));
  const double truth_n = std::pow(10.0, truth.n_coef_log10 + truth.a * std::log10(3e20));
  EXPECT_NEAR(rows[0]["N_opt"].get<double>() / truth_n, 1.0, 0.05);
  for (const char* f : {"isoflop", "optimum", "ratio"})
    EXPECT_TRUE(fs::exists(d / "plots" / (std::string("eval_loss_") + f + ".svg")));
  // Fitting twice gives the same report bytes.
  const std::string fit1 = binio::read_file((d / "fit" / "eval_loss.json").string());
  ASSERT_EQ(run_cli({"fit", "--run-dir", d.string()}, &out), 0);
  EXPECT_EQ(binio::read_file((d / "fit" / "eval_loss.json").string()), fit1);
  // Too few runs per budget.
  RunRegistry thin((d / "thin.jsonl").string());
  const std::vector<double> two = {-0.2, 0.2};
  for (const auto& r : synthetic_records(truth, budgets, two, 1)) thin.append(r);
  std::string err;
  EXPECT_NE(run_cli({"fit", "--run-dir", d.string(), "--registry", (d / "thin.jsonl").string()}, &out, &err), 0);
  EXPECT_NE(err.find("insufficient data"), std::string::npos) << err;
}

TEST(Cli, EndToEndProbeAndFdOnATinySweep) {
  const fs::path d = fresh_dir("e2e");
  std::string out, err;
  ASSERT_EQ(run_cli({"prepare", "--run-dir", d.string(), "--synthetic", "300", "--resolution", "4"}, &out, &err), 0)
      << err;
  const SweepPlan plan = tiny_plan(0);
  const RunDir dir(d.string());
  auto [ds, codec] = sweep_dataset(plan, dir);
  RunRegistry reg(dir.registry());
  run_sweep(plan, ds, codec, reg, dir);
  ASSERT_EQ(run_cli({"probe", "--run-dir", d.string(), "--epochs", "3", "--images", "200", "--lr", "0.1"}, &out, &err),
            0)
      << err;
  EXPECT_NE(out.find("best accuracy"), std::string::npos);
  ASSERT_EQ(run_cli({"fd", "--run-dir", d.string(), "--references", "20", "--pca-dims", "4", "--contact-sheet", "5"},
                    &out, &err),
            0)
      << err;
  ASSERT_EQ(run_cli({"fd", "--run-dir", d.string(), "--references", "20", "--pca-dims", "4", "--untrained"}, &out,
                    &err),
            0)
      << err;
  const std::string key = best_record(reg.records()).key;
  EXPECT_TRUE(fs::exists(d / "fd" / (key + ".json")));
  EXPECT_TRUE(fs::exists(d / "fd" / (key + ".init.json")));
  EXPECT_TRUE(fs::exists(d / "fd" / (key + ".samples.svg")));
  const auto manifest = nlohmann::json::parse(binio::read_file((d / "manifest.json").string()));
  EXPECT_TRUE(manifest.contains("probe/" + key));
}
