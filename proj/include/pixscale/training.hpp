#pragma once

// Budgeted training: FLOPs -> token accounting, warmup + cosine schedule,
// Adam, the training loop itself, held-out evaluation, run records and the
// key = value config format.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pixscale/common.hpp"
#include "pixscale/imaging.hpp"
#include "pixscale/model.hpp"

namespace pixscale {

struct TrainConfig {
  int batch_size = 512;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double peak_lr = 1e-3;
  int warmup_steps = 1000;
  double final_lr_ratio = 0.1;
  std::uint64_t seed = 0;
  double eval_fraction = 0.02;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
  bool augment = true;
  AugmentConfig augment_cfg;
  int workers = 1;
  int eval_batch = 64;

  void validate() const {
    require(batch_size >= 1, "batch_size must be at least 1");
    require(warmup_steps >= 1, "warmup_steps must be at least 1");
    require(final_lr_ratio > 0.0 && final_lr_ratio <= 1.0, "final_lr_ratio must be in (0, 1]");
    require(peak_lr >= 0.0, "peak_lr must be non-negative");
    require(eval_fraction > 0.0 && eval_fraction < 1.0, "eval_fraction must be in (0, 1)");
    require(workers >= 1, "workers must be at least 1");
  }
};

// ---------------------------------------------------------------------------
// FLOPs accounting

/// Training FLOPs under the 6ND rule.
constexpr double training_flops(double params, double tokens) { return 6.0 * params * tokens; }

/// Sensitivity variant that adds the attention score/mix term 12 L d T per
/// token. Never used for budgeting.
inline double attention_aware_flops(const ModelSpec& spec, double tokens, int seq_len) {
  return training_flops(static_cast<double>(param_count(spec).body), tokens) +
         12.0 * spec.layers * spec.hidden * static_cast<double>(seq_len) * tokens;
}

struct TokenPlan {
  double raw_tokens = 0;    // floor(C / 6N)
  std::int64_t steps = 0;   // whole optimizer steps
  std::int64_t tokens = 0;  // steps * batch * s^2
};

inline TokenPlan flops_budget_to_tokens(double budget, double params, int batch_size, int resolution) {
  require(budget > 0 && params > 0, "budget and parameter count must be positive");
  require(batch_size >= 1 && resolution >= 1, "batch size and resolution must be positive");
  TokenPlan plan;
  plan.raw_tokens = std::floor(budget / (6.0 * params));
  const double per_step = static_cast<double>(batch_size) * resolution * resolution;
  plan.steps = static_cast<std::int64_t>(std::floor(plan.raw_tokens / per_step));
  if (plan.steps < 1) {
    throw Error("budget below one step: C=" + std::to_string(budget) + " yields " +
                std::to_string(static_cast<long long>(plan.raw_tokens)) + " tokens, one step needs " +
                std::to_string(static_cast<long long>(per_step)));
  }
  plan.tokens = plan.steps * static_cast<std::int64_t>(per_step);
  return plan;
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

/// Linear warmup from 0 to peak, then cosine decay to peak * final_lr_ratio at
/// `total_steps`. When the run is shorter than twice the warmup, the warmup is
/// shortened to half the run so the decay endpoint is still reached.
inline double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  require(step >= 0 && step <= total_steps, "lr step out of range");
  const std::int64_t warmup = std::max<std::int64_t>(1, std::min<std::int64_t>(cfg.warmup_steps, total_steps / 2));
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(total_steps - warmup);
  const double progress = span > 0 ? static_cast<double>(step - warmup) / span : 1.0;
  const double r = cfg.final_lr_ratio;
  return cfg.peak_lr * (r + (1.0 - r) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

struct AdamState {
  std::vector<float> m, v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update.
inline void adam_step(std::vector<float>& w, const std::vector<float>& g, AdamState& st, double lr,
                      const TrainConfig& cfg) {
  if (st.m.size() != w.size()) {
    st.m.assign(w.size(), 0.0f);
    st.v.assign(w.size(), 0.0f);
    st.t = 0;
  }
  ++st.t;
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  const auto step = static_cast<float>(lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(cfg.adam_eps);
  for (std::size_t i = 0; i < w.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0f - b1) * g[i];
    st.v[i] = b2 * st.v[i] + (1.0f - b2) * g[i] * g[i];
    w[i] -= step * st.m[i] / (std::sqrt(st.v[i] * inv_c2) + eps);
  }
}

/// Scales `g` in place so its global L2 norm is at most `max_norm`; returns
/// the pre-clip norm.
inline double clip_global_norm(std::vector<float>& g, double max_norm) {
  double sq = 0.0;
  for (float x : g) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (float& x : g) x *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
  std::string key;
  ModelSpec spec;
  std::int64_t params = 0;  // body count N
  double budget = 0;        // requested C
  double flops = 0;         // 6 N D actually spent
  std::int64_t tokens = 0;  // D
  std::int64_t steps = 0;
  int batch_size = 0;
  int resolution = 0;
  double final_eval_loss = 0;
  std::map<std::string, double> metrics;
  double wall_seconds = 0;
  std::uint64_t seed = 0;
};

/// Content key of a run: hash of (spec, budget, seed, resolution).
inline std::string run_key(const ModelSpec& spec, double budget, std::uint64_t seed, int resolution) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", budget);
  const std::string canon = spec.to_string() + "|C" + buf + "|seed" + std::to_string(seed) + "|s" +
                            std::to_string(resolution);
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

inline void to_json(nlohmann::json& j, const RunRecord& r) {
  j = nlohmann::json{{"key", r.key},
                     {"spec", r.spec},
                     {"N", r.params},
                     {"C", r.budget},
                     {"flops", r.flops},
                     {"D", r.tokens},
                     {"steps", r.steps},
                     {"batch_size", r.batch_size},
                     {"s", r.resolution},
                     {"final_eval_loss", r.final_eval_loss},
                     {"metrics", r.metrics},
                     {"wall_seconds", r.wall_seconds},
                     {"seed", r.seed}};
}

inline void from_json(const nlohmann::json& j, RunRecord& r) {
  r.key = j.at("key").get<std::string>();
  r.spec = j.at("spec").get<ModelSpec>();
  r.params = j.at("N").get<std::int64_t>();
  r.budget = j.at("C").get<double>();
  r.flops = j.value("flops", 6.0 * static_cast<double>(r.params) * j.at("D").get<double>());
  r.tokens = j.at("D").get<std::int64_t>();
  r.steps = j.value("steps", std::int64_t{0});
  r.batch_size = j.value("batch_size", 0);
  r.resolution = j.at("s").get<int>();
  r.final_eval_loss = j.at("final_eval_loss").get<double>();
  r.metrics = j.value("metrics", std::map<std::string, double>{});
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.seed = j.value("seed", std::uint64_t{0});
}

// ---------------------------------------------------------------------------
// Data split and evaluation

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Seeded held-out split; at least one image on each side.
inline Split split_dataset(std::size_t n, double heldout_fraction, std::uint64_t seed) {
  require(n >= 2, "dataset needs at least two images to split");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5e1175));
  rng.shuffle(idx.begin(), idx.end());
  auto k = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n - 1);
  Split s;
  s.heldout.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  std::sort(s.heldout.begin(), s.heldout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

/// Mean per-token NLL over `sequences` (no augmentation). Weights are widened
/// to 64-bit for evaluation, so the value does not depend on `eval_batch`
/// beyond double rounding.
inline double eval_loss(const Params<float>& params, const std::vector<PixelSequence>& sequences, int eval_batch = 64,
                        int workers = 1) {
  require(!sequences.empty(), "empty held-out set");
  require(eval_batch >= 1, "eval batch must be positive");
  const Params<double> p = params.cast<double>();
  const int length = static_cast<int>(sequences.front().tokens.size());
  for (const auto& s : sequences) {
    require(static_cast<int>(s.tokens.size()) == length, "held-out sequences must share a length");
    require(s.vocab == p.spec().vocab, "held-out vocabulary does not match model");
  }
  const std::size_t chunks = (sequences.size() + eval_batch - 1) / eval_batch;
  std::vector<double> per_seq(sequences.size(), 0.0);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * eval_batch;
    const std::size_t end = std::min(sequences.size(), begin + eval_batch);
    const int n = static_cast<int>(end - begin);
    std::vector<int> tokens;
    tokens.reserve(static_cast<std::size_t>(n) * length);
    for (std::size_t i = begin; i < end; ++i)
      tokens.insert(tokens.end(), sequences[i].tokens.begin(), sequences[i].tokens.end());
    Activations<double> act;
    forward_batch(p, tokens, n, length, act);
    for (int i = 0; i < n; ++i) {
      const auto rows = act.logits.middleRows(static_cast<Eigen::Index>(i) * length, length);
      per_seq[begin + i] = nll_from_logits(rows, std::span<const int>(sequences[begin + i].tokens));
    }
  });
  double total = 0.0;
  for (double v : per_seq) total += v;
  return total / static_cast<double>(per_seq.size());
}

inline std::vector<PixelSequence> encode_all(const Dataset& ds, const std::vector<std::size_t>& idx,
                                             const PaletteCodec& codec) {
  std::vector<PixelSequence> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(encode(ds.images[i], codec));
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  RunRecord record;
  Checkpoint checkpoint;
  std::vector<float> train_loss;  // per step
};

using StepCallback = std::function<void(std::int64_t step, std::int64_t total, double loss, double lr)>;

/// Trains `spec` for exactly the number of steps the budget affords under 6ND.
/// Batches are drawn with replacement from the training split and augmented
/// per image; the held-out split is scored at the end.
inline TrainResult train(const ModelSpec& spec, const Dataset& dataset, const PaletteCodec& codec, double budget,
                         const TrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  spec.validate();
  require(!dataset.images.empty(), "dataset is empty");
  const int s = dataset.resolution;
  const int length = s * s;
  require(spec.vocab == codec.vocab, "model vocabulary does not match codec K");
  require(spec.max_seq >= length, "model max_seq is shorter than s^2");

  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t n_body = param_count(spec).body;
  const TokenPlan plan = flops_budget_to_tokens(budget, static_cast<double>(n_body), cfg.batch_size, s);
  const Split split = split_dataset(dataset.size(), cfg.eval_fraction, cfg.seed);

  Params<float> params = init_params<float>(spec, derive_seed(cfg.seed, 0x1417));
  Params<float> grad(spec);
  AdamState adam;
  Activations<float> act;
  std::vector<int> tokens(static_cast<std::size_t>(cfg.batch_size) * length);
  std::vector<float> losses;
  losses.reserve(static_cast<std::size_t>(plan.steps));

  for (std::int64_t step = 0; step < plan.steps; ++step) {
    Rng pick(derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(step)));
    std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch_size));
    for (auto& b : batch) b = split.train[pick.below(split.train.size())];
    parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
      const ImageGrid& src = dataset.images[batch[i]];
      const std::uint64_t aug_seed = derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(step) * cfg.batch_size + i);
      const PixelSequence seq = encode(cfg.augment ? augment(src, aug_seed, cfg.augment_cfg) : src, codec);
      std::copy(seq.tokens.begin(), seq.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i * length));
    });

    grad.set_zero();
    forward_batch(params, tokens, cfg.batch_size, length, act);
    const double loss = backward_batch(params, tokens, act, grad);
    const double lr = lr_at(step + 1, plan.steps, cfg);
    if (!std::isfinite(loss)) {
      throw Error("non-finite loss at step " + std::to_string(step) + " (lr=" + std::to_string(lr) +
                  ", loss=" + std::to_string(loss) + ")");
    }
    clip_global_norm(grad.values(), cfg.clip_norm);
    adam_step(params.values(), grad.values(), adam, lr, cfg);
    losses.push_back(static_cast<float>(loss));
    if (on_step) on_step(step, plan.steps, loss, lr);
  }

  TrainResult out;
  out.train_loss = std::move(losses);
  out.record.final_eval_loss =
      eval_loss(params, encode_all(dataset, split.heldout, codec), cfg.eval_batch, cfg.workers);
  out.record.key = run_key(spec, budget, cfg.seed, s);
  out.record.spec = spec;
  out.record.params = n_body;
  out.record.budget = budget;
  out.record.tokens = plan.tokens;
  out.record.flops = training_flops(static_cast<double>(n_body), static_cast<double>(plan.tokens));
  out.record.steps = plan.steps;
  out.record.batch_size = cfg.batch_size;
  out.record.resolution = s;
  out.record.seed = cfg.seed;
  out.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.checkpoint = Checkpoint{spec, static_cast<std::uint64_t>(plan.steps), std::move(params)};
  return out;
}

// ---------------------------------------------------------------------------
// key = value config files

using ConfigMap = std::map<std::string, std::string>;

/// One `key = value` per line; `#` starts a comment; blank lines ignored.
inline ConfigMap parse_config(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline ConfigMap load_config(const std::string& path) { return parse_config(binio::read_file(path)); }

/// Applies the training keys found in `cfg`; returns the keys it consumed.
inline std::vector<std::string> apply_train_config(const ConfigMap& cfg, TrainConfig& tc) {
  std::vector<std::string> used;
  auto num = [&](const char* key, auto& field) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) return;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      require(pos == it->second.size(), "");
      field = static_cast<std::remove_reference_t<decltype(field)>>(v);
    } catch (const std::exception&) {
      throw Error(std::string("config key ") + key + ": not a number: " + it->second);
    }
    used.emplace_back(key);
  };
  auto flag = [&](const char* key, bool& field) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) return;
    require(it->second == "true" || it->second == "false", std::string("config key ") + key + ": expected true or false");
    field = it->second == "true";
    used.emplace_back(key);
  };
  num("batch_size", tc.batch_size);
  num("beta1", tc.beta1);
  num("beta2", tc.beta2);
  num("adam_eps", tc.adam_eps);
  num("peak_lr", tc.peak_lr);
  num("warmup_steps", tc.warmup_steps);
  num("final_lr_ratio", tc.final_lr_ratio);
  if (const auto it = cfg.find("seed"); it != cfg.end()) {
    try {
      std::size_t pos = 0;
      tc.seed = std::stoull(it->second, &pos);
      require(pos == it->second.size(), "");
    } catch (const std::exception&) {
      throw Error("config key seed: not an unsigned integer: " + it->second);
    }
    used.emplace_back("seed");
  }
  num("eval_fraction", tc.eval_fraction);
  num("clip_norm", tc.clip_norm);
  num("workers", tc.workers);
  num("eval_batch", tc.eval_batch);
  num("crop_min_area", tc.augment_cfg.min_area);
  num("flip_probability", tc.augment_cfg.flip_probability);
  flag("augment", tc.augment);
  flag("random_crop", tc.augment_cfg.random_crop);
  tc.validate();
  return used;
}

}  // namespace pixscale
