#include "chansr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "chansr/optim.hpp"

namespace chansr {

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["patch"] = patch;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["lr_halve_every"] = lr_halve_every;
  j["seed"] = seed;
  j["deterministic"] = deterministic;
  j["scale"] = scale;
  j["augment"] = augment;
  j["steps_per_epoch"] = steps_per_epoch;
  j["val_frames"] = val_frames;
  j["model"] = nlohmann::json::parse(model.to_json());
  j["weights"] = {{"regression", weights.regression},
                  {"ce_weight", weights.ce_weight},
                  {"stde_weight", weights.stde_weight}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.patch = j.value("patch", c.patch);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.lr_halve_every = j.value("lr_halve_every", c.lr_halve_every);
  c.seed = j.value("seed", c.seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.scale = j.value("scale", c.scale);
  c.augment = j.value("augment", c.augment);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.val_frames = j.value("val_frames", c.val_frames);
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    c.weights.regression = w.value("regression", c.weights.regression);
    c.weights.ce_weight = w.value("ce_weight", c.weights.ce_weight);
    c.weights.stde_weight = w.value("stde_weight", c.weights.stde_weight);
  }
  return c;
}

void apply_ablation_preset(TrainConfig& config, const std::string& preset) {
  if (preset == "stl") {
    config.model.use_residual = false;
    config.model.use_attention = false;
    config.model.back_projection = false;
    config.augment = false;
  } else if (preset == "res") {
    config.model.use_residual = true;
    config.model.back_projection = true;
    config.model.use_attention = false;
    config.augment = false;
  } else if (preset == "da") {
    config.model.use_residual = true;
    config.model.back_projection = true;
    config.model.use_attention = false;
    config.augment = true;
  } else if (preset == "att") {
    config.model.use_residual = true;
    config.model.back_projection = true;
    config.model.use_attention = true;
    config.augment = true;
  } else {
    throw std::invalid_argument("unknown ablation preset: " + preset);
  }
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,val_mae_PL,val_mae_Rp,val_mae_DS,val_mae_phi,"
        "val_mae_theta,val_acc_LOS,lr,seconds\n";
  for (const EpochStats& e : epochs) {
    os << e.epoch << "," << e.train_loss;
    for (double v : e.val_mae) os << "," << v;
    os << "," << e.val_los_accuracy << "," << e.lr << "," << e.seconds << "\n";
  }
  return os.str();
}

Model clone_model(const Model& model) {
  Model copy = build_model(model.config);
  for (const auto& [name, t] : model.parameters())
    std::copy_n(t.data(), t.size(), copy.param(name).data());
  return copy;
}

namespace {

std::vector<float> crop(const std::vector<float>& raster, int grid, int x0,
                        int y0, int size) {
  std::vector<float> out(static_cast<size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    std::copy_n(raster.data() + static_cast<size_t>(y0 + y) * grid + x0, size,
                out.data() + static_cast<size_t>(y) * size);
  return out;
}

constexpr std::array<Characteristic, 5> kRegressionTargets = {
    Characteristic::PL, Characteristic::RP, Characteristic::DS,
    Characteristic::PHI, Characteristic::THETA};

struct Batch {
  Tensor input;  // [B,7,P/s,P/s]
  TargetBatch targets;
};

// One batch element: a (sample, dihedral variant, HR crop) triple.
struct PatchRef {
  size_t sample;
  int variant;
  int x0, y0;
};

Batch make_batch(const Dataset& dataset, const std::vector<PatchRef>& refs,
                 int patch, int scale) {
  const int B = static_cast<int>(refs.size());
  const int lr = patch / scale;
  const auto& specs = default_specs();

  Batch batch;
  batch.input = Tensor::zeros({B, kNumCharacteristics, lr, lr});
  for (int t = 0; t < 5; ++t) {
    batch.targets.regression[t] = Tensor::zeros({B, 1, patch, patch});
    batch.targets.masks[t] = Tensor::zeros({B, 1, patch, patch});
  }
  batch.targets.los_labels = Tensor::zeros({B, 1, patch, patch});
  batch.targets.los_mask = Tensor::zeros({B, 1, patch, patch});

  const int64_t hr_plane = static_cast<int64_t>(patch) * patch;
  const int64_t lr_plane = static_cast<int64_t>(lr) * lr;

  for (int b = 0; b < B; ++b) {
    const PatchRef& ref = refs[b];
    const SceneSample sample =
        ref.variant == 0 ? dataset.samples[ref.sample]
                         : augment_one(dataset.samples[ref.sample], ref.variant);
    for (int c = 0; c < kNumCharacteristics; ++c) {
      const auto& spec = specs[c];
      const std::vector<float> hr_crop =
          crop(sample.rasters[c], sample.grid_size, ref.x0, ref.y0, patch);
      const std::vector<float> lr_crop = downsample(hr_crop, patch, scale, spec);
      const std::vector<double> lr_norm = normalize_map(lr_crop, spec);
      std::copy_n(lr_norm.data(), lr_plane,
                  batch.input.data() +
                      (static_cast<int64_t>(b) * kNumCharacteristics + c) *
                          lr_plane);

      const Characteristic kind = spec.kind;
      if (kind == Characteristic::H) continue;
      const std::vector<double> hr_norm = normalize_map(hr_crop, spec);
      double* target;
      double* mask;
      if (kind == Characteristic::LOS) {
        target = batch.targets.los_labels.data() + b * hr_plane;
        mask = batch.targets.los_mask.data() + b * hr_plane;
      } else {
        Tensor& tt = batch.targets.target_of(kind);
        Tensor& tm = batch.targets.mask_of(kind);
        target = tt.data() + b * hr_plane;
        mask = tm.data() + b * hr_plane;
      }
      for (int64_t i = 0; i < hr_plane; ++i) {
        const bool valid = hr_norm[i] >= kSentinelThreshold;
        target[i] = valid ? hr_norm[i] : 0.0;
        mask[i] = valid ? 1.0 : 0.0;
      }
    }
  }
  return batch;
}

struct ValStats {
  std::array<double, 5> mae = {};
  double los_accuracy = 0.0;
};

ValStats validation_stats(const Model& model, const Dataset& dataset,
                          const std::vector<size_t>& val_idx, int scale,
                          int max_frames) {
  std::array<ErrorAccumulator, 5> acc;
  int64_t los_correct = 0, los_total = 0;
  const auto& specs = default_specs();
  const size_t n = max_frames > 0
                       ? std::min<size_t>(val_idx.size(), max_frames)
                       : val_idx.size();
  for (size_t vi = 0; vi < n; ++vi) {
    const SceneSample& sample = dataset.samples[val_idx[vi]];
    const Tensor input = build_lr_input(sample, scale);
    const Prediction pred = forward(model, input);
    const int64_t plane =
        static_cast<int64_t>(sample.grid_size) * sample.grid_size;
    for (int t = 0; t < 5; ++t) {
      const Characteristic c = kRegressionTargets[t];
      const auto& spec = specs[static_cast<int>(c)];
      const auto& gt = sample.raster(c);
      const double* p = pred.regression(c).data();
      for (int64_t i = 0; i < plane; ++i) {
        if (is_sentinel_native(gt[i], spec)) continue;
        acc[t].add(spec.denormalize(p[i]), gt[i]);
      }
    }
    const auto& gt_los = sample.raster(Characteristic::LOS);
    const auto& los_spec = specs[static_cast<int>(Characteristic::LOS)];
    const double* l0 = pred.los_logits.data();
    const double* l1 = l0 + plane;
    for (int64_t i = 0; i < plane; ++i) {
      if (is_sentinel_native(gt_los[i], los_spec)) continue;
      ++los_total;
      if ((l1[i] > l0[i]) == (gt_los[i] > 0.5f)) ++los_correct;
    }
  }
  ValStats stats;
  for (int t = 0; t < 5; ++t)
    stats.mae[t] = acc[t].count ? acc[t].sum_abs / acc[t].count : 0.0;
  stats.los_accuracy =
      los_total ? static_cast<double>(los_correct) / los_total : 0.0;
  return stats;
}

}  // namespace

Tensor build_lr_input(const SceneSample& sample, int scale) {
  const int g = sample.grid_size;
  const int lr = g / scale;
  const int64_t plane = static_cast<int64_t>(lr) * lr;
  Tensor input = Tensor::zeros({1, kNumCharacteristics, lr, lr});
  const auto& specs = default_specs();
  for (int c = 0; c < kNumCharacteristics; ++c) {
    const std::vector<float> lr_map =
        downsample(sample.rasters[c], g, scale, specs[c]);
    const std::vector<double> norm = normalize_map(lr_map, specs[c]);
    std::copy_n(norm.data(), plane, input.data() + c * plane);
  }
  return input;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset) {
  if (dataset.split.empty())
    throw std::invalid_argument("train: dataset has no split assignment");
  const std::vector<size_t> train_idx = dataset.indices_of(Split::Train);
  const std::vector<size_t> val_idx = dataset.indices_of(Split::Val);
  if (train_idx.empty() || val_idx.empty())
    throw std::invalid_argument("train: empty train or val split");

  const int grid = static_cast<int>(dataset.grid_size);
  const int patch = std::min(config.patch, grid);
  if (patch % config.scale != 0)
    throw std::invalid_argument("train: patch not divisible by scale");

  ModelConfig mc = config.model;
  mc.scale = config.scale;
  Model model = build_model(mc);

  std::vector<Tensor> params;
  for (const auto& [name, t] : model.parameters()) params.push_back(t);
  Adam opt(params, config.lr, config.beta1, config.beta2, config.eps);

  std::mt19937_64 rng(mix_seed(config.seed, 0x7121AULL));
  const int variants = config.augment ? 6 : 1;
  const int64_t effective =
      static_cast<int64_t>(train_idx.size()) * variants;
  const int steps =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : static_cast<int>((effective + config.batch - 1) / config.batch);

  TrainResult result;
  double best_pl_mae = std::numeric_limits<double>::infinity();
  int64_t global_step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        config.lr * std::pow(0.5, (epoch - 1) / config.lr_halve_every);
    opt.set_lr(lr);

    double loss_sum = 0.0;
    for (int step = 0; step < steps; ++step) {
      std::vector<PatchRef> refs(config.batch);
      for (PatchRef& r : refs) {
        r.sample = train_idx[rng() % train_idx.size()];
        r.variant = static_cast<int>(rng() % variants);
        r.x0 = grid > patch ? static_cast<int>(rng() % (grid - patch + 1)) : 0;
        r.y0 = grid > patch ? static_cast<int>(rng() % (grid - patch + 1)) : 0;
      }
      Batch batch = make_batch(dataset, refs, patch, config.scale);
      const Prediction pred = forward(model, batch.input);
      const Tensor loss = composite_loss(pred, batch.targets, config.weights);
      const double loss_v = loss.item();
      ++global_step;
      if (!std::isfinite(loss_v))
        throw DivergenceError(global_step,
                              "non-finite loss at step " +
                                  std::to_string(global_step));
      loss_sum += loss_v;
      backward(loss);
      opt.step();
    }

    const ValStats val = validation_stats(model, dataset, val_idx,
                                          config.scale, config.val_frames);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / steps;
    stats.val_mae = val.mae;
    stats.val_los_accuracy = val.los_accuracy;
    stats.lr = lr;
    if (!config.deterministic) {
      stats.seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    }
    result.history.epochs.push_back(stats);

    if (val.mae[0] < best_pl_mae) {
      best_pl_mae = val.mae[0];
      result.best = clone_model(model);
    }
  }
  result.last = std::move(model);
  if (!result.best.parameters().size()) result.best = clone_model(result.last);
  return result;
}

Model finetune_heads(const Model& model, const Dataset& dataset,
                     Characteristic target, const TrainConfig& config) {
  if (target == Characteristic::H)
    throw std::invalid_argument("finetune_heads: h is not a target");
  Model tuned = clone_model(model);
  const std::string prefix = head_prefix(target);

  std::vector<Tensor> head_params;
  for (const auto& [name, t] : tuned.parameters()) {
    if (name.rfind(prefix, 0) == 0)
      head_params.push_back(t);
    else
      t.node()->requires_grad = false;  // frozen: backward never touches it
  }
  Adam opt(head_params, config.lr, config.beta1, config.beta2, config.eps);

  const std::vector<size_t> train_idx = dataset.indices_of(Split::Train);
  if (train_idx.empty())
    throw std::invalid_argument("finetune_heads: empty train split");
  const int grid = static_cast<int>(dataset.grid_size);
  const int patch = std::min(config.patch, grid);
  std::mt19937_64 rng(mix_seed(config.seed, 0xF17EULL));
  const int variants = config.augment ? 6 : 1;
  const int steps = config.steps_per_epoch > 0
                        ? config.steps_per_epoch
                        : static_cast<int>((train_idx.size() * variants +
                                            config.batch - 1) /
                                           config.batch);

  int64_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr =
        config.lr * std::pow(0.5, (epoch - 1) / config.lr_halve_every);
    opt.set_lr(lr);
    for (int step = 0; step < steps; ++step) {
      std::vector<PatchRef> refs(config.batch);
      for (PatchRef& r : refs) {
        r.sample = train_idx[rng() % train_idx.size()];
        r.variant = static_cast<int>(rng() % variants);
        r.x0 = grid > patch ? static_cast<int>(rng() % (grid - patch + 1)) : 0;
        r.y0 = grid > patch ? static_cast<int>(rng() % (grid - patch + 1)) : 0;
      }
      Batch batch = make_batch(dataset, refs, patch, config.scale);
      const Prediction pred = forward(tuned, batch.input);
      Tensor loss;
      if (target == Characteristic::LOS) {
        loss = ops::masked_ce(pred.los_logits, batch.targets.los_labels,
                              batch.targets.los_mask);
      } else {
        const Tensor& p = pred.regression(target);
        const Tensor& t = batch.targets.target_of(target);
        const Tensor& m = batch.targets.mask_of(target);
        loss = ops::add(
            ops::mul_scalar(ops::masked_l1(p, t, m), config.weights.weight(target)),
            ops::mul_scalar(ops::masked_stde(p, t, m), config.weights.stde_weight));
      }
      const double loss_v = loss.item();
      ++global_step;
      if (!std::isfinite(loss_v))
        throw DivergenceError(global_step,
                              "non-finite fine-tune loss at step " +
                                  std::to_string(global_step));
      backward(loss);
      opt.step();
    }
  }
  return tuned;
}

EvalReport evaluate(const Model& model, const Dataset& dataset, Split split,
                    int scale) {
  if (model.config.scale != scale)
    throw CheckpointError(CheckpointErrorKind::ConfigMismatch,
                          "checkpoint scale " +
                              std::to_string(model.config.scale) +
                              " does not match requested scale " +
                              std::to_string(scale));
  const std::vector<size_t> idx = dataset.indices_of(split);
  if (idx.empty()) throw std::invalid_argument("evaluate: empty split");

  const auto& specs = default_specs();
  std::array<ErrorAccumulator, 5> acc;
  int64_t los_correct = 0, los_total = 0;
  int64_t valid_pixels = 0, total_pixels = 0;

  for (size_t si : idx) {
    const SceneSample& sample = dataset.samples[si];
    const Tensor input = build_lr_input(sample, scale);
    const Prediction pred = forward(model, input);
    const int64_t plane =
        static_cast<int64_t>(sample.grid_size) * sample.grid_size;
    for (int t = 0; t < 5; ++t) {
      const Characteristic c = kRegressionTargets[t];
      const auto& spec = specs[static_cast<int>(c)];
      const auto& gt = sample.raster(c);
      const double* p = pred.regression(c).data();
      for (int64_t i = 0; i < plane; ++i) {
        if (is_sentinel_native(gt[i], spec)) continue;
        acc[t].add(spec.denormalize(p[i]), gt[i]);
      }
    }
    const auto& gt_los = sample.raster(Characteristic::LOS);
    const auto& los_spec = specs[static_cast<int>(Characteristic::LOS)];
    const double* l0 = pred.los_logits.data();
    const double* l1 = l0 + plane;
    for (int64_t i = 0; i < plane; ++i) {
      ++total_pixels;
      if (is_sentinel_native(gt_los[i], los_spec)) continue;
      ++valid_pixels;
      ++los_total;
      if ((l1[i] > l0[i]) == (gt_los[i] > 0.5f)) ++los_correct;
    }
  }

  EvalReport report;
  report.scale = scale;
  report.sample_count = static_cast<int>(idx.size());
  report.valid_fraction =
      total_pixels ? static_cast<double>(valid_pixels) / total_pixels : 0.0;
  for (int t = 0; t < 5; ++t)
    report.rows.push_back({kRegressionTargets[t], acc[t].metrics(), 0.0, false});
  EvalRow los_row;
  los_row.target = Characteristic::LOS;
  los_row.is_classification = true;
  los_row.accuracy =
      los_total ? static_cast<double>(los_correct) / los_total : 0.0;
  report.rows.push_back(los_row);
  return report;
}

EvalReport evaluate_baseline(const Dataset& dataset, Split split, int scale,
                             InterpMethod method) {
  const std::vector<size_t> idx = dataset.indices_of(split);
  if (idx.empty())
    throw std::invalid_argument("evaluate_baseline: empty split");
  const auto& specs = default_specs();
  std::array<ErrorAccumulator, 5> acc;
  int64_t los_correct = 0, los_total = 0;
  int64_t valid_pixels = 0, total_pixels = 0;

  for (size_t si : idx) {
    const SceneSample& sample = dataset.samples[si];
    const int g = sample.grid_size;
    const int lr = g / scale;
    const int64_t plane = static_cast<int64_t>(g) * g;
    for (int t = 0; t < 5; ++t) {
      const Characteristic c = kRegressionTargets[t];
      const auto& spec = specs[static_cast<int>(c)];
      const auto& gt = sample.raster(c);
      const std::vector<float> lr_map = downsample(gt, g, scale, spec);
      const std::vector<float> hr =
          baseline_interpolate(lr_map, lr, scale, method, spec);
      for (int64_t i = 0; i < plane; ++i) {
        if (is_sentinel_native(gt[i], spec)) continue;
        acc[t].add(hr[i], gt[i]);
      }
    }
    const auto& los_spec = specs[static_cast<int>(Characteristic::LOS)];
    const auto& gt_los = sample.raster(Characteristic::LOS);
    const std::vector<float> lr_los = downsample(gt_los, g, scale, los_spec);
    const std::vector<float> hr_los =
        baseline_interpolate(lr_los, lr, scale, InterpMethod::Nearest, los_spec);
    for (int64_t i = 0; i < plane; ++i) {
      ++total_pixels;
      if (is_sentinel_native(gt_los[i], los_spec)) continue;
      ++valid_pixels;
      ++los_total;
      const bool pred_los = !is_sentinel_native(hr_los[i], los_spec) &&
                            hr_los[i] > 0.5f;
      if (pred_los == (gt_los[i] > 0.5f)) ++los_correct;
    }
  }

  EvalReport report;
  report.scale = scale;
  report.sample_count = static_cast<int>(idx.size());
  report.valid_fraction =
      total_pixels ? static_cast<double>(valid_pixels) / total_pixels : 0.0;
  for (int t = 0; t < 5; ++t)
    report.rows.push_back({kRegressionTargets[t], acc[t].metrics(), 0.0, false});
  EvalRow los_row;
  los_row.target = Characteristic::LOS;
  los_row.is_classification = true;
  los_row.accuracy =
      los_total ? static_cast<double>(los_correct) / los_total : 0.0;
  report.rows.push_back(los_row);
  return report;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const Dataset& dataset,
                                      const std::vector<int>& scales) {
  const std::array<std::string, 4> presets = {"stl", "res", "da", "att"};
  const std::array<std::string, 4> names = {"STL", "+RES", "+DA", "+ATT"};
  std::vector<AblationRow> rows(4);
  for (int r = 0; r < 4; ++r) {
    rows[r].name = names[r];
    rows[r].scales = scales;
    for (int scale : scales) {
      TrainConfig cfg = base;
      cfg.scale = scale;
      apply_ablation_preset(cfg, presets[r]);
      const TrainResult res = train(cfg, dataset);
      const EvalReport report = evaluate(res.best, dataset, Split::Test, scale);
      const Metrics& pl = report.row(Characteristic::PL).metrics;
      rows[r].mae.push_back(pl.mae);
      rows[r].rmse.push_back(pl.rmse);
    }
  }
  for (int r = 0; r < 4; ++r) {
    for (size_t s = 0; s < scales.size(); ++s) {
      const double stl_mae = rows[0].mae[s], stl_rmse = rows[0].rmse[s];
      const double prev_mae = r > 0 ? rows[r - 1].mae[s] : rows[r].mae[s];
      const double prev_rmse = r > 0 ? rows[r - 1].rmse[s] : rows[r].rmse[s];
      rows[r].mae_impr_vs_stl.push_back(
          stl_mae != 0.0 ? (stl_mae - rows[r].mae[s]) / stl_mae * 100.0 : 0.0);
      rows[r].rmse_impr_vs_stl.push_back(
          stl_rmse != 0.0 ? (stl_rmse - rows[r].rmse[s]) / stl_rmse * 100.0 : 0.0);
      rows[r].mae_impr_vs_prev.push_back(
          prev_mae != 0.0 ? (prev_mae - rows[r].mae[s]) / prev_mae * 100.0 : 0.0);
      rows[r].rmse_impr_vs_prev.push_back(
          prev_rmse != 0.0 ? (prev_rmse - rows[r].rmse[s]) / prev_rmse * 100.0
                           : 0.0);
    }
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(4);
  os << "row";
  if (!rows.empty())
    for (int s : rows[0].scales)
      os << ",mae_s" << s << ",rmse_s" << s << ",mae_impr_vs_stl_s" << s
         << ",rmse_impr_vs_stl_s" << s << ",mae_impr_vs_prev_s" << s
         << ",rmse_impr_vs_prev_s" << s;
  os << "\n";
  for (const AblationRow& r : rows) {
    os << r.name;
    for (size_t s = 0; s < r.scales.size(); ++s)
      os << "," << r.mae[s] << "," << r.rmse[s] << "," << r.mae_impr_vs_stl[s]
         << "%," << r.rmse_impr_vs_stl[s] << "%," << r.mae_impr_vs_prev[s]
         << "%," << r.rmse_impr_vs_prev[s] << "%";
    os << "\n";
  }
  return os.str();
}

}  // namespace chansr
