#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "chansr/dataset.hpp"
#include "chansr/export.hpp"
#include "chansr/trainer.hpp"

namespace {

using namespace chansr;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DatasetError(DatasetErrorKind::Io, "cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError(DatasetErrorKind::Io, "cannot open " + path);
  os << content;
}

Characteristic parse_target(const std::string& name) {
  for (Characteristic c : kTargets)
    if (name == characteristic_name(c)) return c;
  throw std::invalid_argument("unknown target: " + name +
                              " (expected PL, Rp, LOS, DS, phi or theta)");
}

// Pre-scan for --config so file values become flag defaults (flags win).
TrainConfig load_base_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config")
      return TrainConfig::from_json(read_file(argv[i + 1]));
  return TrainConfig{};
}

Dataset load_split_dataset(const std::string& path, uint64_t seed) {
  Dataset ds = read_dataset(path);
  assign_split(ds, 0.8, 0.1, 0.1, seed);
  return ds;
}

int run(int argc, char** argv) {
  CLI::App app{"Super-resolution toolkit for wireless channel-characteristic maps"};
  app.require_subcommand(1);

  TrainConfig cfg = load_base_config(argc, argv);
  std::string config_path, data_path, out_path, ckpt_path, history_path;
  std::string split_name = "test", method_name = "bicubic", format = "pgm";
  std::string ablation_preset, target_name;
  uint64_t seed = cfg.seed;
  int scenes = 96, grid = 128, sample_index = 0;
  double density = 0.3;
  bool deterministic = cfg.deterministic;
  std::vector<int> scales = {2};

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (flags override)");
    cmd->add_flag("--deterministic,!--no-deterministic", deterministic,
                  "bitwise-reproducible mode");
    cmd->add_option("--seed", seed, "master seed");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--scenes", scenes, "number of scenes");
  gen->add_option("--grid", grid, "HR grid size (cells per side)");
  gen->add_option("--density", density, "target building coverage fraction");
  gen->add_option("--out", out_path, "output dataset file")->required();

  auto* tr = app.add_subcommand("train", "train the SR model");
  add_common(tr);
  tr->add_option("--data", data_path, "dataset file")->required();
  tr->add_option("--out", ckpt_path, "output checkpoint")->required();
  tr->add_option("--history", history_path, "training history CSV");
  tr->add_option("--scale", cfg.scale, "SR scale factor")
      ->check(CLI::IsMember({2, 4, 8}));
  tr->add_option("--epochs", cfg.epochs, "training epochs");
  tr->add_option("--batch", cfg.batch, "batch size");
  tr->add_option("--patch", cfg.patch, "HR patch size");
  tr->add_option("--lr", cfg.lr, "initial learning rate");
  tr->add_option("--width", cfg.model.width, "channel width");
  tr->add_option("--blocks", cfg.model.block_repeats, "deep-panel block count");
  tr->add_option("--steps-per-epoch", cfg.steps_per_epoch,
                 "steps per epoch (0 = derive from dataset)");
  tr->add_flag("--augment,!--no-augment", cfg.augment, "dihedral augmentation");
  tr->add_option("--val-frames", cfg.val_frames,
                 "validation frames per epoch (0 = all)");
  tr->add_option("--ablation", ablation_preset, "preset: stl, res, da or att")
      ->check(CLI::IsMember({"stl", "res", "da", "att"}));

  auto* ft = app.add_subcommand("finetune", "fine-tune one target head");
  add_common(ft);
  ft->add_option("--ckpt", ckpt_path, "input checkpoint")->required();
  ft->add_option("--data", data_path, "dataset file")->required();
  ft->add_option("--target", target_name, "target head (PL, Rp, LOS, DS, phi, theta)")
      ->required();
  ft->add_option("--out", out_path, "output checkpoint")->required();
  ft->add_option("--epochs", cfg.epochs, "fine-tuning epochs");
  ft->add_option("--lr", cfg.lr, "learning rate");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->add_option("--scale", cfg.scale, "SR scale factor")
      ->check(CLI::IsMember({2, 4, 8}));
  ev->add_option("--split", split_name, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", out_path, "report CSV path (default stdout)");

  auto* ab = app.add_subcommand("ablate", "run the four-row ablation study");
  add_common(ab);
  ab->add_option("--data", data_path, "dataset file")->required();
  ab->add_option("--scales", scales, "scale factors");
  ab->add_option("--epochs", cfg.epochs, "epochs per run");
  ab->add_option("--width", cfg.model.width, "channel width");
  ab->add_option("--batch", cfg.batch, "batch size");
  ab->add_option("--patch", cfg.patch, "HR patch size");
  ab->add_option("--steps-per-epoch", cfg.steps_per_epoch, "steps per epoch");
  ab->add_option("--out", out_path, "table CSV path (default stdout)");

  auto* bl = app.add_subcommand("baseline", "interpolation baseline metrics");
  add_common(bl);
  bl->add_option("--data", data_path, "dataset file")->required();
  bl->add_option("--scale", cfg.scale, "SR scale factor")
      ->check(CLI::IsMember({2, 4, 8}));
  bl->add_option("--method", method_name, "nearest or bicubic")
      ->check(CLI::IsMember({"nearest", "bicubic"}));
  bl->add_option("--split", split_name, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  bl->add_option("--out", out_path, "report CSV path (default stdout)");

  auto* ex = app.add_subcommand("export", "export rasters or predictions");
  add_common(ex);
  ex->add_option("--data", data_path, "dataset file")->required();
  ex->add_option("--ckpt", ckpt_path, "optional checkpoint: export predictions");
  ex->add_option("--index", sample_index, "sample index");
  ex->add_option("--scale", cfg.scale, "SR scale (with --ckpt)")
      ->check(CLI::IsMember({2, 4, 8}));
  ex->add_option("--format", format, "pgm or csv")
      ->check(CLI::IsMember({"pgm", "csv"}));
  ex->add_option("--out", out_path, "output directory")->required();

  app.parse(argc, argv);
  cfg.seed = seed;
  cfg.deterministic = deterministic;
  if (deterministic) set_thread_count(thread_count());  // resolve once

  if (gen->parsed()) {
    PropagationParams params;
    std::cout << "effective-config: {\"command\":\"gen-data\",\"seed\":" << seed
              << ",\"scenes\":" << scenes << ",\"grid\":" << grid
              << ",\"density\":" << density << "}\n";
    Dataset ds = generate_dataset(seed, scenes, grid, density, params);
    write_dataset(ds, out_path);
    std::cout << "wrote " << ds.samples.size() << " scenes to " << out_path
              << "\n";
    return 0;
  }

  if (tr->parsed()) {
    if (!ablation_preset.empty()) apply_ablation_preset(cfg, ablation_preset);
    cfg.model.scale = cfg.scale;
    cfg.model.init_seed = mix_seed(cfg.seed, 0x10DE1ULL);
    std::cout << "effective-config: " << cfg.to_json() << "\n";
    Dataset ds = load_split_dataset(data_path, cfg.seed);
    TrainResult result = train(cfg, ds);
    save_checkpoint(result.best, ckpt_path);
    save_checkpoint(result.last, ckpt_path + ".last");
    if (!history_path.empty())
      write_file(history_path, result.history.to_csv());
    std::cout << "best val PL MAE tracked over " << cfg.epochs
              << " epochs; checkpoint written to " << ckpt_path << "\n";
    return 0;
  }

  if (ft->parsed()) {
    Model model = load_checkpoint(ckpt_path);
    cfg.scale = model.config.scale;
    std::cout << "effective-config: " << cfg.to_json() << "\n";
    Dataset ds = load_split_dataset(data_path, cfg.seed);
    Model tuned = finetune_heads(model, ds, parse_target(target_name), cfg);
    save_checkpoint(tuned, out_path);
    std::cout << "fine-tuned head " << target_name << " -> " << out_path << "\n";
    return 0;
  }

  if (ev->parsed()) {
    Model model = load_checkpoint(ckpt_path);
    Dataset ds = load_split_dataset(data_path, cfg.seed);
    const Split split = split_name == "train" ? Split::Train
                        : split_name == "val" ? Split::Val
                                              : Split::Test;
    EvalReport report = evaluate(model, ds, split, cfg.scale);
    const std::string csv = report.to_csv();
    if (out_path.empty())
      std::cout << csv;
    else
      write_file(out_path, csv);
    return 0;
  }

  if (ab->parsed()) {
    Dataset ds = load_split_dataset(data_path, cfg.seed);
    cfg.model.init_seed = mix_seed(cfg.seed, 0x10DE1ULL);
    std::cout << "effective-config: " << cfg.to_json() << "\n";
    auto rows = run_ablation(cfg, ds, scales);
    const std::string table = format_ablation_table(rows);
    if (out_path.empty())
      std::cout << table;
    else
      write_file(out_path, table);
    return 0;
  }

  if (bl->parsed()) {
    Dataset ds = load_split_dataset(data_path, cfg.seed);
    const Split split = split_name == "train" ? Split::Train
                        : split_name == "val" ? Split::Val
                                              : Split::Test;
    const InterpMethod method = method_name == "nearest" ? InterpMethod::Nearest
                                                         : InterpMethod::Bicubic;
    EvalReport report = evaluate_baseline(ds, split, cfg.scale, method);
    const std::string csv = report.to_csv();
    if (out_path.empty())
      std::cout << csv;
    else
      write_file(out_path, csv);
    return 0;
  }

  if (ex->parsed()) {
    Dataset ds = read_dataset(data_path);
    if (sample_index < 0 ||
        static_cast<size_t>(sample_index) >= ds.samples.size())
      throw DatasetError(DatasetErrorKind::Io,
                         "sample index out of range: " +
                             std::to_string(sample_index));
    std::filesystem::create_directories(out_path);
    const SceneSample& sample = ds.samples[sample_index];
    const auto& specs = default_specs();

    auto export_map = [&](const std::string& name,
                          const std::vector<float>& map, int grid_size,
                          const CharacteristicSpec& spec) {
      const std::string base = out_path + "/" + name;
      if (format == "pgm")
        write_pgm(base + ".pgm", map, grid_size, spec);
      else
        write_csv_map(base + ".csv", map, grid_size, spec);
    };

    if (ckpt_path.empty()) {
      for (int c = 0; c < kNumCharacteristics; ++c)
        export_map(characteristic_name(static_cast<Characteristic>(c)),
                   sample.rasters[c], sample.grid_size, specs[c]);
    } else {
      Model model = load_checkpoint(ckpt_path);
      const Tensor input = build_lr_input(sample, model.config.scale);
      const Prediction pred = forward(model, input);
      const int64_t plane =
          static_cast<int64_t>(sample.grid_size) * sample.grid_size;
      for (Characteristic c : kTargets) {
        const auto& spec = specs[static_cast<int>(c)];
        std::vector<float> map(plane);
        if (c == Characteristic::LOS) {
          const double* l0 = pred.los_logits.data();
          const double* l1 = l0 + plane;
          for (int64_t i = 0; i < plane; ++i)
            map[i] = l1[i] > l0[i] ? 1.f : 0.f;
        } else {
          std::vector<double> norm(pred.regression(c).data(),
                                   pred.regression(c).data() + plane);
          map = denormalize_map(norm, spec);
        }
        export_map(std::string("pred_") + characteristic_name(c), map,
                   sample.grid_size, spec);
      }
    }
    std::cout << "exported to " << out_path << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    CLI::App dummy;
    std::cerr << e.what() << "\n";
    return e.get_exit_code() == 0 ? 0 : 1;
  } catch (const chansr::DivergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const chansr::DatasetError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const chansr::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
