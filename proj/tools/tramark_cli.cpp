// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: run experiments, verify suspect checkpoints, apply
// watermark-removal attacks and sweep hyperparameters.
//
// Exit codes: 0 success (verify: verified), 1 verify: not verified,
// 2 invalid configuration/arguments/inputs, 3 output I/O failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tramark/attacks.hpp"
#include "tramark/config.hpp"
#include "tramark/errors.hpp"
#include "tramark/federation.hpp"
#include "tramark/parallel.hpp"
#include "tramark/serialization.hpp"
#include "tramark/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tramark;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string two_digits(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", i);
  return buf;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string run_id(const ExperimentConfig& cfg, Mode mode) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a(serialize_config(cfg) + to_string(mode))));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  f.close();
  if (!f) throw IoError("failed writing " + path.string());
}

LabeledDataset dataset_from_triggers(const Matrix& triggers, int target_label, int classes) {
  LabeledDataset ds;
  ds.class_count = classes;
  ds.inputs = triggers;
  ds.labels.assign(triggers.rows, target_label);
  return ds;
}

// Union of every *_holdout.tmds in wm_dir, sorted by filename. Labels inside
// the containers are the owners' target labels.
LabeledDataset load_watermark_testset(const std::string& wm_dir, int classes) {
  std::vector<fs::path> files;
  if (!fs::is_directory(wm_dir)) {
    throw std::invalid_argument("watermark directory '" + wm_dir + "' does not exist");
  }
  for (const auto& entry : fs::directory_iterator(wm_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 13 && name.substr(name.size() - 13) == "_holdout.tmds") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) {
    throw std::invalid_argument("no *_holdout.tmds files in '" + wm_dir + "'");
  }
  std::sort(files.begin(), files.end());

  LabeledDataset unioned;
  unioned.class_count = classes;
  for (const fs::path& file : files) {
    const LabeledDataset part = load_dataset(file.string());
    if (unioned.inputs.cols == 0) {
      unioned.inputs = Matrix(0, part.inputs.cols);
    } else if (part.inputs.cols != unioned.inputs.cols) {
      throw std::invalid_argument("watermark sets disagree on input dimension");
    }
    const std::size_t old_rows = unioned.inputs.rows;
    unioned.inputs.rows += part.inputs.rows;
    unioned.inputs.data.insert(unioned.inputs.data.end(), part.inputs.data.begin(),
                               part.inputs.data.end());
    unioned.labels.insert(unioned.labels.end(), part.labels.begin(), part.labels.end());
    (void)old_rows;
  }
  for (int label : unioned.labels) {
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("watermark label outside the checkpoint's class range");
    }
  }
  return unioned;
}

std::string metrics_csv(const RunResult& result) {
  std::string csv = "round,ma,vr,confidence,leakage,interval,min_kl\n";
  for (const RoundMetrics& m : result.history) {
    csv += std::to_string(m.round) + "," + fmt(m.ma) + "," + fmt(m.vr) + "," +
           fmt(m.confidence) + "," + fmt(m.leakage) + "," + fmt(m.interval) + "," +
           fmt(m.min_pairwise_kl) + "\n";
  }
  return csv;
}

std::string collision_csv(const CollisionReport& report) {
  std::string csv;
  for (const auto& row : report.pairwise_kl) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) csv += ",";
      csv += fmt(row[j]);
    }
    csv += "\n";
  }
  return csv;
}

json config_json(const ExperimentConfig& cfg) {
  json j;
  j["clients"] = cfg.clients;
  j["rounds"] = cfg.rounds;
  j["warmup_ratio"] = cfg.warmup_ratio;
  j["local_iters"] = cfg.local_iters;
  j["local_lr"] = cfg.local_lr;
  j["batch_size"] = cfg.batch_size;
  j["sampling_fraction"] = cfg.sampling_fraction;
  j["partition_ratio"] = cfg.partition_ratio;
  j["wm_iters"] = cfg.wm_iters;
  j["wm_lr"] = cfg.wm_lr;
  j["wm_size"] = cfg.wm_size;
  j["wm_source"] = cfg.wm_source == WatermarkSource::NoisePattern ? "noise_pattern" : "ood_idx";
  j["wm_jitter"] = cfg.wm_jitter;
  j["collision_sigma"] = cfg.collision_sigma;
  j["ownership_nu"] = cfg.ownership_nu;
  j["hidden_sizes"] = cfg.hidden_sizes;
  j["classes"] = cfg.classes;
  j["input_dim"] = cfg.input_dim;
  j["per_class"] = cfg.per_class;
  j["test_per_class"] = cfg.test_per_class;
  j["noise_std"] = cfg.noise_std;
  j["dirichlet_gamma"] = cfg.dirichlet_gamma;
  j["seed"] = cfg.seed;
  if (!cfg.wm_images.empty()) j["wm_images"] = cfg.wm_images;
  if (!cfg.wm_labels.empty()) j["wm_labels"] = cfg.wm_labels;
  if (!cfg.data_images.empty()) j["data_images"] = cfg.data_images;
  if (!cfg.data_labels.empty()) j["data_labels"] = cfg.data_labels;
  if (!cfg.test_images.empty()) j["test_images"] = cfg.test_images;
  if (!cfg.test_labels.empty()) j["test_labels"] = cfg.test_labels;
  return j;
}

int cmd_run(const std::string& config_path, const std::string& mode_name,
            long long seed_override, const std::string& out_dir, int threads) {
  ExperimentConfig cfg;
  Mode mode;
  try {
    cfg = parse_config_file(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.validate();
    mode = mode_from_string(mode_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  RunResult result;
  try {
    result = run_experiment(cfg, mode, threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const fs::path out(out_dir);
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "watermarks");
    fs::create_directories(out / "shards");

    write_text(out / "metrics.csv", metrics_csv(result));
    write_text(out / "config.conf", serialize_config(cfg));

    json manifest;
    manifest["run_id"] = run_id(cfg, mode);
    manifest["mode"] = to_string(mode);
    manifest["seed"] = cfg.seed;
    manifest["config"] = config_json(cfg);
    json artifacts;
    artifacts["metrics"] = "metrics.csv";
    artifacts["config_snapshot"] = "config.conf";

    std::vector<std::string> checkpoint_paths, wm_train_paths, wm_holdout_paths, shard_paths;
    for (int i = 0; i < cfg.clients; ++i) {
      const std::string ckpt = "checkpoints/client_" + two_digits(i) + ".trmk";
      save_checkpoint((out / ckpt).string(), result.final_models[i]);
      checkpoint_paths.push_back(ckpt);

      const WatermarkDataset& wm = result.watermarks[i];
      const std::string wtrain = "watermarks/client_" + two_digits(i) + "_train.tmds";
      const std::string whold = "watermarks/client_" + two_digits(i) + "_holdout.tmds";
      save_dataset((out / wtrain).string(),
                   dataset_from_triggers(wm.triggers, wm.target_label, cfg.classes));
      save_dataset((out / whold).string(),
                   dataset_from_triggers(wm.holdout_triggers, wm.target_label, cfg.classes));
      wm_train_paths.push_back(wtrain);
      wm_holdout_paths.push_back(whold);

      const std::string shard = "shards/client_" + two_digits(i) + ".tmds";
      save_dataset((out / shard).string(), result.shards[i]);
      shard_paths.push_back(shard);
    }
    artifacts["checkpoints"] = checkpoint_paths;
    artifacts["watermarks_train"] = wm_train_paths;
    artifacts["watermarks_holdout"] = wm_holdout_paths;
    artifacts["shards"] = shard_paths;

    save_dataset((out / "test_set.tmds").string(), result.test_set);
    artifacts["test_set"] = "test_set.tmds";

    if (mode == Mode::TraMark) {
      save_mask((out / "masks.tmmk").string(), result.masks);
      artifacts["mask"] = "masks.tmmk";
    }

    const CollisionReport collisions =
        collision_report(result.final_models, result.watermarks, cfg.collision_sigma);
    write_text(out / "collisions.csv", collision_csv(collisions));
    artifacts["collisions"] = "collisions.csv";

    manifest["artifacts"] = artifacts;
    const RoundMetrics& last = result.final_round();
    manifest["final"] = {{"round", last.round},           {"ma", last.ma},
                         {"vr", last.vr},                 {"confidence", last.confidence},
                         {"leakage", last.leakage},       {"interval", last.interval},
                         {"min_kl", last.min_pairwise_kl}};
    write_text(out / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "mode=" << to_string(mode) << " seed=" << cfg.seed
              << " final ma=" << fmt(last.ma) << " vr=" << fmt(last.vr)
              << " interval=" << fmt(last.interval) << "\n";
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int cmd_verify(const std::string& checkpoint_path, const std::string& wm_dir,
               int assigned_label, int client_id) {
  ParameterVector model;
  LabeledDataset testset;
  VerificationReport report;
  try {
    model = load_checkpoint(checkpoint_path);
    testset = load_watermark_testset(wm_dir, model.spec.output_dim());
    if (testset.input_dim() != model.spec.input_dim()) {
      throw std::invalid_argument("watermark input dimension does not match checkpoint");
    }
    if (assigned_label < 0 || assigned_label >= model.spec.output_dim()) {
      throw std::invalid_argument("assigned label outside the checkpoint's class range");
    }
    report = verify_leaker(model, assigned_label, testset);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  json j;
  j["client_id"] = client_id >= 0 ? client_id : assigned_label;
  j["per_label_accuracy"] = report.per_label_accuracy;
  j["predicted"] = report.predicted_owner_label;
  j["assigned"] = report.assigned_label;
  j["verified"] = report.verified;
  j["confidence"] = report.confidence;
  j["leakage"] = report.leakage;
  std::cout << j.dump(2) << "\n";
  return report.verified ? 0 : 1;
}

int cmd_attack(const std::string& checkpoint_path, const std::string& kind,
               double ratio, int epochs, double lr, int batch_size, int bits,
               const std::string& wm_dir, const std::string& test_path,
               const std::string& data_path, int assigned_label, long long seed,
               const std::string& out_path) {
  ParameterVector model, attacked;
  LabeledDataset test, wm_testset;
  try {
    model = load_checkpoint(checkpoint_path);
    test = load_dataset(test_path);
    wm_testset = load_watermark_testset(wm_dir, model.spec.output_dim());
    if (assigned_label < 0 || assigned_label >= model.spec.output_dim()) {
      throw std::invalid_argument("assigned label outside the checkpoint's class range");
    }

    if (kind == "prune") {
      attacked = prune(model, ratio);
    } else if (kind == "finetune") {
      if (data_path.empty()) {
        throw std::invalid_argument("--data is required for the finetune attack");
      }
      const LabeledDataset shard = load_dataset(data_path);
      Rng rng(static_cast<std::uint64_t>(seed));
      attacked = finetune(model, shard, epochs, lr, batch_size, rng);
    } else if (kind == "quantize") {
      attacked = quantize(model, bits);
    } else {
      throw std::invalid_argument("unknown attack kind '" + kind + "'");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  json j;
  try {
    save_checkpoint(out_path, attacked);
    j["ma_before"] = accuracy(model, test.inputs, test.labels);
    j["ma_after"] = accuracy(attacked, test.inputs, test.labels);
    j["verified_before"] = verify_leaker(model, assigned_label, wm_testset).verified;
    j["verified_after"] = verify_leaker(attacked, assigned_label, wm_testset).verified;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param,
              const std::vector<double>& values, int seeds, const std::string& mode_name,
              const std::string& out_csv, int threads) {
  ExperimentConfig base;
  Mode mode;
  try {
    base = parse_config_file(config_path);
    mode = mode_from_string(mode_name);
    if (values.empty()) throw std::invalid_argument("no sweep values given");
    if (seeds < 1) throw std::invalid_argument("need at least one seed");
    if (param != "alpha" && param != "k" && param != "wm_size") {
      throw std::invalid_argument("sweep parameter must be alpha, k or wm_size");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  std::string csv = "param,value,seed,ma,vr\n";
  for (double value : values) {
    for (int s = 0; s < seeds; ++s) {
      ExperimentConfig cfg = base;
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      if (param == "alpha") cfg.warmup_ratio = value;
      else if (param == "k") cfg.partition_ratio = value;
      else cfg.wm_size = static_cast<int>(std::llround(value));
      RunResult result;
      try {
        cfg.validate();
        result = run_experiment(cfg, mode, threads);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
      }
      const RoundMetrics& last = result.final_round();
      csv += param + "," + fmt(value) + "," + std::to_string(cfg.seed) + "," + fmt(last.ma) +
             "," + fmt(last.vr) + "\n";
      std::cerr << param << "=" << fmt(value) << " seed=" << cfg.seed
                << " ma=" << fmt(last.ma) << " vr=" << fmt(last.vr) << "\n";
    }
  }
  try {
    write_text(out_csv, csv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traceable watermarking simulator for federated learning"};
  app.require_subcommand(1);
  const int threads = worker_count_from_env();

  // run
  auto* run = app.add_subcommand("run", "run a federated experiment and export artifacts");
  std::string run_config, run_mode = "tramark", run_out = "out";
  long long run_seed = -1;
  run->add_option("--config", run_config, "config file")->required();
  run->add_option("--mode", run_mode, "fedavg | waffle | tramark");
  run->add_option("--seed", run_seed, "override config seed");
  run->add_option("--out-dir", run_out, "output directory");

  // verify
  auto* verify = app.add_subcommand("verify", "leaker verification for a suspect checkpoint");
  std::string verify_ckpt, verify_wm_dir;
  int verify_label = -1, verify_client = -1;
  verify->add_option("--checkpoint", verify_ckpt, "suspect checkpoint")->required();
  verify->add_option("--wm-dir", verify_wm_dir, "directory with *_holdout.tmds sets")->required();
  verify->add_option("--assigned-label", verify_label, "suspected owner's target label")
      ->required();
  verify->add_option("--client", verify_client, "client id for the report");

  // attack
  auto* attack = app.add_subcommand("attack", "apply a watermark-removal attack");
  std::string attack_ckpt, attack_kind, attack_wm_dir, attack_test, attack_data, attack_out;
  double attack_ratio = 0.5, attack_lr = 0.01;
  int attack_epochs = 30, attack_batch = 32, attack_bits = 8, attack_label = -1;
  long long attack_seed = 1;
  attack->add_option("--checkpoint", attack_ckpt, "checkpoint to attack")->required();
  attack->add_option("--kind", attack_kind, "prune | finetune | quantize")->required();
  attack->add_option("--ratio", attack_ratio, "prune ratio");
  attack->add_option("--epochs", attack_epochs, "finetune epochs");
  attack->add_option("--lr", attack_lr, "finetune learning rate");
  attack->add_option("--batch-size", attack_batch, "finetune batch size");
  attack->add_option("--bits", attack_bits, "quantization bits");
  attack->add_option("--wm-dir", attack_wm_dir, "watermark holdout directory")->required();
  attack->add_option("--test-set", attack_test, "main-task test set (TMDS)")->required();
  attack->add_option("--data", attack_data, "attacker's training shard (TMDS, finetune)");
  attack->add_option("--assigned-label", attack_label, "owner label of the checkpoint")
      ->required();
  attack->add_option("--seed", attack_seed, "finetune shuffling seed");
  attack->add_option("--out", attack_out, "attacked checkpoint path")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "repeat runs across one hyperparameter");
  std::string sweep_config, sweep_param, sweep_mode = "tramark", sweep_out = "sweep.csv";
  std::vector<double> sweep_values;
  int sweep_seeds = 3;
  sweep->add_option("--config", sweep_config, "config file")->required();
  sweep->add_option("--param", sweep_param, "alpha | k | wm_size")->required();
  sweep->add_option("--values", sweep_values, "values to sweep")->required()->expected(-1);
  sweep->add_option("--seeds", sweep_seeds, "seeds per value");
  sweep->add_option("--mode", sweep_mode, "fedavg | waffle | tramark");
  sweep->add_option("--out", sweep_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (app.got_subcommand(run)) {
    return cmd_run(run_config, run_mode, run_seed, run_out, threads);
  }
  if (app.got_subcommand(verify)) {
    return cmd_verify(verify_ckpt, verify_wm_dir, verify_label, verify_client);
  }
  if (app.got_subcommand(attack)) {
    return cmd_attack(attack_ckpt, attack_kind, attack_ratio, attack_epochs, attack_lr,
                      attack_batch, attack_bits, attack_wm_dir, attack_test, attack_data,
                      attack_label, attack_seed, attack_out);
  }
  if (app.got_subcommand(sweep)) {
    return cmd_sweep(sweep_config, sweep_param, sweep_values, sweep_seeds, sweep_mode,
                     sweep_out, threads);
  }
  return 2;
}
