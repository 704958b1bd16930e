// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests of the command-line interface, run as subprocesses.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tramark/config.hpp"

using namespace tramark;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTinyConfig =
    "clients = 4\n"
    "rounds = 14\n"
    "warmup_ratio = 0.5\n"
    "local_iters = 4\n"
    "local_lr = 0.3\n"
    "batch_size = 16\n"
    "partition_ratio = 0.1\n"
    "wm_iters = 5\n"
    "wm_lr = 0.3\n"
    "wm_size = 8\n"
    "wm_jitter = 0.1\n"
    "hidden_sizes = 8\n"
    "classes = 4\n"
    "input_dim = 36\n"
    "per_class = 30\n"
    "test_per_class = 10\n"
    "noise_std = 0.1\n"
    "dirichlet_gamma = 2.0\n"
    "seed = 1\n";

fs::path work_dir() {
  static fs::path dir;
  if (dir.empty()) {
    dir = fs::temp_directory_path() / ("tramark_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  return dir;
}

int run_cli(const std::string& args, const fs::path& stdout_file = {},
            const fs::path& stderr_file = {}) {
  std::string cmd = std::string(TRAMARK_CLI_PATH) + " " + args;
  if (!stdout_file.empty()) cmd += " > " + stdout_file.string();
  if (!stderr_file.empty()) cmd += " 2> " + stderr_file.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path path = work_dir() / name;
  std::ofstream f(path);
  f << text;
  return path;
}

int count_lines(const std::string& text) {
  int lines = 0;
  for (char c : text) {
    if (c == '\n') ++lines;
  }
  return lines;
}

}  // namespace

TEST_CASE("run exports a complete, reproducible artifact set") {
  const fs::path cfg = write_config("tiny.conf", kTinyConfig);
  const fs::path out1 = work_dir() / "run1";
  const fs::path out2 = work_dir() / "run2";

  CHECK(run_cli("run --config " + cfg.string() + " --mode tramark --out-dir " + out1.string(),
                work_dir() / "run1.log") == 0);
  CHECK(run_cli("run --config " + cfg.string() + " --mode tramark --out-dir " + out2.string(),
                work_dir() / "run2.log") == 0);

  const std::string metrics = read_file(out1 / "metrics.csv");
  CHECK(count_lines(metrics) == 15);  // header + one row per round
  CHECK(metrics.substr(0, metrics.find('\n')) ==
        "round,ma,vr,confidence,leakage,interval,min_kl");
  CHECK(metrics == read_file(out2 / "metrics.csv"));

  // Every artifact named in the manifest exists.
  const json manifest = json::parse(read_file(out1 / "manifest.json"));
  REQUIRE(manifest.contains("artifacts"));
  int files_checked = 0;
  for (const auto& [key, value] : manifest["artifacts"].items()) {
    if (value.is_string()) {
      CHECK(fs::exists(out1 / value.get<std::string>()));
      ++files_checked;
    } else {
      for (const auto& entry : value) {
        CHECK(fs::exists(out1 / entry.get<std::string>()));
        ++files_checked;
      }
    }
  }
  CHECK(files_checked >= 4 * 4 + 5);
  CHECK(manifest["mode"] == "tramark");

  // The config snapshot parses back to the effective configuration.
  const ExperimentConfig original = parse_config_file(cfg.string());
  const ExperimentConfig snapshot = parse_config_file((out1 / "config.conf").string());
  CHECK(snapshot == original);
}

TEST_CASE("verify attributes a watermarked checkpoint and rejects corrupt input") {
  const fs::path out = work_dir() / "run1";
  REQUIRE(fs::exists(out / "manifest.json"));  // produced by the previous case

  const fs::path report_path = work_dir() / "verify.json";
  const int code = run_cli("verify --checkpoint " + (out / "checkpoints/client_00.trmk").string() +
                               " --wm-dir " + (out / "watermarks").string() +
                               " --assigned-label 0 --client 0",
                           report_path);
  CHECK(code == 0);
  const json report = json::parse(read_file(report_path));
  CHECK(report["verified"] == true);
  CHECK(report["assigned"] == 0);
  CHECK(report["predicted"] == 0);
  CHECK(report["client_id"] == 0);
  CHECK(report["per_label_accuracy"].size() == 4);

  // Wrong assigned label must not verify.
  CHECK(run_cli("verify --checkpoint " + (out / "checkpoints/client_00.trmk").string() +
                    " --wm-dir " + (out / "watermarks").string() + " --assigned-label 1",
                work_dir() / "verify_wrong.json") == 1);

  // Truncated checkpoint: exit 2.
  const fs::path broken = work_dir() / "broken.trmk";
  {
    const std::string bytes = read_file(out / "checkpoints/client_00.trmk");
    std::ofstream f(broken, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK(run_cli("verify --checkpoint " + broken.string() + " --wm-dir " +
                    (out / "watermarks").string() + " --assigned-label 0",
                work_dir() / "verify_broken.json", work_dir() / "verify_broken.err") == 2);
}

TEST_CASE("fedavg checkpoints are not traceable") {
  const fs::path cfg = write_config("tiny.conf", kTinyConfig);
  const fs::path out = work_dir() / "run_fedavg";
  CHECK(run_cli("run --config " + cfg.string() + " --mode fedavg --out-dir " + out.string(),
                work_dir() / "fedavg.log") == 0);

  // All models are identical, so at most one of two distinct labels verifies.
  const int c0 = run_cli("verify --checkpoint " + (out / "checkpoints/client_00.trmk").string() +
                             " --wm-dir " + (out / "watermarks").string() + " --assigned-label 0",
                         work_dir() / "fv0.json");
  const int c1 = run_cli("verify --checkpoint " + (out / "checkpoints/client_01.trmk").string() +
                             " --wm-dir " + (out / "watermarks").string() + " --assigned-label 1",
                         work_dir() / "fv1.json");
  CHECK(c0 >= 0);
  CHECK(c0 <= 1);
  CHECK(c1 >= 0);
  CHECK(c1 <= 1);
  CHECK(c0 + c1 >= 1);
}

TEST_CASE("run rejects a missing or invalid config") {
  CHECK(run_cli("run --config /nonexistent.conf --out-dir " + (work_dir() / "x").string(),
                work_dir() / "missing.log", work_dir() / "missing.err") == 2);

  const fs::path bad = write_config("bad.conf", "bogus_key = 3\n");
  const fs::path err = work_dir() / "badkey.err";
  CHECK(run_cli("run --config " + bad.string() + " --out-dir " + (work_dir() / "y").string(),
                work_dir() / "badkey.log", err) == 2);
  CHECK(read_file(err).find("bogus_key") != std::string::npos);
}

TEST_CASE("attack subcommand covers prune, quantize and finetune") {
  const fs::path out = work_dir() / "run1";
  const std::string ckpt = (out / "checkpoints/client_00.trmk").string();
  const std::string common = " --wm-dir " + (out / "watermarks").string() + " --test-set " +
                             (out / "test_set.tmds").string() + " --assigned-label 0";

  // ratio 0: the attacked checkpoint is byte-identical.
  const fs::path identical = work_dir() / "identical.trmk";
  const fs::path prune_json = work_dir() / "prune0.json";
  CHECK(run_cli("attack --checkpoint " + ckpt + " --kind prune --ratio 0.0" + common +
                    " --out " + identical.string(),
                prune_json) == 0);
  CHECK(read_file(identical) == read_file(out / "checkpoints/client_00.trmk"));
  const json diff = json::parse(read_file(prune_json));
  CHECK(diff["ma_before"] == diff["ma_after"]);
  CHECK(diff["verified_before"] == diff["verified_after"]);

  // Extreme pruning collapses main-task accuracy.
  const fs::path heavy = work_dir() / "heavy.trmk";
  const fs::path heavy_json = work_dir() / "prune99.json";
  CHECK(run_cli("attack --checkpoint " + ckpt + " --kind prune --ratio 0.99" + common +
                    " --out " + heavy.string(),
                heavy_json) == 0);
  const json heavy_diff = json::parse(read_file(heavy_json));
  CHECK(heavy_diff["ma_after"].get<double>() < 0.5);
  CHECK(heavy_diff["ma_before"].get<double>() > 0.9);

  const fs::path quant = work_dir() / "quant.trmk";
  const fs::path quant_json = work_dir() / "quant.json";
  CHECK(run_cli("attack --checkpoint " + ckpt + " --kind quantize --bits 8" + common +
                    " --out " + quant.string(),
                quant_json) == 0);
  const json qdiff = json::parse(read_file(quant_json));
  CHECK(qdiff["verified_before"] == true);
  CHECK(qdiff["verified_after"] == true);

  const fs::path tuned = work_dir() / "tuned.trmk";
  CHECK(run_cli("attack --checkpoint " + ckpt + " --kind finetune --epochs 2 --lr 0.05" +
                    common + " --data " + (out / "shards/client_00.tmds").string() + " --out " +
                    tuned.string(),
                work_dir() / "finetune.json") == 0);

  CHECK(run_cli("attack --checkpoint " + ckpt + " --kind scramble" + common + " --out " +
                    (work_dir() / "z.trmk").string(),
                work_dir() / "unknown.json", work_dir() / "unknown.err") == 2);
}

TEST_CASE("sweep writes one row per value and seed") {
  const fs::path cfg = write_config("tiny.conf", kTinyConfig);
  const fs::path csv = work_dir() / "sweep.csv";
  CHECK(run_cli("sweep --config " + cfg.string() + " --param k --values 0.05 0.1 --seeds 1" +
                    " --out " + csv.string(),
                work_dir() / "sweep.log", work_dir() / "sweep.err") == 0);
  const std::string text = read_file(csv);
  CHECK(count_lines(text) == 3);
  CHECK(text.substr(0, text.find('\n')) == "param,value,seed,ma,vr");

  CHECK(run_cli("sweep --config " + cfg.string() + " --param bogus --values 1 --out " +
                    (work_dir() / "s2.csv").string(),
                work_dir() / "sweep2.log", work_dir() / "sweep2.err") == 2);
}
