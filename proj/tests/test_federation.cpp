// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "tramark/federation.hpp"
#include "tramark/verification.hpp"

using namespace tramark;

namespace {

// Small, fast configuration used throughout this suite.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.clients = 4;
  cfg.rounds = 6;
  cfg.warmup_ratio = 0.5;
  cfg.local_iters = 2;
  cfg.local_lr = 0.05;
  cfg.batch_size = 8;
  cfg.partition_ratio = 0.05;
  cfg.wm_iters = 3;
  cfg.wm_lr = 0.05;
  cfg.wm_size = 8;
  cfg.wm_jitter = 0.08;
  cfg.hidden_sizes = {8};
  cfg.classes = 4;
  cfg.input_dim = 16;
  cfg.per_class = 30;
  cfg.test_per_class = 10;
  cfg.noise_std = 0.2;
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("local_training returns the post-minus-pre update") {
  const LabeledDataset shard = generate_synthetic(3, 10, 6, 0.2, 3);
  NetworkSpec spec{{6, 5, 3}};
  const ParameterVector model = init_parameters(spec, 5);

  Rng rng(7);
  const ParameterVector zero_lr = local_training(model, shard, 3, 0.0, 8, rng);
  for (float v : zero_lr.values) CHECK(v == 0.0f);

  // One full-batch step equals -lr * gradient.
  Rng rng2(7);
  const ParameterVector delta = local_training(model, shard, 1, 0.1, 1000, rng2);
  const auto [loss, grad] = loss_and_gradient(model, Batch{shard.inputs, shard.labels});
  (void)loss;
  for (std::size_t j = 0; j < delta.values.size(); ++j) {
    CHECK(delta.values[j] ==
          doctest::Approx(-0.1 * grad.values[j]).epsilon(1e-4).scale(1e-3));
  }

  Rng a(11), b(11), c(12);
  const ParameterVector da = local_training(model, shard, 4, 0.05, 4, a);
  const ParameterVector db = local_training(model, shard, 4, 0.05, 4, b);
  const ParameterVector dc = local_training(model, shard, 4, 0.05, 4, c);
  CHECK(da.values == db.values);
  CHECK(da.values != dc.values);

  LabeledDataset empty;
  Rng r(1);
  CHECK_THROWS_AS(local_training(model, empty, 1, 0.1, 8, r), std::invalid_argument);
}

TEST_CASE("fedavg mode keeps all client models identical") {
  const RunResult result = run_experiment(tiny_config(), Mode::FedAvg);
  REQUIRE(result.history.size() == 6);
  for (std::size_t i = 1; i < result.final_models.size(); ++i) {
    CHECK(result.final_models[i].values == result.final_models[0].values);
  }
  for (const RoundMetrics& m : result.history) {
    CHECK(m.min_pairwise_kl == 0.0);
  }
}

TEST_CASE("tramark and fedavg are bit-identical through the warmup phase") {
  const ExperimentConfig cfg = tiny_config();
  const RunResult tram = run_experiment(cfg, Mode::TraMark);
  const RunResult fed = run_experiment(cfg, Mode::FedAvg);
  const int warmup = cfg.warmup_rounds();
  REQUIRE(warmup == 3);
  for (int t = 0; t < warmup; ++t) {
    CHECK(tram.round_digests[t] == fed.round_digests[t]);
  }
  CHECK(tram.round_digests[warmup] != fed.round_digests[warmup]);
}

TEST_CASE("experiments are bit-reproducible for any worker count") {
  const ExperimentConfig cfg = tiny_config();
  const RunResult serial = run_experiment(cfg, Mode::TraMark, 1);
  const RunResult threaded = run_experiment(cfg, Mode::TraMark, 4);
  CHECK(serial.round_digests == threaded.round_digests);
  for (std::size_t i = 0; i < serial.final_models.size(); ++i) {
    CHECK(serial.final_models[i].values == threaded.final_models[i].values);
  }
  REQUIRE(serial.history.size() == threaded.history.size());
  for (std::size_t t = 0; t < serial.history.size(); ++t) {
    CHECK(serial.history[t].ma == threaded.history[t].ma);
    CHECK(serial.history[t].vr == threaded.history[t].vr);
    CHECK(serial.history[t].confidence == threaded.history[t].confidence);
    CHECK(serial.history[t].leakage == threaded.history[t].leakage);
    CHECK(serial.history[t].min_pairwise_kl == threaded.history[t].min_pairwise_kl);
  }
  CHECK(serial.masks.wm_mask == threaded.masks.wm_mask);
}

TEST_CASE("zero watermark learning rate keeps confidence at chance") {
  ExperimentConfig cfg = tiny_config();
  cfg.wm_lr = 0.0;
  cfg.rounds = 8;
  const RunResult result = run_experiment(cfg, Mode::TraMark);
  const double chance = 1.0 / cfg.classes;
  CHECK(result.final_round().confidence <= chance + 0.3);
}

TEST_CASE("round metrics are internally consistent and match the verify module") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 8;
  cfg.wm_lr = 0.1;
  cfg.wm_iters = 5;
  const RunResult result = run_experiment(cfg, Mode::TraMark);

  for (const RoundMetrics& m : result.history) {
    CHECK(m.interval == m.confidence - m.leakage);
    CHECK(m.ma >= 0.0);
    CHECK(m.ma <= 1.0);
    CHECK(m.vr >= 0.0);
    CHECK(m.vr <= 1.0);
    CHECK(m.min_pairwise_kl >= 0.0);
  }

  // The per-round fast path must agree with the standalone operations.
  const RoundMetrics& last = result.final_round();
  CHECK(last.vr ==
        verification_rate(result.final_models, result.watermarks, cfg.classes));
  const ConfidenceLeakage cl = confidence_and_leakage(result.final_models, result.watermarks);
  CHECK(last.confidence == doctest::Approx(cl.confidence).epsilon(1e-12));
  CHECK(last.leakage == doctest::Approx(cl.leakage).epsilon(1e-12));
  const CollisionReport collisions =
      collision_report(result.final_models, result.watermarks, cfg.collision_sigma);
  CHECK(last.min_pairwise_kl == doctest::Approx(min_offdiagonal_kl(collisions)).epsilon(1e-12));
}

TEST_CASE("masks are frozen, complementary and reproducible") {
  const ExperimentConfig cfg = tiny_config();
  const RunResult a = run_experiment(cfg, Mode::TraMark);
  const RunResult b = run_experiment(cfg, Mode::TraMark);
  CHECK(a.masks.wm_mask == b.masks.wm_mask);
  CHECK(a.masks.main_mask == b.masks.main_mask);
  const std::size_t d = a.final_models[0].values.size();
  REQUIRE(a.masks.size() == d);
  CHECK(a.masks.wm_count() ==
        static_cast<std::size_t>(std::llround(cfg.partition_ratio * static_cast<double>(d))));
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(a.masks.wm_mask[j] + a.masks.main_mask[j] == 1);
  }
}

TEST_CASE("client sampling trains a subset but injects watermarks for everyone") {
  ExperimentConfig cfg = tiny_config();
  cfg.sampling_fraction = 0.5;
  cfg.rounds = 8;
  cfg.wm_lr = 0.1;
  cfg.wm_iters = 5;
  const RunResult sampled = run_experiment(cfg, Mode::TraMark);
  REQUIRE(sampled.history.size() == 8);
  // Warmup rounds still produce one shared model.
  CHECK(sampled.history[0].min_pairwise_kl == 0.0);
  // Injection for all clients keeps confidence climbing above chance.
  CHECK(sampled.final_round().confidence > 1.0 / cfg.classes);
  const RunResult again = run_experiment(cfg, Mode::TraMark);
  CHECK(sampled.round_digests == again.round_digests);
}

TEST_CASE("fedavg-mode verification stays at chance level") {
  ExperimentConfig cfg = tiny_config();
  double vr_sum = 0.0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    cfg.seed = seed;
    const RunResult result = run_experiment(cfg, Mode::FedAvg);
    vr_sum += result.final_round().vr;
    CHECK(result.final_round().vr <= 2.0 / cfg.clients + 0.2);
  }
  CHECK(vr_sum / 3.0 <= 2.0 / cfg.clients + 0.2);
}

TEST_CASE("config validation names the offending key") {
  ExperimentConfig cfg = tiny_config();
  cfg.warmup_ratio = 0.99;  // rounds to all 6 rounds -> nothing left
  try {
    cfg.validate();
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("warmup_ratio") != std::string::npos);
  }
  cfg = tiny_config();
  cfg.local_lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.sampling_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.wm_lr = 0.0;  // allowed: disables injection without failing validation
  CHECK_NOTHROW(cfg.validate());
}
