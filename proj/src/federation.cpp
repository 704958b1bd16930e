// SPDX-License-Identifier: Apache-2.0
#include "tramark/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tramark/parallel.hpp"
#include "tramark/verification.hpp"

namespace tramark {

namespace {

// Stream purposes for per-(round, client) seed derivation.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kShardStream = 2;
constexpr std::uint64_t kWatermarkStream = 3;
constexpr std::uint64_t kInitStream = 4;
constexpr std::uint64_t kSamplingStream = 5;
constexpr std::uint64_t kLocalStream = 6;

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::FedAvg: return "fedavg";
    case Mode::Waffle: return "waffle";
    case Mode::TraMark: return "tramark";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  if (name == "fedavg") return Mode::FedAvg;
  if (name == "waffle") return Mode::Waffle;
  if (name == "tramark") return Mode::TraMark;
  throw std::invalid_argument("unknown mode '" + name + "'");
}

int ExperimentConfig::warmup_rounds() const {
  return static_cast<int>(std::llround(warmup_ratio * rounds));
}

NetworkSpec ExperimentConfig::network_spec() const {
  NetworkSpec spec;
  spec.layer_sizes.push_back(input_dim);
  for (int h : hidden_sizes) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(classes);
  return spec;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "' " + why);
  };
  if (clients < 2) fail("clients", "must be at least 2");
  if (rounds < 1) fail("rounds", "must be at least 1");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) fail("warmup_ratio", "must lie in [0, 1)");
  if (warmup_rounds() >= rounds) fail("warmup_ratio", "leaves no rounds after warmup");
  if (local_iters < 1) fail("local_iters", "must be at least 1");
  if (local_lr <= 0.0) fail("local_lr", "must be positive");
  if (batch_size < 1) fail("batch_size", "must be at least 1");
  if (sampling_fraction <= 0.0 || sampling_fraction > 1.0) {
    fail("sampling_fraction", "must lie in (0, 1]");
  }
  if (partition_ratio <= 0.0 || partition_ratio >= 1.0) {
    fail("partition_ratio", "must lie in (0, 1)");
  }
  if (wm_iters < 0) fail("wm_iters", "must be non-negative");
  if (wm_lr < 0.0) fail("wm_lr", "must be non-negative");
  if (wm_size < 1) fail("wm_size", "must be at least 1");
  if (wm_jitter < 0.0) fail("wm_jitter", "must be non-negative");
  if (collision_sigma < 0.0) fail("collision_sigma", "must be non-negative");
  if (ownership_nu <= 0.0 || ownership_nu > 1.0) fail("ownership_nu", "must lie in (0, 1]");
  if (hidden_sizes.empty()) fail("hidden_sizes", "must name at least one hidden layer");
  for (int h : hidden_sizes) {
    if (h < 1) fail("hidden_sizes", "entries must be positive");
  }
  if (classes < 2) fail("classes", "must be at least 2");
  if (input_dim < 1) fail("input_dim", "must be positive");
  if (per_class < 1) fail("per_class", "must be at least 1");
  if (test_per_class < 1) fail("test_per_class", "must be at least 1");
  if (noise_std < 0.0) fail("noise_std", "must be non-negative");
  if (dirichlet_gamma <= 0.0) fail("dirichlet_gamma", "must be positive");
  if (wm_source == WatermarkSource::OodIdx && (wm_images.empty() || wm_labels.empty())) {
    fail("wm_images", "and wm_labels are required for wm_source = ood_idx");
  }
  if (!data_images.empty() && (data_labels.empty() || test_images.empty() || test_labels.empty())) {
    fail("data_images", "requires data_labels, test_images and test_labels");
  }
}

ParameterVector local_training(const ParameterVector& model, const LabeledDataset& shard,
                               int iters, double lr, int batch_size, Rng& rng) {
  if (shard.size() == 0) throw std::invalid_argument("empty local shard");
  if (iters < 0) throw std::invalid_argument("iterations must be non-negative");
  if (lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");

  const std::size_t d = model.values.size();
  ParameterVector delta{model.spec, std::vector<float>(d, 0.0f)};
  if (iters == 0 || lr == 0.0) return delta;

  const int n = static_cast<int>(shard.size());
  const int bs = std::min(batch_size, n);
  ParameterVector current = model;
  for (int s = 0; s < iters; ++s) {
    Batch batch;
    if (bs >= n) {
      batch.inputs = shard.inputs;
      batch.labels = shard.labels;
    } else {
      const std::vector<int> pick = rng.sample_without_replacement(n, bs);
      batch.inputs = Matrix(pick.size(), shard.inputs.cols);
      batch.labels.resize(pick.size());
      for (std::size_t r = 0; r < pick.size(); ++r) {
        const float* src = shard.inputs.row(pick[r]);
        std::copy(src, src + shard.inputs.cols, batch.inputs.row(r));
        batch.labels[r] = shard.labels[pick[r]];
      }
    }
    auto [loss, grad] = loss_and_gradient(current, batch);
    (void)loss;
    current = sgd_step(current, grad, lr);
  }
  for (std::size_t j = 0; j < d; ++j) {
    delta.values[j] = current.values[j] - model.values[j];
  }
  return delta;
}

std::uint64_t digest_models(const std::vector<ParameterVector>& models) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const ParameterVector& m : models) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(m.values.data());
    for (std::size_t i = 0; i < m.values.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

namespace {

struct ExperimentData {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<LabeledDataset> shards;
  std::vector<WatermarkDataset> watermarks;
};

ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  if (!cfg.data_images.empty()) {
    data.train = load_idx(cfg.data_images, cfg.data_labels);
    data.test = load_idx(cfg.test_images, cfg.test_labels);
    const int classes = std::max(data.train.class_count, data.test.class_count);
    data.train.class_count = classes;
    data.test.class_count = classes;
  } else {
    // One generator call, split per class: sample (c, s) depends only on
    // (seed, c, s), so the train half matches a per_class-only dataset.
    const LabeledDataset full =
        generate_synthetic(cfg.classes, cfg.per_class + cfg.test_per_class, cfg.input_dim,
                           cfg.noise_std, derive_seed(cfg.seed, kDataStream));
    std::vector<int> train_rows, test_rows;
    for (std::size_t r = 0; r < full.size(); ++r) {
      const int within = static_cast<int>(r) % (cfg.per_class + cfg.test_per_class);
      (within < cfg.per_class ? train_rows : test_rows).push_back(static_cast<int>(r));
    }
    data.train = extract_shard(full, train_rows);
    data.test = extract_shard(full, test_rows);
  }

  const PartitionPlan plan = dirichlet_partition(data.train, cfg.clients, cfg.dirichlet_gamma,
                                                 derive_seed(cfg.seed, kShardStream));
  data.shards.reserve(cfg.clients);
  for (int i = 0; i < cfg.clients; ++i) {
    data.shards.push_back(extract_shard(data.train, plan.client_indices[i]));
  }

  if (cfg.wm_source == WatermarkSource::OodIdx) {
    const LabeledDataset ood = load_idx(cfg.wm_images, cfg.wm_labels);
    data.watermarks = build_watermark_datasets(cfg.clients, cfg.wm_source, cfg.wm_size,
                                               cfg.input_dim, cfg.classes,
                                               derive_seed(cfg.seed, kWatermarkStream), &ood,
                                               cfg.wm_jitter);
  } else {
    data.watermarks = build_watermark_datasets(cfg.clients, cfg.wm_source, cfg.wm_size,
                                               cfg.input_dim, cfg.classes,
                                               derive_seed(cfg.seed, kWatermarkStream), nullptr,
                                               cfg.wm_jitter);
  }
  return data;
}

bool models_identical(const std::vector<ParameterVector>& models) {
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (std::memcmp(models[i].values.data(), models[0].values.data(),
                    models[0].values.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

RoundMetrics evaluate_round(int round, const std::vector<ParameterVector>& models,
                            const LabeledDataset& test,
                            const std::vector<WatermarkDataset>& wms, int classes,
                            int threads) {
  const int n = static_cast<int>(models.size());
  RoundMetrics m;
  m.round = round;

  const bool same = models_identical(models);

  // probs[a][b]: softmax rows of model a over client b's holdout triggers.
  // When all models coincide, row 0 stands in for every a.
  std::vector<double> test_acc(n, 0.0);
  std::vector<std::vector<Matrix>> probs(same ? 1 : n, std::vector<Matrix>(n));
  const int eval_models = same ? 1 : n;
  parallel_for(0, eval_models, threads, [&](int a) {
    test_acc[a] = accuracy(models[a], test.inputs, test.labels);
    for (int b = 0; b < n; ++b) {
      probs[a][b] = forward(models[a], wms[b].holdout_triggers);
    }
  });
  if (same) {
    for (int a = 1; a < n; ++a) test_acc[a] = test_acc[0];
  }
  auto probs_of = [&](int a, int b) -> const Matrix& { return probs[same ? 0 : a][b]; };

  // hits[a][b]: rows of holdout b that model a maps to b's target label.
  std::vector<std::vector<std::size_t>> hits(n, std::vector<std::size_t>(n, 0));
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const Matrix& p = probs_of(a, b);
      std::size_t h = 0;
      for (std::size_t r = 0; r < p.rows; ++r) {
        const float* row = p.row(r);
        const int arg = static_cast<int>(std::max_element(row, row + p.cols) - row);
        if (arg == wms[b].target_label) ++h;
      }
      hits[a][b] = h;
    }
  }

  double ma_sum = 0.0;
  for (int a = 0; a < n; ++a) ma_sum += test_acc[a];
  m.ma = ma_sum / n;

  double conf_sum = 0.0, leak_sum = 0.0;
  for (int a = 0; a < n; ++a) {
    conf_sum += static_cast<double>(hits[a][a]) / wms[a].holdout_triggers.rows;
    double cross = 0.0;
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      cross += static_cast<double>(hits[a][b]) / wms[b].holdout_triggers.rows;
    }
    leak_sum += cross / (n - 1);
  }
  m.confidence = conf_sum / n;
  m.leakage = leak_sum / n;
  m.interval = m.confidence - m.leakage;

  // Verification rate: per-label accuracy over the pooled holdouts, unique
  // argmax must hit the owner's label; clients sharing a label are separated
  // by own-holdout response.
  int verified = 0;
  for (int a = 0; a < n; ++a) {
    std::vector<double> label_hits(classes, 0.0), label_totals(classes, 0.0);
    for (int b = 0; b < n; ++b) {
      label_hits[wms[b].target_label] += static_cast<double>(hits[a][b]);
      label_totals[wms[b].target_label] += static_cast<double>(wms[b].holdout_triggers.rows);
    }
    std::vector<double> acc(classes, 0.0);
    for (int c = 0; c < classes; ++c) {
      if (label_totals[c] > 0.0) acc[c] = label_hits[c] / label_totals[c];
    }
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (acc[c] > acc[best]) best = c;
    }
    bool unique = true;
    for (int c = 0; c < classes; ++c) {
      if (c != best && acc[c] == acc[best]) unique = false;
    }
    bool ok = unique && best == wms[a].target_label;
    if (ok) {
      const double own = static_cast<double>(hits[a][a]) / wms[a].holdout_triggers.rows;
      for (int b = 0; b < n && ok; ++b) {
        if (b == a || wms[b].target_label != wms[a].target_label) continue;
        const double other = static_cast<double>(hits[a][b]) / wms[b].holdout_triggers.rows;
        if (other >= own) ok = false;
      }
    }
    if (ok) ++verified;
  }
  m.vr = static_cast<double>(verified) / n;

  // Pairwise KL over each client's own holdout; identical models give exact 0.
  if (same) {
    m.min_pairwise_kl = 0.0;
  } else {
    double min_kl = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const Matrix& own = probs_of(i, i);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const Matrix& other = probs_of(j, i);
        double sum = 0.0;
        for (std::size_t r = 0; r < own.rows; ++r) {
          sum += kl_divergence({own.row(r), own.cols}, {other.row(r), other.cols});
        }
        min_kl = std::min(min_kl, sum / static_cast<double>(own.rows));
      }
    }
    m.min_pairwise_kl = min_kl;
  }
  return m;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, Mode mode, int threads) {
  cfg.validate();
  const NetworkSpec spec = cfg.network_spec();
  ExperimentData data = build_experiment_data(cfg);
  const int n = cfg.clients;

  std::vector<ClientState> clients(n);
  {
    const ParameterVector init = init_parameters(spec, derive_seed(cfg.seed, kInitStream));
    for (int i = 0; i < n; ++i) {
      clients[i].id = i;
      clients[i].shard = data.shards[i];
      clients[i].watermark = data.watermarks[i];
      clients[i].model = init;
    }
  }

  RunResult result;
  result.config = cfg;
  result.mode = mode;
  const int warmup = cfg.warmup_rounds();
  const int sample_count = std::min(
      n, static_cast<int>(std::ceil(cfg.sampling_fraction * static_cast<double>(n))));
  RegionMasks masks;
  bool masks_ready = false;

  std::vector<ParameterVector> models(n);
  std::vector<ParameterVector> updates(n);

  for (int t = 0; t < cfg.rounds; ++t) {
    std::vector<int> participants;
    if (sample_count >= n) {
      participants.resize(n);
      std::iota(participants.begin(), participants.end(), 0);
    } else {
      Rng srng(derive_seed(cfg.seed, kSamplingStream, static_cast<std::uint64_t>(t)));
      participants = srng.sample_without_replacement(n, sample_count);
      std::sort(participants.begin(), participants.end());
    }

    for (int i = 0; i < n; ++i) {
      models[i] = clients[i].model;
      updates[i] = ParameterVector{spec, std::vector<float>(spec.param_count(), 0.0f)};
    }
    parallel_for(0, static_cast<int>(participants.size()), threads, [&](int k) {
      const int i = participants[k];
      Rng crng(derive_seed(cfg.seed, kLocalStream, static_cast<std::uint64_t>(t),
                           static_cast<std::uint64_t>(i)));
      updates[i] = local_training(clients[i].model, clients[i].shard, cfg.local_iters,
                                  cfg.local_lr, cfg.batch_size, crng);
    });

    if (t < warmup || mode == Mode::FedAvg) {
      const ParameterVector agg = fedavg_aggregate(models, updates, participants);
      for (int i = 0; i < n; ++i) clients[i].model = agg;
    } else if (mode == Mode::Waffle) {
      ParameterVector agg = fedavg_aggregate(models, updates, participants);
      agg = waffle_inject(agg, data.watermarks[0], cfg.wm_lr, cfg.wm_iters * n);
      for (int i = 0; i < n; ++i) clients[i].model = agg;
    } else {
      if (!masks_ready) {
        // Partition once, from this round's plain FedAvg aggregate, before any
        // watermark update exists. The masks stay frozen afterwards.
        masks = partition_masks(fedavg_aggregate(models, updates, participants),
                                cfg.partition_ratio);
        masks_ready = true;
      }
      std::vector<ParameterVector> personalized =
          masked_aggregate(models, updates, masks, participants);
      parallel_for(0, n, threads, [&](int i) {
        personalized[i] = inject_watermark(personalized[i], data.watermarks[i], masks,
                                           cfg.wm_lr, cfg.wm_iters);
      });
      for (int i = 0; i < n; ++i) clients[i].model = std::move(personalized[i]);
    }

    for (int i = 0; i < n; ++i) models[i] = clients[i].model;
    result.history.push_back(
        evaluate_round(t, models, data.test, data.watermarks, cfg.classes, threads));
    result.round_digests.push_back(digest_models(models));
  }

  result.final_models = std::move(models);
  result.masks = std::move(masks);
  result.watermarks = std::move(data.watermarks);
  result.shards = std::move(data.shards);
  result.test_set = std::move(data.test);
  return result;
}

}  // namespace tramark
