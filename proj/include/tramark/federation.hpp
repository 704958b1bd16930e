// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tramark/dataset.hpp"
#include "tramark/network.hpp"
#include "tramark/rng.hpp"
#include "tramark/watermark.hpp"

namespace tramark {

enum class Mode { FedAvg, Waffle, TraMark };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

// One flat configuration object covering the federation, the watermarking
// schedule, the model topology and the main-task data.
struct ExperimentConfig {
  // federation
  int clients = 10;
  int rounds = 40;
  double warmup_ratio = 0.5;       // fraction of rounds trained as plain FedAvg
  int local_iters = 5;
  double local_lr = 0.01;
  int batch_size = 32;
  double sampling_fraction = 1.0;  // clients drawn per round; injection covers all

  // watermarking
  double partition_ratio = 0.01;   // share of parameters in the watermarking region
  int wm_iters = 5;
  double wm_lr = 2.5e-2;
  int wm_size = 100;               // triggers per client (holdout is the same size)
  WatermarkSource wm_source = WatermarkSource::NoisePattern;
  std::string wm_images;           // IDX pair for the ood_idx source
  std::string wm_labels;
  double wm_jitter = 0.25;
  double collision_sigma = 0.05;
  double ownership_nu = 0.9;

  // model
  std::vector<int> hidden_sizes{128};

  // main-task data: synthetic by default, IDX files when data_images is set
  int classes = 10;
  int input_dim = 784;
  int per_class = 200;
  int test_per_class = 50;
  double noise_std = 0.25;
  double dirichlet_gamma = 0.5;
  std::string data_images;
  std::string data_labels;
  std::string test_images;
  std::string test_labels;

  std::uint64_t seed = 1;

  int warmup_rounds() const;
  NetworkSpec network_spec() const;
  void validate() const;  // throws invalid_argument naming the offending key

  bool operator==(const ExperimentConfig&) const = default;
};

struct ClientState {
  int id = 0;
  LabeledDataset shard;
  WatermarkDataset watermark;
  ParameterVector model;
};

struct RoundMetrics {
  int round = 0;
  double ma = 0.0;
  double vr = 0.0;
  double confidence = 0.0;
  double leakage = 0.0;
  double interval = 0.0;
  double min_pairwise_kl = 0.0;
};

struct RunResult {
  ExperimentConfig config;
  Mode mode = Mode::FedAvg;
  std::vector<RoundMetrics> history;
  std::vector<ParameterVector> final_models;
  RegionMasks masks;  // populated in tramark mode only
  std::vector<WatermarkDataset> watermarks;
  std::vector<LabeledDataset> shards;
  LabeledDataset test_set;
  std::vector<std::uint64_t> round_digests;  // hash of all client models per round

  const RoundMetrics& final_round() const { return history.back(); }
};

// tau_l mini-batch SGD steps over the shard; returns theta_after - theta_before.
// Batches of batch_size are drawn without replacement per step; a batch_size
// at or above the shard size uses the whole shard in natural order.
ParameterVector local_training(const ParameterVector& model, const LabeledDataset& shard,
                               int iters, double lr, int batch_size, Rng& rng);

// Full federated run. Every round before warmup_rounds() is plain FedAvg in
// all modes; afterwards tramark mode computes the region masks once from that
// round's FedAvg aggregate and then applies masked aggregation plus per-client
// injection, while waffle mode retrains the single global model on client 0's
// trigger set over the whole parameter space. Client work runs on `threads`
// workers; results are bit-identical for any thread count.
RunResult run_experiment(const ExperimentConfig& config, Mode mode, int threads = 1);

std::uint64_t digest_models(const std::vector<ParameterVector>& models);

}  // namespace tramark
