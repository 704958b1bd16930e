// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "tramark/dataset.hpp"
#include "tramark/network.hpp"

namespace tramark {

struct VerificationReport {
  std::vector<double> per_label_accuracy;
  int predicted_owner_label = -1;  // -1 when the argmax is tied
  int assigned_label = -1;
  bool verified = false;
  double confidence = 0.0;  // accuracy on the assigned label's triggers
  double leakage = 0.0;     // mean accuracy across the other labels' triggers
};

struct CollisionReport {
  std::vector<std::vector<double>> pairwise_kl;  // n x n, diagonal zero
  double sigma = 0.0;
  std::vector<std::pair<int, int>> colliding_pairs;  // i < j
};

struct ConfidenceLeakage {
  double confidence = 0.0;
  double leakage = 0.0;
  double interval = 0.0;
};

// acc[c] = fraction of label-c samples predicted as c; labels without samples
// get accuracy 0.
std::vector<double> per_label_accuracy(const ParameterVector& model,
                                       const LabeledDataset& wm_testset);

// Fraction of the given trigger rows predicted as target_label.
double trigger_accuracy(const ParameterVector& model, const Matrix& triggers,
                        int target_label);

// Leaker verification: the model is attributed to its assigned label iff that
// label uniquely maximizes per-label accuracy. Ties fail.
VerificationReport verify_leaker(const ParameterVector& model, int assigned_label,
                                 const LabeledDataset& wm_testset);

// Labeled union of every client's holdout triggers.
LabeledDataset watermark_test_union(const std::vector<WatermarkDataset>& wms, int classes);

double verification_rate(const std::vector<ParameterVector>& models,
                         const std::vector<int>& assigned_labels,
                         const LabeledDataset& wm_testset);

// Experiment-level verification over holdout sets. When several clients share
// a target label (n > classes), the label argmax is refined by which client's
// own holdout set the model scores highest on.
std::vector<bool> verify_all(const std::vector<ParameterVector>& models,
                             const std::vector<WatermarkDataset>& wms, int classes);

double verification_rate(const std::vector<ParameterVector>& models,
                         const std::vector<WatermarkDataset>& wms, int classes);

// confidence = mean own-holdout accuracy; leakage = mean accuracy on other
// clients' holdouts; interval = confidence - leakage.
ConfidenceLeakage confidence_and_leakage(const std::vector<ParameterVector>& models,
                                         const std::vector<WatermarkDataset>& wms);

// Ownership: fraction of the injection triggers mapped to the target label
// reaches nu.
bool ownership_verify(const ParameterVector& model, const WatermarkDataset& wm, double nu);

// 0-floored KL between two probability rows with 1e-12 clamping, natural log.
double kl_divergence(std::span<const float> p, std::span<const float> q);

// pairwise_kl[i][j] = mean KL(model_i || model_j) over client i's holdout
// triggers; pair (i, j) collides when either direction is <= sigma.
CollisionReport collision_report(const std::vector<ParameterVector>& models,
                                 const std::vector<WatermarkDataset>& wms, double sigma);

double min_offdiagonal_kl(const CollisionReport& report);

}  // namespace tramark
