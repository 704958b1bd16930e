// SPDX-License-Identifier: Apache-2.0
#include "tramark/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tramark {

std::vector<double> per_label_accuracy(const ParameterVector& model,
                                       const LabeledDataset& wm_testset) {
  if (wm_testset.size() == 0) throw std::invalid_argument("empty watermark test set");
  const int classes = model.spec.output_dim();
  std::vector<int> hits(classes, 0), totals(classes, 0);
  const std::vector<int> predicted = predict(model, wm_testset.inputs);
  for (std::size_t r = 0; r < wm_testset.size(); ++r) {
    const int label = wm_testset.labels[r];
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("test label outside the model's class range");
    }
    ++totals[label];
    if (predicted[r] == label) ++hits[label];
  }
  std::vector<double> acc(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    if (totals[c] > 0) acc[c] = static_cast<double>(hits[c]) / totals[c];
  }
  return acc;
}

double trigger_accuracy(const ParameterVector& model, const Matrix& triggers,
                        int target_label) {
  if (triggers.rows == 0) throw std::invalid_argument("empty trigger set");
  const std::vector<int> predicted = predict(model, triggers);
  std::size_t hits = 0;
  for (int p : predicted) {
    if (p == target_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(triggers.rows);
}

namespace {

// Index of the unique maximum, or -1 on a tie.
int unique_argmax(const std::vector<double>& values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (static_cast<int>(i) != best && values[i] == values[best]) return -1;
  }
  return best;
}

}  // namespace

VerificationReport verify_leaker(const ParameterVector& model, int assigned_label,
                                 const LabeledDataset& wm_testset) {
  VerificationReport report;
  report.assigned_label = assigned_label;
  report.per_label_accuracy = per_label_accuracy(model, wm_testset);
  report.predicted_owner_label = unique_argmax(report.per_label_accuracy);
  report.verified = report.predicted_owner_label == assigned_label &&
                    report.predicted_owner_label >= 0;

  std::vector<bool> present(report.per_label_accuracy.size(), false);
  for (int label : wm_testset.labels) present[label] = true;
  if (assigned_label >= 0 && assigned_label < static_cast<int>(present.size())) {
    report.confidence = report.per_label_accuracy[assigned_label];
  }
  double sum = 0.0;
  int count = 0;
  for (std::size_t c = 0; c < present.size(); ++c) {
    if (!present[c] || static_cast<int>(c) == assigned_label) continue;
    sum += report.per_label_accuracy[c];
    ++count;
  }
  report.leakage = count > 0 ? sum / count : 0.0;
  return report;
}

LabeledDataset watermark_test_union(const std::vector<WatermarkDataset>& wms, int classes) {
  if (wms.empty()) throw std::invalid_argument("no watermark datasets");
  LabeledDataset ds;
  ds.class_count = classes;
  std::size_t rows = 0;
  for (const auto& wm : wms) rows += wm.holdout_triggers.rows;
  ds.inputs = Matrix(rows, wms[0].holdout_triggers.cols);
  ds.labels.resize(rows);
  std::size_t r = 0;
  for (const auto& wm : wms) {
    for (std::size_t i = 0; i < wm.holdout_triggers.rows; ++i, ++r) {
      const float* src = wm.holdout_triggers.row(i);
      std::copy(src, src + ds.inputs.cols, ds.inputs.row(r));
      ds.labels[r] = wm.target_label;
    }
  }
  return ds;
}

double verification_rate(const std::vector<ParameterVector>& models,
                         const std::vector<int>& assigned_labels,
                         const LabeledDataset& wm_testset) {
  if (models.size() != assigned_labels.size()) {
    throw std::invalid_argument("model and assignment counts differ");
  }
  if (models.empty()) throw std::invalid_argument("no models to verify");
  std::size_t verified = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (verify_leaker(models[i], assigned_labels[i], wm_testset).verified) ++verified;
  }
  return static_cast<double>(verified) / static_cast<double>(models.size());
}

std::vector<bool> verify_all(const std::vector<ParameterVector>& models,
                             const std::vector<WatermarkDataset>& wms, int classes) {
  if (models.size() != wms.size()) {
    throw std::invalid_argument("model and watermark counts differ");
  }
  const LabeledDataset test_union = watermark_test_union(wms, classes);
  const std::size_t n = models.size();
  std::vector<bool> verified(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const VerificationReport report =
        verify_leaker(models[i], wms[i].target_label, test_union);
    bool ok = report.verified;
    if (ok) {
      // Clients sharing a target label are disambiguated by which holdout set
      // the model responds to most strongly. Ties fail.
      const double own = trigger_accuracy(models[i], wms[i].holdout_triggers,
                                          wms[i].target_label);
      for (std::size_t j = 0; j < n && ok; ++j) {
        if (j == i || wms[j].target_label != wms[i].target_label) continue;
        const double other = trigger_accuracy(models[i], wms[j].holdout_triggers,
                                              wms[j].target_label);
        if (other >= own) ok = false;
      }
    }
    verified[i] = ok;
  }
  return verified;
}

double verification_rate(const std::vector<ParameterVector>& models,
                         const std::vector<WatermarkDataset>& wms, int classes) {
  const std::vector<bool> flags = verify_all(models, wms, classes);
  std::size_t hits = 0;
  for (bool f : flags) {
    if (f) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(flags.size());
}

ConfidenceLeakage confidence_and_leakage(const std::vector<ParameterVector>& models,
                                         const std::vector<WatermarkDataset>& wms) {
  const std::size_t n = models.size();
  if (n < 2) throw std::invalid_argument("need at least 2 clients");
  if (wms.size() != n) throw std::invalid_argument("model and watermark counts differ");

  double conf_sum = 0.0, leak_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    conf_sum += trigger_accuracy(models[i], wms[i].holdout_triggers, wms[i].target_label);
    double cross = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cross += trigger_accuracy(models[i], wms[j].holdout_triggers, wms[j].target_label);
    }
    leak_sum += cross / static_cast<double>(n - 1);
  }
  ConfidenceLeakage out;
  out.confidence = conf_sum / static_cast<double>(n);
  out.leakage = leak_sum / static_cast<double>(n);
  out.interval = out.confidence - out.leakage;
  return out;
}

bool ownership_verify(const ParameterVector& model, const WatermarkDataset& wm, double nu) {
  if (nu <= 0.0 || nu > 1.0) throw std::invalid_argument("nu must lie in (0, 1]");
  return trigger_accuracy(model, wm.triggers, wm.target_label) >= nu;
}

double kl_divergence(std::span<const float> p, std::span<const float> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distribution sizes differ");
  constexpr double kFloor = 1e-12;
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double pc = std::clamp(static_cast<double>(p[c]), kFloor, 1.0);
    const double qc = std::clamp(static_cast<double>(q[c]), kFloor, 1.0);
    kl += pc * (std::log(pc) - std::log(qc));
  }
  // Clamping can push the sum a hair below zero; KL itself cannot be negative.
  return kl < 0.0 ? 0.0 : kl;
}

CollisionReport collision_report(const std::vector<ParameterVector>& models,
                                 const std::vector<WatermarkDataset>& wms, double sigma) {
  const std::size_t n = models.size();
  if (n < 2) throw std::invalid_argument("need at least 2 clients");
  if (wms.size() != n) throw std::invalid_argument("model and watermark counts differ");

  CollisionReport report;
  report.sigma = sigma;
  report.pairwise_kl.assign(n, std::vector<double>(n, 0.0));

  for (std::size_t i = 0; i < n; ++i) {
    const Matrix own = forward(models[i], wms[i].holdout_triggers);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Matrix other = forward(models[j], wms[i].holdout_triggers);
      double sum = 0.0;
      for (std::size_t r = 0; r < own.rows; ++r) {
        sum += kl_divergence({own.row(r), own.cols}, {other.row(r), other.cols});
      }
      report.pairwise_kl[i][j] = sum / static_cast<double>(own.rows);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (report.pairwise_kl[i][j] <= sigma || report.pairwise_kl[j][i] <= sigma) {
        report.colliding_pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }
  return report;
}

double min_offdiagonal_kl(const CollisionReport& report) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = report.pairwise_kl.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) best = std::min(best, report.pairwise_kl[i][j]);
    }
  }
  return best;
}

}  // namespace tramark
