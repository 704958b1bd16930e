// SPDX-License-Identifier: Apache-2.0
#include "tramark/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tramark {

std::size_t RegionMasks::wm_count() const {
  std::size_t c = 0;
  for (std::uint8_t b : wm_mask) c += b;
  return c;
}

std::vector<std::uint8_t> smallest_magnitude_mask(std::span<const float> values,
                                                  std::size_t count) {
  const std::size_t d = values.size();
  if (count > d) throw std::invalid_argument("selection count exceeds vector length");
  std::vector<std::uint8_t> mask(d, 0);
  if (count == 0) return mask;
  std::vector<std::uint32_t> order(d);
  std::iota(order.begin(), order.end(), 0u);
  auto less = [&](std::uint32_t a, std::uint32_t b) {
    const float ma = std::fabs(values[a]);
    const float mb = std::fabs(values[b]);
    if (ma != mb) return ma < mb;
    return a < b;  // tie -> lower index first
  };
  std::nth_element(order.begin(), order.begin() + (count - 1), order.end(), less);
  for (std::size_t i = 0; i < count; ++i) mask[order[i]] = 1;
  return mask;
}

RegionMasks partition_masks(const ParameterVector& global_model, double ratio) {
  if (ratio <= 0.0 || ratio >= 1.0) {
    throw std::invalid_argument("partition ratio must lie in (0, 1)");
  }
  const std::size_t d = global_model.values.size();
  const std::size_t count = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(d)));
  if (count == 0) {
    throw std::invalid_argument("partition ratio selects an empty watermarking region");
  }
  RegionMasks masks;
  masks.ratio = ratio;
  masks.wm_mask = smallest_magnitude_mask(global_model.values, count);
  masks.main_mask.resize(d);
  for (std::size_t j = 0; j < d; ++j) masks.main_mask[j] = masks.wm_mask[j] ? 0 : 1;
  return masks;
}

namespace {

void check_same_length(const std::vector<ParameterVector>& models,
                       const std::vector<ParameterVector>& updates) {
  if (models.empty()) throw std::invalid_argument("no models to aggregate");
  if (models.size() != updates.size()) {
    throw std::invalid_argument("model and update counts differ");
  }
  const std::size_t d = models[0].values.size();
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].values.size() != d || updates[i].values.size() != d) {
      throw std::invalid_argument("parameter dimension mismatch across clients");
    }
  }
}

// Mean of (model + update) over the given client ids, accumulated in double
// in the id order passed in.
std::vector<float> mean_of_sums(const std::vector<ParameterVector>& models,
                                const std::vector<ParameterVector>& updates,
                                std::span<const int> ids) {
  const std::size_t d = models[0].values.size();
  std::vector<double> acc(d, 0.0);
  for (int i : ids) {
    const std::vector<float>& m = models[i].values;
    const std::vector<float>& u = updates[i].values;
    for (std::size_t j = 0; j < d; ++j) {
      acc[j] += static_cast<double>(m[j] + u[j]);
    }
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  std::vector<float> mean(d);
  for (std::size_t j = 0; j < d; ++j) mean[j] = static_cast<float>(acc[j] * inv);
  return mean;
}

std::vector<int> all_ids(std::size_t n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

ParameterVector fedavg_aggregate(const std::vector<ParameterVector>& models,
                                 const std::vector<ParameterVector>& updates,
                                 std::span<const int> participants) {
  check_same_length(models, updates);
  std::vector<int> everyone;
  if (participants.empty()) {
    everyone = all_ids(models.size());
    participants = everyone;
  }
  ParameterVector out{models[0].spec, mean_of_sums(models, updates, participants)};
  return out;
}

std::vector<ParameterVector> masked_aggregate(const std::vector<ParameterVector>& models,
                                              const std::vector<ParameterVector>& updates,
                                              const RegionMasks& masks,
                                              std::span<const int> participants) {
  check_same_length(models, updates);
  const std::size_t n = models.size();
  const std::size_t d = models[0].values.size();
  if (masks.size() != d) throw std::invalid_argument("mask length does not match model");

  std::vector<int> everyone;
  if (participants.empty()) {
    everyone = all_ids(n);
    participants = everyone;
  }
  const std::vector<float> mean = mean_of_sums(models, updates, participants);

  std::vector<ParameterVector> personalized(n);
  for (std::size_t i = 0; i < n; ++i) {
    personalized[i].spec = models[i].spec;
    std::vector<float>& out = personalized[i].values;
    out.resize(d);
    const std::vector<float>& m = models[i].values;
    const std::vector<float>& u = updates[i].values;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = masks.main_mask[j] ? mean[j] : m[j] + u[j];
    }
  }
  return personalized;
}

ParameterVector inject_watermark(const ParameterVector& model, const WatermarkDataset& wm,
                                 const RegionMasks& masks, double wm_lr, int wm_iters) {
  if (wm.triggers.rows == 0) throw std::invalid_argument("empty watermark dataset");
  if (wm_lr < 0.0) throw std::invalid_argument("watermark learning rate must be non-negative");
  if (wm_iters == 0 || wm_lr == 0.0) return model;

  Batch batch{wm.triggers, std::vector<int>(wm.triggers.rows, wm.target_label)};
  ParameterVector current = model;
  for (int s = 0; s < wm_iters; ++s) {
    auto [loss, grad] = loss_and_gradient(current, batch);
    (void)loss;
    current = sgd_step(current, grad, wm_lr, masks.wm_mask);
  }
  return current;
}

ParameterVector waffle_inject(const ParameterVector& model, const WatermarkDataset& wm,
                              double wm_lr, int iters) {
  if (wm.triggers.rows == 0) throw std::invalid_argument("empty watermark dataset");
  if (wm_lr < 0.0) throw std::invalid_argument("watermark learning rate must be non-negative");
  if (iters == 0 || wm_lr == 0.0) return model;

  Batch batch{wm.triggers, std::vector<int>(wm.triggers.rows, wm.target_label)};
  ParameterVector current = model;
  for (int s = 0; s < iters; ++s) {
    auto [loss, grad] = loss_and_gradient(current, batch);
    (void)loss;
    current = sgd_step(current, grad, wm_lr);
  }
  return current;
}

}  // namespace tramark
