// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "tramark/dataset.hpp"
#include "tramark/errors.hpp"
#include "tramark/network.hpp"
#include "tramark/rng.hpp"

using namespace tramark;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("tramark_dataset_test_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

void write_u32_be(std::ofstream& f, std::uint32_t v) {
  const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(buf), 4);
}

void write_idx_pair(const fs::path& images, const fs::path& labels, std::uint32_t count,
                    std::uint32_t rows, std::uint32_t cols) {
  std::ofstream imgf(images, std::ios::binary);
  write_u32_be(imgf, 0x00000803u);
  write_u32_be(imgf, count);
  write_u32_be(imgf, rows);
  write_u32_be(imgf, cols);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(count) * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<unsigned char>(i % 251);
  imgf.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
  imgf.close();

  std::ofstream lblf(labels, std::ios::binary);
  write_u32_be(lblf, 0x00000801u);
  write_u32_be(lblf, count);
  std::vector<unsigned char> lbl(count);
  for (std::uint32_t i = 0; i < count; ++i) lbl[i] = static_cast<unsigned char>(i % 10);
  lblf.write(reinterpret_cast<const char*>(lbl.data()), count);
}

}  // namespace

TEST_CASE("zero noise reproduces the class template exactly") {
  const LabeledDataset ds = generate_synthetic(3, 4, 8, 0.0, 5);
  for (int c = 0; c < 3; ++c) {
    const float* first = ds.inputs.row(static_cast<std::size_t>(c) * 4);
    for (int s = 1; s < 4; ++s) {
      CHECK(std::memcmp(first, ds.inputs.row(static_cast<std::size_t>(c) * 4 + s),
                        8 * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("synthetic generator yields a uniform label histogram in [0,1]") {
  const LabeledDataset ds = generate_synthetic(10, 200, 16, 0.25, 7);
  CHECK(ds.size() == 2000);
  std::vector<int> histogram(10, 0);
  for (int label : ds.labels) ++histogram[label];
  for (int c = 0; c < 10; ++c) CHECK(histogram[c] == 200);
  for (float v : ds.inputs.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_THROWS_AS(generate_synthetic(10, 10, 16, -0.1, 7), std::invalid_argument);
}

TEST_CASE("growing per_class extends the dataset without changing earlier samples") {
  const LabeledDataset small = generate_synthetic(4, 10, 12, 0.2, 9);
  const LabeledDataset large = generate_synthetic(4, 15, 12, 0.2, 9);
  for (int c = 0; c < 4; ++c) {
    for (int s = 0; s < 10; ++s) {
      const float* a = small.inputs.row(static_cast<std::size_t>(c) * 10 + s);
      const float* b = large.inputs.row(static_cast<std::size_t>(c) * 15 + s);
      CHECK(std::memcmp(a, b, 12 * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("a fresh MLP fits the synthetic task in 50 full-batch steps") {
  const LabeledDataset ds = generate_synthetic(4, 25, 16, 0.1, 11);
  NetworkSpec spec{{16, 16, 4}};
  ParameterVector model = init_parameters(spec, 13);
  Batch batch{ds.inputs, ds.labels};
  for (int step = 0; step < 50; ++step) {
    auto [loss, grad] = loss_and_gradient(model, batch);
    (void)loss;
    model = sgd_step(model, grad, 0.5);
  }
  CHECK(accuracy(model, ds.inputs, ds.labels) >= 0.95);
}

TEST_CASE("near-uniform dirichlet concentration spreads every class evenly") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const LabeledDataset ds = generate_synthetic(3, 60, 8, 0.1, seed);
    const PartitionPlan plan = dirichlet_partition(ds, 5, 1e6, seed);
    for (const auto& indices : plan.client_indices) {
      std::vector<int> histogram(3, 0);
      for (int idx : indices) ++histogram[ds.labels[idx]];
      for (int c = 0; c < 3; ++c) {
        CHECK(histogram[c] >= 60 / 5 * 0.8);
        CHECK(histogram[c] <= 60 / 5 * 1.2);
      }
    }
  }
}

TEST_CASE("dirichlet partition is a disjoint cover with non-empty clients") {
  Rng rng(15);
  for (int trial = 0; trial < 6; ++trial) {
    const LabeledDataset ds = generate_synthetic(3, 40, 6, 0.3, rng.next_u64());
    const PartitionPlan plan = dirichlet_partition(ds, 7, 0.3, rng.next_u64());
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& indices : plan.client_indices) {
      CHECK(!indices.empty());
      total += indices.size();
      seen.insert(indices.begin(), indices.end());
    }
    CHECK(total == ds.size());
    CHECK(seen.size() == ds.size());
  }
}

TEST_CASE("single-class two-client split partitions all ten samples") {
  LabeledDataset ds;
  ds.class_count = 2;
  ds.inputs = Matrix(10, 3);
  ds.labels.assign(10, 0);
  const PartitionPlan plan = dirichlet_partition(ds, 2, 0.5, 21);
  std::set<int> seen;
  for (const auto& indices : plan.client_indices) seen.insert(indices.begin(), indices.end());
  CHECK(seen == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(plan.client_indices[0].size() + plan.client_indices[1].size() == 10);
}

TEST_CASE("dirichlet partition determinism and argument errors") {
  const LabeledDataset ds = generate_synthetic(3, 20, 6, 0.2, 23);
  const PartitionPlan a = dirichlet_partition(ds, 4, 0.5, 99);
  const PartitionPlan b = dirichlet_partition(ds, 4, 0.5, 99);
  CHECK(a.client_indices == b.client_indices);

  CHECK_THROWS_AS(dirichlet_partition(ds, 1, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_partition(ds, 4, 0.0, 1), std::invalid_argument);
  LabeledDataset tiny;
  tiny.class_count = 2;
  tiny.inputs = Matrix(2, 3);
  tiny.labels = {0, 1};
  CHECK_THROWS_AS(dirichlet_partition(tiny, 4, 0.5, 1), std::invalid_argument);
}

TEST_CASE("noise-pattern watermark datasets are distinct, disjoint and deterministic") {
  const auto wms = build_watermark_datasets(10, WatermarkSource::NoisePattern, 12, 64, 10, 31);
  REQUIRE(wms.size() == 10);
  std::set<int> targets;
  for (const auto& wm : wms) {
    CHECK(wm.triggers.rows == 12);
    CHECK(wm.holdout_triggers.rows == 12);
    targets.insert(wm.target_label);
  }
  CHECK(targets.size() == 10);  // unique labels when n <= classes

  // Brute-force disjointness, independent of the hashing helper.
  for (std::size_t i = 0; i < wms.size(); ++i) {
    for (std::size_t j = i + 1; j < wms.size(); ++j) {
      for (std::size_t r = 0; r < wms[i].triggers.rows; ++r) {
        for (std::size_t s = 0; s < wms[j].triggers.rows; ++s) {
          CHECK(std::memcmp(wms[i].triggers.row(r), wms[j].triggers.row(s),
                            64 * sizeof(float)) != 0);
        }
      }
    }
  }
  CHECK(triggers_disjoint(wms));

  const auto again = build_watermark_datasets(10, WatermarkSource::NoisePattern, 12, 64, 10, 31);
  for (std::size_t i = 0; i < wms.size(); ++i) {
    CHECK(wms[i].triggers.data == again[i].triggers.data);
    CHECK(wms[i].holdout_triggers.data == again[i].holdout_triggers.data);
  }
}

TEST_CASE("target labels wrap around when clients exceed classes") {
  const auto wms = build_watermark_datasets(12, WatermarkSource::NoisePattern, 4, 16, 10, 37);
  CHECK(wms[10].target_label == 0);
  CHECK(wms[11].target_label == 1);
  for (int i = 0; i < 10; ++i) CHECK(wms[i].target_label == i);
}

TEST_CASE("ood watermark source slices one label per client") {
  LabeledDataset ood;
  ood.class_count = 5;
  const int per_label = 8;
  ood.inputs = Matrix(5 * per_label, 6);
  Rng rng(41);
  for (float& v : ood.inputs.data) v = static_cast<float>(rng.next_double());
  for (int l = 0; l < 5; ++l) {
    for (int s = 0; s < per_label; ++s) ood.labels.push_back(l);
  }

  const auto wms = build_watermark_datasets(4, WatermarkSource::OodIdx, 4, 6, 10, 43, &ood);
  for (int i = 0; i < 4; ++i) {
    CHECK(wms[i].owner == i);
    CHECK(wms[i].target_label == i);
    CHECK(wms[i].triggers.rows == 4);
    CHECK(wms[i].holdout_triggers.rows == 4);
  }
  CHECK(triggers_disjoint(wms));

  CHECK_THROWS_AS(build_watermark_datasets(6, WatermarkSource::OodIdx, 4, 6, 10, 43, &ood),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_watermark_datasets(4, WatermarkSource::OodIdx, 5, 6, 10, 43, &ood),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_watermark_datasets(4, WatermarkSource::OodIdx, 4, 6, 10, 43, nullptr),
                  std::invalid_argument);
}

TEST_CASE("IDX loader round-trips a standard-format file") {
  const fs::path dir = temp_dir();
  const fs::path images = dir / "images.idx";
  const fs::path labels = dir / "labels.idx";
  write_idx_pair(images, labels, 10000, 28, 28);

  const LabeledDataset ds = load_idx(images.string(), labels.string());
  CHECK(ds.size() == 10000);
  CHECK(ds.input_dim() == 784);
  CHECK(ds.class_count == 10);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(ds.inputs.data[i] >= 0.0f);
    CHECK(ds.inputs.data[i] <= 1.0f);
  }
  CHECK(ds.inputs.data[1] == doctest::Approx(1.0f / 255.0f));
  fs::remove_all(dir);
}

TEST_CASE("IDX loader rejects malformed files") {
  const fs::path dir = temp_dir();
  const fs::path images = dir / "images.idx";
  const fs::path labels = dir / "labels.idx";
  write_idx_pair(images, labels, 4, 3, 3);

  // Count mismatch between the label file and the image file.
  {
    std::ofstream lblf(labels, std::ios::binary);
    write_u32_be(lblf, 0x00000801u);
    write_u32_be(lblf, 5);
    const char data[5] = {0, 1, 2, 3, 4};
    lblf.write(data, 5);
  }
  CHECK_THROWS_AS(load_idx(images.string(), labels.string()), FormatError);

  // Bad magic.
  {
    std::ofstream imgf(images, std::ios::binary);
    write_u32_be(imgf, 0xdeadbeefu);
    write_u32_be(imgf, 4);
    write_u32_be(imgf, 3);
    write_u32_be(imgf, 3);
  }
  CHECK_THROWS_AS(load_idx(images.string(), labels.string()), FormatError);

  // Empty file.
  {
    std::ofstream imgf(images, std::ios::binary);
  }
  CHECK_THROWS_AS(load_idx(images.string(), labels.string()), FormatError);

  // Truncated pixel payload; the error carries a byte offset.
  {
    std::ofstream imgf(images, std::ios::binary);
    write_u32_be(imgf, 0x00000803u);
    write_u32_be(imgf, 4);
    write_u32_be(imgf, 3);
    write_u32_be(imgf, 3);
    const std::vector<char> partial(10, 1);
    imgf.write(partial.data(), partial.size());
  }
  write_idx_pair(dir / "img2.idx", labels, 4, 3, 3);
  try {
    load_idx(images.string(), labels.string());
    CHECK(false);
  } catch (const FormatError& e) {
    CHECK(e.offset == 16 + 10);
  }
  fs::remove_all(dir);
}
