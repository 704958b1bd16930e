// SPDX-License-Identifier: Apache-2.0
#include "tramark/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tramark/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; add byte swapping for this platform");

namespace tramark {

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw IoError("cannot open " + path + " for writing");
  }
  void bytes(const void* data, std::size_t n) {
    f_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof(v)); }
  void u64(std::uint64_t v) { bytes(&v, sizeof(v)); }
  void close() {
    f_.close();
    if (!f_) throw IoError("failed writing " + path_);
  }

 private:
  std::string path_;
  std::ofstream f_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw FormatError("cannot open " + path, 0);
  }
  void bytes(void* data, std::size_t n, const char* what) {
    f_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f_.gcount()) != n) {
      throw FormatError(path_ + ": truncated " + what,
                        offset_ + static_cast<std::size_t>(f_.gcount()));
    }
    offset_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, sizeof(v), what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, sizeof(v), what);
    return v;
  }
  void magic(const char* expected) {
    char buf[5];
    bytes(buf, 5, "magic");
    if (std::memcmp(buf, expected, 5) != 0) {
      throw FormatError(path_ + ": bad magic, expected " + expected, 0);
    }
  }
  std::size_t offset() const { return offset_; }

 private:
  std::string path_;
  std::ifstream f_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParameterVector& params) {
  Writer w(path);
  w.bytes("TRMK1", 5);
  w.u32(static_cast<std::uint32_t>(params.spec.layer_sizes.size()));
  for (int s : params.spec.layer_sizes) w.u32(static_cast<std::uint32_t>(s));
  w.u64(params.values.size());
  w.bytes(params.values.data(), params.values.size() * sizeof(float));
  w.close();
}

ParameterVector load_checkpoint(const std::string& path) {
  Reader r(path);
  r.magic("TRMK1");
  const std::uint32_t layer_count = r.u32("layer count");
  if (layer_count < 2 || layer_count > 64) {
    throw FormatError(path + ": implausible layer count " + std::to_string(layer_count), 5);
  }
  NetworkSpec spec;
  spec.layer_sizes.resize(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    spec.layer_sizes[i] = static_cast<int>(r.u32("layer size"));
  }
  spec.validate();
  const std::uint64_t d = r.u64("parameter count");
  if (d != spec.param_count()) {
    throw FormatError(path + ": parameter count does not match layer sizes", r.offset() - 8);
  }
  ParameterVector params{spec, std::vector<float>(d)};
  r.bytes(params.values.data(), d * sizeof(float), "parameter payload");
  return params;
}

void save_mask(const std::string& path, const RegionMasks& masks) {
  Writer w(path);
  w.bytes("TMMK1", 5);
  const std::size_t d = masks.size();
  w.u32(static_cast<std::uint32_t>(d));
  std::vector<std::uint8_t> packed((d + 7) / 8, 0);
  for (std::size_t j = 0; j < d; ++j) {
    if (masks.wm_mask[j]) packed[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  }
  w.bytes(packed.data(), packed.size());
  w.close();
}

RegionMasks load_mask(const std::string& path) {
  Reader r(path);
  r.magic("TMMK1");
  const std::uint32_t d = r.u32("mask length");
  std::vector<std::uint8_t> packed((d + 7) / 8);
  r.bytes(packed.data(), packed.size(), "mask bits");
  RegionMasks masks;
  masks.wm_mask.resize(d);
  masks.main_mask.resize(d);
  std::size_t ones = 0;
  for (std::uint32_t j = 0; j < d; ++j) {
    const bool bit = (packed[j / 8] >> (j % 8)) & 1u;
    masks.wm_mask[j] = bit ? 1 : 0;
    masks.main_mask[j] = bit ? 0 : 1;
    if (bit) ++ones;
  }
  masks.ratio = d > 0 ? static_cast<double>(ones) / static_cast<double>(d) : 0.0;
  return masks;
}

void save_dataset(const std::string& path, const LabeledDataset& dataset) {
  Writer w(path);
  w.bytes("TMDS1", 5);
  w.u32(static_cast<std::uint32_t>(dataset.size()));
  w.u32(static_cast<std::uint32_t>(dataset.inputs.cols));
  w.u32(static_cast<std::uint32_t>(dataset.class_count));
  w.bytes(dataset.inputs.data.data(), dataset.inputs.data.size() * sizeof(float));
  std::vector<std::uint32_t> labels(dataset.labels.begin(), dataset.labels.end());
  w.bytes(labels.data(), labels.size() * sizeof(std::uint32_t));
  w.close();
}

LabeledDataset load_dataset(const std::string& path) {
  Reader r(path);
  r.magic("TMDS1");
  const std::uint32_t n = r.u32("sample count");
  const std::uint32_t dim = r.u32("input dimension");
  const std::uint32_t classes = r.u32("class count");
  LabeledDataset ds;
  ds.class_count = static_cast<int>(classes);
  ds.inputs = Matrix(n, dim);
  r.bytes(ds.inputs.data.data(), ds.inputs.data.size() * sizeof(float), "input payload");
  std::vector<std::uint32_t> labels(n);
  r.bytes(labels.data(), labels.size() * sizeof(std::uint32_t), "label payload");
  ds.labels.assign(labels.begin(), labels.end());
  for (int label : ds.labels) {
    if (label < 0 || label >= ds.class_count) {
      throw FormatError(path + ": label outside class range", r.offset());
    }
  }
  return ds;
}

}  // namespace tramark
