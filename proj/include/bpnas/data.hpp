// SPDX-License-Identifier: Apache-2.0
//
// Toy classification datasets: seeded synthetic generators, a hash-based
// train/val/test split, and readers/writers for IDX and headered CSV files.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <span>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bpnas/rng.hpp"
#include "bpnas/tensor.hpp"

namespace bpnas {

class DataError : public Error {
 public:
  using Error::Error;
};

enum class Split : std::uint8_t { train, val, test };

struct Batch {
  Tensor x;
  std::vector<int> y;
};

struct Dataset {
  Tensor samples;  // [N, feature dims...]
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }

  Shape feature_shape() const { return Shape(samples.shape().begin() + 1, samples.shape().end()); }
  std::size_t feature_size() const { return numel(feature_shape()); }

  void validate() const {
    if (samples.rank() < 2 || samples.dim(0) != labels.size()) throw DataError("dataset: sample/label count mismatch");
    if (splits.size() != labels.size()) throw DataError("dataset: split tags do not cover every sample");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw DataError("dataset: label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) + " out of range");
    }
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) idx.push_back(i);
    return idx;
  }

  std::vector<std::size_t> indices(std::initializer_list<Split> ss) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (std::find(ss.begin(), ss.end(), splits[i]) != ss.end()) idx.push_back(i);
    return idx;
  }

  Batch gather(std::span<const std::size_t> idx) const {
    const std::size_t f = feature_size();
    Shape shape = samples.shape();
    shape[0] = idx.size();
    Batch b{Tensor(shape), {}};
    b.y.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(samples.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * f), f,
                  b.x.data().begin() + static_cast<std::ptrdiff_t>(r * f));
      b.y.push_back(labels[idx[r]]);
    }
    return b;
  }
};

/// Split tag of one sample; a pure function of (seed, index).
inline Split split_of(std::uint64_t seed, std::size_t index, double train_fraction, double val_fraction) {
  const double u = unit_interval(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index))));
  if (u < train_fraction) return Split::train;
  if (u < train_fraction + val_fraction) return Split::val;
  return Split::test;
}

inline void assign_splits(Dataset& ds, double train_fraction, double val_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0 && val_fraction > 0.0 && val_fraction < 1.0 &&
        train_fraction + val_fraction <= 1.0))
    throw DataError("split fractions must lie in (0,1) and sum to at most 1");
  ds.splits.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) ds.splits[i] = split_of(seed, i, train_fraction, val_fraction);
}

/// Gaussian clusters around seeded centers drawn uniformly from [-4, 4]^dims.
inline Dataset gen_blobs(int num_classes, std::size_t samples_per_class, std::size_t dims, double noise_sigma,
                         std::uint64_t seed) {
  if (num_classes < 1 || samples_per_class < 1 || dims < 1 || noise_sigma < 0.0)
    throw DataError("gen_blobs: parameters must be positive");
  Rng rng(seed);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(num_classes), std::vector<double>(dims));
  for (auto& c : centers)
    for (auto& v : c) v = rng.uniform(-4.0, 4.0);
  const std::size_t n = samples_per_class * static_cast<std::size_t>(num_classes);
  Dataset ds{Tensor(Shape{n, dims}), {}, num_classes, std::vector<Split>(n, Split::train)};
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s, ++r) {
      for (std::size_t d = 0; d < dims; ++d) ds.samples[r * dims + d] = centers[c][d] + noise_sigma * rng.normal();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

/// Interleaved 2-D spiral arms, one per class. Radius grows linearly along
/// each arm while the angle turns by 3*pi; noise perturbs the angle.
inline Dataset gen_spirals(int num_classes, std::size_t samples_per_class, double noise_sigma, std::uint64_t seed) {
  if (num_classes < 1 || samples_per_class < 1 || noise_sigma < 0.0)
    throw DataError("gen_spirals: parameters must be positive");
  Rng rng(seed);
  const std::size_t n = samples_per_class * static_cast<std::size_t>(num_classes);
  Dataset ds{Tensor(Shape{n, 2}), {}, num_classes, std::vector<Split>(n, Split::train)};
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s, ++row) {
      const double r = 0.1 + 0.9 * static_cast<double>(s) / static_cast<double>(samples_per_class);
      const double t = 2.0 * std::numbers::pi * c / num_classes + 3.0 * std::numbers::pi * r + noise_sigma * rng.normal();
      ds.samples[row * 2] = r * std::cos(t);
      ds.samples[row * 2 + 1] = r * std::sin(t);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// IDX ---------------------------------------------------------------------------

struct IdxArray {
  std::uint8_t type_code = 0x08;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

inline std::size_t idx_type_size(std::uint8_t code) {
  switch (code) {
    case 0x08: case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C: case 0x0D: return 4;
    case 0x0E: return 8;
    default: return 0;
  }
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint64_t read_be(const unsigned char* p, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

/// Parses an IDX file. Errors report the byte offset of the problem.
inline IdxArray read_idx(const std::string& path) {
  const auto bytes = detail::read_file(path);
  auto fail = [&](std::size_t off, const std::string& what) -> DataError {
    return DataError(path + ": byte offset " + std::to_string(off) + ": " + what);
  };
  if (bytes.size() < 4) throw fail(bytes.size(), "truncated magic number");
  if (bytes[0] != 0 || bytes[1] != 0) throw fail(0, "bad magic number");
  IdxArray a;
  a.type_code = bytes[2];
  const std::size_t elem = detail::idx_type_size(a.type_code);
  if (elem == 0) throw fail(2, "unknown element type code");
  const std::size_t rank = bytes[3];
  if (rank == 0) throw fail(3, "zero dimensions");
  if (bytes.size() < 4 + 4 * rank) throw fail(bytes.size(), "truncated dimension header");
  for (std::size_t d = 0; d < rank; ++d) {
    auto extent = static_cast<std::size_t>(detail::read_be(&bytes[4 + 4 * d], 4));
    if (extent == 0) throw fail(4 + 4 * d, "zero extent");
    a.shape.push_back(extent);
  }
  const std::size_t offset = 4 + 4 * rank;
  const std::size_t count = numel(a.shape);
  if (bytes.size() < offset + count * elem) throw fail(bytes.size(), "truncated data: expected " +
                                                                     std::to_string(offset + count * elem) + " bytes");
  if (bytes.size() > offset + count * elem) throw fail(offset + count * elem, "trailing bytes after data");
  a.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = &bytes[offset + i * elem];
    const std::uint64_t raw = detail::read_be(p, elem);
    switch (a.type_code) {
      case 0x08: a.values[i] = static_cast<double>(raw); break;
      case 0x09: a.values[i] = static_cast<double>(static_cast<std::int8_t>(raw)); break;
      case 0x0B: a.values[i] = static_cast<double>(static_cast<std::int16_t>(raw)); break;
      case 0x0C: a.values[i] = static_cast<double>(static_cast<std::int32_t>(raw)); break;
      case 0x0D: a.values[i] = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(raw))); break;
      case 0x0E: a.values[i] = std::bit_cast<double>(raw); break;
    }
  }
  return a;
}

/// Writes unsigned-byte IDX (type 0x08); values must be integers in [0, 255].
inline void write_idx(const std::string& path, const Shape& shape, std::span<const double> values) {
  if (numel(shape) != values.size() || shape.empty() || shape.size() > 255) throw DataError("write_idx: bad shape");
  std::vector<unsigned char> out{0, 0, 0x08, static_cast<unsigned char>(shape.size())};
  for (auto e : shape)
    for (int b = 3; b >= 0; --b) out.push_back(static_cast<unsigned char>((e >> (8 * b)) & 0xff));
  for (double v : values) {
    if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw DataError("write_idx: value " + std::to_string(v) + " not a byte");
    out.push_back(static_cast<unsigned char>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

/// Image/label IDX pair. Pixel values are scaled by 1/255 for unsigned-byte images.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::optional<int> num_classes = std::nullopt) {
  IdxArray img = read_idx(images_path);
  IdxArray lab = read_idx(labels_path);
  if (lab.shape.size() != 1) throw DataError(labels_path + ": byte offset 3: labels must be 1-D");
  if (img.shape.size() < 2) throw DataError(images_path + ": byte offset 3: images need at least 2 dimensions");
  if (img.shape[0] != lab.shape[0]) throw DataError(labels_path + ": byte offset 4: count differs from images");
  if (img.type_code == 0x08)
    for (double& v : img.values) v /= 255.0;
  Dataset ds;
  ds.samples = Tensor(img.shape, std::move(img.values));
  int max_label = -1;
  for (std::size_t i = 0; i < lab.values.size(); ++i) {
    const int l = static_cast<int>(lab.values[i]);
    if (l < 0 || (num_classes && l >= *num_classes))
      throw DataError(labels_path + ": label " + std::to_string(l) + " out of range at row " + std::to_string(i));
    max_label = std::max(max_label, l);
    ds.labels.push_back(l);
  }
  ds.num_classes = num_classes.value_or(max_label + 1);
  ds.splits.assign(ds.size(), Split::train);
  return ds;
}

// CSV -------------------------------------------------------------------------

/// Headered CSV `label,f0,f1,...`, one sample per row. Row numbers in errors
/// are 1-based file lines.
inline Dataset load_csv(const std::string& path, std::optional<int> num_classes = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": byte offset 0: missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "label") throw DataError(path + ": byte offset 0: header must start with 'label'");
  std::size_t offset = 6;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i] != "f" + std::to_string(i - 1))
      throw DataError(path + ": byte offset " + std::to_string(offset) + ": expected column f" + std::to_string(i - 1));
    offset += header[i].size() + 1;
  }
  const std::size_t nf = header.size() - 1;
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != nf + 1)
      throw DataError(path + ": row " + std::to_string(row) + ": expected " + std::to_string(nf + 1) + " columns");
    try {
      std::size_t used = 0;
      const int label = std::stoi(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument("label");
      if (label < 0 || (num_classes && label >= *num_classes))
        throw DataError(path + ": row " + std::to_string(row) + ": label " + std::to_string(label) + " out of range");
      labels.push_back(label);
      max_label = std::max(max_label, label);
      for (std::size_t f = 1; f <= nf; ++f) {
        const double v = std::stod(cells[f], &used);
        if (used != cells[f].size()) throw std::invalid_argument("value");
        values.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw DataError(path + ": row " + std::to_string(row) + ": unparsable value");
    }
  }
  if (labels.empty()) throw DataError(path + ": no data rows");
  Dataset ds;
  ds.samples = Tensor(Shape{labels.size(), nf}, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = num_classes.value_or(max_label + 1);
  ds.splits.assign(ds.size(), Split::train);
  return ds;
}

inline void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  const std::size_t nf = ds.feature_size();
  out << "label";
  for (std::size_t f = 0; f < nf; ++f) out << ",f" << f;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (std::size_t f = 0; f < nf; ++f) out << ',' << ds.samples[i * nf + f];
    out << '\n';
  }
}

}  // namespace bpnas
