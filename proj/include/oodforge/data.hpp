// Copyright 2026 The oodforge Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef OODFORGE_DATA_HPP
#define OODFORGE_DATA_HPP

#include "oodforge/autograd.hpp"
#include "oodforge/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace oodforge::data {

using ag::ImageShape;

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Identity and normalization constants of a dataset. Generator-side pixels
/// always live in [-1, 1]; classifier-side standardization applies the
/// per-channel mean/stddev recorded here.
struct DatasetDescriptor {
  std::string name;
  ImageShape shape;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<double> channel_mean;    // in [-1, 1] units
  std::vector<double> channel_stddev;  // in [-1, 1] units
};

/// Batch of images, one per matrix row in c*(H*W)+h*W+w order, with a
/// declared value range that is validated (never silently clamped).
struct ImageBatch {
  Matrix pixels;
  ImageShape shape;
  double range_lo = -1.0;
  double range_hi = 1.0;

  ImageBatch() = default;
  ImageBatch(Matrix px, ImageShape sh, double lo = -1.0, double hi = 1.0);

  Eigen::Index size() const { return pixels.rows(); }
  ImageBatch rows(const std::vector<int>& idx) const;
};

/// Explicit, logged clamp into the declared range.
ImageBatch clamp_to_range(const ImageBatch& b, double lo, double hi);

struct LabeledDataset {
  ImageBatch images;
  std::vector<int> labels;
  Split split = Split::train;
  DatasetDescriptor descriptor;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return images.size(); }
  std::uint64_t fingerprint() const;
};

/// Per-channel standardization using descriptor constants and its inverse.
Matrix standardize(const ImageBatch& b, const DatasetDescriptor& d);
ImageBatch destandardize(const Matrix& m, const DatasetDescriptor& d);

struct LatentBatch {
  Matrix values;  // [N, Z], standard normal
};
LatentBatch sample_latent(int n, int z, Rng& rng);

struct FilterStats {
  std::int64_t candidates_generated = 0;
  std::int64_t accepted = 0;
  std::int64_t rejected_low = 0;
  std::int64_t rejected_high = 0;
};

enum class BenchmarkKind { near_ood, shifted };
std::string to_string(BenchmarkKind k);

struct BenchmarkManifest {
  BenchmarkKind kind = BenchmarkKind::near_ood;
  DatasetDescriptor source_dataset;
  double lambda_p = 0.0;
  double lambda_s = 0.0;
  double mi_lo = 0.0;
  double mi_hi = 0.0;
  std::string generator_checkpoint_id;
  std::uint64_t seed = 0;
  std::int64_t sample_count = 0;
  FilterStats filter_stats;
  std::vector<std::int64_t> source_indices;  // shifted only, one per sample
  std::string created_at;
  int format_version = 1;

  void validate() const;
  std::string to_json() const;
  static BenchmarkManifest from_json(const std::string& text);
};

// ----- raw tensor file format -----
// 16-byte magic "OODFORGE-TNSR\0\0\0", u32 format version, u8 dtype tag
// (1 = float64, 2 = int64), u8 rank, rank x u64 dims, then the payload in
// row-major order, all little-endian.
void write_tensor_f64(const std::filesystem::path& file, const Matrix& rows,
                      const std::vector<std::uint64_t>& dims);
Matrix read_tensor_f64(const std::filesystem::path& file,
                       std::vector<std::uint64_t>& dims);
void write_tensor_i64(const std::filesystem::path& file,
                      const std::vector<std::int64_t>& v);
std::vector<std::int64_t> read_tensor_i64(const std::filesystem::path& file);

// ----- benchmark export / import -----
std::filesystem::path export_benchmark(const ImageBatch& samples,
                                       const std::optional<std::vector<int>>& labels,
                                       const BenchmarkManifest& manifest,
                                       const std::filesystem::path& dir,
                                       bool overwrite = false);

struct ImportedBenchmark {
  ImageBatch samples;
  std::optional<std::vector<int>> labels;
  BenchmarkManifest manifest;
};
ImportedBenchmark import_benchmark(const std::filesystem::path& dir);

// ----- dataset registry -----
// Built-ins: "mnist" and "fashion-mnist" (standard IDX files under
// <root>/<name>/), plus procedurally generated sets that need no files:
// "synth-digits", "synth-shapes" (28x28 grayscale, 10 classes) and
// "synth-grid" (8x8, 2 classes, two-moons-style bump grids).
std::vector<std::string> registered_datasets();
bool dataset_needs_files(const std::string& name);
LabeledDataset load_dataset(const std::string& name, Split split,
                            const std::filesystem::path& root,
                            std::uint64_t seed = 0);

/// Uniform-noise images matching a descriptor's shape, in [-1, 1].
ImageBatch uniform_noise_images(int n, const ImageShape& shape, Rng& rng);

}  // namespace oodforge::data

#endif  // OODFORGE_DATA_HPP
