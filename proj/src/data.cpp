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

#include "oodforge/data.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace oodforge::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw Error("unreachable split");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split: " + s);
}

std::string to_string(BenchmarkKind k) {
  return k == BenchmarkKind::near_ood ? "near_ood" : "shifted";
}

ImageBatch::ImageBatch(Matrix px, ImageShape sh, double lo, double hi)
    : pixels(std::move(px)), shape(sh), range_lo(lo), range_hi(hi) {
  check(pixels.rows() >= 1, "ImageBatch: N must be >= 1");
  check(pixels.cols() == sh.size(), "ImageBatch: pixel count does not match shape");
  check_finite(pixels, "ImageBatch");
  check(lo < hi, "ImageBatch: invalid range");
  if (pixels.minCoeff() < lo - 1e-9 || pixels.maxCoeff() > hi + 1e-9)
    throw InvalidArgument("ImageBatch: pixels outside declared range [" +
                          std::to_string(lo) + ", " + std::to_string(hi) +
                          "]; clamp explicitly if intended");
}

ImageBatch ImageBatch::rows(const std::vector<int>& idx) const {
  Matrix out(static_cast<Eigen::Index>(idx.size()), pixels.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = pixels.row(idx[i]);
  return ImageBatch(std::move(out), shape, range_lo, range_hi);
}

ImageBatch clamp_to_range(const ImageBatch& b, double lo, double hi) {
  Matrix px = b.pixels.array().min(hi).max(lo);
  return ImageBatch(std::move(px), b.shape, lo, hi);
}

std::uint64_t LabeledDataset::fingerprint() const {
  std::uint64_t h = fnv1a(images.pixels);
  h = fnv1a(labels.data(), labels.size() * sizeof(int), h);
  h = fnv1a(descriptor.name.data(), descriptor.name.size(), h);
  return h;
}

Matrix standardize(const ImageBatch& b, const DatasetDescriptor& d) {
  check(static_cast<int>(d.channel_mean.size()) == b.shape.channels &&
            static_cast<int>(d.channel_stddev.size()) == b.shape.channels,
        "standardize: descriptor channel constants mismatch");
  Matrix out = b.pixels;
  const int hw = b.shape.height * b.shape.width;
  for (int c = 0; c < b.shape.channels; ++c)
    out.middleCols(c * hw, hw) =
        (out.middleCols(c * hw, hw).array() - d.channel_mean[c]) / d.channel_stddev[c];
  return out;
}

ImageBatch destandardize(const Matrix& m, const DatasetDescriptor& d) {
  Matrix out = m;
  const int hw = d.shape.height * d.shape.width;
  for (int c = 0; c < d.shape.channels; ++c)
    out.middleCols(c * hw, hw) =
        out.middleCols(c * hw, hw).array() * d.channel_stddev[c] + d.channel_mean[c];
  return ImageBatch(std::move(out), d.shape);
}

LatentBatch sample_latent(int n, int z, Rng& rng) {
  check(n >= 1 && z >= 1, "sample_latent: n and z must be positive");
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix v(n, z);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < z; ++j) v(i, j) = dist(rng);
  return LatentBatch{std::move(v)};
}

ImageBatch uniform_noise_images(int n, const ImageShape& shape, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix px(n, shape.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < shape.size(); ++j) px(i, j) = dist(rng);
  return ImageBatch(std::move(px), shape);
}

// ----- manifest -----

void BenchmarkManifest::validate() const {
  check(mi_lo >= 0.0 && mi_lo < mi_hi, "manifest: MI interval must satisfy 0 <= lo < hi");
  check(lambda_p >= 0.0 && lambda_s >= 0.0, "manifest: lambdas must be nonnegative");
  check(sample_count >= 0, "manifest: negative sample_count");
  check(filter_stats.accepted + filter_stats.rejected_low + filter_stats.rejected_high ==
            filter_stats.candidates_generated,
        "manifest: filter stats do not partition candidates_generated");
  if (kind == BenchmarkKind::shifted)
    check(static_cast<std::int64_t>(source_indices.size()) == sample_count,
          "manifest: shifted benchmarks need one source index per sample");
}

namespace {

json descriptor_to_json(const DatasetDescriptor& d) {
  return json{{"name", d.name},
              {"shape", {d.shape.channels, d.shape.height, d.shape.width}},
              {"num_classes", d.num_classes},
              {"class_names", d.class_names},
              {"channel_mean", d.channel_mean},
              {"channel_stddev", d.channel_stddev}};
}

DatasetDescriptor descriptor_from_json(const json& j) {
  DatasetDescriptor d;
  d.name = j.at("name").get<std::string>();
  auto sh = j.at("shape");
  d.shape = ImageShape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
  d.num_classes = j.at("num_classes").get<int>();
  d.class_names = j.at("class_names").get<std::vector<std::string>>();
  d.channel_mean = j.at("channel_mean").get<std::vector<double>>();
  d.channel_stddev = j.at("channel_stddev").get<std::vector<double>>();
  return d;
}

std::string now_iso8601() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

std::string BenchmarkManifest::to_json() const {
  json j{{"kind", data::to_string(kind)},
         {"source_dataset", descriptor_to_json(source_dataset)},
         {"lambda_p", lambda_p},
         {"lambda_s", lambda_s},
         {"mi_interval", {mi_lo, mi_hi}},
         {"generator_checkpoint_id", generator_checkpoint_id},
         {"seed", seed},
         {"sample_count", sample_count},
         {"filter_stats",
          {{"candidates_generated", filter_stats.candidates_generated},
           {"accepted", filter_stats.accepted},
           {"rejected_low", filter_stats.rejected_low},
           {"rejected_high", filter_stats.rejected_high}}},
         {"source_indices", source_indices},
         {"created_at", created_at.empty() ? now_iso8601() : created_at},
         {"format_version", format_version}};
  return j.dump(2);
}

BenchmarkManifest BenchmarkManifest::from_json(const std::string& text) {
  json j = json::parse(text);
  BenchmarkManifest m;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "near_ood") m.kind = BenchmarkKind::near_ood;
  else if (kind == "shifted") m.kind = BenchmarkKind::shifted;
  else throw InvalidArgument("manifest: unknown kind " + kind);
  m.source_dataset = descriptor_from_json(j.at("source_dataset"));
  m.lambda_p = j.at("lambda_p").get<double>();
  m.lambda_s = j.at("lambda_s").get<double>();
  m.mi_lo = j.at("mi_interval").at(0).get<double>();
  m.mi_hi = j.at("mi_interval").at(1).get<double>();
  m.generator_checkpoint_id = j.at("generator_checkpoint_id").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.sample_count = j.at("sample_count").get<std::int64_t>();
  auto fsj = j.at("filter_stats");
  m.filter_stats.candidates_generated = fsj.at("candidates_generated").get<std::int64_t>();
  m.filter_stats.accepted = fsj.at("accepted").get<std::int64_t>();
  m.filter_stats.rejected_low = fsj.at("rejected_low").get<std::int64_t>();
  m.filter_stats.rejected_high = fsj.at("rejected_high").get<std::int64_t>();
  m.source_indices = j.at("source_indices").get<std::vector<std::int64_t>>();
  m.created_at = j.at("created_at").get<std::string>();
  m.format_version = j.at("format_version").get<int>();
  m.validate();
  return m;
}

// ----- tensor file format -----

namespace {

constexpr char kMagic[16] = {'O', 'O', 'D', 'F', 'O', 'R', 'G', 'E',
                             '-', 'T', 'N', 'S', 'R', '\0', '\0', '\0'};
constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint8_t kDtypeI64 = 2;

void write_header(std::ofstream& f, std::uint8_t dtype,
                  const std::vector<std::uint64_t>& dims) {
  f.write(kMagic, 16);
  std::uint32_t ver = kTensorVersion;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  f.write(reinterpret_cast<const char*>(&dtype), 1);
  std::uint8_t rank = static_cast<std::uint8_t>(dims.size());
  f.write(reinterpret_cast<const char*>(&rank), 1);
  for (std::uint64_t d : dims) f.write(reinterpret_cast<const char*>(&d), 8);
}

std::vector<std::uint64_t> read_header(std::ifstream& f, std::uint8_t expect_dtype,
                                       const fs::path& file) {
  char magic[16];
  f.read(magic, 16);
  if (!f || std::memcmp(magic, kMagic, 16) != 0)
    throw IoError("bad tensor magic in " + file.string());
  std::uint32_t ver;
  f.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kTensorVersion)
    throw IoError("unsupported tensor format version " + std::to_string(ver) + " in " +
                  file.string());
  std::uint8_t dtype, rank;
  f.read(reinterpret_cast<char*>(&dtype), 1);
  f.read(reinterpret_cast<char*>(&rank), 1);
  if (dtype != expect_dtype) throw IoError("unexpected dtype in " + file.string());
  std::vector<std::uint64_t> dims(rank);
  for (auto& d : dims) f.read(reinterpret_cast<char*>(&d), 8);
  if (!f) throw IoError("truncated tensor header in " + file.string());
  return dims;
}

}  // namespace

void write_tensor_f64(const fs::path& file, const Matrix& rows,
                      const std::vector<std::uint64_t>& dims) {
  std::uint64_t total = 1;
  for (auto d : dims) total *= d;
  check(total == static_cast<std::uint64_t>(rows.size()),
        "write_tensor_f64: dims do not match element count");
  std::ofstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open " + file.string() + " for writing");
  write_header(f, kDtypeF64, dims);
  // Row-major payload: one matrix row at a time.
  std::vector<double> buf(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) buf[j] = rows(i, j);
    f.write(reinterpret_cast<const char*>(buf.data()), buf.size() * 8);
  }
  if (!f) throw IoError("write failure on " + file.string());
}

Matrix read_tensor_f64(const fs::path& file, std::vector<std::uint64_t>& dims) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open " + file.string());
  dims = read_header(f, kDtypeF64, file);
  check(!dims.empty(), "read_tensor_f64: rank-0 tensor");
  std::uint64_t rows = dims[0], cols = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) cols *= dims[i];
  Matrix m(rows, cols);
  std::vector<double> buf(cols);
  for (std::uint64_t i = 0; i < rows; ++i) {
    f.read(reinterpret_cast<char*>(buf.data()), cols * 8);
    if (!f) throw IoError("truncated tensor payload in " + file.string());
    for (std::uint64_t j = 0; j < cols; ++j) m(i, j) = buf[j];
  }
  return m;
}

void write_tensor_i64(const fs::path& file, const std::vector<std::int64_t>& v) {
  std::ofstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open " + file.string() + " for writing");
  write_header(f, kDtypeI64, {v.size()});
  f.write(reinterpret_cast<const char*>(v.data()), v.size() * 8);
  if (!f) throw IoError("write failure on " + file.string());
}

std::vector<std::int64_t> read_tensor_i64(const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open " + file.string());
  auto dims = read_header(f, kDtypeI64, file);
  check(dims.size() == 1, "read_tensor_i64: expected rank-1");
  std::vector<std::int64_t> v(dims[0]);
  f.read(reinterpret_cast<char*>(v.data()), v.size() * 8);
  if (!f) throw IoError("truncated tensor payload in " + file.string());
  return v;
}

// ----- benchmark export / import -----

fs::path export_benchmark(const ImageBatch& samples,
                          const std::optional<std::vector<int>>& labels,
                          const BenchmarkManifest& manifest, const fs::path& dir,
                          bool overwrite) {
  BenchmarkManifest m = manifest;
  m.sample_count = samples.size();
  if (m.created_at.empty()) m.created_at = now_iso8601();
  m.validate();
  if (m.kind == BenchmarkKind::shifted && !labels)
    throw InvalidArgument("export_benchmark: shifted benchmarks require labels");
  if (m.kind == BenchmarkKind::near_ood && labels)
    throw InvalidArgument("export_benchmark: near_ood benchmarks carry no labels");
  if (labels)
    check(static_cast<Eigen::Index>(labels->size()) == samples.size(),
          "export_benchmark: label count mismatch");

  if (fs::exists(dir) && !fs::is_empty(dir) && !overwrite)
    throw IoError("export_benchmark: " + dir.string() +
                  " exists and is not empty (pass overwrite to replace)");
  fs::create_directories(dir);

  write_tensor_f64(dir / "samples.bin", samples.pixels,
                   {static_cast<std::uint64_t>(samples.size()),
                    static_cast<std::uint64_t>(samples.shape.channels),
                    static_cast<std::uint64_t>(samples.shape.height),
                    static_cast<std::uint64_t>(samples.shape.width)});
  if (labels) {
    std::vector<std::int64_t> l(labels->begin(), labels->end());
    write_tensor_i64(dir / "labels.bin", l);
  }
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot write manifest.json");
  mf << m.to_json() << "\n";
  return dir;
}

ImportedBenchmark import_benchmark(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("import_benchmark: missing manifest.json in " + dir.string());
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  BenchmarkManifest m = BenchmarkManifest::from_json(text);
  if (m.format_version != 1)
    throw IoError("import_benchmark: unsupported format_version " +
                  std::to_string(m.format_version));

  std::vector<std::uint64_t> dims;
  Matrix px = read_tensor_f64(dir / "samples.bin", dims);
  check(dims.size() == 4, "import_benchmark: samples.bin must be rank-4");
  if (static_cast<std::int64_t>(dims[0]) != m.sample_count)
    throw IoError("import_benchmark: manifest sample_count disagrees with tensor shape");
  ImageShape shape{static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                   static_cast<int>(dims[3])};
  ImportedBenchmark out;
  out.samples = ImageBatch(std::move(px), shape);
  out.manifest = m;
  if (m.kind == BenchmarkKind::shifted) {
    auto l = read_tensor_i64(dir / "labels.bin");
    if (static_cast<std::int64_t>(l.size()) != m.sample_count)
      throw IoError("import_benchmark: label count disagrees with manifest");
    out.labels = std::vector<int>(l.begin(), l.end());
  }
  return out;
}

// ----- synthetic datasets -----

namespace {

// 7x7 digit glyphs; '#' = ink. Rendered with random affine + noise.
const char* const kDigitGlyphs[10][7] = {
    {".#####.", "##...##", "##...##", "##...##", "##...##", "##...##", ".#####."},
    {"...##..", "..###..", ".####..", "...##..", "...##..", "...##..", ".######"},
    {".#####.", "##...##", "....##.", "...##..", "..##...", ".##....", "#######"},
    {"######.", "....##.", "..###..", "....##.", ".....##", "##...##", ".#####."},
    {"...###.", "..####.", ".##.##.", "##..##.", "#######", "....##.", "....##."},
    {"#######", "##.....", "######.", ".....##", ".....##", "##...##", ".#####."},
    {".#####.", "##.....", "##.....", "######.", "##...##", "##...##", ".#####."},
    {"#######", ".....##", "....##.", "...##..", "..##...", ".##....", ".##...."},
    {".#####.", "##...##", "##...##", ".#####.", "##...##", "##...##", ".#####."},
    {".#####.", "##...##", "##...##", ".######", ".....##", ".....##", ".#####."}};

double glyph_sample(int digit, double gx, double gy) {
  // Bilinear sample of the 7x7 glyph at continuous coordinates.
  if (gx < -0.5 || gx > 6.5 || gy < -0.5 || gy > 6.5) return 0.0;
  int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
  double fx = gx - x0, fy = gy - y0;
  auto at = [&](int yy, int xx) -> double {
    if (xx < 0 || xx > 6 || yy < 0 || yy > 6) return 0.0;
    return kDigitGlyphs[digit][yy][xx] == '#' ? 1.0 : 0.0;
  };
  return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x0 + 1) * fx * (1 - fy) +
         at(y0 + 1, x0) * (1 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy;
}

void render_digit(int digit, Rng& rng, double* out, int hw_side) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double theta = (u(rng) - 0.5) * 0.6;
  const double scale = 2.7 + u(rng) * 0.9;       // glyph pixels -> image pixels
  const double shear = (u(rng) - 0.5) * 0.4;
  const double tx = (u(rng) - 0.5) * 5.0;
  const double ty = (u(rng) - 0.5) * 5.0;
  const double ink = 0.75 + u(rng) * 0.25;
  const double c = std::cos(theta), s = std::sin(theta);
  std::normal_distribution<double> noise(0.0, 0.06);
  const double cx = hw_side / 2.0 - 0.5, cy = hw_side / 2.0 - 0.5;
  for (int y = 0; y < hw_side; ++y)
    for (int x = 0; x < hw_side; ++x) {
      // Inverse affine: image -> glyph coordinates.
      double dx = (x - cx - tx), dy = (y - cy - ty);
      double rx = (c * dx + s * dy) / scale;
      double ry = (-s * dx + c * dy) / scale;
      rx += shear * ry;
      double v = glyph_sample(digit, rx + 3.0, ry + 3.0) * ink;
      v = v * 2.0 - 1.0 + noise(rng);
      out[y * hw_side + x] = std::clamp(v, -1.0, 1.0);
    }
}

void render_shape(int cls, Rng& rng, double* out, int side) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.06);
  const double cx = side / 2.0 + (u(rng) - 0.5) * 5.0;
  const double cy = side / 2.0 + (u(rng) - 0.5) * 5.0;
  const double r = side * (0.22 + 0.12 * u(rng));
  const double phase = u(rng) * 6.0;
  const double period = 3.0 + u(rng) * 3.0;
  const double ink = 0.7 + 0.3 * u(rng);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double dx = x - cx, dy = y - cy;
      double dist = std::sqrt(dx * dx + dy * dy);
      double v = 0.0;
      switch (cls) {
        case 0: v = (std::abs(dx) < r && std::abs(dy) < r) ? 1.0 : 0.0; break;
        case 1: {
          bool outer = std::abs(dx) < r && std::abs(dy) < r;
          bool inner = std::abs(dx) < r * 0.55 && std::abs(dy) < r * 0.55;
          v = (outer && !inner) ? 1.0 : 0.0;
          break;
        }
        case 2: v = dist < r ? 1.0 : 0.0; break;
        case 3: v = (dist < r && dist > r * 0.55) ? 1.0 : 0.0; break;
        case 4: v = (dy > -r && dy < r && std::abs(dx) < (dy + r) * 0.5) ? 1.0 : 0.0; break;
        case 5: v = (std::abs(dx) < r * 0.3 || std::abs(dy) < r * 0.3) &&
                        (std::abs(dx) < r && std::abs(dy) < r)
                    ? 1.0 : 0.0;
          break;
        case 6: v = std::sin(y / period * 3.14159 + phase) > 0 ? 1.0 : 0.0; break;
        case 7: v = std::sin(x / period * 3.14159 + phase) > 0 ? 1.0 : 0.0; break;
        case 8: v = (std::sin(x / period * 3.14159 + phase) *
                     std::sin(y / period * 3.14159 + phase)) > 0 ? 1.0 : 0.0;
          break;
        case 9: v = (std::abs(dx - dy) < r * 0.35 || std::abs(dx + dy) < r * 0.35) &&
                        dist < r * 1.4
                    ? 1.0 : 0.0;
          break;
        default: break;
      }
      double px = v * ink * 2.0 - 1.0 + noise(rng);
      out[y * side + x] = std::clamp(px, -1.0, 1.0);
    }
}

void render_moon_bump(int cls, Rng& rng, double* out, int side) {
  // Two interleaved arcs in [0,1]^2, rendered as a Gaussian bump.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.04);
  double t = u(rng) * 3.14159;
  double px, py;
  if (cls == 0) {
    px = 0.5 + 0.35 * std::cos(t);
    py = 0.45 + 0.35 * std::sin(t);
  } else {
    px = 0.5 - 0.35 * std::cos(t) + 0.175;
    py = 0.55 - 0.35 * std::sin(t);
  }
  px += jitter(rng);
  py += jitter(rng);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double dx = (x + 0.5) / side - px, dy = (y + 0.5) / side - py;
      double v = 2.0 * std::exp(-(dx * dx + dy * dy) / 0.02) - 1.0 + noise(rng);
      out[y * side + x] = std::clamp(v, -1.0, 1.0);
    }
}

struct SyntheticSpec {
  int side;
  int num_classes;
  int n_train, n_val, n_test;
  void (*render)(int, Rng&, double*, int);
};

const SyntheticSpec kDigitsSpec{28, 10, 8000, 1000, 2000, render_digit};
const SyntheticSpec kShapesSpec{28, 10, 8000, 1000, 2000, render_shape};
const SyntheticSpec kGridSpec{8, 2, 512, 128, 256, render_moon_bump};

LabeledDataset make_synthetic(const std::string& name, const SyntheticSpec& spec,
                              Split split, std::uint64_t seed) {
  int n = split == Split::train ? spec.n_train
          : split == Split::val ? spec.n_val
                                : spec.n_test;
  std::uint64_t h = fnv1a(name.data(), name.size(), seed ^ 0x9e3779b97f4a7c15ull);
  h = fnv1a(to_string(split).data(), to_string(split).size(), h);
  Rng rng(h);
  Matrix px(n, spec.side * spec.side);
  std::vector<int> labels(n);
  std::vector<double> buf(spec.side * spec.side);
  std::uniform_int_distribution<int> cls(0, spec.num_classes - 1);
  for (int i = 0; i < n; ++i) {
    labels[i] = cls(rng);
    spec.render(labels[i], rng, buf.data(), spec.side);
    for (int j = 0; j < spec.side * spec.side; ++j) px(i, j) = buf[j];
  }
  LabeledDataset ds;
  ds.images = ImageBatch(std::move(px), ImageShape{1, spec.side, spec.side});
  ds.labels = std::move(labels);
  ds.split = split;
  ds.seed = seed;
  ds.descriptor.name = name;
  ds.descriptor.shape = ImageShape{1, spec.side, spec.side};
  ds.descriptor.num_classes = spec.num_classes;
  for (int k = 0; k < spec.num_classes; ++k)
    ds.descriptor.class_names.push_back(name + "-" + std::to_string(k));
  ds.descriptor.channel_mean = {-0.5};
  ds.descriptor.channel_stddev = {0.7};
  return ds;
}

// ----- IDX (MNIST-format) loading -----

std::vector<unsigned char> read_file_maybe_gz(const fs::path& p) {
  fs::path gz = p;
  gz += ".gz";
  if (fs::exists(p)) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
  }
  if (fs::exists(gz)) {
    gzFile g = gzopen(gz.string().c_str(), "rb");
    if (!g) throw IoError("cannot open " + gz.string());
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(g, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    gzclose(g);
    return out;
  }
  throw IoError("missing dataset file: " + p.string() + " (or .gz)");
}

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void parse_idx_images(const fs::path& file, Matrix& px, int& rows, int& cols) {
  auto bytes = read_file_maybe_gz(file);
  if (bytes.size() < 16 || be32(bytes.data()) != 2051)
    throw IoError("corrupt IDX image file (bad magic): " + file.string());
  std::uint32_t n = be32(bytes.data() + 4);
  rows = static_cast<int>(be32(bytes.data() + 8));
  cols = static_cast<int>(be32(bytes.data() + 12));
  std::size_t expect = 16 + std::size_t(n) * rows * cols;
  if (bytes.size() != expect)
    throw IoError("IDX image file size mismatch (checksum failure): " + file.string());
  px.resize(n, rows * cols);
  const unsigned char* p = bytes.data() + 16;
  for (std::uint32_t i = 0; i < n; ++i)
    for (int j = 0; j < rows * cols; ++j)
      px(i, j) = double(p[std::size_t(i) * rows * cols + j]) / 255.0 * 2.0 - 1.0;
}

std::vector<int> parse_idx_labels(const fs::path& file) {
  auto bytes = read_file_maybe_gz(file);
  if (bytes.size() < 8 || be32(bytes.data()) != 2049)
    throw IoError("corrupt IDX label file (bad magic): " + file.string());
  std::uint32_t n = be32(bytes.data() + 4);
  if (bytes.size() != 8 + std::size_t(n))
    throw IoError("IDX label file size mismatch (checksum failure): " + file.string());
  return std::vector<int>(bytes.begin() + 8, bytes.end());
}

LabeledDataset load_idx_dataset(const std::string& name, Split split,
                                const fs::path& root, std::uint64_t seed) {
  fs::path dir = root / name;
  const bool is_test = split == Split::test;
  Matrix px;
  int rows, cols;
  parse_idx_images(dir / (is_test ? "t10k-images-idx3-ubyte" : "train-images-idx3-ubyte"),
                   px, rows, cols);
  auto labels = parse_idx_labels(
      dir / (is_test ? "t10k-labels-idx1-ubyte" : "train-labels-idx1-ubyte"));
  check(px.rows() == static_cast<Eigen::Index>(labels.size()),
        "IDX image/label count mismatch");

  std::vector<int> order(px.rows());
  std::iota(order.begin(), order.end(), 0);
  if (!is_test) {
    // Deterministic shuffle; train = first 5/6, val = remainder.
    Rng rng(seed ^ fnv1a(name.data(), name.size()));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = order.size() / 6;
    if (split == Split::train) order.resize(order.size() - n_val);
    else order.erase(order.begin(), order.end() - n_val);
  }
  Matrix sel(order.size(), px.cols());
  std::vector<int> sel_labels(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    sel.row(i) = px.row(order[i]);
    sel_labels[i] = labels[order[i]];
  }

  LabeledDataset ds;
  ds.images = ImageBatch(std::move(sel), ImageShape{1, rows, cols});
  ds.labels = std::move(sel_labels);
  ds.split = split;
  ds.seed = seed;
  ds.descriptor.name = name;
  ds.descriptor.shape = ImageShape{1, rows, cols};
  ds.descriptor.num_classes = 10;
  if (name == "mnist")
    ds.descriptor.class_names = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  else
    ds.descriptor.class_names = {"tshirt", "trouser", "pullover", "dress",   "coat",
                                 "sandal", "shirt",   "sneaker",  "bag",     "boot"};
  ds.descriptor.channel_mean = {name == "mnist" ? -0.7386 : -0.4272};
  ds.descriptor.channel_stddev = {name == "mnist" ? 0.6162 : 0.7052};
  return ds;
}

}  // namespace

std::vector<std::string> registered_datasets() {
  return {"mnist", "fashion-mnist", "synth-digits", "synth-shapes", "synth-grid"};
}

bool dataset_needs_files(const std::string& name) {
  return name == "mnist" || name == "fashion-mnist";
}

LabeledDataset load_dataset(const std::string& name, Split split, const fs::path& root,
                            std::uint64_t seed) {
  if (name == "synth-digits") return make_synthetic(name, kDigitsSpec, split, seed);
  if (name == "synth-shapes") return make_synthetic(name, kShapesSpec, split, seed);
  if (name == "synth-grid") return make_synthetic(name, kGridSpec, split, seed);
  if (name == "mnist" || name == "fashion-mnist")
    return load_idx_dataset(name, split, root, seed);
  throw InvalidArgument("unknown dataset: " + name);
}

}  // namespace oodforge::data
