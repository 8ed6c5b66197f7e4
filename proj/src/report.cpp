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

#include "oodforge/report.hpp"

#include "oodforge/data.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace oodforge::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back((v >> 24) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = crc32(0L, out.data() + crc_start, out.size() - crc_start);
  put_u32(out, crc);
}

}  // namespace

void write_png(const fs::path& file, int width, int height,
               const std::vector<std::uint8_t>& rgb) {
  check(width > 0 && height > 0, "write_png: empty image");
  check(rgb.size() == static_cast<std::size_t>(width) * height * 3,
        "write_png: buffer size mismatch");

  // Raw scanlines, each prefixed with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const auto* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + 3 * width);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) !=
      Z_OK)
    throw IoError("write_png: zlib compression failed");
  deflated.resize(bound);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", deflated);
  put_chunk(out, "IEND", {});

  std::ofstream f(file, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + file.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

namespace {

// 5x7 bitmap font; each glyph is 7 rows of 5 bits, MSB on the left.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> f = {
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
      {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
      {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
      {'%', {0x19, 0x1a, 0x02, 0x04, 0x08, 0x0b, 0x13}},
      {'[', {0x0e, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0e}},
      {']', {0x0e, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0e}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
      {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
      {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
      {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
      {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
      {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
      {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
      {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
      {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
      {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
      {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
      {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
      {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
      {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
      {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
      {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
      {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
      {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
      {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
      {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
      {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
      {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
      {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
      {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
      {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
      {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1b, 0x11}},
      {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
      {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
  };
  return f;
}

const std::array<Color, 6> kPalette = {{{31, 119, 180},
                                        {255, 127, 14},
                                        {44, 160, 44},
                                        {214, 39, 40},
                                        {148, 103, 189},
                                        {127, 127, 127}}};

std::string fmt(double v, int decimals = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << v;
  return os.str();
}

}  // namespace

Canvas::Canvas(int width, int height, Color bg) : w_(width), h_(height) {
  check(width > 0 && height > 0, "Canvas: empty size");
  px_.resize(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) set(x, y, bg);
}

void Canvas::set(int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
  auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

void Canvas::fill_rect(int x, int y, int w, int h, Color c) {
  for (int j = y; j < y + h; ++j)
    for (int i = x; i < x + w; ++i) set(i, j, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Color c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
  int cx = x;
  for (char raw : s) {
    char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    auto it = font().find(ch);
    if (it == font().end()) it = font().find(' ');
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (it->second[row] & (1 << (4 - col)))
          fill_rect(cx + col * scale, y + row * scale, scale, scale, c);
    cx += 6 * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::save(const fs::path& file) const { write_png(file, w_, h_, px_); }

void plot_histogram(const fs::path& file, const std::vector<Series>& series,
                    const std::string& title, int bins, double lo, double hi) {
  check(!series.empty() && bins >= 2, "plot_histogram: nothing to plot");
  if (hi < lo) {
    lo = series.front().values.size() ? series.front().values.minCoeff() : 0.0;
    hi = series.front().values.size() ? series.front().values.maxCoeff() : 1.0;
    for (const auto& s : series) {
      if (!s.values.size()) continue;
      lo = std::min(lo, s.values.minCoeff());
      hi = std::max(hi, s.values.maxCoeff());
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
  }

  const int W = 520, H = 340, ml = 50, mr = 16, mt = 34, mb = 36;
  Canvas cv(W, H);
  cv.text((W - Canvas::text_width(title)) / 2, 10, title, {0, 0, 0});

  std::vector<std::vector<long>> counts(series.size(), std::vector<long>(bins, 0));
  long max_count = 1;
  for (std::size_t s = 0; s < series.size(); ++s) {
    for (Eigen::Index i = 0; i < series[s].values.size(); ++i) {
      int b = static_cast<int>((series[s].values(i) - lo) / (hi - lo) * bins);
      b = std::clamp(b, 0, bins - 1);
      max_count = std::max(max_count, ++counts[s][b]);
    }
  }

  const int pw = W - ml - mr, ph = H - mt - mb;
  cv.line(ml, H - mb, W - mr, H - mb, {0, 0, 0});
  cv.line(ml, mt, ml, H - mb, {0, 0, 0});
  for (std::size_t s = 0; s < series.size(); ++s) {
    Color c = kPalette[s % kPalette.size()];
    for (int b = 0; b < bins; ++b) {
      if (!counts[s][b]) continue;
      const int x0 = ml + b * pw / bins, x1 = ml + (b + 1) * pw / bins;
      const int bh = static_cast<int>(
          std::lround(static_cast<double>(counts[s][b]) / max_count * ph));
      // Outline style so overlaid series stay readable.
      cv.line(x0, H - mb - bh, x1 - 1, H - mb - bh, c);
      cv.line(x0, H - mb - bh, x0, H - mb - 1, c);
      cv.line(x1 - 1, H - mb - bh, x1 - 1, H - mb - 1, c);
    }
    cv.fill_rect(ml + 8, mt + 6 + 12 * static_cast<int>(s), 8, 8, c);
    cv.text(ml + 20, mt + 6 + 12 * static_cast<int>(s), series[s].name, {0, 0, 0});
  }
  cv.text(ml - 6, H - mb + 6, fmt(lo, 2), {0, 0, 0});
  cv.text(W - mr - Canvas::text_width(fmt(hi, 2)), H - mb + 6, fmt(hi, 2), {0, 0, 0});
  cv.save(file);
}

void plot_bars(const fs::path& file,
               const std::vector<std::pair<std::string, double>>& entries,
               const std::string& title) {
  check(!entries.empty(), "plot_bars: nothing to plot");
  const int row_h = 22, ml = 210, mr = 70, mt = 34, mb = 14;
  const int W = 560, H = mt + mb + row_h * static_cast<int>(entries.size());
  Canvas cv(W, H);
  cv.text((W - Canvas::text_width(title)) / 2, 10, title, {0, 0, 0});
  const int pw = W - ml - mr;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const int y = mt + static_cast<int>(i) * row_h;
    const double v = std::clamp(entries[i].second, 0.0, 1.0);
    Color c = kPalette[i % kPalette.size()];
    cv.text(6, y + 5, entries[i].first.substr(0, 33), {0, 0, 0});
    cv.fill_rect(ml, y + 3, static_cast<int>(std::lround(v * pw)), row_h - 8, c);
    cv.text(ml + static_cast<int>(std::lround(v * pw)) + 4, y + 5,
            fmt(entries[i].second), {0, 0, 0});
  }
  cv.line(ml, mt - 2, ml, H - mb, {0, 0, 0});
  cv.save(file);
}

void plot_reliability(const fs::path& file, const metrics::CalibrationReport& rep,
                      const std::string& title) {
  const int S = 360, m = 48;
  Canvas cv(S + 2 * m, S + 2 * m);
  cv.text((S + 2 * m - Canvas::text_width(title)) / 2, 12, title, {0, 0, 0});
  const int x0 = m, y0 = m + 10;
  cv.line(x0, y0 + S, x0 + S, y0 + S, {0, 0, 0});
  cv.line(x0, y0, x0, y0 + S, {0, 0, 0});
  cv.line(x0, y0 + S, x0 + S, y0, {150, 150, 150});  // identity diagonal

  const int bins = static_cast<int>(rep.bin_counts.size());
  for (int b = 0; b < bins; ++b) {
    if (!rep.bin_counts[b]) continue;
    const int bx0 = x0 + b * S / bins, bx1 = x0 + (b + 1) * S / bins;
    const int bh = static_cast<int>(std::lround(rep.bin_accuracy[b] * S));
    cv.fill_rect(bx0 + 1, y0 + S - bh, bx1 - bx0 - 2, bh, kPalette[0]);
    const int cy = y0 + S - static_cast<int>(std::lround(rep.bin_confidence[b] * S));
    cv.line(bx0 + 1, cy, bx1 - 2, cy, kPalette[3]);
  }
  cv.text(x0, y0 + S + 10, "0", {0, 0, 0});
  cv.text(x0 + S - 6, y0 + S + 10, "1", {0, 0, 0});
  cv.text(x0, y0 - 12, "ECE = " + fmt(rep.ece, 4), {0, 0, 0});
  cv.save(file);
}

void plot_image_grid(const fs::path& file, const Matrix& pixels, int channels,
                     int height, int width, int columns) {
  check(channels == 1, "plot_image_grid: grayscale only");
  check(pixels.cols() == static_cast<Eigen::Index>(channels) * height * width,
        "plot_image_grid: shape mismatch");
  const int n = static_cast<int>(pixels.rows());
  check(n > 0 && columns > 0, "plot_image_grid: empty grid");
  const int rows = (n + columns - 1) / columns, pad = 2;
  Canvas cv(columns * (width + pad) + pad, rows * (height + pad) + pad, {40, 40, 40});
  for (int i = 0; i < n; ++i) {
    const int gx = (i % columns) * (width + pad) + pad;
    const int gy = (i / columns) * (height + pad) + pad;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double v = std::clamp(pixels(i, y * width + x), -1.0, 1.0);
        const auto g = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
        cv.set(gx + x, gy + y, {g, g, g});
      }
  }
  cv.save(file);
}

namespace {

bool exists_rel(const fs::path& dir, const std::string& rel) {
  return !rel.empty() && fs::exists(dir / rel);
}

}  // namespace

ReportOutput render_report(const fs::path& experiment_dir) {
  const fs::path summary_path = experiment_dir / "summary.json";
  if (!fs::exists(summary_path))
    throw IoError("render_report: missing " + summary_path.string());
  std::ifstream sf(summary_path);
  json summary = json::parse(sf);

  ReportOutput out;
  const fs::path plot_dir = experiment_dir / "plots";
  fs::create_directories(plot_dir);
  std::ostringstream md;
  md << "# Experiment report\n\npipeline: `"
     << summary.value("pipeline", std::string("?")) << "`\n\n";
  const json artifacts = summary.value("artifacts", json::object());

  // AUROC bars from detection records.
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& rel : artifacts.value("detections", json::array())) {
    if (!exists_rel(experiment_dir, rel)) {
      out.missing.push_back(rel);
      continue;
    }
    std::ifstream f(experiment_dir / rel.get<std::string>());
    json d = json::parse(f);
    bars.emplace_back(d.value("detector", "?") + " / " + d.value("ood_dataset", "?"),
                      d.value("auroc", 0.0));
  }
  if (!bars.empty()) {
    auto p = plot_dir / "auroc_bars.png";
    plot_bars(p, bars, "AUROC BY DETECTOR AND OOD SET");
    out.plots.push_back(p);
    md << "## Detection\n\n| detector / OoD set | AUROC |\n|---|---|\n";
    for (const auto& [k, v] : bars) md << "| " << k << " | " << fmt(v) << " |\n";
    md << "\n![auroc](plots/auroc_bars.png)\n\n";
  }

  // Reliability diagrams from calibration reports.
  for (const auto& entry : artifacts.value("calibrations", json::array())) {
    const std::string rel = entry.value("path", "");
    const std::string name = entry.value("name", "calibration");
    if (!exists_rel(experiment_dir, rel)) {
      out.missing.push_back(rel);
      continue;
    }
    std::ifstream f(experiment_dir / rel);
    json c = json::parse(f);
    metrics::CalibrationReport rep;
    rep.bin_edges = c.value("bin_edges", std::vector<double>{});
    rep.bin_confidence = c.value("bin_confidence", std::vector<double>{});
    rep.bin_accuracy = c.value("bin_accuracy", std::vector<double>{});
    rep.bin_counts = c.value("bin_counts", std::vector<long>{});
    rep.ece = c.value("ece", 0.0);
    auto p = plot_dir / ("reliability_" + name + ".png");
    plot_reliability(p, rep, "RELIABILITY: " + name);
    out.plots.push_back(p);
    md << "## Calibration: " << name << "\n\nECE = " << fmt(rep.ece, 4)
       << "\n\n![reliability](plots/reliability_" << name << ".png)\n\n";
  }

  // Overlaid MI histograms from stored score vectors.
  std::vector<Series> mi_series;
  for (const auto& entry : artifacts.value("mi_sets", json::array())) {
    const std::string rel = entry.value("path", "");
    if (!exists_rel(experiment_dir, rel)) {
      out.missing.push_back(rel);
      continue;
    }
    std::vector<std::uint64_t> dims;
    Matrix m = data::read_tensor_f64(experiment_dir / rel, dims);
    Vector v = Eigen::Map<Vector>(m.data(), m.size());
    mi_series.push_back({entry.value("name", "mi"), v});
  }
  if (!mi_series.empty()) {
    auto p = plot_dir / "mi_histogram.png";
    plot_histogram(p, mi_series, "ENSEMBLE MI");
    out.plots.push_back(p);
    md << "## Ensemble MI distributions\n\n![mi](plots/mi_histogram.png)\n\n";
  }

  // Sample grids from exported benchmarks.
  for (const auto& rel : artifacts.value("benchmarks", json::array())) {
    if (!exists_rel(experiment_dir, rel)) {
      out.missing.push_back(rel);
      continue;
    }
    try {
      auto bench = data::import_benchmark(experiment_dir / rel.get<std::string>());
      const int n = std::min<int>(16, static_cast<int>(bench.samples.size()));
      std::vector<int> idx(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      auto sub = bench.samples.rows(idx);
      std::string name = fs::path(rel.get<std::string>()).filename().string();
      auto p = plot_dir / ("samples_" + name + ".png");
      plot_image_grid(p, sub.pixels, sub.shape.channels, sub.shape.height,
                      sub.shape.width, 4);
      out.plots.push_back(p);
      md << "## Benchmark samples: " << name << "\n\n![samples](plots/samples_" << name
         << ".png)\n\n";
    } catch (const std::exception& e) {
      out.missing.push_back(rel.get<std::string>() + " (" + e.what() + ")");
    }
  }

  if (!out.missing.empty()) {
    md << "## Missing artifacts\n\n";
    for (const auto& m : out.missing) md << "- " << m << "\n";
  }

  out.summary_markdown = experiment_dir / "report.md";
  std::ofstream(out.summary_markdown) << md.str();
  return out;
}

}  // namespace oodforge::report
