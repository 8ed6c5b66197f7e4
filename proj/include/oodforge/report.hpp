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

#ifndef OODFORGE_REPORT_HPP
#define OODFORGE_REPORT_HPP

#include "oodforge/common.hpp"
#include "oodforge/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace oodforge::report {

/// Deterministic 8-bit RGB PNG encoder (fixed zlib settings, no ancillary
/// chunks), so identical pixels give identical bytes.
void write_png(const std::filesystem::path& file, int width, int height,
               const std::vector<std::uint8_t>& rgb);

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// Minimal raster canvas with a built-in 5x7 font (digits, upper-case
/// letters, and basic punctuation; lower-case maps to upper).
class Canvas {
 public:
  Canvas(int width, int height, Color background = {255, 255, 255});
  int width() const { return w_; }
  int height() const { return h_; }
  void set(int x, int y, Color c);
  void fill_rect(int x, int y, int w, int h, Color c);
  void line(int x0, int y0, int x1, int y1, Color c);
  void text(int x, int y, const std::string& s, Color c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1);
  void save(const std::filesystem::path& file) const;

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

struct Series {
  std::string name;
  Vector values;
};

/// Overlaid filled histograms of the given series over a shared range.
void plot_histogram(const std::filesystem::path& file, const std::vector<Series>& series,
                    const std::string& title, int bins = 40, double lo = 0.0,
                    double hi = -1.0);  // hi < lo: use the data range

/// Horizontal bar chart of labeled values in [0, 1].
void plot_bars(const std::filesystem::path& file,
               const std::vector<std::pair<std::string, double>>& entries,
               const std::string& title);

/// Reliability diagram (per-bin confidence vs accuracy) with the identity
/// diagonal for reference.
void plot_reliability(const std::filesystem::path& file,
                      const metrics::CalibrationReport& rep, const std::string& title);

/// Renders a strip of grayscale images (pixels in [-1, 1], single channel).
void plot_image_grid(const std::filesystem::path& file, const Matrix& pixels,
                     int channels, int height, int width, int columns);

struct ReportOutput {
  std::vector<std::filesystem::path> plots;
  std::filesystem::path summary_markdown;
  std::vector<std::string> missing;  // referenced artifacts that were absent
};

/// Renders every plot derivable from an experiment directory's
/// summary.json plus a markdown digest. Missing referenced artifacts are
/// listed, not fatal; a missing summary.json is an error.
ReportOutput render_report(const std::filesystem::path& experiment_dir);

}  // namespace oodforge::report

#endif  // OODFORGE_REPORT_HPP
