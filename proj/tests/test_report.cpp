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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oodforge/data.hpp"
#include "oodforge/report.hpp"

#include <fstream>
#include <sstream>

using namespace oodforge;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& tag) {
  fs::path d = fs::temp_directory_path() / ("oodforge-report-" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("png writer emits a valid, deterministic file") {
  auto dir = temp_dir("png");
  std::vector<std::uint8_t> rgb(5 * 4 * 3, 0);
  rgb[0] = 255;                      // one red pixel
  rgb[rgb.size() - 1] = 255;         // one blue pixel
  report::write_png(dir / "a.png", 5, 4, rgb);
  report::write_png(dir / "b.png", 5, 4, rgb);
  std::string a = slurp(dir / "a.png"), b = slurp(dir / "b.png");
  CHECK(a == b);  // byte-identical regeneration
  REQUIRE(a.size() > 8);
  CHECK(static_cast<unsigned char>(a[0]) == 0x89);
  CHECK(a.substr(1, 3) == "PNG");
  CHECK(a.find("IHDR") != std::string::npos);
  CHECK(a.find("IEND") != std::string::npos);
  CHECK_THROWS_AS(report::write_png(dir / "c.png", 3, 3, rgb), InvalidArgument);
}

TEST_CASE("plot primitives render without error") {
  auto dir = temp_dir("plots");
  Vector a(100), b(100);
  Rng rng(1);
  std::normal_distribution<double> n1(0.2, 0.05), n2(0.6, 0.1);
  for (int i = 0; i < 100; ++i) {
    a(i) = std::abs(n1(rng));
    b(i) = std::abs(n2(rng));
  }
  report::plot_histogram(dir / "hist.png", {{"val", a}, {"gen", b}}, "MI");
  report::plot_bars(dir / "bars.png", {{"entropy", 0.91}, {"mahalanobis", 0.83}},
                    "AUROC");
  metrics::CalibrationReport rep;
  for (int i = 0; i <= 5; ++i) rep.bin_edges.push_back(i / 5.0);
  rep.bin_confidence = {0.1, 0.3, 0.5, 0.7, 0.9};
  rep.bin_accuracy = {0.15, 0.25, 0.5, 0.65, 0.8};
  rep.bin_counts = {10, 20, 30, 20, 10};
  rep.ece = 0.05;
  report::plot_reliability(dir / "rel.png", rep, "REL");
  Matrix imgs = Matrix::Random(6, 64);
  report::plot_image_grid(dir / "grid.png", imgs, 1, 8, 8, 3);
  for (auto name : {"hist.png", "bars.png", "rel.png", "grid.png"}) {
    CAPTURE(name);
    CHECK(fs::file_size(dir / name) > 100);
  }
}

TEST_CASE("render_report walks summary.json and regenerates byte-identically") {
  auto dir = temp_dir("render");

  // Minimal experiment directory: one detection record, one calibration,
  // one MI vector, plus one reference to a missing artifact.
  fs::create_directories(dir / "detect");
  std::ofstream(dir / "detect" / "d0.json") << R"({
    "detector": "softmax_entropy", "model_id": "m", "id_dataset": "id",
    "ood_dataset": "noise", "auroc": 0.97, "auprc": 0.95, "seed": 0,
    "scores": {"id_scores": [], "ood_scores": [], "orientation": "higher_is_ood"}
  })";
  std::ofstream(dir / "cal.json") << R"({
    "bin_edges": [0.0, 0.5, 1.0], "bin_confidence": [0.4, 0.9],
    "bin_accuracy": [0.35, 0.85], "bin_counts": [4, 6], "ece": 0.05
  })";
  Vector mi(3);
  mi << 0.1, 0.2, 0.3;
  data::write_tensor_f64(dir / "mi.bin", mi.transpose(),
                         {1, static_cast<std::uint64_t>(mi.size())});
  std::ofstream(dir / "summary.json") << R"({
    "schema_version": 1, "pipeline": "smoke",
    "artifacts": {
      "detections": ["detect/d0.json", "detect/gone.json"],
      "calibrations": [{"name": "shifted", "path": "cal.json"}],
      "mi_sets": [{"name": "val", "path": "mi.bin"}],
      "benchmarks": []
    }
  })";

  auto out = report::render_report(dir);
  CHECK(out.plots.size() >= 3);
  CHECK(out.missing.size() == 1);
  CHECK(fs::exists(out.summary_markdown));
  std::string md = slurp(out.summary_markdown);
  CHECK(md.find("AUROC") != std::string::npos);
  CHECK(md.find("gone.json") != std::string::npos);

  std::vector<std::string> first;
  for (const auto& p : out.plots) first.push_back(slurp(p));
  auto again = report::render_report(dir);
  REQUIRE(again.plots.size() == out.plots.size());
  for (std::size_t i = 0; i < first.size(); ++i)
    CHECK(slurp(again.plots[i]) == first[i]);

  CHECK_THROWS_AS(report::render_report(temp_dir("empty")), IoError);
}
