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

// Command-line orchestrator: config-driven pipelines writing self-contained
// experiment directories (config snapshot, environment record, artifacts,
// summary.json, plots). Exit codes: 0 success, 1 config/validation failure,
// 2 runtime failure (partial artifacts kept next to a FAILED marker).

#include "oodforge/data.hpp"
#include "oodforge/eval.hpp"
#include "oodforge/gan.hpp"
#include "oodforge/metrics.hpp"
#include "oodforge/models.hpp"
#include "oodforge/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oodforge;

namespace {

// ---------------------------------------------------------------- plumbing

constexpr int kSchemaVersion = 1;

struct Context {
  json cfg;
  fs::path out;
  fs::path data_root;
  std::uint64_t seed = 0;
  bool overwrite = false;
  json artifacts = json::object();  // summary.json "artifacts" section
};

/// Unknown keys are config errors, not warnings.
void ensure_keys(const json& obj, const std::set<std::string>& allowed,
                 const std::string& path) {
  check(obj.is_object(), "config: expected an object at " + path);
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k))
      throw InvalidArgument("config: unknown key '" + path + "." + k + "'");
}

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

void write_json(const fs::path& file, const json& j) {
  fs::create_directories(file.parent_path());
  std::ofstream f(file);
  if (!f) throw IoError("cannot write " + file.string());
  f << j.dump(2) << "\n";
}

json read_json(const fs::path& file) {
  std::ifstream f(file);
  if (!f) throw IoError("cannot read " + file.string());
  return json::parse(f);
}

void write_summary(Context& ctx, const std::string& pipeline) {
  write_json(ctx.out / "summary.json", json{{"schema_version", kSchemaVersion},
                                            {"pipeline", pipeline},
                                            {"created_at", now_iso8601()},
                                            {"config_snapshot", "config.json"},
                                            {"environment", "environment.json"},
                                            {"artifacts", ctx.artifacts}});
}

void snapshot_config(const Context& ctx) {
  write_json(ctx.out / "config.json", ctx.cfg);
  write_json(ctx.out / "environment.json",
             json{{"compiler", __VERSION__},
                  {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)},
                  {"schema_version", kSchemaVersion},
                  {"data_root", ctx.data_root.string()}});
}

data::LabeledDataset load_split(const Context& ctx, const std::string& name,
                                data::Split split) {
  return data::load_dataset(name, split, ctx.data_root);
}

// ------------------------------------------------------- shared sub-steps

models::TrainingConfig training_config(const json& j, std::uint64_t seed) {
  ensure_keys(j, {"epochs", "batch_size", "learning_rate", "beta"}, "training");
  models::TrainingConfig cfg;
  cfg.epochs = j.value("epochs", 3);
  cfg.batch_size = j.value("batch_size", 64);
  cfg.learning_rate = j.value("learning_rate", 0.05);
  cfg.outlier_beta = j.value("beta", 0.5);
  cfg.seed = seed;
  return cfg;
}

/// Trains the requested members and writes ensemble.json + model dirs.
fs::path train_ensemble_to(const Context& ctx, const json& spec,
                           const data::LabeledDataset& train,
                           const data::LabeledDataset* test, const fs::path& dir,
                           std::uint64_t seed) {
  ensure_keys(spec,
              {"role", "architectures", "count", "epochs", "batch_size",
               "learning_rate"},
              "ensemble");
  const std::string role = spec.value("role", "training_loss");
  check(role == "training_loss" || role == "evaluation",
        "ensemble.role must be training_loss or evaluation");
  auto archs = spec.value("architectures", std::vector<std::string>{});
  check(!archs.empty(), "ensemble.architectures must be non-empty");
  const int count = spec.value("count", static_cast<int>(archs.size()));

  models::TrainingConfig base = training_config(
      json{{"epochs", spec.value("epochs", 3)},
           {"batch_size", spec.value("batch_size", 64)},
           {"learning_rate", spec.value("learning_rate", 0.05)}},
      seed);

  json members = json::array();
  std::vector<models::ClassifierHandle> handles;
  for (int i = 0; i < count; ++i) {
    const std::string arch = archs[i % archs.size()];
    models::TrainingConfig cfg = base;
    cfg.seed = seed + i;
    auto h = models::train_classifier(arch, train, cfg, test);
    const fs::path mdir = dir / ("member" + std::to_string(i) + "_" + arch);
    h.save(mdir);
    members.push_back(fs::relative(mdir, dir.parent_path()).string());
    handles.push_back(std::move(h));
  }
  // Construction validates the role's heterogeneity rule before we persist.
  models::EnsembleHandle(handles, role == "training_loss"
                                      ? models::EnsembleRole::training_loss_ensemble
                                      : models::EnsembleRole::evaluation_ensemble);
  write_json(dir / "ensemble.json", json{{"role", role}, {"members", members}});
  return dir / "ensemble.json";
}

models::EnsembleHandle load_ensemble(const fs::path& ensemble_json) {
  json j = read_json(ensemble_json);
  std::vector<models::ClassifierHandle> members;
  for (const auto& rel : j.at("members"))
    members.push_back(models::ClassifierHandle::load(ensemble_json.parent_path().parent_path() /
                                                     rel.get<std::string>()));
  const std::string role = j.at("role").get<std::string>();
  return models::EnsembleHandle(std::move(members),
                                role == "training_loss"
                                    ? models::EnsembleRole::training_loss_ensemble
                                    : models::EnsembleRole::evaluation_ensemble);
}

gan::GanTrainingConfig generator_config(const json& j, std::uint64_t seed) {
  ensure_keys(j,
              {"kind", "lambda_p", "lambda_s", "epochs", "batch_size", "latent_dim",
               "learning_rate"},
              "generator");
  gan::GanTrainingConfig cfg;
  cfg.kind = gan::gan_kind_from_string(j.value("kind", "near_ood"));
  cfg.lambda_p = j.value("lambda_p", 1.0);
  cfg.lambda_s = j.value("lambda_s", 1.0);
  cfg.epochs = j.value("epochs", 2);
  cfg.batch_size = j.value("batch_size", 64);
  cfg.latent_dim = j.value("latent_dim", cfg.kind == gan::GanKind::near_ood ? 32 : 0);
  cfg.learning_rate = j.value("learning_rate", 2e-4);
  cfg.seed = seed;
  return cfg;
}

struct FilterOutcome {
  fs::path benchmark_dir;
  fs::path val_mi_file;
  fs::path cand_mi_file;
  gan::MiInterval interval;
};

/// Pools candidates from the artifacts, picks (or takes) an MI interval,
/// filters, and exports a benchmark with its manifest.
FilterOutcome run_filter_step(Context& ctx, const json& fspec,
                              const std::vector<gan::GeneratorArtifact>& artifacts,
                              const models::EnsembleHandle& loss_ensemble,
                              const data::LabeledDataset& val,
                              const data::LabeledDataset& source,
                              const fs::path& bench_dir) {
  ensure_keys(fspec,
              {"target_count", "width", "interval", "candidate_budget",
               "acceptance_floor", "probe_count"},
              "filter");
  check(!artifacts.empty(), "filter: no generator artifacts");
  const auto kind = artifacts.front().config.kind;
  const int target = fspec.value("target_count", 500);
  const int probe_n = fspec.value("probe_count", std::max(512, target));
  const int k = loss_ensemble.num_classes();

  Rng rng(ctx.seed + 1000);
  // Candidate stream: round-robin over the pooled artifacts ("use all the
  // resulting trained GANs"). Shifted candidates track their source row.
  std::size_t next_artifact = 0;
  Eigen::Index source_cursor = 0;
  std::vector<std::int64_t> stream_source_rows;  // per emitted candidate
  auto next_batch = [&](int want) -> data::ImageBatch {
    const auto& art = artifacts[next_artifact];
    next_artifact = (next_artifact + 1) % artifacts.size();
    if (kind == gan::GanKind::near_ood) return art.sample(want, rng);
    std::vector<int> idx(want);
    for (int i = 0; i < want; ++i) {
      idx[i] = static_cast<int>(source_cursor % source.size());
      stream_source_rows.push_back(source_cursor % source.size());
      ++source_cursor;
    }
    return art.transform(source.images.rows(idx), rng);
  };

  // MI of validation data vs a candidate probe, for interval selection and
  // the report's histogram figure.
  Vector val_mi =
      metrics::mutual_information(models::ensemble_predict(loss_ensemble, val.images));
  std::vector<double> probe;
  while (static_cast<int>(probe.size()) < probe_n) {
    auto b = next_batch(256);
    Vector mi = metrics::mutual_information(models::ensemble_predict(loss_ensemble, b));
    probe.insert(probe.end(), mi.data(), mi.data() + mi.size());
  }
  stream_source_rows.clear();
  source_cursor = 0;
  next_artifact = 0;
  Vector cand_mi = Eigen::Map<Vector>(probe.data(), static_cast<Eigen::Index>(probe.size()));

  gan::MiInterval interval;
  if (fspec.contains("interval") && !fspec.at("interval").is_null()) {
    ensure_keys(fspec.at("interval"), {"lo", "hi"}, "filter.interval");
    interval = {fspec.at("interval").at("lo").get<double>(),
                fspec.at("interval").at("hi").get<double>()};
    interval.validate(k);
  } else {
    interval = gan::select_mi_interval(val_mi, cand_mi, k, fspec.value("width", 0.4));
  }

  auto filtered = gan::filter_by_mi(
      next_batch, loss_ensemble, interval, target,
      fspec.value("candidate_budget", static_cast<std::int64_t>(200000)),
      fspec.value("acceptance_floor", 1e-3));

  data::BenchmarkManifest manifest;
  manifest.kind = kind == gan::GanKind::near_ood ? data::BenchmarkKind::near_ood
                                                 : data::BenchmarkKind::shifted;
  manifest.source_dataset = source.descriptor;
  manifest.lambda_p = artifacts.front().config.lambda_p;
  manifest.lambda_s = artifacts.front().config.lambda_s;
  manifest.mi_lo = interval.lo;
  manifest.mi_hi = interval.hi;
  manifest.generator_checkpoint_id = artifacts.front().checkpoint_id;
  manifest.seed = ctx.seed;
  manifest.sample_count = filtered.samples.size();
  manifest.filter_stats = filtered.stats;
  manifest.created_at = now_iso8601();

  std::optional<std::vector<int>> labels;
  if (kind == gan::GanKind::shifted) {
    std::vector<int> lab;
    manifest.source_indices.clear();
    for (std::int64_t pos : filtered.source_indices) {
      const auto row = stream_source_rows.empty()
                           ? pos % source.size()
                           : stream_source_rows[static_cast<std::size_t>(pos)];
      manifest.source_indices.push_back(row);
      lab.push_back(source.labels[static_cast<std::size_t>(row)]);
    }
    labels = std::move(lab);
  }
  data::export_benchmark(filtered.samples, labels, manifest, bench_dir, ctx.overwrite);

  FilterOutcome out;
  out.benchmark_dir = bench_dir;
  out.interval = interval;
  fs::create_directories(ctx.out / "mi");
  out.val_mi_file = ctx.out / "mi" / (data::to_string(manifest.kind) + "_val.bin");
  out.cand_mi_file = ctx.out / "mi" / (data::to_string(manifest.kind) + "_candidates.bin");
  data::write_tensor_f64(out.val_mi_file, val_mi.transpose(),
                         {1, static_cast<std::uint64_t>(val_mi.size())});
  data::write_tensor_f64(out.cand_mi_file, cand_mi.transpose(),
                         {1, static_cast<std::uint64_t>(cand_mi.size())});
  ctx.artifacts["mi_sets"].push_back(
      {{"name", data::to_string(manifest.kind) + " val"},
       {"path", fs::relative(out.val_mi_file, ctx.out).string()}});
  ctx.artifacts["mi_sets"].push_back(
      {{"name", data::to_string(manifest.kind) + " candidates"},
       {"path", fs::relative(out.cand_mi_file, ctx.out).string()}});
  ctx.artifacts["benchmarks"].push_back(fs::relative(bench_dir, ctx.out).string());
  return out;
}

data::ImageBatch resolve_ood_images(const Context& ctx, const json& spec,
                                    const data::DatasetDescriptor& desc, int count) {
  ensure_keys(spec, {"name", "source", "dataset", "benchmark"}, "ood_set");
  if (spec.contains("source")) {
    check(spec.at("source") == "noise", "ood_set.source supports only 'noise'");
    Rng rng(ctx.seed + 99);
    return data::uniform_noise_images(count, desc.shape, rng);
  }
  if (spec.contains("dataset"))
    return load_split(ctx, spec.at("dataset").get<std::string>(), data::Split::test)
        .images;
  if (spec.contains("benchmark")) {
    fs::path p = spec.at("benchmark").get<std::string>();
    if (p.is_relative() && !fs::exists(p)) p = ctx.out / p;
    return data::import_benchmark(p).samples;
  }
  throw InvalidArgument("ood_set needs one of source/dataset/benchmark");
}

fs::path emit_detection(Context& ctx, const eval::DetectionResult& r, int index) {
  const fs::path f = ctx.out / "detect" /
                     ("d" + std::to_string(index) + "_" + eval::to_string(r.detector) +
                      ".json");
  fs::create_directories(f.parent_path());
  std::ofstream(f) << r.to_json() << "\n";
  ctx.artifacts["detections"].push_back(fs::relative(f, ctx.out).string());
  return f;
}

fs::path emit_calibration(Context& ctx, const metrics::CalibrationReport& rep,
                          const std::string& name) {
  const fs::path f = ctx.out / "calibrate" / (name + ".json");
  fs::create_directories(f.parent_path());
  std::ofstream(f) << rep.to_json() << "\n";
  ctx.artifacts["calibrations"].push_back(
      {{"name", name}, {"path", fs::relative(f, ctx.out).string()}});
  return f;
}

// ------------------------------------------------------------- pipelines

void run_train_ensemble(Context& ctx) {
  ensure_keys(ctx.cfg, {"schema_version", "pipeline", "dataset", "seed", "ensemble"},
              "");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto test = load_split(ctx, dataset, data::Split::test);
  auto ej = train_ensemble_to(ctx, ctx.cfg.at("ensemble"), train, &test,
                              ctx.out / "ensemble", ctx.seed);
  ctx.artifacts["ensembles"].push_back(fs::relative(ej, ctx.out).string());
}

void run_train_generator(Context& ctx) {
  ensure_keys(ctx.cfg,
              {"schema_version", "pipeline", "dataset", "seed", "generator",
               "loss_ensemble", "extractor_model"},
              "");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto ensemble = load_ensemble(ctx.cfg.at("loss_ensemble").get<std::string>());
  auto extractor =
      models::ClassifierHandle::load(ctx.cfg.at("extractor_model").get<std::string>())
          .feature_extractor();
  auto cfg = generator_config(ctx.cfg.at("generator"), ctx.seed);
  auto art = gan::train_generator(cfg, train, ensemble, extractor);
  art.save(ctx.out / "generator");
  ctx.artifacts["generators"].push_back("generator");
}

void run_grid_search(Context& ctx) {
  ensure_keys(ctx.cfg,
              {"schema_version", "pipeline", "dataset", "seed", "generator", "grid",
               "loss_ensemble", "extractor_model"},
              "");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto ensemble = load_ensemble(ctx.cfg.at("loss_ensemble").get<std::string>());
  auto extractor =
      models::ClassifierHandle::load(ctx.cfg.at("extractor_model").get<std::string>())
          .feature_extractor();
  auto base = generator_config(ctx.cfg.at("generator"), ctx.seed);

  std::vector<gan::LambdaCell> cells;
  const json& grid = ctx.cfg.at("grid");
  if (grid.is_string() && grid == "default") {
    cells = gan::default_lambda_grid(base.kind);
  } else {
    for (const auto& c : grid)
      cells.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
  }
  auto results =
      gan::grid_search_lambda(base.kind, cells, train, base, ensemble, extractor);
  json gj = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    json cell{{"lambda_p", results[i].cell.lambda_p},
              {"lambda_s", results[i].cell.lambda_s}};
    if (results[i].artifact) {
      const fs::path cdir = ctx.out / "generators" / ("cell" + std::to_string(i));
      results[i].artifact->save(cdir);
      cell["artifact"] = fs::relative(cdir, ctx.out).string();
      cell["fid_to_train"] = results[i].artifact->fid_to_train;
      cell["mode_collapse_warning"] = results[i].artifact->mode_collapse_warning;
    } else {
      cell["error"] = results[i].error;
    }
    gj.push_back(cell);
  }
  write_json(ctx.out / "grid.json", gj);
  ctx.artifacts["grid"] = "grid.json";
}

std::vector<gan::GeneratorArtifact> load_artifacts_from(const Context& ctx,
                                                        const json& paths) {
  std::vector<gan::GeneratorArtifact> arts;
  for (const auto& rel : paths) {
    fs::path p = rel.get<std::string>();
    if (p.is_relative() && !fs::exists(p)) p = ctx.out / p;
    arts.push_back(gan::GeneratorArtifact::load(p));
  }
  return arts;
}

void run_filter(Context& ctx) {
  ensure_keys(ctx.cfg,
              {"schema_version", "pipeline", "dataset", "seed", "filter", "generators",
               "loss_ensemble"},
              "");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto val = load_split(ctx, dataset, data::Split::val);
  auto ensemble = load_ensemble(ctx.cfg.at("loss_ensemble").get<std::string>());
  auto artifacts = load_artifacts_from(ctx, ctx.cfg.at("generators"));
  check(!artifacts.empty(), "filter: generators list is empty");
  const bool shifted = artifacts.front().config.kind == gan::GanKind::shifted;
  auto source = load_split(ctx, dataset, data::Split::test);
  run_filter_step(ctx, ctx.cfg.at("filter"), artifacts, ensemble, val, source,
                  ctx.out / "benchmark" /
                      (shifted ? "shifted" : "near_ood"));
}

void run_export(Context& ctx) {
  ensure_keys(ctx.cfg, {"schema_version", "pipeline", "seed", "export"}, "");
  const json& e = ctx.cfg.at("export");
  ensure_keys(e, {"benchmark", "destination"}, "export");
  auto imported = data::import_benchmark(e.at("benchmark").get<std::string>());
  fs::path dest = e.at("destination").get<std::string>();
  if (dest.is_relative()) dest = ctx.out / dest;
  data::export_benchmark(imported.samples, imported.labels, imported.manifest, dest,
                         ctx.overwrite);
  ctx.artifacts["benchmarks"].push_back(fs::relative(dest, ctx.out).string());
}

void run_detect(Context& ctx) {
  ensure_keys(ctx.cfg, {"schema_version", "pipeline", "dataset", "seed", "detect"}, "");
  const json& d = ctx.cfg.at("detect");
  ensure_keys(d, {"detectors", "model", "ensemble", "ood_sets"}, "detect");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto test = load_split(ctx, dataset, data::Split::test);

  std::optional<models::ClassifierHandle> model;
  if (d.contains("model"))
    model = models::ClassifierHandle::load(d.at("model").get<std::string>());
  std::optional<models::EnsembleHandle> ensemble;
  if (d.contains("ensemble"))
    ensemble = load_ensemble(d.at("ensemble").get<std::string>());

  int index = 0;
  for (const auto& os : d.at("ood_sets")) {
    auto ood = resolve_ood_images(ctx, os, train.descriptor,
                                  static_cast<int>(test.size()));
    const std::string name = os.value("name", "ood");
    for (const auto& det_name : d.at("detectors")) {
      auto det = eval::detector_from_string(det_name.get<std::string>());
      eval::DetectionResult r;
      if (det == eval::DetectorId::ensemble_predictive_entropy) {
        check(ensemble.has_value(), "detect: ensemble detector without 'ensemble'");
        r = eval::run_detection(det, *ensemble, test.images, ood, dataset, name,
                                ctx.seed);
      } else {
        check(model.has_value(), "detect: model detector without 'model'");
        r = eval::run_detection(det, *model, test.images, ood, dataset, name, &train,
                                ctx.seed);
      }
      emit_detection(ctx, r, index++);
    }
  }
}

void run_calibrate(Context& ctx) {
  ensure_keys(ctx.cfg, {"schema_version", "pipeline", "dataset", "seed", "calibrate"},
              "");
  const json& c = ctx.cfg.at("calibrate");
  ensure_keys(c, {"model", "benchmark"}, "calibrate");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto test = load_split(ctx, dataset, data::Split::test);
  auto model = models::ClassifierHandle::load(c.at("model").get<std::string>());

  emit_calibration(ctx, eval::run_calibration(model, test), "clean");
  auto bench = data::import_benchmark(c.at("benchmark").get<std::string>());
  check(bench.labels.has_value(), "calibrate: benchmark carries no labels");
  emit_calibration(ctx, eval::run_calibration(model, bench.samples, *bench.labels),
                   "shifted");
}

void run_outlier_exposure(Context& ctx) {
  ensure_keys(ctx.cfg,
              {"schema_version", "pipeline", "dataset", "seed", "outlier_exposure"},
              "");
  const json& oe = ctx.cfg.at("outlier_exposure");
  ensure_keys(oe,
              {"arch", "epochs", "batch_size", "learning_rate", "beta", "outliers",
               "heldout_dataset", "num_seeds"},
              "outlier_exposure");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto test = load_split(ctx, dataset, data::Split::test);
  auto outliers = data::import_benchmark(oe.at("outliers").get<std::string>()).samples;
  auto heldout =
      load_split(ctx, oe.at("heldout_dataset").get<std::string>(), data::Split::test);
  const std::string arch = oe.value("arch", "cnn-tiny");
  const int num_seeds = oe.value("num_seeds", 3);

  json rows = json::array();
  double exposed_mean = 0.0, plain_mean = 0.0;
  for (int s = 0; s < num_seeds; ++s) {
    auto cfg = training_config(json{{"epochs", oe.value("epochs", 3)},
                                    {"batch_size", oe.value("batch_size", 64)},
                                    {"learning_rate", oe.value("learning_rate", 0.05)},
                                    {"beta", oe.value("beta", 0.5)}},
                               ctx.seed + s);
    auto plain = models::train_classifier(arch, train, cfg, &test);
    auto exposed = eval::outlier_exposure_train(arch, train, cfg, outliers,
                                                "near-ood-benchmark", &test);
    auto ap = eval::run_detection(eval::DetectorId::softmax_entropy, plain, test.images,
                                  heldout.images, dataset, "heldout");
    auto ae = eval::run_detection(eval::DetectorId::softmax_entropy, exposed,
                                  test.images, heldout.images, dataset, "heldout");
    plain_mean += ap.auroc / num_seeds;
    exposed_mean += ae.auroc / num_seeds;
    rows.push_back({{"seed", ctx.seed + s},
                    {"plain_auroc", ap.auroc},
                    {"exposed_auroc", ae.auroc}});
  }
  write_json(ctx.out / "outlier_exposure.json",
             json{{"rows", rows},
                  {"plain_mean_auroc", plain_mean},
                  {"exposed_mean_auroc", exposed_mean}});
  ctx.artifacts["outlier_exposure"] = "outlier_exposure.json";
}

void run_sanity(Context& ctx) {
  ensure_keys(ctx.cfg, {"schema_version", "pipeline", "dataset", "seed", "sanity"}, "");
  const json& s = ctx.cfg.at("sanity");
  ensure_keys(s, {"evaluation_ensemble", "benchmark", "extractor_model", "references"},
              "sanity");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto ensemble = load_ensemble(s.at("evaluation_ensemble").get<std::string>());
  auto bench = data::import_benchmark(s.at("benchmark").get<std::string>());

  auto cm = eval::sanity_confusion(ensemble, bench.samples, bench.labels);
  const fs::path cmf = ctx.out / "confusion.json";
  std::ofstream(cmf) << cm.to_json() << "\n";
  ctx.artifacts["confusion"] = "confusion.json";

  auto extractor =
      models::ClassifierHandle::load(s.at("extractor_model").get<std::string>());
  Matrix train_f = extractor.features(train.images, "penultimate");
  std::vector<std::pair<std::string, Matrix>> cands;
  cands.emplace_back("benchmark",
                     extractor.features(bench.samples, "penultimate"));
  for (const auto& ref : s.value("references", json::array())) {
    auto imgs = resolve_ood_images(ctx, ref, train.descriptor, 512);
    cands.emplace_back(ref.value("name", "reference"),
                       extractor.features(imgs, "penultimate"));
  }
  json fid = json::array();
  for (const auto& e : eval::sanity_fid(train_f, cands))
    fid.push_back({{"name", e.name}, {"fid", e.fid}});
  write_json(ctx.out / "fid.json", fid);
  ctx.artifacts["fid"] = "fid.json";
}

void run_ordering(Context& ctx) {
  ensure_keys(ctx.cfg, {"schema_version", "pipeline", "dataset", "seed", "ordering"},
              "");
  const json& o = ctx.cfg.at("ordering");
  ensure_keys(o, {"detector", "models", "conventional", "generated"}, "ordering");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto test = load_split(ctx, dataset, data::Split::test);
  auto det = eval::detector_from_string(o.value("detector", "softmax_entropy"));
  auto conv = resolve_ood_images(ctx, o.at("conventional"), train.descriptor,
                                 static_cast<int>(test.size()));
  auto gen = resolve_ood_images(ctx, o.at("generated"), train.descriptor,
                                static_cast<int>(test.size()));

  std::vector<eval::DetectionResult> cr, gr;
  int index = 0;
  for (const auto& mp : o.at("models")) {
    auto m = models::ClassifierHandle::load(mp.get<std::string>());
    cr.push_back(eval::run_detection(det, m, test.images, conv, dataset,
                                     o.at("conventional").value("name", "conventional"),
                                     &train, ctx.seed));
    gr.push_back(eval::run_detection(det, m, test.images, gen, dataset,
                                     o.at("generated").value("name", "generated"),
                                     &train, ctx.seed));
    emit_detection(ctx, cr.back(), index++);
    emit_detection(ctx, gr.back(), index++);
  }
  auto rep = eval::ordering_report(cr, gr);
  std::ofstream(ctx.out / "ordering.json") << rep.to_json() << "\n";
  ctx.artifacts["ordering"] = "ordering.json";
}

/// Composes the whole study in one directory: loss ensemble, extractor and
/// held-out detector models, near-OoD grid + filtered benchmark, shifted
/// generator + benchmark, detection, calibration, sanity checks, report.
void run_full_pipeline(Context& ctx) {
  ensure_keys(ctx.cfg,
              {"schema_version", "pipeline", "dataset", "seed", "full_pipeline"}, "");
  const json& fp = ctx.cfg.at("full_pipeline");
  ensure_keys(fp,
              {"ensemble", "detector_model", "generator", "grid", "shifted_generator",
               "filter", "shifted_filter", "detectors"},
              "full_pipeline");
  const std::string dataset = ctx.cfg.at("dataset").get<std::string>();
  auto train = load_split(ctx, dataset, data::Split::train);
  auto val = load_split(ctx, dataset, data::Split::val);
  auto test = load_split(ctx, dataset, data::Split::test);

  // 1. Heterogeneous loss ensemble.
  auto ej = train_ensemble_to(ctx, fp.value("ensemble", json{{"role", "training_loss"},
                                                             {"architectures",
                                                              {"mlp-small", "mlp-wide"}},
                                                             {"epochs", 2}}),
                              train, &test, ctx.out / "ensemble", ctx.seed);
  auto loss_ensemble = load_ensemble(ej);
  ctx.artifacts["ensembles"].push_back(fs::relative(ej, ctx.out).string());

  // 2. Held-out detector model doubling as the LPIPS/FID backbone.
  auto dm_spec = fp.value("detector_model", json::object());
  ensure_keys(dm_spec, {"arch", "epochs", "batch_size", "learning_rate"},
              "full_pipeline.detector_model");
  models::TrainingConfig dm_cfg = training_config(
      json{{"epochs", dm_spec.value("epochs", 3)},
           {"batch_size", dm_spec.value("batch_size", 64)},
           {"learning_rate", dm_spec.value("learning_rate", 0.05)}},
      ctx.seed + 100);
  auto detector_model = models::train_classifier(dm_spec.value("arch", "cnn-tiny"),
                                                 train, dm_cfg, &test);
  detector_model.save(ctx.out / "detector_model");
  auto extractor = detector_model.feature_extractor();

  // 3. Near-OoD generators over the lambda grid, pooled into one benchmark.
  auto gcfg = generator_config(fp.value("generator", json::object()), ctx.seed);
  gcfg.kind = gan::GanKind::near_ood;
  if (gcfg.latent_dim == 0) gcfg.latent_dim = 32;
  std::vector<gan::LambdaCell> cells;
  const json grid = fp.value("grid", json("default"));
  if (grid.is_string() && grid == "default")
    cells = gan::default_lambda_grid(gan::GanKind::near_ood);
  else
    for (const auto& c : grid) cells.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
  auto grid_results = gan::grid_search_lambda(gan::GanKind::near_ood, cells, train,
                                              gcfg, loss_ensemble, extractor);
  std::vector<gan::GeneratorArtifact> near_arts;
  json gj = json::array();
  for (std::size_t i = 0; i < grid_results.size(); ++i) {
    json cell{{"lambda_p", grid_results[i].cell.lambda_p},
              {"lambda_s", grid_results[i].cell.lambda_s}};
    if (grid_results[i].artifact) {
      const fs::path cdir = ctx.out / "generators" / ("cell" + std::to_string(i));
      grid_results[i].artifact->save(cdir);
      cell["artifact"] = fs::relative(cdir, ctx.out).string();
      near_arts.push_back(std::move(*grid_results[i].artifact));
    } else {
      cell["error"] = grid_results[i].error;
    }
    gj.push_back(cell);
  }
  write_json(ctx.out / "grid.json", gj);
  ctx.artifacts["grid"] = "grid.json";
  check(!near_arts.empty(), "full-pipeline: every grid cell failed");

  auto near_bench =
      run_filter_step(ctx, fp.value("filter", json::object()), near_arts, loss_ensemble,
                      val, test, ctx.out / "benchmark" / "near_ood");

  // 4. Shifted generator and its labeled benchmark.
  auto scfg = generator_config(fp.value("shifted_generator", json::object()), ctx.seed + 1);
  scfg.kind = gan::GanKind::shifted;
  scfg.latent_dim = 0;
  if (!fp.contains("shifted_generator")) {
    scfg.lambda_p = 2.0;
    scfg.lambda_s = 1.0;
  }
  auto shifted_art = gan::train_generator(scfg, train, loss_ensemble, extractor);
  shifted_art.save(ctx.out / "generators" / "shifted");
  auto shifted_bench = run_filter_step(
      ctx, fp.value("shifted_filter", json::object()), {shifted_art}, loss_ensemble,
      val, test, ctx.out / "benchmark" / "shifted");

  // 5. Detection with the held-out model on the new and reference OoD sets.
  Rng nrng(ctx.seed + 99);
  auto noise =
      data::uniform_noise_images(static_cast<int>(test.size()), train.descriptor.shape, nrng);
  auto near_samples = data::import_benchmark(near_bench.benchmark_dir).samples;
  int index = 0;
  for (const auto& det_name :
       fp.value("detectors", std::vector<std::string>{"softmax_entropy"})) {
    auto det = eval::detector_from_string(det_name);
    if (det == eval::DetectorId::ensemble_predictive_entropy) continue;
    emit_detection(ctx,
                   eval::run_detection(det, detector_model, test.images, near_samples,
                                       dataset, "near-ood", &train, ctx.seed),
                   index++);
    emit_detection(ctx,
                   eval::run_detection(det, detector_model, test.images, noise, dataset,
                                       "noise", &train, ctx.seed),
                   index++);
  }

  // 6. Calibration on the shifted benchmark vs clean test.
  auto sb = data::import_benchmark(shifted_bench.benchmark_dir);
  emit_calibration(ctx, eval::run_calibration(detector_model, test), "clean");
  if (sb.labels)
    emit_calibration(ctx,
                     eval::run_calibration(detector_model, sb.samples, *sb.labels),
                     "shifted");

  // 7. Sanity: confusion on the shifted set, FID table for the near set.
  models::TrainingConfig ev_cfg = dm_cfg;
  std::vector<models::ClassifierHandle> ev;
  for (int i = 0; i < 3; ++i) {
    ev_cfg.seed = ctx.seed + 200 + i;
    ev.push_back(models::train_classifier("mlp-small", train, ev_cfg));
  }
  models::EnsembleHandle eval_ensemble(std::move(ev),
                                       models::EnsembleRole::evaluation_ensemble);
  auto cm = eval::sanity_confusion(eval_ensemble, sb.samples, sb.labels);
  std::ofstream(ctx.out / "confusion.json") << cm.to_json() << "\n";
  ctx.artifacts["confusion"] = "confusion.json";

  Matrix train_f = detector_model.features(train.images, "penultimate");
  json fid = json::array();
  for (const auto& e : eval::sanity_fid(
           train_f, {{"near-ood", detector_model.features(near_samples, "penultimate")},
                     {"noise", detector_model.features(noise, "penultimate")}}))
    fid.push_back({{"name", e.name}, {"fid", e.fid}});
  write_json(ctx.out / "fid.json", fid);
  ctx.artifacts["fid"] = "fid.json";

  write_summary(ctx, "full-pipeline");
  report::render_report(ctx.out);
}

// ------------------------------------------------------------------ main

int run(const std::string& subcommand, const fs::path& config_path,
        const fs::path& out_dir, std::optional<std::uint64_t> seed_flag,
        bool overwrite) {
  Context ctx;
  ctx.out = out_dir;
  ctx.overwrite = overwrite;
  if (const char* root = std::getenv("OODFORGE_DATA_ROOT")) ctx.data_root = root;

  try {  // ---- validation phase: exit code 1 on any failure here
    if (subcommand != "report") {
      ctx.cfg = read_json(config_path);
      check(ctx.cfg.value("schema_version", -1) == kSchemaVersion,
            "config: schema_version must be " + std::to_string(kSchemaVersion));
      check(ctx.cfg.value("pipeline", "") == subcommand,
            "config: pipeline field must match the subcommand '" + subcommand + "'");
      if (seed_flag) ctx.cfg["seed"] = *seed_flag;
      ctx.seed = ctx.cfg.value("seed", 0);
      if (fs::exists(ctx.out) && !fs::is_empty(ctx.out) && !overwrite)
        throw InvalidArgument("output directory " + ctx.out.string() +
                              " is not empty (use --overwrite)");
      fs::create_directories(ctx.out);
      snapshot_config(ctx);
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {  // ---- runtime phase: exit code 2, partial artifacts + FAILED marker
    if (subcommand == "train-ensemble") run_train_ensemble(ctx);
    else if (subcommand == "train-generator") run_train_generator(ctx);
    else if (subcommand == "grid-search") run_grid_search(ctx);
    else if (subcommand == "filter") run_filter(ctx);
    else if (subcommand == "export") run_export(ctx);
    else if (subcommand == "detect") run_detect(ctx);
    else if (subcommand == "calibrate") run_calibrate(ctx);
    else if (subcommand == "outlier-exposure") run_outlier_exposure(ctx);
    else if (subcommand == "sanity") run_sanity(ctx);
    else if (subcommand == "ordering") run_ordering(ctx);
    else if (subcommand == "full-pipeline") { run_full_pipeline(ctx); return 0; }
    else if (subcommand == "report") {
      report::render_report(ctx.out);
      return 0;
    } else {
      std::cerr << "unknown subcommand " << subcommand << "\n";
      return 1;
    }
    write_summary(ctx, subcommand);
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    std::ofstream(ctx.out / "FAILED") << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oodforge: synthesized OoD benchmark toolkit"};
  app.require_subcommand(1);

  std::string config;
  std::string out = "experiment";
  std::optional<std::uint64_t> seed;
  bool overwrite = false;

  const std::vector<std::string> pipelines = {
      "train-ensemble", "train-generator", "grid-search",      "filter",
      "export",         "detect",          "calibrate",        "outlier-exposure",
      "sanity",         "ordering",        "full-pipeline",    "report"};
  for (const auto& name : pipelines) {
    auto* sub = app.add_subcommand(name);
    if (name != "report")
      sub->add_option("--config", config, "pipeline config file")->required();
    sub->add_option("--out", out, "experiment directory");
    sub->add_option("--seed", seed, "seed override");
    sub->add_flag("--overwrite", overwrite, "allow writing into a non-empty directory");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string chosen = app.get_subcommands().front()->get_name();
  return run(chosen, config, out, seed, overwrite);
}
