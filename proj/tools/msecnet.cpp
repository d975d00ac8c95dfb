// Copyright 2026 The msecnet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line entry point: synth, train, eval, baseline, gradcheck, params.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msecnet/msecnet.hpp"

namespace {

namespace fs = std::filesystem;
using msecnet::Error;
using msecnet::ErrorKind;
using Json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kShape: return kExitUsage;
    case ErrorKind::kParse:
    case ErrorKind::kIo:
    case ErrorKind::kConsistency:
    case ErrorKind::kCoverage:
    case ErrorKind::kDegenerate:
    case ErrorKind::kUninitializedStats: return kExitData;
    case ErrorKind::kNumeric:
    case ErrorKind::kDeterminism:
    case ErrorKind::kLifecycle: return kExitNumeric;
  }
  return kExitNumeric;
}

// Raised for configuration problems so they map to the usage exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> ablations;
  std::string out;
  std::size_t threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_model) {
  cmd->add_option("--config", a.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.sets, "Override a config value, e.g. train.epochs=2 (repeatable)");
  if (with_model) {
    cmd->add_option("--ablation", a.ablations, "Apply a named ablation (repeatable)")
        ->check(CLI::IsMember(msecnet::run::ablation_names()));
  }
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--threads", a.threads, "Worker cap (default: MSEC_THREADS or 1)");
}

struct Loaded {
  Json cfg = Json::object();
  fs::path base = fs::current_path();  // relative paths resolve against this
};

Loaded load_config(const CommonArgs& a, const std::set<std::string>& sections) {
  Loaded l;
  try {
    if (!a.config.empty()) {
      l.cfg = msecnet::data::read_json_file(a.config);
      l.base = fs::absolute(a.config).parent_path();
    }
    if (!l.cfg.is_object()) throw ConfigError("config: top level must be an object");
    for (const auto& s : a.sets) msecnet::run::apply_set(l.cfg, s);
    for (const auto& n : a.ablations) msecnet::run::apply_ablation(l.cfg, n);
    std::set<std::string> allowed = sections;
    allowed.insert({"command", "out_dir", "threads"});
    for (const auto& [k, v] : l.cfg.items())
      if (!allowed.contains(k)) throw ConfigError("config: unknown top-level key '" + k + "'");
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return l;
}

std::string resolve_path(const Loaded& l, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : l.base / path).lexically_normal().string();
}

std::string out_dir(const Loaded& l, const CommonArgs& a) {
  std::string d = a.out;
  if (d.empty() && l.cfg.contains("out_dir")) d = resolve_path(l, l.cfg["out_dir"].get<std::string>());
  if (d.empty()) throw ConfigError("no output directory: pass --out or set out_dir");
  std::error_code ec;
  fs::create_directories(d, ec);
  if (!fs::is_directory(d)) throw Error(ErrorKind::kIo, "cannot create output directory " + d);
  return fs::absolute(d).lexically_normal().string();
}

std::size_t threads(const Loaded& l, const CommonArgs& a) {
  if (a.threads > 0) return a.threads;
  if (l.cfg.contains("threads")) return l.cfg["threads"].get<std::size_t>();
  return msecnet::infer::resolve_threads();
}

Json section(const Loaded& l, const char* name) {
  if (!l.cfg.contains(name)) return Json::object();
  if (!l.cfg[name].is_object()) throw ConfigError(std::string("config: '") + name + "' must be an object");
  return l.cfg[name];
}

template <typename T>
T value_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!msecnet::data::detail::is_non_negative_integer(j.at(key)))
      throw ConfigError(where + "." + key + ": expected a non-negative integer");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void check_section_keys(const Json& j, const std::set<std::string>& keys, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!keys.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

void write_effective(const std::string& dir, Json cfg) {
  write_json(fs::path(dir) / "effective_config.json", cfg);
}

msecnet::model::ModelConfig parse_model_section(const Json& j) {
  try {
    return msecnet::run::parse_model(j);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::string manifest_path(const Loaded& l, const std::string& flag) {
  if (!flag.empty()) return fs::absolute(flag).lexically_normal().string();
  const Json d = section(l, "data");
  check_section_keys(d, {"manifest"}, "data");
  if (!d.contains("manifest")) throw ConfigError("data.manifest is required");
  return resolve_path(l, value_or<std::string>(d, "manifest", "", "data"));
}

// ---- commands ------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out) {
  msecnet::data::SyntheticSpec spec;
  try {
    spec = msecnet::data::parse_synthetic_spec(msecnet::data::read_json_file(spec_path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(ErrorKind::kParse, spec_path + ": " + e.what());
  }
  const auto m = msecnet::data::write_synthetic(spec, out);
  write_effective(out, Json{{"command", "synth"}, {"out_dir", fs::absolute(out).string()}, {"spec", msecnet::data::to_json(spec)}});
  std::printf("wrote %zu shapes (%zu train, %zu test) to %s\n", m.train.size() + m.test.size(), m.train.size(),
              m.test.size(), out.c_str());
  return kExitOk;
}

int cmd_train(const CommonArgs& a, const std::string& manifest_flag) {
  const Loaded l = load_config(a, {"model", "train", "data"});
  const auto mcfg = parse_model_section(section(l, "model"));
  msecnet::train::TrainConfig tcfg;
  try {
    tcfg = msecnet::run::parse_train(section(l, "train"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const std::string manifest = manifest_path(l, manifest_flag);
  const std::string dir = out_dir(l, a);
  write_effective(dir, Json{{"command", "train"},
                            {"model", msecnet::run::to_json(mcfg)},
                            {"train", msecnet::run::to_json(tcfg)},
                            {"data", {{"manifest", manifest}}},
                            {"out_dir", dir}});

  const auto m = msecnet::data::build_manifest(manifest);
  MSECNET_REQUIRE(!m.train.empty(), ErrorKind::kInvalidArgument, "manifest has no training shapes");
  const auto shapes = msecnet::data::load_shapes(m.train);
  std::vector<msecnet::geom::PointCloud> clouds;
  for (const auto& s : shapes) clouds.push_back(s.cloud);

  msecnet::model::Network net(mcfg, tcfg.seed);
  std::printf("training %zu learnable scalars on %zu shapes\n", net.params().learnable_count(), clouds.size());
  msecnet::train::TrainOutputs outputs;
  outputs.log_path = (fs::path(dir) / "loss_log.tsv").string();
  outputs.last_checkpoint = (fs::path(dir) / "checkpoint.bin").string();
  outputs.best_checkpoint = (fs::path(dir) / "checkpoint_best.bin").string();
  const auto start = std::chrono::steady_clock::now();
  outputs.on_epoch = [&](const msecnet::train::EpochRecord& r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("epoch %zu  lr %.3e  l_reg %.6f  l_sin %.6f  l_total %.6f  (%.0fs)\n", r.epoch, r.lr, r.loss.l_reg,
                r.loss.l_sin, r.loss.l_total, s);
    std::fflush(stdout);
  };
  try {
    const auto res = msecnet::train::train(net, clouds, tcfg, outputs);
    std::printf("best epoch %zu  l_total %.6f  steps %llu\n", res.best_epoch, res.best_loss,
                static_cast<unsigned long long>(res.steps));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNumeric) {
      write_json(fs::path(dir) / "numeric_abort.json", Json{{"error", e.what()}});
    }
    throw;
  }
  return kExitOk;
}

std::vector<msecnet::data::CorruptionSpec> corruptions(const Json& sec, const std::string& where) {
  if (!sec.contains("corruptions")) return {msecnet::data::CorruptionSpec{}};
  try {
    return msecnet::run::parse_corruptions(sec["corruptions"], where + ".corruptions");
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void write_normals_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "normals", ec);
}

int cmd_eval(const CommonArgs& a, const std::string& manifest_flag, const std::string& ckpt_flag, bool oracle) {
  const Loaded l = load_config(a, {"model", "data", "eval"});
  const Json e = section(l, "eval");
  check_section_keys(e, {"checkpoint", "corruptions", "n", "interior_fraction", "batch", "pca_k", "include_pca",
                         "estimator", "write_normals"},
                     "eval");
  std::string estimator = value_or<std::string>(e, "estimator", "msecnet", "eval");
  if (oracle) estimator = "oracle";
  if (estimator != "msecnet" && estimator != "oracle") throw ConfigError("eval.estimator: expected msecnet or oracle");
  const std::string manifest = manifest_path(l, manifest_flag);
  const auto sweep = corruptions(e, "eval");
  const std::size_t pca_k = value_or<std::size_t>(e, "pca_k", 18, "eval");
  const bool include_pca = value_or<bool>(e, "include_pca", true, "eval");
  const bool write_normals = value_or<bool>(e, "write_normals", true, "eval");
  msecnet::infer::InferenceOptions io;
  io.n = value_or<std::size_t>(e, "n", 128, "eval");
  io.interior_fraction = value_or<double>(e, "interior_fraction", msecnet::infer::kDefaultInteriorFraction, "eval");
  io.batch = value_or<std::size_t>(e, "batch", 16, "eval");
  io.threads = threads(l, a);

  std::optional<msecnet::model::ModelConfig> mcfg;
  std::string ckpt;
  if (estimator == "msecnet") {
    ckpt = !ckpt_flag.empty() ? fs::absolute(ckpt_flag).string()
           : e.contains("checkpoint") ? resolve_path(l, value_or<std::string>(e, "checkpoint", "", "eval"))
                                      : std::string();
    if (ckpt.empty()) throw ConfigError("eval.checkpoint (or --checkpoint) is required");
    MSECNET_REQUIRE(fs::exists(ckpt), ErrorKind::kIo, "checkpoint not found: " + ckpt);
    if (l.cfg.contains("model")) {
      mcfg = parse_model_section(l.cfg["model"]);
    } else {
      const fs::path echo = fs::path(ckpt).parent_path() / "effective_config.json";
      if (!fs::exists(echo)) throw ConfigError("no model section and no effective_config.json next to the checkpoint");
      const Json trained = msecnet::data::read_json_file(echo.string());
      if (!trained.contains("model")) throw ConfigError(echo.string() + ": no model section");
      mcfg = parse_model_section(trained["model"]);
    }
  }
  const std::string dir = out_dir(l, a);
  Json eff{{"command", "eval"}};
  if (mcfg) eff["model"] = msecnet::run::to_json(*mcfg);
  eff["data"] = {{"manifest", manifest}};
  Json ej{{"estimator", estimator}};
  if (!ckpt.empty()) ej["checkpoint"] = ckpt;
  ej["corruptions"] = msecnet::run::to_json(sweep);
  ej["n"] = io.n;
  ej["interior_fraction"] = io.interior_fraction;
  ej["batch"] = io.batch;
  ej["pca_k"] = pca_k;
  ej["include_pca"] = include_pca;
  ej["write_normals"] = write_normals;
  eff["eval"] = ej;
  eff["out_dir"] = dir;
  eff["threads"] = io.threads;
  write_effective(dir, eff);

  const auto m = msecnet::data::build_manifest(manifest);
  MSECNET_REQUIRE(!m.test.empty(), ErrorKind::kInvalidArgument, "manifest has no test shapes");
  const auto shapes = msecnet::data::load_shapes(m.test);

  std::unique_ptr<msecnet::model::Network> net;
  std::vector<std::unique_ptr<msecnet::infer::NormalEstimator>> owned;
  if (estimator == "msecnet") {
    net = std::make_unique<msecnet::model::Network>(*mcfg);
    net->params().load(ckpt);
    owned.push_back(std::make_unique<msecnet::infer::MsecEstimator>(*net, io));
  } else {
    owned.push_back(std::make_unique<msecnet::infer::OracleEstimator>());
  }
  if (include_pca) owned.push_back(std::make_unique<msecnet::infer::PcaEstimator>(pca_k));

  // Wrap the primary estimator so its normals are written as they are produced.
  struct Recording final : msecnet::infer::NormalEstimator {
    const msecnet::infer::NormalEstimator* inner;
    std::vector<std::vector<msecnet::geom::Vec3>>* sink;
    std::string name() const override { return inner->name(); }
    std::vector<msecnet::geom::Vec3> estimate(const msecnet::geom::PointCloud& c) const override {
      auto n = inner->estimate(c);
      sink->push_back(n);
      return n;
    }
  };
  std::vector<std::vector<msecnet::geom::Vec3>> produced;
  Recording rec;
  rec.inner = owned.front().get();
  rec.sink = &produced;
  std::vector<const msecnet::infer::NormalEstimator*> methods{&rec};
  for (std::size_t i = 1; i < owned.size(); ++i) methods.push_back(owned[i].get());

  const auto cells = msecnet::infer::evaluate_cells(methods, shapes, sweep);
  Json report = msecnet::infer::report_json(cells);
  write_json(fs::path(dir) / "metrics.json", report);
  if (write_normals) {
    write_normals_dir(dir);
    std::size_t at = 0;
    for (const auto& s : shapes)
      for (const auto& c : sweep)
        msecnet::data::write_normals((fs::path(dir) / "normals" / (s.name + "__" + c.label() + ".normals")).string(),
                                     produced.at(at++));
  }
  for (const auto& row : report["overall"])
    std::printf("%-8s mean rmse %.4f deg over %zu cells\n", row["method"].get<std::string>().c_str(),
                row["rmse_deg"].get<double>(), row["cells"].get<std::size_t>());
  return kExitOk;
}

int cmd_baseline(const CommonArgs& a, const std::string& manifest_flag, std::size_t k_flag) {
  const Loaded l = load_config(a, {"data", "baseline"});
  const Json b = section(l, "baseline");
  check_section_keys(b, {"k", "corruptions"}, "baseline");
  const std::size_t k = k_flag > 0 ? k_flag : value_or<std::size_t>(b, "k", 18, "baseline");
  const auto sweep = corruptions(b, "baseline");
  const std::string manifest = manifest_path(l, manifest_flag);
  const std::string dir = out_dir(l, a);
  write_effective(dir, Json{{"command", "baseline"},
                            {"data", {{"manifest", manifest}}},
                            {"baseline", {{"k", k}, {"corruptions", msecnet::run::to_json(sweep)}}},
                            {"out_dir", dir}});
  const auto m = msecnet::data::build_manifest(manifest);
  MSECNET_REQUIRE(!m.test.empty(), ErrorKind::kInvalidArgument, "manifest has no test shapes");
  const auto shapes = msecnet::data::load_shapes(m.test);
  const msecnet::infer::PcaEstimator pca(k);
  const std::vector<const msecnet::infer::NormalEstimator*> methods{&pca};
  const Json report = msecnet::infer::report_json(msecnet::infer::evaluate_cells(methods, shapes, sweep));
  write_json(fs::path(dir) / "metrics.json", report);
  for (const auto& row : report["overall"])
    std::printf("%-8s mean rmse %.4f deg over %zu cells\n", row["method"].get<std::string>().c_str(),
                row["rmse_deg"].get<double>(), row["cells"].get<std::size_t>());
  return kExitOk;
}

int cmd_gradcheck(const CommonArgs& a) {
  Loaded l = load_config(a, {"model", "gradcheck"});
  Json model = section(l, "model");
  if (!model.contains("preset")) model["preset"] = "tiny";
  const auto mcfg = parse_model_section(model);
  const Json g = section(l, "gradcheck");
  check_section_keys(g, {"n", "patches", "seed", "h", "tolerance"}, "gradcheck");
  const std::size_t n = value_or<std::size_t>(g, "n", 32, "gradcheck");
  const std::size_t patches = value_or<std::size_t>(g, "patches", 1, "gradcheck");
  const std::uint64_t seed = value_or<std::uint64_t>(g, "seed", 0, "gradcheck");
  const double tol = value_or<double>(g, "tolerance", 1e-4, "gradcheck");
  msecnet::ad::GradCheckOptions opts;
  opts.h = value_or<double>(g, "h", opts.h, "gradcheck");
  const Json eff{{"command", "gradcheck"},
                 {"model", msecnet::run::to_json(mcfg)},
                 {"gradcheck", {{"n", n}, {"patches", patches}, {"seed", seed}, {"h", opts.h}, {"tolerance", tol}}}};
  std::string dir;
  if (!a.out.empty() || l.cfg.contains("out_dir")) {
    dir = out_dir(l, a);
    Json e2 = eff;
    e2["out_dir"] = dir;
    write_effective(dir, e2);
  }
  auto problem = msecnet::check::make_gradcheck_problem(mcfg, n, patches, seed);
  const auto start = std::chrono::steady_clock::now();
  const auto r = msecnet::check::run_gradcheck(problem, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("worst relative error %.3e at %s (analytic %.6e, numeric %.6e)\n", r.max_rel_error,
              r.worst_param.c_str(), r.worst_analytic, r.worst_numeric);
  std::printf("checked %zu learnable scalars in %.1fs; %zu above %.0e\n", r.checked, secs, r.count_above(tol), tol);
  if (!dir.empty()) {
    write_json(fs::path(dir) / "gradcheck.json", Json{{"max_rel_error", r.max_rel_error},
                                                      {"worst_param", r.worst_param},
                                                      {"worst_analytic", r.worst_analytic},
                                                      {"worst_numeric", r.worst_numeric},
                                                      {"checked", r.checked},
                                                      {"above_tolerance", r.count_above(tol)},
                                                      {"seconds", secs}});
  }
  return r.max_rel_error < tol ? kExitOk : kExitNumeric;
}

int cmd_params(const CommonArgs& a) {
  const Loaded l = load_config(a, {"model"});
  const auto mcfg = parse_model_section(section(l, "model"));
  const msecnet::model::Network net(mcfg);
  const auto breakdown = net.parameter_breakdown();
  const std::size_t total = net.params().learnable_count();
  std::printf("total learnable scalars: %zu (%.2fM)\n", total, static_cast<double>(total) / 1e6);
  for (const auto& [k, v] : breakdown) std::printf("  %-24s %zu\n", k.c_str(), v);
  if (!a.out.empty() || l.cfg.contains("out_dir")) {
    const std::string dir = out_dir(l, a);
    Json mods = Json::object();
    for (const auto& [k, v] : breakdown) mods[k] = v;
    write_effective(dir, Json{{"command", "params"}, {"model", msecnet::run::to_json(mcfg)}, {"out_dir", dir}});
    write_json(fs::path(dir) / "params.json", Json{{"total", total}, {"modules", mods}});
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  msecnet::tune_allocator();
  CLI::App app{"Point-cloud normal estimation: data synthesis, training and evaluation"};
  app.require_subcommand(1);

  std::string spec, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a JSON spec");
  synth->add_option("--spec", spec, "Synthetic dataset spec")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();

  CommonArgs train_args, eval_args, base_args, gc_args, param_args;
  std::string train_manifest, eval_manifest, eval_ckpt, base_manifest;
  bool oracle = false;
  std::size_t base_k = 0;
  auto* train = app.add_subcommand("train", "Train a network");
  add_common(train, train_args, true);
  train->add_option("--manifest", train_manifest, "Dataset manifest or PCPNet directory");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over a corruption sweep");
  add_common(eval, eval_args, true);
  eval->add_option("--manifest", eval_manifest, "Dataset manifest or PCPNet directory");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval->add_flag("--oracle", oracle, "Use the ground-truth stub instead of a network");
  auto* baseline = app.add_subcommand("baseline", "Evaluate the PCA baseline");
  add_common(baseline, base_args, false);
  baseline->add_option("--manifest", base_manifest, "Dataset manifest or PCPNet directory");
  baseline->add_option("--k", base_k, "Neighborhood size");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every learnable scalar");
  add_common(gradcheck, gc_args, true);
  auto* params = app.add_subcommand("params", "Count learnable scalars per module");
  add_common(params, param_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*train) return cmd_train(train_args, train_manifest);
    if (*eval) return cmd_eval(eval_args, eval_manifest, eval_ckpt, oracle);
    if (*baseline) return cmd_baseline(base_args, base_manifest, base_k);
    if (*gradcheck) return cmd_gradcheck(gc_args);
    if (*params) return cmd_params(param_args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitUsage;
}
