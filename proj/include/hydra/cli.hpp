// SPDX-License-Identifier: Apache-2.0
//
// Batch front end. Every subcommand writes exactly one JSON document to
// `out`; diagnostics go to `err`. Exit codes: 0 success, 1 I/O or failed
// check, 2 usage error, 3 validation or format error.
#pragma once

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hydra/hydra.hpp"

namespace hydra::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kInvalid = 3 };

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

/// Level comes from HYDRA_MERGE_LOG={error|info|debug}; default error.
class Logger {
 public:
  explicit Logger(std::ostream& err) : err_(err) {
    if (const char* env = std::getenv("HYDRA_MERGE_LOG")) {
      const std::string v = env;
      if (v == "info") level_ = LogLevel::Info;
      else if (v == "debug") level_ = LogLevel::Debug;
    }
  }

  void error(const std::string& msg) const { emit(LogLevel::Error, "error", msg); }
  void info(const std::string& msg) const { emit(LogLevel::Info, "info", msg); }
  void debug(const std::string& msg) const { emit(LogLevel::Debug, "debug", msg); }

 private:
  void emit(LogLevel l, const char* tag, const std::string& msg) const {
    if (static_cast<int>(l) <= static_cast<int>(level_)) err_ << "[" << tag << "] " << msg << "\n";
  }

  std::ostream& err_;
  LogLevel level_ = LogLevel::Error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenOptions {
  std::string out;
  std::size_t tasks = 5, layers = 1, d = 16, k = 16, rank = 4;
  std::vector<std::string> slots{"q", "v"};
  double a_noise = 0.05, b_scale = 1.0;
  std::uint64_t seed = 0;
  bool vera = false;
};

struct MergeOptions {
  std::string in, out, method;
  double ties_density = 0.2, dare_p = 0.9, scale = 1.0;
  bool a_only = false, global_assignment = false;
  std::size_t m = 1, epochs = 1000, jobs = 1;
  double temp = 0.1, lr = 5e-5;
  std::string distance = "mae", init = "mean";
  std::uint64_t seed = 0;
};

inline void emit(std::ostream& out, const json& doc) { out << doc.dump(2) << "\n"; }

/// Reports go to stdout and, with --out, to a file as well.
inline void emit_report(std::ostream& out, const json& doc, const std::string& path) {
  if (!path.empty()) {
    const std::string text = doc.dump(2) + "\n";
    archive::write_file(path, archive::Bytes(text.begin(), text.end()));
  }
  emit(out, doc);
}

inline int cmd_gen(const GenOptions& o, std::ostream& out, const Logger& log) {
  SynthSpec spec;
  spec.tasks = o.tasks;
  spec.layers = o.layers;
  spec.slot_names = o.slots;
  spec.d = o.d;
  spec.k = o.k;
  spec.r = o.rank;
  spec.a_noise = o.a_noise;
  spec.b_scale = o.b_scale;
  spec.seed = o.seed;
  const AdapterCollection c = o.vera ? generate_vera(spec) : generate(spec);
  write_archive(c, o.out);
  log.info("wrote " + std::to_string(c.task_count()) + " tasks x " + std::to_string(c.slots().size()) +
           " slots to " + o.out);
  emit(out, {{"command", "gen-synthetic"},
             {"out", o.out},
             {"kind", o.vera ? "vera" : "lora"},
             {"tasks", c.tasks()},
             {"slots", c.slots().size()},
             {"params", original_param_count(c)}});
  return kOk;
}

inline int cmd_merge(const MergeOptions& o, std::ostream& out, const Logger& log) {
  if (o.method == "hydraopt" && o.a_only) throw UsageError("--a-only cannot be combined with --method hydraopt");
  const AdapterCollection c = read_archive(o.in);
  log.info("loaded " + std::to_string(c.task_count()) + " tasks x " + std::to_string(c.slots().size()) +
           " slots from " + o.in);

  MergedBundle bundle;
  json loss = nullptr;
  json slots = json::array();
  if (o.method == "hydraopt") {
    HydraConfig cfg;
    cfg.clusters = o.m;
    cfg.temperature = o.temp;
    cfg.epochs = o.epochs;
    cfg.learning_rate = o.lr;
    cfg.distance = parse_distance(o.distance);
    cfg.init = o.init == "random" ? InitScheme::RANDOM : InitScheme::MEAN_A_COPY_B;
    cfg.seed = o.seed;
    HydraMergeResult res = hydra_merge_collection(c, cfg, o.jobs);
    if (o.global_assignment) globalize_assignments(res.bundle);
    for (const auto& s : res.slots) {
      log.debug("slot " + s.key.str() + ": loss " + std::to_string(s.initial_loss) + " -> " +
                std::to_string(s.final_loss));
      slots.push_back({{"slot", s.key.str()}, {"initial_loss", s.initial_loss}, {"final_loss", s.final_loss}});
    }
    loss = res.final_loss();
    bundle = std::move(res.bundle);
  } else {
    BaselineConfig cfg;
    if (o.method == "ta") cfg.method = BaselineMethod::TA;
    else if (o.method == "ties") cfg.method = BaselineMethod::TIES;
    else if (o.method == "dare") cfg.method = BaselineMethod::DARE;
    else cfg.method = BaselineMethod::DARE_TIES;
    cfg.ties_density = o.ties_density;
    cfg.dare_drop_p = o.dare_p;
    cfg.seed = o.seed;
    cfg.scale = o.scale;
    cfg.target = o.a_only ? MergeTarget::A_ONLY : MergeTarget::PER_MATRIX;
    bundle = merge_collection(c, cfg, o.jobs);
  }
  write_archive(bundle, o.out);
  const StorageReport storage = storage_report(c, bundle);
  log.info("wrote " + bundle.method + " bundle to " + o.out);

  json assignment = json::object();
  for (const auto& [key, slot] : bundle.slots)
    assignment[key.str()] = std::visit([](const auto& x) { return json(x.assignment); }, slot);

  json doc = {{"command", "merge"},
              {"method", bundle.method},
              {"out", o.out},
              {"final_loss", loss},
              {"storage_ratio_percent", storage.ratio_percent},
              {"original_params", storage.original_params},
              {"merged_params", storage.merged_params},
              {"assignment", assignment}};
  if (!slots.empty()) doc["slots"] = slots;
  emit(out, doc);
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const Logger log(err);
  CLI::App app{"Merge sets of low-rank adapters into storage-reduced bundles", "hydra-merge"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic adapter collection");
  gen_cmd->add_option("--out", gen.out, "Output archive")->required();
  gen_cmd->add_option("--tasks", gen.tasks, "Number of tasks K")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--layers", gen.layers, "Number of layers")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--slots", gen.slots, "Comma-separated slot names")->delimiter(',');
  gen_cmd->add_option("--d", gen.d, "Output dimension d")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--k", gen.k, "Input dimension k")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--rank", gen.rank, "Adapter rank r")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--a-noise", gen.a_noise, "Per-task A perturbation stdev")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--b-scale", gen.b_scale, "Per-task B stdev")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_flag("--vera", gen.vera, "Generate VeRA adapters instead of LoRA");

  MergeOptions merge;
  auto* merge_cmd = app.add_subcommand("merge", "Merge an adapter collection");
  merge_cmd->add_option("--in", merge.in, "Input adapter archive")->required();
  merge_cmd->add_option("--out", merge.out, "Output bundle archive")->required();
  merge_cmd->add_option("--method", merge.method, "Merging method")
      ->required()
      ->check(CLI::IsMember({"ta", "ties", "dare", "dare-ties", "hydraopt"}));
  merge_cmd->add_option("--ties-density", merge.ties_density, "Fraction of entries TIES keeps");
  merge_cmd->add_option("--dare-p", merge.dare_p, "DARE drop probability");
  merge_cmd->add_option("--scale", merge.scale, "Global multiplier on baseline merges");
  merge_cmd->add_flag("--a-only", merge.a_only, "Baselines: merge only A, keep every B");
  merge_cmd->add_option("--m", merge.m, "HydraOpt: number of B' matrices M")->check(CLI::PositiveNumber);
  merge_cmd->add_option("--temp", merge.temp, "HydraOpt: softmax temperature");
  merge_cmd->add_option("--epochs", merge.epochs, "HydraOpt: full-batch iterations");
  merge_cmd->add_option("--lr", merge.lr, "HydraOpt: AdamW learning rate");
  merge_cmd->add_option("--distance", merge.distance, "HydraOpt: distance function")
      ->check(CLI::IsMember({"mae", "mse", "fro", "cos"}));
  merge_cmd->add_option("--init", merge.init, "HydraOpt: initialization")->check(CLI::IsMember({"mean", "random"}));
  merge_cmd->add_flag("--global-assignment", merge.global_assignment,
                      "HydraOpt: one task-to-cluster map shared by all slots (majority vote)");
  merge_cmd->add_option("--seed", merge.seed, "Random seed");
  merge_cmd->add_option("--jobs", merge.jobs, "Slots merged in parallel")->check(CLI::PositiveNumber);

  std::string in_path, merged_path, report_path;
  auto* storage_cmd = app.add_subcommand("report-storage", "Parameter count of a bundle vs the originals");
  storage_cmd->add_option("--in", in_path, "Adapter archive")->required();
  storage_cmd->add_option("--merged", merged_path, "Bundle archive")->required();
  storage_cmd->add_option("--out", report_path, "Also write the report to this file");

  auto* sim_cmd = app.add_subcommand("analyze-similarity", "Pairwise MAE between task A and B matrices");
  sim_cmd->add_option("--in", in_path, "Adapter archive")->required();
  sim_cmd->add_option("--out", report_path, "Also write the report to this file");

  auto* recon_cmd = app.add_subcommand("eval-recon", "Reconstruction error of a bundle");
  recon_cmd->add_option("--in", in_path, "Adapter archive")->required();
  recon_cmd->add_option("--merged", merged_path, "Bundle archive")->required();
  recon_cmd->add_option("--out", report_path, "Also write the report to this file");

  std::uint64_t grad_seed = 0;
  std::size_t grad_instances = 20;
  auto* grad_cmd = app.add_subcommand("grad-check", "Check analytic gradients against finite differences");
  grad_cmd->add_option("--seed", grad_seed, "Random seed");
  grad_cmd->add_option("--instances", grad_instances, "Random instances per case")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen, out, log);
    if (*merge_cmd) return cmd_merge(merge, out, log);
    if (*storage_cmd) {
      emit_report(out, to_json(storage_report(read_archive(in_path), read_bundle(merged_path))), report_path);
      return kOk;
    }
    if (*sim_cmd) {
      emit_report(out, to_json(pairwise_similarity(read_archive(in_path))), report_path);
      return kOk;
    }
    if (*recon_cmd) {
      emit_report(out, to_json(reconstruction_report(read_archive(in_path), read_bundle(merged_path))), report_path);
      return kOk;
    }
    if (*grad_cmd) {
      gradcheck::Options opt;
      opt.seed = grad_seed;
      opt.instances = grad_instances;
      const auto rep = gradcheck::run(opt);
      emit(out, gradcheck::to_json(rep));
      if (!rep.passed) log.error("gradient check failed: max relative error " + std::to_string(rep.max_rel_error));
      return rep.passed ? kOk : kFailure;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const IoError& e) {
    log.error(e.what());
    return kFailure;
  } catch (const Error& e) {
    log.error(e.what());
    return kInvalid;
  }
  return kUsage;
}

}  // namespace hydra::cli
