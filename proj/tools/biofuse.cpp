// biofuse: command-line front end of the pipeline.
//
// Exit codes: 0 success, 1 invalid configuration or missing inputs,
// 2 runtime failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "biofuse/biofuse.hpp"

namespace {

struct Flags {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string modality;
  std::string task;
  std::string fusion_mode;
  std::string enroll_windows;
  std::optional<int> subjects;
  std::optional<double> separability;
  int encoders = 20;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--dataset", f.dataset, "dataset root (canonical layout)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "root seed");
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--modality", f.modality, "restrict to one modality (name or acronym)");
  cmd->add_option("--task", f.task, "restrict to one task");
  cmd->add_option("--fusion-mode", f.fusion_mode, "simple or weighted (default: both)")
      ->check(CLI::IsMember({"simple", "weighted"}));
  cmd->add_option("--enroll-windows", f.enroll_windows, "all or one")->check(CLI::IsMember({"all", "one"}));
}

// Flags override values from the config file.
biofuse::RunConfig effective_config(const Flags& f, bool synth) {
  using namespace biofuse;
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (!f.out.empty()) {
    // For synth, --out names the dataset to create.
    if (synth && f.dataset.empty()) {
      cfg.dataset = f.out;
    } else {
      cfg.out = f.out;
    }
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.threads) cfg.threads = *f.threads;
  if (!f.modality.empty()) cfg.modalities = {parse_modality(f.modality)};
  if (!f.task.empty()) {
    const TaskKind t = parse_task(f.task);
    cfg.tasks = {t};
    if (f.modality.empty()) {
      auto mods = task_modalities(t);
      cfg.modalities.assign(mods.begin(), mods.end());
    }
  }
  if (!f.fusion_mode.empty()) cfg.fusion_mode = parse_fusion_mode(f.fusion_mode);
  if (!f.enroll_windows.empty()) cfg.enroll_mode = parse_enroll_mode(f.enroll_windows);
  if (f.subjects) cfg.synth.n_subjects = *f.subjects;
  if (f.separability) cfg.synth.separability = *f.separability;
  return cfg;
}

int exit_code_for(biofuse::ErrorCode code) {
  using biofuse::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig:
    case ErrorCode::MissingInput:
    case ErrorCode::InsufficientSubjects:
      return 1;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal behavioral-biometrics authentication pipeline"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, f);
  synth->add_option("--subjects", f.subjects, "number of subjects")->check(CLI::PositiveNumber);
  synth->add_option("--separability", f.separability, "subject separability in [0, 1]");
  auto* ingest = app.add_subcommand("ingest", "load, validate and split a dataset");
  auto* train = app.add_subcommand("train", "train one encoder per modality");
  auto* eval = app.add_subcommand("eval", "score validation and test subjects");
  auto* fuse = app.add_subcommand("fuse", "rank fused modality subsets");
  auto* report = app.add_subcommand("report", "summarize EERs and fusion rankings");
  for (auto* cmd : {ingest, train, eval, fuse, report}) add_common(cmd, f);
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  gradcheck->add_option("--seed", f.seed, "root seed");
  gradcheck->add_option("--encoders", f.encoders, "random encoders to check")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheck) {
      auto s = biofuse::cmd_gradcheck(f.seed.value_or(1), f.encoders, std::cout);
      return s.max_relative_error < 1e-4 ? 0 : 2;
    }
    const biofuse::RunConfig cfg = effective_config(f, synth->parsed());
    if (*synth) biofuse::cmd_synth(cfg, std::cout);
    if (*ingest) biofuse::cmd_ingest(cfg, std::cout);
    if (*train && biofuse::cmd_train(cfg, std::cout) > 0) return 2;
    if (*eval) biofuse::cmd_eval(cfg, std::cout);
    if (*fuse) biofuse::cmd_fuse(cfg, std::cout);
    if (*report) biofuse::cmd_report(cfg, std::cout);
  } catch (const biofuse::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
