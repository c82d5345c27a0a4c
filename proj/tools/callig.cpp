// Command-line driver: generate, train, eval, ablate.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "callig/ablation.hpp"
#include "callig/config.hpp"

using namespace callig;

namespace {

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

Dataset load_training_data(const RunConfig& cfg) {
  if (!cfg.data.dataset.empty()) {
    Dataset ds = read_dataset(cfg.data.dataset);
    if (sim_fingerprint(ds.sim) != sim_fingerprint(cfg.sim)) {
      throw ConfigError("dataset " + cfg.data.dataset + " was generated with different simulator settings than [sim]");
    }
    return ds;
  }
  return generate_dataset(cfg.data.templates, cfg.data.count, cfg.data.seed, cfg.data.jitter, cfg.sim);
}

// Held-out demos: one per evaluation template at the configured style seed.
std::vector<Demonstration> heldout_demos(const RunConfig& cfg) {
  std::vector<std::string> ids = cfg.eval.templates.empty() ? cfg.data.templates : cfg.eval.templates;
  if (ids.empty()) throw ConfigError("eval: no templates to evaluate");
  std::vector<Demonstration> out;
  for (const auto& id : ids) {
    const auto ds = generate_dataset({id}, 1, cfg.eval.seed, cfg.data.jitter, cfg.sim);
    out.push_back(ds.demos.front());
  }
  return out;
}

void check_paths(const RunConfig& cfg) {
  if (!cfg.data.dataset.empty() && !fs::is_directory(cfg.data.dataset)) {
    throw IoError("dataset directory not found: " + cfg.data.dataset);
  }
}

TrainHooks progress_hooks(const std::string& label, const fs::path* checkpoint_dir) {
  TrainHooks hooks;
  hooks.on_step = [label](const TrainRecord& r) {
    if (r.step % 100 == 0) std::fprintf(stderr, "%s step %zu loss %.6f\n", label.c_str(), r.step, r.total);
  };
  if (checkpoint_dir) {
    const fs::path dir = *checkpoint_dir;
    hooks.on_checkpoint = [dir](const PolicyCheckpoint& ck) {
      char name[64];
      std::snprintf(name, sizeof name, "step_%08llu.bin", static_cast<unsigned long long>(ck.step));
      save_checkpoint(ck, dir / name);
    };
  }
  return hooks;
}

int cmd_generate(const std::vector<std::string>& templates, std::size_t count, std::uint64_t seed,
                 std::optional<double> jitter, const std::string& config_path, const fs::path& out) {
  SimConfig sim;
  double jit = sim.style_jitter;
  if (!config_path.empty()) {
    const RunConfig cfg = load_run_config(config_path);
    sim = cfg.sim;
    jit = cfg.data.jitter;
  }
  if (jitter) jit = *jitter;
  const Dataset ds = generate_dataset(split_list(templates), count, seed, jit, sim);
  write_dataset(ds, out);
  std::printf("wrote %zu demonstrations to %s (image %zux%zux%zu, fingerprint %s)\n", ds.demos.size(),
              out.string().c_str(), sim.image_channels, sim.image_height, sim.image_width, sim_fingerprint(sim).c_str());
  for (std::size_t i = 0; i < ds.demos.size(); ++i) {
    std::printf("  %s  %-6s seed %llu  %zu steps\n", detail::demo_dir_name(i).c_str(), ds.demos[i].template_id.c_str(),
                static_cast<unsigned long long>(ds.demos[i].style_seed), ds.demos[i].size());
  }
  return 0;
}

int cmd_train(const std::string& config_path, const fs::path& out) {
  RunConfig cfg = load_run_config(config_path);
  check_paths(cfg);
  const Dataset data = load_training_data(cfg);
  StagedDirectory stage(out);
  const fs::path ck_dir = stage.path() / "checkpoints";
  if (cfg.train.checkpoint_interval > 0) fs::create_directories(ck_dir);
  const std::string canonical = canonical_config(cfg);
  TrainResult result = train(cfg.train, data, progress_hooks("train", cfg.train.checkpoint_interval > 0 ? &ck_dir : nullptr));
  result.checkpoint.run_config = canonical;
  save_checkpoint(result.checkpoint, stage.path() / "checkpoint.bin");
  write_file_atomic(stage.path() / "train_log.csv", result.log.to_csv());
  write_file_atomic(stage.path() / "config.toml", canonical);
  stage.commit();
  std::printf("trained %zu steps (%s)", result.log.records.size(), to_string(result.reason));
  if (!result.log.records.empty()) std::printf(", final loss %.6g", result.log.records.back().total);
  std::printf("; wrote %s\n", out.string().c_str());
  if (result.reason == StopReason::kDiverged) {
    std::fprintf(stderr, "error: training diverged: %s\n", result.message.c_str());
    return static_cast<int>(ExitCode::kDivergence);
  }
  return 0;
}

// Recovers the run configuration stored in a checkpoint, falling back to
// defaults shaped like the model.
RunConfig config_for_checkpoint(const PolicyCheckpoint& ck, const std::string& config_path) {
  if (!config_path.empty()) return load_run_config(config_path);
  if (!ck.run_config.empty()) return build_run_config(parse_config_text(ck.run_config, "checkpoint config"), "checkpoint config");
  RunConfig cfg;
  cfg.sim.image_channels = ck.model.image_channels;
  cfg.sim.image_height = ck.model.image_height;
  cfg.sim.image_width = ck.model.image_width;
  cfg.train.model = ck.model;
  cfg.finalize();
  return cfg;
}

int cmd_eval(const fs::path& checkpoint, const std::string& dataset, const std::vector<std::string>& templates,
             const std::string& mode, const std::string& config_path, std::optional<std::uint64_t> seed,
             bool pose_noise, bool image_noise, const fs::path& out) {
  if (!fs::is_regular_file(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
  if (!dataset.empty() && !fs::is_directory(dataset)) throw IoError("dataset directory not found: " + dataset);
  const PolicyCheckpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg = config_for_checkpoint(ck, config_path);
  const PolicyModel model = model_from_checkpoint(ck);

  std::vector<Demonstration> demos;
  SimConfig sim = cfg.sim;
  if (!dataset.empty()) {
    Dataset ds = read_dataset(dataset);
    sim = ds.sim;
    demos = std::move(ds.demos);
  } else {
    if (seed) cfg.eval.seed = *seed;
    if (!templates.empty()) cfg.eval.templates = split_list(templates);
    demos = heldout_demos(cfg);
  }
  model.config().check_compatible(sim);
  RolloutOptions ro = cfg.eval.rollout;
  ro.pose_noise = ro.pose_noise || pose_noise;
  ro.image_noise = ro.image_noise || image_noise;

  StagedDirectory stage(out);
  EvalTraces traces;
  EvalReport report;
  if (mode == "open") {
    report = open_loop_eval(model, demos, sim, &traces);
  } else {
    report = closed_loop_eval(model, demos, sim, ro, &traces, cfg.eval.iou_threshold);
  }
  report.plots.push_back("overlay.png");
  write_overlay_plot(stage.path() / "overlay.png", traces);
  write_file_atomic(stage.path() / "report.json", to_json(report).dump(2) + "\n");
  stage.commit();
  std::printf("%s-loop eval on %zu demos:", mode.c_str(), demos.size());
  if (report.open_loop_translation_rmse) std::printf(" translation RMSE %.5f, rotation error %.5f rad", *report.open_loop_translation_rmse, *report.open_loop_rotation_error);
  if (report.closed_loop_rmse) std::printf(" trajectory RMSE %.5f, canvas IoU %.4f", *report.closed_loop_rmse, *report.canvas_iou);
  std::printf("; wrote %s\n", out.string().c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& variants_arg, const fs::path& out) {
  RunConfig cfg = load_run_config(config_path);
  check_paths(cfg);
  std::vector<std::string> names = variants_arg.empty() ? cfg.ablate.variants : split_list(variants_arg);
  std::vector<AblationVariant> variants;
  for (const auto& n : names) variants.push_back(parse_variant(n));
  const Dataset data = load_training_data(cfg);
  const std::vector<Demonstration> evals = heldout_demos(cfg);
  const std::string canonical = canonical_config(cfg);

  StagedDirectory stage(out);
  std::string summary = "variant,steps,stop_reason,final_loss,open_loop_rmse,open_loop_rotation_error,closed_loop_rmse,canvas_iou\n";
  bool diverged = false;
  for (auto v : variants) {
    const std::string name = to_string(v);
    AblationRun run = run_ablation(v, cfg.train, data, evals, cfg.eval.rollout, progress_hooks(name, nullptr));
    run.training.checkpoint.run_config = canonical;
    const fs::path dir = stage.path() / name;
    fs::create_directories(dir);
    save_checkpoint(run.training.checkpoint, dir / "checkpoint.bin");
    write_file_atomic(dir / "train_log.csv", run.training.log.to_csv());
    write_comparison_plot(dir / "comparison.png", run.open_traces, run.closed_traces);
    run.open_loop.plots = {"comparison.png"};
    run.closed_loop.plots = {"comparison.png"};
    const nlohmann::json report{{"variant", name},
                                {"stop_reason", to_string(run.training.reason)},
                                {"open_loop", to_json(run.open_loop)},
                                {"closed_loop", to_json(run.closed_loop)}};
    write_file_atomic(dir / "report.json", report.dump(2) + "\n");
    char line[512];
    const double final_loss = run.training.log.records.empty() ? 0.0 : run.training.log.records.back().total;
    std::snprintf(line, sizeof line, "%s,%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", name.c_str(), run.training.log.records.size(),
                  to_string(run.training.reason), final_loss, run.open_loop.open_loop_translation_rmse.value_or(0.0),
                  run.open_loop.open_loop_rotation_error.value_or(0.0), run.closed_loop.closed_loop_rmse.value_or(0.0),
                  run.closed_loop.canvas_iou.value_or(0.0));
    summary += line;
    std::printf("%s", line);
    diverged = diverged || run.training.reason == StopReason::kDiverged;
  }
  write_file_atomic(stage.path() / "summary.csv", summary);
  stage.commit();
  std::printf("wrote %s\n", out.string().c_str());
  return diverged ? static_cast<int>(ExitCode::kDivergence) : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational imitation-learning planner for simulated robot calligraphy"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a dataset of expert demonstrations");
  std::vector<std::string> gen_templates;
  std::size_t gen_count = 1;
  std::uint64_t gen_seed = 0;
  std::optional<double> gen_jitter;
  std::string gen_config, gen_out;
  gen->add_option("--template", gen_templates, "Template id(s): line1, ni2, kawa3, ki4, ei5")->required();
  gen->add_option("--count", gen_count, "Demonstrations per template")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Master seed")->required();
  gen->add_option("--jitter", gen_jitter, "Style jitter (control-point offset bound)");
  gen->add_option("--config", gen_config, "Config file providing [sim] settings");
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a policy");
  std::string tr_config, tr_out;
  tr->add_option("--config", tr_config, "Run configuration")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint open- or closed-loop");
  std::string ev_ck, ev_dataset, ev_mode = "closed", ev_config, ev_out;
  std::vector<std::string> ev_templates;
  std::optional<std::uint64_t> ev_seed;
  bool ev_pose_noise = false, ev_image_noise = false;
  ev->add_option("--checkpoint", ev_ck, "Checkpoint file")->required();
  auto* ds_opt = ev->add_option("--dataset", ev_dataset, "Dataset directory to evaluate on");
  auto* tpl_opt = ev->add_option("--template", ev_templates, "Template id(s) to evaluate on fresh demos");
  ds_opt->excludes(tpl_opt);
  ev->add_option("--mode", ev_mode, "open or closed")->check(CLI::IsMember({"open", "closed"}));
  ev->add_option("--seed", ev_seed, "Style seed for --template demos");
  ev->add_option("--config", ev_config, "Override the configuration stored in the checkpoint");
  ev->add_flag("--pose-noise", ev_pose_noise, "Inject pose noise into closed-loop observations");
  ev->add_flag("--image-noise", ev_image_noise, "Inject image jitter into closed-loop observations");
  ev->add_option("--out", ev_out, "Output directory")->required();

  auto* ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  std::string ab_config, ab_out;
  std::vector<std::string> ab_variants;
  ab->add_option("--config", ab_config, "Run configuration")->required();
  ab->add_option("--variants", ab_variants, "Comma-separated variants (default: [ablate] variants)");
  ab->add_option("--out", ab_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfiguration);
  }

  try {
    if (*gen) return cmd_generate(gen_templates, gen_count, gen_seed, gen_jitter, gen_config, gen_out);
    if (*tr) return cmd_train(tr_config, tr_out);
    if (*ev) {
      if (ev_dataset.empty() && ev_templates.empty()) throw UsageError("eval: need --dataset or --template");
      return cmd_eval(ev_ck, ev_dataset, ev_templates, ev_mode, ev_config, ev_seed, ev_pose_noise, ev_image_noise, ev_out);
    }
    if (*ab) return cmd_ablate(ab_config, ab_variants, ab_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
