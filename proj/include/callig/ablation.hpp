#pragma once

// Ablation variants: each one flips a single architectural or augmentation
// switch, trains with the same seed and budget, and is evaluated open and
// closed loop.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "callig/eval.hpp"
#include "callig/plot.hpp"
#include "callig/training.hpp"

namespace callig {

enum class AblationVariant { kFull, kNoBiLstm, kNoVariational, kResNetOnly, kNoImageAug, kNoPoseAug };

inline constexpr std::array<std::pair<AblationVariant, std::string_view>, 6> kVariantNames{{
    {AblationVariant::kFull, "full"},
    {AblationVariant::kNoBiLstm, "no_bilstm"},
    {AblationVariant::kNoVariational, "no_variational"},
    {AblationVariant::kResNetOnly, "resnet_only"},
    {AblationVariant::kNoImageAug, "no_image_aug"},
    {AblationVariant::kNoPoseAug, "no_pose_aug"},
}};

inline std::string to_string(AblationVariant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return std::string(name);
  return "?";
}

inline AblationVariant parse_variant(std::string_view name) {
  for (const auto& [k, n] : kVariantNames)
    if (n == name) return k;
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

inline TrainConfig apply_variant(TrainConfig cfg, AblationVariant v) {
  switch (v) {
    case AblationVariant::kFull: break;
    case AblationVariant::kNoBiLstm: cfg.model.bidirectional = false; break;
    case AblationVariant::kNoVariational: cfg.model.variational = false; break;
    case AblationVariant::kResNetOnly: cfg.model.feature_pyramid = false; break;
    case AblationVariant::kNoImageAug: cfg.augment.set_image_enabled(false); break;
    case AblationVariant::kNoPoseAug: cfg.augment.enable_pose = false; break;
  }
  return cfg;
}

struct AblationRun {
  AblationVariant variant = AblationVariant::kFull;
  TrainResult training;
  EvalReport open_loop;
  EvalReport closed_loop;
  EvalTraces open_traces;
  EvalTraces closed_traces;
};

// Trains the variant on `train_data` and evaluates it on `eval_demos`.
inline AblationRun run_ablation(AblationVariant variant, const TrainConfig& base, const Dataset& train_data,
                                const std::vector<Demonstration>& eval_demos, const RolloutOptions& rollout_opt = {},
                                const TrainHooks& hooks = {}) {
  AblationRun run;
  run.variant = variant;
  run.training = train(apply_variant(base, variant), train_data, hooks);
  const PolicyModel model = model_from_checkpoint(run.training.checkpoint);
  run.open_loop = open_loop_eval(model, eval_demos, train_data.sim, &run.open_traces);
  run.closed_loop = closed_loop_eval(model, eval_demos, train_data.sim, rollout_opt, &run.closed_traces);
  return run;
}

// Two rows: open loop on recorded data, then closed loop; one column per demo.
inline void write_comparison_plot(const std::filesystem::path& path, const EvalTraces& open, const EvalTraces& closed) {
  std::vector<std::vector<PlotPanel>> rows(2);
  for (std::size_t i = 0; i < open.truth.size(); ++i) rows[0].push_back(overlay_panel(open.truth[i], open.inferred[i]));
  for (std::size_t i = 0; i < closed.truth.size(); ++i) rows[1].push_back(overlay_panel(closed.truth[i], closed.inferred[i]));
  write_overlay_plot(path, rows);
}

inline void write_overlay_plot(const std::filesystem::path& path, const EvalTraces& traces) {
  std::vector<std::vector<PlotPanel>> rows(1);
  for (std::size_t i = 0; i < traces.truth.size(); ++i) rows[0].push_back(overlay_panel(traces.truth[i], traces.inferred[i]));
  write_overlay_plot(path, rows);
}

}  // namespace callig
