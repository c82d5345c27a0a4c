#pragma once

// Closed-loop rollout against the simulator, open-loop evaluation on recorded
// demonstrations, and the trajectory / canvas metrics.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "callig/augment.hpp"
#include "callig/pipeline.hpp"
#include "callig/sim.hpp"

namespace callig {

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline std::vector<Vec3> resample_arc_length(const PoseTrajectory& traj, std::size_t n) {
  std::vector<double> cumulative(traj.size(), 0.0);
  for (std::size_t i = 1; i < traj.size(); ++i) cumulative[i] = cumulative[i - 1] + translation_distance(traj[i - 1], traj[i]);
  const double total = cumulative.back();
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (total <= 0.0 || traj.size() == 1) {
      out.push_back(traj.front().translation);
      continue;
    }
    const double target = n == 1 ? 0.0 : total * static_cast<double>(k) / static_cast<double>(n - 1);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    if (it == cumulative.end()) {
      out.push_back(traj.back().translation);
      continue;
    }
    const std::size_t j = static_cast<std::size_t>(it - cumulative.begin());
    const double span = cumulative[j] - cumulative[j - 1];
    const double f = span > 0.0 ? (target - cumulative[j - 1]) / span : 0.0;
    const Vec3& a = traj[j - 1].translation;
    const Vec3& b = traj[j].translation;
    out.push_back({a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])});
  }
  return out;
}

}  // namespace detail

// Translation RMSE after resampling both trajectories to the longer length,
// uniformly in arc length.
inline double trajectory_rmse(const PoseTrajectory& a, const PoseTrajectory& b) {
  if (a.empty() || b.empty()) throw UsageError("trajectory_rmse: empty trajectory");
  const std::size_t n = std::max(a.size(), b.size());
  const auto pa = detail::resample_arc_length(a, n);
  const auto pb = detail::resample_arc_length(b, n);
  double sq = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    for (int d = 0; d < 3; ++d) sq += (pa[k][d] - pb[k][d]) * (pa[k][d] - pb[k][d]);
  return std::sqrt(sq / static_cast<double>(n));
}

// Ink is 1 - canvas value; a pixel counts as inked at ink >= threshold.
inline double canvas_iou(const Canvas& a, const Canvas& b, double threshold = 0.5) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("canvas_iou: canvas shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool ia = 1.0 - a.data[i] >= threshold;
    const bool ib = 1.0 - b.data[i] >= threshold;
    inter += ia && ib;
    uni += ia || ib;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Contiguous pen-down runs of a trajectory, as [first, last] index pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> pen_down_runs(const PoseTrajectory& traj) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (!traj[i].pen_down) continue;
    if (!runs.empty() && runs.back().second + 1 == i) {
      runs.back().second = i;
    } else {
      runs.push_back({i, i});
    }
  }
  return runs;
}

inline constexpr double kStrokeCoverage = 0.8;

// A stroke of the expert counts as completed when at least kStrokeCoverage of
// the pixels it inks on its own are inked in `result`.
inline std::vector<bool> stroke_completion(const PoseTrajectory& expert, const Canvas& result, const SimConfig& sim,
                                           double threshold = 0.5) {
  std::vector<bool> flags;
  for (const auto& [first, last] : pen_down_runs(expert)) {
    Canvas own(sim.image_height, sim.image_width);
    for (std::size_t i = std::max<std::size_t>(first, 1); i <= last; ++i) own = stamp(std::move(own), expert[i], sim);
    std::size_t inked = 0, covered = 0;
    for (std::size_t p = 0; p < own.data.size(); ++p) {
      if (1.0 - own.data[p] < threshold) continue;
      ++inked;
      covered += 1.0 - result.data[p] >= threshold;
    }
    flags.push_back(inked == 0 || static_cast<double>(covered) >= kStrokeCoverage * static_cast<double>(inked));
  }
  return flags;
}

// ---------------------------------------------------------------------------
// Rollout

enum class Termination { kBudget, kOutOfBounds, kCompletion, kDivergence };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kBudget: return "budget";
    case Termination::kOutOfBounds: return "pose-out-of-bounds";
    case Termination::kCompletion: return "completion";
    case Termination::kDivergence: return "divergence";
  }
  return "?";
}

struct RolloutOptions {
  std::size_t max_steps = 400;
  double completion_tolerance = 0.02;
  std::size_t completion_steps = 5;  // 0 disables completion detection
  double bound_low = -0.1;
  double bound_high = 1.1;
  // Observation noise fed to the planner only; the executed state is clean.
  // Pose noise is drawn every step, image jitter once per rollout.
  bool pose_noise = false;
  bool image_noise = false;
  AugmentConfig noise{};
  std::uint64_t noise_seed = 0;
};

struct RolloutResult {
  PoseTrajectory trajectory;  // steps + 1 poses
  std::vector<Observation> observations;
  Canvas canvas;
  std::size_t steps = 0;
  Termination reason = Termination::kBudget;
};

// Maps the current observation to the next pose.
using Planner = std::function<PoseState(const Observation&)>;

// Encodes each observation to its posterior mean, keeps the last `window`
// means (left-padded with the first), and decodes the predicted next pose.
class PolicyPlanner {
 public:
  PolicyPlanner(const PolicyModel& model, double contact_threshold)
      : model_(&model), threshold_(contact_threshold) {}

  PoseState operator()(const Observation& obs) {
    NoGradGuard no_grad;
    const LatentBatch latent = model_->encode({&obs});
    const std::size_t w = model_->config().window;
    if (history_.empty()) {
      for (std::size_t i = 0; i + 1 < w; ++i) history_.push_back(latent.mu);
    }
    history_.push_back(latent.mu);
    while (history_.size() > w) history_.pop_front();
    const PredictionBatch pred = model_->decode(model_->predict_latent({history_.begin(), history_.end()}));
    const auto t = pred.translation.values();
    const auto q = pred.rotation.values();
    PoseState p;
    p.translation = {t[0], t[1], t[2]};
    p.rotation = {q[0], q[1], q[2], q[3]};
    p.pen_down = p.translation[2] < threshold_;
    return p;
  }

 private:
  const PolicyModel* model_;
  double threshold_;
  std::deque<Tensor> history_;
};

// Returns poses[i + 1] of a recorded trajectory, then holds the last pose.
class ReplayPlanner {
 public:
  explicit ReplayPlanner(PoseTrajectory poses) : poses_(std::move(poses)) {}
  PoseState operator()(const Observation&) {
    next_ = std::min(next_ + 1, poses_.size() - 1);
    return poses_[next_];
  }

 private:
  PoseTrajectory poses_;
  std::size_t next_ = 0;
};

// Runs the planner in closed loop from `start` on a blank canvas. `rest` is
// the terminal pose used by completion detection.
inline RolloutResult rollout(const Planner& planner, const PoseState& start, const PoseState& rest, const SimConfig& sim,
                             const RolloutOptions& opt = {}) {
  RolloutResult r;
  r.canvas = Canvas(sim.image_height, sim.image_width);
  r.trajectory.push_back(start);
  Rng noise(opt.noise_seed, "rollout-noise");
  std::optional<ImageJitter> jitter;
  if (opt.image_noise && opt.noise.image_enabled()) jitter = sample_image_jitter(opt.noise, noise);
  std::size_t near_rest = 0;
  PoseState current = start;
  for (std::size_t step = 0;; ++step) {
    r.observations.push_back(render_observation(r.canvas, current, sim));
    if (step >= opt.max_steps) {
      r.reason = Termination::kBudget;
      break;
    }
    Observation seen = r.observations.back();
    if (jitter) seen.image = apply_image_jitter(seen.image, *jitter);
    if (opt.pose_noise) seen.pose = augment_pose(seen.pose, opt.noise, noise, sim.contact_threshold);
    const PoseState next = planner(seen);
    const auto a = next.to_array();
    if (!std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); })) {
      r.reason = Termination::kDivergence;
      break;
    }
    if (std::any_of(next.translation.begin(), next.translation.end(),
                    [&](double v) { return v < opt.bound_low || v > opt.bound_high; })) {
      r.reason = Termination::kOutOfBounds;
      break;
    }
    current = next;
    r.canvas = stamp(std::move(r.canvas), current, sim);
    r.trajectory.push_back(current);
    ++r.steps;
    near_rest = translation_distance(current, rest) <= opt.completion_tolerance ? near_rest + 1 : 0;
    if (opt.completion_steps > 0 && near_rest >= opt.completion_steps) {
      r.observations.push_back(render_observation(r.canvas, current, sim));
      r.reason = Termination::kCompletion;
      break;
    }
  }
  return r;
}

// Policy rollout from the expert's first pose, completing at its last pose.
inline RolloutResult rollout(const PolicyModel& model, const Demonstration& expert, const SimConfig& sim,
                             const RolloutOptions& opt = {}) {
  model.config().check_compatible(sim);
  if (expert.observations.empty()) throw UsageError("rollout: empty expert demonstration");
  PolicyPlanner planner(model, sim.contact_threshold);
  return rollout(std::ref(planner), expert.observations.front().pose, expert.observations.back().pose, sim, opt);
}

// ---------------------------------------------------------------------------
// Reports

struct OpenLoopResult {
  PoseTrajectory predicted;  // predicted[i] estimates pose i + 1
  double translation_rmse = 0.0;
  double rotation_error = 0.0;  // mean angular distance, radians
};

// One-step predictions from the recorded context at every step.
inline OpenLoopResult open_loop_predict(const PolicyModel& model, const Demonstration& demo, const SimConfig& sim,
                                        std::size_t chunk = 64) {
  model.config().check_compatible(sim);
  if (demo.size() < 2) throw UsageError("open_loop_predict: demonstration shorter than 2 steps");
  NoGradGuard no_grad;
  const std::size_t w = model.config().window;
  const std::size_t pairs = demo.size() - 1;
  std::vector<const Observation*> obs;
  for (const auto& o : demo.observations) obs.push_back(&o);
  // Encode every recorded observation once.
  std::vector<Tensor> mus;
  for (std::size_t first = 0; first < obs.size(); first += chunk) {
    const std::size_t last = std::min(obs.size(), first + chunk);
    mus.push_back(model.encode({obs.begin() + static_cast<std::ptrdiff_t>(first), obs.begin() + static_cast<std::ptrdiff_t>(last)}).mu);
  }
  std::vector<double> stacked;
  for (const auto& m : mus) stacked.insert(stacked.end(), m.values().begin(), m.values().end());
  const Tensor mu({obs.size(), model.config().latent_dim}, std::move(stacked));

  OpenLoopResult out;
  double sq = 0.0, ang = 0.0;
  for (std::size_t first = 0; first < pairs; first += chunk) {
    const std::size_t last = std::min(pairs, first + chunk);
    std::vector<Tensor> window;
    for (std::size_t t = 0; t < w; ++t) {
      std::vector<std::size_t> rows;
      for (std::size_t i = first; i < last; ++i) {
        const auto idx = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(w - 1 - t);
        rows.push_back(static_cast<std::size_t>(std::max<std::ptrdiff_t>(idx, 0)));
      }
      window.push_back(select_rows(mu, std::move(rows)));
    }
    const PredictionBatch pred = model.decode(model.predict_latent(window));
    for (std::size_t i = first; i < last; ++i) {
      PoseState p = PolicyModel::prediction_row(pred, i - first).pose;
      p.pen_down = p.translation[2] < sim.contact_threshold;
      const PoseState& truth = demo.observations[i + 1].pose;
      const double d = translation_distance(p, truth);
      sq += d * d;
      ang += quat_angular_distance(p.rotation, truth.rotation);
      out.predicted.push_back(p);
    }
  }
  out.translation_rmse = std::sqrt(sq / static_cast<double>(pairs));
  out.rotation_error = ang / static_cast<double>(pairs);
  return out;
}

struct DemoEval {
  std::string template_id;
  std::uint64_t style_seed = 0;
  std::optional<double> open_loop_translation_rmse;
  std::optional<double> open_loop_rotation_error;
  std::optional<double> closed_loop_rmse;
  std::optional<double> canvas_iou;
  std::optional<std::string> termination;
  std::size_t rollout_steps = 0;
  std::vector<bool> strokes_completed;
};

struct EvalReport {
  std::string mode;  // "open" or "closed"
  std::vector<DemoEval> demos;
  // Means over demos of the fields present.
  std::optional<double> open_loop_translation_rmse;
  std::optional<double> open_loop_rotation_error;
  std::optional<double> closed_loop_rmse;
  std::optional<double> canvas_iou;
  std::vector<std::string> plots;

  void summarize() {
    auto mean_of = [&](auto field) -> std::optional<double> {
      double s = 0.0;
      std::size_t n = 0;
      for (const auto& d : demos)
        if (const auto& v = d.*field) {
          s += *v;
          ++n;
        }
      if (n == 0) return std::nullopt;
      return s / static_cast<double>(n);
    };
    open_loop_translation_rmse = mean_of(&DemoEval::open_loop_translation_rmse);
    open_loop_rotation_error = mean_of(&DemoEval::open_loop_rotation_error);
    closed_loop_rmse = mean_of(&DemoEval::closed_loop_rmse);
    canvas_iou = mean_of(&DemoEval::canvas_iou);
  }
};

inline nlohmann::json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json demos = nlohmann::json::array();
  for (const auto& d : r.demos) {
    nlohmann::json flags = nlohmann::json::array();
    for (bool f : d.strokes_completed) flags.push_back(f);
    demos.push_back({{"template", d.template_id},
                     {"style_seed", d.style_seed},
                     {"open_loop_translation_rmse", opt(d.open_loop_translation_rmse)},
                     {"open_loop_rotation_error", opt(d.open_loop_rotation_error)},
                     {"closed_loop_rmse", opt(d.closed_loop_rmse)},
                     {"canvas_iou", opt(d.canvas_iou)},
                     {"termination", d.termination ? nlohmann::json(*d.termination) : nlohmann::json(nullptr)},
                     {"rollout_steps", d.rollout_steps},
                     {"strokes_completed", flags}});
  }
  return {{"mode", r.mode},
          {"open_loop_translation_rmse", opt(r.open_loop_translation_rmse)},
          {"open_loop_rotation_error", opt(r.open_loop_rotation_error)},
          {"closed_loop_rmse", opt(r.closed_loop_rmse)},
          {"canvas_iou", opt(r.canvas_iou)},
          {"demos", demos},
          {"plots", r.plots}};
}

// Trajectories kept alongside a report for plotting.
struct EvalTraces {
  std::vector<std::string> labels;
  std::vector<PoseTrajectory> truth;
  std::vector<PoseTrajectory> inferred;
};

inline EvalReport open_loop_eval(const PolicyModel& model, const std::vector<Demonstration>& demos, const SimConfig& sim,
                                 EvalTraces* traces = nullptr) {
  EvalReport report;
  report.mode = "open";
  for (const auto& demo : demos) {
    const OpenLoopResult r = open_loop_predict(model, demo, sim);
    DemoEval d;
    d.template_id = demo.template_id;
    d.style_seed = demo.style_seed;
    d.open_loop_translation_rmse = r.translation_rmse;
    d.open_loop_rotation_error = r.rotation_error;
    report.demos.push_back(std::move(d));
    if (traces) {
      const PoseTrajectory truth = demo.poses();
      traces->labels.push_back(demo.template_id);
      traces->truth.push_back({truth.begin() + 1, truth.end()});
      traces->inferred.push_back(r.predicted);
    }
  }
  report.summarize();
  return report;
}

inline EvalReport closed_loop_eval(const PolicyModel& model, const std::vector<Demonstration>& demos,
                                   const SimConfig& sim, const RolloutOptions& opt = {}, EvalTraces* traces = nullptr,
                                   double iou_threshold = 0.5) {
  EvalReport report;
  report.mode = "closed";
  for (const auto& demo : demos) {
    const RolloutResult r = rollout(model, demo, sim, opt);
    const PoseTrajectory truth = demo.poses();
    DemoEval d;
    d.template_id = demo.template_id;
    d.style_seed = demo.style_seed;
    d.closed_loop_rmse = trajectory_rmse(r.trajectory, truth);
    d.canvas_iou = canvas_iou(r.canvas, demo.final_canvas, iou_threshold);
    d.termination = to_string(r.reason);
    d.rollout_steps = r.steps;
    d.strokes_completed = stroke_completion(truth, r.canvas, sim, iou_threshold);
    report.demos.push_back(std::move(d));
    if (traces) {
      traces->labels.push_back(demo.template_id);
      traces->truth.push_back(truth);
      traces->inferred.push_back(r.trajectory);
    }
  }
  report.summarize();
  return report;
}

}  // namespace callig
