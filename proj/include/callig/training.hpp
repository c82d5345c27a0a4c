#pragma once

// Training loop: sample consecutive-state pairs, augment, run the variational
// objective, back-propagate, clip, and take an Adam step until the step budget
// is spent or the loss stops improving.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "callig/augment.hpp"
#include "callig/checkpoint.hpp"
#include "callig/dataset.hpp"
#include "callig/pipeline.hpp"
#include "callig/rng.hpp"

namespace callig {

struct TrainConfig {
  ModelConfig model;
  AugmentConfig augment;
  std::size_t batch_size = 16;
  std::size_t steps = 20000;  // budget
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  std::size_t checkpoint_interval = 0;  // 0 = only the final checkpoint
  std::uint64_t seed = 1;
  // Stop once the mean loss over the last `patience` steps improves on the
  // previous `patience` steps by less than `convergence_threshold` (relative).
  std::size_t patience = 500;
  double convergence_threshold = 1e-3;
  bool deterministic = false;  // wall time is logged as 0 so logs are reproducible

  void validate() const {
    model.validate();
    augment.validate(model.image_height, model.image_width);
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
  }
};

struct TrainRecord {
  std::size_t step = 0;
  double total = 0, mae_t = 0, mse_t = 0, mae_r = 0, mse_r = 0, mse_img = 0, kl = 0;
  double grad_norm = 0;  // after clipping
  double seconds = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  std::string to_csv() const {
    std::string out = "step,total,mae_t,mse_t,mae_r,mse_r,mse_img,kl,grad_norm,seconds\n";
    char line[512];
    for (const auto& r : records) {
      std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.step, r.total,
                    r.mae_t, r.mse_t, r.mae_r, r.mse_r, r.mse_img, r.kl, r.grad_norm, r.seconds);
      out += line;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Batch sampling

struct TrainingSample {
  std::size_t demo = 0;
  std::size_t step = 0;  // i; the target is step i + 1
  std::vector<std::size_t> window;  // steps i-W+1 .. i, clamped at 0
};

// Uniform over all (demo, i) with i + 1 inside the demonstration.
inline std::vector<TrainingSample> sample_batch(const std::vector<Demonstration>& demos, std::size_t batch_size,
                                                std::size_t window, Rng& rng) {
  std::vector<std::size_t> offsets;
  std::size_t pairs = 0;
  for (const auto& d : demos) {
    if (d.size() < 2) throw ConfigError("sample_batch: every demonstration needs at least 2 steps");
    offsets.push_back(pairs);
    pairs += d.size() - 1;
  }
  if (pairs == 0) throw ConfigError("sample_batch: empty dataset");
  std::vector<TrainingSample> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pairs) - 1));
    const std::size_t demo = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), k) - offsets.begin()) - 1;
    TrainingSample s{demo, k - offsets[demo], {}};
    for (std::size_t t = 0; t < window; ++t) {
      const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(s.step) - static_cast<std::ptrdiff_t>(window - 1 - t);
      s.window.push_back(static_cast<std::size_t>(std::max<std::ptrdiff_t>(idx, 0)));
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct AssembledBatch {
  WindowBatch inputs;
  TargetBatch targets;
};

// Builds network tensors for sampled windows. One image-jitter draw is shared
// by a sample's window and its target; pose noise is drawn per observation
// and applied to targets only when `noisy_targets` is set.
inline AssembledBatch assemble_batch(const std::vector<Demonstration>& demos, const std::vector<TrainingSample>& samples,
                                     const AugmentConfig& aug, Rng& rng, double contact_threshold) {
  std::vector<Observation> rows;
  std::vector<std::vector<std::size_t>> windows;
  std::vector<double> target_images, target_t, target_q;
  for (const auto& s : samples) {
    const Demonstration& demo = demos.at(s.demo);
    std::optional<ImageJitter> jitter;
    if (aug.image_enabled()) jitter = sample_image_jitter(aug, rng);
    std::vector<std::size_t> window;
    std::size_t prev_step = static_cast<std::size_t>(-1);
    for (std::size_t step : s.window) {
      if (step != prev_step) {
        Observation o = demo.observations.at(step);
        if (jitter) o.image = apply_image_jitter(o.image, *jitter);
        o.pose = augment_pose(o.pose, aug, rng, contact_threshold);
        rows.push_back(std::move(o));
        prev_step = step;
      }
      window.push_back(rows.size() - 1);
    }
    windows.push_back(std::move(window));

    const Observation& target = demo.observations.at(s.step + 1);
    const Image img = jitter ? apply_image_jitter(target.image, *jitter) : target.image;
    target_images.insert(target_images.end(), img.data.begin(), img.data.end());
    PoseState pose = target.pose;
    if (aug.noisy_targets) pose = augment_pose(pose, aug, rng, contact_threshold);
    target_t.insert(target_t.end(), pose.translation.begin(), pose.translation.end());
    target_q.insert(target_q.end(), {pose.rotation.w, pose.rotation.x, pose.rotation.y, pose.rotation.z});
  }
  std::vector<const Observation*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  auto [images, poses] = pack_observations(ptrs);
  const Image& ref = rows.front().image;
  const std::size_t n = samples.size();
  AssembledBatch out;
  out.inputs = {std::move(images), std::move(poses), std::move(windows)};
  out.targets = {Tensor({n, ref.channels, ref.height, ref.width}, std::move(target_images)),
                 Tensor({n, 3}, std::move(target_t)), Tensor({n, 4}, std::move(target_q))};
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

// Adam with bias correction.
class AdamOptimizer {
 public:
  AdamOptimizer(const ParameterSet& params, double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [_, t] : params.entries()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  void step(ParameterSet& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& entries = params.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      Tensor& p = entries[k].second;
      auto values = p.mutable_values();
      auto grad = p.mutable_grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most `max_norm`;
// returns the norm after clipping.
inline double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& [_, t] : params.entries())
    for (double g : t.mutable_grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) return norm;
  if (norm <= max_norm) return norm;
  const double s = max_norm / norm;
  double clipped = 0.0;
  for (auto& [_, t] : params.entries())
    for (double& g : t.mutable_grad()) {
      g *= s;
      clipped += g * g;
    }
  return std::sqrt(clipped);
}

// ---------------------------------------------------------------------------
// Driver

enum class StopReason { kBudget, kConverged, kDiverged };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kBudget: return "budget";
    case StopReason::kConverged: return "converged";
    case StopReason::kDiverged: return "diverged";
  }
  return "?";
}

struct TrainResult {
  PolicyCheckpoint checkpoint;  // last good parameters
  TrainLog log;
  StopReason reason = StopReason::kBudget;
  std::string message;
};

struct TrainHooks {
  // Called every `checkpoint_interval` steps with the current parameters.
  std::function<void(const PolicyCheckpoint&)> on_checkpoint;
  std::function<void(const TrainRecord&)> on_step;
};

inline PolicyCheckpoint make_checkpoint(const PolicyModel& model, const TrainConfig& cfg, std::size_t step,
                                        const Rng& rng) {
  return {model.config(), model.parameters().clone(), cfg.seed, step, rng.state(), {}};
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {}) {
  cfg.validate();
  cfg.model.check_compatible(data.sim);
  if (data.demos.empty()) throw ConfigError("train: dataset has no demonstrations");
  for (const auto& d : data.demos)
    if (d.size() < 2) throw ConfigError("train: demonstration shorter than 2 steps");

  PolicyModel model(cfg.model, derive_seed(cfg.seed, "init"));
  AdamOptimizer adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  Rng sampling(cfg.seed, "sampling");
  Rng augment(cfg.seed, "augment");
  Rng noise(cfg.seed, "reparameterize");

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> history;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto samples = sample_batch(data.demos, cfg.batch_size, cfg.model.window, sampling);
    const auto batch = assemble_batch(data.demos, samples, cfg.augment, augment, data.sim.contact_threshold);
    model.parameters().zero_grad();
    LossTerms terms;
    try {
      terms = pipeline_loss(model, batch.inputs, batch.targets, noise);
    } catch (const DivergenceError& e) {
      result.reason = StopReason::kDiverged;
      result.message = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    backward(terms.total);
    const double norm = clip_gradients(model.parameters(), cfg.clip_norm);
    if (!std::isfinite(norm)) {
      result.reason = StopReason::kDiverged;
      result.message = "non-finite gradient at step " + std::to_string(step);
      break;
    }
    adam.step(model.parameters());

    TrainRecord rec;
    rec.step = step;
    const auto& c = terms.components;
    rec.total = c.at("total");
    rec.mae_t = c.at("mae_t");
    rec.mse_t = c.at("mse_t");
    rec.mae_r = c.at("mae_r");
    rec.mse_r = c.at("mse_r");
    rec.mse_img = c.at("mse_img");
    rec.kl = c.at("kl");
    rec.grad_norm = norm;
    rec.seconds = cfg.deterministic
                      ? 0.0
                      : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.records.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(make_checkpoint(model, cfg, step + 1, sampling));
    }

    history.push_back(rec.total);
    const std::size_t p = cfg.patience;
    if (history.size() >= 2 * p && history.size() % p == 0) {
      double previous = 0.0, current = 0.0;
      for (std::size_t i = history.size() - 2 * p; i < history.size() - p; ++i) previous += history[i];
      for (std::size_t i = history.size() - p; i < history.size(); ++i) current += history[i];
      if (previous > 0.0 && (previous - current) / previous < cfg.convergence_threshold) {
        result.reason = StopReason::kConverged;
        break;
      }
    }
  }
  result.checkpoint = make_checkpoint(model, cfg, result.log.records.size(), sampling);
  return result;
}

}  // namespace callig
