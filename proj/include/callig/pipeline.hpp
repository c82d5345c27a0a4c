#pragma once

// encode -> reparameterize -> predict_latent -> decode -> loss over a batch of
// observation windows.

#include <vector>

#include "callig/model.hpp"

namespace callig {

// R distinct encoded observations and, per sample, the rows of its context
// window (oldest first). Left-padding repeats a row index, so a padded window
// repeats the same latent.
struct WindowBatch {
  Tensor images;  // [R x C x H x W]
  Tensor poses;   // [R x 7]
  std::vector<std::vector<std::size_t>> windows;

  std::size_t samples() const { return windows.size(); }
};

namespace detail {

inline std::vector<Tensor> gather_window(const Tensor& z, const WindowBatch& batch, std::size_t length) {
  std::vector<Tensor> steps;
  steps.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<std::size_t> rows;
    rows.reserve(batch.samples());
    for (const auto& w : batch.windows) {
      if (w.size() != length) throw ConfigError("window batch length does not match model window");
      rows.push_back(w[t]);
    }
    steps.push_back(select_rows(z, std::move(rows)));
  }
  return steps;
}

}  // namespace detail

// Posterior-mean prediction (no sampling).
inline PredictionBatch predict(const PolicyModel& model, const WindowBatch& batch) {
  const LatentBatch latent = model.encode(batch.images, batch.poses);
  return model.decode(model.predict_latent(detail::gather_window(latent.mu, batch, model.config().window)));
}

// Monte-Carlo estimate of the objective with L = mc_samples draws of eps.
inline LossTerms pipeline_loss(const PolicyModel& model, const WindowBatch& batch, const TargetBatch& target, Rng& rng) {
  const auto& cfg = model.config();
  const LatentBatch latent = model.encode(batch.images, batch.poses);
  LossWeights recon_weights = cfg.weights;
  recon_weights.kl = 0.0;

  Tensor recon;
  std::map<std::string, double> components;
  const std::size_t samples = cfg.variational ? cfg.mc_samples : 1;
  for (std::size_t l = 0; l < samples; ++l) {
    const Tensor z = model.reparameterize(latent, rng);
    const PredictionBatch pred = model.decode(model.predict_latent(detail::gather_window(z, batch, cfg.window)));
    LossTerms terms = PolicyModel::loss(pred, target, latent, recon_weights, false);
    recon = l == 0 ? terms.total : recon + terms.total;
    for (const auto& [k, v] : terms.components) components[k] += v / static_cast<double>(samples);
  }
  if (samples > 1) recon = scale(recon, 1.0 / static_cast<double>(samples));

  LossTerms out;
  if (cfg.variational) {
    const Tensor kl = PolicyModel::kl_divergence(latent);
    components["kl"] = kl.item();
    out.total = recon + cfg.weights.kl * kl;
  } else {
    components["kl"] = 0.0;
    out.total = recon;
  }
  components["total"] = out.total.item();
  for (const auto& [name, v] : components) {
    if (!std::isfinite(v)) throw DivergenceError("non-finite loss component " + name, components);
  }
  out.components = std::move(components);
  return out;
}

}  // namespace callig
