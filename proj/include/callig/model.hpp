#pragma once

// Variational imitation policy: a residual feature-pyramid image encoder and a
// pose MLP feed a diagonal-Gaussian latent; a bidirectional LSTM over a window
// of recent latents predicts the next latent, which is decoded into the next
// observation image and the next pen-tip pose.

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "callig/errors.hpp"
#include "callig/ops.hpp"
#include "callig/pose.hpp"
#include "callig/rng.hpp"
#include "callig/sim.hpp"
#include "callig/tensor.hpp"

namespace callig {

struct LossWeights {
  double mae_translation = 1.0;  // lambda_1
  double mse_translation = 1.0;  // lambda_2
  double mae_rotation = 1.0;     // lambda_3
  double mse_rotation = 1.0;     // lambda_4
  double mse_image = 1.0;        // lambda_5
  double kl = 1e-3;              // lambda_6

  LossWeights scaled(double c) const {
    return {c * mae_translation, c * mse_translation, c * mae_rotation, c * mse_rotation, c * mse_image, c * kl};
  }
};

struct ModelConfig {
  std::size_t image_channels = 3;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t latent_dim = 32;
  std::vector<std::size_t> stage_channels{16, 32, 64, 64};
  std::size_t pyramid_channels = 32;
  std::size_t pyramid_levels = 3;
  std::vector<std::size_t> pose_widths{64, 64};
  std::size_t fusion_width = 64;
  std::size_t lstm_hidden = 64;
  std::size_t window = 8;
  std::vector<std::size_t> decoder_channels{32, 16, 8, 8};
  std::vector<std::size_t> pose_head_widths{64, 64};
  LossWeights weights{};
  std::size_t mc_samples = 1;  // L
  double log_sigma_min = -10.0;
  double log_sigma_max = 4.0;
  // Ablation switches.
  bool bidirectional = true;
  bool variational = true;
  bool feature_pyramid = true;

  std::size_t top_resolution() const { return image_height >> stage_channels.size(); }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("model: latent_dim must be >= 1");
    if (window < 1) throw ConfigError("model: window must be >= 1");
    if (mc_samples < 1) throw ConfigError("model: mc_samples must be >= 1");
    if (stage_channels.empty()) throw ConfigError("model: need at least one encoder stage");
    if (pyramid_levels < 1 || pyramid_levels > stage_channels.size()) {
      throw ConfigError("model: pyramid_levels must be in [1, number of stages]");
    }
    if (decoder_channels.empty()) throw ConfigError("model: decoder_channels must not be empty");
    if (image_height != image_width) throw ConfigError("model: images must be square");
    const std::size_t down = std::size_t{1} << stage_channels.size();
    const std::size_t up = std::size_t{1} << (decoder_channels.size() - 1);
    if (image_height % down != 0 || image_height < down) {
      throw ConfigError("model: image extent must be a multiple of 2^stages");
    }
    if (image_height % up != 0 || image_height < up) {
      throw ConfigError("model: image extent must be a multiple of 2^(decoder stages - 1)");
    }
    const auto& w = weights;
    if (w.mae_translation < 0 || w.mse_translation < 0 || w.mae_rotation < 0 || w.mse_rotation < 0 ||
        w.mse_image < 0 || w.kl < 0) {
      throw ConfigError("model: loss weights must be nonnegative");
    }
    if (!(log_sigma_min < log_sigma_max)) throw ConfigError("model: log_sigma_min must be below log_sigma_max");
    for (auto c : stage_channels)
      if (c == 0) throw ConfigError("model: zero channel count");
    for (auto c : decoder_channels)
      if (c == 0) throw ConfigError("model: zero channel count");
  }

  void check_compatible(const SimConfig& sim) const {
    if (sim.image_channels != image_channels || sim.image_height != image_height || sim.image_width != image_width) {
      throw ConfigError("model image shape " + std::to_string(image_channels) + "x" + std::to_string(image_height) + "x" +
                        std::to_string(image_width) + " does not match simulator " +
                        std::to_string(sim.image_channels) + "x" + std::to_string(sim.image_height) + "x" +
                        std::to_string(sim.image_width));
    }
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  const auto& w = c.weights;
  return {{"image_channels", c.image_channels},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"latent_dim", c.latent_dim},
          {"stage_channels", c.stage_channels},
          {"pyramid_channels", c.pyramid_channels},
          {"pyramid_levels", c.pyramid_levels},
          {"pose_widths", c.pose_widths},
          {"fusion_width", c.fusion_width},
          {"lstm_hidden", c.lstm_hidden},
          {"window", c.window},
          {"decoder_channels", c.decoder_channels},
          {"pose_head_widths", c.pose_head_widths},
          {"lambda", {w.mae_translation, w.mse_translation, w.mae_rotation, w.mse_rotation, w.mse_image, w.kl}},
          {"mc_samples", c.mc_samples},
          {"log_sigma_min", c.log_sigma_min},
          {"log_sigma_max", c.log_sigma_max},
          {"bidirectional", c.bidirectional},
          {"variational", c.variational},
          {"feature_pyramid", c.feature_pyramid}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_channels = j.at("image_channels").get<std::size_t>();
  c.image_height = j.at("image_height").get<std::size_t>();
  c.image_width = j.at("image_width").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  c.pyramid_channels = j.at("pyramid_channels").get<std::size_t>();
  c.pyramid_levels = j.at("pyramid_levels").get<std::size_t>();
  c.pose_widths = j.at("pose_widths").get<std::vector<std::size_t>>();
  c.fusion_width = j.at("fusion_width").get<std::size_t>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<std::size_t>>();
  c.pose_head_widths = j.at("pose_head_widths").get<std::vector<std::size_t>>();
  const auto l = j.at("lambda").get<std::vector<double>>();
  if (l.size() != 6) throw ConfigError("model: lambda needs 6 entries");
  c.weights = {l[0], l[1], l[2], l[3], l[4], l[5]};
  c.mc_samples = j.at("mc_samples").get<std::size_t>();
  c.log_sigma_min = j.at("log_sigma_min").get<double>();
  c.log_sigma_max = j.at("log_sigma_max").get<double>();
  c.bidirectional = j.at("bidirectional").get<bool>();
  c.variational = j.at("variational").get<bool>();
  c.feature_pyramid = j.at("feature_pyramid").get<bool>();
  c.validate();
  return c;
}

inline std::string model_fingerprint(const ModelConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Parameters

enum class ParamInit { kWeight, kBias, kForgetBias };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init;
  std::size_t fan_in = 1;
};

// Named trainable tensors in a fixed creation order.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw UsageError("duplicate parameter " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }
  const Tensor& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter " + name);
    return entries_[it->second].second;
  }
  Tensor& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter " + name);
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }
  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }
  // Deep copy with fresh leaves.
  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.add(name, t.detach());
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    specs.push_back({name + ".w", {out, in, k, k}, ParamInit::kWeight, in * k * k});
    specs.push_back({name + ".b", {out}, ParamInit::kBias});
  };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    specs.push_back({name + ".w", {in, out}, ParamInit::kWeight, in});
    specs.push_back({name + ".b", {out}, ParamInit::kBias});
  };
  const std::size_t stages = cfg.stage_channels.size();
  std::size_t in = cfg.image_channels;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t c = cfg.stage_channels[s];
    const std::string p = "enc.stage" + std::to_string(s);
    conv(p + ".down", c, in, 2);
    conv(p + ".res1", c, c, 3);
    conv(p + ".res2", c, c, 3);
    in = c;
  }
  const std::size_t g = cfg.top_resolution();
  std::size_t image_features = 0;
  if (cfg.feature_pyramid) {
    for (std::size_t s = stages - cfg.pyramid_levels; s < stages; ++s) {
      conv("enc.lateral" + std::to_string(s), cfg.pyramid_channels, cfg.stage_channels[s], 1);
    }
    image_features = cfg.pyramid_levels * cfg.pyramid_channels * g * g;
  } else {
    image_features = cfg.stage_channels.back() * g * g;
  }
  std::size_t pin = 7;
  for (std::size_t k = 0; k < cfg.pose_widths.size(); ++k) {
    dense("enc.pose" + std::to_string(k), pin, cfg.pose_widths[k]);
    pin = cfg.pose_widths[k];
  }
  dense("enc.fusion", image_features + pin, cfg.fusion_width);
  dense("enc.mu", cfg.fusion_width, cfg.latent_dim);
  dense("enc.log_sigma", cfg.fusion_width, cfg.latent_dim);

  const std::size_t h = cfg.lstm_hidden, j = cfg.latent_dim;
  const std::vector<std::string> dirs = cfg.bidirectional ? std::vector<std::string>{"fwd", "bwd"} : std::vector<std::string>{"fwd"};
  for (const auto& d : dirs) {
    specs.push_back({"lstm." + d + ".wx", {j, 4 * h}, ParamInit::kWeight, j});
    specs.push_back({"lstm." + d + ".wh", {h, 4 * h}, ParamInit::kWeight, h});
    specs.push_back({"lstm." + d + ".b", {4 * h}, ParamInit::kForgetBias});
  }
  dense("lstm.out", dirs.size() * h, j);

  const auto& dc = cfg.decoder_channels;
  const std::size_t seed = cfg.image_height >> (dc.size() - 1);
  dense("dec.seed", j, dc[0] * seed * seed);
  for (std::size_t u = 0; u + 1 < dc.size(); ++u) conv("dec.up" + std::to_string(u), dc[u + 1], dc[u], 3);
  conv("dec.out", cfg.image_channels, dc.back(), 3);
  std::size_t hin = j;
  for (std::size_t k = 0; k < cfg.pose_head_widths.size(); ++k) {
    dense("pose_head." + std::to_string(k), hin, cfg.pose_head_widths[k]);
    hin = cfg.pose_head_widths[k];
  }
  dense("pose_head.out", hin, 7);
  return specs;
}

// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero
// biases, LSTM forget-gate bias 1.
inline ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, "init");
  ParameterSet params;
  for (const auto& spec : parameter_layout(cfg)) {
    Tensor t = Tensor::zeros(spec.shape);
    auto v = t.mutable_values();
    switch (spec.init) {
      case ParamInit::kWeight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (auto& x : v) x = rng.uniform(-bound, bound);
        break;
      }
      case ParamInit::kBias:
        break;
      case ParamInit::kForgetBias: {
        const std::size_t h = v.size() / 4;
        for (std::size_t i = h; i < 2 * h; ++i) v[i] = 1.0;
        break;
      }
    }
    params.add(spec.name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward pieces

struct LatentBatch {
  Tensor mu;         // [N x J]
  Tensor log_sigma;  // [N x J]
};

// A single latent state (one row of a batch).
struct LatentState {
  std::vector<double> mu, log_sigma, z;
};

struct PredictionBatch {
  Tensor image;        // [N x C x H x W], sigmoid output
  Tensor translation;  // [N x 3]
  Tensor rotation;     // [N x 4], unit, w >= 0
};

struct Prediction {
  Image image;
  PoseState pose;
};

struct TargetBatch {
  Tensor image;
  Tensor translation;
  Tensor rotation;
};

struct LossTerms {
  Tensor total;
  std::map<std::string, double> components;  // mae_t, mse_t, mae_r, mse_r, mse_img, kl, total
};

// Packs observations into network inputs: images [N x C x H x W] and poses
// [N x 7].
inline std::pair<Tensor, Tensor> pack_observations(const std::vector<const Observation*>& obs) {
  if (obs.empty()) throw UsageError("pack_observations: empty batch");
  const Image& first = obs.front()->image;
  std::vector<double> images;
  std::vector<double> poses;
  images.reserve(obs.size() * first.data.size());
  poses.reserve(obs.size() * 7);
  for (const Observation* o : obs) {
    if (!o->image.same_shape(first)) throw DimensionError("pack_observations: mixed image shapes");
    images.insert(images.end(), o->image.data.begin(), o->image.data.end());
    for (double v : o->pose.to_array()) poses.push_back(v);
  }
  return {Tensor({obs.size(), first.channels, first.height, first.width}, std::move(images)),
          Tensor({obs.size(), 7}, std::move(poses))};
}

class PolicyModel {
 public:
  PolicyModel(ModelConfig cfg, ParameterSet params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    const auto layout = parameter_layout(cfg_);
    if (layout.size() != params_.size()) throw ConfigError("parameter set does not match model layout");
    for (const auto& spec : layout) {
      if (!params_.contains(spec.name) || params_[spec.name].shape() != spec.shape) {
        throw ConfigError("parameter " + spec.name + " missing or of wrong shape");
      }
    }
  }
  PolicyModel(const ModelConfig& cfg, std::uint64_t seed) : PolicyModel(cfg, init_parameters(cfg, seed)) {}

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }

  // q(z | s) parameters for a batch of observations.
  LatentBatch encode(const Tensor& images, const Tensor& poses) const {
    if (images.rank() != 4 || images.dim(1) != cfg_.image_channels || images.dim(2) != cfg_.image_height ||
        images.dim(3) != cfg_.image_width) {
      throw ConfigError("encode: image batch " + shape_str(images.shape()) + " does not match model config");
    }
    if (poses.rank() != 2 || poses.dim(1) != 7 || poses.dim(0) != images.dim(0)) {
      throw ConfigError("encode: pose batch " + shape_str(poses.shape()) + " does not match image batch");
    }
    const std::size_t n = images.dim(0);
    const std::size_t stages = cfg_.stage_channels.size();
    std::vector<Tensor> levels;
    Tensor x = images;
    for (std::size_t s = 0; s < stages; ++s) {
      const std::string p = "enc.stage" + std::to_string(s);
      x = relu(conv_layer(x, p + ".down", 2, 0));
      Tensor r = relu(conv_layer(x, p + ".res1", 1, 1));
      r = conv_layer(r, p + ".res2", 1, 1);
      x = relu(x + r);
      levels.push_back(x);
    }
    const std::size_t g = cfg_.top_resolution();
    std::vector<Tensor> features;
    if (cfg_.feature_pyramid) {
      // Top-down pathway with lateral 1x1 connections.
      Tensor merged;
      std::vector<Tensor> pyramid;
      for (std::size_t s = stages; s-- > stages - cfg_.pyramid_levels;) {
        Tensor lateral = conv_layer(levels[s], "enc.lateral" + std::to_string(s), 1, 0);
        merged = (s == stages - 1) ? lateral : lateral + upsample2x(merged);
        pyramid.push_back(merged);
      }
      for (auto it = pyramid.rbegin(); it != pyramid.rend(); ++it) {
        const std::size_t res = it->dim(2);
        Tensor pooled = res == g ? *it : avg_pool2d(*it, res / g);
        features.push_back(reshape(pooled, {n, pooled.numel() / n}));
      }
    } else {
      features.push_back(reshape(levels.back(), {n, levels.back().numel() / n}));
    }
    Tensor pose_feat = poses;
    for (std::size_t k = 0; k < cfg_.pose_widths.size(); ++k) pose_feat = relu(dense(pose_feat, "enc.pose" + std::to_string(k)));
    features.push_back(pose_feat);
    Tensor fused = relu(dense(concat_cols(features), "enc.fusion"));
    LatentBatch out;
    out.mu = dense(fused, "enc.mu");
    if (cfg_.variational) {
      out.log_sigma = clamp(dense(fused, "enc.log_sigma"), cfg_.log_sigma_min, cfg_.log_sigma_max);
    } else {
      out.log_sigma = Tensor::zeros(out.mu.shape());
    }
    return out;
  }

  // z = mu + exp(log_sigma) * eps with eps ~ N(0, I) drawn from `rng`; eps
  // is a constant of the graph. Deterministic models return mu.
  Tensor reparameterize(const LatentBatch& latent, Rng& rng) const {
    if (!cfg_.variational) return latent.mu;
    return reparameterize(latent.mu, latent.log_sigma, rng);
  }

  static Tensor reparameterize(const Tensor& mu, const Tensor& log_sigma, Rng& rng) {
    std::vector<double> eps(mu.numel());
    for (auto& e : eps) e = rng.normal();
    return mu + exp(log_sigma) * Tensor(mu.shape(), std::move(eps));
  }

  // Next latent from a window of latents (oldest first), each [N x J].
  Tensor predict_latent(const std::vector<Tensor>& window) const {
    if (window.size() != cfg_.window) {
      throw ConfigError("predict_latent: window length " + std::to_string(window.size()) + " != configured " +
                        std::to_string(cfg_.window));
    }
    const std::size_t n = window.front().dim(0);
    Tensor h = run_lstm("lstm.fwd", window.begin(), window.end(), n);
    if (cfg_.bidirectional) {
      Tensor hb = run_lstm("lstm.bwd", window.rbegin(), window.rend(), n);
      h = concat_cols({h, hb});
    }
    return dense(h, "lstm.out");
  }

  PredictionBatch decode(const Tensor& z) const {
    const std::size_t n = z.dim(0);
    const auto& dc = cfg_.decoder_channels;
    const std::size_t seed = cfg_.image_height >> (dc.size() - 1);
    Tensor x = reshape(relu(dense(z, "dec.seed")), {n, dc[0], seed, seed});
    for (std::size_t u = 0; u + 1 < dc.size(); ++u) x = relu(conv_layer(upsample2x(x), "dec.up" + std::to_string(u), 1, 1));
    PredictionBatch out;
    out.image = sigmoid(conv_layer(x, "dec.out", 1, 1));
    Tensor p = z;
    for (std::size_t k = 0; k < cfg_.pose_head_widths.size(); ++k) p = relu(dense(p, "pose_head." + std::to_string(k)));
    p = dense(p, "pose_head.out");
    out.translation = slice_cols(p, 0, 3);
    out.rotation = normalize_quaternion_rows(slice_cols(p, 3, 7));
    return out;
  }

  // Weighted reconstruction (MAE/MSE on translation and quaternion, MSE on
  // the image) plus weighted KL(q(z|s) || N(0, I)), to be minimized. KL is
  // summed over latent dimensions and averaged over encoded rows.
  LossTerms loss(const PredictionBatch& pred, const TargetBatch& target, const LatentBatch& latent) const {
    return loss(pred, target, latent, cfg_.weights, cfg_.variational);
  }

  static LossTerms loss(const PredictionBatch& pred, const TargetBatch& target, const LatentBatch& latent,
                        const LossWeights& w, bool include_kl = true) {
    const Tensor dt = pred.translation - target.translation;
    const Tensor dr = pred.rotation - target.rotation;
    const Tensor di = pred.image - target.image;
    LossTerms out;
    const Tensor mae_t = mean(abs(dt)), mse_t = mean(square(dt));
    const Tensor mae_r = mean(abs(dr)), mse_r = mean(square(dr));
    const Tensor mse_i = mean(square(di));
    Tensor total = w.mae_translation * mae_t + w.mse_translation * mse_t + w.mae_rotation * mae_r +
                   w.mse_rotation * mse_r + w.mse_image * mse_i;
    double kl_value = 0.0;
    if (include_kl) {
      const Tensor kl = kl_divergence(latent);
      kl_value = kl.item();
      total = total + w.kl * kl;
    }
    out.components = {{"mae_t", mae_t.item()}, {"mse_t", mse_t.item()}, {"mae_r", mae_r.item()},
                      {"mse_r", mse_r.item()}, {"mse_img", mse_i.item()}, {"kl", kl_value},
                      {"total", total.item()}};
    for (const auto& [name, v] : out.components) {
      if (!std::isfinite(v)) throw DivergenceError("non-finite loss component " + name, out.components);
    }
    out.total = total;
    return out;
  }

  // -1/2 sum_j (1 + log sigma_j^2 - mu_j^2 - sigma_j^2), averaged over rows.
  static Tensor kl_divergence(const LatentBatch& latent) {
    const double rows = static_cast<double>(latent.mu.dim(0));
    const Tensor two_ls = scale(latent.log_sigma, 2.0);
    const Tensor inner = add_scalar(two_ls - square(latent.mu) - exp(two_ls), 1.0);
    return scale(sum(inner), -0.5 / rows);
  }

  // Single-observation helpers used at inference time.
  LatentBatch encode(const std::vector<const Observation*>& obs) const {
    auto [images, poses] = pack_observations(obs);
    return encode(images, poses);
  }

  static Prediction prediction_row(const PredictionBatch& batch, std::size_t row) {
    Prediction p;
    const std::size_t c = batch.image.dim(1), h = batch.image.dim(2), w = batch.image.dim(3);
    p.image = Image(c, h, w);
    const auto iv = batch.image.values();
    std::copy_n(iv.begin() + static_cast<std::ptrdiff_t>(row * c * h * w), c * h * w, p.image.data.begin());
    const auto t = batch.translation.values();
    const auto q = batch.rotation.values();
    p.pose.translation = {t[3 * row], t[3 * row + 1], t[3 * row + 2]};
    p.pose.rotation = {q[4 * row], q[4 * row + 1], q[4 * row + 2], q[4 * row + 3]};
    return p;
  }

 private:
  Tensor conv_layer(const Tensor& x, const std::string& name, std::size_t stride, std::size_t padding) const {
    return add_channel_bias(conv2d(x, params_[name + ".w"], stride, padding), params_[name + ".b"]);
  }
  Tensor dense(const Tensor& x, const std::string& name) const {
    return linear(x, params_[name + ".w"], params_[name + ".b"]);
  }

  // Final hidden state of an LSTM (gate order i, f, g, o) over [first, last).
  template <typename It>
  Tensor run_lstm(const std::string& name, It first, It last, std::size_t n) const {
    const std::size_t hsz = cfg_.lstm_hidden;
    const Tensor& wx = params_[name + ".wx"];
    const Tensor& wh = params_[name + ".wh"];
    const Tensor& b = params_[name + ".b"];
    Tensor h = Tensor::zeros({n, hsz});
    Tensor c = Tensor::zeros({n, hsz});
    for (It it = first; it != last; ++it) {
      const Tensor gates = add_row_bias(matmul(*it, wx) + matmul(h, wh), b);
      const Tensor i = sigmoid(slice_cols(gates, 0, hsz));
      const Tensor f = sigmoid(slice_cols(gates, hsz, 2 * hsz));
      const Tensor g = tanh(slice_cols(gates, 2 * hsz, 3 * hsz));
      const Tensor o = sigmoid(slice_cols(gates, 3 * hsz, 4 * hsz));
      c = f * c + i * g;
      h = o * tanh(c);
    }
    return h;
  }

  ModelConfig cfg_;
  ParameterSet params_;
};

}  // namespace callig
