#include <gtest/gtest.h>

#include <cmath>

#include "callig/checkpoint.hpp"
#include "callig/grad_check.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace callig;
using test::random_batch;
using test::tiny_model_config;

namespace {

Tensor row_tensor(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

// One-row prediction/target pair with unit quaternions and a 1x2x2 image.
struct LossCase {
  PredictionBatch pred;
  TargetBatch target;
  LatentBatch latent;
};

LossCase zero_residual_case(std::size_t j) {
  LossCase c;
  c.pred.image = Tensor({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  c.pred.translation = row_tensor({0.0, 0.0, 0.0});
  c.pred.rotation = row_tensor({1.0, 0.0, 0.0, 0.0});
  c.target = {c.pred.image.detach(), c.pred.translation.detach(), c.pred.rotation.detach()};
  c.latent.mu = Tensor::zeros({1, j});
  c.latent.log_sigma = Tensor::zeros({1, j});
  return c;
}

std::vector<double> flat_grads(const ParameterSet& params) {
  std::vector<double> out;
  for (const auto& [_, t] : params.entries()) out.insert(out.end(), t.grad().begin(), t.grad().end());
  return out;
}

}  // namespace

TEST(Encode, ShapeContract) {
  ModelConfig cfg = tiny_model_config();
  cfg.latent_dim = 16;
  const PolicyModel model(cfg, 1);
  const auto batch = random_batch(cfg, 2, 3);
  const Tensor images = select_rows(batch.inputs.images, {0, 1});
  const Tensor poses = select_rows(batch.inputs.poses, {0, 1});
  const LatentBatch l = model.encode(images, poses);
  EXPECT_EQ(l.mu.shape(), (Shape{2, 16}));
  EXPECT_EQ(l.log_sigma.shape(), (Shape{2, 16}));
}

TEST(Encode, IdenticalObservationsGiveIdenticalRows) {
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 2);
  Rng rng(4);
  const Observation o = test::random_observation(cfg, rng);
  const LatentBatch l = model.encode(std::vector<const Observation*>{&o, &o});
  const auto mu = l.mu.values(), ls = l.log_sigma.values();
  for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
    EXPECT_EQ(mu[j], mu[cfg.latent_dim + j]);
    EXPECT_EQ(ls[j], ls[cfg.latent_dim + j]);
  }
}

TEST(Encode, RejectsMismatchedShapes) {
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 2);
  EXPECT_THROW(model.encode(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({1, 7})), ConfigError);
  EXPECT_THROW(model.encode(Tensor::zeros({2, 3, 16, 16}), Tensor::zeros({1, 7})), ConfigError);
  EXPECT_THROW(model.encode(Tensor::zeros({1, 3, 16, 16}), Tensor::zeros({1, 6})), ConfigError);
}

TEST(Encode, PixelGradientMatchesFiniteDifferences) {
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 5);
  const auto batch = random_batch(cfg, 1, 6);
  const Tensor poses = batch.inputs.poses;
  const double err = grad_check([&](const Tensor& x) { return mean(model.encode(x, poses).mu); },
                                batch.inputs.images.detach(), 1e-6);
  EXPECT_LT(err, 1e-4);
}

TEST(Encode, WithoutPyramidOrVariationalHead) {
  ModelConfig cfg = tiny_model_config();
  cfg.feature_pyramid = false;
  cfg.variational = false;
  const PolicyModel model(cfg, 7);
  const auto batch = random_batch(cfg, 1, 8);
  const LatentBatch l = model.encode(batch.inputs.images, batch.inputs.poses);
  EXPECT_EQ(l.mu.shape(), (Shape{cfg.window, cfg.latent_dim}));
  for (double v : l.log_sigma.values()) EXPECT_EQ(v, 0.0);
  Rng rng(1);
  const Tensor z = model.reparameterize(l, rng);
  EXPECT_EQ(z.values()[0], l.mu.values()[0]);
}

TEST(Reparameterize, ZeroVarianceLimitReturnsMu) {
  Rng rng(9);
  const Tensor mu = test::random_tensor({3, 5}, rng);
  const Tensor ls = Tensor::full({3, 5}, -30.0);
  const Tensor z = PolicyModel::reparameterize(mu, ls, rng);
  for (std::size_t i = 0; i < mu.numel(); ++i) EXPECT_NEAR(z.values()[i], mu.values()[i], 1e-9);
}

TEST(Reparameterize, MonteCarloMomentsMatch) {
  const std::size_t n = 100000;
  Rng rng(10);
  const Tensor z = PolicyModel::reparameterize(Tensor::full({n, 1}, 1.0), Tensor::full({n, 1}, std::log(2.0)), rng);
  double mean_z = 0.0, m2 = 0.0;
  for (double v : z.values()) mean_z += v;
  mean_z /= static_cast<double>(n);
  for (double v : z.values()) m2 += (v - mean_z) * (v - mean_z);
  EXPECT_NEAR(mean_z, 1.0, 0.03);
  EXPECT_NEAR(m2 / static_cast<double>(n - 1), 4.0, 0.15);
}

TEST(Reparameterize, DeterministicAndDifferentiableInMuAndLogSigma) {
  Rng a(11), b(11);
  Tensor mu = Tensor::full({1, 4}, 0.5), ls = Tensor::full({1, 4}, -0.3);
  const Tensor za = PolicyModel::reparameterize(mu, ls, a);
  const Tensor zb = PolicyModel::reparameterize(mu, ls, b);
  EXPECT_TRUE(std::equal(za.values().begin(), za.values().end(), zb.values().begin()));

  mu.set_requires_grad(true);
  ls.set_requires_grad(true);
  Rng c(11);
  backward(sum(PolicyModel::reparameterize(mu, ls, c)));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(mu.grad()[i], 1.0);
    // dz/dlog_sigma = sigma * eps = z - mu
    EXPECT_NEAR(ls.grad()[i], za.values()[i] - 0.5, 1e-15);
  }
}

TEST(PredictLatent, WindowOneShapeAndLengthCheck) {
  ModelConfig cfg = tiny_model_config();
  cfg.window = 1;
  const PolicyModel model(cfg, 12);
  Rng rng(13);
  const Tensor z = model.predict_latent({test::random_tensor({3, cfg.latent_dim}, rng)});
  EXPECT_EQ(z.shape(), (Shape{3, cfg.latent_dim}));
  EXPECT_THROW(model.predict_latent({z, z}), ConfigError);
}

TEST(PredictLatent, TiedDirectionsAreReversalInvariant) {
  const ModelConfig cfg = tiny_model_config();
  PolicyModel model(cfg, 14);
  auto& p = model.parameters();
  for (const char* part : {".wx", ".wh", ".b"}) {
    const auto v = p[std::string("lstm.fwd") + part].values();
    std::copy(v.begin(), v.end(), p[std::string("lstm.bwd") + part].mutable_values().begin());
  }
  Rng rng(15);
  const Tensor a = test::random_tensor({2, cfg.latent_dim}, rng), b = test::random_tensor({2, cfg.latent_dim}, rng);
  const Tensor palindrome = model.predict_latent({a, b, a});

  // Only the roles of the two directions change: with the output map's two
  // halves tied as well, any window gives the same output reversed.
  auto out_w = p["lstm.out.w"].mutable_values();
  const std::size_t h = cfg.lstm_hidden, j = cfg.latent_dim;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < j; ++c) out_w[(h + r) * j + c] = out_w[r * j + c];
  const Tensor d = test::random_tensor({2, cfg.latent_dim}, rng);
  const Tensor forward = model.predict_latent({a, b, d});
  const Tensor reversed = model.predict_latent({d, b, a});
  for (std::size_t i = 0; i < forward.numel(); ++i) EXPECT_NEAR(forward.values()[i], reversed.values()[i], 1e-14);

  // On a palindrome both directions end in the same hidden state, so
  // swapping the halves of an untied output map changes nothing.
  PolicyModel swapped(cfg, 14);
  auto& q = swapped.parameters();
  for (const char* part : {".wx", ".wh", ".b"}) {
    const auto v = q[std::string("lstm.fwd") + part].values();
    std::copy(v.begin(), v.end(), q[std::string("lstm.bwd") + part].mutable_values().begin());
  }
  auto sw = q["lstm.out.w"].mutable_values();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < j; ++c) std::swap(sw[r * j + c], sw[(h + r) * j + c]);
  const Tensor again = swapped.predict_latent({a, b, a});
  for (std::size_t i = 0; i < again.numel(); ++i) EXPECT_NEAR(again.values()[i], palindrome.values()[i], 1e-14);
}

TEST(PredictLatent, GradientThroughBothDirections) {
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 16);
  Rng rng(17);
  const Tensor w1 = test::random_tensor({2, cfg.latent_dim}, rng), w2 = test::random_tensor({2, cfg.latent_dim}, rng);
  for (int pos = 0; pos < 3; ++pos) {
    const double err = grad_check(
        [&](const Tensor& x) {
          std::vector<Tensor> window{w1, w2, w1};
          window[static_cast<std::size_t>(pos)] = x;
          return sum(square(model.predict_latent(window)));
        },
        test::random_tensor({2, cfg.latent_dim}, rng), 1e-6);
    EXPECT_LT(err, 1e-4) << pos;
  }
  const double werr = grad_check_parameters(
      [&] { return sum(square(model.predict_latent({w1, w2, w1}))); },
      const_cast<PolicyModel&>(model).parameters().entries(), 1e-6).max_relative_error;
  EXPECT_LT(werr, 1e-4);
}

TEST(Decode, ShapesUnitQuaternionsAndDeterminism) {
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 18);
  Rng rng(19);
  const Tensor z = test::random_tensor({5, cfg.latent_dim}, rng, -3.0, 3.0);
  const PredictionBatch a = model.decode(z), b = model.decode(z);
  EXPECT_EQ(a.image.shape(), (Shape{5, cfg.image_channels, cfg.image_height, cfg.image_width}));
  EXPECT_EQ(a.translation.shape(), (Shape{5, 3}));
  EXPECT_EQ(a.rotation.shape(), (Shape{5, 4}));
  for (double v : a.image.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t r = 0; r < 5; ++r) {
    const Prediction p = PolicyModel::prediction_row(a, r);
    EXPECT_NEAR(p.pose.rotation.norm(), 1.0, 1e-6);
    EXPECT_GE(p.pose.rotation.w, 0.0);
  }
  EXPECT_TRUE(std::equal(a.image.values().begin(), a.image.values().end(), b.image.values().begin()));
  EXPECT_TRUE(std::equal(a.rotation.values().begin(), a.rotation.values().end(), b.rotation.values().begin()));
}

TEST(Loss, PriorWithZeroResidualsIsZero) {
  const LossCase c = zero_residual_case(3);
  const LossTerms t = PolicyModel::loss(c.pred, c.target, c.latent, LossWeights{});
  EXPECT_NEAR(t.total.item(), 0.0, 1e-12);
  EXPECT_NEAR(t.components.at("kl"), 0.0, 1e-9);
}

TEST(Loss, UnitMeanKlIsOneHalf) {
  LossCase c = zero_residual_case(1);
  c.latent.mu = Tensor::full({1, 1}, 1.0);
  LossWeights w;
  w.kl = 1.0;
  EXPECT_NEAR(PolicyModel::loss(c.pred, c.target, c.latent, w).total.item(), 0.5, 1e-9);
  EXPECT_NEAR(PolicyModel::kl_divergence(c.latent).item(), 0.5, 1e-9);
}

TEST(Loss, PerComponentMeanConvention) {
  LossCase c = zero_residual_case(2);
  c.pred.translation = row_tensor({1.0, 0.0, 0.0});
  LossWeights w;
  w.kl = 0.0;
  const LossTerms t = PolicyModel::loss(c.pred, c.target, c.latent, w);
  EXPECT_NEAR(t.components.at("mae_t"), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(t.components.at("mse_t"), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(t.total.item(), 2.0 / 3.0, 1e-15);
}

TEST(Loss, KlIsNonnegativeAndZeroOnlyAtPrior) {
  Rng rng(20);
  for (int i = 0; i < 10000; ++i) {
    LatentBatch l{test::random_tensor({1, 3}, rng, -5.0, 5.0), test::random_tensor({1, 3}, rng, -5.0, 4.0)};
    const double kl = PolicyModel::kl_divergence(l).item();
    ASSERT_GE(kl, 0.0);
    // Closed form per dimension: (mu^2 + s^2 - 1)/2 - log s
    double expected = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double m = l.mu.values()[j], ls = l.log_sigma.values()[j];
      expected += 0.5 * (m * m + std::exp(2 * ls) - 1.0) - ls;
    }
    ASSERT_NEAR(kl, expected, 1e-9 * std::max(1.0, expected));
  }
  LatentBatch off{Tensor::full({1, 2}, 1e-3), Tensor::zeros({1, 2})};
  EXPECT_GT(PolicyModel::kl_divergence(off).item(), 0.0);
}

TEST(Loss, NonnegativeAndNanRaisesDivergence) {
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 21);
  const auto batch = random_batch(cfg, 2, 22);
  Rng rng(23);
  const LossTerms t = pipeline_loss(model, batch.inputs, batch.targets, rng);
  EXPECT_GE(t.total.item(), 0.0);
  for (const char* k : {"mae_t", "mse_t", "mae_r", "mse_r", "mse_img", "kl", "total"}) EXPECT_TRUE(t.components.count(k)) << k;

  LossCase c = zero_residual_case(1);
  c.pred.translation = row_tensor({NAN, 0.0, 0.0});
  try {
    PolicyModel::loss(c.pred, c.target, c.latent, LossWeights{});
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_TRUE(std::isnan(e.components().at("mae_t")));
  }
}

TEST(Loss, ZeroImageWeightIgnoresImageHead) {
  ModelConfig cfg = tiny_model_config();
  cfg.weights.mse_image = 0.0;
  PolicyModel model(cfg, 24);
  const auto batch = random_batch(cfg, 2, 25);
  Rng rng(26);
  model.parameters().zero_grad();
  backward(pipeline_loss(model, batch.inputs, batch.targets, rng).total);
  for (const auto& [name, t] : model.parameters().entries()) {
    if (name.rfind("dec.", 0) != 0) continue;
    for (double g : t.grad()) ASSERT_EQ(g, 0.0) << name;
  }
  LossCase c = zero_residual_case(2);
  LossWeights w = cfg.weights;
  const double base = PolicyModel::loss(c.pred, c.target, c.latent, w).total.item();
  c.pred.image = Tensor::full({1, 1, 2, 2}, 0.9);
  EXPECT_EQ(PolicyModel::loss(c.pred, c.target, c.latent, w).total.item(), base);
}

TEST(Loss, ScalingWeightsScalesLossAndGradient) {
  const ModelConfig cfg = tiny_model_config();
  ModelConfig scaled_cfg = cfg;
  const double k = 3.5;
  scaled_cfg.weights = cfg.weights.scaled(k);
  PolicyModel a(cfg, 27), b(scaled_cfg, 27);
  const auto batch = random_batch(cfg, 2, 28);
  Rng ra(29), rb(29);
  const Tensor la = pipeline_loss(a, batch.inputs, batch.targets, ra).total;
  const Tensor lb = pipeline_loss(b, batch.inputs, batch.targets, rb).total;
  EXPECT_NEAR(lb.item(), k * la.item(), 1e-12 * lb.item());
  a.parameters().zero_grad();
  b.parameters().zero_grad();
  backward(la);
  backward(lb);
  const auto ga = flat_grads(a.parameters()), gb = flat_grads(b.parameters());
  double na = 0.0, nb = 0.0, dot_ab = 0.0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    ASSERT_NEAR(gb[i], k * ga[i], 1e-10 * (1.0 + std::fabs(gb[i])));
    na += ga[i] * ga[i];
    nb += gb[i] * gb[i];
    dot_ab += ga[i] * gb[i];
  }
  EXPECT_NEAR(dot_ab / std::sqrt(na * nb), 1.0, 1e-12);
}

TEST(Pipeline, FullGradientMatchesFiniteDifferences) {
  auto point = test::gradient_check_point();
  const auto check = test::full_pipeline_grad_check(point, 1e-5);
  EXPECT_EQ(check.checked, point.model.parameters().scalar_count());
  EXPECT_LT(check.max_relative_error, 1e-4) << check.worst;
}

TEST(ModelConfig, ValidationAndCompatibility) {
  ModelConfig cfg = tiny_model_config();
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.latent_dim = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.window = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.mc_samples = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.weights.kl = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.image_height = bad.image_width = 18;
  EXPECT_THROW(bad.validate(), ConfigError);
  SimConfig sim;
  EXPECT_THROW(cfg.check_compatible(sim), ConfigError);
  sim.image_height = sim.image_width = 16;
  EXPECT_NO_THROW(cfg.check_compatible(sim));
  EXPECT_EQ(model_config_from_json(to_json(cfg)).window, cfg.window);
  EXPECT_EQ(model_fingerprint(model_config_from_json(to_json(cfg))), model_fingerprint(cfg));
}

TEST(Checkpoint, RoundTripPreservesParametersAndPredictions) {
  test::TempDir tmp("ckpt");
  const ModelConfig cfg = tiny_model_config();
  const PolicyModel model(cfg, 33);
  const PolicyCheckpoint ck{cfg, model.parameters().clone(), 33, 120, "state", "[run]\nseed = 33\n"};
  save_checkpoint(ck, tmp / "c.bin");
  const PolicyCheckpoint back = load_checkpoint(tmp / "c.bin", cfg);
  EXPECT_EQ(back.seed, 33u);
  EXPECT_EQ(back.step, 120u);
  EXPECT_EQ(back.rng_state, "state");
  EXPECT_EQ(back.run_config, ck.run_config);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));

  const PolicyModel restored = model_from_checkpoint(back);
  const auto batch = random_batch(cfg, 2, 34);
  const auto pa = predict(model, batch.inputs), pb = predict(restored, batch.inputs);
  EXPECT_TRUE(std::equal(pa.translation.values().begin(), pa.translation.values().end(), pb.translation.values().begin()));
  EXPECT_TRUE(std::equal(pa.image.values().begin(), pa.image.values().end(), pb.image.values().begin()));
}

TEST(Checkpoint, MismatchAndCorruptionAreRejected) {
  test::TempDir tmp("ckpt2");
  const ModelConfig cfg = tiny_model_config();
  const PolicyCheckpoint ck{cfg, PolicyModel(cfg, 35).parameters().clone(), 35, 0, "", ""};
  save_checkpoint(ck, tmp / "c.bin");
  ModelConfig other = cfg;
  other.lstm_hidden = 7;
  EXPECT_THROW(load_checkpoint(tmp / "c.bin", other), ConfigError);

  std::string bytes = serialize_checkpoint(ck);
  write_file_atomic(tmp / "short.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(tmp / "short.bin"), IoError);
  write_file_atomic(tmp / "trailing.bin", bytes + "x");
  EXPECT_THROW(load_checkpoint(tmp / "trailing.bin"), IoError);
  bytes[0] = 'X';
  write_file_atomic(tmp / "magic.bin", bytes);
  EXPECT_THROW(load_checkpoint(tmp / "magic.bin"), IoError);
  EXPECT_THROW(load_checkpoint(tmp / "absent.bin"), IoError);

  // A header whose stored fingerprint disagrees with its config.
  std::string tampered = serialize_checkpoint(ck);
  const std::string fp = model_fingerprint(cfg);
  const auto at = tampered.find(fp);
  ASSERT_NE(at, std::string::npos);
  tampered[at] = tampered[at] == '0' ? '1' : '0';
  write_file_atomic(tmp / "fp.bin", tampered);
  EXPECT_THROW(load_checkpoint(tmp / "fp.bin"), ConfigError);
}

TEST(Parameters, InitIsSeededAndLayoutMatches) {
  const ModelConfig cfg = tiny_model_config();
  const ParameterSet a = init_parameters(cfg, 1), b = init_parameters(cfg, 1), c = init_parameters(cfg, 2);
  ASSERT_EQ(a.size(), parameter_layout(cfg).size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ta = a.entries()[i].second;
    const auto& tb = b.entries()[i].second;
    const auto& tc = c.entries()[i].second;
    EXPECT_TRUE(std::equal(ta.values().begin(), ta.values().end(), tb.values().begin()));
    differs |= !std::equal(ta.values().begin(), ta.values().end(), tc.values().begin());
  }
  EXPECT_TRUE(differs);
  ParameterSet missing;
  EXPECT_THROW(PolicyModel(cfg, std::move(missing)), ConfigError);
}
