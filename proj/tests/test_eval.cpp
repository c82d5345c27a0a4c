#include <gtest/gtest.h>

#include <cmath>

#include "callig/eval.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace callig;

namespace {

SimConfig sim16() {
  SimConfig s;
  s.image_height = s.image_width = 16;
  return s;
}

PoseTrajectory line(std::size_t n, double length) {
  PoseTrajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = n == 1 ? 0.0 : length * static_cast<double>(i) / static_cast<double>(n - 1);
    t.push_back(PoseState::make({s, 0.0, 0.0}, {}));
  }
  return t;
}

Canvas canvas_with_ink(std::size_t h, std::size_t w, const std::vector<std::size_t>& inked) {
  Canvas c(h, w);
  for (auto p : inked) c.data[p] = 0.0;
  return c;
}

Demonstration expert(const std::string& id, const SimConfig& sim) {
  return generate_demonstration(find_template(id), 3, 0.0, sim);
}

}  // namespace

TEST(TrajectoryRmse, IdenticalAndTranslated) {
  const PoseTrajectory a = line(7, 0.6);
  EXPECT_EQ(trajectory_rmse(a, a), 0.0);
  PoseTrajectory b = a;
  for (auto& p : b) p.translation[1] += 0.03;
  EXPECT_NEAR(trajectory_rmse(a, b), 0.03, 1e-12);
  EXPECT_NEAR(trajectory_rmse(b, a), 0.03, 1e-12);
}

TEST(TrajectoryRmse, SamplingDensityOfSamePathDoesNotMatter) {
  EXPECT_NEAR(trajectory_rmse(line(3, 0.5), line(11, 0.5)), 0.0, 1e-12);
  // Repeated poses add no arc length.
  PoseTrajectory slow = line(5, 0.5);
  slow.insert(slow.begin() + 2, slow[2]);
  slow.push_back(slow.back());
  EXPECT_NEAR(trajectory_rmse(slow, line(7, 0.5)), 0.0, 1e-12);
}

TEST(TrajectoryRmse, ScaledLineMatchesDirectSum) {
  const std::size_t n = 9;
  // Point k of the two lines sits at k/(n-1) and 2k/(n-1).
  double sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(n - 1);
    sq += s * s;
  }
  EXPECT_NEAR(trajectory_rmse(line(n, 1.0), line(n, 2.0)), std::sqrt(sq / n), 1e-12);
}

TEST(TrajectoryRmse, DegenerateInputs) {
  EXPECT_THROW(trajectory_rmse({}, line(3, 1.0)), UsageError);
  const PoseTrajectory point{PoseState::make({0.3, 0.4, 0.0}, {})};
  const PoseTrajectory other{PoseState::make({0.0, 0.0, 0.0}, {})};
  EXPECT_NEAR(trajectory_rmse(point, other), 0.5, 1e-12);
}

TEST(CanvasIou, WorkedExamples) {
  const Canvas a = canvas_with_ink(2, 2, {0, 1});
  EXPECT_EQ(canvas_iou(a, a), 1.0);
  EXPECT_EQ(canvas_iou(a, canvas_with_ink(2, 2, {2, 3})), 0.0);
  EXPECT_DOUBLE_EQ(canvas_iou(a, canvas_with_ink(2, 2, {1, 2})), 1.0 / 3.0);
  EXPECT_EQ(canvas_iou(Canvas(2, 2), Canvas(2, 2)), 1.0);
  EXPECT_THROW(canvas_iou(a, Canvas(2, 3)), DimensionError);
}

TEST(CanvasIou, ThresholdAndSymmetry) {
  Canvas light(1, 2), dark(1, 2);
  light.data = {0.6, 1.0};  // ink 0.4
  dark.data = {0.2, 1.0};   // ink 0.8
  EXPECT_EQ(canvas_iou(light, dark, 0.5), 0.0);
  EXPECT_EQ(canvas_iou(light, dark, 0.3), 1.0);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    Canvas x(6, 5), y(6, 5);
    for (auto& v : x.data) v = rng.uniform(0.0, 1.0);
    for (auto& v : y.data) v = rng.uniform(0.0, 1.0);
    const double iou = canvas_iou(x, y);
    EXPECT_EQ(iou, canvas_iou(y, x));
    EXPECT_GE(iou, 0.0);
    EXPECT_LE(iou, 1.0);
  }
}

TEST(StrokeCompletion, ExpertCanvasCompletesEveryStroke) {
  const SimConfig sim = sim16();
  const Demonstration d = expert("ni2", sim);
  const PoseTrajectory poses = d.poses();
  ASSERT_EQ(pen_down_runs(poses).size(), 2u);
  EXPECT_EQ(stroke_completion(poses, d.final_canvas, sim), (std::vector<bool>{true, true}));
  EXPECT_EQ(stroke_completion(poses, Canvas(16, 16), sim), (std::vector<bool>{false, false}));
}

TEST(Rollout, ZeroBudgetObservesStartOnly) {
  const SimConfig sim = sim16();
  const Demonstration d = expert("line1", sim);
  RolloutOptions opt;
  opt.max_steps = 0;
  const RolloutResult r = rollout(ReplayPlanner(d.poses()), d.observations.front().pose, d.observations.back().pose, sim, opt);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(r.reason, Termination::kBudget);
  ASSERT_EQ(r.trajectory.size(), 1u);
  ASSERT_EQ(r.observations.size(), 1u);
  EXPECT_EQ(r.observations[0], d.observations[0]);
  EXPECT_EQ(r.canvas, Canvas(16, 16));
}

TEST(Rollout, ReplayReproducesExpertExactly) {
  const SimConfig sim = sim16();
  for (const std::string id : {"line1", "ni2"}) {
    const Demonstration d = expert(id, sim);
    RolloutOptions opt;
    opt.max_steps = d.size() - 1;
    opt.completion_steps = 0;
    const RolloutResult r = rollout(ReplayPlanner(d.poses()), d.observations.front().pose, d.observations.back().pose, sim, opt);
    EXPECT_EQ(r.reason, Termination::kBudget);
    EXPECT_EQ(r.trajectory, d.poses()) << id;
    EXPECT_EQ(r.observations, d.observations) << id;
    EXPECT_EQ(r.canvas, d.final_canvas) << id;
    EXPECT_EQ(trajectory_rmse(r.trajectory, d.poses()), 0.0);
    EXPECT_EQ(canvas_iou(r.canvas, d.final_canvas), 1.0);
  }
}

TEST(Rollout, ObservationNoiseNeverReachesExecutedState) {
  const SimConfig sim = sim16();
  const Demonstration d = expert("line1", sim);
  RolloutOptions opt;
  opt.max_steps = d.size() - 1;
  opt.completion_steps = 0;
  opt.pose_noise = opt.image_noise = true;
  opt.noise.sigma_translation = 0.05;
  opt.noise.shift_max = 2;
  opt.noise_seed = 4;
  std::vector<Observation> seen;
  Planner spy = [&, replay = ReplayPlanner(d.poses())](const Observation& o) mutable {
    seen.push_back(o);
    return replay(o);
  };
  const RolloutResult r = rollout(spy, d.observations.front().pose, d.observations.back().pose, sim, opt);
  EXPECT_EQ(r.trajectory, d.poses());
  EXPECT_EQ(r.canvas, d.final_canvas);
  ASSERT_EQ(seen.size(), d.size() - 1);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) differing += !(seen[i].pose == d.observations[i].pose);
  EXPECT_EQ(differing, seen.size());
}

TEST(Rollout, CompletionAfterConsecutiveStepsAtRest) {
  const SimConfig sim = sim16();
  const PoseState start = PoseState::make({0.2, 0.5, 0.1}, {});
  const PoseState rest = PoseState::make({0.8, 0.5, 0.1}, {});
  // Two steps away, then a step inside the tolerance, then settle on rest.
  const std::vector<PoseState> plan{PoseState::make({0.5, 0.5, 0.1}, {}), PoseState::make({0.81, 0.5, 0.1}, {}),
                                    PoseState::make({0.6, 0.5, 0.1}, {})};
  std::size_t calls = 0;
  Planner p = [&](const Observation&) { return calls < plan.size() ? plan[calls++] : (++calls, rest); };
  RolloutOptions opt;
  const RolloutResult r = rollout(p, start, rest, sim, opt);
  EXPECT_EQ(r.reason, Termination::kCompletion);
  EXPECT_EQ(r.steps, plan.size() + opt.completion_steps);
  EXPECT_EQ(r.observations.size(), r.trajectory.size());

  opt.completion_steps = 0;
  opt.max_steps = 20;
  calls = 0;
  EXPECT_EQ(rollout(p, start, rest, sim, opt).reason, Termination::kBudget);
}

TEST(Rollout, OutOfBoundsAndDivergenceStopImmediately) {
  const SimConfig sim = sim16();
  const Demonstration d = expert("line1", sim);
  PolicyModel model(test::tiny_model_config(), 1);
  for (auto& v : model.parameters()["pose_head.out.w"].mutable_values()) v = 0.0;
  model.parameters()["pose_head.out.b"].mutable_values()[0] = 10.0;
  RolloutResult r = rollout(model, d, sim);
  EXPECT_EQ(r.reason, Termination::kOutOfBounds);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(r.trajectory.size(), 1u);

  model.parameters()["pose_head.out.b"].mutable_values()[0] = NAN;
  r = rollout(model, d, sim);
  EXPECT_EQ(r.reason, Termination::kDivergence);
  EXPECT_EQ(r.steps, 0u);
}

TEST(Rollout, PolicyRolloutIsDeterministic) {
  const SimConfig sim = sim16();
  const Demonstration d = expert("line1", sim);
  const PolicyModel model(test::tiny_model_config(), 2);
  RolloutOptions opt;
  opt.max_steps = 30;
  const RolloutResult a = rollout(model, d, sim, opt);
  const RolloutResult b = rollout(model, d, sim, opt);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(a.canvas, b.canvas);
  for (const auto& p : a.trajectory) {
    EXPECT_NEAR(p.rotation.norm(), 1.0, 1e-6);
    EXPECT_EQ(p.pen_down, p.translation[2] < sim.contact_threshold);
  }

  opt.pose_noise = true;
  opt.noise_seed = 1;
  const RolloutResult n1 = rollout(model, d, sim, opt);
  EXPECT_EQ(n1.trajectory, rollout(model, d, sim, opt).trajectory);
  opt.noise_seed = 2;
  EXPECT_NE(n1.trajectory, rollout(model, d, sim, opt).trajectory);
}

TEST(OpenLoop, MatchesStepwisePlannerAndReportedRmse) {
  const SimConfig sim = sim16();
  const Demonstration d = expert("line1", sim);
  PolicyModel model(test::tiny_model_config(), 3);
  test::randomize_biases(model, 4);
  const OpenLoopResult r = open_loop_predict(model, d, sim, 7);
  ASSERT_EQ(r.predicted.size(), d.size() - 1);

  PolicyPlanner planner(model, sim.contact_threshold);
  double sq = 0.0, ang = 0.0;
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    const PoseState p = planner(d.observations[i]);
    for (int k = 0; k < 3; ++k) ASSERT_NEAR(p.translation[k], r.predicted[i].translation[k], 1e-10) << i;
    ASSERT_NEAR(quat_angular_distance(p.rotation, r.predicted[i].rotation), 0.0, 1e-6) << i;
    const PoseState& truth = d.observations[i + 1].pose;
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) d2 += std::pow(r.predicted[i].translation[k] - truth.translation[k], 2);
    sq += d2;
    ang += quat_angular_distance(r.predicted[i].rotation, truth.rotation);
  }
  EXPECT_NEAR(r.translation_rmse, std::sqrt(sq / static_cast<double>(d.size() - 1)), 1e-12);
  EXPECT_NEAR(r.rotation_error, ang / static_cast<double>(d.size() - 1), 1e-12);

  const OpenLoopResult whole = open_loop_predict(model, d, sim);
  EXPECT_NEAR(whole.translation_rmse, r.translation_rmse, 1e-12);
}

TEST(EvalReport, MeansAndJsonFields) {
  const SimConfig sim = sim16();
  const std::vector<Demonstration> demos{expert("line1", sim), expert("ni2", sim)};
  const PolicyModel model(test::tiny_model_config(), 5);
  RolloutOptions opt;
  opt.max_steps = 10;
  EvalTraces traces;
  const EvalReport closed = closed_loop_eval(model, demos, sim, opt, &traces);
  ASSERT_EQ(closed.demos.size(), 2u);
  EXPECT_DOUBLE_EQ(*closed.canvas_iou, (*closed.demos[0].canvas_iou + *closed.demos[1].canvas_iou) / 2.0);
  EXPECT_FALSE(closed.open_loop_translation_rmse.has_value());
  EXPECT_EQ(closed.demos[1].strokes_completed.size(), 2u);
  EXPECT_EQ(traces.inferred.size(), 2u);

  const EvalReport open = open_loop_eval(model, demos, sim);
  EXPECT_FALSE(open.closed_loop_rmse.has_value());
  const nlohmann::json j = to_json(open);
  EXPECT_EQ(j.at("mode"), "open");
  EXPECT_TRUE(j.at("canvas_iou").is_null());
  EXPECT_EQ(j.at("demos").size(), 2u);
  EXPECT_DOUBLE_EQ(j.at("open_loop_translation_rmse").get<double>(), *open.open_loop_translation_rmse);
}
