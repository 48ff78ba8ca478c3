#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gcrl/experiment.hpp"
#include "gcrl/numgrad/optim.hpp"
#include "gcrl/objective.hpp"
#include "gcrl/simdata.hpp"
#include "support.hpp"

using namespace gcrl;
using gcrl::test::linear_scene;
using gcrl::test::random_matrix;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 8;
  c.decoder_hidden = 16;
  c.recon_hidden = 16;
  c.flow_hidden = 8;
  c.flow_layers = 2;
  return c;
}

Scene three_agents() {
  return linear_scene({{{0.0, 0.0, 0.3, 0.1}}, {{2.0, -1.0, -0.2, 0.25}}, {{-1.5, 3.0, 0.05, -0.4}}});
}

std::vector<Scene> sim_scenes(int count, std::uint64_t seed) {
  SimConfig sc;
  sc.msd = 0.3;
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i) out.push_back(simulate_scene(sc, derive_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("loss configuration validation and parsing") {
  LossConfig c;
  c.mode = LossMode::kVariety;
  c.n_samples_qy = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.mode = LossMode::kFull;
  CHECK_NOTHROW(c.validate());
  c.n_samples_sz = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.weight_min = 2.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_loss_mode("adaptation") == LossMode::kAdaptation);
  CHECK(to_string(LossMode::kFull) == "full");
  CHECK_THROWS_AS(parse_loss_mode("elbo"), std::invalid_argument);
}

TEST_CASE("importance weights are clamped ratios") {
  Matrix lp(4, 1), lq(2, 1);
  lp << 0.0, -1.0, 30.0, -2.5;
  lq << 0.0, -3.0;
  Matrix w = importance_weights(Tensor::constant(lp), Tensor::constant(lq), 1e-3, 1e3).value();
  CHECK(w(0, 0) == 1.0);
  CHECK(w(1, 0) == doctest::Approx(std::exp(2.0)).epsilon(1e-14));
  CHECK(w(2, 0) == doctest::Approx(1e3).epsilon(1e-12));
  CHECK(w(3, 0) == doctest::Approx(std::exp(0.5)).epsilon(1e-14));
  lp(1, 0) = -50.0;
  w = importance_weights(Tensor::constant(lp), Tensor::constant(lq), 1e-3, 1e3).value();
  CHECK(w(1, 0) == doctest::Approx(1e-3).epsilon(1e-12));

  // One draw per agent: the estimate of q(y|x) is that draw, so w = 1.
  Matrix single = random_matrix(5, 1, *std::make_unique<Rng>(1), -40.0, 0.0);
  CHECK((importance_weights(Tensor::constant(single), Tensor::constant(single), 1e-3, 1e3).value().array() == 1.0).all());
}

TEST_CASE("importance-weighted full loss has exact gradients") {
  // Several q(y|x) draws make the weights depend on the parameters through
  // both p(y|x,s,z) and the estimate of q(y|x).
  ModelConfig mc = small_config();
  GcrlModel m(mc, 21);
  Rng shape(22);
  for (std::size_t k = 0; k < m.prior_s().size(); ++k)
    static_cast<FlowStack&>(m.prior_s().component(k)).randomize(shape, 0.3);
  std::vector<Scene> scenes{three_agents()};
  Batch b = make_batch(scenes, mc);
  LossConfig lc;
  lc.mode = LossMode::kFull;
  lc.n_samples_qy = 3;
  lc.n_samples_sz = 4;
  auto loss = [&] {
    Rng rng(23);
    return elbo_loss(m, b, lc, rng).total;
  };
  CHECK(gcrl::test::max_grad_error(loss, m.trainable(GradScope::kTrain)) < 1e-5);
}

TEST_CASE("single-draw likelihood prediction term") {
  ModelConfig mc = small_config();
  GcrlModel m(mc, 1);
  Scene s = three_agents();
  Batch b = make_batch(std::span<const Scene>(&s, 1), mc);
  LossConfig lc;
  lc.mode = LossMode::kFull;
  lc.n_samples_qy = 1;
  Rng r1(5), r2(5);
  ElboBreakdown e = elbo_loss(m, b, lc, r1);
  Posteriors p = m.infer_posteriors(b);
  LatentSample ls = m.sample_posteriors(p, 1, r2);
  Matrix lp = gaussian_log_prob(Tensor::constant(b.future_disp), m.decode_future(p.features, ls)).value();
  CHECK(e.pred == doctest::Approx(-lp.mean()).epsilon(1e-14));
  CHECK(e.total_value() == doctest::Approx(e.pred + e.recon + e.kl_s + e.kl_z).epsilon(1e-12));
}

TEST_CASE("kl_s vanishes when the posterior equals the only weighted component") {
  ModelConfig mc = small_config();
  GcrlModel m(mc, 2);
  m.head_s().zero();  // q(s|x) = N(0, I)
  Rng rng(2);
  for (std::size_t k = 1; k < m.prior_s().size(); ++k)
    static_cast<FlowStack&>(m.prior_s().component(k)).randomize(rng, 0.5);
  m.prior_s().set_weights({1.0, 0.0, 0.0, 0.0, 0.0});  // component 0 is the identity flow
  Scene s = three_agents();
  Batch b = make_batch(std::span<const Scene>(&s, 1), mc);
  LossConfig lc;
  lc.mode = LossMode::kFull;
  lc.n_samples_sz = 200;
  ElboBreakdown e = elbo_loss(m, b, lc, rng);
  CHECK(std::abs(e.kl_s) < 1e-12);

  m.prior_s().set_weights({0.2, 0.2, 0.2, 0.2, 0.2});
  CHECK(std::abs(elbo_loss(m, b, lc, rng).kl_s) > 1e-3);
}

TEST_CASE("linear-Gaussian toy matches its analytic likelihood") {
  // x0 = a * s0 + noise with s ~ N(0, I); the other reconstructed coordinates
  // are pure noise around 0 and the future is a constant-mean Gaussian.
  ModelConfig mc = small_config();
  mc.n_cluster = 1;
  GcrlModel m(mc, 3);
  const double a = 1.7, lift = 50.0;
  m.head_z().zero();  // q(z|x) = p(z) = N(0, I)
  auto& rl = m.recon_layers();
  for (auto& l : rl) l.zero();
  // ReLU-free path: the lift keeps every pre-activation positive.
  rl[0].w.tensor.mutable_value()(0, 0) = 1.0;
  rl[0].b.tensor.mutable_value().setConstant(lift);
  rl[1].w.tensor.mutable_value() = Matrix::Identity(mc.recon_hidden, mc.recon_hidden);
  rl[2].w.tensor.mutable_value()(0, 0) = a;
  rl[2].b.tensor.mutable_value()(0, 0) = -a * lift;
  for (auto& l : m.decoder_layers()) l.zero();
  Matrix& db = m.decoder_layers().back().b.tensor.mutable_value();
  for (int j = 0; j < 2 * mc.pred_len; ++j) db(0, j) = 0.05 * j;

  Scene s = linear_scene({{{0.8, -0.3, 0.15, 0.05}}});
  Batch b = make_batch(std::span<const Scene>(&s, 1), mc);
  const Matrix x = b.recon_target;
  const int D = 2 * mc.obs_len;
  const double x0 = x(0, 0);
  double rest = 0.0;
  for (int j = 1; j < D; ++j) rest += x(0, j) * x(0, j);
  const double var0 = 1.0 + a * a;
  const double neg_log_px = 0.5 * (D * kLog2Pi + std::log(var0) + x0 * x0 / var0 + rest);
  double pred = 0.5 * 2 * mc.pred_len * kLog2Pi;
  for (int j = 0; j < 2 * mc.pred_len; ++j) pred += 0.5 * std::pow(b.future_disp(0, j) - db(0, j), 2);

  LossConfig lc;
  lc.mode = LossMode::kFull;
  lc.n_samples_sz = 50;

  // Exact posterior s0 | x ~ N(a x0 / (1 + a^2), 1 / (1 + a^2)): every draw
  // of recon + kl_s equals -log p(x).
  Matrix& hb = m.head_s().b.tensor.mutable_value();
  m.head_s().w.tensor.mutable_value().setZero();
  hb.setZero();
  hb(0, 0) = a * x0 / var0;
  hb(0, mc.d_s) = -std::log(var0);
  Rng rng(3);
  ElboBreakdown e = elbo_loss(m, b, lc, rng);
  CHECK(std::abs(e.kl_z) < 1e-12);
  CHECK(e.recon + e.kl_s == doctest::Approx(neg_log_px).epsilon(1e-10));
  CHECK(e.pred == doctest::Approx(pred).epsilon(1e-12));
  CHECK(e.total_value() == doctest::Approx(pred + neg_log_px).epsilon(1e-10));

  // Posterior = prior: the bound is E_p[-log p(x|s)], analytic, and only
  // matches in Monte-Carlo expectation.
  hb.setZero();
  const double bound = 0.5 * (D * kLog2Pi + x0 * x0 + a * a + rest);
  lc.n_samples_sz = 500;
  std::vector<double> est;
  for (int rep = 0; rep < 20; ++rep) {
    Rng r(100 + static_cast<std::uint64_t>(rep));
    ElboBreakdown f = elbo_loss(m, b, lc, r);
    est.push_back(f.recon + f.kl_s);
  }
  CHECK(std::abs(mean_of(est) - bound) < 3.0 * sd_of(est) / std::sqrt(20.0));
  CHECK(bound > neg_log_px);
}

TEST_CASE("variety loss") {
  Matrix truth = Matrix::Zero(1, 2);
  Matrix two(2, 2);
  two << 1.0, 0.0, 0.0, 0.5;
  CHECK(variety_loss(two, truth) == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(4);
  Matrix t = random_matrix(1, 24, rng);
  Matrix one = random_matrix(1, 24, rng);
  CHECK(variety_loss(one, t) == doctest::Approx((one - t).squaredNorm() / 12).epsilon(1e-15));

  Matrix many = random_matrix(10, 24, rng);
  double prev = variety_loss(many.topRows(1), t);
  for (int k = 2; k <= 10; ++k) {
    const double cur = variety_loss(many.topRows(k), t);
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK_THROWS_AS(variety_loss(Matrix(0, 24), t), ng::ShapeError);
  CHECK_THROWS_AS(variety_loss(many, Matrix::Zero(1, 22)), ng::ShapeError);
}

TEST_CASE("variety prediction term is best-of-N over ancestral samples") {
  ModelConfig mc = small_config();
  GcrlModel m(mc, 5);
  Scene s = three_agents();
  Batch b = make_batch(std::span<const Scene>(&s, 1), mc);
  LossConfig lc;
  lc.mode = LossMode::kVariety;
  lc.variety_n = 7;
  Rng r1(6), r2(6);
  ElboBreakdown e = elbo_loss(m, b, lc, r1);
  Matrix pos = m.ancestral_predict(b, 7, r2);
  double expect = 0.0;
  for (Eigen::Index i = 0; i < b.n; ++i) {
    Matrix rows(7, pos.cols());
    for (int k = 0; k < 7; ++k) rows.row(k) = pos.row(k * b.n + i);
    expect += variety_loss(rows, b.future_pos.row(i)) / static_cast<double>(b.n);
  }
  CHECK(e.pred == doctest::Approx(expect).epsilon(1e-12));

  // Gradient of the graph-rebuilt winners matches finite differences.
  std::vector<Tensor> dec;
  for (auto& l : m.decoder_layers()) dec.push_back(l.b.tensor);
  CHECK(gcrl::test::max_grad_error(
            [&] {
              Rng r(6);
              LossConfig only = lc;
              only.use_recon = false;
              return elbo_loss(m, b, only, r).total;
            },
            dec) < 1e-5);
}

TEST_CASE("adaptation loss drops the z regulariser and leaves the z-branch untouched") {
  ModelConfig mc = small_config();
  GcrlModel m(mc, 7);
  Scene s = three_agents();
  Batch b = make_batch(std::span<const Scene>(&s, 1), mc);
  LossConfig lc;
  lc.mode = LossMode::kFull;
  lc.n_samples_qy = 3;
  lc.adaptation_pred = PredTerm::kLikelihood;

  CHECK_THROWS_AS(adaptation_loss(m, b, lc, *std::make_unique<Rng>(1)), std::logic_error);

  Rng r1(8), r2(8);
  const ElboBreakdown full = elbo_loss(m, b, lc, r1);
  m.set_grad_scope(GradScope::kAdaptable);
  ElboBreakdown ad = adaptation_loss(m, b, lc, r2);
  CHECK(ad.kl_z == full.kl_z);
  CHECK(ad.total_value() == doctest::Approx(full.total_value() - full.kl_z).epsilon(1e-12));

  for (auto& r : m.params()) r.param->tensor.zero_grad();
  ad.total.backward();
  int nonzero = 0;
  for (auto& r : m.params()) {
    const bool has = r.param->tensor.has_grad() && r.param->tensor.grad().cwiseAbs().maxCoeff() > 0.0;
    if (is_z_branch(r.group)) CHECK_FALSE(has);
    if (r.group == ParamGroup::kHeadS || r.group == ParamGroup::kDecoder) nonzero += has;
  }
  CHECK(nonzero > 0);

  // Fresh components are identical identity flows, which leaves p(e) with
  // an exactly zero gradient; give them distinct shapes first.
  Rng shape(10);
  for (std::size_t k = 0; k < m.prior_s().size(); ++k)
    static_cast<FlowStack&>(m.prior_s().component(k)).randomize(shape, 0.5);
  m.set_grad_scope(GradScope::kWeightsOnly);
  Rng r3(9);
  ElboBreakdown wo = adaptation_loss(m, b, lc, r3);
  for (auto& r : m.params()) r.param->tensor.zero_grad();
  wo.total.backward();
  for (auto& r : m.params()) {
    const bool has = r.param->tensor.has_grad() && r.param->tensor.grad().cwiseAbs().maxCoeff() > 0.0;
    CHECK(has == (r.group == ParamGroup::kPriorSWeights));
  }
}

TEST_CASE("200 Adam steps halve the full loss on a tiny dataset") {
  // Output variances are learned here: with both fixed at 1 the total carries
  // a constant (2 * 12 + 2 * 8) / 2 * log(2 pi) ~ 36.8 that no step can remove.
  const auto scenes = sim_scenes(10, 77);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig mc;
    mc.learn_output_var = true;
    GcrlModel m(mc, seed);
    Batch b = make_batch(scenes, mc);
    LossConfig lc;
    lc.mode = LossMode::kFull;
    ng::Adam opt(m.trainable(GradScope::kTrain));
    Rng rng(derive_seed(seed, 1));
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
      opt.zero_grad();
      ElboBreakdown e = elbo_loss(m, b, lc, rng);
      if (step == 0) first = e.total_value();
      e.total.backward();
      opt.step(5e-3);
    }
    Rng eval(derive_seed(seed, 2));
    last = elbo_loss(m, b, lc, eval).total_value();
    CAPTURE(seed);
    CHECK(last <= 0.5 * first);
  }
}

TEST_CASE("estimator is consistent across sample sizes") {
  ModelConfig mc = small_config();
  GcrlModel m(mc, 10);
  const auto scenes = sim_scenes(2, 5);
  Batch b = make_batch(scenes, mc);
  LossConfig lc;
  lc.mode = LossMode::kFull;
  lc.n_samples_qy = 4;
  lc.n_samples_sz = 1000;
  std::vector<double> est;
  for (int rep = 0; rep < 10; ++rep) {
    Rng r(200 + static_cast<std::uint64_t>(rep));
    est.push_back(elbo_loss(m, b, lc, r).total_value());
  }
  lc.n_samples_sz = 10000;
  Rng r(999);
  const double big = elbo_loss(m, b, lc, r).total_value();
  // sd of the 1000-draw estimate is its standard error.
  CHECK(std::abs(est.front() - big) < 3.0 * sd_of(est));
}

TEST_CASE("a diverging term is named") {
  ModelConfig mc = small_config();
  GcrlModel m(mc, 11);
  Scene s = three_agents();
  Batch b = make_batch(std::span<const Scene>(&s, 1), mc);
  LossConfig lc;
  lc.mode = LossMode::kFull;
  m.recon_layers().back().b.tensor.mutable_value().setConstant(1e300);
  Rng rng(1);
  try {
    (void)elbo_loss(m, b, lc, rng);
    FAIL("expected a numeric error");
  } catch (const ng::NumericError& e) {
    CHECK(std::string(e.what()).find("'recon'") != std::string::npos);
  }
  m.recon_layers().back().b.tensor.mutable_value().setZero();
  m.decoder_layers().back().b.tensor.mutable_value().setConstant(1e300);
  try {
    (void)elbo_loss(m, b, lc, rng);
    FAIL("expected a numeric error");
  } catch (const ng::NumericError& e) {
    CHECK(std::string(e.what()).find("'pred'") != std::string::npos);
  }
}

TEST_CASE("reconstruction likelihood rises over the first ten epochs") {
  ExperimentConfig cfg;
  apply_profile(cfg, "desk");
  cfg.epochs = 10;
  cfg.val_n = 5;
  const auto train = sim_scenes(320, 1);
  const auto val = sim_scenes(20, 2);
  GcrlModel m(cfg.model, 3);
  TrainResult res = train_model(m, train, val, cfg);
  REQUIRE(res.epochs.size() == 10);
  CHECK(res.epochs.back().recon < res.epochs.front().recon);
  int rises = 0;
  for (std::size_t i = 1; i < res.epochs.size(); ++i) rises += res.epochs[i].recon < res.epochs[i - 1].recon;
  CHECK(rises >= 6);
}
