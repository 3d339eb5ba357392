#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ordcast/error.hpp"
#include "ordcast/micromodel.hpp"
#include "ordcast/probcast.hpp"
#include "ordcast/synthdata.hpp"
#include "support.hpp"

using namespace ordcast;
using testsupport::random_rates;
using testsupport::random_tensor;

namespace {

const BinSet kBins3({0.5, 2, 5}, 5.0);

ModelConfig tiny(OutputMode mode = OutputMode::SinglePass, LossKind loss = LossKind::Ordinal) {
  ModelConfig c;
  c.t_in = 2;
  c.t_out = 3;
  c.k = 3;
  c.channels = 4;
  c.n_blocks = 1;
  c.mode = mode;
  c.loss = loss;
  c.seed = 11;
  return c;
}

// Replaces every parameter (including the zero head) with small random
// values so that every gradient path is exercised.
MicroModel randomized(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  MicroModel m(cfg);
  std::mt19937_64 rng(seed);
  for (auto& t : m.params().tensors) t = random_tensor(t.shape(), rng, -scale, scale);
  return m;
}

Sample random_sample(const ModelConfig& cfg, std::size_t hw, std::mt19937_64& rng) {
  return {random_rates({cfg.t_in, hw, hw}, rng, 0.3, 4.0, 0.1),
          random_rates({cfg.t_out, hw, hw}, rng, 0.3, 4.0, 0.1)};
}

double max_fd_error(const ModelConfig& cfg, std::uint64_t seed) {
  MicroModel m = randomized(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  const Sample s = random_sample(cfg, 8, rng);
  const BinSet& bins = kBins3;
  const LeadWeights lw = lead_time_weights(cfg.alpha, cfg.t_out);
  const auto g = m.loss_and_grad(s, lw, bins);
  const double h = 1e-4;
  double worst = 0;
  for (std::size_t k = 0; k < m.params().tensors.size(); ++k)
    for (std::size_t i = 0; i < m.params().tensors[k].size(); ++i) {
      const double orig = m.params().tensors[k][i];
      m.params().tensors[k][i] = orig + h;
      const double up = m.loss(s, lw, bins);
      m.params().tensors[k][i] = orig - h;
      const double dn = m.loss(s, lw, bins);
      m.params().tensors[k][i] = orig;
      worst = std::max(worst, testsupport::rel_err(g.grads[k][i], (up - dn) / (2 * h), 1e-4));
    }
  return worst;
}

}  // namespace

TEST_CASE("forward shape, range and zero-head anchor") {
  ModelConfig c;
  c.seed = 2;
  MicroModel m(c);
  std::mt19937_64 rng(3);
  const Tensor frames = random_rates({4, 32, 32}, rng, 0.4, 5.0, 0.05);
  const Tensor out = m.forward(frames);
  CHECK(out.shape() == std::vector<std::size_t>{6, 5, 32, 32});
  for (double v : out.data()) CHECK(v == 0.5);
  CHECK(m.forward(frames) == out);

  MicroModel r = randomized(c, 4, 0.1);
  const Tensor o = r.forward(frames);
  for (double v : o.data()) CHECK((v > 0 && v < 1));
  CHECK(r.forward(frames) == o);
  CHECK_THROWS_AS(m.forward(random_rates({3, 32, 32}, rng)), DimensionError);
}

TEST_CASE("analytic gradients match central differences") {
  CHECK(max_fd_error(tiny(), 21) <= 1e-4);
  CHECK(max_fd_error(tiny(OutputMode::SinglePass, LossKind::CrossEntropy), 22) <= 1e-4);
  CHECK(max_fd_error(tiny(OutputMode::LeadConditioned, LossKind::Ordinal), 23) <= 1e-4);
  CHECK(max_fd_error(tiny(OutputMode::LeadConditioned, LossKind::CrossEntropy), 24) <= 1e-4);
}

TEST_CASE("gradient linearity and the constant-loss case") {
  const ModelConfig c = tiny();
  MicroModel m = randomized(c, 5);
  std::mt19937_64 rng(6);
  const Sample s = random_sample(c, 8, rng);
  const LeadWeights lw = lead_time_weights(c.alpha, c.t_out);
  const auto g1 = m.loss_and_grad(s, lw, kBins3, 1.0);
  const auto g2 = m.loss_and_grad(s, lw, kBins3, 2.0);
  for (std::size_t k = 0; k < g1.grads.size(); ++k)
    for (std::size_t i = 0; i < g1.grads[k].size(); ++i) CHECK(g2.grads[k][i] == 2 * g1.grads[k][i]);

  // No valid target pixel: the loss is a constant and every gradient is 0.
  Sample blank = s;
  blank.target.fill(kMissing);
  const auto g0 = m.loss_and_grad(blank, lw, kBins3);
  CHECK(g0.empty);
  for (const auto& t : g0.grads)
    for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("tape replay reproduces the forward pass") {
  const ModelConfig c = tiny();
  MicroModel m = randomized(c, 7);
  std::mt19937_64 rng(8);
  const Tensor frames = random_rates({c.t_in, 8, 8}, rng);
  Tape tape;
  Network net(c, m.params().tensors, tape, true);
  const Tape::Id out = net.logits(tape.leaf(encode_input(frames, c)));
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < tape.size(); ++i) before.push_back(tape.value(i));
  tape.replay();
  for (std::size_t i = 0; i < tape.size(); ++i) CHECK(tape.value(i) == before[i]);
  CHECK(tape.value(out).vec() == m.logits(frames).vec());
}

TEST_CASE("single-pass uses one forward, lead-conditioned uses T_out") {
  std::mt19937_64 rng(9);
  const Tensor frames = random_rates({2, 8, 8}, rng);
  MicroModel sp(tiny());
  MicroModel lc(tiny(OutputMode::LeadConditioned));
  sp.predict(frames);
  lc.predict(frames);
  CHECK(sp.forward_count() == 1);
  CHECK(lc.forward_count() == 3);
  CHECK(sp.predict(frames).shape() == lc.predict(frames).shape());
}

TEST_CASE("predictions are monotone across classes") {
  for (auto loss : {LossKind::Ordinal, LossKind::CrossEntropy}) {
    MicroModel m = randomized(tiny(OutputMode::SinglePass, loss), 10);
    std::mt19937_64 rng(11);
    const Tensor p = m.predict(random_rates({2, 8, 8}, rng));
    CHECK(p.shape() == std::vector<std::size_t>{3, 3, 8, 8});
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 1; c < 3; ++c)
        for (std::size_t i = 0; i < 64; ++i) CHECK(p[(t * 3 + c) * 64 + i] <= p[(t * 3 + c - 1) * 64 + i]);
  }
}

TEST_CASE("cross-entropy argmax agrees with extraction at 0.5 thresholds") {
  const ModelConfig c = tiny(OutputMode::SinglePass, LossKind::CrossEntropy);
  MicroModel m = randomized(c, 12);
  for (auto& t : m.params().tensors)
    for (double& v : t.data()) v *= 4;  // sharpen the bucket distribution
  std::mt19937_64 rng(13);
  const Tensor frames = random_rates({2, 8, 8}, rng);
  const Tensor probs = m.forward(frames);  // T x (K+1) x H x W
  ThresholdTable thr;
  thr.thr = Tensor({3, 3}, 0.5);
  const Tensor rate = extract_intensity(m.predict(frames), thr, kBins3);
  std::size_t checked = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 64; ++i) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < 4; ++b)
        if (probs[(t * 4 + b) * 64 + i] > probs[(t * 4 + best) * 64 + i]) best = b;
      // A bucket holding more than half the mass is also the median bucket.
      if (probs[(t * 4 + best) * 64 + i] <= 0.5) continue;
      ++checked;
      CHECK(kBins3.classify(rate[t * 64 + i]) == best);
    }
  CHECK(checked > 20);
}

TEST_CASE("lead-time weighting bookkeeping") {
  const ModelConfig c = tiny();
  MicroModel m = randomized(c, 14);
  std::mt19937_64 rng(15);
  const Sample s = random_sample(c, 8, rng);
  const Tensor q = m.forward(s.input);
  const ClassMasks masks = exceedance_masks(s.target, kBins3);
  for (double alpha : {1.0, 10.0}) {
    const LeadWeights lw = lead_time_weights(alpha, c.t_out);
    CHECK(lw.w.front() / lw.w.back() == doctest::Approx(alpha).epsilon(1e-12));
    // Manual sum: BCE of every supervised element scaled by its lead weight.
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 64; ++i) {
          if (masks.valid[t * 64 + i] == 0) continue;
          if (k > 0 && masks.masks[(t * 3 + k - 1) * 64 + i] == 0) continue;
          const double p = q[(t * 3 + k) * 64 + i], y = masks.masks[(t * 3 + k) * 64 + i];
          sum += -lw.w[t] * (y * std::log(p) + (1 - y) * std::log(1 - p));
          ++n;
        }
    CHECK(m.loss(s, lw, kBins3) == doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic and the EMA follows the weights") {
  ModelConfig c = tiny();
  c.steps = 12;
  c.batch = 3;
  c.ema_decay = 0;
  SceneConfig sc;
  sc.h = sc.w = 8;
  sc.radius_min = 1;
  sc.radius_max = 2;
  sc.vx = 1;
  std::vector<Sample> data;
  for (std::uint64_t i = 0; i < 4; ++i) {
    sc.seed = i;
    for (auto& w : window_samples(gen_sequence(sc, 7), 2, 3)) data.push_back(std::move(w));
  }
  MicroModel a(c), b(c);
  const auto ra = train(a, data, kBins3);
  const auto rb = train(b, data, kBins3);
  CHECK(ra.loss_curve.size() == 12);
  CHECK(ra.loss_curve == rb.loss_curve);
  CHECK(a.params().tensors == b.params().tensors);
  CHECK(a.params().ema == a.params().tensors);
  CHECK(a.params().step == 12);

  const auto dir = testsupport::temp_dir("ckpt");
  save_checkpoint(dir / "model", a, {{"note", "x"}});
  nlohmann::json extra;
  const MicroModel back = load_checkpoint(dir / "model", &extra);
  CHECK(extra["note"] == "x");
  CHECK(back.config().to_json() == a.config().to_json());
  // Parameters are stored as float32.
  for (std::size_t k = 0; k < back.params().tensors.size(); ++k)
    for (std::size_t i = 0; i < back.params().tensors[k].size(); ++i)
      CHECK(back.params().tensors[k][i] == static_cast<double>(static_cast<float>(a.params().tensors[k][i])));
  CHECK(back.params().step == 12);

  MicroModel bad(c);
  bad.params().tensors[0][0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(bad, data, kBins3), DivergenceError);
  CHECK_THROWS_AS(train(a, {}, kBins3), PreconditionError);
}

TEST_CASE("a trained model keeps dry history mostly dry") {
  ModelConfig c;
  c.channels = 8;
  c.n_blocks = 1;
  c.steps = 150;
  c.batch = 4;
  c.seed = 3;
  const BinSet bins({0.5, 1, 2, 5, 10}, 5.0);
  std::vector<Sample> data;
  for (std::uint64_t i = 0; i < 20; ++i) {
    SceneConfig sc;
    sc.seed = 100 + i;
    for (auto& w : window_samples(gen_sequence(sc, 10), 4, 6)) data.push_back(std::move(w));
  }
  MicroModel m(c);
  const auto res = train(m, data, bins);
  CHECK(res.loss_curve.back() < res.loss_curve.front());
  const Tensor p = m.predict(Tensor({4, 32, 32}, 0.0), true);
  double mean = 0;
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < 1024; ++i) mean += p[(t * 5) * 1024 + i] / (6 * 1024);
  CHECK(mean < 0.5);
}
