#include <doctest.h>

#include <cmath>
#include <random>

#include "ordcast/attribution.hpp"
#include "ordcast/error.hpp"
#include "support.hpp"

using namespace ordcast;
using testsupport::random_tensor;

namespace {

ScalarFunction linear_probe(const Tensor& w, double bias) {
  return [w, bias](const Tensor& x, Tensor* grad) {
    double s = bias;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
    if (grad) *grad = w;
    return s;
  };
}

MicroModel trained_like(std::uint64_t seed) {
  ModelConfig c;
  c.channels = 8;
  c.n_blocks = 1;
  MicroModel m(c);
  std::mt19937_64 rng(seed);
  for (auto& t : m.params().tensors) t = random_tensor(t.shape(), rng, -0.3, 0.3);
  return m;
}

}  // namespace

TEST_CASE("integrated gradients is exact for a linear probe") {
  std::mt19937_64 rng(1);
  const Tensor w = random_tensor({3, 4, 4}, rng, -2, 2);
  const Tensor x = random_tensor({3, 4, 4}, rng, 0, 1);
  const Tensor base = min_baseline(x);
  for (std::size_t steps : {1, 7, 256}) {
    const Attribution a = integrated_gradients(linear_probe(w, 0.3), x, base, steps);
    // Exact up to the rounding of averaging `steps` identical gradients.
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(a.map[i] == doctest::Approx(w[i] * (x[i] - base[i])).epsilon(1e-13));
    if (steps == 1)
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(a.map[i] == w[i] * (x[i] - base[i]));
    CHECK(std::abs(a.total - (a.f_input - a.f_baseline)) <= 1e-12);
  }
}

TEST_CASE("minimum baseline is the per-channel minimum") {
  Tensor x({2, 1, 3});
  x.vec() = {3, 1, 2, -4, 0, 5};
  const Tensor b = min_baseline(x);
  CHECK(b.vec() == std::vector<double>{1, 1, 1, -4, -4, -4});
}

TEST_CASE("attributing the baseline itself gives zeros") {
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({2, 3, 3}, rng);
  const Tensor x = random_tensor({2, 3, 3}, rng);
  const Attribution a = integrated_gradients(linear_probe(w, 0), x, x, 16);
  for (double v : a.map.data()) CHECK(v == 0.0);
  CHECK(a.total == 0.0);
  CHECK_THROWS_AS(integrated_gradients(linear_probe(w, 0), x, x, 0), PreconditionError);
}

TEST_CASE("completeness on the micromodel at 256 steps") {
  const MicroModel m = trained_like(3);
  std::mt19937_64 rng(4);
  const Tensor frames = testsupport::random_rates({4, 32, 32}, rng, 0.3, 6.0, 0.05);
  for (std::size_t lead : {0, 5}) {
    const Attribution a = attribute(m, frames, AttributionTarget{lead, 1, {}}, 256);
    const double delta = a.f_input - a.f_baseline;
    CHECK(std::abs(delta) > 0);
    CHECK(std::abs(a.total - delta) <= 1e-3 * std::abs(delta));
    CHECK(a.per_channel.size() == a.map.dim(0));
    double s = 0;
    for (double v : a.per_channel) s += v;
    CHECK(s == doctest::Approx(a.total).epsilon(1e-12));
  }
}

TEST_CASE("target logit sum and its gradient") {
  const MicroModel m = trained_like(5);
  std::mt19937_64 rng(6);
  const Tensor enc = encode_input(testsupport::random_rates({4, 32, 32}, rng), m.config());
  const AttributionTarget tgt{2, 3, {0, 17, 1000}};
  Tensor g;
  const double f = target_logit_sum(m, enc, tgt, &g);
  CHECK(g.shape() == enc.shape());
  for (std::size_t i : {0ul, 5ul, 1024ul * 4 + 17}) {
    Tensor a = enc, b = enc;
    a[i] += 1e-5;
    b[i] -= 1e-5;
    const double fd = (target_logit_sum(m, a, tgt, nullptr) - target_logit_sum(m, b, tgt, nullptr)) / 2e-5;
    CHECK(testsupport::rel_err(g[i], fd, 1e-6) <= 1e-5);
  }
  CHECK(std::isfinite(f));
}
