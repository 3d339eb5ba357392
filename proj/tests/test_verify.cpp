#include <doctest.h>

#include <random>

#include "ordcast/error.hpp"
#include "ordcast/probcast.hpp"
#include "ordcast/verify.hpp"
#include "support.hpp"

using namespace ordcast;
using namespace testsupport;

namespace {

Tensor field(std::size_t h, std::size_t w, std::vector<double> v) { return Tensor({h, w}, std::move(v)); }

void check_opt(const std::optional<double>& a, const std::optional<double>& b, double tol = 1e-12) {
  REQUIRE(a.has_value() == b.has_value());
  if (a) CHECK(std::abs(*a - *b) <= tol);
}

}  // namespace

TEST_CASE("confusion counts by hand") {
  const auto c = accumulate_confusion(field(1, 4, {1, 1, 1, 0}), field(1, 4, {1, 1, 0, 1}), 0.5);
  CHECK(c == ConfusionCounts{2, 1, 1, 0});
  const Tensor f = field(1, 3, {0, 2, 5});
  const auto same = accumulate_confusion(f, f, 1.0);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  const auto none = accumulate_confusion(f, f, 1.0, Tensor({1, 3}, 0.0));
  CHECK(none.total() == 0);
  // Missing observations are skipped when no mask is given.
  CHECK(accumulate_confusion(f, field(1, 3, {-1, 2, 5}), 1.0).total() == 2);
}

TEST_CASE("categorical scores") {
  const auto s = categorical_scores({2, 1, 1, 0});
  CHECK(*s.csi == 0.5);
  CHECK(*s.fbi == 1.0);
  CHECK(*s.hss == doctest::Approx(-1.0 / 3).epsilon(1e-15));
  const auto p = categorical_scores({3, 0, 0, 5});
  CHECK(*p.csi == 1.0);
  CHECK(*p.fbi == 1.0);
  CHECK(*p.hss == 1.0);
  const auto v = categorical_scores({0, 0, 0, 9});
  CHECK_FALSE(v.csi);
  CHECK_FALSE(v.fbi);
}

TEST_CASE("CSI equals one exactly when there are no misses or false alarms") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    std::uniform_int_distribution<int> u(0, 3);
    const ConfusionCounts c{static_cast<std::uint64_t>(u(rng)), static_cast<std::uint64_t>(u(rng)),
                            static_cast<std::uint64_t>(u(rng)), static_cast<std::uint64_t>(u(rng))};
    const auto s = categorical_scores(c);
    const bool perfect = c.fp == 0 && c.fn == 0 && c.tp > 0;
    CHECK((s.csi && *s.csi == 1.0) == perfect);
  }
}

TEST_CASE("FSS examples") {
  const Tensor p = field(1, 4, {1, 1, 0, 0}), o = field(1, 4, {1, 0, 1, 0});
  const auto r = fss(p, o, 1);
  CHECK(r.value == 0.5);
  const auto c = accumulate_confusion(p, o, 0.5);
  CHECK(r.value == 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn));
  CHECK(fss(p, p, 3).value == 1.0);
  Tensor a({9, 9}), b({9, 9});
  a.at(0, 0) = 1;
  b.at(8, 8) = 1;
  CHECK(fss(a, b, 1).value == 0.0);
  const auto e = fss(Tensor({4, 4}), Tensor({4, 4}), 3);
  CHECK(e.vacuous);
  CHECK(e.value == 1.0);
}

TEST_CASE("neighbourhood sizes map to odd windows") {
  CHECK(window_for_neighbourhood(2, 2) == 1);
  CHECK(window_for_neighbourhood(10, 2) == 5);
  CHECK(window_for_neighbourhood(20, 2) == 11);
  CHECK(window_for_neighbourhood(0, 2) == 1);
}

TEST_CASE("FSS does not decrease with window for a one-pixel displacement") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_binary({16, 16}, rng, 0.3);
    Tensor b({16, 16});
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 1; x < 16; ++x) b.at(y, x) = a.at(y, x - 1);
    double prev = -1;
    for (std::size_t w : {1, 3, 5, 7, 9}) {
      const double v = fss(a, b, w).value;
      CHECK(v >= prev - 1e-12);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      prev = v;
    }
  }
}

TEST_CASE("pooled CSI") {
  const Tensor p = field(2, 2, {1, 0, 0, 0}), o = field(2, 2, {0, 1, 0, 0});
  CHECK(*pooled_csi(p, o, 2, 0.5) == 1.0);
  CHECK(*categorical_scores(accumulate_confusion(p, o, 0.5)).csi == 0.0);
  CHECK(*pooled_csi(o, o, 2, 0.5) == 1.0);
  CHECK_THROWS_AS(pooled_csi(Tensor({3, 3}), Tensor({3, 3}), 2, 0.5), DimensionError);
}

TEST_CASE("metrics match naive scalar oracles on random fields") {
  std::mt19937_64 rng(23);
  const BinSet bins({0.5, 1, 2, 5, 10}, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor pred = random_rates({16, 16}, rng, 0.4, 3.0);
    const Tensor obs = random_rates({16, 16}, rng, 0.4, 3.0, 0.05);
    for (double thr : {0.5, 2.0, 10.0}) {
      const Counts n = naive_counts(pred, obs, thr);
      const auto s = categorical_scores(accumulate_confusion(pred, obs, thr));
      check_opt(s.csi, naive_csi(n));
      check_opt(s.fbi, naive_fbi(n));
      check_opt(s.hss, naive_hss(n));
      Tensor pb({16, 16}), ob({16, 16});
      for (std::size_t i = 0; i < 256; ++i) {
        if (obs[i] == -1.0) continue;
        pb[i] = pred[i] >= thr;
        ob[i] = obs[i] >= thr;
      }
      for (std::size_t w : {1, 5, 11}) CHECK(std::abs(fss(pb, ob, w).value - naive_fss(pb, ob, w)) <= 1e-12);
      for (std::size_t pool : {2, 4, 8}) check_opt(pooled_csi(pred, obs, pool, thr), naive_pooled_csi(pred, obs, pool, thr));
    }
  }
}

TEST_CASE("error scores") {
  const Tensor a = field(1, 3, {1, 2, 3});
  const auto z = error_scores(a, a);
  CHECK(*z.mae == 0.0);
  CHECK(*z.mse == 0.0);
  const auto off = error_scores(field(1, 3, {3, 4, 5}), a);
  CHECK(*off.mae == 2.0);
  CHECK(*off.mse == 4.0);
  const auto one = error_scores(field(1, 3, {4, 9, 9}), field(1, 3, {1, -1, -1}));
  CHECK(*one.mae == 3.0);
  CHECK(*one.mse == 9.0);
  CHECK_FALSE(error_scores(a, field(1, 3, {-1, -1, -1})).mae);
}

TEST_CASE("SSIM") {
  std::mt19937_64 rng(24);
  const Tensor x = random_tensor({16, 16}, rng, 0, 10);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 1.5;
  const double s = ssim(shifted, x);
  CHECK(s < 1.0);
  CHECK(s == doctest::Approx(naive_ssim(shifted, x)).epsilon(1e-9));

  Tensor a({12, 12}), b({12, 12});
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t xx = 0; xx < 12; ++xx) {
      a.at(y, xx) = (y + xx) % 2;
      b.at(y, xx) = 1 - a.at(y, xx);
    }
  const double anti = ssim(a, b);
  CHECK(anti < 0.0);
  CHECK(anti == doctest::Approx(naive_ssim(a, b)).epsilon(1e-9));

  const Tensor y = random_tensor({20, 14}, rng, 0, 5);
  const Tensor z = random_tensor({20, 14}, rng, 0, 5);
  CHECK(ssim(y, z) == doctest::Approx(naive_ssim(y, z)).epsilon(1e-9));

  Tensor bad = x;
  bad[3] = -1.0;
  CHECK_THROWS_AS(ssim(bad, x), PreconditionError);
  CHECK_THROWS_AS(ssim(Tensor({8, 8}), Tensor({8, 8})), DimensionError);
}

TEST_CASE("report aggregation") {
  std::mt19937_64 rng(25);
  ReportConfig cfg;
  cfg.thresholds = {0.5, 2};
  cfg.windows = {1, 3};
  cfg.pools = {2};
  cfg.lead_min = {10, 20};
  const BinSet bins({0.5, 2}, 5.0);
  EvalSample s{random_rates({2, 8, 8}, rng), random_rates({2, 8, 8}, rng, 0.4, 3.0, 0.05),
               reconstruct(random_tensor({2, 2, 8, 8}, rng))};

  SUBCASE("repeating one sample leaves every score unchanged") {
    const auto one = build_report({s}, cfg, bins);
    const auto five = build_report({s, s, s, s, s}, cfg, bins);
    REQUIRE(one.rows.size() == five.rows.size());
    for (std::size_t i = 0; i < one.rows.size(); ++i) {
      CHECK(one.rows[i].metric == five.rows[i].metric);
      check_opt(one.rows[i].value, five.rows[i].value, 1e-12);
    }
  }

  SUBCASE("counts add over disjoint samples") {
    EvalSample s2{random_rates({2, 8, 8}, rng), random_rates({2, 8, 8}, rng), {}};
    s2.prob = reconstruct(random_tensor({2, 2, 8, 8}, rng));
    ReportBuilder a(cfg, bins), b(cfg, bins), ab(cfg, bins);
    a.add(s);
    b.add(s2);
    ab.add(s);
    ab.add(s2);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t t = 0; t < 2; ++t) {
        ConfusionCounts sum = a.counts(k, t);
        sum += b.counts(k, t);
        CHECK(ab.counts(k, t) == sum);
      }
    // Micro aggregation: the pooled CSI comes from summed counts.
    const auto rep = ab.finish();
    const auto* row = rep.find("csi", "0.5", "10");
    REQUIRE(row);
    CHECK(*row->value == *categorical_scores(ab.counts(0, 0)).csi);
  }

  SUBCASE("perfect forecasts score one everywhere") {
    EvalSample p{s.obs, s.obs, {}};
    for (double& v : p.pred.data())
      if (v == -1.0) v = 0.0;
    const auto rep = build_report({p}, cfg);
    for (const auto& r : rep.rows)
      if (r.metric == "csi" && r.value) CHECK(*r.value == 1.0);
    CHECK(*rep.find("mae", "", "all")->value == 0.0);
  }

  SUBCASE("macro rows average the defined cells") {
    const auto rep = build_report({s}, cfg, bins);
    const auto* a = rep.find("csi", "0.5", "20");
    const auto* b = rep.find("csi", "2", "20");
    const auto* m = rep.find("csi", "all", "20");
    REQUIRE(m);
    CHECK(*m->value == doctest::Approx((*a->value + *b->value) / 2).epsilon(1e-15));
    const auto* all = rep.find("csi", "all", "all");
    CHECK(*all->value ==
          doctest::Approx((*rep.find("csi", "all", "10")->value + *m->value) / 2).epsilon(1e-15));
    CHECK(rep.find("crps", "", "10"));
    CHECK(rep.find("csi_pool2", "2", "10"));
    CHECK(rep.find("fss_w3", "0.5", "20"));
  }

  SUBCASE("persistence scored against itself at lead zero") {
    EvalSample p{s.obs, s.obs, {}};
    for (double& v : p.pred.data())
      if (v == -1.0) v = 0.0;
    ReportConfig c0;
    c0.lead_min = {0, 0};
    c0.lead_min.resize(2);
    c0.lead_min[1] = 10;
    const auto rep = build_report({p}, c0);
    CHECK(*rep.find("csi", "all", "0")->value == 1.0);
  }

  SUBCASE("CSV and plot data") {
    const auto rep = build_report({s}, cfg, bins);
    const std::string csv = rep.to_csv();
    CHECK(csv.rfind("metric,threshold,lead_min,value\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == rep.rows.size() + 1);
    const std::string pd = rep.plot_data_csv();
    CHECK(pd.rfind("lead_min,csi@0.5,csi@2,csi@all", 0) == 0);
    CHECK(rep.to_json()["rows"].size() == rep.rows.size());
  }

  CHECK_THROWS_AS(build_report({}, cfg), PreconditionError);
}
