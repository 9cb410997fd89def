#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lcaunet/supervision.hpp"
#include "oracles.hpp"

using namespace lcaunet;
namespace t = lcaunet::test;

namespace {

Array<double> rand_prob(Rng& rng, Shape s, double lo = 0.02, double hi = 0.98) {
  return t::randu(rng, std::move(s), lo, hi);
}

Array<double> rand_binary(Rng& rng, Shape s) {
  Array<double> a(std::move(s));
  std::bernoulli_distribution d(0.4);
  for (auto& v : a.data) v = d(rng) ? 1.0 : 0.0;
  return a;
}

// Literal per-pixel reimplementations, no shared code with the library.
double bce_ref(const Array<double>& y, const Array<double>& g) {
  double s = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    const double yc = std::clamp(y[i], kProbEps, 1.0 - kProbEps);
    s += -((1.0 - g[i]) * std::log(1.0 - yc) + g[i] * std::log(yc));
  }
  return s / static_cast<double>(y.size());
}

double dice_ref(const Array<double>& y, const Array<double>& g, double eps) {
  double num = 0, den = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    num += y[i] * g[i];
    den += y[i] + g[i];
  }
  return 1.0 - (2.0 * num + eps) / (den + eps);
}

double edge_ref(const std::vector<Array<double>>& maps, const Array<double>& g,
                const EdgeLossParams& p) {
  std::int64_t n_neg = 0, n_pos = 0;
  for (double gv : g.data) {
    if (gv == 0.0) ++n_neg;
    else if (gv >= p.eta) ++n_pos;
  }
  const double beta = p.beta_override >= 0.0
                          ? p.beta_override
                          : (n_neg + n_pos > 0
                                 ? double(n_neg) / double(n_neg + n_pos)
                                 : 0.5);
  const double alpha = p.lambda * (1.0 - beta);
  double total = 0;
  for (const auto& m : maps) {
    double s = 0;
    for (std::int64_t i = 0; i < m.size(); ++i) {
      const double y = std::clamp(m[i], kProbEps, 1.0 - kProbEps);
      if (g[i] == 0.0) s += alpha * -std::log(1.0 - y);
      else if (g[i] >= p.eta) s += beta * -std::log(y);
    }
    total += p.sum_mode ? s : s / static_cast<double>(m.size());
  }
  return total;
}

struct RefCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

RefCounts count_ref(const Array<double>& pred, const Array<double>& gt) {
  RefCounts c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1.0 && gt[i] == 1.0) ++c.tp;
    else if (pred[i] == 1.0) ++c.fp;
    else if (gt[i] == 1.0) ++c.fn;
    else ++c.tn;
  }
  return c;
}

}  // namespace

TEST_CASE("bce matches the scalar oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<std::int64_t> dim(4, 16);
    Shape s{dim(rng), dim(rng)};
    auto y = rand_prob(rng, s, 0.001, 0.999);
    auto g = rand_binary(rng, s);
    auto got = bce_loss(ag::Var<double>::constant(y), ag::Var<double>::constant(g));
    CHECK(got.item() == doctest::Approx(bce_ref(y, g)).epsilon(1e-12));
  }
  // Perfect confident prediction -> loss only from the clamp epsilon.
  Array<double> g(Shape{3, 3}, 1.0);
  auto loss = bce_loss(ag::Var<double>::constant(g), ag::Var<double>::constant(g));
  CHECK(loss.item() == doctest::Approx(-std::log(1.0 - kProbEps)).epsilon(1e-9));
}

TEST_CASE("dice matches the scalar oracle") {
  Rng rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<std::int64_t> dim(4, 16);
    Shape s{dim(rng), dim(rng)};
    auto y = rand_prob(rng, s);
    auto g = rand_binary(rng, s);
    auto got = dice_loss(ag::Var<double>::constant(y), ag::Var<double>::constant(g));
    CHECK(got.item() == doctest::Approx(dice_ref(y, g, 1.0)).epsilon(1e-12));
  }
  // Exact match of a half-ones mask: overlap = |g|, loss -> ~0.
  Array<double> g(Shape{4, 4}, 0.0);
  for (int i = 0; i < 8; ++i) g[i] = 1.0;
  auto self = dice_loss(ag::Var<double>::constant(g), ag::Var<double>::constant(g));
  CHECK(self.item() == doctest::Approx(1.0 - 17.0 / 17.0).epsilon(1e-12));
}

TEST_CASE("edge loss matches the scalar oracle across eta buckets") {
  Rng rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    Shape s{1, 1, 6, 6};
    // Ground truth mixes exact zeros, ignored soft values, and strong edges.
    Array<double> g(s);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : g.data) {
      const double r = u(rng);
      v = r < 0.4 ? 0.0 : (r < 0.6 ? 0.15 : 0.31 + 0.69 * u(rng));
    }
    std::vector<Array<double>> maps;
    std::vector<ag::Var<double>> vars;
    for (int m = 0; m < 4; ++m) {
      maps.push_back(rand_prob(rng, s));
      vars.push_back(ag::Var<double>::constant(maps.back()));
    }
    EdgeLossParams p;
    auto got = edge_loss(vars, ag::Var<double>::constant(g), p);
    CHECK(got.item() == doctest::Approx(edge_ref(maps, g, p)).epsilon(1e-12));

    p.sum_mode = true;
    auto got_sum = edge_loss(vars, ag::Var<double>::constant(g), p);
    CHECK(got_sum.item() == doctest::Approx(edge_ref(maps, g, p)).epsilon(1e-12));

    p.sum_mode = false;
    p.beta_override = 0.75;
    auto got_beta = edge_loss(vars, ag::Var<double>::constant(g), p);
    CHECK(got_beta.item() == doctest::Approx(edge_ref(maps, g, p)).epsilon(1e-12));
  }
}

TEST_CASE("edge loss ignores the soft band and weights classes by balance") {
  // 2 zero pixels, 1 ignored (0.2), 1 strong (0.9): beta = 2/3, alpha = 1.1/3.
  Array<double> g(Shape{4}, 0.0);
  g[2] = 0.2;
  g[3] = 0.9;
  Array<double> y(Shape{4}, 0.5);
  auto loss = edge_loss(std::vector<ag::Var<double>>{ag::Var<double>::constant(y)},
                        ag::Var<double>::constant(g));
  const double beta = 2.0 / 3.0, alpha = 1.1 * (1.0 - beta);
  const double expect = (2.0 * alpha * -std::log(0.5) + beta * -std::log(0.5)) / 4.0;
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));

  // Sensitivity: perturbing the ignored pixel's prediction changes nothing.
  Array<double> y2 = y;
  y2[2] = 0.9;
  auto loss2 = edge_loss(std::vector<ag::Var<double>>{ag::Var<double>::constant(y2)},
                         ag::Var<double>::constant(g));
  CHECK(loss2.item() == doctest::Approx(loss.item()).epsilon(1e-15));
}

TEST_CASE("total loss composes the three terms with the configured weights") {
  Rng rng(14);
  Shape s{2, 1, 8, 8};
  auto logits = t::randu(rng, s, -2.0, 2.0);
  auto mask = rand_binary(rng, s);
  Array<double> eg(s);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : eg.data) v = u(rng) < 0.5 ? 0.0 : 1.0;
  std::vector<ag::Var<double>> maps;
  std::vector<Array<double>> raw_maps;
  for (int m = 0; m < 4; ++m) {
    raw_maps.push_back(rand_prob(rng, s));
    maps.push_back(ag::Var<double>::constant(raw_maps.back()));
  }

  BodyLossWeights w;
  auto rep = total_loss(ag::Var<double>::constant(logits), maps,
                        ag::Var<double>::constant(mask),
                        ag::Var<double>::constant(eg), w);
  Array<double> prob(s);
  for (std::int64_t i = 0; i < logits.size(); ++i)
    prob[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  const double want_bce = bce_ref(prob, mask);
  const double want_dice = dice_ref(prob, mask, w.dice_eps);
  const double want_edge = edge_ref(raw_maps, eg, w.edge);
  CHECK(rep.bce == doctest::Approx(want_bce).epsilon(1e-12));
  CHECK(rep.dice == doctest::Approx(want_dice).epsilon(1e-12));
  CHECK(rep.edge == doctest::Approx(want_edge).epsilon(1e-12));
  CHECK(rep.total.item() ==
        doctest::Approx(0.6 * want_bce + 0.4 * want_dice + 0.2 * want_edge)
            .epsilon(1e-12));

  // gamma = 0 must skip edge supervision entirely.
  w.gamma = 0.0;
  auto rep0 = total_loss(ag::Var<double>::constant(logits), maps,
                         ag::Var<double>::constant(mask),
                         ag::Var<double>::constant(eg), w);
  CHECK(rep0.edge == 0.0);
  CHECK(rep0.total.item() ==
        doctest::Approx(0.6 * want_bce + 0.4 * want_dice).epsilon(1e-12));
}

TEST_CASE("loss gradients pass finite differences") {
  Rng rng(15);
  Shape s{1, 1, 5, 5};
  auto gt = rand_binary(rng, s);
  auto eg = rand_binary(rng, s);

  auto prob = ag::Var<double>::param(rand_prob(rng, s, 0.05, 0.95));
  CHECK(t::grad_check([&] { return bce_loss(prob, ag::Var<double>::constant(gt)); },
                      {prob}) < 1e-7);
  CHECK(t::grad_check(
            [&] { return dice_loss(prob, ag::Var<double>::constant(gt)); },
            {prob}) < 1e-7);

  std::vector<ag::Var<double>> maps{ag::Var<double>::param(rand_prob(rng, s, 0.05, 0.95)),
                                    ag::Var<double>::param(rand_prob(rng, s, 0.05, 0.95))};
  CHECK(t::grad_check(
            [&] { return edge_loss(maps, ag::Var<double>::constant(eg)); },
            maps) < 1e-7);

  auto logits = ag::Var<double>::param(t::randu(rng, s, -1.5, 1.5));
  CHECK(t::grad_check(
            [&] {
              return total_loss(logits, maps, ag::Var<double>::constant(gt),
                                ag::Var<double>::constant(eg))
                  .total;
            },
            {logits, maps[0], maps[1]}) < 1e-7);
}

TEST_CASE("probability and mask domains are enforced") {
  Array<double> bad(Shape{2, 2}, 0.5);
  bad[0] = 1.5;
  Array<double> ok(Shape{2, 2}, 0.5);
  Array<double> mask(Shape{2, 2}, 1.0);
  CHECK_THROWS_AS(bce_loss(ag::Var<double>::constant(bad),
                           ag::Var<double>::constant(mask)),
                  DomainError);
  Array<double> soft(Shape{2, 2}, 0.25);
  CHECK_THROWS_AS(bce_loss(ag::Var<double>::constant(ok),
                           ag::Var<double>::constant(soft)),
                  DomainError);
  CHECK_THROWS_AS(dice_loss(ag::Var<double>::constant(ok),
                            ag::Var<double>::constant(soft)),
                  DomainError);
  Array<double> neg_gt(Shape{2, 2}, -0.1);
  CHECK_THROWS_AS(
      edge_loss(std::vector<ag::Var<double>>{ag::Var<double>::constant(ok)},
                ag::Var<double>::constant(neg_gt)),
      DomainError);
}

TEST_CASE("confusion worked example: tp=2 fp=1 fn=1 tn=0") {
  Array<double> pred(Shape{4});
  Array<double> gt(Shape{4});
  pred[0] = 1; gt[0] = 1;  // tp
  pred[1] = 1; gt[1] = 1;  // tp
  pred[2] = 1; gt[2] = 0;  // fp
  pred[3] = 0; gt[3] = 1;  // fn
  const ConfusionCounts c = confusion(pred, gt);
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 0);
  const Metrics m = metrics_from_counts(c);
  CHECK(m.dice == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.iou == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.se == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.sp == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(m.acc == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("metrics match brute-force counting on random instances") {
  Rng rng(16);
  for (int rep = 0; rep < 30; ++rep) {
    std::uniform_int_distribution<std::int64_t> dim(4, 16);
    Shape s{dim(rng), dim(rng)};
    auto prob = rand_prob(rng, s, 0.0, 1.0);
    auto gt = rand_binary(rng, s);
    auto pred = binarize(prob);
    const RefCounts r = count_ref(pred, gt);
    const ConfusionCounts c = confusion(pred, gt);
    CHECK(c.tp == r.tp);
    CHECK(c.tn == r.tn);
    CHECK(c.fp == r.fp);
    CHECK(c.fn == r.fn);
    const Metrics m = metrics_from_counts(c);
    auto safe = [](double num, double den, std::int64_t err) {
      return den == 0.0 ? (err == 0 ? 1.0 : 0.0) : num / den;
    };
    CHECK(m.acc == doctest::Approx(safe(double(r.tp + r.tn), double(r.tp + r.tn + r.fp + r.fn), r.fp + r.fn)).epsilon(1e-12));
    CHECK(m.dice == doctest::Approx(safe(2.0 * r.tp, double(2 * r.tp + r.fp + r.fn), r.fp + r.fn)).epsilon(1e-12));
    CHECK(m.iou == doctest::Approx(safe(double(r.tp), double(r.tp + r.fp + r.fn), r.fp + r.fn)).epsilon(1e-12));
    CHECK(m.se == doctest::Approx(safe(double(r.tp), double(r.tp + r.fn), r.fn)).epsilon(1e-12));
    CHECK(m.sp == doctest::Approx(safe(double(r.tn), double(r.tn + r.fp), r.fp)).epsilon(1e-12));
  }
}

TEST_CASE("binarize thresholds at one half inclusive") {
  Array<double> p(Shape{4});
  p[0] = 0.4999;
  p[1] = 0.5;
  p[2] = 0.5001;
  p[3] = 0.0;
  auto b = binarize(p);
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 1.0);
  CHECK(b[2] == 1.0);
  CHECK(b[3] == 0.0);
}

TEST_CASE("zero-denominator metric conventions") {
  // Empty GT, empty prediction: nothing to get wrong.
  Array<double> zero(Shape{4}, 0.0);
  const Metrics clean = metrics_from_counts(confusion(zero, zero));
  CHECK(clean.dice == 1.0);
  CHECK(clean.iou == 1.0);
  CHECK(clean.se == 1.0);
  CHECK(clean.sp == 1.0);
  CHECK(clean.acc == 1.0);
  // Empty GT but positive prediction: sensitivity has no positives to find
  // (den 0, fn 0 -> 1), specificity is violated.
  Array<double> ones(Shape{4}, 1.0);
  const Metrics wrong = metrics_from_counts(confusion(ones, zero));
  CHECK(wrong.se == 1.0);
  CHECK(wrong.sp == 0.0);
  CHECK(wrong.dice == 0.0);
}

TEST_CASE("metric reports round-trip through CSV and JSONL") {
  namespace fs = std::filesystem;
  std::vector<ImageMetrics> rows{{"img_a", {0.9, 0.8, 0.7, 0.85, 0.95}},
                                 {"img_b", {0.5, 0.4, 0.3, 0.45, 0.55}}};
  const Metrics agg = aggregate_metrics(rows);
  CHECK(agg.dice == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(agg.acc == doctest::Approx(0.7).epsilon(1e-12));

  const auto dir = fs::temp_directory_path() / "lcaunet_sup_test";
  fs::create_directories(dir);
  const std::string csv = (dir / "m.csv").string();
  const std::string jsonl = (dir / "m.jsonl").string();
  write_metrics_csv(csv, rows);
  write_metrics_jsonl(jsonl, rows);

  std::ifstream cf(csv);
  std::string line;
  std::getline(cf, line);
  CHECK(line == "image_id,acc,dice,iou,se,sp");
  int n = 0;
  std::string last;
  while (std::getline(cf, line)) {
    last = line;
    ++n;
  }
  CHECK(n == 3);  // two images + aggregate
  CHECK(last.substr(0, 10) == "aggregate,");

  std::ifstream jf(jsonl);
  n = 0;
  while (std::getline(jf, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("image_id"));
    if (j["image_id"] == "img_b") CHECK(j["dice"] == doctest::Approx(0.4));
    if (j["image_id"] == "aggregate") CHECK(j["dice"] == doctest::Approx(0.6));
    ++n;
  }
  CHECK(n == 3);
  fs::remove_all(dir);
}
