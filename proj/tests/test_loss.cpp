#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "chansr/gradcheck.hpp"
#include "chansr/loss.hpp"
#include "chansr/ops.hpp"

using namespace chansr;
namespace op = chansr::ops;

namespace {

Tensor map4(std::vector<double> v) {
  return Tensor::from_data({1, 1, 2, 2}, std::move(v));
}

struct RandomMaps {
  std::vector<float> pred, gt;
  std::vector<uint8_t> valid;
};

RandomMaps random_maps(std::mt19937_64& rng, size_t n) {
  std::uniform_real_distribution<float> dist(-50.f, 50.f);
  std::bernoulli_distribution keep(0.8);
  RandomMaps m;
  m.pred.resize(n);
  m.gt.resize(n);
  m.valid.resize(n);
  bool any = false;
  for (size_t i = 0; i < n; ++i) {
    m.pred[i] = dist(rng);
    m.gt[i] = dist(rng);
    m.valid[i] = keep(rng);
    any = any || m.valid[i];
  }
  if (!any) m.valid[0] = 1;
  return m;
}

}  // namespace

TEST_CASE("l1 examples from the arithmetic table") {
  Tensor gt = map4({0, 0, 0, 0});
  Tensor mask = Tensor::full({1, 1, 2, 2}, 1.0);
  CHECK(op::masked_l1(gt, gt, mask).item() == 0.0);
  CHECK(op::masked_l1(map4({1, 1, 1, 1}), gt, mask).item() == 1.0);
  CHECK(op::masked_l1(map4({-1, 1, 3, 5}), gt, mask).item() == 2.5);
}

TEST_CASE("stde examples and equality with rmse") {
  Tensor gt = map4({0, 0, 0, 0});
  Tensor mask = Tensor::full({1, 1, 2, 2}, 1.0);
  CHECK(op::masked_stde(gt, gt, mask).item() == 0.0);
  CHECK(op::masked_stde(map4({2, 2, 2, 2}), gt, mask).item() ==
        doctest::Approx(2.0).epsilon(1e-15));
  CHECK(op::masked_stde(map4({1, -1, 3, -5}), gt, mask).item() ==
        doctest::Approx(3.0).epsilon(1e-15));

  // stde is numerically rmse: no mean subtraction
  std::mt19937_64 rng(8);
  RandomMaps m = random_maps(rng, 64);
  Metrics met = regression_metrics(m.pred, m.gt, m.valid);
  CHECK(met.stde == met.rmse);
}

TEST_CASE("cross entropy examples") {
  Tensor mask = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor label1 = Tensor::from_data({1, 1, 1, 1}, {1});
  // overwhelming margin on the true class
  Tensor sure = Tensor::from_data({1, 2, 1, 1}, {-200.0, 200.0});
  CHECK(op::masked_ce(sure, label1, mask).item() ==
        doctest::Approx(0.0).epsilon(1e-12));
  // uniform logits
  Tensor uniform = Tensor::from_data({1, 2, 1, 1}, {0.7, 0.7});
  CHECK(op::masked_ce(uniform, label1, mask).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // stays finite and correct under extreme magnitudes (max subtraction)
  Tensor extreme = Tensor::from_data({1, 2, 1, 1}, {1000.0, 997.0});
  CHECK(op::masked_ce(extreme, label1, mask).item() ==
        doctest::Approx(3.0 + std::log1p(std::exp(-3.0))).epsilon(1e-9));
}

TEST_CASE("metric definitions on the signed example") {
  std::vector<float> pred = {1, -1};
  std::vector<float> gt = {0, 0};
  std::vector<uint8_t> valid = {1, 1};
  Metrics m = regression_metrics(pred, gt, valid);
  CHECK(m.mae == 1.0);
  CHECK(m.ame == 0.0);
  CHECK(m.rmse == 1.0);

  std::vector<uint8_t> pl = {1, 0, 1, 1};
  std::vector<float> gl = {1, 1, 1, 1};
  std::vector<uint8_t> v4 = {1, 1, 1, 1};
  CHECK(classification_accuracy(pl, gl, v4) == 0.75);
}

TEST_CASE("metrics match a scalar-loop oracle on random maps") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    RandomMaps m = random_maps(rng, 100);
    Metrics got = regression_metrics(m.pred, m.gt, m.valid);
    double se = 0, sa = 0, sq = 0;
    int64_t n = 0;
    for (size_t i = 0; i < m.pred.size(); ++i) {
      if (!m.valid[i]) continue;
      const double e = static_cast<double>(m.pred[i]) - m.gt[i];
      se += e;
      sa += std::abs(e);
      sq += e * e;
      ++n;
    }
    CHECK(std::abs(got.ame - std::abs(se / n)) < 1e-12);
    CHECK(std::abs(got.mae - sa / n) < 1e-12);
    CHECK(std::abs(got.rmse - std::sqrt(sq / n)) < 1e-12);
    CHECK(got.stde == got.rmse);
    // ordering property
    CHECK(got.ame <= got.mae + 1e-12);
    CHECK(got.mae <= got.rmse + 1e-12);
  }
}

TEST_CASE("ordering holds on a thousand random masked maps") {
  std::mt19937_64 rng(321);
  for (int trial = 0; trial < 1000; ++trial) {
    RandomMaps m = random_maps(rng, 36);
    Metrics got = regression_metrics(m.pred, m.gt, m.valid);
    CHECK(got.ame <= got.mae + 1e-12);
    CHECK(got.mae <= got.rmse + 1e-12);
  }
}

TEST_CASE("masked-out pixels never influence losses or metrics") {
  std::mt19937_64 rng(55);
  RandomMaps m = random_maps(rng, 64);
  Metrics base = regression_metrics(m.pred, m.gt, m.valid);
  RandomMaps poked = m;
  for (size_t i = 0; i < poked.pred.size(); ++i)
    if (!poked.valid[i]) {
      poked.pred[i] = 1e6f;
      poked.gt[i] = -1e6f;
    }
  Metrics after = regression_metrics(poked.pred, poked.gt, poked.valid);
  CHECK(base.ame == after.ame);
  CHECK(base.mae == after.mae);
  CHECK(base.rmse == after.rmse);

  // same for the differentiable losses
  std::vector<double> pv(16), gv(16), mv(16);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (size_t i = 0; i < 16; ++i) {
    pv[i] = dist(rng);
    gv[i] = dist(rng);
    mv[i] = i % 3 == 0 ? 0.0 : 1.0;
  }
  auto t = [&](std::vector<double> v) {
    return Tensor::from_data({1, 1, 4, 4}, std::move(v));
  };
  const double l1 = op::masked_l1(t(pv), t(gv), t(mv)).item();
  const double st = op::masked_stde(t(pv), t(gv), t(mv)).item();
  auto pv2 = pv;
  auto gv2 = gv;
  for (size_t i = 0; i < 16; ++i)
    if (mv[i] == 0.0) {
      pv2[i] = 99.0;
      gv2[i] = -99.0;
    }
  CHECK(op::masked_l1(t(pv2), t(gv2), t(mv)).item() == l1);
  CHECK(op::masked_stde(t(pv2), t(gv2), t(mv)).item() == st);
}

TEST_CASE("composite loss recomposes from its parts") {
  ModelConfig cfg;
  cfg.width = 8;
  cfg.init_seed = 3;
  Model model = build_model(cfg);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-0.1, 1.0);
  std::vector<double> in(7 * 4 * 4);
  for (auto& v : in) v = dist(rng);
  Prediction pred = forward(model, Tensor::from_data({1, 7, 4, 4}, in));

  const int hs = 8;
  TargetBatch gt;
  std::bernoulli_distribution keep(0.85);
  auto rand_map = [&](bool labels) {
    std::vector<double> v(static_cast<size_t>(hs) * hs);
    for (auto& x : v) x = labels ? (dist(rng) > 0.5 ? 1.0 : 0.0) : dist(rng);
    return Tensor::from_data({1, 1, hs, hs}, std::move(v));
  };
  auto rand_mask = [&] {
    std::vector<double> v(static_cast<size_t>(hs) * hs);
    bool any = false;
    for (auto& x : v) {
      x = keep(rng) ? 1.0 : 0.0;
      any = any || x > 0;
    }
    if (!any) v[0] = 1.0;
    return Tensor::from_data({1, 1, hs, hs}, std::move(v));
  };
  for (int k = 0; k < 5; ++k) {
    gt.regression[k] = rand_map(false);
    gt.masks[k] = rand_mask();
  }
  gt.los_labels = rand_map(true);
  gt.los_mask = rand_mask();

  LossWeights w;
  w.regression = {1.0, 0.5, 2.0, 1.0, 0.25};
  w.ce_weight = 0.75;
  w.stde_weight = 0.1;

  const double composite = composite_loss(pred, gt, w).item();
  double by_hand = 0.0;
  const Characteristic regs[5] = {Characteristic::PL, Characteristic::RP,
                                  Characteristic::DS, Characteristic::PHI,
                                  Characteristic::THETA};
  for (int k = 0; k < 5; ++k) {
    by_hand += w.regression[k] * op::masked_l1(pred.regression(regs[k]),
                                               gt.regression[k], gt.masks[k])
                                     .item();
    by_hand += w.stde_weight * op::masked_stde(pred.regression(regs[k]),
                                               gt.regression[k], gt.masks[k])
                                   .item();
  }
  by_hand +=
      w.ce_weight *
      op::masked_ce(pred.los_logits, gt.los_labels, gt.los_mask).item();
  CHECK(std::abs(composite - by_hand) < 1e-12);

  // perfect prediction zeroes the composite
  TargetBatch perfect = gt;
  for (int k = 0; k < 5; ++k)
    perfect.regression[k] = pred.regression(regs[k]).detach();
  std::vector<double> labels(static_cast<size_t>(hs) * hs);
  for (int i = 0; i < hs * hs; ++i)
    labels[i] =
        pred.los_logits.data()[hs * hs + i] > pred.los_logits.data()[i] ? 1.0
                                                                        : 0.0;
  perfect.los_labels = Tensor::from_data({1, 1, hs, hs}, labels);
  LossWeights no_ce = w;
  no_ce.ce_weight = 0.0;  // logits express confidence, not certainty
  CHECK(composite_loss(pred, perfect, no_ce).item() ==
        doctest::Approx(0.0).epsilon(1e-12));

  // lambda = 0, ce = 0, single target reduces to that target's l1
  LossWeights only_pl;
  only_pl.regression = {1.0, 0.0, 0.0, 0.0, 0.0};
  only_pl.ce_weight = 0.0;
  only_pl.stde_weight = 0.0;
  CHECK(composite_loss(pred, gt, only_pl).item() ==
        doctest::Approx(op::masked_l1(pred.pl, gt.regression[0], gt.masks[0])
                            .item())
            .epsilon(1e-12));
}

TEST_CASE("loss weights address targets by characteristic") {
  LossWeights w;
  w.weight(Characteristic::DS) = 3.0;
  CHECK(w.regression[2] == 3.0);
  CHECK(w.weight(Characteristic::PL) == 1.0);
  CHECK_THROWS_AS(w.weight(Characteristic::LOS), std::invalid_argument);
}

TEST_CASE("accumulator equals one-shot metrics over concatenated frames") {
  std::mt19937_64 rng(9);
  ErrorAccumulator acc;
  std::vector<float> all_pred, all_gt;
  std::vector<uint8_t> all_valid;
  for (int frame = 0; frame < 4; ++frame) {
    RandomMaps m = random_maps(rng, 25);
    for (size_t i = 0; i < m.pred.size(); ++i)
      if (m.valid[i]) acc.add(m.pred[i], m.gt[i]);
    all_pred.insert(all_pred.end(), m.pred.begin(), m.pred.end());
    all_gt.insert(all_gt.end(), m.gt.begin(), m.gt.end());
    all_valid.insert(all_valid.end(), m.valid.begin(), m.valid.end());
  }
  Metrics a = acc.metrics();
  Metrics b = regression_metrics(all_pred, all_gt, all_valid);
  CHECK(a.ame == doctest::Approx(b.ame).epsilon(1e-12));
  CHECK(a.mae == doctest::Approx(b.mae).epsilon(1e-12));
  CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-12));
}

TEST_CASE("report csv layout") {
  EvalReport r;
  r.scale = 4;
  EvalRow row;
  row.target = Characteristic::PL;
  row.metrics = {0.5, 1.0, 2.0, 2.0};
  r.rows.push_back(row);
  EvalRow los;
  los.target = Characteristic::LOS;
  los.is_classification = true;
  los.accuracy = 0.9;
  r.rows.push_back(los);
  const std::string csv = r.to_csv();
  CHECK(csv.find("target,AME,MAE,RMSE,STDE,accuracy,scale") == 0);
  CHECK(csv.find("PL,") != std::string::npos);
  CHECK(csv.find("LOS,,,,,0.9,4") != std::string::npos);
  CHECK(r.row(Characteristic::LOS).accuracy == 0.9);
}

TEST_CASE("ce gradient matches finite differences") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(-2, 2);
  std::vector<double> lv(2 * 9), labels(9), mask(9, 1.0);
  for (auto& v : lv) v = dist(rng);
  for (auto& v : labels) v = dist(rng) > 0 ? 1.0 : 0.0;
  mask[4] = 0.0;
  Tensor logits = Tensor::from_data({1, 2, 3, 3}, lv, true);
  Tensor lab = Tensor::from_data({1, 1, 3, 3}, labels);
  Tensor m = Tensor::from_data({1, 1, 3, 3}, mask);
  auto f = [&] { return op::masked_ce(logits, lab, m); };
  CHECK(gradient_check(f, {logits}) < 1e-4);
}
