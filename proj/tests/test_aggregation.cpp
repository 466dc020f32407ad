#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hafed/aggregation.hpp"
#include "hafed/rng.hpp"
#include "support/oracles.hpp"

using namespace hafed;

namespace {

// n-coordinate single-layer map for scalar aggregation toys
ParamMap vec_params(std::vector<double> v, Partition part = Partition::decoder,
                    int modality = -1) {
  ParamMap p;
  const std::size_t n = v.size();
  p.add_layer({"w", part, modality, {n}}, std::move(v));
  return p;
}

SampleStats stats_of(std::vector<double> mean, std::vector<double> var,
                     std::size_t dataset_size = 10) {
  SampleStats s;
  s.mean = vec_params(std::move(mean));
  s.variance = vec_params(std::move(var));
  s.dataset_size = dataset_size;
  s.sample_count = 5;
  return s;
}

DeltaReport report_of(std::vector<double> delta) {
  DeltaReport r;
  r.delta = vec_params(std::move(delta));
  return r;
}

}  // namespace

TEST_CASE("pbea server update: zero deltas leave the global unchanged") {
  const ParamMap global = vec_params({1.0, -2.0, 0.5});
  const auto next =
      pbea_server_update(global, {report_of({0, 0, 0}), report_of({0, 0, 0})},
                         0.7);
  CHECK(next == global);
}

TEST_CASE("pbea server update: scalar arithmetic") {
  const ParamMap global = vec_params({2.0});
  const auto next = pbea_server_update(global, {report_of({1.0})}, 0.5);
  CHECK(next.at("w")[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("pbea server update: opposite deltas cancel") {
  const ParamMap global = vec_params({1.0, 2.0});
  const auto next = pbea_server_update(
      global, {report_of({0.3, -0.7}), report_of({-0.3, 0.7})}, 0.9);
  CHECK(next.max_abs_diff(global) == 0.0);
}

TEST_CASE("fixed point: equal precisions give the plain mean") {
  const auto stats = std::vector<SampleStats>{
      stats_of({1.0, 5.0}, {0.3, 0.3}), stats_of({3.0, 1.0}, {0.3, 0.3})};
  const ParamMap mu = pbea_fixed_point(stats, 0.1);
  CHECK(mu.at("w")[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(mu.at("w")[1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("fixed point: precision-weighted scalar example") {
  // precisions 2 and 1: (2*1 + 1*3) / 3 = 5/3
  const auto stats = std::vector<SampleStats>{stats_of({1.0}, {0.4}),
                                              stats_of({3.0}, {0.9})};
  const ParamMap mu = pbea_fixed_point(stats, 0.1);
  CHECK(mu.at("w")[0] == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("fixed point: single client returns its mean") {
  const auto stats = std::vector<SampleStats>{stats_of({1.25, -0.5}, {0.2, 0.4})};
  const ParamMap mu = pbea_fixed_point(stats, 1e-4);
  CHECK(mu.at("w")[0] == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(mu.at("w")[1] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("iterated server updates converge to the closed form") {
  // 3 coordinates, 2 clients, fixed moments; beta at 1/max-precision
  const auto stats = std::vector<SampleStats>{
      stats_of({1.0, -2.0, 0.75}, {0.5, 1.0, 0.25}),
      stats_of({3.0, 2.0, -0.25}, {1.0, 2.0, 0.5})};
  const double floor = 0.5;
  double max_prec = 0.0;
  for (const auto& s : stats)
    for (const double v : s.variance.at("w"))
      max_prec = std::max(max_prec, 1.0 / (v + floor));
  const double beta = 1.0 / max_prec;

  const ParamMap target = pbea_fixed_point(stats, floor);
  ParamMap theta = vec_params({0.0, 0.0, 0.0});
  std::vector<double> errs;
  for (int it = 0; it < 200; ++it) {
    std::vector<DeltaReport> reports;
    for (const auto& s : stats) reports.push_back(compute_delta(theta, s, floor));
    theta = pbea_server_update(theta, reports, beta);
    errs.push_back(theta.max_abs_diff(target));
  }
  CHECK(errs.back() < 1e-6);
  // geometric contraction: error halves at least every 25 iterations early on
  CHECK(errs[50] < errs[0]);
  CHECK(errs[100] < errs[50]);
}

TEST_CASE("equal variances make the fixed point match unweighted fedavg") {
  Rng rng(77);
  std::vector<SampleStats> stats;
  std::vector<const ParamMap*> means;
  std::vector<ParamMap> storage;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> mu(5);
    for (auto& v : mu) v = rng.uniform(-2.0, 2.0);
    stats.push_back(stats_of(mu, std::vector<double>(5, 0.3)));
    storage.push_back(stats.back().mean);
  }
  for (const auto& s : storage) means.push_back(&s);
  const ParamMap fp = pbea_fixed_point(stats, 0.1);
  const ParamMap avg = fedavg_aggregate(means, {1.0, 1.0, 1.0});
  CHECK(fp.max_abs_diff(avg) < 1e-12);
}

TEST_CASE("simplified aggregate weights means by dataset size") {
  // equal sizes
  const auto equal = std::vector<SampleStats>{stats_of({0.0}, {0.1}, 10),
                                              stats_of({2.0}, {0.1}, 10)};
  CHECK(simplified_aggregate(equal).at("w")[0] == doctest::Approx(1.0));

  // single client
  const auto single = std::vector<SampleStats>{stats_of({0.7}, {0.1}, 4)};
  CHECK(simplified_aggregate(single).at("w")[0] == doctest::Approx(0.7));

  // sizes 1 and 3 of means 0 and 4 -> 3
  const auto skew = std::vector<SampleStats>{stats_of({0.0}, {0.1}, 1),
                                             stats_of({4.0}, {0.1}, 3)};
  CHECK(simplified_aggregate(skew).at("w")[0] == doctest::Approx(3.0));
}

TEST_CASE("fedavg basics and scale equivariance") {
  const ParamMap a = vec_params({1.0});
  const ParamMap b = vec_params({3.0});
  CHECK(fedavg_aggregate({&a, &a}, {2.0, 5.0}) == a);
  CHECK(fedavg_aggregate({&a, &b}, {1.0, 1.0}).at("w")[0] == doctest::Approx(2.0));

  const ParamMap zero = vec_params({0.0});
  const ParamMap four = vec_params({4.0});
  CHECK(fedavg_aggregate({&zero, &four}, {0.25, 0.75}).at("w")[0] ==
        doctest::Approx(3.0));

  // fedavg(c * theta) = c * fedavg(theta)
  Rng rng(5);
  ParamMap p1 = vec_params({rng.uniform(), rng.uniform()});
  ParamMap p2 = vec_params({rng.uniform(), rng.uniform()});
  const ParamMap avg = fedavg_aggregate({&p1, &p2}, {0.3, 0.7});
  ParamMap s1 = p1, s2 = p2;
  s1.scale(2.5);
  s2.scale(2.5);
  ParamMap scaled_avg = fedavg_aggregate({&s1, &s2}, {0.3, 0.7});
  ParamMap expect = avg;
  expect.scale(2.5);
  CHECK(scaled_avg.max_abs_diff(expect) < 1e-15);

  CHECK_THROWS_AS(fedavg_aggregate({&a}, {0.0}), std::invalid_argument);
}

TEST_CASE("cmda coefficients normalize over layers") {
  ParamMap q, k;
  q.add_layer({"l0", Partition::decoder, -1, {2}}, {1.0, 1.0});
  q.add_layer({"l1", Partition::decoder, -1, {2}}, {0.5, 0.5});
  k.add_layer({"l0", Partition::decoder, -1, {2}}, {2.0, 0.0});
  k.add_layer({"l1", Partition::decoder, -1, {2}}, {0.5, 1.5});
  const auto psi = cmda_coefficients(q, k, 2.0);
  REQUIRE(psi.size() == 2);
  CHECK(psi[0] + psi[1] == doctest::Approx(1.0).epsilon(1e-12));

  // identical decoders: gamma all zero, softmax uniform
  const auto uniform = cmda_coefficients(q, q, 2.0);
  CHECK(uniform[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(uniform[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cmda softmax on gamma (ln 2, 0) gives (2/3, 1/3)") {
  // single-coordinate layers with |q - k| = ln 2 and 0 under the 1-norm
  ParamMap q, k;
  q.add_layer({"l0", Partition::decoder, -1, {1}}, {std::log(2.0)});
  q.add_layer({"l1", Partition::decoder, -1, {1}}, {0.0});
  k.add_layer({"l0", Partition::decoder, -1, {1}}, {0.0});
  k.add_layer({"l1", Partition::decoder, -1, {1}}, {0.0});
  const auto psi = cmda_coefficients(q, k, 1.0);
  CHECK(psi[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(psi[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("cmda pair update fixed points and midpoint") {
  ParamMap a = vec_params({1.0, 1.0});
  ParamMap b = vec_params({3.0, 1.0});
  // identical inputs stay put
  CHECK(cmda_pair_update(a, a, {1.0}, 0.5) == a);
  // eta = 0 stays put (legal for the op even if policies require > 0)
  CHECK(cmda_pair_update(a, b, {1.0}, 0.0) == a);
  // single layer, psi = 1, eta = 1/2: midpoint on the differing coordinate
  const ParamMap mid = cmda_pair_update(a, b, {1.0}, 0.5);
  CHECK(mid.at("w")[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(mid.at("w")[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cmda non-expansion for eta in (0, 1]") {
  Rng rng(11);
  for (const double eta : {0.1, 0.5, 1.0}) {
    ParamMap q, k;
    std::vector<double> qa(4), ka(4), qb(3), kb(3);
    for (auto& v : qa) v = rng.uniform(-2, 2);
    for (auto& v : ka) v = rng.uniform(-2, 2);
    for (auto& v : qb) v = rng.uniform(-2, 2);
    for (auto& v : kb) v = rng.uniform(-2, 2);
    q.add_layer({"l0", Partition::decoder, -1, {4}}, qa);
    q.add_layer({"l1", Partition::decoder, -1, {3}}, qb);
    k.add_layer({"l0", Partition::decoder, -1, {4}}, ka);
    k.add_layer({"l1", Partition::decoder, -1, {3}}, kb);
    const auto psi = cmda_coefficients(q, k, 2.0);
    const auto upd = cmda_pair_update(q, k, psi, eta);
    for (std::size_t l = 0; l < 2; ++l) {
      double before = 0.0, after = 0.0;
      for (std::size_t j = 0; j < q.values(l).size(); ++j) {
        before = std::max(before, std::abs(q.values(l)[j] - k.values(l)[j]));
        after = std::max(after, std::abs(upd.values(l)[j] - k.values(l)[j]));
      }
      CHECK(after <= before + 1e-15);
    }
  }
}

TEST_CASE("cmda aggregate: identical decoders are a fixed point") {
  const ParamMap d = vec_params({0.4, -0.2});
  const auto out = cmda_aggregate({d, d, d}, 0.5, 2.0);
  CHECK(out.max_abs_diff(d) < 1e-15);
}

TEST_CASE("cmda aggregate with two decoders is the single pair update") {
  const ParamMap a = vec_params({1.0, 0.0});
  const ParamMap b = vec_params({2.0, 2.0});
  const auto psi = cmda_coefficients(a, b, 2.0);
  const auto pair = cmda_pair_update(a, b, psi, 0.3);
  const auto agg = cmda_aggregate({a, b}, 0.3, 2.0);
  CHECK(agg.max_abs_diff(pair) == 0.0);
}

TEST_CASE("cmda aggregate: hand-enumerated three-way example") {
  // single-coordinate decoders 0, 3, 6 with eta=1 and psi=1 per pair:
  // (0,3)->3, (0,6)->6, (3,6)->6, mean = 5
  const auto out =
      cmda_aggregate({vec_params({0.0}), vec_params({3.0}), vec_params({6.0})},
                     1.0, 2.0);
  CHECK(out.at("w")[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK_THROWS_AS(cmda_aggregate({vec_params({0.0})}, 1.0, 2.0),
                  std::invalid_argument);
}

TEST_CASE("concatenation keeps each modality's encoder and the given decoder") {
  const ArchSpec spec = [] {
    ArchSpec a;
    a.modalities = 2;
    a.input_dims = {3, 2};
    a.d_model = 4;
    a.heads = 2;
    a.lstm_hidden = 2;
    a.decoder_widths = {2};
    return a;
  }();
  // tag each aggregate's values with its source modality
  std::vector<ModalityAggregate> aggs(2);
  for (int m = 0; m < 2; ++m) {
    aggs[m].modality = m;
    aggs[m].params = layout_params(spec);
    aggs[m].params.fill(static_cast<double>(m + 1));
  }
  ParamMap dec = layout_params(spec).slice(Partition::decoder);
  dec.fill(9.0);

  const ParamMap global = concatenate_global(aggs, dec);
  CHECK(global.at("stem.L.w")[0] == 1.0);
  CHECK(global.at("stack.L.0.attn.wq")[0] == 1.0);
  CHECK(global.at("stem.A.w")[0] == 2.0);
  CHECK(global.at("stack.A.0.attn.wq")[0] == 2.0);
  CHECK(global.at("dec.lstm.wx")[0] == 9.0);
  CHECK(global.at("dec.out.b")[0] == 9.0);
}

TEST_CASE("concatenation with all-identical aggregates keeps those encoders") {
  const ArchSpec spec = [] {
    ArchSpec a;
    a.modalities = 2;
    a.input_dims = {3, 2};
    a.d_model = 4;
    a.heads = 2;
    a.lstm_hidden = 2;
    a.decoder_widths = {2};
    return a;
  }();
  const ParamMap model = init_params(spec, 8);
  std::vector<ModalityAggregate> aggs(2);
  for (int m = 0; m < 2; ++m) {
    aggs[m].modality = m;
    aggs[m].params = model;
  }
  const ParamMap global =
      concatenate_global(aggs, model.slice(Partition::decoder));
  CHECK(global == model);

  std::vector<ModalityAggregate> missing(1);
  missing[0].modality = 0;
  missing[0].params = model;
  CHECK_THROWS_AS(
      concatenate_global({aggs[0], aggs[0]}, model.slice(Partition::decoder)),
      std::invalid_argument);
}

TEST_CASE("aggregation outputs preserve the full key set") {
  const ArchSpec spec = [] {
    ArchSpec a;
    a.modalities = 2;
    a.input_dims = {3, 2};
    a.d_model = 4;
    a.heads = 2;
    a.lstm_hidden = 2;
    a.decoder_widths = {2};
    return a;
  }();
  const ParamMap a = init_params(spec, 1);
  const ParamMap b = init_params(spec, 2);
  CHECK(fedavg_aggregate({&a, &b}, {1.0, 1.0}).same_layout(a));

  SampleStats s1, s2;
  s1.mean = a;
  s1.variance = a.zeros_like();
  s1.dataset_size = 5;
  s2.mean = b;
  s2.variance = b.zeros_like();
  s2.dataset_size = 5;
  CHECK(pbea_fixed_point({s1, s2}, 1e-4).same_layout(a));
  CHECK(simplified_aggregate({s1, s2}).same_layout(a));

  DeltaReport r1, r2;
  r1.delta = a.zeros_like();
  r2.delta = a.zeros_like();
  CHECK(pbea_server_update(a, {r1, r2}, 0.5).same_layout(a));
}

TEST_CASE("default beta scales inversely with reported precision") {
  // variances 0.9 + floor 0.1 -> precision 1 -> beta 0.5
  const auto stats =
      std::vector<SampleStats>{stats_of({0.0}, {0.9}), stats_of({1.0}, {0.9})};
  CHECK(default_beta(stats, 0.1) == doctest::Approx(0.5).epsilon(1e-12));
  // tiny variances clamp at the lower bound
  const auto sharp = std::vector<SampleStats>{stats_of({0.0}, {0.0})};
  CHECK(default_beta(sharp, 1e-6) == doctest::Approx(1e-3));
  // huge variances clamp at 1
  const auto flat = std::vector<SampleStats>{stats_of({0.0}, {1e9})};
  CHECK(default_beta(flat, 1e-4) == doctest::Approx(1.0));
}
