#include "hafed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hafed/data.hpp"
#include "hafed/nn.hpp"

namespace hafed {

MetricsRecord compute_metrics(std::span<const double> predictions,
                              std::span<const double> labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw std::invalid_argument("compute_metrics: need equal nonempty inputs");
  const std::size_t n = predictions.size();
  MetricsRecord rec;
  rec.n = n;

  std::size_t acc7_hits = 0;
  double abs_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label_bin(predictions[i]) == label_bin(labels[i])) ++acc7_hits;
    abs_err += std::abs(predictions[i] - labels[i]);
  }
  rec.acc7 = static_cast<double>(acc7_hits) / static_cast<double>(n);
  rec.mae = abs_err / static_cast<double>(n);

  // binary metrics over y != 0; prediction sign: > 0 means positive
  std::size_t nz = 0, agree = 0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 0.0) continue;
    ++nz;
    const bool pos_true = labels[i] > 0.0;
    const bool pos_pred = predictions[i] > 0.0;
    if (pos_true == pos_pred) ++agree;
    if (pos_true && pos_pred) ++tp;
    if (!pos_true && pos_pred) ++fp;
    if (pos_true && !pos_pred) ++fn;
    if (!pos_true && !pos_pred) ++tn;
  }
  if (nz > 0) {
    rec.acc2 = static_cast<double>(agree) / static_cast<double>(nz);
    auto f1_of = [](double tp_, double fp_, double fn_) {
      const double denom = 2.0 * tp_ + fp_ + fn_;
      return denom > 0.0 ? 2.0 * tp_ / denom : 0.0;
    };
    const double f1_pos = f1_of(tp, fp, fn);
    const double f1_neg = f1_of(tn, fn, fp);  // negative class: swap roles
    const double support_pos = static_cast<double>(tp + fn);
    const double support_neg = static_cast<double>(tn + fp);
    rec.f1 = (f1_pos * support_pos + f1_neg * support_neg) /
             (support_pos + support_neg);
  }

  double mean_p = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_p += predictions[i];
    mean_y += labels[i];
  }
  mean_p /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double spp = 0.0, syy = 0.0, spy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = predictions[i] - mean_p;
    const double dy = labels[i] - mean_y;
    spp += dp * dp;
    syy += dy * dy;
    spy += dp * dy;
  }
  if (spp > 0.0 && syy > 0.0) rec.corr = spy / std::sqrt(spp * syy);
  return rec;
}

double wilcoxon_signed_rank(std::span<const double> a,
                            std::span<const double> b, Alternative alt) {
  if (a.size() != b.size())
    throw std::invalid_argument("wilcoxon: length mismatch");
  if (a.size() < 6) throw std::invalid_argument("wilcoxon: need >= 6 pairs");

  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = alt == Alternative::greater ? a[i] - b[i] : b[i] - a[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty())
    throw std::invalid_argument("wilcoxon: all differences zero");
  const std::size_t n = diffs.size();

  // average ranks of |d|; doubled so ties (.5) stay integral
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(diffs[x]) < std::abs(diffs[y]);
  });
  std::vector<long long> rank2(n, 0);
  std::vector<std::size_t> tie_sizes;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    const long long avg2 = static_cast<long long>(i + 1 + j);  // 2*avg rank
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = avg2;
    if (j - i > 1) tie_sizes.push_back(j - i);
    i = j;
  }

  long long w2 = 0;  // 2 * (sum of positive ranks)
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0.0) w2 += rank2[i];
  }

  if (n <= 20) {
    // exact permutation distribution over the 2^n sign patterns
    const long long max2 = static_cast<long long>(n) * (n + 1);
    std::vector<double> ways(max2 + 1, 0.0);
    ways[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long long s = max2; s >= rank2[i]; --s) {
        ways[s] += ways[s - rank2[i]];
      }
    }
    double tail = 0.0;
    for (long long s = w2; s <= max2; ++s) tail += ways[s];
    return tail / std::pow(2.0, static_cast<double>(n));
  }

  const double dn = static_cast<double>(n);
  const double mean = dn * (dn + 1.0) / 4.0;
  double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0;
  for (const std::size_t t : tie_sizes) {
    const double td = static_cast<double>(t);
    var -= (td * td * td - td) / 48.0;
  }
  const double w = static_cast<double>(w2) / 2.0;
  const double z = (w - mean - 0.5) / std::sqrt(var);
  const double p = 0.5 * std::erfc(z / std::sqrt(2.0));
  return std::min(1.0, std::max(p, 1e-300));
}

double shrinkage_diagnostic(const ParamMap& params, const ArchSpec& arch,
                            std::span<const AlignedSample> probe) {
  const std::size_t M = arch.modalities;
  std::vector<std::vector<double>> centroids;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> centroid(arch.d_model, 0.0);
    std::size_t count = 0;
    for (const auto& s : probe) {
      if (!s.views[m].has_value()) continue;
      const auto pooled =
          nn::encode_pooled(*s.views[m], params, static_cast<int>(m), arch);
      for (std::size_t d = 0; d < centroid.size(); ++d)
        centroid[d] += pooled[d];
      ++count;
    }
    if (count == 0) continue;
    for (auto& v : centroid) v /= static_cast<double>(count);
    centroids.push_back(std::move(centroid));
  }
  if (centroids.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < centroids.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < centroids[i].size(); ++d) {
        const double diff = centroids[i][d] - centroids[j][d];
        d2 += diff * diff;
      }
      total += std::sqrt(d2);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

std::vector<double> predict_global(const ParamMap& params,
                                   const ArchSpec& arch,
                                   std::span<const AlignedSample> samples) {
  std::vector<double> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples)
    preds.push_back(nn::forward_global(s, params, arch));
  return preds;
}

MetricsRecord evaluate_global(const ParamMap& params, const ArchSpec& arch,
                              std::span<const AlignedSample> samples) {
  const auto preds = predict_global(params, arch, samples);
  std::vector<double> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return compute_metrics(preds, labels);
}

std::vector<SweepRow> missing_rate_sweep(const ParamMap& params,
                                         const ArchSpec& arch,
                                         std::span<const AlignedSample> test,
                                         std::span<const double> xis,
                                         std::span<const std::uint64_t> seeds) {
  std::vector<SweepRow> rows;
  const std::vector<AlignedSample> base(test.begin(), test.end());
  for (const double xi : xis) {
    for (const std::uint64_t seed : seeds) {
      const auto masked = mask_modalities(base, xi, seed);
      SweepRow row;
      row.xi = xi;
      row.seed = seed;
      row.metrics = evaluate_global(params, arch, masked);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace hafed
