#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hafed/arch.hpp"
#include "hafed/param_map.hpp"
#include "hafed/sample.hpp"

namespace hafed {

// Regression-as-sentiment metrics. acc2/f1 are absent when no nonzero
// labels exist; corr is absent when either side has zero variance.
struct MetricsRecord {
  double acc7 = 0.0;
  std::optional<double> acc2;
  std::optional<double> f1;
  double mae = 0.0;
  std::optional<double> corr;
  std::size_t n = 0;
};

MetricsRecord compute_metrics(std::span<const double> predictions,
                              std::span<const double> labels);

enum class Alternative { greater, less };

// One-tailed Wilcoxon signed-rank p-value for H1: a > b (or a < b).
// Zero differences dropped, ties get average ranks; exact distribution up
// to 20 effective pairs, normal approximation with continuity correction
// beyond that.
double wilcoxon_signed_rank(std::span<const double> a,
                            std::span<const double> b,
                            Alternative alt = Alternative::greater);

// Mean pairwise distance between per-modality centroid embeddings of a
// fixed probe batch; the cross-encoder latent-gap diagnostic.
double shrinkage_diagnostic(const ParamMap& params, const ArchSpec& arch,
                            std::span<const AlignedSample> probe);

std::vector<double> predict_global(const ParamMap& params,
                                   const ArchSpec& arch,
                                   std::span<const AlignedSample> samples);

MetricsRecord evaluate_global(const ParamMap& params, const ArchSpec& arch,
                              std::span<const AlignedSample> samples);

struct SweepRow {
  double xi = 0.0;
  std::uint64_t seed = 0;
  MetricsRecord metrics;
};

std::vector<SweepRow> missing_rate_sweep(const ParamMap& params,
                                         const ArchSpec& arch,
                                         std::span<const AlignedSample> test,
                                         std::span<const double> xis,
                                         std::span<const std::uint64_t> seeds);

}  // namespace hafed
