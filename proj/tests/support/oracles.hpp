#pragma once

// Test-only reference implementations, kept independent of the library
// paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "hafed/client.hpp"
#include "hafed/matrix.hpp"
#include "hafed/param_map.hpp"

namespace oracles {

// plain triple-loop product, used against the library matmul paths
inline hafed::Matrix naive_matmul(const hafed::Matrix& a,
                                  const hafed::Matrix& b) {
  hafed::Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// central finite differences over every coordinate of every layer;
// returns the worst relative error (guarded for tiny magnitudes)
inline double fd_max_rel_err(
    const std::function<double(const hafed::ParamMap&)>& loss,
    hafed::ParamMap params, const hafed::ParamMap& analytic, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    auto v = params.values(l);
    const auto g = analytic.values(l);
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double orig = v[j];
      v[j] = orig + h;
      const double up = loss(params);
      v[j] = orig - h;
      const double down = loss(params);
      v[j] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double diff = std::abs(fd - g[j]);
      const double scale = std::max({std::abs(fd), std::abs(g[j]), 1e-4});
      worst = std::max(worst, diff / scale);
    }
  }
  return worst;
}

// textbook two-pass mean / population variance over stored samples
struct MeanVar {
  std::vector<double> mean, var;
};

inline MeanVar two_pass_stats(const std::vector<std::vector<double>>& rows) {
  MeanVar mv;
  const std::size_t n = rows.size();
  const std::size_t dim = rows[0].size();
  mv.mean.assign(dim, 0.0);
  mv.var.assign(dim, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < dim; ++j) mv.mean[j] += r[j];
  for (auto& m : mv.mean) m /= static_cast<double>(n);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = r[j] - mv.mean[j];
      mv.var[j] += d * d;
    }
  for (auto& v : mv.var) v /= static_cast<double>(n);
  return mv;
}

// 1-D least squares through the origin: argmin ||x*theta - y||^2
inline double least_squares_1d(const std::vector<double>& x,
                               const std::vector<double>& y) {
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
  }
  return sxy / sxx;
}

// normal-equation least squares for y ~ X*beta + intercept, returning the
// residual sum of squares; gaussian elimination with partial pivoting
inline double linear_probe_rss(const std::vector<std::vector<double>>& feats,
                               const std::vector<double>& y) {
  const std::size_t n = feats.size();
  const std::size_t d = feats[0].size() + 1;  // + intercept
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d, 1.0);
    for (std::size_t j = 0; j + 1 < d; ++j) row[j] = feats[i][j];
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) a[p][q] += row[p] * row[q];
      a[p][d] += row[p] * y[i];
    }
  }
  for (std::size_t p = 0; p < d; ++p) a[p][p] += 1e-10;  // ridge jitter
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col || a[col][col] == 0.0) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t q = col; q <= d; ++q) a[r][q] -= f * a[col][q];
    }
  }
  std::vector<double> beta(d, 0.0);
  for (std::size_t p = 0; p < d; ++p)
    if (a[p][p] != 0.0) beta[p] = a[p][d] / a[p][p];
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pred = beta[d - 1];
    for (std::size_t j = 0; j + 1 < d; ++j) pred += beta[j] * feats[i][j];
    rss += (y[i] - pred) * (y[i] - pred);
  }
  return rss;
}

// brute-force one-tailed Wilcoxon p over all 2^n sign patterns
inline double wilcoxon_bruteforce(const std::vector<double>& ranks,
                                  double w_obs) {
  const std::size_t n = ranks.size();
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t(1) << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t(1) << i)) w += ranks[i];
    if (w >= w_obs) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(std::size_t(1) << n);
}

// single scalar parameter, data (x_i, y_i), mean squared loss; the 1-D
// linear regression client used by the posterior tests
class LinearObjective final : public hafed::SgdObjective {
 public:
  LinearObjective(std::vector<double> x, std::vector<double> y)
      : x_(std::move(x)), y_(std::move(y)) {}

  static hafed::ParamMap make_params(double theta) {
    hafed::ParamMap p;
    p.add_layer({"w", hafed::Partition::decoder, -1, {1}}, {theta});
    return p;
  }

  std::size_t size() const override { return x_.size(); }

  double batch_loss(const hafed::ParamMap& params,
                    std::span<const std::size_t> batch) const override {
    const double theta = params.at("w")[0];
    double acc = 0.0;
    for (const std::size_t i : batch) {
      const double e = theta * x_[i] - y_[i];
      acc += e * e;
    }
    return acc / static_cast<double>(batch.size());
  }

  double batch_loss_grad(const hafed::ParamMap& params,
                         std::span<const std::size_t> batch,
                         hafed::ParamMap& grad) const override {
    const double theta = params.at("w")[0];
    double acc = 0.0, g = 0.0;
    for (const std::size_t i : batch) {
      const double e = theta * x_[i] - y_[i];
      acc += e * e;
      g += 2.0 * e * x_[i];
    }
    grad.at("w")[0] = g / static_cast<double>(batch.size());
    return acc / static_cast<double>(batch.size());
  }

  const std::vector<double>& xs() const { return x_; }
  const std::vector<double>& ys() const { return y_; }

 private:
  std::vector<double> x_, y_;
};

}  // namespace oracles
