#include "hafed/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace hafed::nn {

namespace {

constexpr double kLnEps = 1e-5;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = x * W^T + b  with W stored (out x in)
Matrix linear(const Matrix& x, std::span<const double> w,
              std::span<const double> b, std::size_t out_dim,
              std::size_t in_dim) {
  if (x.cols != in_dim) throw std::invalid_argument("linear: dim mismatch");
  Matrix y(x.rows, out_dim);
  for (std::size_t t = 0; t < x.rows; ++t) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = b.empty() ? 0.0 : b[o];
      const double* wrow = w.data() + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) s += wrow[i] * x(t, i);
      y(t, o) = s;
    }
  }
  return y;
}

// accumulates dW/db and returns dx
Matrix linear_backward(const Matrix& x, const Matrix& dout,
                       std::span<const double> w, std::span<double> dw,
                       std::span<double> db, std::size_t out_dim,
                       std::size_t in_dim) {
  Matrix dx(x.rows, in_dim);
  for (std::size_t t = 0; t < x.rows; ++t) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double g = dout(t, o);
      if (!db.empty()) db[o] += g;
      double* dwrow = dw.data() + o * in_dim;
      const double* wrow = w.data() + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) {
        dwrow[i] += g * x(t, i);
        dx(t, i) += g * wrow[i];
      }
    }
  }
  return dx;
}

std::string stem_id(const ArchSpec& spec, int m, const char* part) {
  return "stem." + spec.modality_label(m) + "." + part;
}

std::string stack_id(const ArchSpec& spec, int m, std::size_t layer,
                     const char* part) {
  return "stack." + spec.modality_label(m) + "." + std::to_string(layer) +
         "." + part;
}

}  // namespace

Matrix stem_forward(const Matrix& x, const ParamMap& params, int modality,
                    const ArchSpec& spec) {
  if (x.cols != spec.input_dims[modality])
    throw std::invalid_argument("stem_forward: input dim mismatch for " +
                                spec.modality_label(modality));
  return linear(x, params.at(stem_id(spec, modality, "w")),
                params.at(stem_id(spec, modality, "b")), spec.d_model,
                spec.input_dims[modality]);
}

Matrix stem_backward(const Matrix& x, const Matrix& dout,
                     const ParamMap& params, int modality,
                     const ArchSpec& spec, ParamMap& grad) {
  return linear_backward(x, dout, params.at(stem_id(spec, modality, "w")),
                         grad.at(stem_id(spec, modality, "w")),
                         grad.at(stem_id(spec, modality, "b")), spec.d_model,
                         spec.input_dims[modality]);
}

Matrix positional_encoding(std::size_t t, std::size_t d_model) {
  Matrix pe(t, d_model);
  for (std::size_t pos = 0; pos < t; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double rate =
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = std::sin(static_cast<double>(pos) / rate);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(static_cast<double>(pos) / rate);
    }
  }
  return pe;
}

Matrix add_positional_encoding(const Matrix& x) {
  Matrix y = x;
  const Matrix pe = positional_encoding(x.rows, x.cols);
  add_inplace(y, pe);
  return y;
}

namespace {

// one post-LN self-attention block: y = LN(x + MHSA(x))
Matrix encoder_layer_forward(const Matrix& x, const ParamMap& params,
                             int modality, std::size_t layer,
                             const ArchSpec& spec, EncoderLayerCache* cache) {
  const std::size_t D = spec.d_model;
  const std::size_t H = spec.heads;
  const std::size_t dh = D / H;
  auto id = [&](const char* p) { return stack_id(spec, modality, layer, p); };

  Matrix q = linear(x, params.at(id("attn.wq")), params.at(id("attn.bq")), D, D);
  Matrix k = linear(x, params.at(id("attn.wk")), params.at(id("attn.bk")), D, D);
  Matrix v = linear(x, params.at(id("attn.wv")), params.at(id("attn.bv")), D, D);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix ctx(x.rows, D);
  std::vector<Matrix> attn(H);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = h * dh;
    Matrix a(x.rows, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
      double row_max = -1e300;
      for (std::size_t j = 0; j < x.rows; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += q(i, off + d) * k(j, off + d);
        s *= inv_sqrt_dh;
        a(i, j) = s;
        row_max = std::max(row_max, s);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < x.rows; ++j) {
        a(i, j) = std::exp(a(i, j) - row_max);
        denom += a(i, j);
      }
      for (std::size_t j = 0; j < x.rows; ++j) a(i, j) /= denom;
    }
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t d = 0; d < dh; ++d) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.rows; ++j) s += a(i, j) * v(j, off + d);
        ctx(i, off + d) = s;
      }
    }
    attn[h] = std::move(a);
  }

  Matrix out = linear(ctx, params.at(id("attn.wo")), params.at(id("attn.bo")), D, D);
  Matrix pre_ln = x;
  add_inplace(pre_ln, out);

  const auto gamma = params.at(id("ln.g"));
  const auto beta = params.at(id("ln.b"));
  Matrix xhat(x.rows, D);
  Matrix y(x.rows, D);
  std::vector<double> rstd(x.rows);
  for (std::size_t t = 0; t < x.rows; ++t) {
    double mean = 0.0;
    for (std::size_t d = 0; d < D; ++d) mean += pre_ln(t, d);
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double c = pre_ln(t, d) - mean;
      var += c * c;
    }
    var /= static_cast<double>(D);
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[t] = r;
    for (std::size_t d = 0; d < D; ++d) {
      xhat(t, d) = (pre_ln(t, d) - mean) * r;
      y(t, d) = gamma[d] * xhat(t, d) + beta[d];
    }
  }

  if (cache) {
    cache->x_in = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->ctx = std::move(ctx);
    cache->pre_ln = std::move(pre_ln);
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix encoder_layer_backward(const Matrix& dy, const EncoderLayerCache& c,
                              const ParamMap& params, int modality,
                              std::size_t layer, const ArchSpec& spec,
                              ParamMap& grad) {
  const std::size_t D = spec.d_model;
  const std::size_t H = spec.heads;
  const std::size_t dh = D / H;
  const std::size_t T = c.x_in.rows;
  auto id = [&](const char* p) { return stack_id(spec, modality, layer, p); };

  const auto gamma = params.at(id("ln.g"));
  auto dgamma = grad.at(id("ln.g"));
  auto dbeta = grad.at(id("ln.b"));

  // layernorm backward, row-wise
  Matrix dpre(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double dxh = dy(t, d) * gamma[d];
      dgamma[d] += dy(t, d) * c.xhat(t, d);
      dbeta[d] += dy(t, d);
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * c.xhat(t, d);
    }
    mean_dxhat /= static_cast<double>(D);
    mean_dxhat_xhat /= static_cast<double>(D);
    for (std::size_t d = 0; d < D; ++d) {
      const double dxh = dy(t, d) * gamma[d];
      dpre(t, d) =
          c.rstd[t] * (dxh - mean_dxhat - c.xhat(t, d) * mean_dxhat_xhat);
    }
  }

  // residual split: dpre flows to both x and the attention output
  Matrix dctx = linear_backward(c.ctx, dpre, params.at(id("attn.wo")),
                                grad.at(id("attn.wo")), grad.at(id("attn.bo")),
                                D, D);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq(T, D), dk(T, D), dv(T, D);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = h * dh;
    const Matrix& a = c.attn[h];
    // dA = dctx_h * V_h^T ; dV_h = A^T * dctx_h
    Matrix da(T, T);
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d)
          s += dctx(i, off + d) * c.v(j, off + d);
        da(i, j) = s;
      }
    }
    for (std::size_t j = 0; j < T; ++j) {
      for (std::size_t d = 0; d < dh; ++d) {
        double s = 0.0;
        for (std::size_t i = 0; i < T; ++i) s += a(i, j) * dctx(i, off + d);
        dv(j, off + d) = s;
      }
    }
    // softmax rows: dS = A o (dA - rowsum(dA o A))
    for (std::size_t i = 0; i < T; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < T; ++j) dot += da(i, j) * a(i, j);
      for (std::size_t j = 0; j < T; ++j)
        da(i, j) = a(i, j) * (da(i, j) - dot);
    }
    // scores = (Q_h K_h^T) / sqrt(dh)
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t d = 0; d < dh; ++d) {
        double sq = 0.0;
        for (std::size_t j = 0; j < T; ++j) sq += da(i, j) * c.k(j, off + d);
        dq(i, off + d) = sq * inv_sqrt_dh;
      }
    }
    for (std::size_t j = 0; j < T; ++j) {
      for (std::size_t d = 0; d < dh; ++d) {
        double sk = 0.0;
        for (std::size_t i = 0; i < T; ++i) sk += da(i, j) * c.q(i, off + d);
        dk(j, off + d) = sk * inv_sqrt_dh;
      }
    }
  }

  Matrix dx = dpre;  // residual path
  add_inplace(dx, linear_backward(c.x_in, dq, params.at(id("attn.wq")),
                                  grad.at(id("attn.wq")),
                                  grad.at(id("attn.bq")), D, D));
  add_inplace(dx, linear_backward(c.x_in, dk, params.at(id("attn.wk")),
                                  grad.at(id("attn.wk")),
                                  grad.at(id("attn.bk")), D, D));
  add_inplace(dx, linear_backward(c.x_in, dv, params.at(id("attn.wv")),
                                  grad.at(id("attn.wv")),
                                  grad.at(id("attn.bv")), D, D));
  return dx;
}

}  // namespace

Matrix encoder_stack_forward(const Matrix& x, const ParamMap& params,
                             int modality, const ArchSpec& spec,
                             EncoderStackCache* cache) {
  Matrix cur = x;
  if (cache) cache->layers.resize(spec.encoder_layers);
  for (std::size_t l = 0; l < spec.encoder_layers; ++l) {
    cur = encoder_layer_forward(cur, params, modality, l, spec,
                                cache ? &cache->layers[l] : nullptr);
  }
  for (const double v : cur.data)
    if (!std::isfinite(v))
      throw DivergenceError("encoder stack produced non-finite activation");
  return cur;
}

Matrix encoder_stack_backward(const Matrix& dout,
                              const EncoderStackCache& cache,
                              const ParamMap& params, int modality,
                              const ArchSpec& spec, ParamMap& grad) {
  Matrix d = dout;
  for (std::size_t l = spec.encoder_layers; l-- > 0;) {
    d = encoder_layer_backward(d, cache.layers[l], params, modality, l, spec,
                               grad);
  }
  return d;
}

Matrix fuse_embeddings(const std::vector<Matrix>& embeddings,
                       const std::vector<bool>& present) {
  std::size_t n = 0;
  const Matrix* first = nullptr;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (!present[i]) continue;
    if (!first) first = &embeddings[i];
    if (!embeddings[i].same_shape(*first))
      throw std::invalid_argument("fuse_embeddings: shape mismatch");
    ++n;
  }
  if (n == 0) throw std::invalid_argument("fuse_embeddings: empty mask");
  Matrix out(first->rows, first->cols);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (!present[i]) continue;
    add_inplace(out, embeddings[i]);
  }
  scale_inplace(out, 1.0 / static_cast<double>(n));
  return out;
}

double decoder_forward(const Matrix& fused, const ParamMap& params,
                       const ArchSpec& spec, DecoderCache* cache) {
  const std::size_t D = spec.d_model;
  const std::size_t H = spec.lstm_hidden;
  if (fused.cols != D)
    throw std::invalid_argument("decoder_forward: input width mismatch");
  const auto wx = params.at("dec.lstm.wx");
  const auto wh = params.at("dec.lstm.wh");
  const auto b = params.at("dec.lstm.b");

  const std::size_t T = fused.rows;
  std::vector<double> h(H, 0.0), c(H, 0.0);
  DecoderCache local;
  DecoderCache& cc = cache ? *cache : local;
  cc.gi.assign(T, {});
  cc.gf.assign(T, {});
  cc.gg.assign(T, {});
  cc.go.assign(T, {});
  cc.c.assign(T, {});
  cc.h.assign(T, {});
  cc.tanh_c.assign(T, {});

  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> z(4 * H);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      double s = b[r];
      const double* wxr = wx.data() + r * D;
      for (std::size_t d = 0; d < D; ++d) s += wxr[d] * fused(t, d);
      const double* whr = wh.data() + r * H;
      for (std::size_t j = 0; j < H; ++j) s += whr[j] * h[j];
      z[r] = s;
    }
    std::vector<double> gi(H), gf(H), gg(H), go(H), tc(H);
    for (std::size_t j = 0; j < H; ++j) {
      gi[j] = sigmoid(z[j]);
      gf[j] = sigmoid(z[H + j]);
      gg[j] = std::tanh(z[2 * H + j]);
      go[j] = sigmoid(z[3 * H + j]);
      c[j] = gf[j] * c[j] + gi[j] * gg[j];
      tc[j] = std::tanh(c[j]);
      h[j] = go[j] * tc[j];
    }
    cc.gi[t] = std::move(gi);
    cc.gf[t] = std::move(gf);
    cc.gg[t] = std::move(gg);
    cc.go[t] = std::move(go);
    cc.c[t] = c;
    cc.h[t] = h;
    cc.tanh_c[t] = std::move(tc);
  }

  // dense chain with residual skips where widths match
  std::vector<double> cur = h;
  cc.fc_in.clear();
  cc.fc_pre.clear();
  cc.fc_residual.clear();
  for (std::size_t i = 0; i < spec.decoder_widths.size(); ++i) {
    const std::string pre_id = "dec.fc." + std::to_string(i) + ".";
    const auto w = params.at(pre_id + "w");
    const auto bb = params.at(pre_id + "b");
    const std::size_t out_dim = spec.decoder_widths[i];
    const std::size_t in_dim = cur.size();
    std::vector<double> pre(out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = bb[o];
      const double* wr = w.data() + o * in_dim;
      for (std::size_t j = 0; j < in_dim; ++j) s += wr[j] * cur[j];
      pre[o] = s;
    }
    const bool residual = out_dim == in_dim;
    std::vector<double> out(out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
      out[o] = pre[o] > 0.0 ? pre[o] : 0.0;
      if (residual) out[o] += cur[o];
    }
    cc.fc_in.push_back(std::move(cur));
    cc.fc_pre.push_back(std::move(pre));
    cc.fc_residual.push_back(residual);
    cur = std::move(out);
  }
  cc.last = cur;

  const auto wout = params.at("dec.out.w");
  double pred = params.at("dec.out.b")[0];
  for (std::size_t j = 0; j < cur.size(); ++j) pred += wout[j] * cur[j];
  if (!std::isfinite(pred))
    throw DivergenceError("decoder produced non-finite prediction");
  if (cache) cache->x = fused;
  return pred;
}

Matrix decoder_backward(double dpred, const DecoderCache& cache,
                        const ParamMap& params, const ArchSpec& spec,
                        ParamMap& grad) {
  const std::size_t D = spec.d_model;
  const std::size_t H = spec.lstm_hidden;
  const std::size_t T = cache.x.rows;

  const auto wout = params.at("dec.out.w");
  auto dwout = grad.at("dec.out.w");
  grad.at("dec.out.b")[0] += dpred;
  std::vector<double> dcur(cache.last.size());
  for (std::size_t j = 0; j < cache.last.size(); ++j) {
    dwout[j] += dpred * cache.last[j];
    dcur[j] = dpred * wout[j];
  }

  for (std::size_t i = spec.decoder_widths.size(); i-- > 0;) {
    const std::string pre_id = "dec.fc." + std::to_string(i) + ".";
    const auto w = params.at(pre_id + "w");
    auto dw = grad.at(pre_id + "w");
    auto db = grad.at(pre_id + "b");
    const auto& in = cache.fc_in[i];
    const auto& pre = cache.fc_pre[i];
    const std::size_t out_dim = pre.size();
    const std::size_t in_dim = in.size();
    std::vector<double> din(in_dim, 0.0);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double dp = pre[o] > 0.0 ? dcur[o] : 0.0;
      db[o] += dp;
      double* dwr = dw.data() + o * in_dim;
      const double* wr = w.data() + o * in_dim;
      for (std::size_t j = 0; j < in_dim; ++j) {
        dwr[j] += dp * in[j];
        din[j] += dp * wr[j];
      }
    }
    if (cache.fc_residual[i]) {
      for (std::size_t j = 0; j < in_dim; ++j) din[j] += dcur[j];
    }
    dcur = std::move(din);
  }

  // BPTT; only the final hidden state feeds the dense chain
  const auto wx = params.at("dec.lstm.wx");
  const auto wh = params.at("dec.lstm.wh");
  auto dwx = grad.at("dec.lstm.wx");
  auto dwh = grad.at("dec.lstm.wh");
  auto db = grad.at("dec.lstm.b");

  Matrix dx(T, D);
  std::vector<double> dh = dcur;
  std::vector<double> dc(H, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    const auto& gi = cache.gi[t];
    const auto& gf = cache.gf[t];
    const auto& gg = cache.gg[t];
    const auto& go = cache.go[t];
    const auto& tc = cache.tanh_c[t];
    std::vector<double> dz(4 * H);
    for (std::size_t j = 0; j < H; ++j) {
      const double do_ = dh[j] * tc[j];
      const double dct = dc[j] + dh[j] * go[j] * (1.0 - tc[j] * tc[j]);
      const double cprev = t > 0 ? cache.c[t - 1][j] : 0.0;
      const double di = dct * gg[j];
      const double df = dct * cprev;
      const double dg = dct * gi[j];
      dc[j] = dct * gf[j];
      dz[j] = di * gi[j] * (1.0 - gi[j]);
      dz[H + j] = df * gf[j] * (1.0 - gf[j]);
      dz[2 * H + j] = dg * (1.0 - gg[j] * gg[j]);
      dz[3 * H + j] = do_ * go[j] * (1.0 - go[j]);
    }
    const std::vector<double> hprev =
        t > 0 ? cache.h[t - 1] : std::vector<double>(H, 0.0);
    std::vector<double> dh_next(H, 0.0);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double g = dz[r];
      db[r] += g;
      double* dwxr = dwx.data() + r * D;
      const double* wxr = wx.data() + r * D;
      for (std::size_t d = 0; d < D; ++d) {
        dwxr[d] += g * cache.x(t, d);
        dx(t, d) += g * wxr[d];
      }
      double* dwhr = dwh.data() + r * H;
      const double* whr = wh.data() + r * H;
      for (std::size_t j = 0; j < H; ++j) {
        dwhr[j] += g * hprev[j];
        dh_next[j] += g * whr[j];
      }
    }
    dh = std::move(dh_next);
  }
  return dx;
}

namespace {

struct ClientCache {
  Matrix stemmed_pe;
  std::vector<EncoderStackCache> stacks;
  DecoderCache dec;
};

double forward_client_impl(const SeqSample& s, const ParamMap& params,
                           const ArchSpec& spec, ClientCache* cache) {
  const std::size_t M = spec.modalities;
  const Matrix stemmed = stem_forward(s.x, params, s.modality, spec);
  const Matrix pe = add_positional_encoding(stemmed);
  std::vector<Matrix> embs(M);
  std::vector<bool> present(M, true);
  if (cache) cache->stacks.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    embs[m] = encoder_stack_forward(pe, params, static_cast<int>(m), spec,
                                    cache ? &cache->stacks[m] : nullptr);
  }
  const Matrix fused = fuse_embeddings(embs, present);
  if (cache) cache->stemmed_pe = pe;
  return decoder_forward(fused, params, spec, cache ? &cache->dec : nullptr);
}

struct GlobalCache {
  std::vector<Matrix> inputs_pe;  // per present modality
  std::vector<EncoderStackCache> stacks;
  std::vector<int> present_ids;
  DecoderCache dec;
};

double forward_global_impl(const AlignedSample& s, const ParamMap& params,
                           const ArchSpec& spec, GlobalCache* cache) {
  const std::size_t M = spec.modalities;
  if (s.views.size() != M)
    throw std::invalid_argument("aligned sample has wrong modality count");
  std::vector<Matrix> embs;
  std::vector<int> ids;
  std::vector<Matrix> inputs;
  std::vector<EncoderStackCache> stacks;
  for (std::size_t m = 0; m < M; ++m) {
    if (!s.views[m].has_value()) continue;
    Matrix pe = add_positional_encoding(
        stem_forward(*s.views[m], params, static_cast<int>(m), spec));
    EncoderStackCache sc;
    embs.push_back(encoder_stack_forward(pe, params, static_cast<int>(m), spec,
                                         cache ? &sc : nullptr));
    ids.push_back(static_cast<int>(m));
    if (cache) {
      inputs.push_back(std::move(pe));
      stacks.push_back(std::move(sc));
    }
  }
  if (embs.empty())
    throw std::invalid_argument("aligned sample with no present modality");
  // views may differ in length; fusion needs equal shapes, so truncate to
  // the shortest present sequence
  std::size_t t_min = embs[0].rows;
  for (const auto& e : embs) t_min = std::min(t_min, e.rows);
  for (auto& e : embs) {
    if (e.rows != t_min) {
      e.rows = t_min;
      e.data.resize(t_min * e.cols);
    }
  }
  const std::vector<bool> present(embs.size(), true);
  const Matrix fused = fuse_embeddings(embs, present);
  if (cache) {
    cache->inputs_pe = std::move(inputs);
    cache->stacks = std::move(stacks);
    cache->present_ids = std::move(ids);
  }
  return decoder_forward(fused, params, spec, cache ? &cache->dec : nullptr);
}

}  // namespace

double forward_client(const SeqSample& s, const ParamMap& params,
                      const ArchSpec& spec) {
  return forward_client_impl(s, params, spec, nullptr);
}

double forward_global(const AlignedSample& s, const ParamMap& params,
                      const ArchSpec& spec) {
  return forward_global_impl(s, params, spec, nullptr);
}

double loss_value(double pred, double label, LossKind loss) {
  const double e = pred - label;
  return loss == LossKind::squared ? e * e : std::abs(e);
}

namespace {

double loss_dpred(double pred, double label, LossKind loss) {
  const double e = pred - label;
  if (loss == LossKind::squared) return 2.0 * e;
  return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
}

}  // namespace

double loss_grad_client(const SeqSample& s, const ParamMap& params,
                        const ArchSpec& spec, LossKind loss, ParamMap& grad) {
  ClientCache cache;
  const double pred = forward_client_impl(s, params, spec, &cache);
  const double dpred = loss_dpred(pred, s.label, loss);

  Matrix dfused = decoder_backward(dpred, cache.dec, params, spec, grad);
  scale_inplace(dfused, 1.0 / static_cast<double>(spec.modalities));
  Matrix dstem(cache.stemmed_pe.rows, cache.stemmed_pe.cols);
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    add_inplace(dstem, encoder_stack_backward(dfused, cache.stacks[m], params,
                                              static_cast<int>(m), spec, grad));
  }
  // positional encoding is additive: gradient passes through
  stem_backward(s.x, dstem, params, s.modality, spec, grad);
  return loss_value(pred, s.label, loss);
}

double loss_grad_global(const AlignedSample& s, const ParamMap& params,
                        const ArchSpec& spec, LossKind loss, ParamMap& grad) {
  GlobalCache cache;
  const double pred = forward_global_impl(s, params, spec, &cache);
  const double dpred = loss_dpred(pred, s.label, loss);

  Matrix dfused = decoder_backward(dpred, cache.dec, params, spec, grad);
  const double inv_n = 1.0 / static_cast<double>(cache.present_ids.size());
  for (std::size_t i = 0; i < cache.present_ids.size(); ++i) {
    const int m = cache.present_ids[i];
    // pad truncated timesteps back with zero gradient
    Matrix demb(cache.inputs_pe[i].rows, dfused.cols);
    for (std::size_t t = 0; t < dfused.rows; ++t)
      for (std::size_t d = 0; d < dfused.cols; ++d)
        demb(t, d) = dfused(t, d) * inv_n;
    const Matrix dstem = encoder_stack_backward(demb, cache.stacks[i], params,
                                                m, spec, grad);
    stem_backward(*s.views[m], dstem, params, m, spec, grad);
  }
  return loss_value(pred, s.label, loss);
}

std::vector<double> encode_pooled(const Matrix& x, const ParamMap& params,
                                  int modality, const ArchSpec& spec) {
  const Matrix emb = encoder_stack_forward(
      add_positional_encoding(stem_forward(x, params, modality, spec)), params,
      modality, spec);
  std::vector<double> pooled(emb.cols, 0.0);
  for (std::size_t t = 0; t < emb.rows; ++t)
    for (std::size_t d = 0; d < emb.cols; ++d) pooled[d] += emb(t, d);
  for (auto& v : pooled) v /= static_cast<double>(emb.rows);
  return pooled;
}

}  // namespace hafed::nn
