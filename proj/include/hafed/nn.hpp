#pragma once

#include <span>
#include <string>
#include <vector>

#include "hafed/arch.hpp"
#include "hafed/matrix.hpp"
#include "hafed/param_map.hpp"
#include "hafed/sample.hpp"

namespace hafed::nn {

// Raised when a forward/backward pass produces non-finite values.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LossKind { squared, l1 };

// ---- layer primitives -------------------------------------------------
// Forward functions take the owning ParamMap plus the layer id prefix and
// optionally record what backward needs. Backward functions accumulate
// into `grad` (same layout as params) and return the input gradient.

// pointwise linear map per timestep, d_m -> d_model
Matrix stem_forward(const Matrix& x, const ParamMap& params, int modality,
                    const ArchSpec& spec);
Matrix stem_backward(const Matrix& x, const Matrix& dout,
                     const ParamMap& params, int modality,
                     const ArchSpec& spec, ParamMap& grad);

// fixed sinusoidal table, one row per position
Matrix positional_encoding(std::size_t t, std::size_t d_model);
Matrix add_positional_encoding(const Matrix& x);

struct EncoderLayerCache {
  Matrix x_in;
  Matrix q, k, v;                 // T x D
  std::vector<Matrix> attn;       // per head, T x T softmax rows
  Matrix ctx;                     // concatenated head outputs, T x D
  Matrix pre_ln;                  // x + attention output
  Matrix xhat;                    // normalized rows
  std::vector<double> rstd;       // per row
};

struct EncoderStackCache {
  std::vector<EncoderLayerCache> layers;
};

Matrix encoder_stack_forward(const Matrix& x, const ParamMap& params,
                             int modality, const ArchSpec& spec,
                             EncoderStackCache* cache = nullptr);
Matrix encoder_stack_backward(const Matrix& dout,
                              const EncoderStackCache& cache,
                              const ParamMap& params, int modality,
                              const ArchSpec& spec, ParamMap& grad);

// arithmetic mean over present embeddings; divisor = number present
Matrix fuse_embeddings(const std::vector<Matrix>& embeddings,
                       const std::vector<bool>& present);

struct DecoderCache {
  Matrix x;                        // fused input
  std::vector<std::vector<double>> gi, gf, gg, go;  // gate activations per t
  std::vector<std::vector<double>> c, h, tanh_c;
  std::vector<std::vector<double>> fc_in;   // input to each dense layer
  std::vector<std::vector<double>> fc_pre;  // preactivations
  std::vector<bool> fc_residual;            // skip applied at this layer
  std::vector<double> last;                 // input to the output head
};

double decoder_forward(const Matrix& fused, const ParamMap& params,
                       const ArchSpec& spec, DecoderCache* cache = nullptr);
Matrix decoder_backward(double dpred, const DecoderCache& cache,
                        const ParamMap& params, const ArchSpec& spec,
                        ParamMap& grad);

// ---- model assembly ---------------------------------------------------
// client(m): own stem once, then every stack, fuse, decode.
// global: each present view through its own stem + stack only.

double forward_client(const SeqSample& s, const ParamMap& params,
                      const ArchSpec& spec);
double forward_global(const AlignedSample& s, const ParamMap& params,
                      const ArchSpec& spec);

// loss of one sample plus parameter gradients (accumulated into grad);
// returns the loss value
double loss_grad_client(const SeqSample& s, const ParamMap& params,
                        const ArchSpec& spec, LossKind loss, ParamMap& grad);
double loss_grad_global(const AlignedSample& s, const ParamMap& params,
                        const ArchSpec& spec, LossKind loss, ParamMap& grad);

double loss_value(double pred, double label, LossKind loss);

// mean-pooled encoder output for one modality view; the shrinkage probe
std::vector<double> encode_pooled(const Matrix& x, const ParamMap& params,
                                  int modality, const ArchSpec& spec);

}  // namespace hafed::nn
