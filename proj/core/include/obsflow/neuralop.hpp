#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "obsflow/mat.hpp"
#include "obsflow/tensor.hpp"

namespace obsflow::nop {

// A function sampled on a 1-d grid. The grid lives in normalized coordinates
// (time windows are affinely mapped to [0,1] before they reach a model), and
// the quadrature weights discretize integration over that domain, so for a
// normalized window they sum to 1.
struct GridFunction {
  std::vector<double> grid;
  ad::Tensor values;                // [N x channels]
  std::vector<double> quadrature;   // positive, one weight per grid point

  long points() const { return static_cast<long>(values.rows()); }
  long channels() const { return static_cast<long>(values.cols()); }
  void validate() const;  // sizes agree, grid strictly increasing, weights > 0
};

// n points spanning [0,1]; n == 1 degenerates to the single point {0}.
std::vector<double> uniform_grid(std::size_t n);

// Trapezoid weights for an arbitrary strictly increasing grid; they sum to the
// grid's span. A single-point grid gets weight 1 so that expectations over it
// are well defined.
std::vector<double> trapezoid_weights(const std::vector<double>& grid);

struct AttentionParams {
  ad::Tensor Q;   // [d_K x d_v]
  ad::Tensor K;   // [d_K x d_u]
  ad::Tensor V;   // [d_V x d_u]
  int heads = 1;  // d_K and d_V split evenly across heads

  void validate(long d_v, long d_u) const;
};

// Discrete attention density over u's grid for the query point v.grid[x_index]:
// pi_i proportional to w_i * exp(<Q v(x), K u(y_i)>), max-shifted, normalized to
// sum to 1. Multihead splitting does not enter here; the density is defined on
// the full d_K inner product.
std::vector<double> attention_density(const GridFunction& v, const GridFunction& u,
                                      const AttentionParams& params, std::size_t x_index);

// out(x) = sum_i pi_i(x) V u(y_i), the quadrature form of E_{y~pi}[V u(y)],
// evaluated per head and concatenated. Output lives on v's grid with d_V
// channels. Differentiable through Q, K, V and both value fields.
GridFunction cross_attention(const GridFunction& v, const GridFunction& u,
                             const AttentionParams& params);

enum class Activation { Gelu, Tanh };
ad::Tensor activate(const ad::Tensor& x, Activation a);

struct LayerNormParams {
  ad::Tensor gamma;  // [1 x c]
  ad::Tensor beta;   // [1 x c]
};

struct MlpParams {
  ad::Tensor W1;  // [hidden x c]
  ad::Tensor b1;  // [1 x hidden]
  ad::Tensor W2;  // [c x hidden]
  ad::Tensor b2;  // [1 x c]
};

// Multihead attention with an output mixing map applied to the concatenated
// head outputs.
struct AttentionBlock {
  AttentionParams attn;
  ad::Tensor WO;  // [c x c]
};

struct EncoderLayerParams {
  AttentionBlock attn;
  LayerNormParams ln1;
  MlpParams mlp;
  LayerNormParams ln2;
};

// u <- LN(u + SelfAttn(u)); u <- LN(u + MLP(u)). Post-norm residual blocks;
// `use_layernorm = false` replaces both LN applications with the identity and
// exists for tests only.
GridFunction encoder_layer(const GridFunction& u, const EncoderLayerParams& params,
                           Activation act, bool use_layernorm = true);

struct DecoderParams {
  ad::Tensor S_in;  // [c x 1], lifts the query-time coordinate
  AttentionBlock self_attn;
  LayerNormParams ln1;
  AttentionBlock cross_attn;
  LayerNormParams ln2;
  MlpParams mlp;
  LayerNormParams ln3;
};

// Query-side decoder: lift the normalized query times by S_in, then residual
// self-attention, residual cross-attention against the encoded input, and a
// residual MLP, each followed by layer normalization. The three linear maps
// that a general formulation would interleave are fixed to the identity.
GridFunction decoder_block(const std::vector<double>& query_grid,
                           const std::vector<double>& query_quadrature,
                           const GridFunction& u_enc, const DecoderParams& params,
                           Activation act, bool use_layernorm = true);

enum class Arch { SelfAttnStack, EncoderDecoder };

struct ModelConfig {
  Arch arch = Arch::SelfAttnStack;
  int layers = 1;
  int channels = 1;
  int heads = 1;
  int mlp_hidden = 1;
  Activation activation = Activation::Gelu;
  int d_in = 1;
  int d_out = 1;
  long input_len = 2;   // grid points the model expects as input
  long output_len = 2;  // grid points it produces
  bool use_layernorm = true;

  // Per-channel affine standardization baked into the model: inputs are mapped
  // to (x - in_shift) / in_scale before lifting, outputs leave the network as
  // y * out_scale + out_shift. Empty vectors mean identity.
  std::vector<double> in_shift, in_scale;
  std::vector<double> out_shift, out_scale;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

class Model {
 public:
  // Fresh parameters drawn from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) in a
  // fixed order, so a (config, seed) pair pins every weight.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Registration order is fixed and names are stable; optimizers and
  // checkpoints key off this list.
  std::vector<std::pair<std::string, ad::Tensor*>> parameters();
  std::vector<std::pair<std::string, Mat>> named_values() const;
  void set_parameters(const std::vector<std::pair<std::string, Mat>>& named);

  // Same-grid path (smoothing, or forecasting when input and output windows
  // share a discretization): project . encoder^L . lift.
  GridFunction forward(const GridFunction& input) const;

  // Query-grid path: encoder stack, then the cross-attention decoder evaluated
  // at arbitrary query points. For a SelfAttnStack model this degenerates to
  // the same-grid path and requires a query grid of matching length.
  GridFunction forward(const GridFunction& input, const std::vector<double>& query_grid,
                       const std::vector<double>& query_quadrature) const;

 private:
  ModelConfig cfg_;
  ad::Tensor lift_W_;  // [c x (d_in + 1)], last input column is the grid
  std::vector<EncoderLayerParams> enc_;
  std::optional<DecoderParams> dec_;
  ad::Tensor proj_W_;  // [d_out x c]

  GridFunction encode(const GridFunction& input) const;
  ad::Tensor finish(const ad::Tensor& latent) const;
};

struct RolloutResult {
  Mat values;                 // [completed_blocks * (output_len - 1)] x d rows
  std::vector<double> times;  // matching absolute times, uniform spacing
  long completed_blocks = 0;
  bool diverged = false;      // a block produced a non-finite value and was dropped
};

// Autoregressive composition of a forecasting model. `history` holds the
// trailing input window in original units with uniform spacing `dt` ending at
// `t_end`; each block predicts the next window and is spliced with its first
// point (the junction shared with the history) dropped.
RolloutResult rollout(const Model& model, const Mat& history, double t_end, double dt,
                      long blocks);

}  // namespace obsflow::nop
