#include "obsflow/neuralop.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "json_detail.hpp"
#include "obsflow/errors.hpp"
#include "obsflow/rng.hpp"

namespace obsflow::nop {

using ad::Tensor;

void GridFunction::validate() const {
  const std::size_t n = grid.size();
  if (n == 0) throw ConfigError("grid function: empty grid");
  if (values.rows() != n) throw ConfigError("grid function: values rows must match grid size");
  if (quadrature.size() != n)
    throw ConfigError("grid function: quadrature size must match grid size");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grid[i])) throw ConfigError("grid function: non-finite grid point");
    if (i > 0 && grid[i] <= grid[i - 1])
      throw ConfigError("grid function: grid must be strictly increasing");
    if (!std::isfinite(quadrature[i]) || quadrature[i] <= 0.0)
      throw ConfigError("grid function: quadrature weights must be positive");
  }
}

std::vector<double> uniform_grid(std::size_t n) {
  if (n == 0) throw ConfigError("uniform_grid: need at least one point");
  if (n == 1) return {0.0};
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

std::vector<double> trapezoid_weights(const std::vector<double>& grid) {
  const std::size_t n = grid.size();
  if (n == 0) throw ConfigError("trapezoid_weights: empty grid");
  if (n == 1) return {1.0};
  std::vector<double> w(n);
  for (std::size_t i = 1; i < n; ++i)
    if (grid[i] <= grid[i - 1])
      throw ConfigError("trapezoid_weights: grid must be strictly increasing");
  w[0] = 0.5 * (grid[1] - grid[0]);
  for (std::size_t i = 1; i + 1 < n; ++i) w[i] = 0.5 * (grid[i + 1] - grid[i - 1]);
  w[n - 1] = 0.5 * (grid[n - 1] - grid[n - 2]);
  return w;
}

void AttentionParams::validate(long d_v, long d_u) const {
  if (heads < 1) throw ConfigError("attention: heads must be positive");
  if (Q.rows() != K.rows()) throw ConfigError("attention: Q and K must share d_K");
  if (Q.rows() % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("attention: d_K must be divisible by heads");
  if (V.rows() % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("attention: d_V must be divisible by heads");
  if (Q.cols() != static_cast<std::size_t>(d_v))
    throw ConfigError("attention: Q columns must match query channels");
  if (K.cols() != static_cast<std::size_t>(d_u) || V.cols() != static_cast<std::size_t>(d_u))
    throw ConfigError("attention: K and V columns must match key channels");
}

std::vector<double> attention_density(const GridFunction& v, const GridFunction& u,
                                      const AttentionParams& params, std::size_t x_index) {
  v.validate();
  u.validate();
  params.validate(v.channels(), u.channels());
  if (x_index >= v.grid.size()) throw ConfigError("attention_density: x_index out of range");

  const Mat& qm = params.Q.value();
  const Mat& km = params.K.value();
  const std::size_t dk = qm.rows;
  const std::size_t nu = u.grid.size();

  std::vector<double> qv(dk, 0.0);
  for (std::size_t r = 0; r < dk; ++r)
    for (std::size_t c = 0; c < qm.cols; ++c) qv[r] += qm(r, c) * v.values.value()(x_index, c);

  std::vector<double> s(nu, 0.0);
  double smax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nu; ++i) {
    double acc = 0.0;
    for (std::size_t r = 0; r < dk; ++r) {
      double ku = 0.0;
      for (std::size_t c = 0; c < km.cols; ++c) ku += km(r, c) * u.values.value()(i, c);
      acc += qv[r] * ku;
    }
    if (!std::isfinite(acc)) throw NumericalError("attention_density: non-finite score");
    s[i] = acc;
    smax = std::max(smax, acc);
  }

  std::vector<double> pi(nu);
  double z = 0.0;
  for (std::size_t i = 0; i < nu; ++i) {
    pi[i] = u.quadrature[i] * std::exp(s[i] - smax);
    z += pi[i];
  }
  if (!(z > 0.0) || !std::isfinite(z))
    throw NumericalError("attention_density: degenerate normalizer");
  for (double& p : pi) p /= z;
  return pi;
}

GridFunction cross_attention(const GridFunction& v, const GridFunction& u,
                             const AttentionParams& params) {
  v.validate();
  u.validate();
  params.validate(v.channels(), u.channels());

  const std::size_t heads = static_cast<std::size_t>(params.heads);
  const std::size_t hk = params.Q.rows() / heads;
  const std::size_t hv = params.V.rows() / heads;

  // Row slices of Q/K/V select each head; slicing the transposed maps keeps
  // everything inside the column-slice primitive.
  Tensor Qt = ad::transpose(params.Q);
  Tensor Kt = ad::transpose(params.K);
  Tensor Vt = ad::transpose(params.V);

  Tensor out;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = ad::matmul(v.values, ad::slice_cols(Qt, h * hk, (h + 1) * hk));
    Tensor kh = ad::matmul(u.values, ad::slice_cols(Kt, h * hk, (h + 1) * hk));
    Tensor pi = ad::weighted_softmax(ad::matmul(qh, ad::transpose(kh)), u.quadrature);
    Tensor vals = ad::matmul(u.values, ad::slice_cols(Vt, h * hv, (h + 1) * hv));
    Tensor head = ad::matmul(pi, vals);
    out = (h == 0) ? head : ad::concat_cols(out, head);
  }
  return {v.grid, out, v.quadrature};
}

ad::Tensor activate(const ad::Tensor& x, Activation a) {
  switch (a) {
    case Activation::Gelu: return ad::gelu(x);
    case Activation::Tanh: return ad::tanh_act(x);
  }
  throw ConfigError("activate: unknown activation");
}

namespace {

Tensor apply_mlp(const Tensor& x, const MlpParams& p, Activation act) {
  Tensor h = ad::add_bias(ad::matmul(x, ad::transpose(p.W1)), p.b1);
  return ad::add_bias(ad::matmul(activate(h, act), ad::transpose(p.W2)), p.b2);
}

Tensor maybe_ln(const Tensor& x, const LayerNormParams& p, bool use_layernorm) {
  return use_layernorm ? ad::layernorm(x, p.gamma, p.beta) : x;
}

Tensor apply_attention_block(const GridFunction& q, const GridFunction& kv,
                             const AttentionBlock& blk) {
  GridFunction mixed = cross_attention(q, kv, blk.attn);
  return ad::matmul(mixed.values, ad::transpose(blk.WO));
}

}  // namespace

GridFunction encoder_layer(const GridFunction& u, const EncoderLayerParams& params,
                           Activation act, bool use_layernorm) {
  GridFunction cur = u;
  Tensor attended = ad::add(cur.values, apply_attention_block(cur, cur, params.attn));
  cur.values = maybe_ln(attended, params.ln1, use_layernorm);
  Tensor fed = ad::add(cur.values, apply_mlp(cur.values, params.mlp, act));
  cur.values = maybe_ln(fed, params.ln2, use_layernorm);
  return cur;
}

GridFunction decoder_block(const std::vector<double>& query_grid,
                           const std::vector<double>& query_quadrature,
                           const GridFunction& u_enc, const DecoderParams& params,
                           Activation act, bool use_layernorm) {
  u_enc.validate();

  // v starts as the rescaled identity on the query window: the normalized
  // query time is the single input channel, lifted by S_in.
  Mat t(query_grid.size(), 1);
  for (std::size_t i = 0; i < query_grid.size(); ++i) t(i, 0) = query_grid[i];
  GridFunction v{query_grid, ad::matmul(Tensor(std::move(t)), ad::transpose(params.S_in)),
                 query_quadrature};
  v.validate();

  Tensor selfed = ad::add(v.values, apply_attention_block(v, v, params.self_attn));
  v.values = maybe_ln(selfed, params.ln1, use_layernorm);
  Tensor crossed = ad::add(v.values, apply_attention_block(v, u_enc, params.cross_attn));
  v.values = maybe_ln(crossed, params.ln2, use_layernorm);
  Tensor fed = ad::add(v.values, apply_mlp(v.values, params.mlp, act));
  v.values = maybe_ln(fed, params.ln3, use_layernorm);
  return v;
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model: layers must be positive");
  if (channels < 1) throw ConfigError("model: channels must be positive");
  if (heads < 1) throw ConfigError("model: heads must be positive");
  if (channels % heads != 0) throw ConfigError("model: channels must be divisible by heads");
  if (mlp_hidden < 1) throw ConfigError("model: mlp_hidden must be positive");
  if (d_in < 1 || d_out < 1) throw ConfigError("model: channel counts must be positive");
  if (input_len < 1 || output_len < 1) throw ConfigError("model: grid lengths must be positive");
  if (arch == Arch::SelfAttnStack && input_len != output_len)
    throw ConfigError("model: self-attention stack requires matching input/output grids");

  auto check_vec = [](const std::vector<double>& v, std::size_t d, bool is_scale,
                      const char* what) {
    if (v.empty()) return;
    if (v.size() != d)
      throw ConfigError(std::string("model: ") + what + " must have one entry per channel");
    for (double x : v) {
      if (!std::isfinite(x)) throw ConfigError(std::string("model: non-finite ") + what);
      if (is_scale && x == 0.0) throw ConfigError(std::string("model: zero ") + what);
    }
  };
  check_vec(in_shift, static_cast<std::size_t>(d_in), false, "in_shift");
  check_vec(in_scale, static_cast<std::size_t>(d_in), true, "in_scale");
  check_vec(out_shift, static_cast<std::size_t>(d_out), false, "out_shift");
  check_vec(out_scale, static_cast<std::size_t>(d_out), true, "out_scale");
}

std::string ModelConfig::to_json() const { return detail::model_to_json(*this).dump(); }

ModelConfig ModelConfig::from_json(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError(std::string("model config: malformed JSON: ") + e.what());
  }
  return detail::model_from_json(j, "model config");
}

namespace {

struct ParamInit {
  SplitRng rng;

  explicit ParamInit(std::uint64_t seed) : rng(seed, 0) {}

  Tensor linear(std::size_t r, std::size_t c, std::size_t fan_in) {
    Mat m(r, c);
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : m.a) x = rng.uniform(-b, b);
    return Tensor(std::move(m), true);
  }
  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(Mat(r, c), true); }
  static Tensor ones_row(std::size_t c) {
    Mat m(1, c, 1.0);
    return Tensor(std::move(m), true);
  }

  AttentionBlock attention(std::size_t c, int heads) {
    AttentionBlock b;
    b.attn.Q = linear(c, c, c);
    b.attn.K = linear(c, c, c);
    b.attn.V = linear(c, c, c);
    b.attn.heads = heads;
    b.WO = linear(c, c, c);
    return b;
  }
  LayerNormParams ln(std::size_t c) { return {ones_row(c), zeros(1, c)}; }
  MlpParams mlp(std::size_t c, std::size_t hidden) {
    MlpParams m;
    m.W1 = linear(hidden, c, c);
    m.b1 = zeros(1, hidden);
    m.W2 = linear(c, hidden, hidden);
    m.b2 = zeros(1, c);
    return m;
  }
};

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  if (cfg_.in_shift.empty()) cfg_.in_shift.assign(static_cast<std::size_t>(cfg_.d_in), 0.0);
  if (cfg_.in_scale.empty()) cfg_.in_scale.assign(static_cast<std::size_t>(cfg_.d_in), 1.0);
  if (cfg_.out_shift.empty()) cfg_.out_shift.assign(static_cast<std::size_t>(cfg_.d_out), 0.0);
  if (cfg_.out_scale.empty()) cfg_.out_scale.assign(static_cast<std::size_t>(cfg_.d_out), 1.0);

  const std::size_t c = static_cast<std::size_t>(cfg_.channels);
  const std::size_t hidden = static_cast<std::size_t>(cfg_.mlp_hidden);
  ParamInit init(seed);

  lift_W_ = init.linear(c, static_cast<std::size_t>(cfg_.d_in) + 1,
                        static_cast<std::size_t>(cfg_.d_in) + 1);
  enc_.reserve(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    EncoderLayerParams layer;
    layer.attn = init.attention(c, cfg_.heads);
    layer.ln1 = init.ln(c);
    layer.mlp = init.mlp(c, hidden);
    layer.ln2 = init.ln(c);
    enc_.push_back(std::move(layer));
  }
  if (cfg_.arch == Arch::EncoderDecoder) {
    DecoderParams d;
    d.S_in = init.linear(c, 1, 1);
    d.self_attn = init.attention(c, cfg_.heads);
    d.ln1 = init.ln(c);
    d.cross_attn = init.attention(c, cfg_.heads);
    d.ln2 = init.ln(c);
    d.mlp = init.mlp(c, hidden);
    d.ln3 = init.ln(c);
    dec_ = std::move(d);
  }
  proj_W_ = init.linear(static_cast<std::size_t>(cfg_.d_out), c, c);
}

namespace {

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

void push_attention(NamedParams& out, const std::string& prefix, AttentionBlock& b) {
  out.emplace_back(prefix + ".Q", &b.attn.Q);
  out.emplace_back(prefix + ".K", &b.attn.K);
  out.emplace_back(prefix + ".V", &b.attn.V);
  out.emplace_back(prefix + ".WO", &b.WO);
}

void push_ln(NamedParams& out, const std::string& prefix, LayerNormParams& l) {
  out.emplace_back(prefix + ".gamma", &l.gamma);
  out.emplace_back(prefix + ".beta", &l.beta);
}

void push_mlp(NamedParams& out, const std::string& prefix, MlpParams& m) {
  out.emplace_back(prefix + ".W1", &m.W1);
  out.emplace_back(prefix + ".b1", &m.b1);
  out.emplace_back(prefix + ".W2", &m.W2);
  out.emplace_back(prefix + ".b2", &m.b2);
}

}  // namespace

std::vector<std::pair<std::string, ad::Tensor*>> Model::parameters() {
  NamedParams out;
  out.emplace_back("lift.W", &lift_W_);
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    const std::string p = "enc" + std::to_string(l);
    push_attention(out, p + ".attn", enc_[l].attn);
    push_ln(out, p + ".ln1", enc_[l].ln1);
    push_mlp(out, p + ".mlp", enc_[l].mlp);
    push_ln(out, p + ".ln2", enc_[l].ln2);
  }
  if (dec_) {
    out.emplace_back("dec.S_in", &dec_->S_in);
    push_attention(out, "dec.self", dec_->self_attn);
    push_ln(out, "dec.ln1", dec_->ln1);
    push_attention(out, "dec.cross", dec_->cross_attn);
    push_ln(out, "dec.ln2", dec_->ln2);
    push_mlp(out, "dec.mlp", dec_->mlp);
    push_ln(out, "dec.ln3", dec_->ln3);
  }
  out.emplace_back("proj.W", &proj_W_);
  return out;
}

std::vector<std::pair<std::string, Mat>> Model::named_values() const {
  auto params = const_cast<Model*>(this)->parameters();
  std::vector<std::pair<std::string, Mat>> out;
  out.reserve(params.size());
  for (auto& [name, t] : params) out.emplace_back(name, t->value());
  return out;
}

void Model::set_parameters(const std::vector<std::pair<std::string, Mat>>& named) {
  auto own = parameters();
  if (named.size() != own.size())
    throw ConfigError("model: parameter count mismatch when loading");
  for (auto& [name, t] : own) {
    const Mat* found = nullptr;
    for (const auto& [n, m] : named)
      if (n == name) {
        if (found) throw ConfigError("model: duplicate parameter \"" + name + "\"");
        found = &m;
      }
    if (!found) throw ConfigError("model: missing parameter \"" + name + "\"");
    if (found->rows != t->rows() || found->cols != t->cols())
      throw ConfigError("model: shape mismatch for parameter \"" + name + "\"");
    t->value_mut() = *found;
  }
}

GridFunction Model::encode(const GridFunction& input) const {
  input.validate();
  if (input.channels() != cfg_.d_in)
    throw ConfigError("model: input channel count does not match config");

  const std::size_t n = input.grid.size();
  const std::size_t d = static_cast<std::size_t>(cfg_.d_in);
  Mat lifted_in(n, d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      lifted_in(i, j) = (input.values.value()(i, j) - cfg_.in_shift[j]) / cfg_.in_scale[j];
    lifted_in(i, d) = input.grid[i];
  }

  GridFunction u{input.grid, ad::matmul(Tensor(std::move(lifted_in)), ad::transpose(lift_W_)),
                 input.quadrature};
  for (const auto& layer : enc_)
    u = encoder_layer(u, layer, cfg_.activation, cfg_.use_layernorm);
  return u;
}

ad::Tensor Model::finish(const ad::Tensor& latent) const {
  Tensor y = ad::colmul(ad::matmul(latent, ad::transpose(proj_W_)), cfg_.out_scale);
  Mat shift(1, static_cast<std::size_t>(cfg_.d_out));
  for (std::size_t j = 0; j < shift.cols; ++j) shift(0, j) = cfg_.out_shift[j];
  return ad::add_bias(y, Tensor(std::move(shift)));
}

GridFunction Model::forward(const GridFunction& input) const {
  GridFunction u = encode(input);
  return {input.grid, finish(u.values), input.quadrature};
}

GridFunction Model::forward(const GridFunction& input, const std::vector<double>& query_grid,
                            const std::vector<double>& query_quadrature) const {
  if (cfg_.arch == Arch::SelfAttnStack) {
    if (query_grid.size() != input.grid.size())
      throw ConfigError("model: self-attention forecaster needs a query grid matching the input");
    GridFunction out = forward(input);
    out.grid = query_grid;
    out.quadrature = query_quadrature;
    out.validate();
    return out;
  }
  GridFunction u = encode(input);
  GridFunction v =
      decoder_block(query_grid, query_quadrature, u, *dec_, cfg_.activation, cfg_.use_layernorm);
  return {query_grid, finish(v.values), query_quadrature};
}

RolloutResult rollout(const Model& model, const Mat& history, double t_end, double dt,
                      long blocks) {
  const ModelConfig& cfg = model.config();
  if (blocks < 1) throw ConfigError("rollout: blocks must be positive");
  if (!(dt > 0.0)) throw ConfigError("rollout: dt must be positive");
  if (cfg.d_out != cfg.d_in)
    throw ConfigError("rollout: autoregression needs matching input/output channels");
  if (cfg.output_len < 2) throw ConfigError("rollout: output grid needs at least two points");
  const std::size_t n_in = static_cast<std::size_t>(cfg.input_len);
  const std::size_t n_out = static_cast<std::size_t>(cfg.output_len);
  const std::size_t d = static_cast<std::size_t>(cfg.d_in);
  if (history.rows != n_in || history.cols != d)
    throw ConfigError("rollout: history shape does not match config");

  const std::vector<double> in_grid = uniform_grid(n_in);
  const std::vector<double> in_w = trapezoid_weights(in_grid);
  const std::vector<double> out_grid = uniform_grid(n_out);
  const std::vector<double> out_w = trapezoid_weights(out_grid);

  const std::size_t step_rows = n_out - 1;
  RolloutResult res;
  Mat all(static_cast<std::size_t>(blocks) * step_rows, d);
  res.times.reserve(all.rows);

  Mat window = history;
  for (long b = 0; b < blocks; ++b) {
    GridFunction gin{in_grid, Tensor(window), in_w};
    GridFunction pred;
    try {
      pred = (cfg.arch == Arch::SelfAttnStack) ? model.forward(gin)
                                               : model.forward(gin, out_grid, out_w);
    } catch (const NumericalError&) {
      // A huge but finite prediction fed back as input can overflow inside the
      // next evaluation; that is divergence, not a caller error.
      res.diverged = true;
      break;
    }
    const Mat& pv = pred.values.value();

    bool finite = true;
    for (double x : pv.a)
      if (!std::isfinite(x)) {
        finite = false;
        break;
      }
    if (!finite) {
      res.diverged = true;
      break;
    }

    // Splice rows 1..n_out-1; row 0 duplicates the junction with the history.
    const std::size_t base = static_cast<std::size_t>(b) * step_rows;
    for (std::size_t i = 1; i < n_out; ++i) {
      for (std::size_t j = 0; j < d; ++j) all(base + i - 1, j) = pv(i, j);
      res.times.push_back(t_end + static_cast<double>(base + i) * dt);
    }

    // New window = trailing n_in rows of (window ++ spliced prediction).
    Mat next(n_in, d);
    for (std::size_t i = 0; i < n_in; ++i) {
      const std::size_t k = step_rows + i;  // index into the concatenated stream
      for (std::size_t j = 0; j < d; ++j)
        next(i, j) = (k < n_in) ? window(k, j) : pv(k - n_in + 1, j);
    }
    window = std::move(next);
    res.completed_blocks = b + 1;
  }

  const std::size_t kept = static_cast<std::size_t>(res.completed_blocks) * step_rows;
  res.values = Mat(kept, d);
  for (std::size_t i = 0; i < kept; ++i)
    for (std::size_t j = 0; j < d; ++j) res.values(i, j) = all(i, j);
  return res;
}

}  // namespace obsflow::nop
