// SPDX-License-Identifier: Apache-2.0

#include "risdt/transformer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "risdt/byte_io.hpp"
#include "risdt/config.hpp"

namespace risdt {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

MatrixXd uniform(int rows, int cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

MatrixXd weight(int fan_in, int fan_out, Rng& rng) { return uniform(fan_in, fan_out, 1.0 / std::sqrt(fan_in), rng); }

MatrixXd row_zeros(int n) { return MatrixXd::Zero(1, n); }

struct LayerNormCache {
  MatrixXd xhat;
  VectorXd rstd;
};

MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& scale, const MatrixXd& offset, LayerNormCache& cache) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  for (int i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  MatrixXd y = cache.xhat.array().rowwise() * scale.row(0).array();
  y.rowwise() += offset.row(0);
  return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& scale, const LayerNormCache& cache,
                             MatrixXd& dscale, MatrixXd& doffset) {
  dscale.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  doffset.row(0) += dy.colwise().sum();
  const MatrixXd dxhat = dy.array().rowwise() * scale.row(0).array();
  MatrixXd dx(dy.rows(), dy.cols());
  for (int i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct LayerCache {
  LayerNormCache ln1;
  MatrixXd a, q, k, v;
  std::vector<MatrixXd> probs;  // per head, T x T, zero above the diagonal
  MatrixXd o;
  LayerNormCache ln2;
  MatrixXd c, h, g;
};

struct ForwardCache {
  TokenLayout layout;
  std::vector<LayerCache> layers;
  MatrixXd final_hidden;
};

void check_seq(const TupleSeq& s, int state_dim, int action_dim, const char* what) {
  const auto n = s.rtg.size();
  if (s.states.rows() != n || s.actions.rows() != n || static_cast<Eigen::Index>(s.valid.size()) != n)
    throw std::invalid_argument(std::string(what) + ": inconsistent tuple counts");
  if (n > 0 && (s.states.cols() != state_dim || s.actions.cols() != action_dim))
    throw std::invalid_argument(std::string(what) + ": feature dimension mismatch");
}

MatrixXd attention_forward(const LayerParams& p, int heads, LayerCache& lc) {
  const int t = static_cast<int>(lc.a.rows());
  const int d = static_cast<int>(lc.a.cols());
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  lc.q = (lc.a * p.wq).rowwise() + p.bq.row(0);
  lc.k = (lc.a * p.wk).rowwise() + p.bk.row(0);
  lc.v = (lc.a * p.wv).rowwise() + p.bv.row(0);
  lc.o.resize(t, d);
  lc.probs.assign(heads, MatrixXd());
  for (int h = 0; h < heads; ++h) {
    const auto qh = lc.q.middleCols(h * dh, dh);
    const auto kh = lc.k.middleCols(h * dh, dh);
    const auto vh = lc.v.middleCols(h * dh, dh);
    MatrixXd scores = (qh * kh.transpose()) * inv_sqrt;
    MatrixXd& prob = lc.probs[h];
    prob = MatrixXd::Zero(t, t);
    for (int i = 0; i < t; ++i) {
      const double mx = scores.row(i).head(i + 1).maxCoeff();
      double sum = 0.0;
      for (int j = 0; j <= i; ++j) {
        prob(i, j) = std::exp(scores(i, j) - mx);
        sum += prob(i, j);
      }
      prob.row(i).head(i + 1) /= sum;
    }
    lc.o.middleCols(h * dh, dh) = prob * vh;
  }
  return (lc.o * p.wo).rowwise() + p.bo.row(0);
}

// Returns d(loss)/d(a) and accumulates parameter gradients.
MatrixXd attention_backward(const LayerParams& p, int heads, const LayerCache& lc, const MatrixXd& dout,
                            LayerParams& g) {
  const int t = static_cast<int>(lc.a.rows());
  const int d = static_cast<int>(lc.a.cols());
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  g.wo.noalias() += lc.o.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const MatrixXd d_o = dout * p.wo.transpose();
  MatrixXd dq(t, d), dk(t, d), dv(t, d);
  for (int h = 0; h < heads; ++h) {
    const MatrixXd& prob = lc.probs[h];
    const auto doh = d_o.middleCols(h * dh, dh);
    const auto vh = lc.v.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh) = prob.transpose() * doh;
    const MatrixXd dprob = doh * vh.transpose();
    MatrixXd ds(t, t);
    for (int i = 0; i < t; ++i) {
      const double inner = (dprob.row(i).array() * prob.row(i).array()).sum();
      ds.row(i) = prob.row(i).array() * (dprob.row(i).array() - inner);
    }
    ds *= inv_sqrt;
    dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
  }
  g.wq.noalias() += lc.a.transpose() * dq;
  g.wk.noalias() += lc.a.transpose() * dk;
  g.wv.noalias() += lc.a.transpose() * dv;
  g.bq.row(0) += dq.colwise().sum();
  g.bk.row(0) += dk.colwise().sum();
  g.bv.row(0) += dv.colwise().sum();
  MatrixXd da = dq * p.wq.transpose();
  da.noalias() += dk * p.wk.transpose();
  da.noalias() += dv * p.wv.transpose();
  return da;
}

MatrixXd run_forward(const ModelParams& params, const Normalizer& norm, int heads, const TupleSeq& prompt,
                     const TupleSeq& recent, ForwardCache& cache) {
  MatrixXd x = embed_tokens(params, norm, prompt, recent, &cache.layout);
  cache.layers.assign(params.layers.size(), LayerCache());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& p = params.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.a = layer_norm(x, p.ln1_scale, p.ln1_offset, lc.ln1);
    x += attention_forward(p, heads, lc);
    lc.c = layer_norm(x, p.ln2_scale, p.ln2_offset, lc.ln2);
    lc.h = (lc.c * p.w1).rowwise() + p.b1.row(0);
    lc.g = lc.h.unaryExpr([](double v) { return gelu(v); });
    x.noalias() += lc.g * p.w2;
    x.rowwise() += p.b2.row(0);
  }
  const int n = static_cast<int>(cache.layout.recent_state_tokens.size());
  cache.final_hidden.resize(n, x.cols());
  for (int i = 0; i < n; ++i) cache.final_hidden.row(i) = x.row(cache.layout.recent_state_tokens[i]);
  return (cache.final_hidden * params.head_w).rowwise() + params.head_b.row(0);
}

void check_heads(const ModelParams& params, int heads) {
  const auto d = params.rtg_w.cols();
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("embedding width must be divisible by heads");
}

}  // namespace

std::vector<std::string> validate_train_config(const TrainConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.embed_dim <= 0) out.push_back("embed_dim must be positive");
  if (cfg.heads <= 0) out.push_back("heads must be positive");
  if (cfg.embed_dim > 0 && cfg.heads > 0 && cfg.embed_dim % cfg.heads != 0)
    out.push_back("embed_dim must be divisible by heads");
  if (cfg.layers < 0) out.push_back("layers must be non-negative");
  if (cfg.context < 1) out.push_back("context must be at least 1");
  if (cfg.prompt_len < 0) out.push_back("prompt_len must be non-negative");
  if (cfg.minibatch <= 0) out.push_back("minibatch must be positive");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) out.push_back("learning_rate must be positive");
  if (cfg.epochs <= 0) out.push_back("epochs must be positive");
  return out;
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  visit([&](const std::string&, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  visit([&](const std::string&, const MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m(i, j));
  });
  return out;
}

void ModelParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != size()) throw std::invalid_argument("flat parameter vector has the wrong length");
  std::size_t pos = 0;
  visit([&](const std::string&, MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = flat[pos++];
  });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.set_zero();
  return z;
}

void ModelParams::set_zero() {
  visit([](const std::string&, MatrixXd& m) { m.setZero(); });
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  std::vector<const MatrixXd*> src;
  other.visit([&](const std::string&, const MatrixXd& m) { src.push_back(&m); });
  std::size_t i = 0;
  visit([&](const std::string& name, MatrixXd& m) {
    if (i >= src.size() || src[i]->rows() != m.rows() || src[i]->cols() != m.cols())
      throw std::invalid_argument("parameter shape mismatch at " + name);
    m += scale * *src[i++];
  });
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const MatrixXd& m) { ok = ok && m.allFinite(); });
  return ok;
}

Normalizer Normalizer::identity(int state_dim) {
  Normalizer n;
  n.state_mean = VectorXd::Zero(state_dim);
  n.state_scale = VectorXd::Ones(state_dim);
  n.rtg_scale = 1.0;
  return n;
}

ModelParams init_params(const TrainConfig& cfg, const ModelDims& dims, std::uint64_t seed) {
  if (const auto errs = validate_train_config(cfg); !errs.empty())
    throw ConfigError("invalid training configuration: " + join(errs));
  if (dims.state_dim <= 0 || dims.action_dim <= 0) throw std::invalid_argument("state and action dims must be positive");
  Rng rng(seed);
  const int d = cfg.embed_dim;
  const int s = dims.state_dim;
  const int a = dims.action_dim;
  ModelParams p;
  p.rtg_w = weight(1, d, rng);
  p.rtg_b = row_zeros(d);
  p.state_w = weight(s, d, rng);
  p.state_b = row_zeros(d);
  p.action_w = weight(a, d, rng);
  p.action_b = row_zeros(d);
  // A positional table acts on a one-hot index, so its fan-in is its row count.
  p.pos_prompt = weight(cfg.prompt_len + 1, d, rng);
  p.pos_recent = weight(cfg.context, d, rng);
  p.layers.resize(cfg.layers);
  for (LayerParams& l : p.layers) {
    l.ln1_scale = MatrixXd::Ones(1, d);
    l.ln1_offset = row_zeros(d);
    l.wq = weight(d, d, rng);
    l.bq = row_zeros(d);
    l.wk = weight(d, d, rng);
    l.bk = row_zeros(d);
    l.wv = weight(d, d, rng);
    l.bv = row_zeros(d);
    l.wo = weight(d, d, rng);
    l.bo = row_zeros(d);
    l.ln2_scale = MatrixXd::Ones(1, d);
    l.ln2_offset = row_zeros(d);
    l.w1 = weight(d, 4 * d, rng);
    l.b1 = row_zeros(4 * d);
    l.w2 = weight(4 * d, d, rng);
    l.b2 = row_zeros(d);
  }
  p.head_w = weight(d, a, rng);
  p.head_b = row_zeros(a);
  return p;
}

Model init_model(const TrainConfig& cfg, const ModelDims& dims, std::uint64_t seed) {
  Model m;
  m.cfg = cfg;
  m.dims = dims;
  m.params = init_params(cfg, dims, seed);
  m.norm = Normalizer::identity(dims.state_dim);
  m.adam.m = m.params.zeros_like();
  m.adam.v = m.params.zeros_like();
  m.adam.step = 0;
  return m;
}

int TupleSeq::num_valid() const {
  int n = 0;
  for (char v : valid) n += v ? 1 : 0;
  return n;
}

TupleSeq TupleSeq::empty(const ModelDims& dims) {
  TupleSeq s;
  s.rtg.resize(0);
  s.states.resize(0, dims.state_dim);
  s.actions.resize(0, dims.action_dim);
  return s;
}

MatrixXd embed_tokens(const ModelParams& params, const Normalizer& norm, const TupleSeq& prompt,
                      const TupleSeq& recent, TokenLayout* layout) {
  const int sdim = static_cast<int>(params.state_w.rows());
  const int adim = static_cast<int>(params.action_w.rows());
  const int d = static_cast<int>(params.rtg_w.cols());
  check_seq(prompt, sdim, adim, "prompt");
  check_seq(recent, sdim, adim, "recent");
  if (norm.state_mean.size() != sdim || norm.state_scale.size() != sdim)
    throw std::invalid_argument("normaliser dimension mismatch");
  const int np = prompt.num_valid();
  const int nr = recent.num_valid();
  if (np > params.pos_prompt.rows()) throw std::invalid_argument("prompt longer than the prompt table");
  if (nr > params.pos_recent.rows()) throw std::invalid_argument("recent window longer than the context");

  TokenLayout lay;
  lay.num_tokens = 3 * (np + nr);
  MatrixXd x(lay.num_tokens, d);
  int tok = 0;
  auto emit = [&](const TupleSeq& seq, int row, const MatrixXd& pos_table, int rank) {
    const auto pos = pos_table.row(rank);
    x.row(tok) = (seq.rtg(row) / norm.rtg_scale) * params.rtg_w.row(0) + params.rtg_b.row(0) + pos;
    const VectorXd s = (seq.states.row(row).transpose() - norm.state_mean).cwiseProduct(norm.state_scale);
    x.row(tok + 1) = s.transpose() * params.state_w + params.state_b.row(0) + pos;
    x.row(tok + 2) = seq.actions.row(row) * params.action_w + params.action_b.row(0) + pos;
    tok += 3;
  };
  int rank = 0;
  for (int i = 0; i < prompt.size(); ++i)
    if (prompt.valid[i]) emit(prompt, i, params.pos_prompt, rank++);
  rank = 0;
  for (int i = 0; i < recent.size(); ++i) {
    if (!recent.valid[i]) continue;
    lay.recent_state_tokens.push_back(tok + 1);
    lay.recent_rows.push_back(i);
    emit(recent, i, params.pos_recent, rank++);
  }
  if (layout) *layout = std::move(lay);
  return x;
}

MatrixXd forward(const ModelParams& params, const Normalizer& norm, int heads, const TupleSeq& prompt,
                 const TupleSeq& recent) {
  check_heads(params, heads);
  ForwardCache cache;
  return run_forward(params, norm, heads, prompt, recent, cache);
}

MatrixXd forward(const Model& model, const TupleSeq& prompt, const TupleSeq& recent) {
  return forward(model.params, model.norm, model.cfg.heads, prompt, recent);
}

double mse_loss(const MatrixXd& pred, const MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("mse_loss: shape mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double accumulate_gradient(const ModelParams& params, const Normalizer& norm, int heads, const TupleSeq& prompt,
                           const TupleSeq& recent, double scale, ModelParams& grad) {
  check_heads(params, heads);
  ForwardCache cache;
  const MatrixXd pred = run_forward(params, norm, heads, prompt, recent, cache);
  const TokenLayout& lay = cache.layout;
  const int n = static_cast<int>(pred.rows());
  MatrixXd target(n, pred.cols());
  for (int i = 0; i < n; ++i) target.row(i) = recent.actions.row(lay.recent_rows[i]);
  const MatrixXd err = pred - target;
  const double sse = err.squaredNorm();
  if (n == 0) return 0.0;

  const MatrixXd dpred = (2.0 * scale) * err;
  grad.head_w.noalias() += cache.final_hidden.transpose() * dpred;
  grad.head_b.row(0) += dpred.colwise().sum();
  MatrixXd dx = MatrixXd::Zero(lay.num_tokens, params.rtg_w.cols());
  const MatrixXd dhidden = dpred * params.head_w.transpose();
  for (int i = 0; i < n; ++i) dx.row(lay.recent_state_tokens[i]) += dhidden.row(i);

  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const LayerParams& p = params.layers[l];
    LayerParams& g = grad.layers[l];
    const LayerCache& lc = cache.layers[l];
    // Feed-forward branch.
    g.w2.noalias() += lc.g.transpose() * dx;
    g.b2.row(0) += dx.colwise().sum();
    MatrixXd dh = dx * p.w2.transpose();
    dh.array() *= lc.h.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.w1.noalias() += lc.c.transpose() * dh;
    g.b1.row(0) += dh.colwise().sum();
    const MatrixXd dc = dh * p.w1.transpose();
    dx += layer_norm_backward(dc, p.ln2_scale, lc.ln2, g.ln2_scale, g.ln2_offset);
    // Attention branch.
    const MatrixXd da = attention_backward(p, heads, lc, dx, g);
    dx += layer_norm_backward(da, p.ln1_scale, lc.ln1, g.ln1_scale, g.ln1_offset);
  }

  // Embedding layer.
  int tok = 0;
  auto absorb = [&](const TupleSeq& seq, int row, MatrixXd& pos_grad, int rank) {
    const auto g_r = dx.row(tok);
    const auto g_s = dx.row(tok + 1);
    const auto g_a = dx.row(tok + 2);
    pos_grad.row(rank) += g_r + g_s + g_a;
    grad.rtg_w.row(0) += (seq.rtg(row) / norm.rtg_scale) * g_r;
    grad.rtg_b.row(0) += g_r;
    const VectorXd s = (seq.states.row(row).transpose() - norm.state_mean).cwiseProduct(norm.state_scale);
    grad.state_w.noalias() += s * g_s;
    grad.state_b.row(0) += g_s;
    grad.action_w.noalias() += seq.actions.row(row).transpose() * g_a;
    grad.action_b.row(0) += g_a;
    tok += 3;
  };
  int rank = 0;
  for (int i = 0; i < prompt.size(); ++i)
    if (prompt.valid[i]) absorb(prompt, i, grad.pos_prompt, rank++);
  rank = 0;
  for (int i = 0; i < recent.size(); ++i)
    if (recent.valid[i]) absorb(recent, i, grad.pos_recent, rank++);
  return sse;
}

ModelParams backward(const Model& model, const TupleSeq& prompt, const TupleSeq& recent, double* loss) {
  ModelParams grad = model.params.zeros_like();
  const double entries = static_cast<double>(recent.num_valid()) * model.dims.action_dim;
  const double scale = entries > 0 ? 1.0 / entries : 0.0;
  const double sse = accumulate_gradient(model.params, model.norm, model.cfg.heads, prompt, recent, scale, grad);
  if (loss) *loss = entries > 0 ? sse / entries : 0.0;
  return grad;
}

void adam_step(ModelParams& params, const ModelParams& grad, AdamState& state, double learning_rate,
               const AdamHyper& hyper) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  std::vector<const MatrixXd*> gs;
  std::vector<MatrixXd*> ms, vs;
  grad.visit([&](const std::string&, const MatrixXd& m) { gs.push_back(&m); });
  state.m.visit([&](const std::string&, MatrixXd& m) { ms.push_back(&m); });
  state.v.visit([&](const std::string&, MatrixXd& m) { vs.push_back(&m); });
  std::size_t i = 0;
  params.visit([&](const std::string& name, MatrixXd& p) {
    if (i >= gs.size() || i >= ms.size() || i >= vs.size() || gs[i]->rows() != p.rows() ||
        gs[i]->cols() != p.cols() || ms[i]->rows() != p.rows() || ms[i]->cols() != p.cols())
      throw std::invalid_argument("adam_step: shape mismatch at " + name);
    MatrixXd& m = *ms[i];
    MatrixXd& v = *vs[i];
    const MatrixXd& g = *gs[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.cwiseAbs2();
    p.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + hyper.eps);
    ++i;
  });
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"embed_dim", cfg.embed_dim}, {"heads", cfg.heads},        {"layers", cfg.layers},
          {"context", cfg.context},     {"prompt_len", cfg.prompt_len}, {"minibatch", cfg.minibatch},
          {"learning_rate", cfg.learning_rate}, {"epochs", cfg.epochs}, {"seed", cfg.seed},
          {"use_prompt", cfg.use_prompt}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
  if (!j.is_object()) throw ConfigError("schema error at 'training': expected an object");
  std::vector<std::string> errs;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "embed_dim") cfg.embed_dim = value.get<int>();
      else if (key == "heads") cfg.heads = value.get<int>();
      else if (key == "layers") cfg.layers = value.get<int>();
      else if (key == "context") cfg.context = value.get<int>();
      else if (key == "prompt_len") cfg.prompt_len = value.get<int>();
      else if (key == "minibatch") cfg.minibatch = value.get<int>();
      else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "use_prompt") cfg.use_prompt = value.get<bool>();
      else errs.push_back("unknown key 'training." + key + "'");
    } catch (const nlohmann::json::exception&) {
      errs.push_back("wrong type at 'training." + key + "'");
    }
  }
  for (const auto& e : validate_train_config(cfg)) errs.push_back("training: " + e);
  if (!errs.empty()) throw ConfigError("schema error: " + join(errs));
  return cfg;
}

void save_checkpoint(const Model& model, const std::filesystem::path& prefix) {
  nlohmann::json meta;
  meta["format"] = "risdt-checkpoint-1";
  meta["dims"] = {{"state_dim", model.dims.state_dim}, {"action_dim", model.dims.action_dim}};
  meta["config"] = train_config_to_json(model.cfg);
  meta["seed"] = model.cfg.seed;
  meta["step"] = model.adam.step;
  meta["normalizer"] = {
      {"state_mean", std::vector<double>(model.norm.state_mean.data(), model.norm.state_mean.data() + model.norm.state_mean.size())},
      {"state_scale", std::vector<double>(model.norm.state_scale.data(), model.norm.state_scale.data() + model.norm.state_scale.size())},
      {"rtg_scale", model.norm.rtg_scale}};
  nlohmann::json tensors = nlohmann::json::array();
  model.params.visit([&](const std::string& name, const MatrixXd& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  meta["tensors"] = tensors;
  meta["blob_layout"] = "float64 little-endian, column-major per tensor; parameters, adam m, adam v";

  auto json_path = prefix;
  json_path += ".json";
  auto bin_path = prefix;
  bin_path += ".bin";
  {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write " + json_path.string());
    out << meta.dump(2) << '\n';
  }
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
  for (const ModelParams* p : {&model.params, &model.adam.m, &model.adam.v})
    for (double v : p->flatten()) byte_io::put_le<double>(bin, v);
  if (!bin) throw std::runtime_error("failed writing " + bin_path.string());
}

Model load_checkpoint(const std::filesystem::path& prefix) {
  auto json_path = prefix;
  json_path += ".json";
  auto bin_path = prefix;
  bin_path += ".bin";
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open " + json_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(json_path.string() + ": parse error: " + e.what());
  }
  if (meta.value("format", "") != "risdt-checkpoint-1") throw std::runtime_error(json_path.string() + ": unknown format");
  ModelDims dims{meta.at("dims").at("state_dim").get<int>(), meta.at("dims").at("action_dim").get<int>()};
  const TrainConfig cfg = train_config_from_json(meta.at("config"));
  Model model = init_model(cfg, dims, cfg.seed);
  const auto& nj = meta.at("normalizer");
  const auto mean = nj.at("state_mean").get<std::vector<double>>();
  const auto scale = nj.at("state_scale").get<std::vector<double>>();
  if (static_cast<int>(mean.size()) != dims.state_dim || static_cast<int>(scale.size()) != dims.state_dim)
    throw std::runtime_error(json_path.string() + ": normaliser dimension mismatch");
  model.norm.state_mean = Eigen::Map<const VectorXd>(mean.data(), dims.state_dim);
  model.norm.state_scale = Eigen::Map<const VectorXd>(scale.data(), dims.state_dim);
  model.norm.rtg_scale = nj.at("rtg_scale").get<double>();
  model.adam.step = meta.at("step").get<std::int64_t>();

  std::size_t i = 0;
  const auto& tensors = meta.at("tensors");
  model.params.visit([&](const std::string& name, const MatrixXd& m) {
    if (i >= tensors.size() || tensors[i].at("name") != name || tensors[i].at("rows") != m.rows() ||
        tensors[i].at("cols") != m.cols())
      throw std::runtime_error(json_path.string() + ": tensor table does not match the config at " + name);
    ++i;
  });
  if (i != tensors.size()) throw std::runtime_error(json_path.string() + ": extra tensors");

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + bin_path.string());
  const std::size_t n = model.params.size();
  for (ModelParams* p : {&model.params, &model.adam.m, &model.adam.v}) {
    std::vector<double> flat(n);
    for (double& v : flat) v = byte_io::get_le<double>(bin);
    p->unflatten(flat);
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw std::runtime_error(bin_path.string() + ": trailing bytes");
  return model;
}

}  // namespace risdt
