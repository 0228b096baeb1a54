// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "risdt/config.hpp"
#include "risdt/transformer.hpp"

using namespace risdt;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.context = 3;
  cfg.prompt_len = 2;
  return cfg;
}

TupleSeq random_seq(int n, const ModelDims& dims, std::mt19937_64& rng, double rtg_level = 3.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  TupleSeq s;
  s.rtg.resize(n);
  s.states.resize(n, dims.state_dim);
  s.actions.resize(n, dims.action_dim);
  s.valid.assign(n, 1);
  for (int i = 0; i < n; ++i) {
    s.rtg(i) = rtg_level - 0.3 * i + 0.1 * g(rng);
    for (int j = 0; j < dims.state_dim; ++j) s.states(i, j) = g(rng);
    for (int j = 0; j < dims.action_dim; ++j) s.actions(i, j) = g(rng);
  }
  return s;
}

Normalizer random_norm(int sdim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  Normalizer n = Normalizer::identity(sdim);
  for (int i = 0; i < sdim; ++i) {
    n.state_mean(i) = u(rng) - 1.0;
    n.state_scale(i) = u(rng);
  }
  n.rtg_scale = 4.0;
  return n;
}

double sample_loss(const Model& m, const TupleSeq& prompt, const TupleSeq& recent) {
  const MatrixXd pred = forward(m, prompt, recent);
  MatrixXd target(pred.rows(), pred.cols());
  int r = 0;
  for (int i = 0; i < recent.size(); ++i)
    if (recent.valid[i]) target.row(r++) = recent.actions.row(i);
  return mse_loss(pred, target);
}

}  // namespace

TEST_CASE("train config validation") {
  CHECK(validate_train_config(TrainConfig{}).empty());
  TrainConfig bad;
  bad.embed_dim = 10;
  bad.heads = 4;
  bad.context = 0;
  const auto errs = validate_train_config(bad);
  CHECK(errs.size() == 2);
  CHECK_THROWS_AS(init_params(bad, {3, 2}, 1), ConfigError);

  const TrainConfig cfg = tiny_config();
  const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  CHECK(train_config_to_json(back) == train_config_to_json(cfg));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"heads", "four"}}), ConfigError);
  CHECK(train_config_from_json(nlohmann::json{{"layers", 5}}).layers == 5);
}

TEST_CASE("init params") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{5, 3};
  const ModelParams a = init_params(cfg, dims, 42);
  const ModelParams b = init_params(cfg, dims, 42);
  const ModelParams c = init_params(cfg, dims, 43);
  CHECK(a.flatten() == b.flatten());
  CHECK(a.flatten() != c.flatten());
  CHECK(a.layers.size() == 2);
  a.visit([](const std::string& name, const MatrixXd& m) {
    CAPTURE(name);
    CHECK(m.allFinite());
    if (name.find("_scale") != std::string::npos) {
      CHECK(m.isOnes());
    } else if (name.find("_offset") != std::string::npos || name.back() == 'b') {
      CHECK(m.isZero());
    } else {
      // Weight matrices map rows (fan-in) to columns.
      CHECK(m.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(static_cast<double>(m.rows())));
    }
  });
  CHECK(a.pos_prompt.rows() == 3);
  CHECK(a.pos_recent.rows() == 3);
  CHECK(a.layers[0].w1.cols() == 32);

  const Model m = init_model(cfg, dims, 42);
  CHECK(m.adam.step == 0);
  CHECK(m.adam.m.flatten() == std::vector<double>(a.size(), 0.0));
}

TEST_CASE("token count and layout") {
  TrainConfig cfg;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  const ModelDims dims{7, 4};
  const ModelParams p = init_params(cfg, dims, 1);
  std::mt19937_64 rng(1);
  const TupleSeq prompt = random_seq(11, dims, rng);
  const TupleSeq recent = random_seq(20, dims, rng);
  TokenLayout lay;
  const MatrixXd tok = embed_tokens(p, Normalizer::identity(7), prompt, recent, &lay);
  CHECK(tok.rows() == 93);
  CHECK(tok.cols() == 16);
  CHECK(lay.recent_state_tokens.front() == 34);
  CHECK(lay.recent_state_tokens.back() == 91);

  TupleSeq too_long = random_seq(21, dims, rng);
  CHECK_THROWS_AS(embed_tokens(p, Normalizer::identity(7), prompt, too_long), std::invalid_argument);
  TupleSeq wrong = random_seq(2, ModelDims{6, 4}, rng);
  CHECK_THROWS_AS(embed_tokens(p, Normalizer::identity(7), prompt, wrong), std::invalid_argument);
}

TEST_CASE("state token equals the projected state under an identity map") {
  TrainConfig cfg = tiny_config();
  const ModelDims dims{3, 2};
  ModelParams p = init_params(cfg, dims, 5);
  p.set_zero();
  p.state_w.topLeftCorner(3, 3).setIdentity();
  std::mt19937_64 rng(2);
  const TupleSeq recent = random_seq(2, dims, rng);
  const MatrixXd tok = embed_tokens(p, Normalizer::identity(3), TupleSeq::empty(dims), recent);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(tok(3 * i + 1, j) == recent.states(i, j));
    for (int j = 3; j < 8; ++j) CHECK(tok(3 * i + 1, j) == 0.0);
  }
}

TEST_CASE("zero layers reduce to two affine maps") {
  TrainConfig cfg = tiny_config();
  cfg.layers = 0;
  const ModelDims dims{2, 2};
  Model m = init_model(cfg, dims, 9);
  std::mt19937_64 rng(3);
  m.norm = random_norm(2, rng);
  const TupleSeq recent = random_seq(1, dims, rng);
  const MatrixXd pred = forward(m, TupleSeq::empty(dims), recent);
  REQUIRE(pred.rows() == 1);
  const ModelParams& p = m.params;
  for (int a = 0; a < 2; ++a) {
    double expect = p.head_b(0, a);
    for (int k = 0; k < cfg.embed_dim; ++k) {
      double e = p.state_b(0, k) + p.pos_recent(0, k);
      for (int s = 0; s < 2; ++s)
        e += (recent.states(0, s) - m.norm.state_mean(s)) * m.norm.state_scale(s) * p.state_w(s, k);
      expect += e * p.head_w(k, a);
    }
    CHECK(pred(0, a) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("forward output shape and prompt position dependence") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{4, 3};
  const Model m = init_model(cfg, dims, 11);
  std::mt19937_64 rng(4);
  const TupleSeq prompt = random_seq(3, dims, rng);
  TupleSeq recent = random_seq(3, dims, rng);
  recent.valid[0] = 0;
  const MatrixXd out = forward(m, prompt, recent);
  CHECK(out.rows() == 2);
  CHECK(out.cols() == 3);
  CHECK(out.allFinite());

  TupleSeq swapped = prompt;
  swapped.rtg.row(0).swap(swapped.rtg.row(2));
  swapped.states.row(0).swap(swapped.states.row(2));
  swapped.actions.row(0).swap(swapped.actions.row(2));
  CHECK((forward(m, swapped, recent) - out).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("causal mask") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{4, 3};
  const Model m = init_model(cfg, dims, 12);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  const TupleSeq prompt = random_seq(3, dims, rng);
  const TupleSeq recent = random_seq(3, dims, rng);
  const MatrixXd base = forward(m, prompt, recent);
  for (int trial = 0; trial < 50; ++trial) {
    // Perturb the decision of tuple j and everything in later tuples.
    const int j = trial % 3;
    TupleSeq changed = recent;
    for (int a = 0; a < dims.action_dim; ++a) changed.actions(j, a) += 10.0 * g(rng);
    for (int i = j + 1; i < 3; ++i) {
      changed.rtg(i) += 10.0 * g(rng);
      for (int s = 0; s < dims.state_dim; ++s) changed.states(i, s) += 10.0 * g(rng);
      for (int a = 0; a < dims.action_dim; ++a) changed.actions(i, a) += 10.0 * g(rng);
    }
    const MatrixXd out = forward(m, prompt, changed);
    for (int i = 0; i <= j; ++i) CHECK((out.row(i) - base.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
    if (j < 2) CHECK((out.row(2) - base.row(2)).cwiseAbs().maxCoeff() > 1e-9);
  }
}

TEST_CASE("padded tuples are invisible") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{4, 3};
  const Model m = init_model(cfg, dims, 13);
  std::mt19937_64 rng(6);
  const TupleSeq prompt = random_seq(3, dims, rng);
  TupleSeq recent = random_seq(3, dims, rng);
  recent.valid[0] = 0;
  const MatrixXd base = forward(m, prompt, recent);
  double base_loss = 0.0;
  const ModelParams g0 = backward(m, prompt, recent, &base_loss);
  recent.rtg(0) = 1e6;
  recent.states.row(0).setConstant(-1e6);
  recent.actions.row(0).setConstant(1e6);
  CHECK(forward(m, prompt, recent) == base);
  double loss = 0.0;
  const ModelParams g1 = backward(m, prompt, recent, &loss);
  CHECK(loss == base_loss);
  CHECK(g1.flatten() == g0.flatten());
  // Only two recent positions are used, so the third positional row is untouched.
  CHECK(g0.pos_recent.row(2).isZero(0.0));
  CHECK(!g0.pos_recent.row(1).isZero(0.0));
}

TEST_CASE("mse loss examples") {
  MatrixXd a(1, 2), z = MatrixXd::Zero(1, 2);
  a << 1.0, 2.0;
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, z) == doctest::Approx(2.5).epsilon(1e-15));
  MatrixXd b = MatrixXd::Random(3, 4);
  CHECK(mse_loss(b.array() + 2.0, b) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK_THROWS_AS(mse_loss(a, MatrixXd::Zero(2, 1)), std::invalid_argument);
}

TEST_CASE("analytic gradient matches central differences") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{3, 2};
  for (std::uint64_t seed : {21u, 22u}) {
    Model m = init_model(cfg, dims, seed);
    std::mt19937_64 rng(seed);
    m.norm = random_norm(3, rng);
    // Move off the init point so layer-norm scales and biases are generic.
    std::normal_distribution<double> g(0.0, 0.2);
    std::vector<double> flat = m.params.flatten();
    for (double& v : flat) v += g(rng);
    m.params.unflatten(flat);
    const TupleSeq prompt = random_seq(3, dims, rng);
    TupleSeq recent = random_seq(3, dims, rng);
    if (seed == 22) recent.valid[0] = 0;

    const std::vector<double> analytic = backward(m, prompt, recent).flatten();
    const double h = 1e-4;
    std::vector<std::string> names;
    m.params.visit([&](const std::string& name, const MatrixXd& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) names.push_back(name);
    });
    double worst = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      std::vector<double> plus = flat, minus = flat;
      plus[i] += h;
      minus[i] -= h;
      Model mp = m, mm = m;
      mp.params.unflatten(plus);
      mm.params.unflatten(minus);
      const double numeric = (sample_loss(mp, prompt, recent) - sample_loss(mm, prompt, recent)) / (2 * h);
      const double diff = std::abs(numeric - analytic[i]);
      const double mag = std::max(std::abs(numeric), std::abs(analytic[i]));
      // Entries whose true value is zero (unused positional rows) only admit an absolute check.
      if (mag < 1e-9) {
        CHECK(diff < 1e-10);
        continue;
      }
      const double rel = diff / mag;
      worst = std::max(worst, rel);
      CAPTURE(names[i]);
      CAPTURE(analytic[i]);
      CAPTURE(numeric);
      CHECK(rel < 1e-4);
    }
    MESSAGE("worst relative gradient error " << worst);
  }
}

TEST_CASE("zero loss gives zero gradients") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{3, 2};
  Model m = init_model(cfg, dims, 31);
  std::mt19937_64 rng(7);
  const TupleSeq prompt = random_seq(3, dims, rng);
  TupleSeq recent = random_seq(3, dims, rng);
  recent.actions.setConstant(0.75);
  m.params.head_w.setZero();
  m.params.head_b.setConstant(0.75);
  double loss = 1.0;
  const ModelParams grad = backward(m, prompt, recent, &loss);
  CHECK(loss == 0.0);
  for (double v : grad.flatten()) CHECK(v == 0.0);
}

TEST_CASE("adam") {
  ModelParams p;
  p.rtg_w = MatrixXd::Constant(1, 3, 1.0);
  AdamState st{p.zeros_like(), p.zeros_like(), 0};

  SUBCASE("zero gradient leaves parameters unchanged") {
    const std::vector<double> before = p.flatten();
    adam_step(p, p.zeros_like(), st, 0.1);
    CHECK(p.flatten() == before);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves each entry by about the learning rate") {
    ModelParams g = p.zeros_like();
    g.rtg_w << 0.5, -3.0, 1e-3;
    adam_step(p, g, st, 0.01);
    CHECK(p.rtg_w(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(p.rtg_w(0, 1) == doctest::Approx(1.0 + 0.01).epsilon(1e-9));
    CHECK(p.rtg_w(0, 2) == doctest::Approx(1.0 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("quadratic bowl") {
    ModelParams x;
    x.rtg_w = MatrixXd::Constant(1, 1, 1.0);
    AdamState s{x.zeros_like(), x.zeros_like(), 0};
    // Scalar recursion written out independently.
    double xr = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 200; ++t) {
      ModelParams g = x.zeros_like();
      g.rtg_w(0, 0) = 2.0 * x.rtg_w(0, 0);
      adam_step(x, g, s, 0.1);
      const double gr = 2.0 * xr;
      m = 0.9 * m + 0.1 * gr;
      v = 0.999 * v + 0.001 * gr * gr;
      xr -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::abs(x.rtg_w(0, 0)) < 0.05);
    CHECK(x.rtg_w(0, 0) == doctest::Approx(xr).epsilon(1e-12));
    CHECK(s.step == 200);
  }
  SUBCASE("shape mismatch") {
    ModelParams g;
    g.rtg_w = MatrixXd::Zero(1, 2);
    CHECK_THROWS_AS(adam_step(p, g, st, 0.1), std::invalid_argument);
  }
}

TEST_CASE("fixed minibatch is memorised") {
  TrainConfig cfg = tiny_config();
  cfg.embed_dim = 16;
  cfg.context = 4;
  const ModelDims dims{5, 3};
  Model m = init_model(cfg, dims, 41);
  std::mt19937_64 rng(8);
  std::vector<std::pair<TupleSeq, TupleSeq>> batch;
  for (int i = 0; i < 4; ++i) batch.emplace_back(random_seq(3, dims, rng), random_seq(4, dims, rng));
  auto batch_loss = [&](ModelParams* grad) {
    double sse = 0.0, entries = 0.0;
    for (const auto& [pr, rc] : batch) entries += rc.num_valid() * dims.action_dim;
    for (const auto& [pr, rc] : batch) {
      ModelParams scratch = m.params.zeros_like();
      sse += accumulate_gradient(m.params, m.norm, cfg.heads, pr, rc, 1.0 / entries, grad ? *grad : scratch);
    }
    return sse / entries;
  };
  const double start = batch_loss(nullptr);
  double loss = start;
  for (int step = 0; step < 100; ++step) {
    ModelParams grad = m.params.zeros_like();
    loss = batch_loss(&grad);
    adam_step(m.params, grad, m.adam, 1e-2);
  }
  loss = batch_loss(nullptr);
  MESSAGE("memorisation " << start << " -> " << loss);
  CHECK(loss <= 0.1 * start);
}

TEST_CASE("forward and backward are deterministic") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{3, 2};
  const Model m = init_model(cfg, dims, 51);
  std::mt19937_64 rng(9);
  const TupleSeq prompt = random_seq(3, dims, rng);
  const TupleSeq recent = random_seq(3, dims, rng);
  CHECK(forward(m, prompt, recent) == forward(m, prompt, recent));
  CHECK(backward(m, prompt, recent).flatten() == backward(m, prompt, recent).flatten());
}

TEST_CASE("checkpoint round trip") {
  const TrainConfig cfg = tiny_config();
  const ModelDims dims{3, 2};
  Model m = init_model(cfg, dims, 61);
  std::mt19937_64 rng(10);
  m.norm = random_norm(3, rng);
  const TupleSeq prompt = random_seq(3, dims, rng);
  const TupleSeq recent = random_seq(3, dims, rng);
  for (int i = 0; i < 3; ++i) adam_step(m.params, backward(m, prompt, recent), m.adam, 1e-3);

  const auto dir = std::filesystem::temp_directory_path() / "risdt_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto prefix = dir / "model";
  save_checkpoint(m, prefix);
  const Model back = load_checkpoint(prefix);
  CHECK(back.params.flatten() == m.params.flatten());
  CHECK(back.adam.m.flatten() == m.adam.m.flatten());
  CHECK(back.adam.v.flatten() == m.adam.v.flatten());
  CHECK(back.adam.step == 3);
  CHECK(back.norm.state_mean == m.norm.state_mean);
  CHECK(back.norm.state_scale == m.norm.state_scale);
  CHECK(back.norm.rtg_scale == m.norm.rtg_scale);
  CHECK(forward(back, prompt, recent) == forward(m, prompt, recent));
  CHECK(std::filesystem::file_size(dir / "model.bin") == 3 * 8 * m.params.size());

  std::filesystem::resize_file(dir / "model.bin", 3 * 8 * m.params.size() - 8);
  CHECK_THROWS_AS(load_checkpoint(prefix), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
