// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace risdt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Architecture and optimisation settings. `prompt_len` is T_star: a prompt
/// holds T_star + 1 tuples. `context` is L, the recent-window length.
struct TrainConfig {
  int embed_dim = 64;
  int heads = 4;
  int layers = 3;
  int context = 20;
  int prompt_len = 10;
  int minibatch = 16;
  double learning_rate = 1e-4;
  int epochs = 40;
  std::uint64_t seed = 1;
  bool use_prompt = true;
};

/// Every violated TrainConfig invariant; empty when valid.
std::vector<std::string> validate_train_config(const TrainConfig& cfg);

struct ModelDims {
  int state_dim = 0;
  int action_dim = 0;
};

/// Biases and layer-norm vectors are stored as 1 x n matrices so that every
/// tensor has the same type.
struct LayerParams {
  MatrixXd ln1_scale, ln1_offset;
  MatrixXd wq, bq, wk, bk, wv, bv, wo, bo;
  MatrixXd ln2_scale, ln2_offset;
  MatrixXd w1, b1, w2, b2;
};

struct ModelParams {
  MatrixXd rtg_w, rtg_b;        // 1 x d
  MatrixXd state_w, state_b;    // S x d
  MatrixXd action_w, action_b;  // A x d
  MatrixXd pos_prompt;          // (T_star + 1) x d
  MatrixXd pos_recent;          // L x d
  std::vector<LayerParams> layers;
  MatrixXd head_w, head_b;      // d x A

  /// Calls f(name, tensor) for every tensor in checkpoint order.
  template <typename F>
  void visit(F&& f) {
    f("rtg_w", rtg_w);
    f("rtg_b", rtg_b);
    f("state_w", state_w);
    f("state_b", state_b);
    f("action_w", action_w);
    f("action_b", action_b);
    f("pos_prompt", pos_prompt);
    f("pos_recent", pos_recent);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      LayerParams& l = layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      f(p + "ln1_scale", l.ln1_scale);
      f(p + "ln1_offset", l.ln1_offset);
      f(p + "wq", l.wq);
      f(p + "bq", l.bq);
      f(p + "wk", l.wk);
      f(p + "bk", l.bk);
      f(p + "wv", l.wv);
      f(p + "bv", l.bv);
      f(p + "wo", l.wo);
      f(p + "bo", l.bo);
      f(p + "ln2_scale", l.ln2_scale);
      f(p + "ln2_offset", l.ln2_offset);
      f(p + "w1", l.w1);
      f(p + "b1", l.b1);
      f(p + "w2", l.w2);
      f(p + "b2", l.b2);
    }
    f("head_w", head_w);
    f("head_b", head_b);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit([&](const std::string& name, MatrixXd& m) { f(name, std::as_const(m)); });
  }

  std::size_t size() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
  void set_zero();
  void add_scaled(const ModelParams& other, double scale);
  bool all_finite() const;
};

/// Per-dimension affine map applied to raw state features, and a divisor
/// for returns-to-go. Fitted on training data, stored with the model.
struct Normalizer {
  VectorXd state_mean;
  VectorXd state_scale;  // multiply after subtracting the mean
  double rtg_scale = 1.0;

  static Normalizer identity(int state_dim);
};

struct AdamState {
  ModelParams m, v;
  std::int64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Model {
  TrainConfig cfg;
  ModelDims dims;
  ModelParams params;
  Normalizer norm;
  AdamState adam;
};

/// Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases,
/// layer-norm scales 1 and offsets 0. Positional tables use their row count
/// as fan-in. Deterministic per seed.
ModelParams init_params(const TrainConfig& cfg, const ModelDims& dims, std::uint64_t seed);
Model init_model(const TrainConfig& cfg, const ModelDims& dims, std::uint64_t seed);

/// A run of (rtg, state, decision) tuples. Rows with valid == 0 are padding
/// and are dropped before the transformer sees the sequence, so they add
/// nothing to any prediction, loss, or gradient.
struct TupleSeq {
  VectorXd rtg;             // n
  MatrixXd states;          // n x S
  MatrixXd actions;         // n x A
  std::vector<char> valid;  // n

  int size() const { return static_cast<int>(rtg.size()); }
  int num_valid() const;
  static TupleSeq empty(const ModelDims& dims);
};

/// Token order: prompt tuples then recent tuples, each tuple as
/// (rtg, state, decision). Positional rows are indexed per segment by the
/// tuple's rank among that segment's valid tuples.
struct TokenLayout {
  int num_tokens = 0;
  std::vector<int> recent_state_tokens;  // one per valid recent tuple
  std::vector<int> recent_rows;          // index into the recent TupleSeq
};

MatrixXd embed_tokens(const ModelParams& params, const Normalizer& norm, const TupleSeq& prompt,
                      const TupleSeq& recent, TokenLayout* layout = nullptr);

/// Predicted raw decisions, one row per valid recent tuple, read at its state
/// token. Rows follow the recent sequence order.
MatrixXd forward(const Model& model, const TupleSeq& prompt, const TupleSeq& recent);
MatrixXd forward(const ModelParams& params, const Normalizer& norm, int heads, const TupleSeq& prompt,
                 const TupleSeq& recent);

/// Mean over all entries of squared differences. Throws on shape mismatch.
double mse_loss(const MatrixXd& pred, const MatrixXd& target);

/// Adds scale * d(SSE)/d(params) into `grad`, where SSE is the sum of
/// squared errors between the predictions and the decisions stored in the
/// valid recent tuples. Returns the SSE.
double accumulate_gradient(const ModelParams& params, const Normalizer& norm, int heads, const TupleSeq& prompt,
                           const TupleSeq& recent, double scale, ModelParams& grad);

/// Gradient of mse_loss(forward(...), recent decisions) for one input.
ModelParams backward(const Model& model, const TupleSeq& prompt, const TupleSeq& recent, double* loss = nullptr);

/// Bias-corrected Adam; increments the step counter.
void adam_step(ModelParams& params, const ModelParams& grad, AdamState& state, double learning_rate,
               const AdamHyper& hyper = {});

/// Writes `<prefix>.json` (dims, config, step, normaliser, tensor order and
/// shapes) and `<prefix>.bin` (little-endian float64: parameters, then Adam
/// first moments, then second moments, each in visit order).
void save_checkpoint(const Model& model, const std::filesystem::path& prefix);
Model load_checkpoint(const std::filesystem::path& prefix);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

}  // namespace risdt
