#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rulmdp/autodiff.hpp"
#include "rulmdp/ingest.hpp"

namespace rulmdp {

struct TransformerConfig {
  std::size_t feature_dim = 1;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_k = 8;
  std::size_t d_v = 8;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t window_len = kDefaultWindowLen;
  double dropout = 0.1;
  bool use_decoder = false;
  double rul_cap = kDefaultRulCap;

  // Throws ValidationError unless d_model == n_heads * d_k and all sizes are >= 1.
  void validate() const;
};

nlohmann::ordered_json to_json(const TransformerConfig& c);
TransformerConfig transformer_config_from_json(const nlohmann::json& j);

// Weights and dimensions of the attention model. Parameter names:
//   embed.{weight,bias}                      input embedding
//   enc{l}.attn.{wq,wk,wv,wo}                per-layer projections; column block h of
//                                            wq/wk/wv (and row block h of wo) is head h
//   enc{l}.ln{1,2}.{gain,bias}
//   enc{l}.ffn.{w1,b1,w2,b2}
//   dec_embed.{weight,bias}, dec{l}.self.*, dec{l}.cross.*, dec{l}.ln{1,2,3}.*,
//   dec{l}.ffn.{w3,b3,w4,b4}                 only with use_decoder
//   head.{weight,bias}                       prediction head
class TransformerModel {
 public:
  TransformerModel(const TransformerConfig& config, std::uint64_t seed);
  TransformerModel(const TransformerConfig& config, ParamSet params);

  const TransformerConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

 private:
  TransformerConfig config_;
  ParamSet params_;
};

// Sinusoidal encoding: PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(...).
Tensor positional_encoding(std::size_t n, std::size_t d_model);

struct AttentionOutput {
  Tensor output;                // [n x d_model] after the output projection
  std::vector<Tensor> weights;  // per head, [q_len x kv_len], rows sum to 1
};

// Multi-head attention using projections `<prefix>.{wq,wk,wv,wo}` of `model`.
AttentionOutput self_attention(const Tensor& x, const TransformerModel& model, const std::string& prefix,
                               bool causal);
AttentionOutput cross_attention(const Tensor& decoder_state, const Tensor& encoder_output,
                                const TransformerModel& model, const std::string& prefix);

// max(0, x Wa + ba) Wb + bb, applied row-wise.
Var ffn_block(Var x, Var wa, Var ba, Var wb, Var bb);
Tensor ffn_block(const Tensor& x, const Tensor& wa, const Tensor& ba, const Tensor& wb, const Tensor& bb);

// Evaluation-mode encoder: embedded window plus positional encoding through
// n_layers of (self-attention, add&norm, FFN, add&norm). Returns [n x d_model].
Tensor encode(const Tensor& window, const TransformerModel& model);
// Evaluation-mode decoder over shifted targets [m x 1]; returns [m x d_model].
Tensor decode(const Tensor& targets_shifted, const Tensor& encoder_h, const TransformerModel& model);
// rul_cap * sigmoid(mean_rows(h) W + b).
double predict_rul(const Tensor& h, const Tensor& head_weight, const Tensor& head_bias, double rul_cap);

// Differentiable forward over a batch of windows; returns [B x 1] predictions
// scaled to (0, 1). Parameters are gradient leaves when `with_grad` is set.
// Dropout is active only when `dropout_rng` is non-null.
Var forward_batch(Tape& tape, TransformerModel& model, const std::vector<const Tensor*>& windows, bool with_grad,
                  Rng* dropout_rng);

double predict(const TransformerModel& model, const Tensor& window);
std::vector<double> predict_all(const TransformerModel& model, const std::vector<RulWindow>& windows);

enum class LossKind { Mse, Smape };
LossKind loss_kind_from_string(const std::string& s);

struct ForecasterTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  LossKind loss = LossKind::Mse;
  std::uint64_t seed = 42;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean training loss per epoch, targets scaled to [0, 1]
};

// Minibatch Adam training. Throws NumericError with epoch/batch on a non-finite loss.
TrainHistory train(TransformerModel& model, const std::vector<RulWindow>& windows, const ForecasterTrainConfig& config);

struct CurvePoint {
  std::uint32_t unit_id = 0;
  std::uint32_t end_cycle = 0;
  double true_rul = 0.0;
  double pred_rul = 0.0;
};

struct EvalResult {
  double rmse = 0.0;
  double mae = 0.0;
  std::vector<CurvePoint> curve;  // sorted by (unit_id, end_cycle)
};

EvalResult evaluate(const TransformerModel& model, const std::vector<RulWindow>& windows);
EvalResult evaluate_predictions(const std::vector<RulWindow>& windows, const std::vector<double>& predictions);
// Labels are revealed one window late: the prediction at end cycle c is the
// label at c - window_len of the same unit, or rul_cap before any label exists.
std::vector<double> persistence_baseline(const std::vector<RulWindow>& windows, double rul_cap);
// `unit_id,end_cycle,true_rul,pred_rul`
std::string curve_to_csv(const std::vector<CurvePoint>& curve);

}  // namespace rulmdp
