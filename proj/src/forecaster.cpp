#include "rulmdp/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"
#include "rulmdp/nn.hpp"
#include "rulmdp/optim.hpp"

namespace rulmdp {

namespace {

// Resolves parameter names to tape nodes, once per tape.
class Binder {
 public:
  Binder(Tape& tape, ParamSet* grads, const ParamSet& params) : tape_(tape), grads_(grads), params_(params) {}

  Var operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var v = grads_ ? tape_.param(grads_->at(name)) : tape_.leaf(params_.at(name).value);
    cache_.emplace(name, v);
    return v;
  }
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParamSet* grads_;
  const ParamSet& params_;
  std::map<std::string, Var> cache_;
};

std::string L(const char* stem, std::size_t layer) { return stem + std::to_string(layer); }

Var maybe_dropout(Var x, double rate, Rng* rng) { return rng ? dropout(x, rate, *rng) : x; }

Var tiled_pe(Tape& tape, std::size_t batch, std::size_t n, std::size_t d) {
  const Tensor pe = positional_encoding(n, d);
  Tensor tiled({batch * n, d});
  for (std::size_t b = 0; b < batch; ++b) std::copy(pe.data().begin(), pe.data().end(), tiled.ptr() + b * n * d);
  return tape.constant(std::move(tiled));
}

Var multi_head(Binder& P, const std::string& prefix, Var query_src, Var kv_src, const AttentionShape& shape,
               std::vector<Tensor>* weights) {
  Var q = matmul(query_src, P(prefix + ".wq"));
  Var k = matmul(kv_src, P(prefix + ".wk"));
  Var v = matmul(kv_src, P(prefix + ".wv"));
  Var heads = scaled_dot_attention(q, k, v, shape, weights);
  return matmul(heads, P(prefix + ".wo"));
}

Var add_norm(Binder& P, const std::string& prefix, Var residual, Var update) {
  return layer_norm(add(residual, update), P(prefix + ".gain"), P(prefix + ".bias"));
}

Var embed(Binder& P, const std::string& name, Var x, std::size_t batch, std::size_t len, std::size_t d) {
  Var e = add_bias(matmul(x, P(name + ".weight")), P(name + ".bias"));
  return add(e, tiled_pe(P.tape(), batch, len, d));
}

Var run_encoder(Binder& P, const TransformerConfig& c, Var x, std::size_t batch, Rng* rng) {
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = L("enc", l);
    AttentionShape shape{batch, c.n_heads, c.window_len, c.window_len, false};
    Var attn = multi_head(P, pre + ".attn", x, x, shape, nullptr);
    x = add_norm(P, pre + ".ln1", x, maybe_dropout(attn, c.dropout, rng));
    Var ff = ffn_block(x, P(pre + ".ffn.w1"), P(pre + ".ffn.b1"), P(pre + ".ffn.w2"), P(pre + ".ffn.b2"));
    x = add_norm(P, pre + ".ln2", x, maybe_dropout(ff, c.dropout, rng));
  }
  return x;
}

Var run_decoder(Binder& P, const TransformerConfig& c, Var d, Var enc, std::size_t batch, std::size_t m,
                std::size_t n, Rng* rng) {
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = L("dec", l);
    Var self_attn = multi_head(P, pre + ".self", d, d, {batch, c.n_heads, m, m, true}, nullptr);
    d = add_norm(P, pre + ".ln1", d, maybe_dropout(self_attn, c.dropout, rng));
    Var cross = multi_head(P, pre + ".cross", d, enc, {batch, c.n_heads, m, n, false}, nullptr);
    d = add_norm(P, pre + ".ln2", d, maybe_dropout(cross, c.dropout, rng));
    Var ff = ffn_block(d, P(pre + ".ffn.w3"), P(pre + ".ffn.b3"), P(pre + ".ffn.w4"), P(pre + ".ffn.b4"));
    d = add_norm(P, pre + ".ln3", d, maybe_dropout(ff, c.dropout, rng));
  }
  return d;
}

Var head_scaled(Binder& P, Var pooled) { return sigmoid(add_bias(matmul(pooled, P("head.weight")), P("head.bias"))); }

Var forward_impl(Binder& P, const TransformerConfig& c, const std::vector<const Tensor*>& windows, Rng* rng) {
  Tape& tape = P.tape();
  const std::size_t batch = windows.size();
  if (batch == 0) throw ValidationError("forward over an empty batch");
  Tensor x({batch * c.window_len, c.feature_dim});
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor& w = *windows[b];
    if (w.rows() != c.window_len || w.cols() != c.feature_dim)
      throw ShapeError("window shape " + shape_string(w.shape()) + " does not match model input [" +
                       std::to_string(c.window_len) + "x" + std::to_string(c.feature_dim) + "]");
    std::copy(w.data().begin(), w.data().end(), x.ptr() + b * w.size());
  }
  Var h = embed(P, "embed", tape.constant(std::move(x)), batch, c.window_len, c.d_model);
  h = maybe_dropout(h, c.dropout, rng);
  h = run_encoder(P, c, h, batch, rng);
  Var pooled;
  if (c.use_decoder) {
    // A single start token (shifted target 0) per sequence.
    Var d = embed(P, "dec_embed", tape.constant(Tensor({batch, 1})), batch, 1, c.d_model);
    d = run_decoder(P, c, d, h, batch, 1, c.window_len, rng);
    pooled = block_mean_rows(d, 1);
  } else {
    pooled = block_mean_rows(h, c.window_len);
  }
  return head_scaled(P, pooled);
}

void add_attention_params(ParamSet& p, const std::string& pre, const TransformerConfig& c, Rng& rng) {
  const std::size_t hk = c.n_heads * c.d_k, hv = c.n_heads * c.d_v;
  p.add(pre + ".wq", init_xavier(c.d_model, hk, rng));
  p.add(pre + ".wk", init_xavier(c.d_model, hk, rng));
  p.add(pre + ".wv", init_xavier(c.d_model, hv, rng));
  p.add(pre + ".wo", init_xavier(hv, c.d_model, rng));
}

void add_norm_params(ParamSet& p, const std::string& pre, std::size_t d) {
  p.add(pre + ".gain", Tensor({1, d}, 1.0));
  p.add(pre + ".bias", Tensor({1, d}, 0.0));
}

ParamSet init_params(const TransformerConfig& c, std::uint64_t seed) {
  c.validate();
  Rng root(seed);
  Rng rng = root.split("transformer-init");
  ParamSet p;
  p.add("embed.weight", init_xavier(c.feature_dim, c.d_model, rng));
  p.add("embed.bias", Tensor({1, c.d_model}));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = L("enc", l);
    add_attention_params(p, pre + ".attn", c, rng);
    add_norm_params(p, pre + ".ln1", c.d_model);
    p.add(pre + ".ffn.w1", init_xavier(c.d_model, c.d_ff, rng));
    p.add(pre + ".ffn.b1", Tensor({1, c.d_ff}));
    p.add(pre + ".ffn.w2", init_xavier(c.d_ff, c.d_model, rng));
    p.add(pre + ".ffn.b2", Tensor({1, c.d_model}));
    add_norm_params(p, pre + ".ln2", c.d_model);
  }
  if (c.use_decoder) {
    p.add("dec_embed.weight", init_xavier(1, c.d_model, rng));
    p.add("dec_embed.bias", Tensor({1, c.d_model}));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string pre = L("dec", l);
      add_attention_params(p, pre + ".self", c, rng);
      add_norm_params(p, pre + ".ln1", c.d_model);
      add_attention_params(p, pre + ".cross", c, rng);
      add_norm_params(p, pre + ".ln2", c.d_model);
      p.add(pre + ".ffn.w3", init_xavier(c.d_model, c.d_ff, rng));
      p.add(pre + ".ffn.b3", Tensor({1, c.d_ff}));
      p.add(pre + ".ffn.w4", init_xavier(c.d_ff, c.d_model, rng));
      p.add(pre + ".ffn.b4", Tensor({1, c.d_model}));
      add_norm_params(p, pre + ".ln3", c.d_model);
    }
  }
  p.add("head.weight", init_xavier(c.d_model, 1, rng));
  p.add("head.bias", Tensor({1, 1}));
  return p;
}

}  // namespace

void TransformerConfig::validate() const {
  if (feature_dim < 1 || d_model < 1 || n_heads < 1 || d_k < 1 || d_v < 1 || n_layers < 1 || d_ff < 1 ||
      window_len < 1)
    throw ValidationError("transformer dimensions must all be >= 1");
  if (d_model != n_heads * d_k)
    throw ValidationError("d_model (" + std::to_string(d_model) + ") must equal n_heads * d_k (" +
                          std::to_string(n_heads) + " * " + std::to_string(d_k) + ")");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (!(rul_cap > 0.0)) throw ValidationError("rul_cap must be positive");
}

nlohmann::ordered_json to_json(const TransformerConfig& c) {
  nlohmann::ordered_json j;
  j["feature_dim"] = c.feature_dim;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_k"] = c.d_k;
  j["d_v"] = c.d_v;
  j["n_layers"] = c.n_layers;
  j["d_ff"] = c.d_ff;
  j["window_len"] = c.window_len;
  j["dropout"] = c.dropout;
  j["use_decoder"] = c.use_decoder;
  j["rul_cap"] = c.rul_cap;
  return j;
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  try {
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_k = j.value("d_k", c.d_k);
    c.d_v = j.value("d_v", c.d_v);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.window_len = j.value("window_len", c.window_len);
    c.dropout = j.value("dropout", c.dropout);
    c.use_decoder = j.value("use_decoder", c.use_decoder);
    c.rul_cap = j.value("rul_cap", c.rul_cap);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("transformer config malformed: ") + e.what());
  }
  c.validate();
  return c;
}

TransformerModel::TransformerModel(const TransformerConfig& config, std::uint64_t seed)
    : config_(config), params_(init_params(config, seed)) {}

TransformerModel::TransformerModel(const TransformerConfig& config, ParamSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const ParamSet reference = init_params(config_, 0);
  if (!reference.same_layout(params_)) throw ShapeError("parameters do not match the transformer configuration");
}

Tensor positional_encoding(std::size_t n, std::size_t d_model) {
  if (n < 1 || d_model < 1) throw ValidationError("positional encoding needs n, d_model >= 1");
  Tensor pe({n, d_model});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d_model));
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

AttentionOutput self_attention(const Tensor& x, const TransformerModel& model, const std::string& prefix,
                               bool causal) {
  const auto& c = model.config();
  if (x.cols() != c.d_model)
    throw ShapeError("self_attention input " + shape_string(x.shape()) + " does not have d_model=" +
                     std::to_string(c.d_model) + " columns");
  Tape tape;
  Binder P(tape, nullptr, model.params());
  AttentionOutput out;
  Var xv = tape.leaf(x);
  out.output = multi_head(P, prefix, xv, xv, {1, c.n_heads, x.rows(), x.rows(), causal}, &out.weights).value();
  return out;
}

AttentionOutput cross_attention(const Tensor& decoder_state, const Tensor& encoder_output,
                                const TransformerModel& model, const std::string& prefix) {
  const auto& c = model.config();
  if (decoder_state.cols() != c.d_model || encoder_output.cols() != c.d_model)
    throw ShapeError("cross_attention d_model mismatch: decoder " + shape_string(decoder_state.shape()) +
                     ", encoder " + shape_string(encoder_output.shape()));
  Tape tape;
  Binder P(tape, nullptr, model.params());
  AttentionOutput out;
  out.output = multi_head(P, prefix, tape.leaf(decoder_state), tape.leaf(encoder_output),
                          {1, c.n_heads, decoder_state.rows(), encoder_output.rows(), false}, &out.weights)
                   .value();
  return out;
}

Var ffn_block(Var x, Var wa, Var ba, Var wb, Var bb) {
  return add_bias(matmul(relu(add_bias(matmul(x, wa), ba)), wb), bb);
}

Tensor ffn_block(const Tensor& x, const Tensor& wa, const Tensor& ba, const Tensor& wb, const Tensor& bb) {
  Tape tape;
  return ffn_block(tape.leaf(x), tape.leaf(wa), tape.leaf(ba), tape.leaf(wb), tape.leaf(bb)).value();
}

Tensor encode(const Tensor& window, const TransformerModel& model) {
  const auto& c = model.config();
  if (window.rows() != c.window_len || window.cols() != c.feature_dim)
    throw ShapeError("encode: window " + shape_string(window.shape()) + " does not match model input");
  Tape tape;
  Binder P(tape, nullptr, model.params());
  Var h = embed(P, "embed", tape.leaf(window), 1, c.window_len, c.d_model);
  return run_encoder(P, c, h, 1, nullptr).value();
}

Tensor decode(const Tensor& targets_shifted, const Tensor& encoder_h, const TransformerModel& model) {
  const auto& c = model.config();
  if (!c.use_decoder) throw ValidationError("decode called on a model without a decoder");
  if (targets_shifted.cols() != 1) throw ShapeError("decode: shifted targets must be [m x 1]");
  if (encoder_h.cols() != c.d_model) throw ShapeError("decode: encoder states must have d_model columns");
  Tape tape;
  Binder P(tape, nullptr, model.params());
  const std::size_t m = targets_shifted.rows();
  Var d = embed(P, "dec_embed", tape.leaf(targets_shifted), 1, m, c.d_model);
  return run_decoder(P, c, d, tape.leaf(encoder_h), 1, m, encoder_h.rows(), nullptr).value();
}

double predict_rul(const Tensor& h, const Tensor& head_weight, const Tensor& head_bias, double rul_cap) {
  if (head_weight.rows() != h.cols() || head_weight.cols() != 1 || head_bias.size() != 1)
    throw ShapeError("predict_rul: head shape mismatch");
  double logit = head_bias[0];
  for (std::size_t j = 0; j < h.cols(); ++j) {
    double pooled = 0.0;
    for (std::size_t i = 0; i < h.rows(); ++i) pooled += h(i, j);
    logit += pooled / static_cast<double>(h.rows()) * head_weight[j];
  }
  const double s = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
  return rul_cap * s;
}

Var forward_batch(Tape& tape, TransformerModel& model, const std::vector<const Tensor*>& windows, bool with_grad,
                  Rng* dropout_rng) {
  Binder P(tape, with_grad ? &model.params() : nullptr, model.params());
  return forward_impl(P, model.config(), windows, dropout_rng);
}

double predict(const TransformerModel& model, const Tensor& window) {
  Tape tape;
  Binder P(tape, nullptr, model.params());
  return model.config().rul_cap * forward_impl(P, model.config(), {&window}, nullptr).value()[0];
}

std::vector<double> predict_all(const TransformerModel& model, const std::vector<RulWindow>& windows) {
  constexpr std::size_t kChunk = 64;
  std::vector<double> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); i += kChunk) {
    std::vector<const Tensor*> batch;
    for (std::size_t j = i; j < std::min(windows.size(), i + kChunk); ++j) batch.push_back(&windows[j].inputs);
    Tape tape;
    Binder P(tape, nullptr, model.params());
    const Tensor y = forward_impl(P, model.config(), batch, nullptr).value();
    for (double v : y.data()) out.push_back(model.config().rul_cap * v);
  }
  return out;
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "smape") return LossKind::Smape;
  throw ValidationError("unknown loss '" + s + "' (expected mse or smape)");
}

TrainHistory train(TransformerModel& model, const std::vector<RulWindow>& windows, const ForecasterTrainConfig& tc) {
  if (windows.empty()) throw ValidationError("training needs at least one window");
  if (tc.batch_size == 0) throw ValidationError("batch_size must be >= 1");
  const auto& c = model.config();
  TrainHistory history;
  AdamState adam;
  adam.config.lr = tc.lr;
  Rng root(tc.seed);
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng order_rng = root.split(2 * epoch);
    Rng drop_rng = root.split(2 * epoch + 1);
    const auto order = order_rng.permutation(windows.size());
    double total = 0.0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += tc.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const Tensor*> inputs;
      Tensor target({end - start, 1});
      for (std::size_t i = start; i < end; ++i) {
        inputs.push_back(&windows[order[i]].inputs);
        target[i - start] = windows[order[i]].target_rul / c.rul_cap;
      }
      Tape tape;
      Var pred = forward_batch(tape, model, inputs, true, c.dropout > 0.0 ? &drop_rng : nullptr);
      Var t = tape.constant(target);
      Var loss;
      if (tc.loss == LossKind::Mse) {
        loss = mean(square(sub(pred, t)));
      } else {
        Var denom = add_scalar(add(abs(pred), abs(t)), 1e-8);
        loss = scale(mean(div(abs(sub(pred, t)), denom)), 2.0);
      }
      const double lv = loss.value().item();
      if (!std::isfinite(lv))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      model.params().zero_grad();
      tape.backward(loss);
      adam_step(model.params(), adam);
      total += lv * static_cast<double>(end - start);
    }
    history.epoch_loss.push_back(total / static_cast<double>(windows.size()));
  }
  return history;
}

EvalResult evaluate_predictions(const std::vector<RulWindow>& windows, const std::vector<double>& predictions) {
  if (windows.empty()) throw ValidationError("evaluation needs at least one window");
  if (windows.size() != predictions.size()) throw ShapeError("prediction count does not match windows");
  EvalResult r;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const double e = predictions[i] - windows[i].target_rul;
    se += e * e;
    ae += std::abs(e);
    r.curve.push_back({windows[i].unit_id, windows[i].end_cycle, windows[i].target_rul, predictions[i]});
  }
  r.rmse = std::sqrt(se / static_cast<double>(windows.size()));
  r.mae = ae / static_cast<double>(windows.size());
  std::stable_sort(r.curve.begin(), r.curve.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.unit_id != b.unit_id ? a.unit_id < b.unit_id : a.end_cycle < b.end_cycle;
  });
  return r;
}

EvalResult evaluate(const TransformerModel& model, const std::vector<RulWindow>& windows) {
  return evaluate_predictions(windows, predict_all(model, windows));
}

std::vector<double> persistence_baseline(const std::vector<RulWindow>& windows, double rul_cap) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> label;
  for (const auto& w : windows) label[{w.unit_id, w.end_cycle}] = w.target_rul;
  std::vector<double> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const std::uint32_t lag = static_cast<std::uint32_t>(w.inputs.rows());
    auto it = w.end_cycle > lag ? label.find({w.unit_id, w.end_cycle - lag}) : label.end();
    out.push_back(it != label.end() ? it->second : rul_cap);
  }
  return out;
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "unit_id,end_cycle,true_rul,pred_rul\n";
  for (const auto& p : curve)
    out += std::to_string(p.unit_id) + "," + std::to_string(p.end_cycle) + "," + format_double(p.true_rul) + "," +
           format_double(p.pred_rul) + "\n";
  return out;
}

}  // namespace rulmdp
