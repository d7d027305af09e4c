#include <doctest.h>

#include <cmath>

#include "rulmdp/checkpoint.hpp"
#include "rulmdp/errors.hpp"
#include "rulmdp/forecaster.hpp"
#include "rulmdp/synthetic.hpp"

using namespace rulmdp;

namespace {

TransformerConfig tiny(bool decoder = false) {
  TransformerConfig c;
  c.feature_dim = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_k = 4;
  c.d_v = 4;
  c.n_layers = 1;
  c.d_ff = 16;
  c.window_len = 5;
  c.dropout = 0.0;
  c.use_decoder = decoder;
  return c;
}

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

RulWindow window(const Tensor& x, double target, std::uint32_t unit, std::uint32_t cycle) {
  RulWindow w;
  w.inputs = x;
  w.target_rul = target;
  w.unit_id = unit;
  w.end_cycle = cycle;
  return w;
}

}  // namespace

TEST_CASE("positional encoding matches the sinusoid formula") {
  const Tensor pe = positional_encoding(6, 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(pe(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe(3, 2) == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 8))));
  CHECK(pe(3, 3) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 8))));
  CHECK(pe(5, 7) == doctest::Approx(std::cos(5.0 / std::pow(10000.0, 6.0 / 8))));
}

TEST_CASE("attention weights are row-stochastic and the causal mask blocks the future") {
  TransformerModel m(tiny(true), 1);
  Rng rng(2);
  const Tensor x = random_tensor({5, 8}, rng);
  const auto plain = self_attention(x, m, "enc0.attn", false);
  REQUIRE(plain.weights.size() == 2);
  for (const auto& w : plain.weights) {
    REQUIRE(w.shape() == Shape{5, 5});
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += w(r, c);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  const auto masked = self_attention(x, m, "enc0.attn", true);
  for (const auto& w : masked.weights)
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = r + 1; c < 5; ++c) CHECK(w(r, c) == 0.0);
  Tensor later = x;
  for (std::size_t c = 0; c < 8; ++c) later(4, c) += 10.0;
  const auto moved = self_attention(later, m, "enc0.attn", true);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(moved.output(r, c) == masked.output(r, c));

  const Tensor enc = random_tensor({5, 8}, rng), dec = random_tensor({3, 8}, rng);
  const auto cross = cross_attention(dec, enc, m, "dec0.cross");
  CHECK(cross.weights.front().shape() == Shape{3, 5});
  CHECK(cross.output.shape() == Shape{3, 8});
  CHECK_THROWS_AS(self_attention(random_tensor({5, 7}, rng), m, "enc0.attn", false), ShapeError);
}

TEST_CASE("ffn block and prediction head hand values") {
  const Tensor x = Tensor::row({1.0, -1.0});
  const Tensor wa = Tensor::matrix({{1, 0}, {0, 1}}), ba = Tensor::row({0, 0});
  const Tensor wb = Tensor::matrix({{2}, {3}}), bb = Tensor::row({1});
  CHECK(ffn_block(x, wa, ba, wb, bb).item() == 3.0);

  const Tensor h = Tensor::matrix({{1, 2}, {3, 0}});
  // pooled = (2, 1); logit = 0.5*2 - 1*1 + 0 = 0 -> cap / 2
  CHECK(predict_rul(h, Tensor::matrix({{0.5}, {-1.0}}), Tensor::row({0.0}), 125.0) == doctest::Approx(62.5));
  CHECK(predict_rul(h, Tensor::matrix({{100}, {0}}), Tensor::row({0.0}), 125.0) == doctest::Approx(125.0));
}

TEST_CASE("batched prediction equals the evaluation-mode encoder plus head") {
  TransformerModel m(tiny(), 4);
  Rng rng(5);
  const Tensor w = random_tensor({5, 3}, rng);
  const double direct = predict_rul(encode(w, m), m.params().at("head.weight").value, m.params().at("head.bias").value,
                                    m.config().rul_cap);
  CHECK(predict(m, w) == doctest::Approx(direct).epsilon(1e-12));
  const auto all = predict_all(m, {window(w, 0, 1, 5)});
  CHECK(all[0] == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("decoder variant predicts within the cap") {
  TransformerModel m(tiny(true), 6);
  Rng rng(6);
  const double y = predict(m, random_tensor({5, 3}, rng));
  CHECK(y > 0.0);
  CHECK(y < 125.0);
}

TEST_CASE("config validation") {
  auto c = tiny();
  c.d_model = 9;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(TransformerModel(c, 1), ValidationError);
  CHECK(transformer_config_from_json(to_json(tiny(true))).use_decoder);
}

TEST_CASE("zero epochs leave parameters unchanged; training lowers the loss") {
  SyntheticFleetConfig fc;
  fc.units = 3;
  fc.min_life = 40;
  fc.max_life = 60;
  const auto units = synthetic_fleet(fc);
  const auto stats = fit_normalizer(units);
  const auto windows = make_windows(units, stats, 5, 125.0);
  auto c = tiny();
  c.feature_dim = stats.feature_dim();
  TransformerModel m(c, 7);
  const std::string before = serialize_checkpoint(to_json(c), m.params());
  ForecasterTrainConfig tc;
  tc.epochs = 0;
  CHECK(train(m, windows, tc).epoch_loss.empty());
  CHECK(serialize_checkpoint(to_json(c), m.params()) == before);
  tc.epochs = 8;
  tc.lr = 3e-3;
  const auto hist = train(m, windows, tc);
  REQUIRE(hist.epoch_loss.size() == 8);
  CHECK(hist.epoch_loss.back() < 0.5 * hist.epoch_loss.front());

  TransformerModel again(c, 7);
  train(again, windows, tc);
  CHECK(serialize_checkpoint(to_json(c), again.params()) == serialize_checkpoint(to_json(c), m.params()));
}

TEST_CASE("checkpoint round trip is bit exact and ordered") {
  TransformerModel m(tiny(true), 8);
  const std::string text = serialize_checkpoint(to_json(m.config()), m.params());
  const auto ck = parse_checkpoint(text);
  for (const auto& [name, p] : m.params()) CHECK(ck.params.at(name).value == p.value);
  CHECK(serialize_checkpoint(ck.config, ck.params) == text);
  CHECK(text.find("\"dec0.") < text.find("\"embed."));
  CHECK(text.find("\"embed.") < text.find("\"enc0."));
  CHECK_THROWS_AS(parse_checkpoint("{\"format_version\": 99}"), DataError);
}

TEST_CASE("persistence baseline and metrics by hand") {
  const Tensor x({2, 1});
  std::vector<RulWindow> w{window(x, 10, 1, 2), window(x, 9, 1, 3), window(x, 8, 1, 4), window(x, 7, 1, 5)};
  // Lag = window length 2: cycle 4 sees the label of cycle 2, cycle 5 that of cycle 3.
  CHECK(persistence_baseline(w, 125.0) == std::vector<double>{125, 125, 10, 9});
  const auto r = evaluate_predictions(w, {10, 9, 10, 9});
  CHECK(r.rmse == doctest::Approx(std::sqrt(8.0 / 4)));
  CHECK(r.mae == doctest::Approx(1.0));
  CHECK(curve_to_csv(r.curve).rfind("unit_id,end_cycle,true_rul,pred_rul\n1,2,10,10\n", 0) == 0);
}
