#include "wwh/model.hpp"

#include <cmath>

namespace wwh {

using nlohmann::json;

void ModelConfig::validate() const {
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (d_model == 0 || n_heads == 0) throw ConfigError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
}

json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},       {"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"ffn_mult", c.ffn_mult},       {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
          {"dropout", c.dropout},         {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

ParamLayout make_layout(const ModelConfig& c) {
  ParamLayout p;
  std::size_t at = 0;
  auto take = [&](std::size_t n, bool decay) {
    const std::size_t off = at;
    at += n;
    if (decay) p.decayed.emplace_back(off, at);
    return off;
  };
  const std::size_t d = c.d_model, f = c.d_ff();
  p.wte = take(c.vocab_size * d, true);
  p.wpe = take(c.max_seq_len * d, true);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    ParamLayout::Layer L;
    L.ln1_g = take(d, false);
    L.ln1_b = take(d, false);
    L.wqkv = take(d * 3 * d, true);
    L.bqkv = take(3 * d, false);
    L.wo = take(d * d, true);
    L.bo = take(d, false);
    L.ln2_g = take(d, false);
    L.ln2_b = take(d, false);
    L.w1 = take(d * f, true);
    L.b1 = take(f, false);
    L.w2 = take(f * d, true);
    L.b2 = take(d, false);
    p.layers.push_back(L);
  }
  p.lnf_g = take(d, false);
  p.lnf_b = take(d, false);
  p.total = at;
  return p;
}

std::vector<double> init_parameters(const ModelConfig& c) {
  c.validate();
  const ParamLayout p = make_layout(c);
  std::vector<double> w(p.total, 0.0);
  Rng rng(derive_seed(c.seed, 0x1417));
  auto normal = [&](std::size_t off, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; i += 2) {
      // Box-Muller, both outputs used.
      const double u1 = 1.0 - rng.uniform();
      const double u2 = rng.uniform();
      const double r = std::sqrt(-2.0 * std::log(u1));
      w[off + i] = sd * r * std::cos(2 * M_PI * u2);
      if (i + 1 < n) w[off + i + 1] = sd * r * std::sin(2 * M_PI * u2);
    }
  };
  auto ones = [&](std::size_t off, std::size_t n) { std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(off), n, 1.0); };
  const std::size_t d = c.d_model, f = c.d_ff();
  const double resid = 0.02 / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  normal(p.wte, c.vocab_size * d, 0.02);
  normal(p.wpe, c.max_seq_len * d, 0.01);
  for (const auto& L : p.layers) {
    ones(L.ln1_g, d);
    ones(L.ln2_g, d);
    normal(L.wqkv, d * 3 * d, 0.02);
    normal(L.wo, d * d, resid);
    normal(L.w1, d * f, 0.02);
    normal(L.w2, f * d, resid);
  }
  ones(p.lnf_g, d);
  return w;
}

}  // namespace wwh
