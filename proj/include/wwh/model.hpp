#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "wwh/error.hpp"
#include "wwh/rng.hpp"

namespace wwh {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_seq_len = 256;
  std::size_t vocab_size = 0;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
  std::size_t d_ff() const { return ffn_mult * d_model; }
  std::size_t head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Offsets of every tensor in the flat parameter vector. Matrices are row
/// major with shape (in, out) so that activations multiply on the left.
struct ParamLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::size_t wte = 0;  // vocab x d, tied with the output head
  std::size_t wpe = 0;  // max_seq_len x d
  std::vector<Layer> layers;
  std::size_t lnf_g = 0, lnf_b = 0;
  std::size_t total = 0;
  /// [begin, end) ranges that receive weight decay (the 2-D weights).
  std::vector<std::pair<std::size_t, std::size_t>> decayed;
};

ParamLayout make_layout(const ModelConfig& c);

/// Fresh parameters: N(0, 0.02) weights, residual output projections scaled
/// by 1/sqrt(2 n_layers), unit LayerNorm gains, zero biases.
std::vector<double> init_parameters(const ModelConfig& c);

/// Pre-norm GPT-style decoder. Parameters live in one flat vector; the
/// gradient of forward_backward has the same layout.
template <typename T>
class Transformer {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;
  using CMapV = Eigen::Map<const RowVec>;

  static constexpr T kLnEps = T(1e-5);

  explicit Transformer(const ModelConfig& cfg) : Transformer(cfg, init_parameters(cfg)) {}

  Transformer(const ModelConfig& cfg, const std::vector<double>& params) : cfg_(cfg), layout_(make_layout(cfg)) {
    cfg_.validate();
    if (params.size() != layout_.total) {
      throw ConfigError("parameter count " + std::to_string(params.size()) + " does not match config (" +
                        std::to_string(layout_.total) + ")");
    }
    w_.assign(params.begin(), params.end());
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<T>& parameters() { return w_; }
  const std::vector<T>& parameters() const { return w_; }
  std::size_t num_parameters() const { return w_.size(); }

  std::vector<double> parameters_as_double() const { return {w_.begin(), w_.end()}; }

  // -------------------------------------------------------------------------
  // Training path

  struct SeqLoss {
    double nll_sum = 0;  // sum of -log p over targeted positions
    std::size_t count = 0;
  };

  /// One sequence of a batch: token t is a target when mask[t] is true; it
  /// is predicted from position t - 1.
  struct SeqRef {
    std::span<const int> ids;
    const std::vector<bool>* mask = nullptr;
  };

  /// Teacher-forced pass over a batch of sequences. Position-wise layers run
  /// on the concatenation; attention stays within each sequence. When `grad`
  /// is given, accumulates d(scale * nll_sum)/d(params) into it. Dropout is
  /// applied only when `dropout_rng` is given and the configured rate is
  /// positive.
  SeqLoss forward_backward(std::span<const SeqRef> batch, T scale, std::vector<T>* grad, Rng* dropout_rng) const {
    Segments seg;
    std::vector<std::size_t> rows, targets;
    for (const auto& s : batch) {
      check_ids(s.ids);
      if (!s.mask || s.mask->size() != s.ids.size()) throw Error("mask length differs from sequence length");
      const std::size_t off = seg.ids.size();
      seg.starts.push_back(off);
      seg.ids.insert(seg.ids.end(), s.ids.begin(), s.ids.end());
      for (std::size_t t = 1; t < s.ids.size(); ++t) {
        if ((*s.mask)[t]) {
          rows.push_back(off + t - 1);
          targets.push_back(static_cast<std::size_t>(s.ids[t]));
        }
      }
    }
    seg.starts.push_back(seg.ids.size());
    SeqLoss out;
    out.count = rows.size();
    if (rows.empty()) return out;

    Cache c;
    const bool train = dropout_rng && cfg_.dropout > 0;
    run(seg, c, train ? dropout_rng : nullptr);

    const std::size_t d = cfg_.d_model;
    const std::size_t V = cfg_.vocab_size;
    CMapM wte = cmat(layout_.wte, V, d);
    Mat sel(rows.size(), d);
    for (std::size_t r = 0; r < rows.size(); ++r) sel.row(r) = c.xf.row(rows[r]);
    Mat logits = sel * wte.transpose();
    Mat dlogits;
    if (grad) dlogits.resize(rows.size(), V);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto row = logits.row(r);
      const T m = row.maxCoeff();
      const T lse = m + std::log((row.array() - m).exp().sum());
      out.nll_sum -= static_cast<double>(row(targets[r]) - lse);
      if (grad) {
        dlogits.row(r) = ((row.array() - lse).exp() * scale).matrix();
        dlogits(r, targets[r]) -= scale;
      }
    }
    if (!grad) return out;

    std::vector<T>& g = *grad;
    if (g.size() != w_.size()) g.assign(w_.size(), T(0));
    gmat(g, layout_.wte, V, d).noalias() += dlogits.transpose() * sel;
    Mat dxf = Mat::Zero(static_cast<Eigen::Index>(seg.ids.size()), d);
    Mat dsel = dlogits * wte;
    for (std::size_t r = 0; r < rows.size(); ++r) dxf.row(rows[r]) += dsel.row(r);
    backward(seg, c, dxf, g);
    return out;
  }

  SeqLoss forward_backward(std::span<const int> ids, const std::vector<bool>& mask, T scale, std::vector<T>* grad,
                           Rng* dropout_rng) const {
    const SeqRef one{ids, &mask};
    return forward_backward(std::span<const SeqRef>(&one, 1), scale, grad, dropout_rng);
  }

  /// Log-probabilities of the next token at every position (n x V).
  Mat log_probs(std::span<const int> ids) const {
    check_ids(ids);
    Segments seg{{ids.begin(), ids.end()}, {0, ids.size()}};
    Cache c;
    run(seg, c, nullptr);
    Mat logits = c.xf * cmat(layout_.wte, cfg_.vocab_size, cfg_.d_model).transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) log_softmax_inplace(logits.row(r));
    return logits;
  }

  // -------------------------------------------------------------------------
  // Incremental decoding

  struct KvCache {
    std::vector<Mat> k, v;  // per layer, max_seq_len x d
    std::size_t len = 0;
  };

  KvCache make_cache() const {
    KvCache kv;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      kv.k.emplace_back(cfg_.max_seq_len, cfg_.d_model);
      kv.v.emplace_back(cfg_.max_seq_len, cfg_.d_model);
    }
    return kv;
  }

  /// Appends `token` at position kv.len and returns next-token log-probs.
  RowVec step(int token, KvCache& kv) const {
    if (token < 0 || static_cast<std::size_t>(token) >= cfg_.vocab_size) throw Error("token id out of vocabulary");
    if (kv.len >= cfg_.max_seq_len) throw Error("sequence exceeds max_seq_len");
    const std::size_t d = cfg_.d_model, H = cfg_.n_heads, dh = cfg_.head_dim(), f = cfg_.d_ff();
    const std::size_t p = kv.len;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    RowVec x = cmat(layout_.wte, cfg_.vocab_size, d).row(token) + cmat(layout_.wpe, cfg_.max_seq_len, d).row(p);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto& L = layout_.layers[l];
      RowVec h = ln_row(x, L.ln1_g, L.ln1_b);
      RowVec qkv = h * cmat(L.wqkv, d, 3 * d) + cvec(L.bqkv, 3 * d);
      kv.k[l].row(p) = qkv.segment(d, d);
      kv.v[l].row(p) = qkv.segment(2 * d, d);
      RowVec o(d);
      for (std::size_t hh = 0; hh < H; ++hh) {
        auto q = qkv.segment(hh * dh, dh);
        RowVec s = (kv.k[l].block(0, hh * dh, p + 1, dh) * q.transpose()).transpose() * scale;
        const T m = s.maxCoeff();
        s = (s.array() - m).exp().matrix();
        s /= s.sum();
        o.segment(hh * dh, dh) = s * kv.v[l].block(0, hh * dh, p + 1, dh);
      }
      x += o * cmat(L.wo, d, d) + cvec(L.bo, d);
      RowVec h2 = ln_row(x, L.ln2_g, L.ln2_b);
      RowVec u = h2 * cmat(L.w1, d, f) + cvec(L.b1, f);
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = gelu(u(i));
      x += u * cmat(L.w2, f, d) + cvec(L.b2, d);
    }
    RowVec xf = ln_row(x, layout_.lnf_g, layout_.lnf_b);
    RowVec logits = xf * cmat(layout_.wte, cfg_.vocab_size, d).transpose();
    log_softmax_inplace(logits);
    ++kv.len;
    return logits;
  }

  /// Feeds a prompt through step(); returns the log-probs after its last token.
  RowVec prefill(std::span<const int> ids, KvCache& kv) const {
    if (ids.empty()) throw Error("empty prompt");
    RowVec lp;
    for (int t : ids) lp = step(t, kv);
    return lp;
  }

  // -------------------------------------------------------------------------

  static T gelu(T u) {
    const T c = T(0.7978845608028654);
    return T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
  }

  static T gelu_grad(T u) {
    const T c = T(0.7978845608028654);
    const T t = std::tanh(c * (u + T(0.044715) * u * u * u));
    return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * u * u);
  }

  template <typename Row>
  static void log_softmax_inplace(Row&& row) {
    const T m = row.maxCoeff();
    const T lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }

 private:
  struct LayerCache {
    Mat x_in, xhat1, h1, qkv, o, mask_a, x_mid, xhat2, h2, u, th, g, mask_m;  // th: tanh inside gelu
    RowVec rstd1, rstd2;
    std::vector<Mat> p;  // attention probabilities per head
  };
  /// Concatenated token ids; sequence i spans [starts[i], starts[i+1]).
  struct Segments {
    std::vector<int> ids;
    std::vector<std::size_t> starts;
    std::size_t count() const { return starts.size() - 1; }
  };
  struct Cache {
    Mat mask_e, x_last, xhatf, xf;
    RowVec rstdf;
    std::vector<LayerCache> layers;
  };

  void check_ids(std::span<const int> ids) const {
    if (ids.empty()) throw Error("empty sequence");
    if (ids.size() > cfg_.max_seq_len) {
      throw Error("sequence of length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                  std::to_string(cfg_.max_seq_len));
    }
    for (int t : ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
        throw Error("token id " + std::to_string(t) + " out of vocabulary");
      }
    }
  }

  CMapM cmat(std::size_t off, std::size_t r, std::size_t c) const {
    return CMapM(w_.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  CMapV cvec(std::size_t off, std::size_t n) const { return CMapV(w_.data() + off, static_cast<Eigen::Index>(n)); }
  static MapM gmat(std::vector<T>& g, std::size_t off, std::size_t r, std::size_t c) {
    return MapM(g.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  static Eigen::Map<RowVec> gvec(std::vector<T>& g, std::size_t off, std::size_t n) {
    return Eigen::Map<RowVec>(g.data() + off, static_cast<Eigen::Index>(n));
  }

  RowVec ln_row(const RowVec& x, std::size_t g_off, std::size_t b_off) const {
    const std::size_t d = cfg_.d_model;
    const T mean = x.mean();
    RowVec xc = x.array() - mean;
    const T var = xc.squaredNorm() / static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + kLnEps);
    return (xc.array() * rstd * cvec(g_off, d).array() + cvec(b_off, d).array()).matrix();
  }

  void ln_forward(const Mat& x, std::size_t g_off, std::size_t b_off, Mat& xhat, RowVec& rstd, Mat& y) const {
    const auto n = x.rows();
    const auto d = x.cols();
    xhat.resize(n, d);
    rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mean = x.row(i).mean();
      xhat.row(i) = x.row(i).array() - mean;
      const T var = xhat.row(i).squaredNorm() / static_cast<T>(d);
      rstd(i) = T(1) / std::sqrt(var + kLnEps);
      xhat.row(i) *= rstd(i);
    }
    y = (xhat.array().rowwise() * cvec(g_off, d).array()).rowwise() + cvec(b_off, d).array();
  }

  /// Returns dx; accumulates gain and bias gradients.
  Mat ln_backward(const Mat& dy, const Mat& xhat, const RowVec& rstd, std::size_t g_off, std::size_t b_off,
                  std::vector<T>& g) const {
    const auto d = dy.cols();
    gvec(g, g_off, d) += (dy.array() * xhat.array()).colwise().sum().matrix();
    gvec(g, b_off, d) += dy.colwise().sum();
    Mat dxhat = dy.array().rowwise() * cvec(g_off, d).array();
    Mat dx(dy.rows(), d);
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const T m1 = dxhat.row(i).mean();
      const T m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<T>(d);
      dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * rstd(i);
    }
    return dx;
  }

  Mat dropout_mask(Eigen::Index r, Eigen::Index c, Rng* rng) const {
    if (!rng) return {};
    const T keep = T(1) / static_cast<T>(1 - cfg_.dropout);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->bernoulli(cfg_.dropout) ? T(0) : keep;
    return m;
  }

  void run(const Segments& seg, Cache& c, Rng* rng) const {
    const auto& ids = seg.ids;
    const auto n = static_cast<Eigen::Index>(ids.size());
    const std::size_t d = cfg_.d_model, H = cfg_.n_heads, dh = cfg_.head_dim(), f = cfg_.d_ff();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    CMapM wte = cmat(layout_.wte, cfg_.vocab_size, d);
    CMapM wpe = cmat(layout_.wpe, cfg_.max_seq_len, d);

    Mat x(n, d);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      for (std::size_t t = seg.starts[s]; t < seg.starts[s + 1]; ++t) {
        x.row(static_cast<Eigen::Index>(t)) = wte.row(ids[t]) + wpe.row(static_cast<Eigen::Index>(t - seg.starts[s]));
      }
    }
    c.mask_e = dropout_mask(n, d, rng);
    if (rng) x.array() *= c.mask_e.array();

    c.layers.resize(cfg_.n_layers);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto& L = layout_.layers[l];
      LayerCache& lc = c.layers[l];
      lc.x_in = x;
      ln_forward(x, L.ln1_g, L.ln1_b, lc.xhat1, lc.rstd1, lc.h1);
      lc.qkv = (lc.h1 * cmat(L.wqkv, d, 3 * d)).rowwise() + cvec(L.bqkv, 3 * d);
      lc.o.resize(n, d);
      lc.p.resize(H * seg.count());
      for (std::size_t s = 0; s < seg.count(); ++s) {
        const auto off = static_cast<Eigen::Index>(seg.starts[s]);
        const auto len = static_cast<Eigen::Index>(seg.starts[s + 1] - seg.starts[s]);
        for (std::size_t h = 0; h < H; ++h) {
          auto q = lc.qkv.block(off, h * dh, len, dh);
          auto k = lc.qkv.block(off, d + h * dh, len, dh);
          auto v = lc.qkv.block(off, 2 * d + h * dh, len, dh);
          Mat& p = lc.p[s * H + h];
          p.noalias() = q * k.transpose();
          for (Eigen::Index i = 0; i < len; ++i) {
            auto row = p.row(i).head(i + 1);
            row *= scale;
            const T m = row.maxCoeff();
            row = (row.array() - m).exp().matrix();
            row /= row.sum();
            assert(std::abs(row.sum() - T(1)) < T(1e-4));
            p.row(i).tail(len - i - 1).setZero();
          }
          lc.o.block(off, h * dh, len, dh).noalias() = p * v;
        }
      }
      Mat a = (lc.o * cmat(L.wo, d, d)).rowwise() + cvec(L.bo, d);
      lc.mask_a = dropout_mask(n, d, rng);
      if (rng) a.array() *= lc.mask_a.array();
      x += a;
      lc.x_mid = x;
      ln_forward(x, L.ln2_g, L.ln2_b, lc.xhat2, lc.rstd2, lc.h2);
      lc.u = (lc.h2 * cmat(L.w1, d, f)).rowwise() + cvec(L.b1, f);
      {
        const T c0 = T(0.7978845608028654);
        auto u = lc.u.array();
        lc.th = (c0 * (u + T(0.044715) * u.cube())).tanh().matrix();
        lc.g = (T(0.5) * u * (T(1) + lc.th.array())).matrix();
      }
      Mat m = (lc.g * cmat(L.w2, f, d)).rowwise() + cvec(L.b2, d);
      lc.mask_m = dropout_mask(n, d, rng);
      if (rng) m.array() *= lc.mask_m.array();
      x += m;
    }
    c.x_last = x;
    ln_forward(x, layout_.lnf_g, layout_.lnf_b, c.xhatf, c.rstdf, c.xf);
  }

  void backward(const Segments& seg, const Cache& c, const Mat& dxf, std::vector<T>& g) const {
    const auto& ids = seg.ids;
    const auto n = static_cast<Eigen::Index>(ids.size());
    const std::size_t d = cfg_.d_model, H = cfg_.n_heads, dh = cfg_.head_dim(), f = cfg_.d_ff();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const bool dropped = c.mask_e.size() > 0;

    Mat dx = ln_backward(dxf, c.xhatf, c.rstdf, layout_.lnf_g, layout_.lnf_b, g);
    for (std::size_t li = cfg_.n_layers; li-- > 0;) {
      const auto& L = layout_.layers[li];
      const LayerCache& lc = c.layers[li];

      Mat dm = dx;
      if (dropped) dm.array() *= lc.mask_m.array();
      gmat(g, L.w2, f, d).noalias() += lc.g.transpose() * dm;
      gvec(g, L.b2, d) += dm.colwise().sum();
      Mat du = dm * cmat(L.w2, f, d).transpose();
      {
        const T c0 = T(0.7978845608028654);
        auto u = lc.u.array();
        auto t = lc.th.array();
        du.array() *= T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t.square()) * c0 * (T(1) + T(3 * 0.044715) * u.square());
      }
      gmat(g, L.w1, d, f).noalias() += lc.h2.transpose() * du;
      gvec(g, L.b1, f) += du.colwise().sum();
      Mat dh2 = du * cmat(L.w1, d, f).transpose();
      dx += ln_backward(dh2, lc.xhat2, lc.rstd2, L.ln2_g, L.ln2_b, g);

      Mat da = dx;
      if (dropped) da.array() *= lc.mask_a.array();
      gmat(g, L.wo, d, d).noalias() += lc.o.transpose() * da;
      gvec(g, L.bo, d) += da.colwise().sum();
      Mat dout = da * cmat(L.wo, d, d).transpose();
      Mat dqkv(n, 3 * d);
      for (std::size_t s = 0; s < seg.count(); ++s) {
        const auto off = static_cast<Eigen::Index>(seg.starts[s]);
        const auto len = static_cast<Eigen::Index>(seg.starts[s + 1] - seg.starts[s]);
        for (std::size_t h = 0; h < H; ++h) {
          auto q = lc.qkv.block(off, h * dh, len, dh);
          auto k = lc.qkv.block(off, d + h * dh, len, dh);
          auto v = lc.qkv.block(off, 2 * d + h * dh, len, dh);
          const Mat& p = lc.p[s * H + h];
          auto dO = dout.block(off, h * dh, len, dh);
          Mat dp = dO * v.transpose();
          dqkv.block(off, 2 * d + h * dh, len, dh).noalias() = p.transpose() * dO;
          Mat ds(len, len);
          for (Eigen::Index i = 0; i < len; ++i) {
            const T dot = p.row(i).dot(dp.row(i));
            ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)) * scale;
          }
          dqkv.block(off, h * dh, len, dh).noalias() = ds * k;
          dqkv.block(off, d + h * dh, len, dh).noalias() = ds.transpose() * q;
        }
      }
      gmat(g, L.wqkv, d, 3 * d).noalias() += lc.h1.transpose() * dqkv;
      gvec(g, L.bqkv, 3 * d) += dqkv.colwise().sum();
      Mat dh1 = dqkv * cmat(L.wqkv, d, 3 * d).transpose();
      dx += ln_backward(dh1, lc.xhat1, lc.rstd1, L.ln1_g, L.ln1_b, g);
    }
    if (dropped) dx.array() *= c.mask_e.array();
    MapM gte = gmat(g, layout_.wte, cfg_.vocab_size, d);
    MapM gpe = gmat(g, layout_.wpe, cfg_.max_seq_len, d);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      for (std::size_t t = seg.starts[s]; t < seg.starts[s + 1]; ++t) {
        gte.row(ids[t]) += dx.row(static_cast<Eigen::Index>(t));
        gpe.row(static_cast<Eigen::Index>(t - seg.starts[s])) += dx.row(static_cast<Eigen::Index>(t));
      }
    }
  }

  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<T> w_;
};

}  // namespace wwh
