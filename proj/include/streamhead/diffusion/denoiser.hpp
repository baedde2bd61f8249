#pragma once

// x0-predicting temporal transformer over one L-frame window.
//
//   h0 = [x_t | m_ref] W_in + b_in                  (reference by concatenation)
//      + silu(ecs W_c + b_c)                        (per-frame conditions)
//      + silu(sin_emb(t) W_t + b_t)                 (timestep, broadcast)
//      + pos_emb                                    (fixed, per frame)
//   blocks: h += attn(ln(h)); h += mlp(ln(h))       (pre-norm, single head)
//   m0_hat = ln(h) W_out + b_out                    (head starts at zero)
//
// Layer norms carry no affine terms. Gradients are written out by hand;
// tests check them against finite differences.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "streamhead/conditioning/bundle.hpp"
#include "streamhead/error.hpp"
#include "streamhead/motion/motion.hpp"
#include "streamhead/rng.hpp"

namespace streamhead::diffusion {

struct DenoiserConfig {
  int hidden = 64;
  int blocks = 2;
  int feature_width = conditioning::kDefaultFeatureWidth;
  bool use_ckp = true;      // identity keypoints in the per-frame conditions
  bool use_emotion = true;  // emotion one-hot in the per-frame conditions

  int motion_dims() const { return motion::kMotionDims; }
  int ics_width() const { return conditioning::kIcsWidth; }
  int ecs_width() const { return conditioning::ecs_width(feature_width); }

  void validate() const {
    require(hidden >= 2 && hidden % 2 == 0, ErrorKind::Config, "hidden width must be even and >= 2");
    require(blocks >= 0, ErrorKind::Config, "block count must be non-negative");
    require(feature_width >= 1, ErrorKind::Config, "feature width must be positive");
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

inline nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"hidden", c.hidden}, {"blocks", c.blocks}, {"feature_width", c.feature_width},
          {"use_ckp", c.use_ckp}, {"use_emotion", c.use_emotion}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.feature_width = j.at("feature_width").get<int>();
  c.use_ckp = j.at("use_ckp").get<bool>();
  c.use_emotion = j.at("use_emotion").get<bool>();
  c.validate();
  return c;
}

/// Offsets of every tensor inside the flat parameter vector.
struct ParamLayout {
  struct Tensor {
    std::string name;
    Eigen::Index offset, rows, cols;
    Eigen::Index size() const { return rows * cols; }
  };
  std::vector<Tensor> tensors;
  Eigen::Index total = 0;

  Eigen::Index add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    tensors.push_back({std::move(name), total, rows, cols});
    total += rows * cols;
    return tensors.back().offset;
  }

  static ParamLayout for_config(const DenoiserConfig& c) {
    ParamLayout p;
    const int H = c.hidden;
    p.add("w_in", c.ics_width(), H);
    p.add("b_in", 1, H);
    p.add("w_c", c.ecs_width(), H);
    p.add("b_c", 1, H);
    p.add("w_t", H, H);
    p.add("b_t", 1, H);
    for (int b = 0; b < c.blocks; ++b) {
      const std::string s = "block" + std::to_string(b) + ".";
      p.add(s + "wq", H, H);
      p.add(s + "wk", H, H);
      p.add(s + "wv", H, H);
      p.add(s + "wo", H, H);
      p.add(s + "w1", H, H);
      p.add(s + "b1", 1, H);
      p.add(s + "w2", H, H);
      p.add(s + "b2", 1, H);
    }
    p.add("w_out", H, c.motion_dims());
    p.add("b_out", 1, c.motion_dims());
    return p;
  }
};

/// sin/cos features of a scalar position, width `dim` (even).
inline Eigen::RowVectorXd sinusoidal_embedding(double position, int dim) {
  Eigen::RowVectorXd e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    e(2 * i) = std::sin(position * freq);
    e(2 * i + 1) = std::cos(position * freq);
  }
  return e;
}

template <typename Scalar>
class Denoiser {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MapMat = Eigen::Map<Mat>;
  using ConstMapMat = Eigen::Map<const Mat>;

  explicit Denoiser(DenoiserConfig cfg) : cfg_(cfg), layout_((cfg.validate(), ParamLayout::for_config(cfg))) {
    params_ = Vec::Zero(layout_.total);
  }

  const DenoiserConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  Eigen::Index param_count() const { return layout_.total; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  /// Scaled-normal weights, zero biases and a zero output head.
  void init(std::uint64_t seed, bool zero_head = true) {
    Rng rng(seed);
    for (const auto& t : layout_.tensors) {
      auto block = params_.segment(t.offset, t.size());
      const bool bias = t.rows == 1;
      const bool head = t.name == "w_out" || t.name == "b_out";
      if (bias || (head && zero_head)) {
        block.setZero();
        continue;
      }
      const double sd = 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (Eigen::Index i = 0; i < block.size(); ++i) block(i) = static_cast<Scalar>(sd * rng.normal());
    }
  }

  /// Randomizes everything, biases and head included (for gradient checks).
  void init_dense(std::uint64_t seed, double bias_scale = 0.1) {
    init(seed, false);
    Rng rng(derive_seed(seed, 1));
    for (const auto& t : layout_.tensors)
      if (t.rows == 1)
        for (Eigen::Index i = 0; i < t.size(); ++i) params_(t.offset + i) = static_cast<Scalar>(bias_scale * rng.normal());
  }

  /// Zeroes the ECS columns that the configuration switches off.
  Mat mask_conditions(const Mat& ecs) const {
    Mat out = ecs;
    if (!cfg_.use_ckp) out.middleCols(conditioning::ecs_ckp_offset(cfg_.feature_width), motion::kDeltaDims).setZero();
    if (!cfg_.use_emotion)
      out.middleCols(conditioning::ecs_emotion_offset(cfg_.feature_width), conditioning::kNumEmotions).setZero();
    return out;
  }

  struct BlockCache {
    Mat h_in, n1, q, k, v, a, o, h_mid, n2, u, g;
    RowVec sd1, sd2;  // per-row std of the layer-norm inputs
  };

  struct Cache {
    Mat ics, ecs, c_pre;
    RowVec temb, t_pre;
    std::vector<BlockCache> blocks;
    Mat h_final, n_final;
    RowVec sd_final;
  };

  /// x_t: L x 265, m_ref: 265 (normalized), ecs: L x E. Returns L x 265.
  Mat forward(const Mat& x_t, const Vec& m_ref, const Mat& ecs, int t, Cache* cache = nullptr) const {
    const Eigen::Index L = x_t.rows();
    require(L >= 1 && x_t.cols() == cfg_.motion_dims(), ErrorKind::Shape, "x_t must be L x 265");
    require(m_ref.size() == cfg_.motion_dims(), ErrorKind::Shape, "m_ref must have 265 values");
    require(ecs.rows() == L && ecs.cols() == cfg_.ecs_width(), ErrorKind::Shape,
            "ECS must be L x " + std::to_string(cfg_.ecs_width()));
    const int H = cfg_.hidden;
    Cache local;
    Cache& c = cache ? *cache : local;

    c.ics.resize(L, cfg_.ics_width());
    c.ics.leftCols(cfg_.motion_dims()) = x_t;
    c.ics.rightCols(cfg_.motion_dims()) = m_ref.transpose().replicate(L, 1);
    c.ecs = mask_conditions(ecs);

    Mat h = c.ics * w("w_in");
    h.rowwise() += row("b_in");
    c.c_pre = c.ecs * w("w_c");
    c.c_pre.rowwise() += row("b_c");
    h += silu(c.c_pre);
    c.temb = sinusoidal_embedding(static_cast<double>(t), H).template cast<Scalar>();
    c.t_pre = c.temb * w("w_t") + row("b_t");
    h.rowwise() += silu(Mat(c.t_pre)).row(0);
    h += positions(L);

    c.blocks.resize(static_cast<std::size_t>(cfg_.blocks));
    const Scalar att_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(H)));
    for (int b = 0; b < cfg_.blocks; ++b) {
      BlockCache& bc = c.blocks[static_cast<std::size_t>(b)];
      const std::string p = "block" + std::to_string(b) + ".";
      bc.h_in = h;
      bc.n1 = layer_norm(h, bc.sd1);
      bc.q = bc.n1 * w(p + "wq");
      bc.k = bc.n1 * w(p + "wk");
      bc.v = bc.n1 * w(p + "wv");
      bc.a = softmax_rows(Mat(att_scale * bc.q * bc.k.transpose()));
      bc.o = bc.a * bc.v;
      h += bc.o * w(p + "wo");
      bc.h_mid = h;
      bc.n2 = layer_norm(h, bc.sd2);
      bc.u = bc.n2 * w(p + "w1");
      bc.u.rowwise() += row(p + "b1");
      bc.g = silu(bc.u);
      h += bc.g * w(p + "w2");
      h.rowwise() += row(p + "b2");
    }
    c.h_final = h;
    c.n_final = layer_norm(h, c.sd_final);
    Mat y = c.n_final * w("w_out");
    y.rowwise() += row("b_out");
    return y;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Cache& c, const Mat& dy, Vec& grad) const {
    require(grad.size() == layout_.total, ErrorKind::Shape, "gradient buffer has wrong size");
    const int H = cfg_.hidden;
    const Scalar att_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(H)));

    gw(grad, "w_out") += c.n_final.transpose() * dy;
    grow(grad, "b_out") += dy.colwise().sum();
    Mat dh = layer_norm_backward(c.n_final, c.sd_final, Mat(dy * w("w_out").transpose()));

    for (int b = cfg_.blocks - 1; b >= 0; --b) {
      const BlockCache& bc = c.blocks[static_cast<std::size_t>(b)];
      const std::string p = "block" + std::to_string(b) + ".";
      // MLP branch
      gw(grad, p + "w2") += bc.g.transpose() * dh;
      grow(grad, p + "b2") += dh.colwise().sum();
      const Mat du = (dh * w(p + "w2").transpose()).cwiseProduct(silu_grad(bc.u));
      gw(grad, p + "w1") += bc.n2.transpose() * du;
      grow(grad, p + "b1") += du.colwise().sum();
      dh += layer_norm_backward(bc.n2, bc.sd2, Mat(du * w(p + "w1").transpose()));
      // attention branch
      gw(grad, p + "wo") += bc.o.transpose() * dh;
      const Mat d_o = dh * w(p + "wo").transpose();
      const Mat da = d_o * bc.v.transpose();
      const Mat dv = bc.a.transpose() * d_o;
      const Vec row_dot = da.cwiseProduct(bc.a).rowwise().sum();
      const Mat ds = att_scale * bc.a.cwiseProduct(da.colwise() - row_dot);
      const Mat dq = ds * bc.k;
      const Mat dk = ds.transpose() * bc.q;
      gw(grad, p + "wq") += bc.n1.transpose() * dq;
      gw(grad, p + "wk") += bc.n1.transpose() * dk;
      gw(grad, p + "wv") += bc.n1.transpose() * dv;
      const Mat dn1 = dq * w(p + "wq").transpose() + dk * w(p + "wk").transpose() + dv * w(p + "wv").transpose();
      dh += layer_norm_backward(bc.n1, bc.sd1, dn1);
    }

    gw(grad, "w_in") += c.ics.transpose() * dh;
    grow(grad, "b_in") += dh.colwise().sum();
    const Mat dc_pre = dh.cwiseProduct(silu_grad(c.c_pre));
    gw(grad, "w_c") += c.ecs.transpose() * dc_pre;
    grow(grad, "b_c") += dc_pre.colwise().sum();
    const RowVec dt_pre = dh.colwise().sum().cwiseProduct(silu_grad(Mat(c.t_pre)).row(0));
    gw(grad, "w_t") += c.temb.transpose() * dt_pre;
    grow(grad, "b_t") += dt_pre;
  }

  static Mat silu(const Mat& x) {
    return x.unaryExpr([](Scalar v) { return v / (Scalar(1) + std::exp(-v)); });
  }
  static Mat silu_grad(const Mat& x) {
    return x.unaryExpr([](Scalar v) {
      const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-v));
      return s * (Scalar(1) + v * (Scalar(1) - s));
    });
  }

  static Mat softmax_rows(const Mat& s) {
    Mat a = s.colwise() - s.rowwise().maxCoeff();
    a = a.array().exp().matrix();
    const Vec sums = a.rowwise().sum();
    return sums.cwiseInverse().asDiagonal() * a;
  }

  static constexpr double kLayerNormEps = 1e-5;

  static Mat layer_norm(const Mat& x, RowVec& sd) {
    const Eigen::Index n = x.cols();
    const Vec mu = x.rowwise().mean();
    Mat centered = x.colwise() - mu;
    const Vec var = centered.rowwise().squaredNorm() / static_cast<Scalar>(n);
    sd = (var.array() + static_cast<Scalar>(kLayerNormEps)).sqrt().matrix().transpose();
    return sd.cwiseInverse().asDiagonal() * centered;
  }

  /// dx = (dy - mean(dy) - y * mean(dy . y)) / sd, row-wise.
  static Mat layer_norm_backward(const Mat& y, const RowVec& sd, const Mat& dy) {
    const Scalar n = static_cast<Scalar>(y.cols());
    const Vec mean_dy = dy.rowwise().sum() / n;
    const Vec mean_dyy = dy.cwiseProduct(y).rowwise().sum() / n;
    Mat dx = dy.colwise() - mean_dy;
    dx -= mean_dyy.asDiagonal() * y;
    return sd.cwiseInverse().asDiagonal() * dx;
  }

  Mat positions(Eigen::Index L) const {
    Mat p(L, cfg_.hidden);
    for (Eigen::Index i = 0; i < L; ++i)
      p.row(i) = sinusoidal_embedding(static_cast<double>(i), cfg_.hidden).template cast<Scalar>();
    return p;
  }

  const ParamLayout::Tensor& tensor(const std::string& name) const {
    for (const auto& t : layout_.tensors)
      if (t.name == name) return t;
    fail(ErrorKind::InvalidInput, "unknown parameter tensor '" + name + "'");
  }

 private:
  ConstMapMat w(const std::string& name) const {
    const auto& t = tensor(name);
    return ConstMapMat(params_.data() + t.offset, t.rows, t.cols);
  }
  Eigen::Map<const RowVec> row(const std::string& name) const {
    const auto& t = tensor(name);
    return Eigen::Map<const RowVec>(params_.data() + t.offset, t.cols);
  }
  MapMat gw(Vec& grad, const std::string& name) const {
    const auto& t = tensor(name);
    return MapMat(grad.data() + t.offset, t.rows, t.cols);
  }
  Eigen::Map<RowVec> grow(Vec& grad, const std::string& name) const {
    const auto& t = tensor(name);
    return Eigen::Map<RowVec>(grad.data() + t.offset, t.cols);
  }

  DenoiserConfig cfg_;
  ParamLayout layout_;
  Vec params_;
};

}  // namespace streamhead::diffusion
