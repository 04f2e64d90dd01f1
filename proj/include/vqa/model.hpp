#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>

#include "vqa/errors.hpp"
#include "vqa/pooling.hpp"
#include "vqa/types.hpp"

// Frame-feature regression model:
//
//   reduce  x_t = W f_t + b                (affine reduction, no activation)
//   recur   h_t = GRU(x_t, h_{t-1})        (single layer, zero initial state)
//   score   q_t = w . h_t + b              (scalar per frame)
//   pool    Q   = hysteresis pooling of q  (see pooling.hpp)
//
// The GRU uses the original gating form: the reset gate is applied inside the
// candidate's input-hidden product,
//
//   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//   c_t = tanh(Wc x_t + Uc (r_t * h_{t-1}) + bc)
//   h_t = z_t * h_{t-1} + (1 - z_t) * c_t
//
// and the analytic backward pass below follows exactly this orientation: the
// update gate preserves the previous state.

namespace vqa {

namespace detail {

template <class Scalar>
Scalar stable_sigmoid(Scalar a) {
  if (a >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-a));
  const Scalar e = std::exp(a);
  return e / (Scalar(1) + e);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

template <class Scalar>
struct GruParams {
  MatrixX<Scalar> w_update, u_update;
  VectorX<Scalar> b_update;
  MatrixX<Scalar> w_reset, u_reset;
  VectorX<Scalar> b_reset;
  MatrixX<Scalar> w_cand, u_cand;
  VectorX<Scalar> b_cand;
};

/// All parameters of the frame-feature regression model. Also doubles as the
/// gradient container: a backward pass returns one of these with matching
/// shapes, entry for entry.
template <class Scalar>
struct QualityModelParams {
  MatrixX<Scalar> reduce_w;      ///< reduced_dim x input_dim
  VectorX<Scalar> reduce_b;      ///< reduced_dim
  GruParams<Scalar> gru;         ///< hidden_dim x reduced_dim / hidden_dim x hidden_dim
  VectorX<Scalar> head_w;        ///< hidden_dim
  Scalar head_b = Scalar(0);
  VectorX<Scalar> initial_state; ///< hidden_dim; fixed at zero, not trained

  Index input_dim() const { return reduce_w.cols(); }
  Index reduced_dim() const { return reduce_w.rows(); }
  Index hidden_dim() const { return head_w.size(); }

  void validate() const {
    const Index r = reduced_dim(), h = hidden_dim();
    detail::require(reduce_b.size() == r, "model: reduce_b size mismatch");
    auto gate = [&](const MatrixX<Scalar>& w, const MatrixX<Scalar>& u,
                    const VectorX<Scalar>& b, const char* name) {
      detail::require(w.rows() == h && w.cols() == r,
                      std::string("model: gru ") + name + " input weights mismatch");
      detail::require(u.rows() == h && u.cols() == h,
                      std::string("model: gru ") + name + " state weights mismatch");
      detail::require(b.size() == h, std::string("model: gru ") + name + " bias mismatch");
    };
    gate(gru.w_update, gru.u_update, gru.b_update, "update");
    gate(gru.w_reset, gru.u_reset, gru.b_reset, "reset");
    gate(gru.w_cand, gru.u_cand, gru.b_cand, "candidate");
    detail::require(initial_state.size() == h, "model: initial_state size mismatch");
  }

  static QualityModelParams zeros(Index input_dim, Index reduced_dim, Index hidden_dim) {
    QualityModelParams p;
    p.reduce_w = MatrixX<Scalar>::Zero(reduced_dim, input_dim);
    p.reduce_b = VectorX<Scalar>::Zero(reduced_dim);
    auto zero_gate = [&](MatrixX<Scalar>& w, MatrixX<Scalar>& u, VectorX<Scalar>& b) {
      w = MatrixX<Scalar>::Zero(hidden_dim, reduced_dim);
      u = MatrixX<Scalar>::Zero(hidden_dim, hidden_dim);
      b = VectorX<Scalar>::Zero(hidden_dim);
    };
    zero_gate(p.gru.w_update, p.gru.u_update, p.gru.b_update);
    zero_gate(p.gru.w_reset, p.gru.u_reset, p.gru.b_reset);
    zero_gate(p.gru.w_cand, p.gru.u_cand, p.gru.b_cand);
    p.head_w = VectorX<Scalar>::Zero(hidden_dim);
    p.head_b = Scalar(0);
    p.initial_state = VectorX<Scalar>::Zero(hidden_dim);
    return p;
  }

  template <class Other>
  QualityModelParams<Other> cast() const {
    QualityModelParams<Other> p;
    p.reduce_w = reduce_w.template cast<Other>();
    p.reduce_b = reduce_b.template cast<Other>();
    p.gru.w_update = gru.w_update.template cast<Other>();
    p.gru.u_update = gru.u_update.template cast<Other>();
    p.gru.b_update = gru.b_update.template cast<Other>();
    p.gru.w_reset = gru.w_reset.template cast<Other>();
    p.gru.u_reset = gru.u_reset.template cast<Other>();
    p.gru.b_reset = gru.b_reset.template cast<Other>();
    p.gru.w_cand = gru.w_cand.template cast<Other>();
    p.gru.u_cand = gru.u_cand.template cast<Other>();
    p.gru.b_cand = gru.b_cand.template cast<Other>();
    p.head_w = head_w.template cast<Other>();
    p.head_b = static_cast<Other>(head_b);
    p.initial_state = initial_state.template cast<Other>();
    return p;
  }
};

/// Uniform fan-in initialisation (weights in +-1/sqrt(fan_in)), zero biases,
/// zero initial state. Deterministic in the seed.
template <class Scalar>
QualityModelParams<Scalar> init_params(Index input_dim, Index reduced_dim,
                                       Index hidden_dim, std::uint64_t seed) {
  QualityModelParams<Scalar> p =
      QualityModelParams<Scalar>::zeros(input_dim, reduced_dim, hidden_dim);
  std::mt19937_64 rng(seed);
  auto fill = [&](MatrixX<Scalar>& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  };
  fill(p.reduce_w);
  fill(p.gru.w_update);
  fill(p.gru.u_update);
  fill(p.gru.w_reset);
  fill(p.gru.u_reset);
  fill(p.gru.w_cand);
  fill(p.gru.u_cand);
  MatrixX<Scalar> head(1, hidden_dim);
  fill(head);
  p.head_w = head.transpose();
  return p;
}

/// Affine dimension reduction of a feature sequence. Rows of `features` are
/// frames; returns one reduced row per frame.
template <class Scalar>
MatrixX<Scalar> reduce(const MatrixX<Scalar>& features,
                       const QualityModelParams<Scalar>& p) {
  p.validate();
  detail::require(features.cols() == p.input_dim(),
                  "reduce: feature dim " + std::to_string(features.cols()) +
                      " does not match model input dim " +
                      std::to_string(p.input_dim()));
  if (features.rows() == 0) throw DomainError("reduce: empty feature sequence");
  MatrixX<Scalar> x = features * p.reduce_w.transpose();
  x.rowwise() += p.reduce_b.transpose();
  if (!x.allFinite()) {
    for (Index t = 0; t < x.rows(); ++t)
      if (!x.row(t).allFinite())
        throw NumericError("reduce: non-finite activation at frame " + std::to_string(t));
  }
  return x;
}

template <class Scalar>
struct GruTrace {
  MatrixX<Scalar> update;       ///< z_t rows
  MatrixX<Scalar> reset;        ///< r_t rows
  MatrixX<Scalar> cand;         ///< c_t rows
  MatrixX<Scalar> reset_state;  ///< r_t * h_{t-1} rows
  MatrixX<Scalar> hidden;       ///< h_t rows
};

/// GRU scan over a reduced sequence, keeping the per-step activations needed
/// by the backward pass.
template <class Scalar>
GruTrace<Scalar> recur_traced(const MatrixX<Scalar>& x,
                              const QualityModelParams<Scalar>& p) {
  p.validate();
  detail::require(x.cols() == p.reduced_dim(),
                  "recur: input dim does not match gru input weights");
  const Index steps = x.rows(), h_dim = p.hidden_dim();
  if (steps == 0) throw DomainError("recur: empty sequence");

  // Input-to-hidden products for the whole sequence in three multiplies; the
  // per-frame loop then only touches hidden-state terms.
  MatrixX<Scalar> xu = x * p.gru.w_update.transpose();
  xu.rowwise() += p.gru.b_update.transpose();
  MatrixX<Scalar> xr = x * p.gru.w_reset.transpose();
  xr.rowwise() += p.gru.b_reset.transpose();
  MatrixX<Scalar> xc = x * p.gru.w_cand.transpose();
  xc.rowwise() += p.gru.b_cand.transpose();

  GruTrace<Scalar> tr;
  tr.update.resize(steps, h_dim);
  tr.reset.resize(steps, h_dim);
  tr.cand.resize(steps, h_dim);
  tr.reset_state.resize(steps, h_dim);
  tr.hidden.resize(steps, h_dim);

  VectorX<Scalar> h = p.initial_state;
  VectorX<Scalar> au(h_dim), ar(h_dim), z(h_dim), r(h_dim), hr(h_dim), c(h_dim);
  for (Index t = 0; t < steps; ++t) {
    au = xu.row(t).transpose() + p.gru.u_update * h;
    ar = xr.row(t).transpose() + p.gru.u_reset * h;
    z = au.unaryExpr([](Scalar a) { return detail::stable_sigmoid(a); });
    r = ar.unaryExpr([](Scalar a) { return detail::stable_sigmoid(a); });
    hr = r.cwiseProduct(h);
    c = (xc.row(t).transpose() + p.gru.u_cand * hr).array().tanh();
    h = z.cwiseProduct(h) + (VectorX<Scalar>::Ones(h_dim) - z).cwiseProduct(c);
    if (!h.allFinite())
      throw NumericError("recur: non-finite hidden state at frame " + std::to_string(t));
    tr.update.row(t) = z.transpose();
    tr.reset.row(t) = r.transpose();
    tr.cand.row(t) = c.transpose();
    tr.reset_state.row(t) = hr.transpose();
    tr.hidden.row(t) = h.transpose();
  }
  return tr;
}

template <class Scalar>
MatrixX<Scalar> recur(const MatrixX<Scalar>& x, const QualityModelParams<Scalar>& p) {
  return recur_traced(x, p).hidden;
}

/// Scalar score per frame from the hidden states.
template <class Scalar>
VectorX<Scalar> score_frames(const MatrixX<Scalar>& hidden,
                             const QualityModelParams<Scalar>& p) {
  detail::require(hidden.cols() == p.hidden_dim(),
                  "score_frames: hidden dim does not match head");
  if (hidden.rows() == 0) throw DomainError("score_frames: empty sequence");
  VectorX<Scalar> q = hidden * p.head_w;
  q.array() += p.head_b;
  return q;
}

template <class Scalar>
struct ForwardResult {
  Scalar quality;                  ///< pooled sequence score Q
  VectorX<Scalar> frame_scores;    ///< q_t
  PooledQuality<Scalar> pooled;
};

/// Full forward pass: features -> reduce -> recur -> score -> pool.
template <class Scalar>
ForwardResult<Scalar> forward(const MatrixX<Scalar>& features,
                              const QualityModelParams<Scalar>& p,
                              const PoolingConfig<Scalar>& cfg) {
  const MatrixX<Scalar> x = reduce(features, p);
  const MatrixX<Scalar> hidden = recur(x, p);
  ForwardResult<Scalar> out;
  out.frame_scores = score_frames(hidden, p);
  out.pooled = pool(out.frame_scores, cfg);
  out.quality = out.pooled.quality;
  return out;
}

template <class Scalar>
struct ModelBackprop {
  ForwardResult<Scalar> forward;
  QualityModelParams<Scalar> grads;  ///< same shapes as the parameters
};

/// Forward pass plus analytic gradients of (upstream * Q) with respect to
/// every trainable parameter. `grads.initial_state` receives dQ/dh0 for
/// completeness even though the initial state is never trained.
template <class Scalar>
ModelBackprop<Scalar> forward_backward(const MatrixX<Scalar>& features,
                                       const QualityModelParams<Scalar>& p,
                                       const PoolingConfig<Scalar>& cfg,
                                       Scalar upstream) {
  const Index steps = features.rows();
  const Index h_dim = p.hidden_dim();

  const MatrixX<Scalar> x = reduce(features, p);
  const GruTrace<Scalar> tr = recur_traced(x, p);
  const VectorX<Scalar> q = score_frames(tr.hidden, p);
  PooledQuality<Scalar> pooled = pool(q, cfg);
  const VectorX<Scalar> dq = upstream * pool_backward(q, cfg);

  QualityModelParams<Scalar> g =
      QualityModelParams<Scalar>::zeros(p.input_dim(), p.reduced_dim(), h_dim);
  g.head_w = tr.hidden.transpose() * dq;
  g.head_b = dq.sum();

  MatrixX<Scalar> hprev(steps, h_dim);
  hprev.row(0) = p.initial_state.transpose();
  if (steps > 1) hprev.bottomRows(steps - 1) = tr.hidden.topRows(steps - 1);

  // Pre-activation gradients per step; weight gradients fall out as products
  // with the cached sequences afterwards.
  MatrixX<Scalar> au(steps, h_dim), ar(steps, h_dim), ac(steps, h_dim);

  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  VectorX<Scalar> gh = VectorX<Scalar>::Zero(h_dim);
  for (Index t = steps - 1; t >= 0; --t) {
    gh += p.head_w * dq[t];
    const Array z = tr.update.row(t).transpose();
    const Array r = tr.reset.row(t).transpose();
    const Array c = tr.cand.row(t).transpose();
    const Array hp = hprev.row(t).transpose();
    const Array gha = gh.array();

    const Array dz = gha * (hp - c);
    const Array dc = gha * (Scalar(1) - z);
    Array ghp = gha * z;

    const Array dac = dc * (Scalar(1) - c * c);
    ac.row(t) = dac.matrix().transpose();
    const Array dhr = (p.gru.u_cand.transpose() * dac.matrix()).array();
    const Array dr = dhr * hp;
    ghp += dhr * r;

    const Array dar = dr * r * (Scalar(1) - r);
    ar.row(t) = dar.matrix().transpose();
    const Array daz = dz * z * (Scalar(1) - z);
    au.row(t) = daz.matrix().transpose();

    gh = ghp.matrix() + p.gru.u_reset.transpose() * dar.matrix() +
         p.gru.u_update.transpose() * daz.matrix();
  }

  g.gru.w_update = au.transpose() * x;
  g.gru.u_update = au.transpose() * hprev;
  g.gru.b_update = au.colwise().sum().transpose();
  g.gru.w_reset = ar.transpose() * x;
  g.gru.u_reset = ar.transpose() * hprev;
  g.gru.b_reset = ar.colwise().sum().transpose();
  g.gru.w_cand = ac.transpose() * x;
  g.gru.u_cand = ac.transpose() * tr.reset_state;
  g.gru.b_cand = ac.colwise().sum().transpose();

  const MatrixX<Scalar> dx =
      au * p.gru.w_update + ar * p.gru.w_reset + ac * p.gru.w_cand;
  g.reduce_w = dx.transpose() * features;
  g.reduce_b = dx.colwise().sum().transpose();
  g.initial_state = gh;

  ModelBackprop<Scalar> out;
  out.forward.quality = pooled.quality;
  out.forward.frame_scores = q;
  out.forward.pooled = std::move(pooled);
  out.grads = std::move(g);
  return out;
}

// ---------------------------------------------------------------------------
// Flat parameter view. The optimizer works on a single dense vector; these
// helpers define the canonical packing order. The initial state is excluded:
// it is fixed at zero by design and must never receive an update.

template <class Scalar>
Index flat_size(const QualityModelParams<Scalar>& p) {
  const Index d = p.input_dim(), r = p.reduced_dim(), h = p.hidden_dim();
  return r * d + r + 3 * (h * r + h * h + h) + h + 1;
}

namespace detail {

template <class Scalar, class Fn>
void for_each_trainable(QualityModelParams<Scalar>& p, Fn&& fn) {
  fn(p.reduce_w.data(), p.reduce_w.size());
  fn(p.reduce_b.data(), p.reduce_b.size());
  fn(p.gru.w_update.data(), p.gru.w_update.size());
  fn(p.gru.u_update.data(), p.gru.u_update.size());
  fn(p.gru.b_update.data(), p.gru.b_update.size());
  fn(p.gru.w_reset.data(), p.gru.w_reset.size());
  fn(p.gru.u_reset.data(), p.gru.u_reset.size());
  fn(p.gru.b_reset.data(), p.gru.b_reset.size());
  fn(p.gru.w_cand.data(), p.gru.w_cand.size());
  fn(p.gru.u_cand.data(), p.gru.u_cand.size());
  fn(p.gru.b_cand.data(), p.gru.b_cand.size());
  fn(p.head_w.data(), p.head_w.size());
  fn(&p.head_b, Index(1));
}

}  // namespace detail

template <class Scalar>
VectorX<Scalar> flatten(const QualityModelParams<Scalar>& params) {
  VectorX<Scalar> theta(flat_size(params));
  Index pos = 0;
  auto& p = const_cast<QualityModelParams<Scalar>&>(params);
  detail::for_each_trainable(p, [&](Scalar* data, Index n) {
    theta.segment(pos, n) = Eigen::Map<const VectorX<Scalar>>(data, n);
    pos += n;
  });
  return theta;
}

template <class Scalar>
void unflatten_into(const VectorX<Scalar>& theta, QualityModelParams<Scalar>& params) {
  if (theta.size() != flat_size(params))
    throw ShapeError("unflatten: flat vector size " + std::to_string(theta.size()) +
                     " does not match parameter count " +
                     std::to_string(flat_size(params)));
  Index pos = 0;
  detail::for_each_trainable(params, [&](Scalar* data, Index n) {
    Eigen::Map<VectorX<Scalar>>(data, n) = theta.segment(pos, n);
    pos += n;
  });
}

// ---------------------------------------------------------------------------
// Ablation variant: no temporal module. Frame scores are an affine map of the
// reduced features and the sequence score is their plain mean.

template <class Scalar>
struct AffineModelParams {
  MatrixX<Scalar> reduce_w;
  VectorX<Scalar> reduce_b;
  VectorX<Scalar> head_w;  ///< reduced_dim
  Scalar head_b = Scalar(0);

  Index input_dim() const { return reduce_w.cols(); }
  Index reduced_dim() const { return reduce_w.rows(); }

  void validate() const {
    detail::require(reduce_b.size() == reduced_dim(), "affine: reduce_b size mismatch");
    detail::require(head_w.size() == reduced_dim(), "affine: head size mismatch");
  }

  static AffineModelParams zeros(Index input_dim, Index reduced_dim) {
    AffineModelParams p;
    p.reduce_w = MatrixX<Scalar>::Zero(reduced_dim, input_dim);
    p.reduce_b = VectorX<Scalar>::Zero(reduced_dim);
    p.head_w = VectorX<Scalar>::Zero(reduced_dim);
    p.head_b = Scalar(0);
    return p;
  }

  template <class Other>
  AffineModelParams<Other> cast() const {
    AffineModelParams<Other> p;
    p.reduce_w = reduce_w.template cast<Other>();
    p.reduce_b = reduce_b.template cast<Other>();
    p.head_w = head_w.template cast<Other>();
    p.head_b = static_cast<Other>(head_b);
    return p;
  }
};

template <class Scalar>
AffineModelParams<Scalar> init_affine_params(Index input_dim, Index reduced_dim,
                                             std::uint64_t seed) {
  AffineModelParams<Scalar> p = AffineModelParams<Scalar>::zeros(input_dim, reduced_dim);
  std::mt19937_64 rng(seed);
  auto fill = [&](Scalar* data, Index n, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < n; ++i) data[i] = static_cast<Scalar>(dist(rng));
  };
  fill(p.reduce_w.data(), p.reduce_w.size(), input_dim);
  fill(p.head_w.data(), p.head_w.size(), reduced_dim);
  return p;
}

template <class Scalar>
struct AffineForward {
  Scalar quality;
  VectorX<Scalar> frame_scores;
};

template <class Scalar>
AffineForward<Scalar> affine_forward(const MatrixX<Scalar>& features,
                                     const AffineModelParams<Scalar>& p) {
  p.validate();
  detail::require(features.cols() == p.input_dim(),
                  "affine_forward: feature dim does not match model input dim");
  if (features.rows() == 0) throw DomainError("affine_forward: empty feature sequence");
  MatrixX<Scalar> x = features * p.reduce_w.transpose();
  x.rowwise() += p.reduce_b.transpose();
  AffineForward<Scalar> out;
  out.frame_scores = x * p.head_w;
  out.frame_scores.array() += p.head_b;
  if (!out.frame_scores.allFinite())
    throw NumericError("affine_forward: non-finite frame score");
  out.quality = out.frame_scores.mean();
  return out;
}

template <class Scalar>
struct AffineBackprop {
  AffineForward<Scalar> forward;
  AffineModelParams<Scalar> grads;
};

template <class Scalar>
AffineBackprop<Scalar> affine_forward_backward(const MatrixX<Scalar>& features,
                                               const AffineModelParams<Scalar>& p,
                                               Scalar upstream) {
  AffineBackprop<Scalar> out;
  out.forward = affine_forward(features, p);
  const Index steps = features.rows();
  MatrixX<Scalar> x = features * p.reduce_w.transpose();
  x.rowwise() += p.reduce_b.transpose();

  const Scalar dq = upstream / Scalar(steps);  // dQ/dq_t is uniform for a mean
  AffineModelParams<Scalar> g = AffineModelParams<Scalar>::zeros(p.input_dim(), p.reduced_dim());
  g.head_w = dq * x.colwise().sum().transpose();
  g.head_b = upstream;
  const MatrixX<Scalar> dx = VectorX<Scalar>::Constant(steps, dq) * p.head_w.transpose();
  g.reduce_w = dx.transpose() * features;
  g.reduce_b = dx.colwise().sum().transpose();
  out.grads = std::move(g);
  return out;
}

template <class Scalar>
Index affine_flat_size(const AffineModelParams<Scalar>& p) {
  return p.reduce_w.size() + p.reduce_b.size() + p.head_w.size() + 1;
}

template <class Scalar>
VectorX<Scalar> affine_flatten(const AffineModelParams<Scalar>& params) {
  VectorX<Scalar> theta(affine_flat_size(params));
  Index pos = 0;
  auto put = [&](const Scalar* data, Index n) {
    theta.segment(pos, n) = Eigen::Map<const VectorX<Scalar>>(data, n);
    pos += n;
  };
  put(params.reduce_w.data(), params.reduce_w.size());
  put(params.reduce_b.data(), params.reduce_b.size());
  put(params.head_w.data(), params.head_w.size());
  put(&params.head_b, 1);
  return theta;
}

template <class Scalar>
void affine_unflatten_into(const VectorX<Scalar>& theta, AffineModelParams<Scalar>& params) {
  if (theta.size() != affine_flat_size(params))
    throw ShapeError("affine_unflatten: size mismatch");
  Index pos = 0;
  auto take = [&](Scalar* data, Index n) {
    Eigen::Map<VectorX<Scalar>>(data, n) = theta.segment(pos, n);
    pos += n;
  };
  take(params.reduce_w.data(), params.reduce_w.size());
  take(params.reduce_b.data(), params.reduce_b.size());
  take(params.head_w.data(), params.head_w.size());
  take(&params.head_b, 1);
}

}  // namespace vqa
