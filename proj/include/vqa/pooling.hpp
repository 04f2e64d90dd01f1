#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "vqa/errors.hpp"
#include "vqa/types.hpp"

// Temporal-hysteresis pooling of per-frame quality scores.
//
// Human ratings react sharply to quality drops and only sluggishly to
// recoveries. The pooled score models this with two elements per frame:
//
//   memory   l_t: worst (min) score over a trailing window — what the viewer
//                 remembers; for the first frame there is no past, so l_0 = q_0.
//   current  m_t: softmin-weighted mean over a leading window — upcoming frames,
//                 with poor ones weighted more heavily.
//
// The per-frame approximation blends the two, and the sequence score is the
// mean of the blended values:
//
//   q'_t = gamma * l_t + (1 - gamma) * m_t,      Q = mean_t q'_t.
//
// All operations are differentiable (the min via a deterministic subgradient),
// so the pooling can sit at the end of a trained model.

namespace vqa {

/// Statistic the memory element takes over its trailing window. kMin is the
/// default; kAverage exists for ablation runs.
enum class MemoryMode { kMin, kAverage };

inline const char* to_string(MemoryMode m) {
  return m == MemoryMode::kMin ? "min" : "average";
}

inline MemoryMode memory_mode_from_string(const std::string& name) {
  if (name == "min") return MemoryMode::kMin;
  if (name == "average") return MemoryMode::kAverage;
  throw ConfigError("unknown memory mode '" + name + "' (use 'min' or 'average')");
}

template <class Scalar = double>
struct PoolingConfig {
  int tau = 12;                          ///< window extent, in frames
  Scalar gamma = Scalar(0.5);            ///< blend weight of the memory element
  MemoryMode memory = MemoryMode::kMin;

  void validate() const {
    if (tau < 0) throw DomainError("pooling: tau must be >= 0");
    if (!(gamma >= Scalar(0) && gamma <= Scalar(1)))
      throw DomainError("pooling: gamma must lie in [0, 1]");
  }
};

namespace detail {

// Trailing window {max(0, t - tau), ..., t - 1}; only meaningful for t >= 1.
// tau = 0 degenerates to the single previous frame rather than an empty window.
inline std::pair<Index, Index> prev_window(Index t, int tau) {
  const Index span = std::max<Index>(tau, 1);
  return {std::max<Index>(0, t - span), t - 1};
}

// Leading window {t, ..., min(t + tau, T - 1)}; always non-empty.
inline std::pair<Index, Index> next_window(Index t, int tau, Index size) {
  return {t, std::min<Index>(t + tau, size - 1)};
}

template <class Scalar>
void check_frame_index(const VectorX<Scalar>& q, Index t, const char* op) {
  if (q.size() == 0) throw DomainError(std::string(op) + ": empty score sequence");
  if (t < 0 || t >= q.size())
    throw DomainError(std::string(op) + ": frame index " + std::to_string(t) +
                      " outside [0, " + std::to_string(q.size()) + ")");
}

}  // namespace detail

/// Memory element: min of the trailing window, or q_0 for the first frame.
template <class Scalar>
Scalar memory_element(const VectorX<Scalar>& q, Index t, int tau) {
  detail::check_frame_index(q, t, "memory_element");
  if (tau < 0) throw DomainError("memory_element: tau must be >= 0");
  if (t == 0) return q[0];
  auto [lo, hi] = detail::prev_window(t, tau);
  return q.segment(lo, hi - lo + 1).minCoeff();
}

template <class Scalar>
struct CurrentElement {
  Scalar value;              ///< softmin-weighted mean over the leading window
  VectorX<Scalar> weights;   ///< softmin weights, aligned with the window; sum to 1
  Index window_begin;        ///< absolute index of the first window element (== t)
};

/// Current element: softmin-weighted mean of the leading window. Weights are
/// exp(-q_k) normalised over the window, so lower scores weigh more.
template <class Scalar>
CurrentElement<Scalar> current_element(const VectorX<Scalar>& q, Index t, int tau) {
  detail::check_frame_index(q, t, "current_element");
  if (tau < 0) throw DomainError("current_element: tau must be >= 0");
  auto [lo, hi] = detail::next_window(t, tau, q.size());
  const Index k = hi - lo + 1;
  const auto seg = q.segment(lo, k).array();
  // Work relative to the window minimum: exp() stays in (0, 1] regardless of
  // the score scale, and a constant window returns exactly that constant.
  const Scalar pivot = seg.minCoeff();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> shifted = seg - pivot;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> e = (-shifted).exp();
  const Scalar total = e.sum();
  CurrentElement<Scalar> out;
  out.value = pivot + (shifted * e).sum() / total;
  out.weights = (e / total).matrix();
  out.window_begin = lo;
  return out;
}

template <class Scalar>
struct PooledQuality {
  Scalar quality;            ///< Q, the sequence score
  VectorX<Scalar> approx;    ///< q'_t, blended per-frame scores
  VectorX<Scalar> memory;    ///< l_t
  VectorX<Scalar> current;   ///< m_t
};

/// Full hysteresis pooling of a score sequence.
template <class Scalar>
PooledQuality<Scalar> pool(const VectorX<Scalar>& q, const PoolingConfig<Scalar>& cfg) {
  cfg.validate();
  const Index size = q.size();
  if (size == 0) throw DomainError("pool: empty score sequence");

  PooledQuality<Scalar> out;
  out.memory.resize(size);
  out.current.resize(size);
  out.approx.resize(size);

  for (Index t = 0; t < size; ++t) {
    Scalar l;
    if (t == 0) {
      l = q[0];
    } else if (cfg.memory == MemoryMode::kMin) {
      auto [lo, hi] = detail::prev_window(t, cfg.tau);
      l = q.segment(lo, hi - lo + 1).minCoeff();
    } else {
      auto [lo, hi] = detail::prev_window(t, cfg.tau);
      l = q.segment(lo, hi - lo + 1).mean();
    }
    const Scalar m = current_element(q, t, cfg.tau).value;
    out.memory[t] = l;
    out.current[t] = m;
    // Exact at the extremes so gamma = 0 / 1 select one element bit-for-bit;
    // the blended form is written around m so a constant sequence is preserved
    // exactly for any gamma.
    if (cfg.gamma == Scalar(0)) {
      out.approx[t] = m;
    } else if (cfg.gamma == Scalar(1)) {
      out.approx[t] = l;
    } else {
      out.approx[t] = m + cfg.gamma * (l - m);
    }
  }

  // Mean around the first element: a constant sequence pools to exactly that
  // constant, with no accumulation rounding.
  out.quality = out.approx[0] + (out.approx.array() - out.approx[0]).mean();
  return out;
}

/// Plain arithmetic mean of the frame scores; the ablation baseline.
template <class Scalar>
Scalar average_pool(const VectorX<Scalar>& q) {
  if (q.size() == 0) throw DomainError("average_pool: empty score sequence");
  return q.mean();
}

/// Gradient of pool(q, cfg).quality with respect to q.
///
/// The min inside the memory element uses a deterministic subgradient: on ties
/// the earliest window index receives the full contribution. The softmin term
/// differentiates exactly: d m_t / d q_j = w_j * (1 + m_t - q_j) for j in the
/// leading window.
template <class Scalar>
VectorX<Scalar> pool_backward(const VectorX<Scalar>& q, const PoolingConfig<Scalar>& cfg) {
  cfg.validate();
  const Index size = q.size();
  if (size == 0) throw DomainError("pool_backward: empty score sequence");

  VectorX<Scalar> grad = VectorX<Scalar>::Zero(size);
  const Scalar inv_size = Scalar(1) / Scalar(size);
  const Scalar wm = cfg.gamma * inv_size;              // memory-element weight
  const Scalar wc = (Scalar(1) - cfg.gamma) * inv_size;  // current-element weight

  for (Index t = 0; t < size; ++t) {
    if (wm != Scalar(0)) {
      if (t == 0) {
        grad[0] += wm;
      } else if (cfg.memory == MemoryMode::kMin) {
        auto [lo, hi] = detail::prev_window(t, cfg.tau);
        Index argmin = lo;
        for (Index j = lo + 1; j <= hi; ++j)
          if (q[j] < q[argmin]) argmin = j;  // strict <: earliest tie wins
        grad[argmin] += wm;
      } else {
        auto [lo, hi] = detail::prev_window(t, cfg.tau);
        grad.segment(lo, hi - lo + 1).array() += wm / Scalar(hi - lo + 1);
      }
    }
    if (wc != Scalar(0)) {
      const CurrentElement<Scalar> ce = current_element(q, t, cfg.tau);
      const Index k = ce.weights.size();
      for (Index i = 0; i < k; ++i) {
        const Index j = ce.window_begin + i;
        grad[j] += wc * ce.weights[i] * (Scalar(1) + ce.value - q[j]);
      }
    }
  }
  return grad;
}

}  // namespace vqa
