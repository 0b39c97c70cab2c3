#pragma once

// Embedding lookup, the LSTM cell (no peepholes, gates ordered
// input/forget/candidate/output), a stack of such cells, and the output
// projection o = W_co·c + W_ho·h + b_o. Each forward has a hand-written
// backward; all of them are verified against finite differences in tests.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "headline/errors.hpp"
#include "headline/numerics.hpp"

namespace headline {

template <class Real>
struct LayerState {
  std::vector<Real> h;
  std::vector<Real> c;

  static LayerState zeros(std::size_t hidden) {
    return {std::vector<Real>(hidden, Real(0)), std::vector<Real>(hidden, Real(0))};
  }
  friend bool operator==(const LayerState&, const LayerState&) = default;
};

template <class Real>
using StateStack = std::vector<LayerState<Real>>;

template <class Real>
StateStack<Real> zero_stack(std::size_t layers, std::size_t hidden) {
  return StateStack<Real>(layers, LayerState<Real>::zeros(hidden));
}

/// Rows of w_x, w_h and b are grouped [input, forget, candidate, output].
template <class Real>
struct LstmLayerParams {
  Tensor<Real> w_x;  // 4H x D_in
  Tensor<Real> w_h;  // 4H x H
  Tensor<Real> b;    // 4H

  static LstmLayerParams zeros(std::size_t input_size, std::size_t hidden) {
    return {Tensor<Real>({4 * hidden, input_size}), Tensor<Real>({4 * hidden, hidden}),
            Tensor<Real>({4 * hidden})};
  }
  std::size_t hidden() const { return w_h.cols(); }
  std::size_t input_size() const { return w_x.cols(); }
};

template <class Real>
struct OutputProjection {
  Tensor<Real> w_ho;  // V x H_out
  Tensor<Real> w_co;  // V x H_ctx (empty without attention)
  Tensor<Real> b_o;   // V

  std::size_t vocab() const { return b_o.size(); }
  std::size_t hidden_part() const { return w_ho.empty() ? 0 : w_ho.cols(); }
  std::size_t context_part() const { return w_co.empty() ? 0 : w_co.cols(); }
};

template <class Real>
std::vector<Real> embed(TokenId token, const Tensor<Real>& table) {
  require(token < table.rows(), "embed: token id out of range");
  auto r = table.row(token);
  return {r.begin(), r.end()};
}

/// Everything the backward pass of one cell needs.
template <class Real>
struct LstmCache {
  std::vector<Real> x;  // input after dropout
  std::vector<Real> dropout_mask;  // empty when dropout is off
  std::vector<Real> h_prev, c_prev;
  std::vector<Real> i, f, g, o;
  std::vector<Real> c, tanh_c, h;
};

template <class Real>
LayerState<Real> lstm_cell_forward(std::span<const Real> x, const LayerState<Real>& prev,
                                   const LstmLayerParams<Real>& p, LstmCache<Real>* cache = nullptr) {
  const std::size_t hidden = p.hidden();
  require(x.size() == p.input_size(), "lstm_cell_forward: input size mismatch");
  require(prev.h.size() == hidden && prev.c.size() == hidden,
          "lstm_cell_forward: state size mismatch");

  std::vector<Real> pre(p.b.values().begin(), p.b.values().end());
  gemv_acc<Real>(p.w_x, x, pre);
  gemv_acc<Real>(p.w_h, prev.h, pre);

  LayerState<Real> next{std::vector<Real>(hidden), std::vector<Real>(hidden)};
  std::vector<Real> gi(hidden), gf(hidden), gg(hidden), go(hidden), tc(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    gi[k] = sigmoid(pre[k]);
    gf[k] = sigmoid(pre[hidden + k]);
    gg[k] = std::tanh(pre[2 * hidden + k]);
    go[k] = sigmoid(pre[3 * hidden + k]);
    next.c[k] = gf[k] * prev.c[k] + gi[k] * gg[k];
    tc[k] = std::tanh(next.c[k]);
    next.h[k] = go[k] * tc[k];
  }
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->g = std::move(gg);
    cache->o = std::move(go);
    cache->c = next.c;
    cache->tanh_c = std::move(tc);
    cache->h = next.h;
  }
  return next;
}

/// Given dL/dh' and dL/dc' for the cell output, accumulates parameter
/// gradients into `grads` and writes dL/dx, dL/dh_prev, dL/dc_prev.
template <class Real>
void lstm_cell_backward(const LstmCache<Real>& cache, const LstmLayerParams<Real>& p,
                        std::span<const Real> dh, std::span<const Real> dc_in,
                        LstmLayerParams<Real>& grads, std::span<Real> dx, std::span<Real> dh_prev,
                        std::span<Real> dc_prev) {
  const std::size_t hidden = p.hidden();
  std::vector<Real> dpre(4 * hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    const Real i = cache.i[k], f = cache.f[k], g = cache.g[k], o = cache.o[k];
    const Real tc = cache.tanh_c[k];
    const Real d_o = dh[k] * tc;
    const Real dc = dc_in[k] + dh[k] * o * (Real(1) - tc * tc);
    dpre[k] = dc * g * i * (Real(1) - i);
    dpre[hidden + k] = dc * cache.c_prev[k] * f * (Real(1) - f);
    dpre[2 * hidden + k] = dc * i * (Real(1) - g * g);
    dpre[3 * hidden + k] = d_o * o * (Real(1) - o);
    dc_prev[k] = dc * f;
  }
  ger_acc<Real>(grads.w_x, dpre, cache.x);
  ger_acc<Real>(grads.w_h, dpre, cache.h_prev);
  axpy<Real>(Real(1), dpre, grads.b.values());
  std::fill(dx.begin(), dx.end(), Real(0));
  std::fill(dh_prev.begin(), dh_prev.end(), Real(0));
  gemv_t_acc<Real>(p.w_x, dpre, dx);
  gemv_t_acc<Real>(p.w_h, dpre, dh_prev);
}

/// Inverted dropout on the non-recurrent connections; rate 0 disables it.
template <class Real>
struct Dropout {
  double rate = 0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rate > 0 && rng != nullptr; }
};

/// One time step through every layer. Layer 0 consumes x, layer k consumes
/// layer k-1's new h.
template <class Real>
StateStack<Real> stacked_step(std::span<const Real> x, const StateStack<Real>& prev,
                              const std::vector<LstmLayerParams<Real>>& params,
                              std::vector<LstmCache<Real>>* caches = nullptr,
                              Dropout<Real> dropout = {}) {
  require(prev.size() == params.size(), "stacked_step: state count differs from layer count");
  require(!params.empty(), "stacked_step: no layers");
  StateStack<Real> next;
  next.reserve(params.size());
  if (caches) caches->assign(params.size(), {});
  std::vector<Real> input(x.begin(), x.end());
  for (std::size_t l = 0; l < params.size(); ++l) {
    std::vector<Real> mask;
    if (dropout.active()) {
      std::bernoulli_distribution keep(1.0 - dropout.rate);
      mask.resize(input.size());
      const Real scale = Real(1.0 / (1.0 - dropout.rate));
      for (std::size_t k = 0; k < input.size(); ++k) {
        mask[k] = keep(*dropout.rng) ? scale : Real(0);
        input[k] *= mask[k];
      }
    }
    LstmCache<Real>* cache = caches ? &(*caches)[l] : nullptr;
    next.push_back(lstm_cell_forward<Real>(input, prev[l], params[l], cache));
    if (cache) cache->dropout_mask = std::move(mask);
    input = next.back().h;
  }
  return next;
}

/// W_co·context + W_ho·h + b_o
template <class Real>
std::vector<Real> project_output(std::span<const Real> h, std::span<const Real> ctx,
                                 const OutputProjection<Real>& proj) {
  require(h.size() == proj.hidden_part(), "project_output: hidden part size mismatch");
  require(ctx.size() == proj.context_part(), "project_output: context size mismatch");
  std::vector<Real> logits(proj.b_o.values().begin(), proj.b_o.values().end());
  gemv_acc<Real>(proj.w_ho, h, logits);
  gemv_acc<Real>(proj.w_co, ctx, logits);
  return logits;
}

template <class Real>
void project_output_backward(std::span<const Real> h, std::span<const Real> ctx,
                             const OutputProjection<Real>& proj, std::span<const Real> d_logits,
                             OutputProjection<Real>& grads, std::span<Real> d_h,
                             std::span<Real> d_ctx) {
  ger_acc<Real>(grads.w_ho, d_logits, h);
  ger_acc<Real>(grads.w_co, d_logits, ctx);
  axpy<Real>(Real(1), d_logits, grads.b_o.values());
  gemv_t_acc<Real>(proj.w_ho, d_logits, d_h);
  gemv_t_acc<Real>(proj.w_co, d_logits, d_ctx);
}

}  // namespace headline
