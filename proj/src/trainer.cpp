// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "conv_util.hpp"
#include "sepquant/error.hpp"
#include "sepquant/float_engine.hpp"
#include "sepquant/rng.hpp"

namespace sepquant {

namespace {

template <typename Real>
struct Buf {
  Shape shape;
  std::vector<Real> v;

  Buf() = default;
  explicit Buf(const Shape& s)
      : shape(s), v(static_cast<std::size_t>(s.numel()), Real(0)) {}

  Real& at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) {
    return v[((n * shape.h() + y) * shape.w() + x) * shape.c() + c];
  }
  Real at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return v[((n * shape.h() + y) * shape.w() + x) * shape.c() + c];
  }
};

template <typename Real>
struct BnCache {
  std::vector<Real> mean;
  std::vector<Real> inv_std;
  std::vector<Real> var;
};

template <typename Real>
Buf<Real> conv_fwd(const Buf<Real>& in, const TensorF32& w, const std::vector<float>* bias,
                   int stride, Padding padding) {
  const ConvGeometry geo = conv_geometry(in.shape, w.shape.dims[0], w.shape.dims[1],
                                         stride, padding);
  Buf<Real> out(Shape{in.shape.n(), geo.out_h, geo.out_w, w.shape.dims[3]});
  for (std::int64_t n = 0; n < in.shape.n(); ++n)
    for (std::int64_t oy = 0; oy < geo.out_h; ++oy)
      for (std::int64_t ox = 0; ox < geo.out_w; ++ox)
        for (std::int64_t oc = 0; oc < w.shape.dims[3]; ++oc) {
          Real acc = bias ? Real((*bias)[static_cast<std::size_t>(oc)]) : Real(0);
          for (std::int64_t ky = 0; ky < w.shape.dims[0]; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= in.shape.h()) continue;
            for (std::int64_t kx = 0; kx < w.shape.dims[1]; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= in.shape.w()) continue;
              for (std::int64_t ic = 0; ic < in.shape.c(); ++ic) {
                acc += in.at(n, iy, ix, ic) * Real(w.at(ky, kx, ic, oc));
              }
            }
          }
          out.at(n, oy, ox, oc) = acc;
        }
  return out;
}

template <typename Real>
void conv_bwd(const Buf<Real>& in, const TensorF32& w, int stride, Padding padding,
              const Buf<Real>& dy, Buf<Real>& dx, LayerGradsT<Real>& g, bool has_bias) {
  const ConvGeometry geo = conv_geometry(in.shape, w.shape.dims[0], w.shape.dims[1],
                                         stride, padding);
  g.weights.assign(w.data.size(), Real(0));
  if (has_bias) g.bias.assign(static_cast<std::size_t>(w.shape.dims[3]), Real(0));
  const std::int64_t kh = w.shape.dims[0], kw = w.shape.dims[1];
  const std::int64_t ci = w.shape.dims[2], co = w.shape.dims[3];
  for (std::int64_t n = 0; n < in.shape.n(); ++n)
    for (std::int64_t oy = 0; oy < dy.shape.h(); ++oy)
      for (std::int64_t ox = 0; ox < dy.shape.w(); ++ox)
        for (std::int64_t oc = 0; oc < co; ++oc) {
          const Real gy = dy.at(n, oy, ox, oc);
          if (has_bias) g.bias[static_cast<std::size_t>(oc)] += gy;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= in.shape.h()) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= in.shape.w()) continue;
              for (std::int64_t ic = 0; ic < ci; ++ic) {
                const std::size_t wi =
                    static_cast<std::size_t>(((ky * kw + kx) * ci + ic) * co + oc);
                g.weights[wi] += in.at(n, iy, ix, ic) * gy;
                dx.at(n, iy, ix, ic) += Real(w.data[wi]) * gy;
              }
            }
          }
        }
}

template <typename Real>
Buf<Real> dwconv_fwd(const Buf<Real>& in, const TensorF32& w, const std::vector<float>* bias,
                     int stride, Padding padding) {
  const ConvGeometry geo = conv_geometry(in.shape, w.shape.dims[0], w.shape.dims[1],
                                         stride, padding);
  Buf<Real> out(Shape{in.shape.n(), geo.out_h, geo.out_w, in.shape.c()});
  for (std::int64_t n = 0; n < in.shape.n(); ++n)
    for (std::int64_t oy = 0; oy < geo.out_h; ++oy)
      for (std::int64_t ox = 0; ox < geo.out_w; ++ox)
        for (std::int64_t c = 0; c < in.shape.c(); ++c) {
          Real acc = bias ? Real((*bias)[static_cast<std::size_t>(c)]) : Real(0);
          for (std::int64_t ky = 0; ky < w.shape.dims[0]; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= in.shape.h()) continue;
            for (std::int64_t kx = 0; kx < w.shape.dims[1]; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= in.shape.w()) continue;
              acc += in.at(n, iy, ix, c) * Real(w.at(ky, kx, c, 0));
            }
          }
          out.at(n, oy, ox, c) = acc;
        }
  return out;
}

template <typename Real>
void dwconv_bwd(const Buf<Real>& in, const TensorF32& w, int stride, Padding padding,
                const Buf<Real>& dy, Buf<Real>& dx, LayerGradsT<Real>& g, bool has_bias) {
  const ConvGeometry geo = conv_geometry(in.shape, w.shape.dims[0], w.shape.dims[1],
                                         stride, padding);
  g.weights.assign(w.data.size(), Real(0));
  if (has_bias) g.bias.assign(static_cast<std::size_t>(in.shape.c()), Real(0));
  const std::int64_t kh = w.shape.dims[0], kw = w.shape.dims[1];
  const std::int64_t ch = in.shape.c();
  for (std::int64_t n = 0; n < in.shape.n(); ++n)
    for (std::int64_t oy = 0; oy < dy.shape.h(); ++oy)
      for (std::int64_t ox = 0; ox < dy.shape.w(); ++ox)
        for (std::int64_t c = 0; c < ch; ++c) {
          const Real gy = dy.at(n, oy, ox, c);
          if (has_bias) g.bias[static_cast<std::size_t>(c)] += gy;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride - geo.pad_top + ky;
            if (iy < 0 || iy >= in.shape.h()) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride - geo.pad_left + kx;
              if (ix < 0 || ix >= in.shape.w()) continue;
              const std::size_t wi = static_cast<std::size_t>((ky * kw + kx) * ch + c);
              g.weights[wi] += in.at(n, iy, ix, c) * gy;
              dx.at(n, iy, ix, c) += Real(w.data[wi]) * gy;
            }
          }
        }
}

template <typename Real>
Buf<Real> bn_fwd(const Buf<Real>& in, const BatchNormLayer& bn, BnCache<Real>& cache) {
  const std::int64_t ch = in.shape.c();
  const std::int64_t m = in.shape.n() * in.shape.h() * in.shape.w();
  if (m < 1) throw DataError("batch_norm: empty normalization set");
  cache.mean.assign(static_cast<std::size_t>(ch), Real(0));
  cache.var.assign(static_cast<std::size_t>(ch), Real(0));
  cache.inv_std.assign(static_cast<std::size_t>(ch), Real(0));
  const std::size_t total = in.v.size();
  const auto chs = static_cast<std::size_t>(ch);
  for (std::size_t i = 0; i < total; ++i) cache.mean[i % chs] += in.v[i];
  for (std::size_t c = 0; c < chs; ++c) cache.mean[c] /= Real(m);
  for (std::size_t i = 0; i < total; ++i) {
    const Real d = in.v[i] - cache.mean[i % chs];
    cache.var[i % chs] += d * d;
  }
  for (std::size_t c = 0; c < chs; ++c) {
    cache.var[c] /= Real(m);
    cache.inv_std[c] = Real(1) / std::sqrt(cache.var[c] + Real(bn.epsilon));
  }
  Buf<Real> out(in.shape);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = i % chs;
    out.v[i] = Real(bn.gamma[c]) * (in.v[i] - cache.mean[c]) * cache.inv_std[c] +
               Real(bn.beta[c]);
  }
  return out;
}

template <typename Real>
void bn_bwd(const Buf<Real>& in, const BatchNormLayer& bn, const BnCache<Real>& cache,
            const Buf<Real>& dy, Buf<Real>& dx, LayerGradsT<Real>& g) {
  const auto chs = static_cast<std::size_t>(in.shape.c());
  const Real m = Real(in.shape.n() * in.shape.h() * in.shape.w());
  g.gamma.assign(chs, Real(0));
  g.beta.assign(chs, Real(0));
  const std::size_t total = in.v.size();
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = i % chs;
    const Real xhat = (in.v[i] - cache.mean[c]) * cache.inv_std[c];
    g.gamma[c] += dy.v[i] * xhat;
    g.beta[c] += dy.v[i];
  }
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = i % chs;
    const Real xhat = (in.v[i] - cache.mean[c]) * cache.inv_std[c];
    dx.v[i] = Real(bn.gamma[c]) * cache.inv_std[c] *
              (dy.v[i] - g.beta[c] / m - xhat * g.gamma[c] / m);
  }
}

// Training-mode forward, fused softmax cross-entropy, and (optionally) the
// full backward pass. The final Softmax layer is consumed by the loss.
template <typename Real>
double run_batch(const Graph& g, const TensorF32& images,
                 const std::vector<std::uint16_t>& labels,
                 std::vector<LayerGradsT<Real>>* grads,
                 std::vector<BnBatchStats>* batch_stats) {
  const std::int64_t batch = images.shape.n();
  if (batch < 1) throw DataError("empty batch");
  if (static_cast<std::size_t>(batch) != labels.size()) {
    throw DataError("batch size does not match label count");
  }
  if (images.shape.h() != g.input_shape.h() || images.shape.w() != g.input_shape.w() ||
      images.shape.c() != g.input_shape.c()) {
    throw DataError("batch shape does not match the graph input");
  }
  const std::size_t num_layers = g.layers.size();
  if (num_layers == 0) throw DataError("cannot train an empty graph");

  std::size_t logits_layer = num_layers;
  for (std::size_t i = 0; i < num_layers; ++i) {
    if (std::holds_alternative<SoftmaxLayer>(g.layers[i])) {
      if (i + 1 != num_layers) throw DataError("softmax must be the final layer");
    } else {
      logits_layer = i;
    }
  }
  if (logits_layer == num_layers) throw DataError("graph has no trainable layers");

  Buf<Real> input(images.shape);
  for (std::size_t i = 0; i < images.data.size(); ++i) input.v[i] = Real(images.data[i]);

  std::vector<Buf<Real>> outs(num_layers);
  std::vector<BnCache<Real>> bn_caches(num_layers);
  const Buf<Real>* cur = &input;
  for (std::size_t i = 0; i <= logits_layer; ++i) {
    const LayerSpec& layer = g.layers[i];
    if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      outs[i] = conv_fwd(*cur, conv->weights, conv->bias ? &*conv->bias : nullptr,
                         conv->stride, conv->padding);
    } else if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      outs[i] = dwconv_fwd(*cur, dw->weights, dw->bias ? &*dw->bias : nullptr, dw->stride,
                           dw->padding);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      outs[i] = bn_fwd(*cur, *bn, bn_caches[i]);
    } else if (const auto* act = std::get_if<ActivationLayer>(&layer)) {
      outs[i] = *cur;
      if (act->kind == ActivationKind::kRelu) {
        for (Real& x : outs[i].v) x = std::max(Real(0), x);
      } else {
        for (Real& x : outs[i].v) x = std::min(std::max(Real(0), x), Real(6));
      }
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      const Shape& s = cur->shape;
      Buf<Real> out(Shape{s.n(), 1, 1, s.c()});
      const Real inv = Real(1) / Real(s.h() * s.w());
      for (std::int64_t n = 0; n < s.n(); ++n)
        for (std::int64_t c = 0; c < s.c(); ++c) {
          Real acc = 0;
          for (std::int64_t y = 0; y < s.h(); ++y)
            for (std::int64_t x = 0; x < s.w(); ++x) acc += cur->at(n, y, x, c);
          out.at(n, 0, 0, c) = acc * inv;
        }
      outs[i] = std::move(out);
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const Shape& s = cur->shape;
      if (s.h() != 1 || s.w() != 1) throw DataError("dense input must be (n,1,1,c)");
      Buf<Real> out(Shape{s.n(), 1, 1, d->weights.shape.dims[3]});
      for (std::int64_t n = 0; n < s.n(); ++n)
        for (std::int64_t o = 0; o < d->weights.shape.dims[3]; ++o) {
          Real acc = Real(d->bias[static_cast<std::size_t>(o)]);
          for (std::int64_t k = 0; k < s.c(); ++k) {
            acc += cur->at(n, 0, 0, k) * Real(d->weights.at(0, 0, k, o));
          }
          out.at(n, 0, 0, o) = acc;
        }
      outs[i] = std::move(out);
    } else {
      throw InternalError("run_batch: unexpected layer kind");
    }
    cur = &outs[i];
  }

  const Buf<Real>& logits = outs[logits_layer];
  const std::int64_t classes = logits.shape.c();
  Buf<Real> dlogits(logits.shape);
  double loss = 0.0;
  for (std::int64_t n = 0; n < batch; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= classes) throw DataError("label out of range");
    Real mx = logits.at(n, 0, 0, 0);
    for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, logits.at(n, 0, 0, c));
    Real sum = 0;
    for (std::int64_t c = 0; c < classes; ++c) {
      sum += std::exp(logits.at(n, 0, 0, c) - mx);
    }
    const Real log_z = mx + std::log(sum);
    loss += static_cast<double>(log_z - logits.at(n, 0, 0, y));
    for (std::int64_t c = 0; c < classes; ++c) {
      Real p = std::exp(logits.at(n, 0, 0, c) - log_z);
      if (c == y) p -= Real(1);
      dlogits.at(n, 0, 0, c) = p / Real(batch);
    }
  }
  loss /= static_cast<double>(batch);

  if (batch_stats) {
    batch_stats->assign(num_layers, BnBatchStats{});
    for (std::size_t i = 0; i < num_layers; ++i) {
      if (!std::holds_alternative<BatchNormLayer>(g.layers[i])) continue;
      auto& st = (*batch_stats)[i];
      st.mean.resize(bn_caches[i].mean.size());
      st.variance.resize(bn_caches[i].var.size());
      for (std::size_t c = 0; c < st.mean.size(); ++c) {
        st.mean[c] = static_cast<float>(bn_caches[i].mean[c]);
        st.variance[c] = static_cast<float>(bn_caches[i].var[c]);
      }
    }
  }

  if (!grads) return loss;

  grads->assign(num_layers, LayerGradsT<Real>{});
  Buf<Real> d = std::move(dlogits);
  for (std::size_t ii = logits_layer + 1; ii-- > 0;) {
    const LayerSpec& layer = g.layers[ii];
    const Buf<Real>& in = (ii == 0) ? input : outs[ii - 1];
    Buf<Real> dprev(in.shape);
    if (const auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      conv_bwd(in, conv->weights, conv->stride, conv->padding, d, dprev, (*grads)[ii],
               conv->bias.has_value());
    } else if (const auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      dwconv_bwd(in, dw->weights, dw->stride, dw->padding, d, dprev, (*grads)[ii],
                 dw->bias.has_value());
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      bn_bwd(in, *bn, bn_caches[ii], d, dprev, (*grads)[ii]);
    } else if (const auto* act = std::get_if<ActivationLayer>(&layer)) {
      if (act->kind == ActivationKind::kRelu) {
        for (std::size_t k = 0; k < in.v.size(); ++k) {
          dprev.v[k] = in.v[k] > Real(0) ? d.v[k] : Real(0);
        }
      } else {
        for (std::size_t k = 0; k < in.v.size(); ++k) {
          dprev.v[k] = (in.v[k] > Real(0) && in.v[k] < Real(6)) ? d.v[k] : Real(0);
        }
      }
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      const Real inv = Real(1) / Real(in.shape.h() * in.shape.w());
      for (std::int64_t n = 0; n < in.shape.n(); ++n)
        for (std::int64_t c = 0; c < in.shape.c(); ++c) {
          const Real gy = d.at(n, 0, 0, c) * inv;
          for (std::int64_t y = 0; y < in.shape.h(); ++y)
            for (std::int64_t x = 0; x < in.shape.w(); ++x) dprev.at(n, y, x, c) = gy;
        }
    } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
      auto& gr = (*grads)[ii];
      gr.weights.assign(dl->weights.data.size(), Real(0));
      gr.bias.assign(dl->bias.size(), Real(0));
      const std::int64_t ci = dl->weights.shape.dims[2];
      const std::int64_t co = dl->weights.shape.dims[3];
      for (std::int64_t n = 0; n < in.shape.n(); ++n)
        for (std::int64_t o = 0; o < co; ++o) {
          const Real gy = d.at(n, 0, 0, o);
          gr.bias[static_cast<std::size_t>(o)] += gy;
          for (std::int64_t k = 0; k < ci; ++k) {
            gr.weights[static_cast<std::size_t>(k * co + o)] += in.at(n, 0, 0, k) * gy;
            dprev.at(n, 0, 0, k) += Real(dl->weights.data[static_cast<std::size_t>(k * co + o)]) * gy;
          }
        }
    } else {
      throw InternalError("run_batch backward: unexpected layer kind");
    }
    d = std::move(dprev);
  }
  return loss;
}

template <typename Real>
void apply_update(std::vector<float>& w, std::vector<Real>& vel,
                  const std::vector<Real>& grad, double lr, double momentum, double decay) {
  if (vel.size() != grad.size()) vel.assign(grad.size(), Real(0));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const Real step = Real(momentum) * vel[i] + (grad[i] + Real(decay) * Real(w[i]));
    vel[i] = step;
    w[i] = static_cast<float>(w[i] - Real(lr) * step);
  }
}

void check_config(const TrainConfig& cfg) {
  if (cfg.learning_rate < 0.0 || cfg.momentum < 0.0 || cfg.momentum >= 1.0 ||
      cfg.batch_size < 1 || cfg.epochs < 0 || cfg.weight_decay < 0.0 ||
      cfg.bn_momentum < 0.0 || cfg.bn_momentum >= 1.0) {
    throw DataError("invalid training configuration");
  }
}

}  // namespace

Graph init_weights(const Graph& g, std::uint64_t seed) {
  Graph out = g;
  Rng rng(seed);
  auto he_fill = [&rng](TensorF32& w, std::int64_t fan_in) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (float& x : w.data) x = static_cast<float>(rng.next_normal() * std_dev);
  };
  for (LayerSpec& layer : out.layers) {
    if (auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      const Shape& s = conv->weights.shape;
      he_fill(conv->weights, s.dims[0] * s.dims[1] * s.dims[2]);
      if (conv->bias) std::fill(conv->bias->begin(), conv->bias->end(), 0.0f);
    } else if (auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      const Shape& s = dw->weights.shape;
      he_fill(dw->weights, s.dims[0] * s.dims[1]);
      if (dw->bias) std::fill(dw->bias->begin(), dw->bias->end(), 0.0f);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      std::fill(bn->gamma.begin(), bn->gamma.end(), 1.0f);
      std::fill(bn->beta.begin(), bn->beta.end(), 0.0f);
      std::fill(bn->mean.begin(), bn->mean.end(), 0.0f);
      std::fill(bn->variance.begin(), bn->variance.end(), 1.0f);
    } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
      he_fill(dl->weights, dl->weights.shape.dims[2]);
      std::fill(dl->bias.begin(), dl->bias.end(), 0.0f);
    }
  }
  out.meta.seed = seed;
  return out;
}

double forward_backward(const Graph& g, const TensorF32& images,
                        const std::vector<std::uint16_t>& labels,
                        std::vector<LayerGrads>& grads,
                        std::vector<BnBatchStats>* batch_stats) {
  return run_batch<float>(g, images, labels, &grads, batch_stats);
}

double forward_backward_check(const Graph& g, const TensorF32& images,
                              const std::vector<std::uint16_t>& labels,
                              std::vector<LayerGradsD>& grads) {
  return run_batch<double>(g, images, labels, &grads, nullptr);
}

double batch_loss_check(const Graph& g, const TensorF32& images,
                        const std::vector<std::uint16_t>& labels) {
  return run_batch<double>(g, images, labels, nullptr, nullptr);
}

void sgd_step(TrainState& state, const std::vector<LayerGrads>& grads,
              const std::vector<BnBatchStats>& batch_stats, const TrainConfig& cfg) {
  check_config(cfg);
  Graph& g = state.graph;
  if (grads.size() != g.layers.size()) throw DataError("sgd_step: gradient count mismatch");
  if (state.velocity.size() != g.layers.size()) state.velocity.assign(g.layers.size(), {});
  const double lr = cfg.learning_rate;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    LayerSpec& layer = g.layers[i];
    auto& vel = state.velocity[i];
    const auto& gr = grads[i];
    if (auto* conv = std::get_if<Conv2DLayer>(&layer)) {
      if (!gr.weights.empty()) {
        apply_update(conv->weights.data, vel.weights, gr.weights, lr, cfg.momentum,
                     cfg.weight_decay);
      }
      if (conv->bias && !gr.bias.empty()) {
        apply_update(*conv->bias, vel.bias, gr.bias, lr, cfg.momentum, 0.0);
      }
    } else if (auto* dw = std::get_if<DepthwiseConv2DLayer>(&layer)) {
      if (!gr.weights.empty()) {
        apply_update(dw->weights.data, vel.weights, gr.weights, lr, cfg.momentum,
                     cfg.weight_decay);
      }
      if (dw->bias && !gr.bias.empty()) {
        apply_update(*dw->bias, vel.bias, gr.bias, lr, cfg.momentum, 0.0);
      }
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      if (!gr.gamma.empty()) apply_update(bn->gamma, vel.gamma, gr.gamma, lr, cfg.momentum, 0.0);
      if (!gr.beta.empty()) apply_update(bn->beta, vel.beta, gr.beta, lr, cfg.momentum, 0.0);
      if (i < batch_stats.size() && !batch_stats[i].mean.empty()) {
        const auto& st = batch_stats[i];
        const float bm = static_cast<float>(cfg.bn_momentum);
        for (std::size_t c = 0; c < bn->mean.size(); ++c) {
          bn->mean[c] = bm * bn->mean[c] + (1.0f - bm) * st.mean[c];
          bn->variance[c] = bm * bn->variance[c] + (1.0f - bm) * st.variance[c];
        }
      }
    } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
      if (!gr.weights.empty()) {
        apply_update(dl->weights.data, vel.weights, gr.weights, lr, cfg.momentum,
                     cfg.weight_decay);
      }
      if (!gr.bias.empty()) apply_update(dl->bias, vel.bias, gr.bias, lr, cfg.momentum, 0.0);
    }
  }
  ++state.step;
}

TrainResult train(const Graph& g, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg) {
  check_config(cfg);
  const std::int64_t n = train_set.size();
  if (n < 1) throw DataError("train: empty training set");
  if (cfg.batch_size > n) throw DataError("train: batch size exceeds the training set");

  TrainState state;
  state.graph = init_weights(g, stream_seed(cfg.seed, "init"));
  state.velocity.assign(g.layers.size(), {});
  Rng shuffle_rng(stream_seed(cfg.seed, "shuffle"));

  const Shape& is = train_set.images.shape;
  const std::size_t pixels = static_cast<std::size_t>(is.h() * is.w() * is.c());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<LayerGrads> grads;
  std::vector<BnBatchStats> bn_stats;
  TensorF32 batch(Shape{cfg.batch_size, is.h(), is.w(), is.c()});
  std::vector<std::uint16_t> batch_labels(static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    const std::int64_t num_batches = n / cfg.batch_size;
    double epoch_loss = 0.0;
    for (std::int64_t b = 0; b < num_batches; ++b) {
      for (int k = 0; k < cfg.batch_size; ++k) {
        const std::int64_t src = order[static_cast<std::size_t>(b * cfg.batch_size + k)];
        std::copy_n(train_set.images.data.begin() + static_cast<std::ptrdiff_t>(src * pixels),
                    pixels, batch.data.begin() + static_cast<std::ptrdiff_t>(k) *
                                static_cast<std::ptrdiff_t>(pixels));
        batch_labels[static_cast<std::size_t>(k)] = train_set.labels[static_cast<std::size_t>(src)];
      }
      const double loss = forward_backward(state.graph, batch, batch_labels, grads, &bn_stats);
      if (!std::isfinite(loss)) {
        throw DataError("training aborted: non-finite loss at step " +
                        std::to_string(state.step));
      }
      if (loss > 1e3) {
        throw DataError("training aborted: divergence (loss " + std::to_string(loss) +
                        ") at step " + std::to_string(state.step));
      }
      sgd_step(state, grads, bn_stats, cfg);
      epoch_loss += loss;
    }
    EpochStats es;
    es.epoch = epoch;
    es.loss = num_batches > 0 ? epoch_loss / static_cast<double>(num_batches) : 0.0;
    es.val_acc = evaluate(state.graph, val_set);
    result.history.push_back(es);
  }
  result.graph = std::move(state.graph);
  return result;
}

}  // namespace sepquant
