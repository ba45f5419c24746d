#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <type_traits>

#include "spnet/errors.hpp"
#include "spnet/tensor.hpp"

namespace spnet::ops {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Accumulator type for reductions: float promotes to double, wider scalars
/// accumulate in their own precision.
template <typename S>
using Acc = std::conditional_t<std::is_same_v<S, float>, double, S>;

// ---------------------------------------------------------------------------
// conv2d: stride-1 cross-correlation, 3x3 with zero padding 1 or 1x1 with
// padding 0.  Weights are (out_channels, in_channels, k, k), bias is
// (1, out_channels, 1, 1).
// ---------------------------------------------------------------------------

inline void check_conv_args(Index k, int pad) {
  if (!((k == 3 && pad == 1) || (k == 1 && pad == 0)))
    throw std::invalid_argument("conv2d: supported configurations are k=3/pad=1 and k=1/pad=0");
}

/// Unfolds one batch item into a (cin*9)-by-(h*w) patch matrix; out-of-image
/// taps stay zero.
template <typename S>
void im2col3(const Tensor<S>& in, Index b, MatRM<S>& col) {
  const Index cin = in.channels(), h = in.height(), w = in.width();
  col.setZero();
  for (Index ci = 0; ci < cin; ++ci) {
    const auto pl = in.plane(b, ci);
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Index r = (ci * 3 + ky) * 3 + kx;
        const Index dy = ky - 1, dx = kx - 1;
        const Index x0 = std::max<Index>(0, -dx), x1 = std::min(w, w - dx);
        if (x1 <= x0) continue;
        auto row = col.row(r);
        for (Index y = std::max<Index>(0, -dy); y < std::min(h, h - dy); ++y)
          row.segment(y * w + x0, x1 - x0) = pl.row(y + dy).segment(x0 + dx, x1 - x0);
      }
    }
  }
}

/// Scatter-adds the adjoint of im2col3 back onto an input-shaped tensor.
template <typename S>
void col2im3(const MatRM<S>& col, Index b, Tensor<S>& grad_in) {
  const Index cin = grad_in.channels(), h = grad_in.height(), w = grad_in.width();
  for (Index ci = 0; ci < cin; ++ci) {
    auto pl = grad_in.plane(b, ci);
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Index r = (ci * 3 + ky) * 3 + kx;
        const Index dy = ky - 1, dx = kx - 1;
        const Index x0 = std::max<Index>(0, -dx), x1 = std::min(w, w - dx);
        if (x1 <= x0) continue;
        const auto row = col.row(r);
        for (Index y = std::max<Index>(0, -dy); y < std::min(h, h - dy); ++y)
          pl.row(y + dy).segment(x0 + dx, x1 - x0) += row.segment(y * w + x0, x1 - x0).array();
      }
    }
  }
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& in, const Tensor<S>& w, const Tensor<S>& bias, int pad) {
  const Index k = w.height();
  check_conv_args(k, pad);
  if (w.width() != k) throw std::invalid_argument("conv2d: non-square kernel");
  if (in.channels() != w.channels())
    throw std::invalid_argument("conv2d: input/weight channel mismatch");
  const Index n = in.batch(), cout = w.batch(), h = in.height(), wd = in.width();
  if (bias.channels() != cout || bias.size() != cout)
    throw std::invalid_argument("conv2d: bad bias shape");

  Tensor<S> out(n, cout, h, wd);
  Eigen::Map<const MatRM<S>> wmat(w.raw().data(), cout, in.channels() * k * k);
  Eigen::Map<const Vec<S>> bvec(bias.raw().data(), cout);
  MatRM<S> col;
  if (k == 3) col.resize(in.channels() * 9, h * wd);
  for (Index b = 0; b < n; ++b) {
    if (k == 1) {
      out.item(b).noalias() = wmat * in.item(b);
    } else {
      im2col3(in, b, col);
      out.item(b).noalias() = wmat * col;
    }
    out.item(b).colwise() += bvec;
  }
  return out;
}

template <typename S>
struct Conv2dGrads {
  Tensor<S> input, weights, bias;
};

template <typename S>
Conv2dGrads<S> conv2d_adjoint(const Tensor<S>& in, const Tensor<S>& w,
                              const Tensor<S>& grad_out, int pad) {
  const Index k = w.height();
  check_conv_args(k, pad);
  const Index n = in.batch(), cin = in.channels(), cout = w.batch();
  const Index h = in.height(), wd = in.width();

  Conv2dGrads<S> g{Tensor<S>(n, cin, h, wd), Tensor<S>(cout, cin, k, k), Tensor<S>(1, cout, 1, 1)};
  Eigen::Map<const MatRM<S>> wmat(w.raw().data(), cout, cin * k * k);
  Eigen::Map<MatRM<S>> gwmat(g.weights.raw().data(), cout, cin * k * k);
  Eigen::Map<Vec<S>> gbvec(g.bias.raw().data(), cout);

  MatRM<S> col, gcol;
  if (k == 3) {
    col.resize(cin * 9, h * wd);
    gcol.resize(cin * 9, h * wd);
  }
  for (Index b = 0; b < n; ++b) {
    const auto go = grad_out.item(b);
    gbvec += go.rowwise().sum();
    if (k == 1) {
      gwmat.noalias() += go * in.item(b).transpose();
      g.input.item(b).noalias() = wmat.transpose() * go;
    } else {
      im2col3(in, b, col);
      gwmat.noalias() += go * col.transpose();
      gcol.noalias() = wmat.transpose() * go;
      col2im3(gcol, b, g.input);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& in) {
  Tensor<S> out(in.batch(), in.channels(), in.height(), in.width());
  out.raw() = in.raw().max(S(0));
  return out;
}

/// Subgradient convention: zero at the kink (strict comparison).
template <typename S>
Tensor<S> relu_adjoint(const Tensor<S>& in, const Tensor<S>& grad_out) {
  if (!in.same_shape(grad_out)) throw std::invalid_argument("relu_adjoint: shape mismatch");
  Tensor<S> g(in.batch(), in.channels(), in.height(), in.width());
  g.raw() = (in.raw() > S(0)).select(grad_out.raw(), S(0));
  return g;
}

// ---------------------------------------------------------------------------
// maxpool 2x2, stride 2.  Ties resolve to the first position in row-major
// window order, so the kept argmax is unique.
// ---------------------------------------------------------------------------

template <typename S>
struct MaxPoolResult {
  Tensor<S> output;
  Eigen::Array<Index, Eigen::Dynamic, 1> argmax;  // plane-local y*w+x, in output order
  std::array<Index, 4> input_dims;
};

template <typename S>
MaxPoolResult<S> maxpool2x2(const Tensor<S>& in) {
  const Index n = in.batch(), c = in.channels(), h = in.height(), w = in.width();
  if (h % 2 || w % 2) throw std::invalid_argument("maxpool2x2: odd spatial size");
  MaxPoolResult<S> res{Tensor<S>(n, c, h / 2, w / 2),
                       Eigen::Array<Index, Eigen::Dynamic, 1>(n * c * (h / 2) * (w / 2)),
                       in.dims()};
  Index o = 0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const auto pl = in.plane(b, ch);
      auto outpl = res.output.plane(b, ch);
      for (Index y = 0; y < h; y += 2)
        for (Index x = 0; x < w; x += 2) {
          S best = pl(y, x);
          Index arg = y * w + x;
          if (pl(y, x + 1) > best) { best = pl(y, x + 1); arg = y * w + x + 1; }
          if (pl(y + 1, x) > best) { best = pl(y + 1, x); arg = (y + 1) * w + x; }
          if (pl(y + 1, x + 1) > best) { best = pl(y + 1, x + 1); arg = (y + 1) * w + x + 1; }
          outpl(y / 2, x / 2) = best;
          res.argmax[o++] = arg;
        }
    }
  return res;
}

template <typename S>
Tensor<S> maxpool2x2_adjoint(const MaxPoolResult<S>& fw, const Tensor<S>& grad_out) {
  const auto [n, c, h, w] = fw.input_dims;
  Tensor<S> g(n, c, h, w);
  Index o = 0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      auto pl = g.plane(b, ch);
      const auto go = grad_out.plane(b, ch);
      for (Index y = 0; y < h / 2; ++y)
        for (Index x = 0; x < w / 2; ++x) {
          const Index arg = fw.argmax[o++];
          pl(arg / w, arg % w) += go(y, x);
        }
    }
  return g;
}

// ---------------------------------------------------------------------------
// deconv 2x2, stride 2 (transposed convolution).  Weights are
// (in_channels, out_channels, 2, 2); every input pixel paints one disjoint
// 2x2 output block.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> deconv2x2(const Tensor<S>& in, const Tensor<S>& w, const Tensor<S>& bias) {
  const Index n = in.batch(), cin = in.channels(), h = in.height(), wd = in.width();
  if (w.batch() != cin || w.height() != 2 || w.width() != 2)
    throw std::invalid_argument("deconv2x2: bad weight shape");
  const Index cout = w.channels();
  if (bias.size() != cout) throw std::invalid_argument("deconv2x2: bad bias shape");

  Tensor<S> out(n, cout, 2 * h, 2 * wd);
  Eigen::Map<const MatRM<S>> wmat(w.raw().data(), cin, cout * 4);
  Eigen::Map<const Vec<S>> bvec(bias.raw().data(), cout);
  MatRM<S> tmp(cout * 4, h * wd);
  for (Index b = 0; b < n; ++b) {
    tmp.noalias() = wmat.transpose() * in.item(b);
    for (Index co = 0; co < cout; ++co) {
      auto outpl = out.plane(b, co);
      for (Index dy = 0; dy < 2; ++dy)
        for (Index dx = 0; dx < 2; ++dx) {
          const auto row = tmp.row((co * 2 + dy) * 2 + dx);
          for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < wd; ++x)
              outpl(2 * y + dy, 2 * x + dx) = row[y * wd + x] + bvec[co];
        }
    }
  }
  return out;
}

template <typename S>
struct Deconv2x2Grads {
  Tensor<S> input, weights, bias;
};

template <typename S>
Deconv2x2Grads<S> deconv2x2_adjoint(const Tensor<S>& in, const Tensor<S>& w,
                                    const Tensor<S>& grad_out) {
  const Index n = in.batch(), cin = in.channels(), h = in.height(), wd = in.width();
  const Index cout = w.channels();
  if (grad_out.height() != 2 * h || grad_out.width() != 2 * wd || grad_out.channels() != cout)
    throw std::invalid_argument("deconv2x2_adjoint: shape mismatch");

  Deconv2x2Grads<S> g{Tensor<S>(n, cin, h, wd), Tensor<S>(cin, cout, 2, 2), Tensor<S>(1, cout, 1, 1)};
  Eigen::Map<const MatRM<S>> wmat(w.raw().data(), cin, cout * 4);
  Eigen::Map<MatRM<S>> gwmat(g.weights.raw().data(), cin, cout * 4);
  Eigen::Map<Vec<S>> gbvec(g.bias.raw().data(), cout);

  MatRM<S> gathered(cout * 4, h * wd);
  for (Index b = 0; b < n; ++b) {
    for (Index co = 0; co < cout; ++co) {
      const auto gopl = grad_out.plane(b, co);
      gbvec[co] += S(gopl.template cast<Acc<S>>().sum());
      for (Index dy = 0; dy < 2; ++dy)
        for (Index dx = 0; dx < 2; ++dx) {
          auto row = gathered.row((co * 2 + dy) * 2 + dx);
          for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < wd; ++x)
              row[y * wd + x] = gopl(2 * y + dy, 2 * x + dx);
        }
    }
    g.input.item(b).noalias() = wmat * gathered;
    gwmat.noalias() += in.item(b) * gathered.transpose();
  }
  return g;
}

// ---------------------------------------------------------------------------
// channel concatenation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("concat_channels: spatial/batch mismatch");
  Tensor<S> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (Index i = 0; i < a.batch(); ++i) {
    out.item(i).topRows(a.channels()) = a.item(i);
    out.item(i).bottomRows(b.channels()) = b.item(i);
  }
  return out;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& g, Index first_channels) {
  if (first_channels <= 0 || first_channels >= g.channels())
    throw std::invalid_argument("split_channels: bad split point");
  Tensor<S> a(g.batch(), first_channels, g.height(), g.width());
  Tensor<S> b(g.batch(), g.channels() - first_channels, g.height(), g.width());
  for (Index i = 0; i < g.batch(); ++i) {
    a.item(i) = g.item(i).topRows(first_channels);
    b.item(i) = g.item(i).bottomRows(g.channels() - first_channels);
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// batch normalization over (batch, height, width) per channel
// ---------------------------------------------------------------------------

template <typename S>
struct BatchNormCache {
  Tensor<S> xhat;
  Eigen::Array<S, Eigen::Dynamic, 1> inv_std;
  bool train = true;
};

/// In training mode normalizes with batch statistics and updates the running
/// estimates in place (unbiased variance for the running estimate); in eval
/// mode normalizes with the running estimates only.
template <typename S>
Tensor<S> batchnorm(const Tensor<S>& in, const Tensor<S>& gamma, const Tensor<S>& beta,
                    Tensor<S>& running_mean, Tensor<S>& running_var, bool train,
                    double momentum, double eps, BatchNormCache<S>* cache) {
  const Index n = in.batch(), c = in.channels(), h = in.height(), w = in.width();
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c)
    throw std::invalid_argument("batchnorm: parameter size mismatch");
  const Index m = n * h * w;

  Tensor<S> out(n, c, h, w);
  Tensor<S> xhat(n, c, h, w);
  Eigen::Array<S, Eigen::Dynamic, 1> inv_std(c);

  for (Index ch = 0; ch < c; ++ch) {
    Acc<S> mean, var;
    if (train) {
      Acc<S> sum = 0, sq = 0;
      for (Index b = 0; b < n; ++b) {
        const auto pl = in.plane(b, ch).template cast<Acc<S>>();
        sum += pl.sum();
        sq += (pl * pl).sum();
      }
      mean = sum / Acc<S>(m);
      var = sq / Acc<S>(m) - mean * mean;
      if (var < 0) var = 0;
      const Acc<S> unbiased = m > 1 ? var * Acc<S>(m) / Acc<S>(m - 1) : var;
      running_mean.raw()[ch] =
          S((1.0 - momentum) * Acc<S>(running_mean.raw()[ch]) + momentum * mean);
      running_var.raw()[ch] =
          S((1.0 - momentum) * Acc<S>(running_var.raw()[ch]) + momentum * unbiased);
    } else {
      mean = Acc<S>(running_mean.raw()[ch]);
      var = Acc<S>(running_var.raw()[ch]);
    }
    const S istd = S(1.0 / std::sqrt(double(var) + eps));
    inv_std[ch] = istd;
    const S mu = S(mean), ga = gamma.raw()[ch], be = beta.raw()[ch];
    for (Index b = 0; b < n; ++b) {
      xhat.plane(b, ch) = (in.plane(b, ch) - mu) * istd;
      out.plane(b, ch) = xhat.plane(b, ch) * ga + be;
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->train = train;
  }
  return out;
}

template <typename S>
struct BatchNormGrads {
  Tensor<S> input, gamma, beta;
};

template <typename S>
BatchNormGrads<S> batchnorm_adjoint(const BatchNormCache<S>& cache, const Tensor<S>& gamma,
                                    const Tensor<S>& grad_out) {
  const Index n = grad_out.batch(), c = grad_out.channels();
  const Index h = grad_out.height(), w = grad_out.width();
  const Index m = n * h * w;

  BatchNormGrads<S> g{Tensor<S>(n, c, h, w), Tensor<S>(1, c, 1, 1), Tensor<S>(1, c, 1, 1)};
  for (Index ch = 0; ch < c; ++ch) {
    Acc<S> dbeta = 0, dgamma = 0;
    for (Index b = 0; b < n; ++b) {
      const auto go = grad_out.plane(b, ch).template cast<Acc<S>>();
      dbeta += go.sum();
      dgamma += (go * cache.xhat.plane(b, ch).template cast<Acc<S>>()).sum();
    }
    g.beta.raw()[ch] = S(dbeta);
    g.gamma.raw()[ch] = S(dgamma);
    const S ga = gamma.raw()[ch], istd = cache.inv_std[ch];
    if (cache.train) {
      const S mean_dy = S(dbeta / Acc<S>(m)), mean_dy_xhat = S(dgamma / Acc<S>(m));
      for (Index b = 0; b < n; ++b)
        g.input.plane(b, ch) =
            (grad_out.plane(b, ch) - mean_dy - cache.xhat.plane(b, ch) * mean_dy_xhat) *
            (ga * istd);
    } else {
      for (Index b = 0; b < n; ++b)
        g.input.plane(b, ch) = grad_out.plane(b, ch) * (ga * istd);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// sigmoid
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& in) {
  Tensor<S> out(in.batch(), in.channels(), in.height(), in.width());
  const S* src = in.raw().data();
  S* dst = out.raw().data();
  for (Index i = 0; i < in.size(); ++i) {
    const S x = src[i];
    if (x >= S(0)) {
      dst[i] = S(1) / (S(1) + std::exp(-x));
    } else {
      const S e = std::exp(x);
      dst[i] = e / (S(1) + e);
    }
  }
  return out;
}

/// Adjoint expressed through the forward output: g * y * (1 - y).
template <typename S>
Tensor<S> sigmoid_adjoint(const Tensor<S>& out, const Tensor<S>& grad_out) {
  Tensor<S> g(out.batch(), out.channels(), out.height(), out.width());
  g.raw() = grad_out.raw() * out.raw() * (S(1) - out.raw());
  return g;
}

}  // namespace spnet::ops
