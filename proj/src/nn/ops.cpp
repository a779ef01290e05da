#include "mfq/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mfq/error.hpp"
#include "mfq/numeric/quantize.hpp"

namespace mfq::nn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + " expects an NCHW tensor, got " + shape_str(x.shape));
}

// Column matrix (C*k*k, H*W) of one sample for a stride-1 convolution.
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, int k, int pad, double* col) {
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
  for (std::size_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * H * W;
        for (long y = 0; y < Hl; ++y) {
          const long sy = y + ky - pad;
          double* out = row + y * Wl;
          if (sy < 0 || sy >= Hl) {
            std::fill(out, out + Wl, 0.0);
            continue;
          }
          const double* src = x + (c * H + static_cast<std::size_t>(sy)) * W;
          for (long xx = 0; xx < Wl; ++xx) {
            const long sx = xx + kx - pad;
            out[xx] = (sx < 0 || sx >= Wl) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t C, std::size_t H, std::size_t W, int k, int pad, double* gx) {
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
  for (std::size_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * H * W;
        for (long y = 0; y < Hl; ++y) {
          const long sy = y + ky - pad;
          if (sy < 0 || sy >= Hl) continue;
          double* dst = gx + (c * H + static_cast<std::size_t>(sy)) * W;
          const double* in = row + y * Wl;
          for (long xx = 0; xx < Wl; ++xx) {
            const long sx = xx + kx - pad;
            if (sx >= 0 && sx < Wl) dst[sx] += in[xx];
          }
        }
      }
    }
  }
}

// Source index pairs and weights of bilinear x2 upsampling along one axis.
struct Interp {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

Interp upsample_axis(std::size_t in) {
  Interp r;
  const std::size_t out = 2 * in;
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    const auto a = static_cast<std::size_t>(std::floor(src));
    const std::size_t b = std::min(a + 1, in - 1);
    r.i0.push_back(a);
    r.i1.push_back(b);
    r.w1.push_back(src - static_cast<double>(a));
  }
  return r;
}

}  // namespace

Id conv2d(Tape& t, Id xi, Id wi, Id bi, int pad) {
  const Tensor& x = t.value(xi);
  const Tensor& w = t.value(wi);
  const Tensor& b = t.value(bi);
  require_rank4(x, "conv2d");
  if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(1) != x.dim(1) || b.numel() != w.dim(0)) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape) + " incompatible with input " + shape_str(x.shape));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  if (2 * pad != k - 1) throw ShapeError("conv2d: only size-preserving padding is supported");
  const std::size_t HW = H * W, K = C * k * k;

  Tensor y(Shape{N, O, H, W});
  RealVec col(K * HW);
  CMapMat wm(w.data.data(), O, K);
  for (std::size_t n = 0; n < N; ++n) {
    const double* xs = x.data.data() + n * C * HW;
    MapMat ym(y.data.data() + n * O * HW, O, HW);
    if (k == 1) {
      ym.noalias() = wm * CMapMat(xs, C, HW);
    } else {
      im2col(xs, C, H, W, k, pad, col.data());
      ym.noalias() = wm * CMapMat(col.data(), K, HW);
    }
    for (std::size_t o = 0; o < O; ++o) ym.row(o).array() += b.data[o];
  }

  auto fn = [&t, xi, wi, N, C, H, W, O, k, pad, HW, K](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& x = t.value(xi);
    const Tensor& w = t.value(wi);
    CMapMat wm(w.data.data(), O, K);
    MapMat gw(gin[1]->data.data(), O, K);
    RealVec col(K * HW), gcol(K * HW);
    for (std::size_t n = 0; n < N; ++n) {
      const double* xs = x.data.data() + n * C * HW;
      CMapMat gm(g.data.data() + n * O * HW, O, HW);
      double* gxs = gin[0]->data.data() + n * C * HW;
      if (k == 1) {
        gw.noalias() += gm * CMapMat(xs, C, HW).transpose();
        MapMat(gxs, C, HW).noalias() += wm.transpose() * gm;
      } else {
        im2col(xs, C, H, W, k, pad, col.data());
        gw.noalias() += gm * CMapMat(col.data(), K, HW).transpose();
        MapMat(gcol.data(), K, HW).noalias() = wm.transpose() * gm;
        col2im_add(gcol.data(), C, H, W, k, pad, gxs);
      }
      for (std::size_t o = 0; o < O; ++o) gin[2]->data[o] += gm.row(o).sum();
    }
  };
  return t.record(std::move(y), {xi, wi, bi}, fn, "conv" + std::to_string(k) + "x" + std::to_string(k));
}

Id dense(Tape& t, Id xi, Id wi, Id bi) {
  const Tensor& x = t.value(xi);
  const Tensor& w = t.value(wi);
  const Tensor& b = t.value(bi);
  if (x.rank() < 2) throw ShapeError("dense: input must have a batch dimension");
  const std::size_t N = x.dim(0), F = x.numel() / N, O = w.rank() == 2 ? w.dim(0) : 0;
  if (w.rank() != 2 || w.dim(1) != F || b.numel() != O) {
    throw ShapeError("dense: weight " + shape_str(w.shape) + " incompatible with input " + shape_str(x.shape));
  }
  Tensor y(Shape{N, O});
  MapMat ym(y.data.data(), N, O);
  ym.noalias() = CMapMat(x.data.data(), N, F) * CMapMat(w.data.data(), O, F).transpose();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) ym(n, o) += b.data[o];
  }
  auto fn = [&t, xi, wi, N, F, O](const Tensor& g, std::span<Tensor* const> gin) {
    CMapMat gm(g.data.data(), N, O);
    MapMat(gin[0]->data.data(), N, F).noalias() += gm * CMapMat(t.value(wi).data.data(), O, F);
    MapMat(gin[1]->data.data(), O, F).noalias() += gm.transpose() * CMapMat(t.value(xi).data.data(), N, F);
    for (std::size_t o = 0; o < O; ++o) gin[2]->data[o] += gm.col(o).sum();
  };
  return t.record(std::move(y), {xi, wi, bi}, fn, "dense");
}

Id batchnorm(Tape& t, Id xi, Id gi, Id bi, BatchNormState& state, bool training) {
  const Tensor& x = t.value(xi);
  require_rank4(x, "batchnorm");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const Tensor& gamma = t.value(gi);
  const Tensor& beta = t.value(bi);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.numel() != C) {
    throw ShapeError("batchnorm: channel count mismatch for input " + shape_str(x.shape));
  }
  const double count = static_cast<double>(N * HW);
  std::vector<double> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = x.data.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / count;
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = x.data.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / count;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1.0 ? v / (count - 1.0) : var;
      state.running_mean.data[c] = (1.0 - state.momentum) * state.running_mean.data[c] + state.momentum * mu;
      state.running_var.data[c] = (1.0 - state.momentum) * state.running_var.data[c] + state.momentum * unbiased;
    } else {
      mean[c] = state.running_mean.data[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var.data[c] + state.eps);
    }
  }
  Tensor y(x.shape);
  Tensor xhat(x.shape);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double h = (x.data[off + i] - mean[c]) * inv_std[c];
        xhat.data[off + i] = h;
        y.data[off + i] = gamma.data[c] * h + beta.data[c];
      }
    }
  }
  auto fn = [&t, gi, N, C, HW, count, training, inv_std, xhat = std::move(xhat)](
                const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& gamma = t.value(gi);
    for (std::size_t c = 0; c < C; ++c) {
      double sg = 0.0, sgh = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          sg += g.data[off + i];
          sgh += g.data[off + i] * xhat.data[off + i];
        }
      }
      gin[1]->data[c] += sgh;
      gin[2]->data[c] += sg;
      const double scale = gamma.data[c] * inv_std[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          if (training) {
            gin[0]->data[off + i] += scale * (g.data[off + i] - sg / count - xhat.data[off + i] * sgh / count);
          } else {
            gin[0]->data[off + i] += scale * g.data[off + i];
          }
        }
      }
    }
  };
  return t.record(std::move(y), {xi, gi, bi}, fn, "batchnorm");
}

Id relu(Tape& t, Id xi) {
  Tensor y = t.value(xi);
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  auto fn = [&t, xi](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& x = t.value(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (x.data[i] > 0.0) gin[0]->data[i] += g.data[i];
    }
  };
  return t.record(std::move(y), {xi}, fn, "relu");
}

Id maxpool2(Tape& t, Id xi) {
  const Tensor& x = t.value(xi);
  require_rank4(x, "maxpool2");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(x.shape));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor y(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> arg(y.numel());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* p = x.data.data() + nc * H * W;
    for (std::size_t yy = 0; yy < Ho; ++yy) {
      for (std::size_t xx = 0; xx < Wo; ++xx, ++o) {
        std::size_t best = (2 * yy) * W + 2 * xx;
        for (std::size_t idx : {best + 1, best + W, best + W + 1}) {
          if (p[idx] > p[best]) best = idx;
        }
        arg[o] = nc * H * W + best;
        y.data[o] = p[best];
      }
    }
  }
  auto fn = [arg = std::move(arg)](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < g.numel(); ++i) gin[0]->data[arg[i]] += g.data[i];
  };
  return t.record(std::move(y), {xi}, fn, "maxpool2");
}

Id upsample2(Tape& t, Id xi) {
  const Tensor& x = t.value(xi);
  require_rank4(x, "upsample2");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Interp iy = upsample_axis(H), ix = upsample_axis(W);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  Tensor y(Shape{N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* p = x.data.data() + nc * H * W;
    double* q = y.data.data() + nc * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const double wy = iy.w1[oy];
      const double* r0 = p + iy.i0[oy] * W;
      const double* r1 = p + iy.i1[oy] * W;
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double wx = ix.w1[ox];
        const double top = (1.0 - wx) * r0[ix.i0[ox]] + wx * r0[ix.i1[ox]];
        const double bot = (1.0 - wx) * r1[ix.i0[ox]] + wx * r1[ix.i1[ox]];
        q[oy * Wo + ox] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  auto fn = [N, C, H, W, iy, ix](const Tensor& g, std::span<Tensor* const> gin) {
    const std::size_t Ho = 2 * H, Wo = 2 * W;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const double* q = g.data.data() + nc * Ho * Wo;
      double* p = gin[0]->data.data() + nc * H * W;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        const double wy = iy.w1[oy];
        double* r0 = p + iy.i0[oy] * W;
        double* r1 = p + iy.i1[oy] * W;
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const double wx = ix.w1[ox];
          const double gv = q[oy * Wo + ox];
          r0[ix.i0[ox]] += (1.0 - wy) * (1.0 - wx) * gv;
          r0[ix.i1[ox]] += (1.0 - wy) * wx * gv;
          r1[ix.i0[ox]] += wy * (1.0 - wx) * gv;
          r1[ix.i1[ox]] += wy * wx * gv;
        }
      }
    }
  };
  return t.record(std::move(y), {xi}, fn, "upsample2");
}

Id concat(Tape& t, Id ai, Id bi) {
  const Tensor& a = t.value(ai);
  const Tensor& b = t.value(bi);
  require_rank4(a, "concat");
  require_rank4(b, "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor y(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data.data() + n * Ca * HW, Ca * HW, y.data.data() + n * (Ca + Cb) * HW);
    std::copy_n(b.data.data() + n * Cb * HW, Cb * HW, y.data.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  auto fn = [N, Ca, Cb, HW](const Tensor& g, std::span<Tensor* const> gin) {
    for (std::size_t n = 0; n < N; ++n) {
      const double* src = g.data.data() + n * (Ca + Cb) * HW;
      double* ga = gin[0]->data.data() + n * Ca * HW;
      double* gb = gin[1]->data.data() + n * Cb * HW;
      for (std::size_t i = 0; i < Ca * HW; ++i) ga[i] += src[i];
      for (std::size_t i = 0; i < Cb * HW; ++i) gb[i] += src[Ca * HW + i];
    }
  };
  return t.record(std::move(y), {ai, bi}, fn, "concat");
}

Id quantize(Tape& t, Id xi, const num::QuantizerState& q, double* bias_grad, bool ste_clip_zero, std::string label) {
  Tensor y = t.value(xi);
  num::quantize_inplace(y.values(), q.format, q.E0);
  auto fn = [&t, xi, q, bias_grad, ste_clip_zero](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& x = t.value(xi);
    auto r = num::quantize_backward(g.values(), x.values(), q.format, q.E0, ste_clip_zero);
    for (std::size_t i = 0; i < r.g_x.size(); ++i) gin[0]->data[i] += r.g_x[i];
    if (bias_grad != nullptr) *bias_grad += r.g_E0;
  };
  return t.record(std::move(y), {xi}, fn, std::move(label));
}

}  // namespace mfq::nn::ops
