// SPDX-License-Identifier: Apache-2.0
#include "pointbox/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace pointbox::nn {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Lazily formats the message so hot paths do not build strings.
template <typename F>
void require_fmt(bool ok, F&& message) {
  if (!ok) throw std::invalid_argument(message());
}

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// im2col for a single [C,H,W] image into [C*k*k, Ho*Wo].
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
  const int plane = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* out = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + Wo, T(0));
            continue;
          }
          const T* in = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            out[ox] = (ix >= 0 && ix < W) ? in[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
  const int plane = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* out = x + (static_cast<std::size_t>(c) * H + iy) * W;
          const T* in = row + oy * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require_fmt(va.shape == vb.shape, [&] {
    return "add: shape mismatch " + shape_string(va.shape) + " vs " + shape_string(vb.shape);
  });
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor<T>& dg = t.grad(v);
      for (std::size_t i = 0; i < g.numel(); ++i) dg.data[i] += g.data[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> out = tape.value(a);
  for (T& v : out.data) v *= factor;
  return tape.record(std::move(out), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dg = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) dg.data[i] += factor * g.data[i];
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(a);
    Tensor<T>& dg = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (x.data[i] > T(0)) dg.data[i] += g.data[i];
    }
  });
}

template <typename T>
Var detach(Tape<T>& tape, Var a) {
  return tape.constant(tape.value(a));
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, std::vector<int> shape) {
  Tensor<T> out = tape.value(a);
  require_fmt(Tensor<T>::count(shape) == out.numel(),
              [&] { return "reshape: " + shape_string(out.shape) + " to " + shape_string(shape); });
  out.shape = std::move(shape);
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dg = t.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) dg.data[i] += g.data[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  T total = T(0);
  for (T v : x.data) total += v;
  return tape.record(Tensor<T>({}, std::vector<T>{total}), {a},
                     [a](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& dg = t.grad(a);
                       for (T& v : dg.data) v += g.data[0];
                     });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride, int pad) {
  const Tensor<T>& vx = tape.value(x);
  const Tensor<T>& vw = tape.value(w);
  require_fmt(vx.rank() == 3 && vw.rank() == 4 && vw.dim(1) == vx.dim(0) && vw.dim(2) == vw.dim(3),
              [&] { return "conv2d: input " + shape_string(vx.shape) + " weight " + shape_string(vw.shape); });
  const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
  const int O = vw.dim(0), k = vw.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d: empty output");
  const int K = C * k * k;
  const int P = Ho * Wo;

  // Column buffer shared with the backward closure.
  auto col = std::make_shared<Buffer<T>>();
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  if (!pointwise) {
    col->resize(static_cast<std::size_t>(K) * P);
    im2col(vx.ptr(), C, H, W, k, stride, pad, Ho, Wo, col->data());
  }
  const T* col_ptr = pointwise ? vx.ptr() : col->data();

  Tensor<T> out({O, Ho, Wo});
  MapMat<T> Y(out.ptr(), O, P);
  Y.noalias() = CMapMat<T>(vw.ptr(), O, K) * CMapMat<T>(col_ptr, K, P);
  if (b.valid()) {
    const Tensor<T>& vb = tape.value(b);
    require(vb.numel() == static_cast<std::size_t>(O), "conv2d: bias size");
    for (int o = 0; o < O; ++o) Y.row(o).array() += vb.data[o];
  }

  return tape.record(
      std::move(out), {x, w, b},
      [=](Tape<T>& t, const Tensor<T>& g) {
        CMapMat<T> dY(g.ptr(), O, P);
        const T* cp = pointwise ? t.value(x).ptr() : col->data();
        if (t.requires_grad(w)) {
          MapMat<T>(t.grad(w).ptr(), O, K).noalias() += dY * CMapMat<T>(cp, K, P).transpose();
        }
        if (b.valid() && t.requires_grad(b)) {
          Tensor<T>& db = t.grad(b);
          // Plain loop: Eigen's vectorized sum peels by address, which makes
          // the result depend on where the buffer happens to be allocated.
          for (int o = 0; o < O; ++o) {
            T acc = T(0);
            for (int i = 0; i < P; ++i) acc += g.data[static_cast<std::size_t>(o) * P + i];
            db.data[o] += acc;
          }
        }
        if (t.requires_grad(x)) {
          const Tensor<T>& vw2 = t.value(w);
          if (pointwise) {
            MapMat<T>(t.grad(x).ptr(), K, P).noalias() +=
                CMapMat<T>(vw2.ptr(), O, K).transpose() * dY;
          } else {
            Buffer<T> dcol(static_cast<std::size_t>(K) * P);
            MapMat<T>(dcol.data(), K, P).noalias() = CMapMat<T>(vw2.ptr(), O, K).transpose() * dY;
            col2im(dcol.data(), C, H, W, k, stride, pad, Ho, Wo, t.grad(x).ptr());
          }
        }
      });
}

template <typename T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups) {
  const Tensor<T>& vx = tape.value(x);
  require(vx.rank() == 3, "group_norm: expected [C,H,W]");
  const int C = vx.dim(0);
  require(groups > 0 && C % groups == 0, "group_norm: channels not divisible by groups");
  const int per_group = C / groups;
  const std::size_t plane = static_cast<std::size_t>(vx.dim(1)) * vx.dim(2);
  const std::size_t n = plane * per_group;
  const T eps = T(1e-5);

  auto xhat = std::make_shared<Tensor<T>>(vx.shape);
  auto inv_std = std::make_shared<std::vector<T>>(groups);
  Tensor<T> out(vx.shape);
  const Tensor<T>& vg = tape.value(gamma);
  const Tensor<T>& vb = tape.value(beta);
  for (int gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * n;
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += vx.data[base + i];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = vx.data[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[gi] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = base + i;
      const int c = static_cast<int>(idx / plane);
      xhat->data[idx] = (vx.data[idx] - mean) * is;
      out.data[idx] = xhat->data[idx] * vg.data[c] + vb.data[c];
    }
  }

  return tape.record(std::move(out), {x, gamma, beta}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& vg2 = t.value(gamma);
    if (t.requires_grad(gamma) || t.requires_grad(beta)) {
      std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
      for (std::size_t idx = 0; idx < g.numel(); ++idx) {
        const int c = static_cast<int>(idx / plane);
        dgamma[c] += g.data[idx] * xhat->data[idx];
        dbeta[c] += g.data[idx];
      }
      if (t.requires_grad(gamma)) {
        Tensor<T>& d = t.grad(gamma);
        for (int c = 0; c < C; ++c) d.data[c] += dgamma[c];
      }
      if (t.requires_grad(beta)) {
        Tensor<T>& d = t.grad(beta);
        for (int c = 0; c < C; ++c) d.data[c] += dbeta[c];
      }
    }
    if (!t.requires_grad(x)) return;
    Tensor<T>& dx = t.grad(x);
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = gi * n;
      T sum_d = T(0), sum_dx = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = base + i;
        const T d = g.data[idx] * vg2.data[idx / plane];
        sum_d += d;
        sum_dx += d * xhat->data[idx];
      }
      const T inv_n = T(1) / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = base + i;
        const T d = g.data[idx] * vg2.data[idx / plane];
        dx.data[idx] += (*inv_std)[gi] * (d - inv_n * sum_d - xhat->data[idx] * inv_n * sum_dx);
      }
    }
  });
}

template <typename T>
Var max_pool2x2(Tape<T>& tape, Var x) {
  const Tensor<T>& vx = tape.value(x);
  require(vx.rank() == 3, "max_pool2x2: expected [C,H,W]");
  const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
  const int Ho = H / 2, Wo = W / 2;
  require(Ho > 0 && Wo > 0, "max_pool2x2: input too small");
  Tensor<T> out({C, Ho, Wo});
  auto arg = std::make_shared<std::vector<int>>(out.numel());
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        int best = (c * H + 2 * oy) * W + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (c * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (vx.data[idx] > vx.data[best]) best = idx;
          }
        }
        const int o = (c * Ho + oy) * Wo + ox;
        out.data[o] = vx.data[best];
        (*arg)[o] = best;
      }
    }
  }
  return tape.record(std::move(out), {x}, [x, arg](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad(x);
    for (std::size_t o = 0; o < g.numel(); ++o) dx.data[(*arg)[o]] += g.data[o];
  });
}

template <typename T>
Var upsample_nearest(Tape<T>& tape, Var x, int out_h, int out_w) {
  const Tensor<T>& vx = tape.value(x);
  require(vx.rank() == 3, "upsample_nearest: expected [C,H,W]");
  const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
  auto src = std::make_shared<std::vector<int>>(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int xo = 0; xo < out_w; ++xo) {
      (*src)[y * out_w + xo] = (y * H / out_h) * W + (xo * W / out_w);
    }
  }
  Tensor<T> out({C, out_h, out_w});
  const std::size_t plane_in = static_cast<std::size_t>(H) * W;
  const std::size_t plane_out = src->size();
  for (int c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < plane_out; ++p) {
      out.data[c * plane_out + p] = vx.data[c * plane_in + (*src)[p]];
    }
  }
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad(x);
    for (int c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < plane_out; ++p) {
        dx.data[c * plane_in + (*src)[p]] += g.data[c * plane_out + p];
      }
    }
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Tensor<T>& vx = tape.value(x);
  const Tensor<T>& vw = tape.value(w);
  require_fmt(vx.rank() == 2 && vw.rank() == 2 && vx.dim(1) == vw.dim(1),
              [&] { return "linear: input " + shape_string(vx.shape) + " weight " + shape_string(vw.shape); });
  const int R = vx.dim(0), In = vx.dim(1), Out = vw.dim(0);
  Tensor<T> out({R, Out});
  MapMat<T> Y(out.ptr(), R, Out);
  Y.noalias() = CMapMat<T>(vx.ptr(), R, In) * CMapMat<T>(vw.ptr(), Out, In).transpose();
  if (b.valid()) {
    const Tensor<T>& vb = tape.value(b);
    require(vb.numel() == static_cast<std::size_t>(Out), "linear: bias size");
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(vb.ptr(), Out);
  }
  return tape.record(std::move(out), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    CMapMat<T> dY(g.ptr(), R, Out);
    if (t.requires_grad(w)) {
      MapMat<T>(t.grad(w).ptr(), Out, In).noalias() +=
          dY.transpose() * CMapMat<T>(t.value(x).ptr(), R, In);
    }
    if (b.valid() && t.requires_grad(b)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.grad(b).ptr(), Out) += dY.colwise().sum();
    }
    if (t.requires_grad(x)) {
      MapMat<T>(t.grad(x).ptr(), R, In).noalias() += dY * CMapMat<T>(t.value(w).ptr(), Out, In);
    }
  });
}

template <typename T>
Var concat(Tape<T>& tape, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat: no inputs");
  const Tensor<T>& first = tape.value(parts[0]);
  require(first.rank() >= 2, "concat: rank must be >= 2");
  const int R = first.dim(0);
  std::vector<int> shape = first.shape;
  std::size_t inner = first.numel() / (static_cast<std::size_t>(R) * first.dim(1));
  int channels = 0;
  std::vector<int> widths;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    require(v.rank() == first.rank() && v.dim(0) == R, "concat: leading axis mismatch");
    for (int a = 2; a < v.rank(); ++a) require(v.dim(a) == first.dim(a), "concat: trailing axes mismatch");
    widths.push_back(v.dim(1));
    channels += v.dim(1);
  }
  shape[1] = channels;
  Tensor<T> out(shape);
  const std::size_t row = static_cast<std::size_t>(channels) * inner;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor<T>& v = tape.value(parts[i]);
    const std::size_t chunk = static_cast<std::size_t>(widths[i]) * inner;
    for (int r = 0; r < R; ++r) {
      std::copy_n(v.ptr() + r * chunk, chunk, out.ptr() + r * row + offset);
    }
    offset += chunk;
  }
  return tape.record(std::move(out), std::span<const Var>(parts),
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < parts.size(); ++i) {
                         const std::size_t chunk = static_cast<std::size_t>(widths[i]) * inner;
                         if (t.requires_grad(parts[i])) {
                           Tensor<T>& d = t.grad(parts[i]);
                           for (int r = 0; r < R; ++r) {
                             const T* src = g.ptr() + r * row + off;
                             T* dst = d.ptr() + r * chunk;
                             for (std::size_t e = 0; e < chunk; ++e) dst[e] += src[e];
                           }
                         }
                         off += chunk;
                       }
                     });
}

template <typename T>
Var mean_trailing(Tape<T>& tape, Var x) {
  const Tensor<T>& vx = tape.value(x);
  require(vx.rank() >= 2, "mean_trailing: rank must be >= 2");
  const int R = vx.dim(0), C = vx.dim(1);
  const std::size_t inner = vx.numel() / (static_cast<std::size_t>(R) * C);
  Tensor<T> out({R, C});
  for (std::size_t rc = 0; rc < out.numel(); ++rc) {
    T s = T(0);
    for (std::size_t e = 0; e < inner; ++e) s += vx.data[rc * inner + e];
    out.data[rc] = s / static_cast<T>(inner);
  }
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad(x);
    const T inv = T(1) / static_cast<T>(inner);
    for (std::size_t rc = 0; rc < g.numel(); ++rc) {
      for (std::size_t e = 0; e < inner; ++e) dx.data[rc * inner + e] += g.data[rc] * inv;
    }
  });
}

template <typename T>
Var segment_mean(Tape<T>& tape, Var x, const std::vector<int>& offsets) {
  const Tensor<T>& vx = tape.value(x);
  require(vx.rank() == 2 && offsets.size() >= 1 && offsets.back() == vx.dim(0),
          "segment_mean: offsets do not cover the rows");
  const int N = static_cast<int>(offsets.size()) - 1;
  const int D = vx.dim(1);
  Tensor<T> out({N, D});
  for (int s = 0; s < N; ++s) {
    const int count = offsets[s + 1] - offsets[s];
    require(count > 0, "segment_mean: empty segment");
    for (int r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (int d = 0; d < D; ++d) out.data[s * D + d] += vx.data[static_cast<std::size_t>(r) * D + d];
    }
    for (int d = 0; d < D; ++d) out.data[s * D + d] /= static_cast<T>(count);
  }
  return tape.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad(x);
    for (int s = 0; s < N; ++s) {
      const T inv = T(1) / static_cast<T>(offsets[s + 1] - offsets[s]);
      for (int r = offsets[s]; r < offsets[s + 1]; ++r) {
        for (int d = 0; d < D; ++d) dx.data[static_cast<std::size_t>(r) * D + d] += g.data[s * D + d] * inv;
      }
    }
  });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var table, const std::vector<int>& rows) {
  const Tensor<T>& vt = tape.value(table);
  require(vt.rank() == 2, "gather_rows: table must be 2-D");
  const int C = vt.dim(0), E = vt.dim(1);
  Tensor<T> out({static_cast<int>(rows.size()), E});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < C, "gather_rows: row index out of range");
    std::copy_n(vt.ptr() + static_cast<std::size_t>(rows[i]) * E, E, out.ptr() + i * E);
  }
  return tape.record(std::move(out), {table}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad(table);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int e = 0; e < E; ++e) d.data[static_cast<std::size_t>(rows[i]) * E + e] += g.data[i * E + e];
    }
  });
}

template <typename T>
Var sigmoid_focal_loss(Tape<T>& tape, Var logits, const std::vector<std::int8_t>& targets, T alpha,
                       T gamma, T normalizer) {
  const Tensor<T>& x = tape.value(logits);
  require(x.numel() == targets.size(), "sigmoid_focal_loss: target count mismatch");
  T total = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (targets[i] < 0) continue;
    const T p = sigmoid(x.data[i]);
    if (targets[i] > 0) {
      total += alpha * std::pow(T(1) - p, gamma) * softplus(-x.data[i]);
    } else {
      total += (T(1) - alpha) * std::pow(p, gamma) * softplus(x.data[i]);
    }
  }
  return tape.record(
      Tensor<T>({}, std::vector<T>{total / normalizer}), {logits},
      [=](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(logits);
        Tensor<T>& dx = t.grad(logits);
        const T s = g.data[0] / normalizer;
        for (std::size_t i = 0; i < xv.numel(); ++i) {
          if (targets[i] < 0) continue;
          const T p = sigmoid(xv.data[i]);
          if (targets[i] > 0) {
            const T log_p = -softplus(-xv.data[i]);
            dx.data[i] += s * alpha * std::pow(T(1) - p, gamma) * (gamma * p * log_p - (T(1) - p));
          } else {
            const T log_q = -softplus(xv.data[i]);
            dx.data[i] += s * (T(1) - alpha) * std::pow(p, gamma) * (p - gamma * (T(1) - p) * log_q);
          }
        }
      });
}

template <typename T>
Var smooth_l1_loss(Tape<T>& tape, Var pred, const std::vector<T>& targets,
                   const std::vector<T>& weights, T beta, T normalizer) {
  const Tensor<T>& x = tape.value(pred);
  require(x.numel() == targets.size() && x.numel() == weights.size(),
          "smooth_l1_loss: size mismatch");
  T total = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (weights[i] == T(0)) continue;
    const T d = std::abs(x.data[i] - targets[i]);
    total += weights[i] * (d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta);
  }
  return tape.record(Tensor<T>({}, std::vector<T>{total / normalizer}), {pred},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(pred);
                       Tensor<T>& dx = t.grad(pred);
                       const T s = g.data[0] / normalizer;
                       for (std::size_t i = 0; i < xv.numel(); ++i) {
                         if (weights[i] == T(0)) continue;
                         const T d = xv.data[i] - targets[i];
                         const T slope = std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1));
                         dx.data[i] += s * weights[i] * slope;
                       }
                     });
}

template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, const std::vector<T>& targets, T normalizer) {
  const Tensor<T>& x = tape.value(logits);
  require(x.numel() == targets.size(), "bce_with_logits: target count mismatch");
  T total = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    total += softplus(x.data[i]) - targets[i] * x.data[i];
  }
  return tape.record(Tensor<T>({}, std::vector<T>{total / normalizer}), {logits},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(logits);
                       Tensor<T>& dx = t.grad(logits);
                       const T s = g.data[0] / normalizer;
                       for (std::size_t i = 0; i < xv.numel(); ++i) {
                         dx.data[i] += s * (sigmoid(xv.data[i]) - targets[i]);
                       }
                     });
}

#define POINTBOX_INSTANTIATE_OPS(T)                                                            \
  template Var add<T>(Tape<T>&, Var, Var);                                                     \
  template Var scale<T>(Tape<T>&, Var, T);                                                     \
  template Var relu<T>(Tape<T>&, Var);                                                         \
  template Var detach<T>(Tape<T>&, Var);                                                       \
  template Var reshape<T>(Tape<T>&, Var, std::vector<int>);                                    \
  template Var sum<T>(Tape<T>&, Var);                                                          \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int);                                   \
  template Var group_norm<T>(Tape<T>&, Var, Var, Var, int);                                    \
  template Var max_pool2x2<T>(Tape<T>&, Var);                                                  \
  template Var upsample_nearest<T>(Tape<T>&, Var, int, int);                                   \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                             \
  template Var concat<T>(Tape<T>&, const std::vector<Var>&);                                   \
  template Var mean_trailing<T>(Tape<T>&, Var);                                                \
  template Var segment_mean<T>(Tape<T>&, Var, const std::vector<int>&);                        \
  template Var gather_rows<T>(Tape<T>&, Var, const std::vector<int>&);                         \
  template Var sigmoid_focal_loss<T>(Tape<T>&, Var, const std::vector<std::int8_t>&, T, T, T); \
  template Var smooth_l1_loss<T>(Tape<T>&, Var, const std::vector<T>&, const std::vector<T>&,  \
                                 T, T);                                                        \
  template Var bce_with_logits<T>(Tape<T>&, Var, const std::vector<T>&, T);

POINTBOX_INSTANTIATE_OPS(float)
POINTBOX_INSTANTIATE_OPS(double)

}  // namespace pointbox::nn
