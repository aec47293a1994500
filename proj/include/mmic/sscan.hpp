#pragma once

// Selective state-space scan.
//
// Core recurrence over a length-L sequence with D channels and state size N:
//   abar[t][d][n] = exp(delta[t][d] * A[d][n])
//   h[t][d][n]    = abar * h[t-1][d][n] + (delta[t][d] * B[t][n]) * x[t][d]
//   y[t][d]       = sum_n C[t][n] * h[t][d][n] + D_skip[d] * x[t][d]
// with h[-1] = 0. A is expected to be negative so abar stays in (0, 1), but
// the kernels do not enforce that.
//
// Provided here:
//   - raw array kernels (forward, blocked forward, backward through time)
//   - selective_scan: fused graph op with analytic backward
//   - grid_to_seq / seq_to_grid: direction permutations for 2d inputs
//   - selective_scan_1d / ssm2d: composites that derive delta, B, C from x

#include <algorithm>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "mmic/graph.hpp"
#include "mmic/nn.hpp"
#include "mmic/ops.hpp"

namespace mmic {

// Zero-order-hold style discretization of the continuous parameters, with the
// Euler simplification for the input term:
//   abar[t][d][n] = exp(delta[t][d] * A[d][n]),  bbar[t][d][n] = delta[t][d] * B[t][n]
// Rejects nonpositive delta; the continuous form assumes a positive step.
template <typename T>
void discretize(int L, int D, int N, const T* delta, const T* Av, const T* Bv,
                T* abar, T* bbar) {
  for (int t = 0; t < L; ++t)
    for (int d = 0; d < D; ++d) {
      const T dt = delta[t * D + d];
      check(dt > T(0), "discretize: delta must be positive, got " +
                           std::to_string(dt) + " at t=" + std::to_string(t) +
                           " d=" + std::to_string(d));
      for (int n = 0; n < N; ++n) {
        abar[(static_cast<size_t>(t) * D + d) * N + n] = std::exp(dt * Av[d * N + n]);
        bbar[(static_cast<size_t>(t) * D + d) * N + n] = dt * Bv[t * N + n];
      }
    }
}

// Forward scan. y is L*D. If h_states is non-null it receives all L*D*N
// post-step states (needed for the backward pass). D_skip may be null.
template <typename T>
void scan_core_forward(int L, int D, int N, const T* x, const T* delta,
                       const T* Bv, const T* Cv, const T* Av,
                       const std::type_identity_t<T>* Dv, T* y,
                       std::type_identity_t<T>* h_states) {
  std::vector<T> h(static_cast<size_t>(D) * N, T(0));
  for (int t = 0; t < L; ++t) {
    for (int d = 0; d < D; ++d) {
      const T dt = delta[t * D + d];
      const T xt = x[t * D + d];
      T* hd = h.data() + static_cast<size_t>(d) * N;
      T acc = 0;
      for (int n = 0; n < N; ++n) {
        const T abar = std::exp(dt * Av[d * N + n]);
        const T t1 = abar * hd[n];
        const T t2 = (dt * Bv[t * N + n]) * xt;
        hd[n] = t1 + t2;
        acc += Cv[t * N + n] * hd[n];
      }
      if (Dv != nullptr) acc += Dv[d] * xt;
      y[t * D + d] = acc;
      if (h_states != nullptr) {
        T* out = h_states + (static_cast<size_t>(t) * D + d) * N;
        for (int n = 0; n < N; ++n) out[n] = hd[n];
      }
    }
  }
}

// Blocked forward scan. Each block first runs the recurrence from a zero
// state while accumulating per-token prefix products of abar, then folds in
// the carry state from the previous block:
//   h[t] = h_local[t] + P[t] * h_carry
// With block == 1 this reproduces the sequential kernel bit for bit: the
// local state is exactly the input term, P is exactly abar, and IEEE
// addition commutes.
template <typename T>
void scan_core_blocked(int L, int D, int N, int block, const T* x,
                       const T* delta, const T* Bv, const T* Cv, const T* Av,
                       const std::type_identity_t<T>* Dv, T* y) {
  check(block >= 1, "scan block size must be >= 1");
  const size_t dn = static_cast<size_t>(D) * N;
  std::vector<T> carry(dn, T(0));
  std::vector<T> h_local;
  std::vector<T> prefix;
  for (int s = 0; s < L; s += block) {
    const int e = std::min(s + block, L);
    const int bl = e - s;
    h_local.assign(static_cast<size_t>(bl) * dn, T(0));
    prefix.assign(static_cast<size_t>(bl) * dn, T(0));
    for (int t = s; t < e; ++t) {
      const int r = t - s;
      for (int d = 0; d < D; ++d) {
        const T dt = delta[t * D + d];
        const T xt = x[t * D + d];
        for (int n = 0; n < N; ++n) {
          const size_t i = static_cast<size_t>(d) * N + n;
          const T abar = std::exp(dt * Av[d * N + n]);
          const T t2 = (dt * Bv[t * N + n]) * xt;
          if (r == 0) {
            h_local[i] = t2;
            prefix[i] = abar;
          } else {
            h_local[r * dn + i] = abar * h_local[(r - 1) * dn + i] + t2;
            prefix[r * dn + i] = prefix[(r - 1) * dn + i] * abar;
          }
        }
      }
    }
    for (int t = s; t < e; ++t) {
      const int r = t - s;
      for (int d = 0; d < D; ++d) {
        T acc = 0;
        for (int n = 0; n < N; ++n) {
          const size_t i = static_cast<size_t>(d) * N + n;
          const T t1 = prefix[r * dn + i] * carry[i];
          const T h = t1 + h_local[r * dn + i];
          acc += Cv[t * N + n] * h;
          if (t == e - 1) carry[i] = h;
        }
        if (Dv != nullptr) acc += Dv[d] * x[t * D + d];
        y[t * D + d] = acc;
      }
    }
  }
}

// Backward through time. h_states must come from scan_core_forward. Gradient
// outputs are accumulated (+=); any of them may be null to skip. gy is L*D.
template <typename T>
void scan_core_backward(int L, int D, int N, const T* x, const T* delta,
                        const T* Bv, const T* Cv, const T* Av,
                        const std::type_identity_t<T>* Dv,
                        const T* h_states, const T* gy,
                        std::type_identity_t<T>* gx,
                        std::type_identity_t<T>* gdelta,
                        std::type_identity_t<T>* gB,
                        std::type_identity_t<T>* gC,
                        std::type_identity_t<T>* gA,
                        std::type_identity_t<T>* gD) {
  std::vector<T> hdot(static_cast<size_t>(D) * N, T(0));
  for (int t = L - 1; t >= 0; --t) {
    for (int d = 0; d < D; ++d) {
      const T g = gy[t * D + d];
      const T dt = delta[t * D + d];
      const T xt = x[t * D + d];
      const T* ht = h_states + (static_cast<size_t>(t) * D + d) * N;
      const T* hp =
          t > 0 ? h_states + (static_cast<size_t>(t - 1) * D + d) * N : nullptr;
      T* hd = hdot.data() + static_cast<size_t>(d) * N;
      if (gD != nullptr) gD[d] += g * xt;
      if (gx != nullptr && Dv != nullptr) gx[t * D + d] += g * Dv[d];
      T dt_acc = 0;
      for (int n = 0; n < N; ++n) {
        const T cn = Cv[t * N + n];
        if (gC != nullptr) gC[t * N + n] += g * ht[n];
        const T hdn = hd[n] + cn * g;  // dL/dh[t][d][n]
        const T a = Av[d * N + n];
        const T abar = std::exp(dt * a);
        const T hprev = hp != nullptr ? hp[n] : T(0);
        dt_acc += hdn * (Bv[t * N + n] * xt + hprev * abar * a);
        if (gB != nullptr) gB[t * N + n] += hdn * dt * xt;
        if (gx != nullptr) gx[t * D + d] += hdn * dt * Bv[t * N + n];
        if (gA != nullptr) gA[d * N + n] += hdn * hprev * abar * dt;
        hd[n] = hdn * abar;  // propagate to t-1
      }
      if (gdelta != nullptr) gdelta[t * D + d] += dt_acc;
    }
  }
}

// Fused scan as a graph op. Shapes: x, delta L*D; B, C L*N; A D*N; D_skip D.
template <typename T>
Tensor<T> selective_scan(Tensor<T> x, Tensor<T> delta, Tensor<T> Bm,
                         Tensor<T> Cm, Tensor<T> A, Tensor<T> D_skip) {
  Graph<T>& g = detail::same_graph<T>({x, delta, Bm, Cm, A, D_skip}, "selective_scan");
  const Shape& xs = x.shape();
  if (xs.size() != 2)
    throw ShapeError("selective_scan: x must be rank 2, got " + shape_str(xs));
  const int L = xs[0];
  const int D = xs[1];
  if (L < 1) throw ShapeError("selective_scan: empty sequence");
  if (delta.shape() != xs)
    throw ShapeError("selective_scan: delta shape " + shape_str(delta.shape()) +
                     " != x shape " + shape_str(xs));
  const Shape& bs = Bm.shape();
  if (bs.size() != 2 || bs[0] != L)
    throw ShapeError("selective_scan: B must be L x N, got " + shape_str(bs));
  const int N = bs[1];
  if (Cm.shape() != bs)
    throw ShapeError("selective_scan: C shape " + shape_str(Cm.shape()) +
                     " != B shape " + shape_str(bs));
  if (A.shape() != Shape{D, N})
    throw ShapeError("selective_scan: A shape " + shape_str(A.shape()) +
                     " != " + shape_str({D, N}));
  if (D_skip.shape() != Shape{D})
    throw ShapeError("selective_scan: D_skip shape " +
                     shape_str(D_skip.shape()) + " != {" + std::to_string(D) +
                     "}");

  auto h_states = std::make_shared<std::vector<T>>(
      static_cast<size_t>(L) * D * N);
  std::vector<T> y(static_cast<size_t>(L) * D);
  scan_core_forward(L, D, N, g.val(x.id).data(), g.val(delta.id).data(),
                    g.val(Bm.id).data(), g.val(Cm.id).data(),
                    g.val(A.id).data(), g.val(D_skip.id).data(), y.data(),
                    h_states->data());

  const bool rg = detail::any_rg<T>({x, delta, Bm, Cm, A, D_skip});
  const int32_t xi = x.id, di = delta.id, bi = Bm.id, ci = Cm.id, ai = A.id,
                ski = D_skip.id;
  const int32_t oi = g.next_id();
  g.record("selective_scan", {L, D}, std::move(y), rg,
           [&g, xi, di, bi, ci, ai, ski, oi, L, D, N, h_states]() {
             const auto go = g.grad_mut(oi);
             if (go.empty()) return;
             auto dat = [&g](int32_t id) { return g.val(id).data(); };
             auto grd = [&g](int32_t id) -> T* {
               auto s = g.grad_mut(id);
               return s.empty() ? nullptr : s.data();
             };
             scan_core_backward(L, D, N, dat(xi), dat(di), dat(bi), dat(ci),
                                dat(ai), dat(ski), h_states->data(), go.data(),
                                grd(xi), grd(di), grd(bi), grd(ci), grd(ai),
                                grd(ski));
           });
  return {&g, oi};
}

// Traversal orders over an H x W grid. "forward" orders start at the top-left
// corner; "backward" orders are their exact reverses.
enum class ScanDirection { row_forward, row_backward, col_forward, col_backward };

inline const char* scan_direction_name(ScanDirection d) {
  switch (d) {
    case ScanDirection::row_forward: return "row_forward";
    case ScanDirection::row_backward: return "row_backward";
    case ScanDirection::col_forward: return "col_forward";
    case ScanDirection::col_backward: return "col_backward";
  }
  return "?";
}

inline constexpr ScanDirection kScanDirections[] = {
    ScanDirection::row_forward, ScanDirection::row_backward,
    ScanDirection::col_forward, ScanDirection::col_backward};

// Visit order as flat position indices (i * W + j).
inline std::vector<int> scan_order(int H, int W, ScanDirection dir) {
  check(H >= 1 && W >= 1, "scan_order: grid extents must be positive");
  std::vector<int> order;
  order.reserve(static_cast<size_t>(H) * W);
  if (dir == ScanDirection::row_forward || dir == ScanDirection::row_backward) {
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) order.push_back(i * W + j);
  } else {
    for (int j = 0; j < W; ++j)
      for (int i = 0; i < H; ++i) order.push_back(i * W + j);
  }
  if (dir == ScanDirection::row_backward || dir == ScanDirection::col_backward)
    std::reverse(order.begin(), order.end());
  return order;
}

// H x W x C -> (H*W) x C, rows in scan order.
template <typename T>
Tensor<T> grid_to_seq(Tensor<T> x, ScanDirection dir) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  if (s.size() != 3)
    throw ShapeError("grid_to_seq: input must be rank 3, got " + shape_str(s));
  const int H = s[0], W = s[1], C = s[2];
  const int L = H * W;
  auto order = std::make_shared<std::vector<int>>(scan_order(H, W, dir));
  std::vector<T> out(static_cast<size_t>(L) * C);
  const auto xv = g.val(x.id);
  for (int t = 0; t < L; ++t) {
    const int p = (*order)[t];
    for (int c = 0; c < C; ++c) out[t * C + c] = xv[p * C + c];
  }
  const int32_t xi = x.id;
  const int32_t oi = g.next_id();
  g.record("grid_to_seq", {L, C}, std::move(out), g.requires_grad(x.id),
           [&g, xi, oi, L, C, order]() {
             auto gx = g.grad_mut(xi);
             if (gx.empty()) return;
             const auto go = g.grad_mut(oi);
             for (int t = 0; t < L; ++t) {
               const int p = (*order)[t];
               for (int c = 0; c < C; ++c) gx[p * C + c] += go[t * C + c];
             }
           });
  return {&g, oi};
}

// (H*W) x C -> H x W x C, inverse placement of grid_to_seq for the same
// direction.
template <typename T>
Tensor<T> seq_to_grid(Tensor<T> x, int H, int W, ScanDirection dir) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  if (s.size() != 2)
    throw ShapeError("seq_to_grid: input must be rank 2, got " + shape_str(s));
  const int L = s[0], C = s[1];
  if (L != H * W)
    throw ShapeError("seq_to_grid: sequence length " + std::to_string(L) +
                     " != " + std::to_string(H) + "*" + std::to_string(W));
  auto order = std::make_shared<std::vector<int>>(scan_order(H, W, dir));
  std::vector<T> out(static_cast<size_t>(L) * C);
  const auto xv = g.val(x.id);
  for (int t = 0; t < L; ++t) {
    const int p = (*order)[t];
    for (int c = 0; c < C; ++c) out[p * C + c] = xv[t * C + c];
  }
  const int32_t xi = x.id;
  const int32_t oi = g.next_id();
  g.record("seq_to_grid", {H, W, C}, std::move(out), g.requires_grad(x.id),
           [&g, xi, oi, L, C, order]() {
             auto gx = g.grad_mut(xi);
             if (gx.empty()) return;
             const auto go = g.grad_mut(oi);
             for (int t = 0; t < L; ++t) {
               const int p = (*order)[t];
               for (int c = 0; c < C; ++c) gx[t * C + c] += go[p * C + c];
             }
           });
  return {&g, oi};
}

// Input-dependent scan parameters, shared across directions in ssm2d.
//   w_delta  D x D, delta_bias D   delta = softplus(x @ w_delta + bias)
//   w_B, w_C D x N                 B = x @ w_B, C = x @ w_C (no bias)
//   a_log    D x N                 A = -exp(a_log)
//   d_skip   D
template <typename T>
struct SsmParams {
  Tensor<T> w_delta;
  Tensor<T> delta_bias;
  Tensor<T> w_B;
  Tensor<T> w_C;
  Tensor<T> a_log;
  Tensor<T> d_skip;
};

template <typename T>
Tensor<T> selective_scan_1d(Tensor<T> x, const SsmParams<T>& p) {
  auto delta = softplus(linear(x, p.w_delta, p.delta_bias));
  auto Bm = linear(x, p.w_B);
  auto Cm = linear(x, p.w_C);
  auto A = scale(exp(p.a_log), -1.0);
  return selective_scan(x, delta, Bm, Cm, A, p.d_skip);
}

// Four-direction 2d scan over an H x W x C grid. delta/B/C are projected once
// on the grid (projections are pointwise, so this matches projecting each
// permuted sequence), each direction is scanned with the shared parameters,
// and the four outputs are summed in a fixed order.
template <typename T>
Tensor<T> ssm2d(Tensor<T> x, const SsmParams<T>& p) {
  const Shape& s = x.shape();
  if (s.size() != 3)
    throw ShapeError("ssm2d: input must be rank 3, got " + shape_str(s));
  const int H = s[0], W = s[1];
  auto delta_g = softplus(linear(x, p.w_delta, p.delta_bias));
  auto b_g = linear(x, p.w_B);
  auto c_g = linear(x, p.w_C);
  auto A = scale(exp(p.a_log), -1.0);
  Tensor<T> out{};
  for (ScanDirection dir : kScanDirections) {
    auto ys = selective_scan(grid_to_seq(x, dir), grid_to_seq(delta_g, dir),
                             grid_to_seq(b_g, dir), grid_to_seq(c_g, dir), A,
                             p.d_skip);
    auto yg = seq_to_grid(ys, H, W, dir);
    out = out.valid() ? add(out, yg) : yg;
  }
  return out;
}

}  // namespace mmic
