"""Asymptotic spectral shape, growth-rate coefficient and ML threshold.

The normalized asymptotic IOWE of a convolutional encoder is computed as the
two-variable Legendre dual of the log spectral radius of the trellis
adjacency matrix with edge weights e^(s*u + t*parity): a(alpha, beta) =
inf_{s,t} [ln rho(M(s,t)) - alpha*s - beta*t].  The dual is convex, so a
dense tilt grid (batched eigenvalues) followed by a Newton polish per
(alpha, beta) point gives the table to ~1e-5 accuracy.  The ensemble shape
function is a four-dimensional supremum over the normalized weights of the
two outer codes, the selection split and the patch input, evaluated on a
1/64 grid and refined with Nelder-Mead.  Puncturing adds per-stream
hypergeometric terms, maximized in closed form over the surviving weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize

from turbo3d.trellis import Trellis

__all__ = [
    "binary_entropy",
    "acc_asym_iowe",
    "ConvAsymTable",
    "conv_asym_iowe",
    "ShapeEvaluator",
    "spectral_shape",
    "spectral_shape_punctured",
    "rho0",
    "ml_threshold",
]

NEG_INF = float("-inf")


def binary_entropy(x):
    """H(x) = -x ln x - (1-x) ln(1-x) in nats, H(0) = H(1) = 0.

    Raises for scalar inputs outside [0, 1]; array inputs return -inf there
    (used as feasibility masking by the optimizers).
    """
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        xf = float(x)
        if not 0.0 <= xf <= 1.0:
            raise ValueError(f"entropy argument {xf} outside [0, 1]")
        if xf in (0.0, 1.0):
            return 0.0
        return -xf * math.log(xf) - (1 - xf) * math.log(1 - xf)
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.shape, NEG_INF)
    ok = (x >= 0) & (x <= 1)
    xi = np.clip(x, 1e-300, 1 - 1e-16)
    vals = -xi * np.log(xi) - (1 - xi) * np.log1p(-xi)
    out[ok] = vals[ok]
    out[x == 0] = 0.0
    out[x == 1] = 0.0
    return out


def _entropy_or_neginf(x):
    """Vectorized entropy that never raises: -inf outside [0,1]."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = binary_entropy(x)
    return float(out[0]) if scalar else out


def acc_asym_iowe(alpha, beta):
    """Asymptotic IOWE of an accumulate-type rate-1 code.

    a(alpha, beta) = (1-beta) H(alpha/(2(1-beta))) + beta H(alpha/(2 beta));
    -inf where the entropy arguments leave [0, 1] (no such sequences).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    scalar = alpha.ndim == 0 and beta.ndim == 0
    alpha, beta = np.atleast_1d(alpha), np.atleast_1d(beta)
    alpha, beta = np.broadcast_arrays(alpha, beta)
    out = np.full(alpha.shape, NEG_INF)
    zero_a = (alpha == 0) & (beta >= 0) & (beta <= 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = np.where(beta < 1, alpha / (2 * (1 - beta)), np.inf)
        x2 = np.where(beta > 0, alpha / (2 * beta), np.inf)
    ok = (
        (alpha >= 0) & (alpha <= 1) & (beta > 0) & (beta < 1)
        & (x1 <= 1) & (x2 <= 1)
    )
    h1 = np.where(ok, _entropy_or_neginf(np.where(ok, x1, 0.5)), NEG_INF)
    h2 = np.where(ok, _entropy_or_neginf(np.where(ok, x2, 0.5)), NEG_INF)
    out[ok] = ((1 - beta) * h1 + beta * h2)[ok]
    out[zero_a] = 0.0
    # beta on the boundary with alpha = 0 handled above; alpha = 0 dominates
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Convolutional asymptotic IOWE via the Legendre dual


def _in_gradient_range(cloud: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Membership of queries in the convex hull of a 2-D point cloud.

    Queries are shrunk slightly toward the centroid so hull-boundary points
    stay feasible.  Degenerate (collinear) clouds, e.g. the identity encoder
    where the input and parity rates coincide, use a segment-distance test.
    """
    centroid = cloud.mean(axis=0)
    centered = cloud - centroid
    cov = centered.T @ centered / len(cloud)
    evals, evecs = np.linalg.eigh(cov)
    shrunk = centroid + (queries - centroid) * (1 - 2e-5)
    if evals[0] < 1e-16 * max(evals[1], 1e-30):
        axis = evecs[:, 1]
        proj = centered @ axis
        q_proj = (shrunk - centroid) @ axis
        q_perp = (shrunk - centroid) @ evecs[:, 0]
        return (
            (np.abs(q_perp) <= 1e-6)
            & (q_proj >= proj.min() - 1e-9)
            & (q_proj <= proj.max() + 1e-9)
        )
    from scipy.spatial import ConvexHull, Delaunay

    if len(cloud) > 12000:
        hull = ConvexHull(cloud)
        keep = set(hull.vertices.tolist())
        keep.update(range(0, len(cloud), max(1, len(cloud) // 12000)))
        cloud = cloud[np.fromiter(sorted(keep), dtype=int)]
    tri = Delaunay(cloud)
    return tri.find_simplex(shrunk) >= 0


def _edge_groups(trellis: Trellis) -> np.ndarray:
    """B[u, p] adjacency indicator matrices split by edge labels."""
    s_count = trellis.num_states
    groups = np.zeros((2, 2, s_count, s_count))
    for s in range(s_count):
        for u in (0, 1):
            s2 = int(trellis.next_state[u, s])
            p = int(trellis.parity[u, s])
            groups[u, p, s, s2] += 1.0
    return groups


class ConvAsymTable:
    """Tabulated a(alpha, beta) for one encoder on a regular grid.

    The tilt grid covers s in [-34, 12], t in [-34, 14] (step 0.25); each
    (alpha, beta) point takes the discrete Legendre minimum and two Newton
    polish steps solving grad L = (alpha, beta) with exact spectral radii
    from warm power iterations.  Infeasible points (minimum escaping the
    tilt box with a significant outward gradient) are -inf.
    """

    GRID_N = 128

    def __init__(self, trellis: Trellis):
        self.groups = _edge_groups(trellis)
        self.spec = str(trellis.spec)
        self._build()

    # -- exact evaluations ------------------------------------------------

    def _matrices(self, s, t):
        es, et, est = np.exp(s), np.exp(t), np.exp(np.asarray(s) + np.asarray(t))
        g = self.groups
        return (
            g[0, 0][None]
            + et[:, None, None] * g[0, 1][None]
            + es[:, None, None] * g[1, 0][None]
            + est[:, None, None] * g[1, 1][None]
        )

    def _log_radius_and_grad(self, s, t, iters=120):
        """ln rho(M(s,t)) and its gradient (E[u], E[p]), batched."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        m = self._matrices(s, t)
        n = m.shape[-1]
        r = np.ones((len(s), n))
        l = np.ones((len(s), n))
        for _ in range(iters):
            r = np.einsum("bij,bj->bi", m, r)
            r /= np.maximum(r.max(axis=1, keepdims=True), 1e-290)
            l = np.einsum("bi,bij->bj", l, m)
            l /= np.maximum(l.max(axis=1, keepdims=True), 1e-290)
        lam = np.einsum("bi,bij,bj->b", l, m, r) / np.maximum(
            np.einsum("bi,bi->b", l, r), 1e-290
        )
        g = self.groups
        es, et, est = np.exp(s), np.exp(t), np.exp(s + t)
        denom = lam * np.einsum("bi,bi->b", l, r)
        t01 = et * np.einsum("bi,ij,bj->b", l, g[0, 1], r)
        t10 = es * np.einsum("bi,ij,bj->b", l, g[1, 0], r)
        t11 = est * np.einsum("bi,ij,bj->b", l, g[1, 1], r)
        eu = (t10 + t11) / denom
        ep = (t01 + t11) / denom
        return np.log(lam), eu, ep

    # -- table build -------------------------------------------------------

    def _build(self):
        s_axis = np.arange(-34.0, 12.0 + 1e-9, 0.25)
        t_axis = np.arange(-34.0, 14.0 + 1e-9, 0.25)
        ss, tt = np.meshgrid(s_axis, t_axis, indexing="ij")
        flat_s, flat_t = ss.ravel(), tt.ravel()
        m = self._matrices(flat_s, flat_t)
        eig = np.linalg.eigvals(m)
        lam = np.max(np.abs(eig), axis=1)
        log_rad = np.log(lam).reshape(ss.shape)

        # gradients on the tilt grid via one batched power pass
        _, eu, ep = self._log_radius_and_grad(flat_s, flat_t, iters=150)
        eu = eu.reshape(ss.shape)
        ep = ep.reshape(ss.shape)

        n = self.GRID_N
        alphas = np.linspace(0.0, 1.0, n + 1)
        betas = np.linspace(0.0, 1.0, n + 1)
        a_grid, b_grid = np.meshgrid(alphas, betas, indexing="ij")
        af, bf = a_grid.ravel(), b_grid.ravel()

        # discrete Legendre transform, chunked over (alpha, beta) points
        vals = np.empty(len(af))
        arg_s = np.empty(len(af))
        arg_t = np.empty(len(af))
        flat_rad = log_rad.ravel()
        chunk = 2048
        for i in range(0, len(af), chunk):
            sl = slice(i, min(i + chunk, len(af)))
            d = flat_rad[None, :] - af[sl, None] * flat_s[None, :] - bf[
                sl, None
            ] * flat_t[None, :]
            idx = np.argmin(d, axis=1)
            vals[sl] = d[np.arange(d.shape[0]), idx]
            arg_s[sl] = flat_s[idx]
            arg_t[sl] = flat_t[idx]

        # Newton polish: solve grad L = (alpha, beta) starting from the grid
        cur_s, cur_t = arg_s.copy(), arg_t.copy()
        for _ in range(3):
            lr, eu_c, ep_c = self._log_radius_and_grad(cur_s, cur_t)
            # local Hessian estimate by finite differences
            eps_fd = 0.05
            lr2, eu_s, ep_s = self._log_radius_and_grad(cur_s + eps_fd, cur_t)
            lr3, eu_t, ep_t = self._log_radius_and_grad(cur_s, cur_t + eps_fd)
            h11 = (eu_s - eu_c) / eps_fd
            h12 = (eu_t - eu_c) / eps_fd
            h22 = (ep_t - ep_c) / eps_fd
            det = h11 * h22 - h12 * h12
            det = np.where(np.abs(det) < 1e-12, np.nan, det)
            r1 = af - eu_c
            r2 = bf - ep_c
            ds = (h22 * r1 - h12 * r2) / det
            dt = (h11 * r2 - h12 * r1) / det
            step = np.sqrt(ds**2 + dt**2)
            scale = np.where(step > 0.5, 0.5 / np.maximum(step, 1e-12), 1.0)
            ok = np.isfinite(ds) & np.isfinite(dt)
            cur_s = np.where(ok, cur_s + scale * ds, cur_s)
            cur_t = np.where(ok, cur_t + scale * dt, cur_t)
            cur_s = np.clip(cur_s, s_axis[0], s_axis[-1])
            cur_t = np.clip(cur_t, t_axis[0], t_axis[-1])
        lr, eu_c, ep_c = self._log_radius_and_grad(cur_s, cur_t)
        polished = lr - af * cur_s - bf * cur_t
        vals = np.minimum(vals, polished)

        # feasibility: (alpha, beta) must lie in the closure of the gradient
        # range of L, which is convex; test against the hull of the sampled
        # gradients (queries shrunk slightly toward the centroid so boundary
        # points such as (0, 0) stay feasible)
        cloud = np.column_stack([eu.ravel(), ep.ravel()])
        queries = np.column_stack([af, bf])
        vals[~_in_gradient_range(cloud, queries)] = NEG_INF
        self.table = vals.reshape(n + 1, n + 1)
        self.alphas = alphas
        self.betas = betas

    def value(self, alpha, beta):
        """Bilinear interpolation; -inf outside [0,1]^2 or near -inf cells."""
        alpha = np.asarray(alpha, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        scalar = alpha.ndim == 0 and beta.ndim == 0
        alpha, beta = np.broadcast_arrays(
            np.atleast_1d(alpha), np.atleast_1d(beta)
        )
        out = np.full(alpha.shape, NEG_INF)
        n = self.GRID_N
        ok = (alpha >= 0) & (alpha <= 1) & (beta >= 0) & (beta <= 1)
        fa = np.clip(alpha, 0, 1) * n
        fb = np.clip(beta, 0, 1) * n
        i = np.minimum(fa.astype(int), n - 1)
        j = np.minimum(fb.astype(int), n - 1)
        da = fa - i
        db = fb - j
        t = self.table
        v = (
            t[i, j] * (1 - da) * (1 - db)
            + t[i + 1, j] * da * (1 - db)
            + t[i, j + 1] * (1 - da) * db
            + t[i + 1, j + 1] * da * db
        )
        v = np.where(np.isnan(v), NEG_INF, v)
        out[ok] = v[ok]
        return float(out[0]) if scalar else out


_TABLE_CACHE: dict = {}


def conv_table(trellis: Trellis) -> ConvAsymTable:
    key = str(trellis.spec)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = ConvAsymTable(trellis)
    return _TABLE_CACHE[key]


def conv_asym_iowe(trellis: Trellis, alpha: float, beta: float) -> float:
    """a(alpha, beta) of one convolutional encoder (table-backed)."""
    return conv_table(trellis).value(alpha, beta)


# ---------------------------------------------------------------------------
# Spectral shape of the 3D ensemble (Eq. of the shape supremum)


def _puncture_term(beta, eta, delta):
    """Per-bit log of the random-puncturing kernel for one stream.

    beta H(eta/beta) + (1-beta) H((delta-eta)/(1-beta)) - H(delta); -inf
    where infeasible.  All arguments normalized by the stream length.
    """
    beta = np.asarray(beta, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    out = np.full(np.broadcast(beta, eta).shape, NEG_INF)
    beta, eta = np.broadcast_arrays(beta, eta)
    hdelta = binary_entropy(float(delta))
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = np.where(beta > 0, eta / beta, 0.0)
        x2 = np.where(beta < 1, (delta - eta) / (1 - beta), 0.0)
    ok = (
        (eta >= 0)
        & (eta <= beta + 1e-15)
        & (delta - eta >= -1e-15)
        & (delta - eta <= 1 - beta + 1e-15)
    )
    h1 = _entropy_or_neginf(np.clip(x1, 0, 1))
    h2 = _entropy_or_neginf(np.clip(x2, 0, 1))
    vals = beta * h1 + (1 - beta) * h2 - hdelta
    out[ok] = vals[ok]
    return out


@dataclass
class ShapeSample:
    rho: float
    value: float
    argmax: dict


class ShapeEvaluator:
    """r(rho) for a 3D-TC ensemble at one permeability and rate.

    delta_ch / delta_c are the surviving fractions of the x^ch and x_c
    streams (1 = unpunctured).  Following the puncturing strategy, only the
    cases needing at most a one-dimensional inner maximization are
    supported: delta_c = 1, or delta_ch in {0, 1}.
    """

    GRID_N = 64

    def __init__(self, outer_table: ConvAsymTable, lam, delta_ch=1.0, delta_c=1.0):
        self.outer = outer_table
        self.lam = float(Fraction(lam))
        self.delta_ch = float(delta_ch)
        self.delta_c = float(delta_c)
        if not (self.delta_c == 1.0 or self.delta_ch in (0.0, 1.0)):
            raise ValueError("unsupported puncturing combination")
        self.n_over_k = 1 + 2 * (1 - self.lam) * self.delta_ch + 2 * self.lam * self.delta_c
        self._build_static()

    # static (rho-independent) part of the objective on the grid
    def _build_static(self):
        n = self.GRID_N
        lam = self.lam
        g = np.linspace(0.0, 1.0, n + 1)
        self.axis = g
        aa = self.outer.value(g[:, None], g[None, :])  # a(omega, iota_a)

        # a(omega, 2 iota - iota_a) with all on the same grid
        idx = 2 * np.arange(n + 1)[None, :, None] - np.arange(n + 1)[None, None, :]
        valid = (idx >= 0) & (idx <= n)
        idx_c = np.clip(idx, 0, n)
        ab = aa[np.arange(n + 1)[:, None, None], idx_c]
        ab = np.where(valid, ab, NEG_INF)  # (omega, iota, iota_a)

        io, mu = g[:, None], g[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            x1 = np.where(io > 0, lam * mu / io, np.where(mu == 0, 0.0, 2.0))
            x2 = np.where(
                io < 1, lam * (1 - mu) / (1 - io), np.where(mu == 1, 0.0, 2.0)
            )
        h1 = _entropy_or_neginf(x1)
        h2 = _entropy_or_neginf(x2)
        hyp = 2 * io * h1 + 2 * (1 - io) * h2  # (iota, mu)
        hyp = np.where(np.isfinite(h1) & np.isfinite(h2), hyp, NEG_INF)

        h_omega = _entropy_or_neginf(g)
        consts = -2 * binary_entropy(lam) - 2 * lam * _entropy_or_neginf(g)  # (mu,)

        static = (
            aa[:, None, :, None]
            + ab[:, :, :, None]
            + hyp[None, :, None, :]
            - h_omega[:, None, None, None]
            + consts[None, None, None, :]
        ).astype(np.float32)
        self.static = static  # (omega, iota, iota_a, mu)
        self._build_inner_tables()

    # inner maximization over surviving stream weights, tabulated on
    # (mu, mbar, T) where mbar = 2(iota - lam mu), T = rho N'/K - omega
    def _build_inner_tables(self):
        lam = self.lam
        n = self.GRID_N
        if self.delta_ch == 1.0 and self.delta_c == 1.0:
            self.v_table = None
            return
        mu_axis = self.axis
        self.t_axis = np.linspace(0.0, 3.0, 3 * n + 1)
        if lam == 1.0:
            mbar_axis = np.array([0.0])
        else:
            step = 2 * (1 / n) * lam if False else None
            # mbar = 2 iota - 2 lam mu lands on multiples of 2 lam / n
            mbar_axis = np.arange(0.0, 2.0 + 1e-12, 2 * lam / n)
        self.mbar_axis = mbar_axis
        mu_g = mu_axis[:, None, None]
        mb_g = mbar_axis[None, :, None]
        t_g = self.t_axis[None, None, :]
        len_ch = 2 * (1 - lam)
        len_c = 2 * lam

        if self.delta_c == 1.0:
            # channel stream punctured; x_c kept whole: hc = T - m', one 1-D
            # concave maximization over m'
            def objective(mp):
                hc = t_g - mp
                beta_c = hc / len_c
                acc = acc_asym_iowe(mu_g, np.clip(beta_c, 0, 1))
                acc = np.where((beta_c >= 0) & (beta_c <= 1), acc, NEG_INF)
                if self.delta_ch == 0.0:
                    pen = np.where(mp == 0, 0.0, NEG_INF)
                else:
                    pen = len_ch * _puncture_term(
                        mb_g / len_ch, mp / len_ch, self.delta_ch
                    )
                return len_c * acc + pen

            hi = np.minimum(np.minimum(mb_g, len_ch * self.delta_ch), t_g)
            hi = np.broadcast_to(hi, (len(mu_axis), len(mbar_axis), len(self.t_axis)))
            lo = np.maximum(t_g - len_c, 0.0)
            lo = np.broadcast_to(lo, hi.shape).copy()
            lo = np.minimum(lo, hi)
        else:
            # x^ch gone entirely (delta_ch = 0): maximize over hc with
            # eta_c = T/len_c fixed by the output pin
            def objective(hc):
                beta_c = hc / len_c
                acc = acc_asym_iowe(mu_g, np.clip(beta_c, 0, 1))
                acc = np.where((beta_c >= 0) & (beta_c <= 1), acc, NEG_INF)
                pen = len_c * _puncture_term(beta_c, t_g / len_c, self.delta_c)
                feas = np.where(mb_g == 0, 0.0, NEG_INF) if self.lam < 1 else 0.0
                return len_c * acc + pen + feas

            lo = np.broadcast_to(
                np.maximum(t_g, 0.0),
                (len(mu_axis), len(mbar_axis), len(self.t_axis)),
            ).copy()
            hi = np.full(lo.shape, len_c)
            lo = np.minimum(lo, hi)

        # golden-section on a concave objective
        a, b = lo.copy(), hi.copy()
        phi = (math.sqrt(5) - 1) / 2
        for _ in range(60):
            x1 = b - phi * (b - a)
            x2 = a + phi * (b - a)
            f1, f2 = objective(x1), objective(x2)
            take = f1 < f2
            a = np.where(take, x1, a)
            b = np.where(take, b, x2)
        self.v_table = objective((a + b) / 2).astype(np.float32)

    def _inner_slice(self, t_req: float):
        """V(mu, mbar) at scalar T with linear interpolation along T."""
        t_step = self.t_axis[1] - self.t_axis[0]
        f = min(max(t_req / t_step, 0.0), len(self.t_axis) - 1 - 1e-9)
        i0 = int(f)
        frac = np.float32(f - i0)
        lo = self.v_table[..., i0]
        hi = self.v_table[..., min(i0 + 1, self.v_table.shape[-1] - 1)]
        out = lo * (1 - frac) + hi * frac
        out[~np.isfinite(lo) | ~np.isfinite(hi)] = NEG_INF
        if t_req < -1e-9 or t_req > self.t_axis[-1] + 1e-9:
            out[:] = NEG_INF
        return out  # (mu, mbar)

    # -- evaluation --------------------------------------------------------

    def r(self, rho: float, refine: bool = True) -> ShapeSample:
        """One sample of the shape function at normalized weight rho."""
        lam = self.lam
        n = self.GRID_N
        g = self.axis
        total_out = rho * self.n_over_k
        best_val = NEG_INF
        best_idx = None
        if self.v_table is None:
            # unpunctured: patch output pinned at hc = 3 rho - omega - mbar
            for i_w, omega in enumerate(g):
                hc = total_out - omega - 2 * (g[:, None] - lam * g[None, :])
                beta_c = hc / (2 * lam)
                acc = acc_asym_iowe(
                    np.broadcast_to(g[None, :], beta_c.shape), np.clip(beta_c, 0, 1)
                )
                acc = np.where(
                    (beta_c >= -1e-12) & (beta_c <= 1 + 1e-12), acc, NEG_INF
                )
                # static slice: (iota, iota_a, mu); acc: (iota, mu)
                sl = self.static[i_w] + (2 * lam * acc)[:, None, :].astype(np.float32)
                k = int(np.argmax(sl))
                v = float(sl.ravel()[k])
                if v > best_val:
                    best_val = v
                    best_idx = (i_w,) + np.unravel_index(k, sl.shape)
        else:
            if len(self.mbar_axis) > 1:
                mbar_step = self.mbar_axis[1] - self.mbar_axis[0]
                mbar = 2 * (g[:, None] - lam * g[None, :])
                mb_idx = np.clip(
                    np.round(mbar / mbar_step).astype(int), 0, len(self.mbar_axis) - 1
                )
                neg = mbar < -1e-9
            else:
                mb_idx = np.zeros((n + 1, n + 1), dtype=int)
                neg = np.zeros((n + 1, n + 1), dtype=bool)
            mu_idx = np.broadcast_to(np.arange(n + 1)[None, :], mb_idx.shape)
            for i_w, omega in enumerate(g):
                v_slice = self._inner_slice(total_out - omega)  # (mu, mbar)
                vmat = v_slice[mu_idx, mb_idx]  # (iota, mu)
                sl = self.static[i_w] + vmat[:, None, :].astype(np.float32)
                sl = np.where(neg[:, None, :], np.float32(NEG_INF), sl)
                k = int(np.argmax(sl))
                v = float(sl.ravel()[k])
                if v > best_val:
                    best_val = v
                    best_idx = (i_w,) + np.unravel_index(k, sl.shape)

        diag = {}
        if best_idx is not None:
            diag = {
                "omega": g[best_idx[0]],
                "iota": g[best_idx[1]],
                "iota_a": g[best_idx[2]],
                "mu": g[best_idx[3]],
            }
        value = best_val / self.n_over_k
        if refine and best_idx is not None and np.isfinite(best_val):
            ref = self._refine(rho, diag)
            if ref is not None and ref[0] > best_val:
                best_val = ref[0]
                diag = ref[1]
                value = best_val / self.n_over_k
        return ShapeSample(rho, value, diag)

    def _objective_exact(self, rho, omega, iota, iota_a, mu, extra=None):
        lam = self.lam
        if not (
            0 <= omega <= 1
            and 0 <= iota <= 1
            and 0 <= iota_a <= 1
            and 0 <= mu <= 1
            and 0 <= 2 * iota - iota_a <= 1
        ):
            return NEG_INF
        val = float(self.outer.value(omega, iota_a)) + float(
            self.outer.value(omega, 2 * iota - iota_a)
        )
        if not np.isfinite(val):
            return NEG_INF
        if iota in (0.0, 1.0):
            if (iota == 0 and mu > 0) or (iota == 1 and mu < 1):
                return NEG_INF
        else:
            x1 = lam * mu / iota
            x2 = lam * (1 - mu) / (1 - iota)
            if x1 > 1 or x2 > 1:
                return NEG_INF
            val += 2 * iota * binary_entropy(x1) + 2 * (1 - iota) * binary_entropy(x2)
        val -= binary_entropy(omega) + 2 * binary_entropy(lam) + 2 * lam * (
            binary_entropy(mu)
        )
        mbar = 2 * (iota - lam * mu)
        if mbar < -1e-12:
            return NEG_INF
        t_req = rho * self.n_over_k - omega
        len_c = 2 * lam
        len_ch = 2 * (1 - lam)
        if self.v_table is None:
            beta_c = (t_req - mbar) / len_c if lam else 0.0
            if not 0 <= beta_c <= 1:
                return NEG_INF
            a_c = acc_asym_iowe(mu, beta_c)
            if not np.isfinite(a_c):
                return NEG_INF
            return val + len_c * a_c
        if self.delta_c == 1.0:
            mp = extra if extra is not None else 0.0
            hc = t_req - mp
            beta_c = hc / len_c
            if not 0 <= beta_c <= 1:
                return NEG_INF
            a_c = acc_asym_iowe(mu, beta_c)
            if not np.isfinite(a_c):
                return NEG_INF
            if self.delta_ch == 0.0:
                pen = 0.0 if mp == 0 else NEG_INF
            else:
                pen = float(
                    len_ch
                    * _puncture_term(
                        np.array(mbar / len_ch), np.array(mp / len_ch), self.delta_ch
                    )
                )
            return val + len_c * a_c + pen
        # delta_ch == 0, cin punctured patch
        if mbar > 1e-9:
            return NEG_INF
        hc = extra if extra is not None else t_req
        beta_c = hc / len_c
        if not 0 <= beta_c <= 1:
            return NEG_INF
        a_c = acc_asym_iowe(mu, beta_c)
        pen = float(
            len_c * _puncture_term(np.array(beta_c), np.array(t_req / len_c), self.delta_c)
        )
        if not np.isfinite(a_c) or not np.isfinite(pen):
            return NEG_INF
        return val + len_c * a_c + pen

    def _refine(self, rho, seed):
        has_extra = self.v_table is not None
        x0 = [seed["omega"], seed["iota"], seed["iota_a"], seed["mu"]]
        if has_extra:
            t_req = rho * self.n_over_k - seed["omega"]
            x0.append(max(0.0, min(t_req, 1.0)) / 2)

        def neg(x):
            extra = x[4] if has_extra else None
            v = self._objective_exact(rho, x[0], x[1], x[2], x[3], extra)
            return 1e6 if not np.isfinite(v) else -v

        res = minimize(neg, x0, method="Nelder-Mead",
                       options={"maxiter": 600, "xatol": 1e-7, "fatol": 1e-10})
        if res.fun >= 1e5:
            return None
        x = res.x
        diag = {"omega": x[0], "iota": x[1], "iota_a": x[2], "mu": x[3]}
        return -res.fun, diag


def spectral_shape(rho: float, lam, outer: ConvAsymTable, refine=True) -> float:
    """r(rho) for the unpunctured (rate-1/3) ensemble."""
    return ShapeEvaluator(outer, lam).r(rho, refine=refine).value


def spectral_shape_punctured(
    rho: float, lam, outer: ConvAsymTable, delta_ch: float, delta_c: float, refine=True
) -> float:
    return ShapeEvaluator(outer, lam, delta_ch, delta_c).r(rho, refine=refine).value


def deltas_for_rate(lam, rate) -> tuple[float, float]:
    """Surviving fractions (delta_ch, delta_c) for a target rate.

    Punctures x^ch first, then x_c, never the systematic bits.
    """
    lam = Fraction(lam)
    rate = Fraction(rate)
    parity_budget = 1 / rate - 1  # per K
    len_ch = 2 * (1 - lam)
    len_c = 2 * lam
    if parity_budget > len_ch + len_c or parity_budget < 0:
        raise ValueError("infeasible rate")
    if parity_budget >= len_c:
        return float((parity_budget - len_c) / len_ch) if len_ch else 1.0, 1.0
    return 0.0, float(parity_budget / len_c)


def rho0(evaluator: ShapeEvaluator, tol: float = 1e-4,
         rho_hi: float = 0.25, bisect_iters: int = 16) -> tuple[float, dict]:
    """Smallest rho with r(rho) > tol, refined by bisection.

    Returns (rho0, diagnostics); rho0 = 0.0 with a flag when r exceeds tol
    at every probed point down to the smallest grid value.
    """
    probes = np.linspace(rho_hi / 24, rho_hi, 24)
    r_vals = [evaluator.r(float(p)).value for p in probes]
    above = [i for i, v in enumerate(r_vals) if v > tol]
    if not above:
        return rho_hi, {"flag": "no positive r found up to rho_hi", "tol": tol}
    first = above[0]
    if first == 0:
        return 0.0, {"flag": "r positive at smallest probe", "tol": tol}
    lo, hi = float(probes[first - 1]), float(probes[first])
    for _ in range(bisect_iters):
        mid = (lo + hi) / 2
        if evaluator.r(mid).value > tol:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2, {"bracket": (lo, hi), "tol": tol}


def ml_threshold(evaluator: ShapeEvaluator, rate, rho_grid=None) -> float:
    """Divsalar-style upper bound on the ML decoding threshold, in dB.

    (Eb/N0) <= (1/R) max_rho (1 - e^{-2 r(rho)}) (1 - rho) / (2 rho),
    implemented exactly as printed and converted to dB.
    """
    rate = float(Fraction(rate))
    if rho_grid is None:
        rho_grid = np.concatenate(
            [np.linspace(0.01, 0.2, 14), np.linspace(0.22, 0.85, 18)]
        )
    vals = []
    for rho in rho_grid:
        r = evaluator.r(float(rho)).value
        r = max(r, 0.0)
        vals.append((1 - math.exp(-2 * r)) * (1 - rho) / (2 * rho))
    best = int(np.argmax(vals))
    lo = rho_grid[max(best - 1, 0)]
    hi = rho_grid[min(best + 1, len(rho_grid) - 1)]
    # golden-section polish around the best grid point
    phi = (math.sqrt(5) - 1) / 2
    a, b = float(lo), float(hi)
    fcache = {}

    def f(x):
        if x not in fcache:
            r = max(evaluator.r(x).value, 0.0)
            fcache[x] = (1 - math.exp(-2 * r)) * (1 - x) / (2 * x)
        return fcache[x]

    for _ in range(18):
        x1 = b - phi * (b - a)
        x2 = a + phi * (b - a)
        if f(x1) < f(x2):
            a = x1
        else:
            b = x2
    peak = max(max(vals), f((a + b) / 2))
    linear = peak / rate
    if linear <= 0:
        return NEG_INF
    return 10 * math.log10(linear)
