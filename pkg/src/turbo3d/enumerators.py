"""Exact weight enumerators and the probabilistic minimum-distance bound.

Constituent input-output weight enumerators (IOWEs) are computed by dynamic
programming over the trellis, either in float64 counts exposed as logs (the
counts fit comfortably below 1e300 for the truncated tables used here) or in
exact big-integer mode for small lengths.  The ensemble combiner averages
over both interleavers with the uniform-interleaver calculus and over the
patch selection with either the hypergeometric term (random pattern) or the
per-constituent split enumerators (regular pattern).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from turbo3d.trellis import TerminationMode, Trellis

__all__ = [
    "IoweTable",
    "SplitIowe",
    "EnsembleTable",
    "constituent_iowe",
    "split_iowe",
    "ensemble_iowe_random_p",
    "ensemble_iowe_regular_p",
    "puncture_average",
    "prob_lb_dmin",
    "dmin_lb_report",
]

NEG_INF = float("-inf")


def log_choose(n, k):
    """log C(n, k), vectorized, -inf outside 0 <= k <= n."""
    n = np.asarray(n, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    bad = (k < 0) | (k > n) | (n < 0)
    return np.where(bad, NEG_INF, out)


def _tail_deltas(trellis: Trellis, count_tail_inputs: bool):
    """Per-state (tail parity weight, tail input weight) for dual termination."""
    deltas = []
    for s in range(trellis.num_states):
        tail = trellis.tail_table[s]
        cur, pw = s, 0
        for b in tail:
            pw += int(trellis.parity[int(b), cur])
            cur = int(trellis.next_state[int(b), cur])
        iw = int(tail.sum()) if count_tail_inputs else 0
        deltas.append((pw, iw))
    return deltas


@dataclass
class IoweTable:
    """Counts A[w, h] of constituent code sequences, log domain.

    ``log[w, h]`` is ln A_{w,h} (-inf for zero).  ``exact`` holds the same
    counts as Python integers when built in exact mode.  ``clipped`` is True
    when the DP dropped mass beyond (w_cap, h_cap).
    """

    k: int
    mode: TerminationMode
    log: np.ndarray
    exact: dict | None
    clipped: bool

    @property
    def w_cap(self) -> int:
        return self.log.shape[0] - 1

    @property
    def h_cap(self) -> int:
        return self.log.shape[1] - 1

    def we_log(self) -> np.ndarray:
        """ln A_h = ln sum_w A_{w,h}."""
        return logsumexp_axis(self.log, axis=0)

    def total_log(self) -> float:
        return float(logsumexp_axis(self.we_log()[None, :], axis=1)[0])

    def to_csv(self) -> str:
        lines = ["w,h,log_count"]
        ws, hs = np.nonzero(np.isfinite(self.log))
        for w, h in zip(ws, hs):
            lines.append(f"{w},{h},{self.log[w, h]:.12g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, k: int, mode=TerminationMode.NONE) -> "IoweTable":
        rows = [r for r in text.strip().splitlines()[1:] if r]
        ws, hs, vals = zip(*(r.split(",") for r in rows))
        w_cap, h_cap = max(map(int, ws)), max(map(int, hs))
        log = np.full((w_cap + 1, h_cap + 1), NEG_INF)
        for w, h, v in zip(ws, hs, vals):
            log[int(w), int(h)] = float(v)
        return cls(k, mode, log, None, False)


def logsumexp_axis(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis)) + np.squeeze(m_safe, axis)
    return np.where(np.isfinite(np.squeeze(m, axis)), out, NEG_INF)


def _finish_counts(arr: np.ndarray, exact: bool):
    if exact:
        table = {}
        it = np.nditer(arr, flags=["multi_index", "refs_ok"])
        for v in it:
            val = v.item()
            if val:
                table[it.multi_index] = val
        return table
    with np.errstate(divide="ignore"):
        return np.log(arr)


def constituent_iowe(
    trellis: Trellis,
    k: int,
    mode: TerminationMode = TerminationMode.NONE,
    w_cap: int | None = None,
    h_cap: int | None = None,
    exact: bool = False,
    count_tail_inputs: bool = True,
) -> IoweTable:
    """IOWE of one constituent encoder over k input steps.

    h counts the parity weight; for DUAL mode the nu tail steps are included
    and, when ``count_tail_inputs`` is set, the tail input bits as well
    (they travel on the systematic stream but are not free input).
    TAILBITING counts closed paths over all start states, which is the
    tailbiting code as a multiset and preserves sum A = 2^k at any length.
    """
    nu = trellis.nu
    w_cap = k if w_cap is None else min(w_cap, k)
    h_full = k + (nu + nu if mode is TerminationMode.DUAL and count_tail_inputs
                  else nu if mode is TerminationMode.DUAL else 0)
    h_cap = h_full if h_cap is None else min(h_cap, h_full)
    s_count = trellis.num_states
    dtype = object if exact else np.float64
    tb = mode is TerminationMode.TAILBITING

    shape = (s_count, s_count, w_cap + 1, h_cap + 1) if tb else (
        s_count, w_cap + 1, h_cap + 1)
    arr = np.zeros(shape, dtype=dtype)
    if tb:
        for s in range(s_count):
            arr[s, s, 0, 0] = 1
    else:
        arr[0, 0, 0] = 1

    one = 1 if exact else 1.0
    clipped = False
    for _ in range(k):
        new = np.zeros_like(arr)
        for s in range(s_count):
            for u in (0, 1):
                s2 = int(trellis.next_state[u, s])
                p = int(trellis.parity[u, s])
                if tb:
                    src = arr[:, s]
                    dst = new[:, s2]
                else:
                    src = arr[s]
                    dst = new[s2]
                w_hi = src.shape[-2] - u
                h_hi = src.shape[-1] - p
                dst[..., u:, p:] += src[..., :w_hi, :h_hi]
                if not clipped and (
                    (u and _any_nonzero(src[..., -1:, :]))
                    or (p and _any_nonzero(src[..., :, -1:]))
                ):
                    clipped = True
        arr = new

    if mode is TerminationMode.DUAL:
        out = np.zeros(arr.shape[1:], dtype=dtype)
        for s, (pw, iw) in enumerate(_tail_deltas(trellis, count_tail_inputs)):
            d = pw + iw
            if d:
                out[:, d:] += arr[s][:, : arr.shape[-1] - d]
                if not exact and np.any(arr[s][:, arr.shape[-1] - d:] != 0):
                    clipped = True
                elif exact and _any_nonzero(arr[s][:, arr.shape[-1] - d:]):
                    clipped = True
            else:
                out += arr[s]
        final = out
    elif tb:
        final = sum(arr[s, s] for s in range(s_count))
    elif mode is TerminationMode.NONE:
        final = arr.sum(axis=0)
    else:
        raise ValueError(f"unknown termination mode {mode}")

    if not exact and np.max(final) > 1e300:
        raise OverflowError("IOWE counts exceed float64 range; reduce caps")
    result = _finish_counts(np.asarray(final, dtype=dtype), exact)
    if exact:
        log = np.full((w_cap + 1, h_cap + 1), NEG_INF)
        for (w, h), v in result.items():
            log[w, h] = _log_int(v)
        return IoweTable(k, mode, log, result, clipped)
    return IoweTable(k, mode, result, None, clipped)


def _any_nonzero(a) -> bool:
    return bool(np.any(a != 0))


def _log_int(v: int) -> float:
    if v == 0:
        return NEG_INF
    shift = max(v.bit_length() - 900, 0)
    return math.log(v >> shift) + shift * math.log(2)


@dataclass
class SplitIowe:
    """Counts A[w, (m, n)] with the parity weight split by routing.

    m counts parity at steps routed to the channel, n at steps routed to the
    patch, per the constituent's sub-sampling of the selection pattern.
    Dual-termination tails are counted in m (they bypass the patch).
    """

    k: int
    mode: TerminationMode
    log: np.ndarray  # (w, m, n)
    exact: dict | None
    clipped: bool

    def to_plain(self) -> IoweTable:
        """Marginalize to A[w, m + n]."""
        w_cap = self.log.shape[0] - 1
        m_cap = self.log.shape[1] - 1
        n_cap = self.log.shape[2] - 1
        log = np.full((w_cap + 1, m_cap + n_cap + 1), NEG_INF)
        for m in range(m_cap + 1):
            seg = self.log[:, m, :]
            width = seg.shape[1]
            log[:, m : m + width] = np.logaddexp(log[:, m : m + width], seg)
        exact = None
        if self.exact is not None:
            exact = {}
            for (w, m, n), v in self.exact.items():
                exact[(w, m + n)] = exact.get((w, m + n), 0) + v
        return IoweTable(self.k, self.mode, log, exact, self.clipped)


def split_iowe(
    trellis: Trellis,
    k: int,
    patch_flags: np.ndarray,
    mode: TerminationMode = TerminationMode.NONE,
    w_cap: int | None = None,
    m_cap: int | None = None,
    n_cap: int | None = None,
    exact: bool = False,
) -> SplitIowe:
    """IOWE with parity weight split into channel (m) and patch (n) parts.

    ``patch_flags[t]`` says whether the parity bit of step t is routed to the
    patch; it is the per-constituent sub-sampling of the x^TC pattern.
    """
    patch_flags = np.asarray(patch_flags, dtype=bool)
    if len(patch_flags) != k:
        raise ValueError("patch_flags must have one entry per trellis step")
    nu = trellis.nu
    w_cap = k if w_cap is None else min(w_cap, k)
    n_full = int(patch_flags.sum())
    m_full = k - n_full + (2 * nu if mode is TerminationMode.DUAL else 0)
    m_cap = m_full if m_cap is None else min(m_cap, m_full)
    n_cap = n_full if n_cap is None else min(n_cap, n_full)
    s_count = trellis.num_states
    dtype = object if exact else np.float64
    tb = mode is TerminationMode.TAILBITING

    shape = (s_count, s_count) if tb else (s_count,)
    arr = np.zeros(shape + (w_cap + 1, m_cap + 1, n_cap + 1), dtype=dtype)
    if tb:
        for s in range(s_count):
            arr[s, s, 0, 0, 0] = 1
    else:
        arr[0, 0, 0, 0] = 1

    clipped = False
    for t in range(k):
        to_patch = bool(patch_flags[t])
        new = np.zeros_like(arr)
        for s in range(s_count):
            for u in (0, 1):
                s2 = int(trellis.next_state[u, s])
                p = int(trellis.parity[u, s])
                dm = p if not to_patch else 0
                dn = p if to_patch else 0
                src = arr[:, s] if tb else arr[s]
                dst = new[:, s2] if tb else new[s2]
                dst[..., u:, dm:, dn:] += src[
                    ...,
                    : src.shape[-3] - u,
                    : src.shape[-2] - dm,
                    : src.shape[-1] - dn,
                ]
                if not clipped:
                    if (u and _any_nonzero(src[..., -1:, :, :])) or (
                        dm and _any_nonzero(src[..., :, -1:, :])
                    ) or (dn and _any_nonzero(src[..., :, :, -1:])):
                        clipped = True
        arr = new

    if mode is TerminationMode.DUAL:
        out = np.zeros(arr.shape[1:], dtype=dtype)
        for s, (pw, iw) in enumerate(_tail_deltas(trellis, True)):
            d = pw + iw
            if d:
                out[:, d:, :] += arr[s][:, : arr.shape[-2] - d, :]
                if _any_nonzero(arr[s][:, arr.shape[-2] - d :, :]):
                    clipped = True
            else:
                out += arr[s]
        final = out
    elif tb:
        final = sum(arr[s, s] for s in range(s_count))
    else:
        final = arr.sum(axis=0)

    if not exact and np.max(final) > 1e300:
        raise OverflowError("split IOWE counts exceed float64 range")
    result = _finish_counts(np.asarray(final, dtype=dtype), exact)
    if exact:
        log = np.full((w_cap + 1, m_cap + 1, n_cap + 1), NEG_INF)
        for (w, m, n), v in result.items():
            log[w, m, n] = _log_int(v)
        return SplitIowe(k, mode, log, result, clipped)
    return SplitIowe(k, mode, result, None, clipped)


# ---------------------------------------------------------------------------
# Ensemble combination


@dataclass
class EnsembleTable:
    """Ensemble-average counts B[w, m, hc] before collapsing to h = w + m + hc.

    Keeping the (m, hc) split allows puncturing the channel and patch parity
    streams separately (systematic bits are never punctured).
    """

    k: int
    lam: Fraction
    log_b: np.ndarray  # (w, m, hc)
    exact: dict | None
    meta: dict

    def collapse(self) -> np.ndarray:
        """ln A[w, h] for total output weight h."""
        w_cap = self.log_b.shape[0] - 1
        h_cap = w_cap + self.log_b.shape[1] - 1 + self.log_b.shape[2] - 1
        out = np.full((w_cap + 1, h_cap + 1), NEG_INF)
        for w in range(w_cap + 1):
            sl = self.log_b[w]
            if not np.any(np.isfinite(sl)):
                continue
            c = np.max(sl[np.isfinite(sl)])
            lin = np.exp(sl - c)
            lin[~np.isfinite(sl)] = 0.0
            diag = np.zeros(sl.shape[0] + sl.shape[1] - 1)
            for m in range(sl.shape[0]):
                diag[m : m + sl.shape[1]] += lin[m]
            with np.errstate(divide="ignore"):
                out[w, w : w + len(diag)] = np.log(diag) + c
        return out

    def collapse_exact(self) -> dict:
        out: dict = {}
        for (w, m, hc), v in self.exact.items():
            h = w + m + hc
            out[(w, h)] = out.get((w, h), 0) + v
        return out

    def we_log(self) -> np.ndarray:
        return logsumexp_axis(self.collapse(), axis=0)

    def puncture_streams(self, survivors_ch: int, survivors_c: int) -> "EnsembleTable":
        """Average over uniform random puncturing of x^ch and x_c.

        ``survivors_ch`` / ``survivors_c`` are the exact numbers of surviving
        bits per stream; the hypergeometric kernel of the punctured-ensemble
        average is applied along the corresponding weight axis.
        """
        len_ch = 2 * self.k - int(2 * self.lam * self.k)
        len_c = int(2 * self.lam * self.k)
        b = self.log_b
        b = _puncture_axis(b, axis=1, stream_len=len_ch, survivors=survivors_ch)
        b = _puncture_axis(b, axis=2, stream_len=len_c, survivors=survivors_c)
        meta = dict(self.meta, punctured=(survivors_ch, survivors_c))
        return EnsembleTable(self.k, self.lam, b, None, meta)


def _puncture_axis(log_b: np.ndarray, axis: int, stream_len: int, survivors: int):
    if survivors == stream_len:
        return log_b
    h_in = log_b.shape[axis]
    h_out = min(h_in, survivors + 1)
    hs = np.arange(h_in)[:, None]
    hps = np.arange(h_out)[None, :]
    kernel_log = (
        log_choose(hs, hps)
        + log_choose(stream_len - hs, survivors - hps)
        - log_choose(stream_len, survivors)
    )
    kernel = np.zeros_like(kernel_log)
    finite = np.isfinite(kernel_log)
    kernel[finite] = np.exp(kernel_log[finite])
    moved = np.moveaxis(log_b, axis, -1)
    flat = moved.reshape(-1, h_in)
    out = np.full((flat.shape[0], h_out), NEG_INF)
    for i in range(flat.shape[0]):
        lin, c = _exp_shift(flat[i])
        if np.isfinite(c):
            with np.errstate(divide="ignore"):
                out[i] = np.log(np.maximum(lin @ kernel, 0.0)) + c
    out = out.reshape(moved.shape[:-1] + (h_out,))
    return np.moveaxis(out, -1, axis)


def _exp_shift(row: np.ndarray) -> tuple[np.ndarray, float]:
    finite = np.isfinite(row)
    if not finite.any():
        return np.zeros_like(row), NEG_INF
    c = row[finite].max()
    lin = np.exp(row - c)
    lin[~finite] = 0.0
    return lin, c


def ensemble_iowe_random_p(
    k: int,
    lam,
    table_a: IoweTable,
    table_b: IoweTable,
    table_c: IoweTable,
    h_cap: int,
) -> EnsembleTable:
    """Uniform-interleaver ensemble average with a random selection pattern.

    Implements the triple sum over (q, q_a, n): the two outer enumerators are
    convolved over q_a and divided by C(K, w); the selection of n of the q
    parity ones into the patch contributes the hypergeometric factor
    C(q,n) C(2K-q, N_c-n) / C(2K, N_c); the patch enumerator enters as
    A^{Cc}[n, hc] / C(N_c, n).
    """
    lam = Fraction(lam)
    n_c = int(2 * lam * k)
    if n_c != 2 * lam * k:
        raise ValueError("2*lambda*K must be integral")
    w_cap = table_a.w_cap
    n_cap = table_c.log.shape[0] - 1
    hc_cap = min(table_c.log.shape[1] - 1, h_cap)
    q_cap = min(table_a.h_cap + table_b.h_cap, n_cap + h_cap)
    m_cap = min(h_cap, 2 * k - n_c)

    ns = np.arange(n_cap + 1)
    qs = np.arange(q_cap + 1)
    # hypergeometric + patch-uniform normalization, indexed [n, q]
    lhyp = (
        log_choose(qs[None, :], ns[:, None])
        + log_choose(2 * k - qs[None, :], n_c - ns[:, None])
        - log_choose(2 * k, n_c)
        - log_choose(n_c, ns)[:, None]
    )

    log_b = np.full((w_cap + 1, m_cap + 1, hc_cap + 1), NEG_INF)
    lck = log_choose(k, np.arange(w_cap + 1))
    for w in range(w_cap + 1):
        la, ca = _exp_shift(table_a.log[w])
        lb, cb = _exp_shift(table_b.log[w])
        if not np.isfinite(ca) or not np.isfinite(cb):
            continue
        conv = np.convolve(la, lb)[: q_cap + 1]
        with np.errstate(divide="ignore"):
            lu = np.log(conv) + ca + cb - lck[w]
        acc = np.zeros((m_cap + 1, hc_cap + 1))
        acc_c = NEG_INF
        for n in range(n_cap + 1):
            row_c = table_c.log[n, : hc_cap + 1]
            if not np.any(np.isfinite(row_c)):
                continue
            lm = lu[n : n + m_cap + 1] + lhyp[n, n : n + m_cap + 1]
            if not np.any(np.isfinite(lm)):
                continue
            lin_m, cm = _exp_shift(lm)
            lin_c, cc = _exp_shift(row_c)
            tot = cm + cc
            if acc_c == NEG_INF:
                acc_c = tot
            if tot > acc_c:
                acc *= math.exp(acc_c - tot)
                acc_c = tot
            pad_m = np.zeros(m_cap + 1)
            pad_m[: len(lin_m)] = lin_m
            acc += np.outer(pad_m, lin_c) * math.exp(tot - acc_c)
        with np.errstate(divide="ignore"):
            log_b[w, :, :] = np.log(acc) + acc_c
    meta = {"pattern": "random", "h_cap": h_cap}
    return EnsembleTable(k, lam, log_b, None, meta)


def ensemble_iowe_regular_p(
    k: int,
    lam,
    split_a: SplitIowe,
    split_b: SplitIowe,
    table_c: IoweTable,
    h_cap: int,
) -> EnsembleTable:
    """Ensemble average for a fixed regular selection pattern.

    The split enumerators are combined over (m_a, n_a) x (m_b, n_b) with the
    patch enumerator A^{Cc}[n, hc] / C(N_c, n) and the 1/C(K, w) term.  The
    m-axis convolutions are done directly (FFT convolution is unusable here:
    its absolute noise floor swamps the small counts that decide the minimum
    distance bound, since slice entries span hundreds of nats).
    """
    lam = Fraction(lam)
    n_c = int(2 * lam * k)
    w_cap = split_a.log.shape[0] - 1
    m_cap = min(h_cap, split_a.log.shape[1] - 1 + split_b.log.shape[1] - 1)
    n_cap = min(table_c.log.shape[0] - 1,
                split_a.log.shape[2] - 1 + split_b.log.shape[2] - 1)
    hc_cap = min(table_c.log.shape[1] - 1, h_cap)

    lck = log_choose(k, np.arange(w_cap + 1))
    lcn = log_choose(n_c, np.arange(n_cap + 1))
    c_shift = np.full(n_cap + 1, NEG_INF)
    c_lin = np.zeros((n_cap + 1, hc_cap + 1))
    for n in range(n_cap + 1):
        c_lin[n], c_shift[n] = _exp_shift(table_c.log[n, : hc_cap + 1] - lcn[n])

    na_cap = split_a.log.shape[2] - 1
    nb_cap = split_b.log.shape[2] - 1
    log_b = np.full((w_cap + 1, m_cap + 1, hc_cap + 1), NEG_INF)
    for w in range(w_cap + 1):
        sl_a = split_a.log[w]
        sl_b = split_b.log[w]
        shift_a = sl_a.max(axis=0)  # per-na column maxima
        shift_b = sl_b.max(axis=0)
        lin_a = {n: np.exp(sl_a[:, n] - shift_a[n])
                 for n in range(na_cap + 1) if np.isfinite(shift_a[n])}
        lin_b = {n: np.exp(sl_b[:, n] - shift_b[n])
                 for n in range(nb_cap + 1) if np.isfinite(shift_b[n])}
        for key in lin_a:
            lin_a[key][~np.isfinite(sl_a[:, key])] = 0.0
        if sl_b is not sl_a:
            for key in lin_b:
                lin_b[key][~np.isfinite(sl_b[:, key])] = 0.0
        acc = np.zeros((m_cap + 1, hc_cap + 1))
        acc_c = NEG_INF
        for n in range(n_cap + 1):
            if not np.isfinite(c_shift[n]):
                continue
            # per-n m-profile as a direct convolution sum over na + nb = n
            parts = []
            for na in range(max(0, n - nb_cap), min(n, na_cap) + 1):
                if na not in lin_a or (n - na) not in lin_b:
                    continue
                parts.append((shift_a[na] + shift_b[n - na], na))
            if not parts:
                continue
            m_shift = max(p[0] for p in parts)
            m_prof = np.zeros(m_cap + 1)
            for sh, na in parts:
                scale = math.exp(sh - m_shift)
                if scale < 1e-300:
                    continue
                conv = np.convolve(lin_a[na], lin_b[n - na])[: m_cap + 1]
                m_prof[: len(conv)] += conv * scale
            if not m_prof.any():
                continue
            tot = m_shift - lck[w] + c_shift[n]
            if not np.isfinite(acc_c):
                acc_c = tot
            if tot > acc_c:
                acc *= math.exp(acc_c - tot)
                acc_c = tot
            acc += np.outer(m_prof, c_lin[n]) * math.exp(tot - acc_c)
        with np.errstate(divide="ignore"):
            log_b[w] = np.log(acc) + acc_c
    meta = {"pattern": "regular", "h_cap": h_cap}
    return EnsembleTable(k, lam, log_b, None, meta)


# ---------------------------------------------------------------------------
# Exact (big-integer / Fraction) ensemble pipeline for small K


def ensemble_random_p_exact(k: int, lam, ta: IoweTable, tb: IoweTable, tc: IoweTable):
    """Eq-(2) style combination with exact rational arithmetic."""
    lam = Fraction(lam)
    n_c = int(2 * lam * k)
    out: dict = {}
    for (w, qa), a_cnt in ta.exact.items():
        for (wb, qb), b_cnt in tb.exact.items():
            if wb != w:
                continue
            q = qa + qb
            for (n, hc), c_cnt in tc.exact.items():
                if n > min(q, n_c) or n_c - n > 2 * k - q:
                    continue
                term = (
                    Fraction(a_cnt * b_cnt, math.comb(k, w))
                    * Fraction(
                        math.comb(q, n) * math.comb(2 * k - q, n_c - n),
                        math.comb(2 * k, n_c),
                    )
                    * Fraction(c_cnt, math.comb(n_c, n))
                )
                m = q - n
                key = (w, w + m + hc)
                out[key] = out.get(key, Fraction(0)) + term
    return out


def ensemble_regular_p_exact(k: int, lam, sa: SplitIowe, sb: SplitIowe, tc: IoweTable):
    """Eq-(3) style combination with exact rational arithmetic."""
    lam = Fraction(lam)
    n_c = int(2 * lam * k)
    out: dict = {}
    for (w, ma, na), a_cnt in sa.exact.items():
        for (wb, mb, nb), b_cnt in sb.exact.items():
            if wb != w:
                continue
            m, n = ma + mb, na + nb
            for (nn, hc), c_cnt in tc.exact.items():
                if nn != n:
                    continue
                term = Fraction(a_cnt * b_cnt, math.comb(k, w)) * Fraction(
                    c_cnt, math.comb(n_c, n)
                )
                key = (w, w + m + hc)
                out[key] = out.get(key, Fraction(0)) + term
    return out


# ---------------------------------------------------------------------------
# Punctured-ensemble averaging and the probabilistic lower bound


def puncture_average(log_a: np.ndarray, n: int, delta: Fraction | float) -> np.ndarray:
    """Random-puncturing ensemble average of an IOWE, literal form.

    A'[w, h'] = sum_{h >= h'} A[w, h] C(h, h') C(N-h, s-h') / C(N, s) with
    s = [delta * N] rounded to nearest.
    """
    s = int(round(float(delta) * n))
    h_in = log_a.shape[1]
    h_out = min(h_in, s + 1)
    hs = np.arange(h_in)[:, None]
    hps = np.arange(h_out)[None, :]
    kernel_log = (
        log_choose(hs, hps) + log_choose(n - hs, s - hps) - log_choose(n, s)
    )
    kernel = np.exp(np.where(np.isfinite(kernel_log), kernel_log, NEG_INF))
    kernel[~np.isfinite(kernel_log)] = 0.0
    out = np.full((log_a.shape[0], h_out), NEG_INF)
    for w in range(log_a.shape[0]):
        lin, c = _exp_shift(log_a[w])
        if not np.isfinite(c):
            continue
        with np.errstate(divide="ignore"):
            out[w] = np.log(np.maximum(lin @ kernel, 0.0)) + c
    return out


def prob_lb_dmin(we_log: np.ndarray, eps: float) -> tuple[int, bool]:
    """Largest d with sum_{h=1}^{d-1} A_h <= eps, plus a stabilized flag.

    The flag is False when the cumulative sum never exceeds eps inside the
    table, i.e. the truncation (not the data) limited the answer.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    vals = np.exp(we_log[1:])
    vals[~np.isfinite(we_log[1:])] = 0.0
    cum = np.cumsum(vals)
    over = np.nonzero(cum > eps)[0]
    if len(over) == 0:
        return len(we_log), False
    return int(over[0]) + 1, True


def prob_lb_dmin_exact(we: dict, eps: Fraction) -> int:
    h_max = max(we) if we else 0
    total = Fraction(0)
    for d in range(1, h_max + 2):
        if total > eps:
            return d - 1
        total += we.get(d, Fraction(0))
    return h_max + 1


# ---------------------------------------------------------------------------
# High-level driver with adaptive truncation


def _patch_n_cap(table_c_support: np.ndarray, h_cap: int) -> int:
    """Largest patch input weight that can stay within h_cap output weight."""
    finite = np.isfinite(table_c_support)
    ok = [n for n in range(finite.shape[0]) if finite[n, : h_cap + 1].any()]
    return max(ok) if ok else 0


def dmin_lb_report(
    k: int,
    lam,
    eps: float = 0.5,
    pattern: str = "random",
    mode_outer: TerminationMode = TerminationMode.TAILBITING,
    mode_patch: TerminationMode = TerminationMode.NONE,
    rate=Fraction(1, 3),
    h_start: int = 32,
    h_limit: int = 4096,
    trellis_outer: Trellis | None = None,
    trellis_patch: Trellis | None = None,
) -> dict:
    """Probabilistic lower bound on d_min with adaptive truncation.

    Doubles the output-weight cap until the bound lands strictly inside the
    table, so the reported value is unaffected by truncation.  Rates above
    1/3 are modelled by random puncturing of x^ch first, then x_c.
    """
    from turbo3d.trellis import PATCH_SPEC, UMTS_SPEC, build_trellis

    lam = Fraction(lam)
    rate = Fraction(rate)
    trellis_outer = trellis_outer or build_trellis(UMTS_SPEC)
    trellis_patch = trellis_patch or build_trellis(PATCH_SPEC)
    n_c = int(2 * lam * k)
    len_ch = 2 * k - n_c
    need_parity = int(k / rate - k)
    if need_parity >= n_c:
        survivors_ch, survivors_c = need_parity - n_c, n_c
    else:
        survivors_ch, survivors_c = 0, need_parity

    h_cap = h_start
    while True:
        tc = constituent_iowe(
            trellis_patch,
            n_c,
            mode_patch,
            w_cap=min(n_c, 2 * h_cap + 4),
            h_cap=h_cap,
            count_tail_inputs=False,
        )
        n_cap = _patch_n_cap(tc.log, h_cap)
        # padding so the hypergeometric tail in n is not silently cut
        n_cap = min(n_c, n_cap)
        q_cap = min(2 * k, n_cap + h_cap)
        if pattern == "random":
            ta = constituent_iowe(
                trellis_outer, k, mode_outer, w_cap=h_cap, h_cap=q_cap
            )
            ens = ensemble_iowe_random_p(
                k, lam, ta, ta, _trim_rows(tc, n_cap), h_cap
            )
        elif pattern == "regular":
            from turbo3d.encoder3d import regular_pattern

            pat = regular_pattern(lam)
            flags_a = np.tile(pat, 2 * k // len(pat))[0::2][:k].astype(bool)
            flags_b = np.tile(pat, 2 * k // len(pat))[1::2][:k].astype(bool)
            sa = split_iowe(
                trellis_outer, k, flags_a, mode_outer,
                w_cap=h_cap, m_cap=h_cap, n_cap=n_cap,
            )
            if np.array_equal(flags_a, flags_b):
                sb = sa
            else:
                sb = split_iowe(
                    trellis_outer, k, flags_b, mode_outer,
                    w_cap=h_cap, m_cap=h_cap, n_cap=n_cap,
                )
            ens = ensemble_iowe_regular_p(k, lam, sa, sb, _trim_rows(tc, n_cap), h_cap)
        else:
            raise ValueError(f"unknown pattern {pattern!r}")

        if rate != Fraction(1, 3):
            ens = ens.puncture_streams(survivors_ch, survivors_c)
        d, stable = prob_lb_dmin(ens.we_log(), eps)
        if stable and d <= h_cap:
            return {
                "k": k,
                "lambda": str(lam),
                "rate": str(rate),
                "eps": eps,
                "pattern": pattern,
                "mode_outer": mode_outer.value,
                "mode_patch": mode_patch.value,
                "d_min_lb": d,
                "h_cap": h_cap,
            }
        if h_cap >= h_limit:
            raise RuntimeError("bound did not stabilize within h_limit")
        h_cap *= 2


def _trim_rows(table: IoweTable, n_cap: int) -> IoweTable:
    if table.log.shape[0] - 1 <= n_cap:
        return table
    return IoweTable(
        table.k, table.mode, table.log[: n_cap + 1], table.exact, table.clipped
    )


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
