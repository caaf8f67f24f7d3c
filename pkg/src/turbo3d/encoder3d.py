"""The 3-dimensional turbo encoder: outer parallel turbo code plus patch.

Information bits are encoded by two UMTS constituent encoders; their parity
streams are alternated into x^TC, a fraction lambda of which (selected by a
periodic or seeded-random pattern) is permuted and re-encoded by the rate-1
post-encoder, while the rest goes directly to the channel.  Nominal rate is
1/3; higher rates puncture x^ch first and then x_c, never the systematic
bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from turbo3d.qpp import Qpp
from turbo3d.trellis import (
    GeneratorSpec,
    PATCH_SPEC,
    TerminationMode,
    Trellis,
    UMTS_SPEC,
    build_trellis,
    encode,
)

__all__ = [
    "Code3dConfig",
    "Codeword3d",
    "RatePuncture",
    "build_config",
    "build_config_qpp",
    "encode3d",
    "puncture_to_rate",
    "rate_puncture",
]


def interleave(bits: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Position i of the input appears at position perm[i] of the output."""
    out = np.empty_like(bits)
    out[perm] = bits
    return out


def regular_pattern(lam: Fraction) -> np.ndarray:
    """[1100...0] of period 2/lambda: ones mark bits routed to the patch."""
    lam = Fraction(lam)
    if lam == 0:
        return np.zeros(2, dtype=np.uint8)
    period = Fraction(2) / lam
    if period.denominator != 1:
        raise ValueError("2/lambda must be an integer for the regular pattern")
    period = int(period)
    p = np.zeros(period, dtype=np.uint8)
    p[: int(lam * period)] = 1
    return p


def random_pattern(lam: Fraction, period: int, seed: int) -> np.ndarray:
    """A period with exactly lam*period ones at seeded-random positions."""
    lam = Fraction(lam)
    ones = lam * period
    if ones.denominator != 1:
        raise ValueError("lam * period must be an integer")
    rng = np.random.default_rng(seed)
    p = np.zeros(period, dtype=np.uint8)
    p[rng.choice(period, size=int(ones), replace=False)] = 1
    return p


@dataclass(frozen=True)
class Code3dConfig:
    """Full parameter set of one 3D turbo code instance.

    ``pi`` maps upper position i to lower position pi[i]; ``pi_c`` does the
    same for the patch input.  ``pattern`` is one period of the selection
    pattern over x^TC (1 = routed to the patch).  Tail bits produced by dual
    termination bypass the patch and are sent directly.
    """

    k: int
    lam: Fraction
    pi: np.ndarray
    pi_c: np.ndarray
    pattern: np.ndarray
    termination_outer: TerminationMode = TerminationMode.DUAL
    termination_patch: TerminationMode = TerminationMode.DUAL
    outer_spec: GeneratorSpec = UMTS_SPEC
    patch_spec: GeneratorSpec = PATCH_SPEC
    trellis_outer: Trellis = field(init=False, repr=False, compare=False)
    trellis_patch: Trellis = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lam = Fraction(self.lam)
        object.__setattr__(self, "lam", lam)
        n_c = 2 * lam * self.k
        if n_c.denominator != 1:
            raise ValueError("2*lambda*K must be an integer")
        if lam and (Fraction(1) / lam).denominator == 1:
            if self.k % (Fraction(1) / lam) != 0:
                raise ValueError("1/lambda must divide K")
        pi = np.asarray(self.pi, dtype=np.int64)
        pi_c = np.asarray(self.pi_c, dtype=np.int64)
        pattern = np.asarray(self.pattern, dtype=np.uint8)
        if len(pi) != self.k or not np.array_equal(np.sort(pi), np.arange(self.k)):
            raise ValueError("pi must be a permutation of length K")
        if len(pi_c) != int(n_c) or not np.array_equal(
            np.sort(pi_c), np.arange(int(n_c))
        ):
            raise ValueError("pi_c must be a permutation of length N_c")
        if (2 * self.k) % len(pattern) != 0:
            raise ValueError("pattern period must divide 2K")
        if Fraction(int(pattern.sum()), len(pattern)) != lam:
            raise ValueError("pattern weight per period must equal lambda*N_p")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "pi_c", pi_c)
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "trellis_outer", build_trellis(self.outer_spec))
        object.__setattr__(self, "trellis_patch", build_trellis(self.patch_spec))

    @property
    def n_c(self) -> int:
        return int(2 * self.lam * self.k)

    @property
    def nominal_n(self) -> int:
        return 3 * self.k

    @property
    def actual_rate(self) -> Fraction:
        """(K - 2 nu - nu~)/3K under dual termination, K/3K otherwise."""
        nu = self.outer_spec.nu
        nut = self.patch_spec.nu if self.lam else 0
        overhead = 0
        if self.termination_outer is TerminationMode.DUAL:
            overhead += 2 * nu
        if self.lam and self.termination_patch is TerminationMode.DUAL:
            overhead += nut
        return Fraction(self.k - overhead, 3 * self.k)

    def selection_mask(self) -> np.ndarray:
        """Boolean mask over the 2K positions of x^TC: True = to the patch."""
        reps = 2 * self.k // len(self.pattern)
        return np.tile(self.pattern, reps).astype(bool)

    def to_text(self) -> str:
        lines = [
            f"k = {self.k}",
            f"lambda = {self.lam}",
            f"termination_outer = {self.termination_outer.value}",
            f"termination_patch = {self.termination_patch.value}",
            f"outer_spec = {self.outer_spec}",
            f"patch_spec = {self.patch_spec}",
            "pattern = " + "".join(map(str, self.pattern.tolist())),
            "pi = " + ",".join(map(str, self.pi.tolist())),
            "pi_c = " + ",".join(map(str, self.pi_c.tolist())),
        ]
        return "\n".join(lines) + "\n"


def build_config(
    k: int,
    lam,
    pi,
    pi_c,
    p_mode: str = "regular",
    termination: TerminationMode = TerminationMode.DUAL,
    termination_patch: TerminationMode | None = None,
    seed: int = 0,
    pattern_period: int | None = None,
) -> Code3dConfig:
    """Assemble a config; p_mode is "regular" or "random" (seeded)."""
    lam = Fraction(lam)
    if p_mode == "regular":
        pattern = regular_pattern(lam)
    elif p_mode == "random":
        period = pattern_period or int(Fraction(2) / lam)
        pattern = random_pattern(lam, period, seed)
    else:
        raise ValueError(f"unknown pattern mode {p_mode!r}")
    return Code3dConfig(
        k,
        lam,
        pi,
        pi_c,
        pattern,
        termination_outer=termination,
        termination_patch=termination if termination_patch is None else termination_patch,
    )


def build_config_qpp(k: int, lam, f: Qpp, ftilde: Qpp | None = None, **kwargs) -> Code3dConfig:
    lam = Fraction(lam)
    if f.m != k:
        raise ValueError("f modulus must equal K")
    n_c = int(2 * lam * k)
    if lam == 0:
        pi_c = np.zeros(0, dtype=np.int64)
    else:
        if ftilde is None or ftilde.m != n_c:
            raise ValueError("ftilde modulus must equal N_c")
        pi_c = ftilde.permutation()
    return build_config(k, lam, f.permutation(), pi_c, **kwargs)


@dataclass(frozen=True)
class Codeword3d:
    """One encoded frame with all named stream views.

    ``x_ch`` and ``x_c`` are the transmitted parity streams; ``x_a``, ``x_b``,
    ``x_tc`` and ``x_p`` are the internal views used by the distance analyses.
    Tail fields are empty unless the corresponding encoder uses dual
    termination.
    """

    config: Code3dConfig
    u: np.ndarray
    x_a: np.ndarray
    x_b: np.ndarray
    x_ch: np.ndarray
    x_c: np.ndarray
    states_a: tuple[int, int]
    states_b: tuple[int, int]
    states_c: tuple[int, int]
    tail_sys_a: np.ndarray
    tail_par_a: np.ndarray
    tail_sys_b: np.ndarray
    tail_par_b: np.ndarray
    tail_par_c: np.ndarray

    @property
    def x_tc(self) -> np.ndarray:
        out = np.empty(2 * self.config.k, dtype=np.uint8)
        out[0::2] = self.x_a
        out[1::2] = self.x_b
        return out

    @property
    def x_p(self) -> np.ndarray:
        return self.x_tc[self.config.selection_mask()]

    def transmitted(self) -> np.ndarray:
        """Multiplexed channel sequence: u, x^ch, x_c, then any tails."""
        return np.concatenate(
            [
                self.u,
                self.x_ch,
                self.x_c,
                self.tail_sys_a,
                self.tail_par_a,
                self.tail_sys_b,
                self.tail_par_b,
                self.tail_par_c,
            ]
        )

    def weight(self) -> int:
        return int(self.transmitted().sum())

    def to_text(self) -> str:
        return "".join(map(str, self.transmitted().tolist())) + "\n"


def encode3d(cfg: Code3dConfig, u) -> Codeword3d:
    """Encode K information bits through the full scheme of the encoder figure."""
    u = np.asarray(u, dtype=np.uint8)
    if len(u) != cfg.k:
        raise ValueError(f"input length {len(u)} != K = {cfg.k}")
    enc_a = encode(cfg.trellis_outer, u, cfg.termination_outer)
    v = interleave(u, cfg.pi)
    enc_b = encode(cfg.trellis_outer, v, cfg.termination_outer)
    k = cfg.k
    x_a = enc_a.parity[:k]
    x_b = enc_b.parity[:k]
    x_tc = np.empty(2 * k, dtype=np.uint8)
    x_tc[0::2] = x_a
    x_tc[1::2] = x_b
    sel = cfg.selection_mask()
    x_p = x_tc[sel]
    x_ch = x_tc[~sel]
    if cfg.lam:
        z = interleave(x_p, cfg.pi_c)
        enc_c = encode(cfg.trellis_patch, z, cfg.termination_patch)
        x_c = enc_c.parity[: cfg.n_c]
        tail_par_c = enc_c.parity[cfg.n_c :]
        states_c = (enc_c.start_state, enc_c.end_state)
    else:
        x_c = np.zeros(0, dtype=np.uint8)
        tail_par_c = np.zeros(0, dtype=np.uint8)
        states_c = (0, 0)
    return Codeword3d(
        config=cfg,
        u=u.copy(),
        x_a=x_a,
        x_b=x_b,
        x_ch=x_ch,
        x_c=x_c,
        states_a=(enc_a.start_state, enc_a.end_state),
        states_b=(enc_b.start_state, enc_b.end_state),
        states_c=states_c,
        tail_sys_a=enc_a.tail,
        tail_par_a=enc_a.parity[k:],
        tail_sys_b=enc_b.tail,
        tail_par_b=enc_b.parity[k:],
        tail_par_c=tail_par_c,
    )


@dataclass(frozen=True)
class RatePuncture:
    """Keep-masks over the x^ch and x_c streams for one target rate."""

    target_rate: Fraction
    keep_ch: np.ndarray
    keep_c: np.ndarray

    def kept_counts(self) -> tuple[int, int]:
        return int(self.keep_ch.sum()), int(self.keep_c.sum())


def _tile_keep(pattern, length: int, what: str) -> np.ndarray:
    pattern = np.asarray(pattern, dtype=np.uint8)
    if length % len(pattern):
        raise ValueError(f"{what} pattern period {len(pattern)} must divide {length}")
    return np.tile(pattern, length // len(pattern)).astype(bool)


def rate_puncture(
    cfg: Code3dConfig,
    target_rate,
    ch_patterns: tuple | None = None,
    c_pattern=None,
    random_seed: int | None = None,
) -> RatePuncture:
    """Build keep-masks for a target rate under the puncture-x^ch-first rule.

    ``ch_patterns`` is a pair of periodic keep patterns, one per constituent
    sub-stream of x^ch.  ``c_pattern`` is a periodic keep pattern for x_c.
    With ``random_seed`` set, surviving positions are drawn uniformly at
    random instead (exact survivor counts), which is the ensemble model used
    by the EXIT analysis.
    """
    target_rate = Fraction(target_rate)
    k = cfg.k
    len_ch = 2 * k - cfg.n_c
    len_c = cfg.n_c
    need_parity = k / target_rate - k
    if need_parity.denominator != 1 or need_parity > len_ch + len_c or need_parity < 0:
        raise ValueError(f"rate {target_rate} infeasible for lambda={cfg.lam}")
    need_parity = int(need_parity)

    if need_parity >= len_c:
        keep_ch_count = need_parity - len_c
        keep_c_count = len_c
    else:
        keep_ch_count = 0
        keep_c_count = need_parity

    if random_seed is not None:
        rng = np.random.default_rng(random_seed)
        keep_ch = np.zeros(len_ch, dtype=bool)
        if keep_ch_count:
            keep_ch[rng.choice(len_ch, size=keep_ch_count, replace=False)] = True
        keep_c = np.zeros(len_c, dtype=bool)
        if keep_c_count:
            keep_c[rng.choice(len_c, size=keep_c_count, replace=False)] = True
        return RatePuncture(target_rate, keep_ch, keep_c)

    if keep_ch_count == len_ch:
        keep_ch = np.ones(len_ch, dtype=bool)
    elif keep_ch_count == 0:
        keep_ch = np.zeros(len_ch, dtype=bool)
    else:
        if ch_patterns is None:
            raise ValueError("rate needs x^ch puncturing: pass ch_patterns")
        pat_a, pat_b = (np.asarray(p, dtype=np.uint8) for p in ch_patterns)
        # x^ch alternates the two constituents' surviving parity bits
        keep_a = _tile_keep(pat_a, len_ch // 2, "x_a^ch")
        keep_b = _tile_keep(pat_b, len_ch // 2, "x_b^ch")
        keep_ch = np.empty(len_ch, dtype=bool)
        keep_ch[0::2] = keep_a
        keep_ch[1::2] = keep_b
        if int(keep_ch.sum()) != keep_ch_count:
            raise ValueError("ch_patterns weight does not hit the target rate")
    if keep_c_count == len_c:
        keep_c = np.ones(len_c, dtype=bool)
    else:
        if c_pattern is None:
            raise ValueError("rate needs x_c puncturing: pass c_pattern")
        keep_c = _tile_keep(c_pattern, len_c, "x_c")
        if int(keep_c.sum()) != keep_c_count:
            raise ValueError("c_pattern weight does not hit the target rate")
    return RatePuncture(target_rate, keep_ch, keep_c)


def puncture_to_rate(cfg: Code3dConfig, cw: Codeword3d, puncture: RatePuncture) -> np.ndarray:
    """Transmitted bit sequence after rate puncturing (systematic bits kept)."""
    return np.concatenate(
        [
            cw.u,
            cw.x_ch[puncture.keep_ch],
            cw.x_c[puncture.keep_c],
            cw.tail_sys_a,
            cw.tail_par_a,
            cw.tail_sys_b,
            cw.tail_par_b,
            cw.tail_par_c,
        ]
    )
