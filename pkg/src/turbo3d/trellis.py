"""Finite-state machinery for recursive systematic convolutional encoders.

Encoders are specified by a rational transfer function ff(D)/fb(D) over
GF(2) and realised in observer canonical form, which reproduces the usual
state numbering of the 8-state UMTS constituent code (state = s1 + 2*s2 +
4*s3, where s1 is the cell feeding the parity output).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeneratorSpec",
    "Trellis",
    "TerminationMode",
    "TailbitingError",
    "UMTS_SPEC",
    "PATCH_SPEC",
    "build_trellis",
    "encode",
    "path_weight",
]


class TailbitingError(ValueError):
    """No circulation state exists for this (length, input) combination."""


class TerminationMode(enum.Enum):
    NONE = "none"
    TAILBITING = "tailbiting"
    DUAL = "dual"


def _poly_from_int(value: int) -> tuple[int, ...]:
    # bit j of the integer is the coefficient of D^j
    if value < 0:
        raise ValueError("polynomial value must be non-negative")
    if value == 0:
        return (0,)
    return tuple((value >> j) & 1 for j in range(value.bit_length()))


@dataclass(frozen=True)
class GeneratorSpec:
    """Generator ff(D)/fb(D) of a rate-1 recursive systematic encoder.

    Coefficients are stored lowest degree first.  The memory ``nu`` is the
    maximum degree of the two polynomials.  The feedback constant term must
    be 1 so the encoder is well defined, and the feedforward polynomial must
    be nonzero.
    """

    feedforward: tuple[int, ...]
    feedback: tuple[int, ...]

    def __post_init__(self):
        ff = tuple(int(b) & 1 for b in self.feedforward)
        fb = tuple(int(b) & 1 for b in self.feedback)
        object.__setattr__(self, "feedforward", ff)
        object.__setattr__(self, "feedback", fb)
        if not any(ff):
            raise ValueError("degenerate spec: all-zero feedforward polynomial")
        if not fb or fb[0] != 1:
            raise ValueError("feedback polynomial must have constant term 1")

    @property
    def nu(self) -> int:
        def deg(p):
            return max((j for j, b in enumerate(p) if b), default=0)

        return max(deg(self.feedforward), deg(self.feedback))

    @classmethod
    def from_octal(cls, text: str) -> "GeneratorSpec":
        """Parse an "ff/fb" octal pair such as "13/15" (the UMTS encoder).

        The leading octal digit carries the highest powers of D, so
        13 = 1011b = 1 + D + D^3 and 15 = 1101b = 1 + D^2 + D^3.
        """
        try:
            ff_txt, fb_txt = text.split("/")
            ff = int(ff_txt, 8)
            fb = int(fb_txt, 8)
        except ValueError as exc:
            raise ValueError(f"cannot parse generator spec {text!r}") from exc
        return cls(_poly_from_int(ff), _poly_from_int(fb))

    def __str__(self):
        def to_oct(p):
            return format(sum(b << j for j, b in enumerate(p)), "o")

        return f"{to_oct(self.feedforward)}/{to_oct(self.feedback)}"


# 3GPP/UMTS 8-state constituent encoder (1 + D + D^3)/(1 + D^2 + D^3)
UMTS_SPEC = GeneratorSpec.from_octal("13/15")
# rate-1 post-encoder 1/(1 + D^2)
PATCH_SPEC = GeneratorSpec.from_octal("1/5")


@dataclass(frozen=True)
class Trellis:
    """State-transition tables of a recursive systematic encoder.

    ``next_state[u, s]`` and ``parity[u, s]`` give the successor state and
    parity output for input bit ``u`` in state ``s``.  ``state_update`` /
    ``input_vector`` are the GF(2) matrices (A, B) of the affine state
    recursion s' = A s + B u used for termination computations.
    """

    spec: GeneratorSpec
    num_states: int
    next_state: np.ndarray  # (2, S) int64
    parity: np.ndarray  # (2, S) uint8
    state_update: np.ndarray  # (nu, nu) uint8, GF(2)
    input_vector: np.ndarray  # (nu,) uint8
    tail_table: np.ndarray = field(repr=False, default=None)  # (S, nu) uint8

    @property
    def nu(self) -> int:
        return self.spec.nu

    def step(self, state: int, bit: int) -> tuple[int, int]:
        return int(self.next_state[bit, state]), int(self.parity[bit, state])


def build_trellis(spec: GeneratorSpec) -> Trellis:
    """Build the observer-form trellis for a generator spec.

    The trellis has 2^nu states with two outgoing edges per state, and the
    all-zero state is absorbing under zero input.
    """
    nu = spec.nu
    ff = spec.feedforward + (0,) * (nu + 1 - len(spec.feedforward))
    fb = spec.feedback + (0,) * (nu + 1 - len(spec.feedback))
    num_states = 1 << nu

    # observer canonical form: y = ff0*u + s1, cell i takes s_{i+1} + ff_i*u + fb_i*y
    A = np.zeros((nu, nu), dtype=np.uint8)
    B = np.zeros(nu, dtype=np.uint8)
    for i in range(1, nu + 1):
        if i < nu:
            A[i - 1, i] = 1
        A[i - 1, 0] ^= fb[i]
        B[i - 1] = (ff[i] ^ (fb[i] & ff[0])) & 1

    next_state = np.zeros((2, num_states), dtype=np.int64)
    parity = np.zeros((2, num_states), dtype=np.uint8)
    for s in range(num_states):
        cells = [(s >> i) & 1 for i in range(nu)]
        for u in (0, 1):
            y = (ff[0] & u) ^ (cells[0] if nu else 0)
            nxt = 0
            for i in range(1, nu + 1):
                cell = cells[i] if i < nu else 0
                cell ^= (ff[i] & u) ^ (fb[i] & y)
                nxt |= cell << (i - 1)
            next_state[u, s] = nxt
            parity[u, s] = y

    tail_table = _zero_forcing_table(next_state, nu)
    return Trellis(spec, num_states, next_state, parity, A, B, tail_table)


def _zero_forcing_table(next_state: np.ndarray, nu: int) -> np.ndarray:
    """For each state, the input sequence of length nu that drives it to 0."""
    num_states = next_state.shape[1]
    table = np.zeros((num_states, nu), dtype=np.uint8)
    for s in range(num_states):
        found = False
        for word in range(1 << nu):
            cur = s
            for j in range(nu):
                cur = int(next_state[(word >> j) & 1, cur])
            if cur == 0:
                table[s] = [(word >> j) & 1 for j in range(nu)]
                found = True
                break
        if not found:
            raise ValueError("encoder state space is not zero-forceable")
    return table


# ---------------------------------------------------------------------------
# GF(2) linear algebra helpers (small, dense)


def gf2_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.uint8) @ b.astype(np.uint8)) & 1


def gf2_matpow(a: np.ndarray, k: int) -> np.ndarray:
    n = a.shape[0]
    result = np.eye(n, dtype=np.uint8)
    base = a.astype(np.uint8).copy()
    while k:
        if k & 1:
            result = gf2_matmul(result, base)
        base = gf2_matmul(base, base)
        k >>= 1
    return result


def gf2_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Solve A x = b over GF(2); free variables are set to 0.

    Returns None when the system is inconsistent.
    """
    a = a.astype(np.uint8).copy()
    b = b.astype(np.uint8).copy()
    n_rows, n_cols = a.shape
    pivot_cols = []
    row = 0
    for col in range(n_cols):
        pivot = None
        for r in range(row, n_rows):
            if a[r, col]:
                pivot = r
                break
        if pivot is None:
            continue
        if pivot != row:
            a[[row, pivot]] = a[[pivot, row]]
            b[[row, pivot]] = b[[pivot, row]]
        for r in range(n_rows):
            if r != row and a[r, col]:
                a[r] ^= a[row]
                b[r] ^= b[row]
        pivot_cols.append(col)
        row += 1
        if row == n_rows:
            break
    for r in range(row, n_rows):
        if b[r]:
            return None
    x = np.zeros(n_cols, dtype=np.uint8)
    for r, col in enumerate(pivot_cols):
        x[col] = b[r]
    return x


def _state_to_vec(state: int, nu: int) -> np.ndarray:
    return np.array([(state >> i) & 1 for i in range(nu)], dtype=np.uint8)


def _vec_to_state(vec: np.ndarray) -> int:
    return int(sum(int(b) << i for i, b in enumerate(vec)))


def circulation_state(trellis: Trellis, bits) -> int:
    """Start state with start = end for this input, via the affine recursion.

    Solves (A^K + I) s = w over GF(2), where w is the end state reached from
    the zero state.  When the system is singular but consistent the solution
    with free coordinates set to zero is returned; when it is inconsistent
    (no circulation state exists for this input) TailbitingError is raised.
    """
    nu = trellis.nu
    if nu == 0:
        return 0
    k = len(bits)
    w = 0
    for b in bits:
        w = int(trellis.next_state[int(b), w])
    m = gf2_matpow(trellis.state_update, k)
    m_plus_i = (m ^ np.eye(nu, dtype=np.uint8)).astype(np.uint8)
    sol = gf2_solve(m_plus_i, _state_to_vec(w, nu))
    if sol is None:
        raise TailbitingError(
            f"no circulation state for length {k} input on {trellis.spec}"
        )
    return _vec_to_state(sol)


# ---------------------------------------------------------------------------
# Encoding


@dataclass(frozen=True)
class EncodeResult:
    parity: np.ndarray  # uint8, length K (+ nu for dual)
    start_state: int
    end_state: int
    tail: np.ndarray  # uint8, tail input bits (empty unless dual)

    def __iter__(self):
        return iter((self.parity, self.start_state, self.end_state, self.tail))


def _run(trellis: Trellis, bits, state: int) -> tuple[np.ndarray, int]:
    nxt = trellis.next_state
    par = trellis.parity
    out = np.empty(len(bits), dtype=np.uint8)
    for t, b in enumerate(bits):
        b = int(b)
        out[t] = par[b, state]
        state = int(nxt[b, state])
    return out, state


def encode(
    trellis: Trellis,
    bits,
    mode: TerminationMode = TerminationMode.NONE,
    start_state: int = 0,
) -> EncodeResult:
    """Encode an input bit sequence through the trellis.

    In NONE mode the encoder starts at ``start_state`` and ends wherever the
    input drives it.  DUAL mode starts at zero and appends nu zero-forcing
    tail steps, so the parity has nu extra bits and ``tail`` holds the tail
    input bits.  TAILBITING mode computes a circulation state so that
    start_state == end_state, raising TailbitingError if none exists.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if mode is TerminationMode.TAILBITING:
        s0 = circulation_state(trellis, bits)
        parity, end = _run(trellis, bits, s0)
        assert end == s0
        return EncodeResult(parity, s0, end, np.zeros(0, dtype=np.uint8))
    if mode is TerminationMode.DUAL:
        parity, end = _run(trellis, bits, 0)
        tail = trellis.tail_table[end].copy()
        tail_parity, end2 = _run(trellis, tail, end)
        if end2 != 0:
            raise AssertionError("zero-forcing tail failed to terminate")
        return EncodeResult(np.concatenate([parity, tail_parity]), 0, 0, tail)
    parity, end = _run(trellis, bits, start_state)
    return EncodeResult(parity, start_state, end, np.zeros(0, dtype=np.uint8))


def path_weight(trellis: Trellis, start_state: int, bits) -> tuple[int, int, int]:
    """Hamming weights (systematic, parity) and end state of a trellis path."""
    bits = np.asarray(bits, dtype=np.uint8)
    parity, end = _run(trellis, bits, start_state)
    return int(bits.sum()), int(parity.sum()), end


def batch_encode_from_zero(trellis: Trellis, bit_matrix: np.ndarray) -> np.ndarray:
    """Parity for each row of a (frames, K) bit matrix, NONE mode from state 0."""
    bit_matrix = np.asarray(bit_matrix, dtype=np.uint8)
    frames, k = bit_matrix.shape
    state = np.zeros(frames, dtype=np.int64)
    out = np.empty((frames, k), dtype=np.uint8)
    nxt = trellis.next_state
    par = trellis.parity
    for t in range(k):
        b = bit_matrix[:, t]
        out[:, t] = par[b, state]
        state = nxt[b, state]
    return out
