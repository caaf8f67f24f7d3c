"""Quadratic permutation polynomials over integer rings.

A quadratic polynomial f(x) = f1*x + f2*x^2 (mod M) is a permutation
polynomial iff the coefficient conditions of the two-case criterion hold
(split on whether 4 | M or M is twice an odd number).  This module provides
validity checking, permutation evaluation, quadratic inverses and the
quasi-cyclic period of the 3-dimensional turbo code built from a QPP pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "factorize",
    "is_qpp",
    "Qpp",
    "quadratic_inverse",
    "quasi_cyclic_period",
    "count_valid_pairs",
    "parse_qpp",
]


def factorize(m: int) -> dict[int, int]:
    """Exact prime factorization by trial division, {} for m = 1."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    factors: dict[int, int] = {}
    p = 2
    while p * p <= m:
        while m % p == 0:
            factors[p] = factors.get(p, 0) + 1
            m //= p
        p += 1 if p == 2 else 2
    if m > 1:
        factors[m] = factors.get(m, 0) + 1
    return factors


def is_qpp(f1: int, f2: int, m: int) -> bool:
    """Permutation criterion for f(x) = f1*x + f2*x^2 (mod m).

    Case 1 (m odd or 4 | m): gcd(f1, m) = 1 and every prime of m divides f2.
    Case 2 (m = 2 * odd): f1 + f2 odd, gcd(f1, m/2) = 1, and every odd prime
    of m divides f2.
    """
    if m < 2:
        raise ValueError("modulus must be >= 2")
    f1 %= m
    f2 %= m
    n_m2 = 0
    mm = m
    while mm % 2 == 0:
        n_m2 += 1
        mm //= 2
    if n_m2 != 1:
        if math.gcd(f1, m) != 1:
            return False
        return all(f2 % p == 0 for p in factorize(m))
    if (f1 + f2) % 2 == 0:
        return False
    if math.gcd(f1, m // 2) != 1:
        return False
    return all(f2 % p == 0 for p in factorize(m) if p != 2)


@dataclass(frozen=True)
class Qpp:
    """A validated QPP x -> f1*x + f2*x^2 (mod m).

    Coefficients are reduced mod m at construction and the permutation
    criterion is enforced.  Factorizations of m and f2 are cached since the
    distance bounds repeatedly inspect prime exponents.
    """

    f1: int
    f2: int
    m: int
    m_factors: dict[int, int] = field(init=False, repr=False, compare=False)
    f2_factors: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "f1", self.f1 % self.m)
        object.__setattr__(self, "f2", self.f2 % self.m)
        if not is_qpp(self.f1, self.f2, self.m):
            raise ValueError(f"({self.f1}, {self.f2}) mod {self.m} is not a QPP")
        object.__setattr__(self, "m_factors", factorize(self.m))
        object.__setattr__(
            self, "f2_factors", factorize(self.f2) if self.f2 > 0 else {}
        )

    def __call__(self, x):
        return (self.f1 * x + self.f2 * x * x) % self.m

    def permutation(self) -> np.ndarray:
        """The full index map as an array: position i goes to perm[i]."""
        x = np.arange(self.m, dtype=np.int64)
        return (self.f1 * x + self.f2 * x * x) % self.m

    def __str__(self):
        return f"{self.f1},{self.f2} mod {self.m}"


def parse_qpp(text: str) -> Qpp:
    """Parse "f1,f2 mod M" (e.g. "15,192 mod 256")."""
    try:
        coeffs, modulus = text.split("mod")
        f1_txt, f2_txt = coeffs.split(",")
        return Qpp(int(f1_txt), int(f2_txt), int(modulus))
    except ValueError as exc:
        raise ValueError(f"cannot parse QPP {text!r}") from exc


def _solve_linear_congruence(a: int, b: int, m: int) -> list[int]:
    """All x in Z_m with a*x = b (mod m)."""
    a %= m
    b %= m
    g = math.gcd(a, m)
    if b % g:
        return []
    mg = m // g
    x0 = (b // g) * pow(a // g, -1, mg) % mg
    return [x0 + t * mg for t in range(g)]


def quadratic_inverse(q: Qpp) -> Qpp | None:
    """The QPP generating the inverse permutation, or None.

    Any quadratic g matching the inverse permutation must satisfy
    2*g2 = inv(2) - 2*inv(1) (mod m), which leaves at most gcd(2, m)
    candidate coefficient pairs; each is verified pointwise, so the search
    is complete without scanning.
    """
    perm = q.permutation()
    inv = np.empty_like(perm)
    inv[perm] = np.arange(q.m, dtype=np.int64)
    c = (int(inv[2 % q.m]) - 2 * int(inv[1 % q.m])) % q.m
    x = np.arange(q.m, dtype=np.int64)
    for g2 in _solve_linear_congruence(2, c, q.m):
        g1 = (int(inv[1 % q.m]) - g2) % q.m
        if np.array_equal((g1 * x + g2 * x * x) % q.m, inv):
            return Qpp(g1, g2, q.m)
    return None


def count_valid_pairs(m: int) -> int:
    """Number of (f1, f2) pairs in Z_m x Z_m forming a genuinely quadratic PP.

    Pairs with f2 = 0 (linear permutations) are excluded; for m = 256 this
    gives the 128 x 127 = 16256 count of possible coefficient pairs.
    """
    f = np.arange(m, dtype=np.int64)
    primes = list(factorize(m))
    n_m2 = factorize(m).get(2, 0)
    if n_m2 != 1:
        f1_ok = np.gcd(f, m) == 1
        f2_ok = f > 0
        for p in primes:
            f2_ok &= f % p == 0
        return int(f1_ok.sum()) * int(f2_ok.sum())
    f2_ok = f > 0
    for p in primes:
        if p != 2:
            f2_ok &= f % p == 0
    f1_ok = np.gcd(f, m // 2) == 1
    odd = f % 2 == 1
    # f1 + f2 must be odd
    return int((f1_ok & odd).sum()) * int((f2_ok & ~odd).sum()) + int(
        (f1_ok & ~odd).sum()
    ) * int((f2_ok & odd).sum())


def quasi_cyclic_period(
    f: Qpp, ftilde: Qpp, lam: Fraction
) -> tuple[int, int, int]:
    """Quasi-cyclic period of the 3D turbo code with tailbiting everywhere.

    ``f`` generates the turbo interleaver over Z_K and ``ftilde`` the patch
    permutation over Z_{N_c}, N_c = 2*lam*K, with the regular pattern
    [1100...0].  Returns (p, l, ptilde) where ptilde is the least common
    period forced by the three shift conditions and l is the smallest
    positive solution of the quadratic congruence
    2*lam*ptilde*((f1-1)*l + f2*ptilde*l^2) = 0 (mod N_c).
    """
    lam = Fraction(lam)
    if lam.numerator != 1:
        raise ValueError("permeability rate must be 1/L for the regular pattern")
    big_l = lam.denominator  # 1/lam
    k = f.m
    n_c = ftilde.m
    if k % big_l:
        raise ValueError("1/lambda must divide K")
    if Fraction(2, big_l) * k != n_c:
        raise ValueError("ftilde modulus must equal N_c = 2*lambda*K")

    a = k // math.gcd(2 * f.f2, k) if f.f2 else 1
    m3 = n_c // math.gcd(2 * ftilde.f2, n_c) if ftilde.f2 else 1
    g0 = math.lcm(a, big_l)
    q0 = 2 * g0 // big_l  # = 2*lam*g0, integral since (1/lam) | g0
    ptilde = g0 * (m3 // math.gcd(q0, m3))

    r = 2 * ptilde // big_l  # 2*lam*ptilde
    l = next(
        l
        for l in range(1, n_c + 1)
        if (r * ((f.f1 - 1) * l + f.f2 * ptilde * l * l)) % n_c == 0
    )
    return l * ptilde, l, ptilde
