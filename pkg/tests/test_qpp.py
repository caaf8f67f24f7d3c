import math
from fractions import Fraction

import numpy as np
import pytest

from turbo3d.qpp import (
    Qpp,
    count_valid_pairs,
    factorize,
    is_qpp,
    parse_qpp,
    quadratic_inverse,
    quasi_cyclic_period,
)


def brute_force_is_permutation(f1, f2, m):
    x = np.arange(m, dtype=np.int64)
    return len(np.unique((f1 * x + f2 * x * x) % m)) == m


def brute_force_quadratic_inverse_exists(q):
    """Oracle: scan all (g1, g2) pairs, filter on two points, verify fully."""
    perm = q.permutation()
    inv = np.empty_like(perm)
    inv[perm] = np.arange(q.m)
    g1, g2 = np.meshgrid(np.arange(q.m), np.arange(q.m), indexing="ij")
    mask = ((g1 + g2) % q.m == inv[1 % q.m]) & ((2 * g1 + 4 * g2) % q.m == inv[2 % q.m])
    x = np.arange(q.m, dtype=np.int64)
    for a, b in zip(g1[mask], g2[mask]):
        if np.array_equal((int(a) * x + int(b) * x * x) % q.m, inv):
            return True
    return False


class TestFactorize:
    def test_paper_values(self):
        assert factorize(3888) == {2: 4, 3: 5}
        assert factorize(1504) == {2: 5, 47: 1}

    def test_one(self):
        assert factorize(1) == {}

    def test_reconstruction(self):
        for m in range(1, 500):
            f = factorize(m)
            assert math.prod(p**e for p, e in f.items()) == m
            assert all(e >= 1 for e in f.values())


class TestIsQpp:
    def test_table_iv_entry(self):
        assert is_qpp(15, 192, 256)

    def test_non_unit_linear(self):
        assert not is_qpp(2, 2, 8)

    def test_count_mod_256(self):
        assert count_valid_pairs(256) == 16256

    def test_agrees_with_brute_force_all_m_up_to_64(self):
        for m in range(2, 65):
            for f1 in range(m):
                for f2 in range(m):
                    assert is_qpp(f1, f2, m) == brute_force_is_permutation(
                        f1, f2, m
                    ), (f1, f2, m)

    def test_invalid_construction_raises(self):
        with pytest.raises(ValueError):
            Qpp(2, 2, 8)


class TestPermutation:
    def test_identity(self):
        assert np.array_equal(Qpp(1, 0, 17).permutation(), np.arange(17))

    def test_bijection_sort_oracle(self):
        perm = Qpp(15, 192, 256).permutation()
        assert np.array_equal(np.sort(perm), np.arange(256))

    def test_f2_half_modulus_power_of_two(self):
        for k in range(2, 11):
            m = 1 << k
            for f1 in (1, 3, m - 1):
                q = Qpp(f1, m // 2, m)
                assert np.array_equal(np.sort(q.permutation()), np.arange(m))

    def test_parse_round_trip(self):
        q = parse_qpp("15,192 mod 256")
        assert (q.f1, q.f2, q.m) == (15, 192, 256)
        assert str(q) == "15,192 mod 256"


class TestQuadraticInverse:
    def test_identity_self_inverse(self):
        g = quadratic_inverse(Qpp(1, 0, 64))
        assert g is not None and (g.f1, g.f2) == (1, 0)

    def test_table_iv_1024(self):
        g = quadratic_inverse(Qpp(465, 224, 1024))
        assert g is not None
        f = Qpp(465, 224, 1024)
        x = np.arange(1024, dtype=np.int64)
        assert np.array_equal(g(f(x)), x)

    def test_composition_is_identity_when_found(self):
        rng = np.random.default_rng(2)
        for m in (32, 48, 100, 256):
            found = 0
            for _ in range(40):
                f1, f2 = int(rng.integers(m)), int(rng.integers(m))
                if not is_qpp(f1, f2, m):
                    continue
                q = Qpp(f1, f2, m)
                g = quadratic_inverse(q)
                if g is not None:
                    found += 1
                    x = np.arange(m, dtype=np.int64)
                    assert np.array_equal(g(q(x)), x)
            assert found > 0

    def test_exhaustive_cross_check(self):
        # existence must match a full coefficient scan for every valid QPP
        for m in list(range(4, 33)) + [40, 48, 64, 96, 128]:
            for f1 in range(m):
                for f2 in range(m):
                    if not is_qpp(f1, f2, m):
                        continue
                    q = Qpp(f1, f2, m)
                    assert (quadratic_inverse(q) is not None) == (
                        brute_force_quadratic_inverse_exists(q)
                    ), (f1, f2, m)


def test_lemma3_residue_classes():
    # when 4 | M, f preserves congruence classes mod 4
    rng = np.random.default_rng(9)
    for m in (16, 64, 256, 512):
        for _ in range(20):
            f1, f2 = int(rng.integers(m)), int(rng.integers(m))
            if not is_qpp(f1, f2, m):
                continue
            perm = Qpp(f1, f2, m).permutation()
            for r in range(4):
                assert len(set((perm[r::4] % 4).tolist())) == 1


class TestQuasiCyclicPeriod:
    def test_linear_pp_degenerate(self):
        # f2 = ftilde2 = 0 gives ptilde = lcm(1, 4, 1) = 4
        f = Qpp(5, 0, 32)
        ft = Qpp(3, 0, 16)
        p, l, ptilde = quasi_cyclic_period(f, ft, Fraction(1, 4))
        assert ptilde == 4
        # the congruence reduces to 2*lam*ptilde*(f1-1)*l = 0 (mod N_c)
        expected_l = next(
            j for j in range(1, 17) if (2 * (f.f1 - 1) * j) % 16 == 0
        )
        assert l == expected_l
        assert p == l * 4

    def test_k64_case_structure(self):
        f = Qpp(7, 16, 64)
        ft = Qpp(3, 8, 32)
        p, l, ptilde = quasi_cyclic_period(f, ft, Fraction(1, 4))
        a = 64 // math.gcd(2 * 16, 64)
        m3 = 32 // math.gcd(2 * 8, 32)
        assert ptilde % a == 0 and ptilde % 4 == 0
        assert (2 * ptilde // 4) % m3 == 0
        assert 64 % p == 0  # period divides K

    def test_conventional_tc_period_component(self):
        # without the patch the turbo code period is K / gcd(2 f2, K)
        f = Qpp(7, 16, 64)
        assert 64 // math.gcd(2 * f.f2, 64) == 2
