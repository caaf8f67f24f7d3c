from fractions import Fraction

import numpy as np
import pytest

from turbo3d.encoder3d import (
    Code3dConfig,
    build_config,
    build_config_qpp,
    encode3d,
    interleave,
    puncture_to_rate,
    random_pattern,
    rate_puncture,
    regular_pattern,
)
from turbo3d.qpp import Qpp, quasi_cyclic_period
from turbo3d.trellis import TailbitingError, TerminationMode, encode


def small_config(k=32, lam=Fraction(1, 4), seed=0, termination=TerminationMode.DUAL):
    rng = np.random.default_rng(seed)
    pi = rng.permutation(k)
    n_c = int(2 * lam * k)
    pi_c = rng.permutation(n_c)
    return build_config(k, lam, pi, pi_c, termination=termination)


class TestPatterns:
    def test_regular_quarter(self):
        assert regular_pattern(Fraction(1, 4)).tolist() == [1, 1, 0, 0, 0, 0, 0, 0]

    def test_regular_full(self):
        assert regular_pattern(Fraction(1)).tolist() == [1, 1]

    def test_random_counting(self):
        seen = set()
        for seed in range(1000):
            p = random_pattern(Fraction(1, 2), 4, seed)
            assert int(p.sum()) == 2
            seen.add(tuple(p.tolist()))
        assert len(seen) > 1

    def test_pattern_weight_validated(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            Code3dConfig(
                16,
                Fraction(1, 4),
                rng.permutation(16),
                rng.permutation(8),
                np.array([1, 0, 0, 0, 0, 0, 0, 0], dtype=np.uint8),
            )


class TestEncode3d:
    def test_all_zero(self):
        cfg = small_config()
        cw = encode3d(cfg, np.zeros(cfg.k, dtype=np.uint8))
        assert cw.weight() == 0

    def test_stream_lengths_and_rate(self):
        cfg = small_config(k=32, lam=Fraction(1, 4))
        cw = encode3d(cfg, np.random.default_rng(1).integers(0, 2, 32, dtype=np.uint8))
        assert len(cw.x_ch) == 2 * 32 - cfg.n_c == 48
        assert len(cw.x_c) == cfg.n_c == 16
        assert cfg.nominal_n == 96
        # actual rate accounts for 2 nu + nu~ termination overhead
        assert cfg.actual_rate == Fraction(32 - 2 * 3 - 2, 96)

    def test_weight_bookkeeping_q_equals_n_plus_m(self):
        rng = np.random.default_rng(42)
        for lam in (Fraction(1, 4), Fraction(1, 2), Fraction(1)):
            cfg = small_config(k=64, lam=lam, seed=3)
            for _ in range(250):
                u = rng.integers(0, 2, 64, dtype=np.uint8)
                cw = encode3d(cfg, u)
                q = int(cw.x_tc.sum())
                n = int(cw.x_p.sum())
                m = int(cw.x_ch.sum())
                assert q == n + m

    def test_lambda_one_no_channel_branch(self):
        cfg = small_config(k=16, lam=Fraction(1))
        cw = encode3d(cfg, np.ones(16, dtype=np.uint8))
        assert len(cw.x_ch) == 0
        assert np.array_equal(cw.x_p, cw.x_tc)

    def test_lambda_zero_conventional_tc(self):
        cfg = small_config(k=16, lam=Fraction(0))
        cw = encode3d(cfg, np.ones(16, dtype=np.uint8))
        assert len(cw.x_c) == 0
        assert np.array_equal(cw.x_ch, cw.x_tc)

    def test_multiplexer_round_trip(self):
        cfg = small_config(k=24, lam=Fraction(1, 2), seed=9)
        cw = encode3d(cfg, np.random.default_rng(5).integers(0, 2, 24, dtype=np.uint8))
        sel = cfg.selection_mask()
        rebuilt = np.empty(2 * cfg.k, dtype=np.uint8)
        rebuilt[sel] = cw.x_p
        rebuilt[~sel] = cw.x_ch
        assert np.array_equal(rebuilt, cw.x_tc)

    def test_linearity_dual(self):
        cfg = small_config(k=32, seed=8)
        rng = np.random.default_rng(6)
        for _ in range(25):
            u = rng.integers(0, 2, 32, dtype=np.uint8)
            v = rng.integers(0, 2, 32, dtype=np.uint8)
            a, b, c = encode3d(cfg, u), encode3d(cfg, v), encode3d(cfg, u ^ v)
            assert np.array_equal(c.transmitted(), a.transmitted() ^ b.transmitted())

    def test_interleave_convention(self):
        # position i of the input lands at position pi[i]
        pi = np.array([2, 0, 3, 1])
        assert interleave(np.array([10, 20, 30, 40]), pi).tolist() == [20, 40, 10, 30]

    def test_wrong_length_rejected(self):
        cfg = small_config()
        with pytest.raises(ValueError):
            encode3d(cfg, np.zeros(cfg.k + 1, dtype=np.uint8))


class TestRatePuncture:
    def test_rate_third_identity(self):
        cfg = small_config(k=32)
        cw = encode3d(cfg, np.random.default_rng(2).integers(0, 2, 32, dtype=np.uint8))
        rp = rate_puncture(cfg, Fraction(1, 3))
        assert np.array_equal(puncture_to_rate(cfg, cw, rp), cw.transmitted())

    def test_rate_two_thirds_drops_all_ch(self):
        cfg = small_config(k=32, lam=Fraction(1, 4))
        cw = encode3d(cfg, np.random.default_rng(2).integers(0, 2, 32, dtype=np.uint8))
        rp = rate_puncture(cfg, Fraction(2, 3))
        assert rp.kept_counts() == (0, cfg.n_c)
        out = puncture_to_rate(cfg, cw, rp)
        expect = np.concatenate(
            [cw.u, cw.x_c, cw.tail_sys_a, cw.tail_par_a, cw.tail_sys_b, cw.tail_par_b, cw.tail_par_c]
        )
        assert np.array_equal(out, expect)

    def test_rate_half_period_6_patterns(self):
        cfg = small_config(k=48, lam=Fraction(1, 4), seed=4)
        cw = encode3d(cfg, np.random.default_rng(3).integers(0, 2, 48, dtype=np.uint8))
        rp = rate_puncture(
            cfg, Fraction(1, 2), ch_patterns=([1, 0, 0, 1, 0, 0], [0, 1, 0, 0, 1, 0])
        )
        # keep K parity bits total: 2 of 6 ch bits per stream period plus all of x_c
        assert sum(rp.kept_counts()) == 48
        tail_len = 4 * 3 + 2  # sys+par tails for both outers, parity tail for patch
        assert len(puncture_to_rate(cfg, cw, rp)) == 2 * 48 + tail_len

    def test_rate_four_fifths(self):
        cfg = small_config(k=32, lam=Fraction(1, 4), seed=4)
        cw = encode3d(cfg, np.random.default_rng(3).integers(0, 2, 32, dtype=np.uint8))
        rp = rate_puncture(cfg, Fraction(4, 5), c_pattern=[1, 0, 1, 0, 1, 0, 1, 0])
        assert rp.kept_counts() == (0, cfg.n_c // 2)

    def test_infeasible_rate(self):
        cfg = small_config(k=32, lam=Fraction(1, 4))
        with pytest.raises(ValueError):
            rate_puncture(cfg, Fraction(1, 4))
        with pytest.raises(ValueError):
            rate_puncture(cfg, Fraction(4, 5), c_pattern=[1, 1, 1, 1, 0, 0, 0, 0][:4])

    def test_random_mode_counts(self):
        cfg = small_config(k=48, lam=Fraction(1, 4))
        rp = rate_puncture(cfg, Fraction(1, 2), random_seed=11)
        assert sum(rp.kept_counts()) == 48


def roll_check_constituent(trellis, bits, parity_expected):
    """True if some start state makes `parity_expected` the closed-path encoding."""
    for s in range(trellis.num_states):
        res = encode(trellis, bits, TerminationMode.NONE, start_state=s)
        if res.end_state == s and np.array_equal(res.parity, parity_expected):
            return True
    return False


class TestQuasiCyclicShift:
    def test_k64_lemma_period(self):
        k = 64
        lam = Fraction(1, 4)
        f = Qpp(7, 16, k)
        ft = Qpp(3, 8, 32)
        p, _, _ = quasi_cyclic_period(f, ft, lam)
        cfg = build_config_qpp(
            k, lam, f, ft, termination=TerminationMode.TAILBITING
        )
        rng = np.random.default_rng(20)
        checked = 0
        while checked < 5:
            u = rng.integers(0, 2, k, dtype=np.uint8)
            try:
                cw = encode3d(cfg, u)
            except TailbitingError:
                continue
            checked += 1
            shifted = np.roll(u, p)
            cw2 = encode3d(cfg, shifted)
            # unique circulation states for the outer encoders at 7 ∤ K
            assert np.array_equal(cw2.x_a, np.roll(cw.x_a, p))
            assert np.array_equal(cw2.x_b, np.roll(cw.x_b, p))
            # the patch may have several valid circulation states; check
            # membership of the shifted stream as a closed-path codeword
            shift_c = int(2 * lam * p)
            z = interleave(np.roll(cw.x_p, shift_c), cfg.pi_c)
            assert roll_check_constituent(
                cfg.trellis_patch, z, np.roll(cw.x_c, shift_c)
            )
