import numpy as np
import pytest

from turbo3d.trellis import (
    GeneratorSpec,
    TailbitingError,
    TerminationMode,
    UMTS_SPEC,
    PATCH_SPEC,
    build_trellis,
    encode,
    path_weight,
)


def direct_parity(spec, bits):
    """Oracle: direct-form recurrence fb(D) y = ff(D) u with zero history."""
    ff, fb = spec.feedforward, spec.feedback
    bits = list(bits)
    y = []
    for t in range(len(bits)):
        acc = 0
        for i, c in enumerate(ff):
            if c and t - i >= 0:
                acc ^= bits[t - i]
        for i, c in enumerate(fb):
            if i >= 1 and c and t - i >= 0:
                acc ^= y[t - i]
        y.append(acc)
    return np.array(y, dtype=np.uint8)


# Fundamental paths of the UMTS trellis: (inputs, parities, state sequence)
TYPE1 = ("110001", "100011", [0, 3, 4, 2, 1, 6, 0])
TYPE2 = ("10100000001", "11001110011", [0, 3, 7, 6, 3, 7, 5, 4, 2, 1, 6, 0])
TYPE3 = ("1100100001", "1000010011", [0, 3, 4, 2, 1, 5, 4, 2, 1, 6, 0])


def bits(text):
    return np.array([int(c) for c in text], dtype=np.uint8)


class TestBuildTrellis:
    def test_umts_shape(self):
        t = build_trellis(UMTS_SPEC)
        assert t.num_states == 8
        assert t.next_state.shape == (2, 8)
        # two outgoing edges per state, and (state, input) -> next state covers
        # each state exactly twice
        assert np.bincount(t.next_state.ravel(), minlength=8).tolist() == [2] * 8

    def test_patch_shape(self):
        t = build_trellis(PATCH_SPEC)
        assert t.num_states == 4
        # rate-1: parity of 1/(1+D^2) satisfies y_t = u_t + y_{t-2}
        out = encode(t, bits("101101")).parity
        assert np.array_equal(out, direct_parity(PATCH_SPEC, bits("101101")))

    def test_identity_encoder(self):
        spec = GeneratorSpec.from_octal("1/1")
        t = build_trellis(spec)
        assert t.num_states == 1
        u = bits("10110")
        assert np.array_equal(encode(t, u).parity, u)

    def test_zero_state_absorbing(self):
        t = build_trellis(UMTS_SPEC)
        res = encode(t, np.zeros(10, dtype=np.uint8))
        assert res.end_state == 0
        assert res.parity.sum() == 0

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            GeneratorSpec((0, 0), (1, 0, 1))
        with pytest.raises(ValueError):
            GeneratorSpec((1, 1), (0, 1))

    def test_octal_parsing(self):
        assert UMTS_SPEC.feedforward == (1, 1, 0, 1)  # 1 + D + D^3
        assert UMTS_SPEC.feedback == (1, 0, 1, 1)  # 1 + D^2 + D^3
        assert UMTS_SPEC.nu == 3
        assert PATCH_SPEC.nu == 2
        assert str(UMTS_SPEC) == "13/15"


class TestFundamentalPaths:
    @pytest.mark.parametrize("path", [TYPE1, TYPE2, TYPE3])
    def test_path_labels(self, path):
        inputs, parities, states = path
        t = build_trellis(UMTS_SPEC)
        s = 0
        seen = [0]
        out = []
        for b in bits(inputs):
            out.append(int(t.parity[b, s]))
            s = int(t.next_state[b, s])
            seen.append(s)
        assert out == [int(c) for c in parities]
        assert seen == states

    def test_type2_weights(self):
        # systematic weight 3, parity weight 7 (the Eq-11 label sequence
        # 11,01,10,00,01,01,01,00,00,01,11 has seven parity ones)
        t = build_trellis(UMTS_SPEC)
        assert path_weight(t, 0, bits(TYPE2[0])) == (3, 7, 0)

    def test_type1_encode(self):
        t = build_trellis(UMTS_SPEC)
        res = encode(t, bits("110001"))
        assert np.array_equal(res.parity, bits("100011"))
        assert res.end_state == 0


class TestEncodeModes:
    def test_zero_input_all_modes(self):
        for spec in (UMTS_SPEC, PATCH_SPEC):
            t = build_trellis(spec)
            for mode in TerminationMode:
                res = encode(t, np.zeros(8, dtype=np.uint8), mode)
                assert res.parity.sum() == 0
                assert res.start_state == 0 and res.end_state == 0

    def test_none_matches_direct_form(self):
        rng = np.random.default_rng(7)
        for spec in (UMTS_SPEC, PATCH_SPEC, GeneratorSpec.from_octal("7/5")):
            t = build_trellis(spec)
            for _ in range(20):
                u = rng.integers(0, 2, size=rng.integers(1, 40), dtype=np.uint8)
                assert np.array_equal(encode(t, u).parity, direct_parity(spec, u))

    def test_path_weight_matches_oracle(self):
        rng = np.random.default_rng(11)
        t = build_trellis(UMTS_SPEC)
        for _ in range(20):
            u = rng.integers(0, 2, size=25, dtype=np.uint8)
            start = int(rng.integers(0, 8))
            sw, pw, end = path_weight(t, start, u)
            assert sw == int(u.sum())
            res = encode(t, u, start_state=start)
            assert pw == int(res.parity.sum()) and end == res.end_state

    def test_dual_terminates(self):
        t = build_trellis(UMTS_SPEC)
        rng = np.random.default_rng(3)
        for _ in range(20):
            u = rng.integers(0, 2, size=17, dtype=np.uint8)
            res = encode(t, u, TerminationMode.DUAL)
            assert len(res.parity) == 17 + 3
            assert len(res.tail) == 3
            assert res.start_state == 0 and res.end_state == 0

    def test_dual_linearity(self):
        t = build_trellis(UMTS_SPEC)
        rng = np.random.default_rng(5)
        for _ in range(30):
            u = rng.integers(0, 2, size=20, dtype=np.uint8)
            v = rng.integers(0, 2, size=20, dtype=np.uint8)
            pu = encode(t, u, TerminationMode.DUAL)
            pv = encode(t, v, TerminationMode.DUAL)
            puv = encode(t, u ^ v, TerminationMode.DUAL)
            assert np.array_equal(puv.parity, pu.parity ^ pv.parity)
            assert np.array_equal(puv.tail, pu.tail ^ pv.tail)


def brute_force_circulation(trellis, u):
    hits = []
    for s in range(trellis.num_states):
        cur = s
        for b in u:
            cur = int(trellis.next_state[int(b), cur])
        if cur == s:
            hits.append(s)
    return hits


class TestTailbiting:
    def test_closure_when_feasible(self):
        t = build_trellis(UMTS_SPEC)
        rng = np.random.default_rng(13)
        for k in (6, 8, 11, 16):
            for _ in range(10):
                u = rng.integers(0, 2, size=k, dtype=np.uint8)
                res = encode(t, u, TerminationMode.TAILBITING)
                assert res.start_state == res.end_state
                assert res.start_state in brute_force_circulation(t, u)

    def test_umts_fails_iff_7_divides_k(self):
        t = build_trellis(UMTS_SPEC)
        impulse = np.zeros(7, dtype=np.uint8)
        impulse[0] = 1
        assert brute_force_circulation(t, impulse) == []
        with pytest.raises(TailbitingError):
            encode(t, impulse, TerminationMode.TAILBITING)
        ok = np.zeros(8, dtype=np.uint8)
        ok[0] = 1
        assert encode(t, ok, TerminationMode.TAILBITING).start_state in (
            brute_force_circulation(t, ok)
        )

    def test_patch_weight1_input_has_no_circulation_state(self):
        # A single 1 into 1/(1+D^2) leaves one parity chain with odd input
        # weight, so no start state can close the trellis at even length.
        t = build_trellis(PATCH_SPEC)
        u = bits("100000")
        assert brute_force_circulation(t, u) == []
        with pytest.raises(TailbitingError):
            encode(t, u, TerminationMode.TAILBITING)

    def test_patch_even_chain_weights_close(self):
        t = build_trellis(PATCH_SPEC)
        u = bits("101000")  # both 1s on the even-index chain
        hits = brute_force_circulation(t, u)
        assert hits
        res = encode(t, u, TerminationMode.TAILBITING)
        assert res.start_state == res.end_state
        assert res.start_state in hits


def test_impulse_response_period_7():
    # feedback 1 + D^2 + D^3 is primitive of degree 3
    t = build_trellis(UMTS_SPEC)
    u = np.zeros(40, dtype=np.uint8)
    u[0] = 1
    p = encode(t, u).parity
    for i in range(1, 30):
        assert p[i] == p[i + 7]
