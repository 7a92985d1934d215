import math

import numpy as np
import pytest

from nesyarith.neural import params as P
from nesyarith.neural import positional as pos
from nesyarith.neural.net import embed


class TestSinusoidalTable:
    def test_row_zero(self):
        t = pos.sinusoidal_table(8, 6)
        assert np.allclose(t[0], [0, 1, 0, 1, 0, 1])

    def test_first_position_entries(self):
        t = pos.sinusoidal_table(8, 6)
        assert abs(t[1, 0] - math.sin(1.0)) < 1e-6
        assert abs(t[1, 1] - math.cos(1.0)) < 1e-6

    def test_formula_everywhere(self):
        m, d = 40, 16
        t = pos.sinusoidal_table(m, d)
        for p in (0, 1, 7, 39):
            for i in range(d // 2):
                angle = p / 10000 ** (2 * i / d)
                assert abs(t[p, 2 * i] - math.sin(angle)) < 1e-6
                assert abs(t[p, 2 * i + 1] - math.cos(angle)) < 1e-6

    def test_odd_d_model_rejected(self):
        with pytest.raises(ValueError):
            pos.sinusoidal_table(4, 5)

    def test_read_only(self):
        t = pos.sinusoidal_table(8, 6)
        with pytest.raises(ValueError):
            t[0, 0] = 1.0


class TestLabelPositions:
    def test_forced_when_k_equals_m(self, rng):
        assert pos.label_positions(rng, 3, 3).tolist() == [0, 1, 2]

    def test_single_in_range(self, rng):
        for _ in range(50):
            (v,) = pos.label_positions(rng, 1, 100)
            assert 0 <= v < 100

    def test_sorted_distinct_in_range(self, rng):
        for _ in range(100):
            draws = pos.label_positions(rng, 12, 150)
            assert len(set(draws.tolist())) == 12
            assert (np.diff(draws) > 0).all()
            assert draws[0] >= 0 and draws[-1] < 150

    def test_k_too_large(self, rng):
        with pytest.raises(pos.KTooLargeError):
            pos.label_positions(rng, 11, 10)

    def test_uniform_pairs_chi_square(self, rng):
        # k=2, m=10: 45 unordered pairs, expect uniform occupancy.
        counts = {}
        n = 10_000
        for _ in range(n):
            a, b = pos.label_positions(rng, 2, 10)
            counts[(int(a), int(b))] = counts.get((int(a), int(b)), 0) + 1
        assert len(counts) == 45
        expected = n / 45
        stat = sum((c - expected) ** 2 / expected for c in counts.values())
        # chi-square critical value, df=44, alpha=0.001
        assert stat < 78.75


class TestEmbed:
    def test_label_equals_sinusoidal_when_m_equals_k(self, rng):
        k = 7
        cfg_label = P.ModelConfig(
            d_model=16, n_heads=2, d_ff=32, max_positions=k,
            pe_mode=P.PEMode.LABEL, max_decode_len=k,
        )
        cfg_sin = P.ModelConfig(
            d_model=16, n_heads=2, d_ff=32, max_positions=k,
            pe_mode=P.PEMode.SINUSOIDAL, max_decode_len=k,
        )
        params = P.init_params(cfg_sin, rng)
        ids = np.arange(k) % 5
        a = embed(ids, params, cfg_label, np.random.default_rng(0))
        b = embed(ids, params, cfg_sin)
        assert (a == b).all()

    def test_sinusoidal_deterministic(self, rng):
        cfg = P.ModelConfig(d_model=16, n_heads=2, d_ff=32,
                            pe_mode=P.PEMode.SINUSOIDAL)
        params = P.init_params(cfg, rng)
        ids = np.array([16, 3, 17])
        assert (embed(ids, params, cfg) == embed(ids, params, cfg)).all()

    def test_label_resamples(self, rng):
        cfg = P.ModelConfig(d_model=16, n_heads=2, d_ff=32,
                            pe_mode=P.PEMode.LABEL, max_positions=150)
        params = P.init_params(cfg, rng)
        ids = np.array([16, 3, 17])
        a = embed(ids, params, cfg, np.random.default_rng(1))
        b = embed(ids, params, cfg, np.random.default_rng(2))
        assert not (a == b).all()

    def test_sequence_too_long(self, rng):
        cfg = P.ModelConfig(d_model=16, n_heads=2, d_ff=32, max_positions=10,
                            max_decode_len=4)
        params = P.init_params(cfg, rng)
        with pytest.raises(pos.SequenceTooLongError):
            embed(np.arange(11), params, cfg, rng)

    def test_label_needs_rng(self, rng):
        cfg = P.ModelConfig(d_model=16, n_heads=2, d_ff=32)
        params = P.init_params(cfg, rng)
        with pytest.raises(ValueError):
            embed(np.array([1, 2]), params, cfg, None)
