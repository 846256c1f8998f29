"""Tube-mask construction, ratio arithmetic, and gather/scatter round trips."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from svfap.masking import TubeMask, gather_visible, make_tube_mask, \
    scatter_full, visible_count


class TestVisibleCount:
    def test_table_ratios_exact_on_10x10(self):
        assert visible_count(100, 0.75) == 25
        assert visible_count(100, 0.85) == 15
        assert visible_count(100, 0.90) == 10
        assert visible_count(100, 0.95) == 5

    def test_rounds_to_nearest(self):
        assert visible_count(16, 0.33) == 11  # round(10.72)


class TestMakeTubeMask:
    def test_tube_property(self):
        rng = np.random.default_rng(0)
        mask = make_tube_mask((8, 10, 10), 0.9, rng)
        visible = mask.visible_tokens()
        s_full = 100
        pattern = set(mask.visible_spatial.tolist())
        expected = np.array(sorted(t * s_full + s
                                   for t in range(8) for s in sorted(pattern)))
        # time-major order: slice 0 first, ascending spatial inside
        by_construction = np.concatenate(
            [t * s_full + mask.visible_spatial for t in range(8)])
        np.testing.assert_array_equal(visible, by_construction)
        np.testing.assert_array_equal(np.sort(visible), expected)

    def test_masked_ratio_exact(self):
        rng = np.random.default_rng(1)
        for rho in (0.75, 0.85, 0.90, 0.95):
            mask = make_tube_mask((8, 10, 10), rho, rng)
            assert mask.num_masked / mask.num_tokens == pytest.approx(rho)

    def test_visible_and_masked_partition_lattice(self):
        rng = np.random.default_rng(2)
        mask = make_tube_mask((4, 4, 4), 0.5, rng)
        union = np.concatenate([mask.visible_tokens(), mask.masked_tokens()])
        np.testing.assert_array_equal(np.sort(union),
                                      np.arange(mask.num_tokens))

    def test_no_visible_tokens_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError, match="visible"):
            make_tube_mask((4, 2, 2), 0.999, rng)

    def test_deterministic_given_rng(self):
        m1 = make_tube_mask((4, 4, 4), 0.75, np.random.default_rng(7))
        m2 = make_tube_mask((4, 4, 4), 0.75, np.random.default_rng(7))
        np.testing.assert_array_equal(m1.visible_spatial, m2.visible_spatial)

    @settings(max_examples=60, deadline=None)
    @given(t=st.integers(1, 6), h=st.integers(2, 6), w=st.integers(2, 6),
           ratio=st.floats(0.0, 0.95), seed=st.integers(0, 10 ** 6))
    def test_mask_invariants(self, t, h, w, ratio, seed):
        rng = np.random.default_rng(seed)
        if visible_count(h * w, ratio) < 1:
            with pytest.raises(ValueError):
                make_tube_mask((t, h, w), ratio, rng)
            return
        mask = make_tube_mask((t, h, w), ratio, rng)
        vis = mask.visible_spatial
        assert len(np.unique(vis)) == len(vis)
        assert np.all((0 <= vis) & (vis < h * w))
        assert np.all(np.diff(vis) > 0)
        assert mask.num_visible == t * len(vis)
        assert mask.num_visible + mask.num_masked == t * h * w


class TestTubeMaskValidation:
    def test_duplicate_spatial_rejected(self):
        with pytest.raises(ValueError):
            TubeMask(visible_spatial=np.array([1, 1]), grid=(2, 2, 2),
                     ratio=0.5)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            TubeMask(visible_spatial=np.array([4]), grid=(2, 2, 2), ratio=0.5)


class TestGatherScatter:
    def _mask(self):
        return make_tube_mask((2, 2, 2), 0.5, np.random.default_rng(0))

    def test_round_trip_numpy(self):
        mask = self._mask()
        tokens = np.random.rand(mask.num_tokens, 3)
        visible = gather_visible(tokens, mask)
        assert visible.shape == (mask.num_visible, 3)
        token = np.full(3, -1.0)
        full = scatter_full(visible, mask, token)
        np.testing.assert_array_equal(full[mask.visible_tokens()], visible)
        np.testing.assert_array_equal(
            full[mask.masked_tokens()],
            np.tile(token, (mask.num_masked, 1)))

    def test_round_trip_torch(self):
        mask = self._mask()
        tokens = torch.randn(mask.num_tokens, 3)
        visible = gather_visible(tokens, mask)
        token = torch.full((3,), -1.0)
        full = scatter_full(visible, mask, token)
        torch.testing.assert_close(
            full[torch.as_tensor(mask.visible_tokens())], visible)
        assert (full[torch.as_tensor(mask.masked_tokens())] == -1.0).all()

    def test_scatter_fills_masked_count(self):
        # 8x10x10 grid at 90%: 800 rows, 720 placeholders
        mask = make_tube_mask((8, 10, 10), 0.9, np.random.default_rng(4))
        visible = np.random.rand(mask.num_visible, 4)
        full = scatter_full(visible, mask, np.zeros(4))
        assert full.shape == (800, 4)
        assert (full == 0.0).all(axis=1).sum() >= 720

    def test_gather_shape_check(self):
        mask = self._mask()
        with pytest.raises(ValueError):
            gather_visible(np.random.rand(mask.num_tokens + 1, 3), mask)
