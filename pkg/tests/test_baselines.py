import numpy as np
import pytest
from scipy import fft

from nfd.baselines import (FredParam, IdcParam, Reconstruction, ddif_config_for_budget, fred_decode, fred_encode,
                           fred_from_bytes, fred_select_mask, fred_to_bytes, fred_upsample_zero_pad, idc_decode,
                           idc_encode, idc_factor_for_budget, load_fred, reconstruct_at_budget, reconstruct_ddif_many,
                           save_fred, storage_cost)
from nfd.errors import BudgetTooSmall, FormatError, InvalidArgument
from nfd.field import FieldConfig, param_count
from nfd.grid import GridTensor, resample


def grid(rng, *shape):
    return GridTensor(rng.random(shape))


class TestStorageCost:
    def test_values(self):
        assert storage_cost("vanilla", channels=3, dims=(32, 32)) == 3072
        assert storage_cost("idc", channels=3, dims=(32, 32), factor=2) == 768
        assert storage_cost("idc", channels=1, dims=(5, 5), factor=2) == 9
        assert storage_cost("fred", channels=3, mask_size=10) == 30
        assert storage_cost("ddif", config=FieldConfig.uniform(2, 3, 2, 6)) == 81

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            storage_cost("ddif")
        with pytest.raises(InvalidArgument):
            storage_cost("jpeg")


class TestFred:
    def test_full_mask_is_lossless(self, rng):
        g = grid(rng, 2, 6, 5)
        mask = np.ones((6, 5), bool)
        np.testing.assert_allclose(fred_decode(fred_encode(g, mask), mask).data, g.data, atol=1e-12)

    def test_encode_matches_scipy(self, rng):
        g = grid(rng, 1, 8, 8)
        mask = fred_select_mask([g], 7)
        np.testing.assert_allclose(fred_encode(g, mask), fft.dctn(g.data[0], norm="ortho")[mask][None], atol=1e-12)

    def test_projection_is_optimal(self, rng):
        g = grid(rng, 1, 8, 8)
        mask = fred_select_mask([g], 10)
        best = np.sum((fred_decode(fred_encode(g, mask), mask).data - g.data) ** 2)
        for _ in range(20):
            other = fred_encode(g, mask) + rng.normal(scale=0.01, size=(1, 10))
            assert np.sum((fred_decode(other, mask).data - g.data) ** 2) >= best

    def test_mask_selects_highest_variance(self, rng):
        grids = [grid(rng, 1, 4, 4) for _ in range(20)]
        mask = fred_select_mask(grids, 3)
        coeffs = np.stack([fft.dctn(g.data[0], norm="ortho") for g in grids])
        var = coeffs.var(axis=0)
        assert mask.sum() == 3
        assert var[mask].min() >= var[~mask].max()

    def test_mask_validation(self, rng):
        g = grid(rng, 1, 4, 4)
        with pytest.raises(InvalidArgument):
            fred_select_mask([g], 0)
        with pytest.raises(InvalidArgument):
            fred_select_mask([g], 17)
        with pytest.raises(InvalidArgument):
            fred_encode(g, np.ones((4, 5), bool))
        with pytest.raises(InvalidArgument):
            fred_decode(np.zeros((1, 3)), np.ones((2, 2), bool))

    def test_zero_pad_preserves_constant(self):
        g = GridTensor(np.full((1, 4, 4), 0.7))
        mask = np.ones((4, 4), bool)
        up = fred_upsample_zero_pad(fred_encode(g, mask), mask, (4, 4), (8, 8))
        np.testing.assert_allclose(up.data, 0.7, atol=1e-12)

    def test_zero_pad_resamples_cosine(self):
        n, m = 8, 16
        x = np.cos(np.pi * 2 * (np.arange(n) + 0.5) / n)[None]
        mask = np.ones(n, bool)
        up = fred_upsample_zero_pad(fred_encode(GridTensor(x), mask), mask, (n,), (m,))
        np.testing.assert_allclose(up.data[0], np.cos(np.pi * 2 * (np.arange(m) + 0.5) / m), atol=1e-12)

    def test_zero_pad_target_check(self, rng):
        mask = np.ones((4,), bool)
        with pytest.raises(InvalidArgument):
            fred_upsample_zero_pad(np.zeros((1, 4)), mask, (4,), (4,))

    def test_container_roundtrip(self, rng, tmp_path):
        mask = rng.random((3, 5)) < 0.4
        coeffs = [rng.normal(size=(2, mask.sum())).astype(np.float32).astype(np.float64) for _ in range(3)]
        p = FredParam(mask, coeffs, [0, 4, 1])
        save_fred(p, tmp_path / "c.frd")
        back = load_fred(tmp_path / "c.frd")
        assert np.array_equal(back.mask, mask) and back.labels == [0, 4, 1]
        assert all(np.array_equal(a, b) for a, b in zip(back.coefficients, coeffs))
        assert fred_to_bytes(back) == fred_to_bytes(p)

    def test_container_corruption(self, rng):
        buf = fred_to_bytes(FredParam(np.ones((2, 2), bool), [np.zeros((1, 4))], [0]))
        with pytest.raises(FormatError):
            fred_from_bytes(b"XXXX" + buf[4:])
        with pytest.raises(FormatError):
            fred_from_bytes(buf[:-1])
        with pytest.raises(FormatError):
            fred_from_bytes(buf + b"\0")


class TestIdc:
    def test_factor_for_budget(self):
        assert idc_factor_for_budget(3, (32, 32), 768) == 2
        assert idc_factor_for_budget(3, (32, 32), 767) == 3
        with pytest.raises(BudgetTooSmall):
            idc_factor_for_budget(3, (4, 4), 2)

    def test_encode_is_least_squares(self, rng):
        g = grid(rng, 1, 8, 8)
        low = idc_encode(g, (4, 4))
        best = np.sum((resample(low, (8, 8)).data - g.data) ** 2)
        for _ in range(20):
            other = GridTensor(low.data + rng.normal(scale=0.01, size=low.data.shape))
            assert np.sum((resample(other, (8, 8)).data - g.data) ** 2) >= best - 1e-12

    def test_decode_shape(self, rng):
        p = IdcParam([grid(rng, 2, 3, 3)], 2, "bilinear", [0])
        assert idc_decode(p)[0].data.shape == (2, 6, 6)
        p.target = (5, 5)
        assert idc_decode(p)[0].data.shape == (2, 5, 5)


class TestReconstruct:
    def test_ddif_config_for_budget(self):
        cfg = ddif_config_for_budget(2, 3, 963)
        assert param_count(cfg) == 963 and cfg.widths == (20, 20, 20)
        assert param_count(ddif_config_for_budget(2, 3, 23)) <= 23
        with pytest.raises(BudgetTooSmall):
            ddif_config_for_budget(2, 3, 5)

    def test_vanilla_and_fred(self, rng):
        g = grid(rng, 1, 4, 4)
        assert reconstruct_at_budget(g, 16, "vanilla").grid is g
        with pytest.raises(BudgetTooSmall):
            reconstruct_at_budget(g, 15, "vanilla")
        r = reconstruct_at_budget(g, 16, "fred")
        np.testing.assert_allclose(r.grid.data, g.data, atol=1e-12)
        assert r.budget == 16

    def test_budgets_respected(self, rng):
        g = grid(rng, 3, 8, 8)
        for method in ("fred", "idc", "ddif"):
            r = reconstruct_at_budget(g, 40, method, iters=20)
            assert isinstance(r, Reconstruction) and r.budget <= 40 and r.grid.data.shape == g.data.shape

    def test_shared_mask_too_large(self, rng):
        g = grid(rng, 1, 4, 4)
        with pytest.raises(BudgetTooSmall):
            reconstruct_at_budget(g, 3, "fred", mask=np.ones((4, 4), bool))

    def test_unknown_method(self, rng):
        with pytest.raises(InvalidArgument):
            reconstruct_at_budget(grid(rng, 1, 4, 4), 16, "jpeg")

    def test_many_matches_single(self, rng):
        grids = [grid(rng, 1, 6, 6) for _ in range(3)]
        many = reconstruct_ddif_many(grids, 30, iters=30, restarts=2, seed=4)
        for g, r in zip(grids, many):
            single = reconstruct_at_budget(g, 30, "ddif", iters=30, restarts=2, seed=4)
            np.testing.assert_array_equal(r.grid.data, single.grid.data)

    def test_restarts_never_worse(self, rng):
        g = grid(rng, 1, 6, 6)
        one = reconstruct_at_budget(g, 30, "ddif", iters=50, seed=0)
        three = reconstruct_at_budget(g, 30, "ddif", iters=50, seed=0, restarts=3)
        err = lambda r: np.mean((r.grid.data - g.data) ** 2)  # noqa: E731
        assert err(three) <= err(one) + 1e-12

    def test_decode_dims(self, rng):
        r = reconstruct_ddif_many([grid(rng, 1, 4, 4)], 30, iters=5, decode_dims=(9, 7))
        assert r[0].grid.data.shape == (1, 9, 7)
