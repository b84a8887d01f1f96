"""Sector sampling, mask rasterization, and multiplicative injection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonoshadow.autodiff import Tensor, sum_all
from sonoshadow.shadows import (
    FanGeometry,
    SectorSpec,
    ShadowConfig,
    ShadowMask,
    inject,
    inside_fan,
    rasterize_mask,
    sample_sectors,
    sectors_from_json,
    sectors_to_json,
    shadow_region,
    validate_config,
)

# a 64x64 convex-probe view with the apex above the image, symmetric about
# the vertical axis so the fan's angular center is exactly 0
GEOM = FanGeometry(apex=(-8.0, 31.5), theta_min=-0.55, theta_max=0.55, r_min=12.0, r_max=76.0)
SIZE = 64


def polar(geom, width, height):
    # independent re-derivation of the pixel -> (radius, angle) map
    rows = np.arange(height, dtype=float)[:, None] - geom.apex[0]
    cols = np.arange(width, dtype=float)[None, :] - geom.apex[1]
    radius = np.hypot(rows, cols)
    theta = np.arctan2(np.broadcast_to(cols, radius.shape), np.broadcast_to(rows, radius.shape))
    return radius, theta


def sector_coverage(sector, geom, width, height):
    # oracle: where does one sector touch the image at all?
    radius, theta = polar(geom, width, height)
    dist = np.abs(theta - sector.theta_center)
    hit = dist < sector.theta_width / 2 + sector.edge_softness
    if sector.edge_softness == 0:
        hit = dist <= sector.theta_width / 2
    return hit & (radius >= sector.r_start) & (radius <= sector.r_end)


class TestFanGeometry:
    def test_rejects_inverted_angles(self):
        with pytest.raises(ValueError, match="theta_min"):
            FanGeometry(apex=(0, 0), theta_min=0.5, theta_max=0.5, r_min=1, r_max=2)

    def test_rejects_bad_radii(self):
        with pytest.raises(ValueError, match="r_min"):
            FanGeometry(apex=(0, 0), theta_min=-1, theta_max=1, r_min=-1, r_max=2)
        with pytest.raises(ValueError, match="r_min"):
            FanGeometry(apex=(0, 0), theta_min=-1, theta_max=1, r_min=5, r_max=5)

    def test_dict_round_trip(self):
        again = FanGeometry.from_dict(GEOM.to_dict())
        assert again == GEOM

    def test_rejects_unknown_keys(self):
        d = GEOM.to_dict()
        d["tilt"] = 1.0
        with pytest.raises(ValueError, match="tilt"):
            FanGeometry.from_dict(d)


class TestSectorSpec:
    def test_validation(self):
        ok = dict(theta_center=0.0, theta_width=0.2, r_start=10, r_end=20, attenuation=0.3)
        SectorSpec(**ok)
        with pytest.raises(ValueError, match="theta_width"):
            SectorSpec(**{**ok, "theta_width": 0.0})
        with pytest.raises(ValueError, match="r_start"):
            SectorSpec(**{**ok, "r_start": 20})
        with pytest.raises(ValueError, match="attenuation"):
            SectorSpec(**{**ok, "attenuation": 1.0})
        with pytest.raises(ValueError, match="attenuation"):
            SectorSpec(**{**ok, "attenuation": -0.1})
        with pytest.raises(ValueError, match="edge_softness"):
            SectorSpec(**{**ok, "edge_softness": -0.01})
        # fully dark is legal, fully transparent is not a shadow
        SectorSpec(**{**ok, "attenuation": 0.0})

    def test_dict_round_trip(self):
        s = SectorSpec(theta_center=0.1, theta_width=0.2, r_start=12.0, r_end=76.0,
                       attenuation=0.45, edge_softness=0.02)
        assert SectorSpec.from_dict(s.to_dict()) == s

    def test_from_dict_coerces_ints(self):
        s = SectorSpec.from_dict(dict(theta_center=0, theta_width=1, r_start=10,
                                      r_end=20, attenuation=0, edge_softness=0))
        assert isinstance(s.r_start, float)

    def test_rejects_unknown_keys(self):
        d = SectorSpec(theta_center=0, theta_width=1, r_start=1, r_end=2, attenuation=0).to_dict()
        d["color"] = 3
        with pytest.raises(ValueError, match="color"):
            SectorSpec.from_dict(d)


class TestShadowConfig:
    def test_dict_round_trip_defaults(self):
        cfg = ShadowConfig()
        assert ShadowConfig.from_dict(cfg.to_dict()) == cfg

    def test_dict_round_trip_radial_ranges(self):
        cfg = ShadowConfig(count=(2, 2), r_start=(12.0, 14.0), r_end=(70.0, 76.0))
        again = ShadowConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert isinstance(again.count[0], int)

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="depth"):
            ShadowConfig.from_dict({"depth": 3})


class TestValidateConfig:
    def test_default_config_fits_default_fan(self):
        validate_config(ShadowConfig(), GEOM)

    def test_rejects_bad_count(self):
        with pytest.raises(ValueError, match="count"):
            validate_config(ShadowConfig(count=(3, 1)), GEOM)
        with pytest.raises(ValueError, match="count"):
            validate_config(ShadowConfig(count=(-1, 2)), GEOM)

    def test_rejects_inverted_or_nonpositive_widths(self):
        with pytest.raises(ValueError, match="inverted"):
            validate_config(ShadowConfig(theta_width=(0.3, 0.2)), GEOM)
        with pytest.raises(ValueError, match="positive"):
            validate_config(ShadowConfig(theta_width=(0.0, 0.2)), GEOM)

    def test_rejects_attenuation_reaching_one(self):
        with pytest.raises(ValueError, match="attenuation"):
            validate_config(ShadowConfig(attenuation=(0.5, 1.0)), GEOM)

    def test_rejects_width_wider_than_fan(self):
        with pytest.raises(ValueError, match="span"):
            validate_config(ShadowConfig(theta_width=(0.05, 2.0)), GEOM)

    def test_rejects_radii_outside_fan(self):
        with pytest.raises(ValueError, match="radial span"):
            validate_config(ShadowConfig(r_start=(5.0, 6.0)), GEOM)
        with pytest.raises(ValueError, match="radial span"):
            validate_config(ShadowConfig(r_end=(70.0, 80.0)), GEOM)

    def test_rejects_overlapping_radial_ranges(self):
        with pytest.raises(ValueError, match="r_end"):
            validate_config(ShadowConfig(r_start=(12.0, 40.0), r_end=(30.0, 76.0)), GEOM)


class TestSampleSectors:
    def test_deterministic_given_seed(self):
        a = sample_sectors(GEOM, np.random.default_rng(7))
        b = sample_sectors(GEOM, np.random.default_rng(7))
        assert a == b

    def test_seeds_decorrelate(self):
        a = sample_sectors(GEOM, np.random.default_rng(7), ShadowConfig(count=(2, 2)))
        b = sample_sectors(GEOM, np.random.default_rng(8), ShadowConfig(count=(2, 2)))
        assert a != b

    def test_count_range_is_inclusive(self):
        assert sample_sectors(GEOM, np.random.default_rng(0), ShadowConfig(count=(0, 0))) == []
        for seed in range(20):
            got = sample_sectors(GEOM, np.random.default_rng(seed), ShadowConfig(count=(2, 2)))
            assert len(got) == 2
        counts = {
            len(sample_sectors(GEOM, np.random.default_rng(s), ShadowConfig(count=(1, 3))))
            for s in range(200)
        }
        assert counts == {1, 2, 3}

    def test_sectors_respect_config_and_fan(self):
        cfg = ShadowConfig(count=(3, 3), theta_width=(0.1, 0.3), attenuation=(0.2, 0.4))
        for seed in range(50):
            for s in sample_sectors(GEOM, np.random.default_rng(seed), cfg):
                assert 0.1 <= s.theta_width <= 0.3
                assert 0.2 <= s.attenuation <= 0.4
                assert s.theta_center - s.theta_width / 2 >= GEOM.theta_min
                assert s.theta_center + s.theta_width / 2 <= GEOM.theta_max
                assert s.r_start == GEOM.r_min  # default: full radial span
                assert s.r_end == GEOM.r_max
                assert s.edge_softness == cfg.edge_softness

    def test_attenuation_draws_fill_their_range(self):
        # 10k draws from U[0.1, 0.5]: mean should sit at 0.3 within ~4 sigma
        cfg = ShadowConfig(count=(1, 1), attenuation=(0.1, 0.5))
        rng = np.random.default_rng(123)
        draws = np.array([sample_sectors(GEOM, rng, cfg)[0].attenuation for _ in range(10_000)])
        assert draws.min() >= 0.1 and draws.max() <= 0.5
        assert abs(draws.mean() - 0.3) < 0.02

    def test_radial_ranges_are_sampled_when_given(self):
        cfg = ShadowConfig(count=(1, 1), r_start=(12.0, 20.0), r_end=(60.0, 76.0))
        starts = set()
        for seed in range(30):
            (s,) = sample_sectors(GEOM, np.random.default_rng(seed), cfg)
            assert 12.0 <= s.r_start <= 20.0
            assert 60.0 <= s.r_end <= 76.0
            starts.add(s.r_start)
        assert len(starts) > 1


class TestRasterize:
    def test_no_sectors_is_all_ones(self):
        mask = rasterize_mask([], GEOM, SIZE, SIZE)
        assert mask.values.dtype == np.float64
        assert mask.values.shape == (SIZE, SIZE)
        assert (mask.values == 1.0).all()
        assert not mask.region().any()

    def test_shape_is_height_by_width(self):
        assert rasterize_mask([], GEOM, 48, 32).shape == (32, 48)

    def test_rejects_empty_extent(self):
        with pytest.raises(ValueError, match="extent"):
            rasterize_mask([], GEOM, 0, 32)

    def test_hard_sector_is_two_valued(self):
        sector = SectorSpec(theta_center=0.1, theta_width=0.25, r_start=12.0, r_end=76.0,
                            attenuation=0.3, edge_softness=0.0)
        mask = rasterize_mask([sector], GEOM, SIZE, SIZE)
        covered = sector_coverage(sector, GEOM, SIZE, SIZE)
        assert covered.any() and not covered.all()
        np.testing.assert_array_equal(mask.values[covered], 1.0 - (1.0 - 0.3))
        np.testing.assert_array_equal(mask.values[~covered], 1.0)
        assert mask.values[covered][0] == pytest.approx(0.3)

    def test_overlap_takes_the_darker_value(self):
        a = SectorSpec(theta_center=-0.05, theta_width=0.3, r_start=12.0, r_end=76.0,
                       attenuation=0.5)
        b = SectorSpec(theta_center=0.05, theta_width=0.3, r_start=12.0, r_end=76.0,
                       attenuation=0.3)
        both = rasterize_mask([a, b], GEOM, SIZE, SIZE)
        only_a = rasterize_mask([a], GEOM, SIZE, SIZE)
        only_b = rasterize_mask([b], GEOM, SIZE, SIZE)
        np.testing.assert_array_equal(both.values, np.minimum(only_a.values, only_b.values))
        overlap = (only_a.values < 1.0) & (only_b.values < 1.0)
        assert overlap.any()
        assert both.values[overlap] == pytest.approx(0.3)

    def test_order_does_not_matter(self):
        rng = np.random.default_rng(3)
        sectors = sample_sectors(GEOM, rng, ShadowConfig(count=(3, 3)))
        fwd = rasterize_mask(sectors, GEOM, SIZE, SIZE)
        rev = rasterize_mask(sectors[::-1], GEOM, SIZE, SIZE)
        np.testing.assert_array_equal(fwd.values, rev.values)

    def test_region_is_exactly_the_touched_pixels(self):
        for seed in range(10):
            sectors = sample_sectors(GEOM, np.random.default_rng(seed))
            mask = rasterize_mask(sectors, GEOM, SIZE, SIZE)
            want = np.zeros((SIZE, SIZE), dtype=bool)
            for s in sectors:
                want |= sector_coverage(s, GEOM, SIZE, SIZE)
            np.testing.assert_array_equal(mask.region(), want)

    def test_region_threshold_is_strict(self):
        values = np.ones((4, 4))
        assert not shadow_region(values).any()
        values[2, 1] = 0.999
        region = shadow_region(values)
        assert region[2, 1] and region.sum() == 1

    def test_soft_edge_ramps_between_dark_and_clear(self):
        sector = SectorSpec(theta_center=0.0, theta_width=0.2, r_start=12.0, r_end=76.0,
                            attenuation=0.3, edge_softness=0.05)
        values = rasterize_mask([sector], GEOM, SIZE, SIZE).values
        assert values.min() == pytest.approx(0.3)
        in_ramp = (values > 0.3 + 1e-6) & (values < 1.0 - 1e-6)
        assert in_ramp.any()
        # the ramp widens the footprint relative to the hard-edged sector
        hard = SectorSpec(theta_center=0.0, theta_width=0.2, r_start=12.0, r_end=76.0,
                          attenuation=0.3, edge_softness=0.0)
        hard_region = rasterize_mask([hard], GEOM, SIZE, SIZE).region()
        soft_region = shadow_region(values)
        assert (hard_region <= soft_region).all()
        assert soft_region.sum() > hard_region.sum()

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_mask_invariants(self, seed):
        sectors = sample_sectors(GEOM, np.random.default_rng(seed))
        mask = rasterize_mask(sectors, GEOM, SIZE, SIZE)
        assert (mask.values >= 0.0).all() and (mask.values <= 1.0).all()
        radius, _ = polar(GEOM, SIZE, SIZE)
        outside_band = (radius < GEOM.r_min) | (radius > GEOM.r_max)
        assert (mask.values[outside_band] == 1.0).all()
        assert not mask.region()[outside_band].any()


class TestInject:
    def test_matches_elementwise_product(self):
        x = Tensor(np.full((1, 1, 2, 2), 0.8, dtype=np.float32))
        mask = ShadowMask(np.full((2, 2), 0.25))
        out = inject(x, mask)
        np.testing.assert_allclose(out.data, 0.2, rtol=1e-6)

    def test_all_ones_mask_is_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(size=(2, 1, 8, 8)).astype(np.float32))
        out = inject(x, ShadowMask(np.ones((8, 8))))
        np.testing.assert_array_equal(out.data, x.data)

    def test_black_mask_zeroes_the_image(self):
        x = Tensor(np.full((1, 1, 4, 4), 0.7, dtype=np.float32))
        out = inject(x, ShadowMask(np.zeros((4, 4))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_broadcasts_over_batch(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(size=(3, 1, 6, 6)).astype(np.float32))
        mask = rasterize_mask(
            sample_sectors(GEOM, np.random.default_rng(2)), GEOM, 6, 6
        )
        out = inject(x, mask)
        for i in range(3):
            np.testing.assert_array_equal(
                out.data[i, 0], x.data[i, 0] * mask.values.astype(np.float32)
            )

    def test_accepts_raw_arrays(self):
        x = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
        out = inject(x, np.full((2, 2), 0.5))
        np.testing.assert_allclose(out.data, 0.5)

    def test_rejects_shape_mismatch(self):
        x = Tensor(np.ones((1, 1, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="shape"):
            inject(x, ShadowMask(np.ones((5, 5))))

    def test_gradients_flow_to_the_image(self):
        x = Tensor(np.full((1, 1, 3, 3), 0.5, dtype=np.float32), requires_grad=True)
        mask = np.linspace(0.1, 0.9, 9).reshape(3, 3)
        sum_all(inject(x, mask)).backward()
        np.testing.assert_allclose(x.grad[0, 0], mask.astype(np.float32), rtol=1e-6)


class TestInsideFan:
    def test_known_pixels(self):
        fan = inside_fan(GEOM, SIZE, SIZE)
        assert fan.shape == (SIZE, SIZE)
        assert fan[40, 31]  # straight below the apex, mid-depth
        assert not fan[0, 0]  # image corner, far outside the angular span
        assert not fan[0, 31]  # just below the apex, closer than r_min
        assert 0.2 < fan.mean() < 0.9

    def test_matches_full_span_sector(self):
        # a hard-edged sector spanning the whole fan covers exactly the fan
        span = GEOM.theta_max - GEOM.theta_min
        sector = SectorSpec(theta_center=0.0, theta_width=span, r_start=GEOM.r_min,
                            r_end=GEOM.r_max, attenuation=0.0, edge_softness=0.0)
        region = rasterize_mask([sector], GEOM, SIZE, SIZE).region()
        np.testing.assert_array_equal(region, inside_fan(GEOM, SIZE, SIZE))


class TestJson:
    def test_round_trip(self, tmp_path):
        sectors = sample_sectors(GEOM, np.random.default_rng(11), ShadowConfig(count=(2, 2)))
        path = tmp_path / "sectors.json"
        sectors_to_json(sectors, path)
        assert sectors_from_json(path) == sectors

    def test_empty_list(self, tmp_path):
        path = tmp_path / "none.json"
        sectors_to_json([], path)
        assert sectors_from_json(path) == []
