from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causemap.core import Image, MutantSpec, Partition, Region
from causemap.mutagen import (
    RegionTooSmallError,
    apply_pixel_mask,
    enumerate_mutants,
    materialize,
    sample_partition,
)

from conftest import gray_image


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def test_two_by_two_has_single_split():
    p = sample_partition(Region(0, 0, 2, 2), rng_for(0))
    assert (p.split_row, p.split_col) == (1, 1)
    assert all(child.area == 1 for child in p.children)


def test_region_too_small():
    with pytest.raises(RegionTooSmallError):
        sample_partition(Region(0, 0, 1, 8), rng_for(0))
    with pytest.raises(RegionTooSmallError):
        sample_partition(Region(0, 0, 8, 1), rng_for(0))


def test_sample_partition_deterministic():
    a = sample_partition(Region(0, 0, 9, 7), rng_for(123))
    b = sample_partition(Region(0, 0, 9, 7), rng_for(123))
    assert a == b


def test_sample_partition_consumes_exactly_two_draws():
    region = Region(0, 0, 9, 7)
    rng = rng_for(99)
    sample_partition(region, rng)
    probe_after = rng.integers(0, 2**31)

    ref = rng_for(99)
    ref.integers(1, region.height)
    ref.integers(1, region.width)
    assert probe_after == ref.integers(0, 2**31)


def test_sample_partition_splits_are_interior():
    rng = rng_for(7)
    region = Region(3, 2, 5, 6)
    for _ in range(200):
        p = sample_partition(region, rng)
        assert 1 <= p.split_row <= 4
        assert 1 <= p.split_col <= 5
        assert sum(c.area for c in p.children) == region.area


def test_sample_partition_covers_every_interior_split():
    # uniform draws must reach every interior offset eventually
    rng = rng_for(11)
    region = Region(0, 0, 4, 4)
    seen = set()
    for _ in range(300):
        p = sample_partition(region, rng)
        seen.add((p.split_row, p.split_col))
    assert {(r, c) for r in (1, 2, 3) for c in (1, 2, 3)} <= seen


def test_enumerate_mutants_is_the_14_proper_subsets():
    p = Partition(Region(0, 0, 8, 8), 4, 4)
    bg = frozenset({Region(10, 10, 2, 2)})
    specs = enumerate_mutants(p, bg)
    assert len(specs) == 14
    assert specs[0].masked == frozenset({0})
    assert specs[-1].masked == frozenset({1, 2, 3})
    seen = [spec.masked for spec in specs]
    assert len(set(seen)) == 14
    for spec in specs:
        assert 1 <= spec.diff <= 3
        assert spec.background == bg
    # ascending bit-pattern order
    patterns = [sum(1 << i for i in spec.masked) for spec in specs]
    assert patterns == list(range(1, 15))


def test_enumerate_mutants_never_holds_children():
    # holding happens at scope level; every child stays maskable here
    p = Partition(Region(0, 0, 4, 4), 2, 2)
    assert all(spec.held == frozenset() for spec in enumerate_mutants(p))


def masked_by_loop(x: Image, spec: MutantSpec, color: tuple[float, ...]) -> np.ndarray:
    # independent pixel-loop oracle for materialize
    out = x.data.copy()
    regions = [spec.partition.children[i] for i in spec.masked] + list(spec.background)
    for r in range(x.height):
        for c in range(x.width):
            if any(reg.contains_pixel(r, c) for reg in regions):
                out[r, c, :] = color
    return out


def test_materialize_against_pixel_loop():
    x = gray_image(4, 4, 0.5)
    p = Partition(Region(0, 0, 4, 4), 2, 2)
    spec = MutantSpec(p, frozenset({0}))
    got = materialize(x, spec, (0.0,))
    assert np.array_equal(got.data, masked_by_loop(x, spec, (0.0,)))
    # rows 0-1, cols 0-1 masked; everything else untouched
    assert got.data[:2, :2, 0].tolist() == [[0.0, 0.0], [0.0, 0.0]]
    assert (got.data[2:, :, 0] == 0.5).all()
    assert (got.data[:2, 2:, 0] == 0.5).all()
    # source image not modified
    assert (x.data == 0.5).all()


@given(
    seed=st.integers(0, 2**32 - 1),
    bits=st.integers(1, 14),
    hold=st.booleans(),
)
@settings(max_examples=60)
def test_materialize_touches_exactly_masked_union(seed, bits, hold):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    h = int(rng.integers(2, 9))
    w = int(rng.integers(2, 9))
    x = Image.from_array(rng.uniform(0.2, 1.0, size=(h, w, 1)))
    p = sample_partition(Region(0, 0, h, w), rng)
    masked = frozenset(i for i in range(4) if bits >> i & 1)
    held = frozenset({3}) - masked if hold else frozenset()
    spec = MutantSpec(p, masked, held=held)
    got = materialize(x, spec, (0.0,))
    expect = masked_by_loop(x, spec, (0.0,))
    assert np.array_equal(got.data, expect)
    again = materialize(got, spec, (0.0,))
    assert np.array_equal(again.data, got.data)  # idempotent


def test_materialize_multichannel_color():
    x = Image.from_array(np.full((4, 4, 3), 0.5))
    p = Partition(Region(0, 0, 4, 4), 1, 1)
    got = materialize(x, MutantSpec(p, frozenset({3})), (0.1, 0.2, 0.3))
    assert got.data[3, 3].tolist() == [0.1, 0.2, 0.3]
    assert got.data[0, 0].tolist() == [0.5, 0.5, 0.5]


def test_materialize_rejects_out_of_bounds_background():
    x = gray_image(4, 4)
    p = Partition(Region(0, 0, 4, 4), 2, 2)
    spec = MutantSpec(p, frozenset({0}), background=frozenset({Region(3, 3, 4, 4)}))
    with pytest.raises(Exception):
        materialize(x, spec, (0.0,))


def test_apply_pixel_mask():
    x = gray_image(3, 3, 0.8)
    keep = np.zeros((3, 3), dtype=bool)
    keep[1, 2] = True
    out = apply_pixel_mask(x, keep, (0.0,))
    assert out[1, 2, 0] == 0.8
    assert out.sum() == 0.8
