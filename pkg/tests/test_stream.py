import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idsprites.errors import BadMagicError, ChecksumError, ConfigError, TruncatedError, VersionError
from idsprites.raster import Latents, fits_frame
from idsprites.stream import (KIND_PIXELS, KIND_RECIPE, ClassBalancedReservoir, FactorGrid, StreamConfig,
                              TestAccumulator, accumulate_test, decode_dataset, encode_dataset, make_task, read_dataset,
                              split, split_sizes, task_split, write_dataset)


def test_ten_shape_task_size():
    cfg = StreamConfig(num_tasks=1, shapes_per_task=10, grid=FactorGrid(8, 8, 8, 8), split_ratios=(0.98, 0.01, 0.01))
    ds = make_task(cfg, 0)
    assert len(ds) == 40_960
    assert [len(p) for p in task_split(cfg, ds)] == [40_140, 410, 410]


def test_split_sizes():
    assert split_sizes(40_960, (0.98, 0.01, 0.01)) == (40_140, 410, 410)
    assert split_sizes(405, (0.8, 0.1, 0.1)) == (323, 41, 41)
    assert sum(split_sizes(7, (0.5, 0.25, 0.25))) == 7


def test_split_disjoint_and_seeded(tiny_stream):
    ds = make_task(tiny_stream, 0)
    tr, va, te = split(ds, (0.5, 0.25, 0.25), seed=3)
    keys = [set(map(tuple, np.column_stack([p.labels, p.factors]).tolist())) for p in (tr, va, te)]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    assert sum(map(len, keys)) == len(ds)
    tr2, _, _ = split(ds, (0.5, 0.25, 0.25), seed=3)
    assert tr == tr2


def test_task_contents(tiny_stream):
    ds = make_task(tiny_stream, 1)
    assert ds.class_ids == [3, 4, 5]
    assert len(ds) == 3 * 16
    assert sorted(set(ds.labels.tolist())) == [3, 4, 5]
    for m in range(len(ds)):
        assert fits_frame(ds.shape_of(ds.labels[m]), ds.latents(m))


def test_tasks_regenerate_independently(tiny_stream):
    a = make_task(tiny_stream, 2)
    b = make_task(tiny_stream, 2)
    assert a == b
    other = StreamConfig(num_tasks=3, shapes_per_task=3, grid=FactorGrid(2, 2, 2, 2), resolution=32,
                         split_ratios=(0.5, 0.25, 0.25), master_seed=1)
    assert make_task(other, 2).seeds != a.seeds


def test_grid_values():
    g = FactorGrid(3, 4, 3, 3)
    s, o, x, y = g.values()
    assert np.allclose(s, [0.5, 0.7, 0.9])
    assert np.allclose(o, [0, np.pi / 2, np.pi, 1.5 * np.pi])
    assert g.product().shape == (108, 5)
    assert FactorGrid.from_dict(g.to_dict()) == g


def test_config_round_trip_and_validation():
    cfg = StreamConfig(num_tasks=4)
    assert StreamConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        StreamConfig(split_ratios=(0.5, 0.2, 0.2))
    with pytest.raises(ConfigError):
        StreamConfig(num_tasks=0)


def test_images_independent_of_threads(tiny_stream):
    ds = make_task(tiny_stream, 0)
    assert np.array_equal(ds.images(1), ds.images(3))


def _round_robin(capacity, available):
    """Independent oracle: hand out one slot per class per round, lowest ids first."""
    got = {c: 0 for c in available}
    left = capacity
    while left:
        progressed = False
        for c in sorted(available):
            if left and got[c] < available[c]:
                got[c] += 1
                left -= 1
                progressed = True
        if not progressed:
            break
    return got


@given(st.integers(1, 60), st.dictionaries(st.integers(0, 30), st.integers(1, 20), min_size=1, max_size=12))
def test_quota_matches_round_robin(capacity, available):
    res = ClassBalancedReservoir(capacity)
    if sum(available.values()) <= capacity:
        return
    assert res.quotas(available) == _round_robin(capacity, available)


def test_accumulator_below_cap():
    acc = ClassBalancedReservoir(100)
    acc.add([0] * 20 + [1] * 20, range(40))
    acc.add([2] * 20 + [3] * 20, range(40))
    assert len(acc) == 80


def test_accumulator_quota_25_classes():
    acc = ClassBalancedReservoir(100, seed=4)
    for c in range(25):
        acc.add([c] * 6, range(6))
    assert set(acc.counts().values()) == {4}


@given(st.integers(0, 2**32), st.lists(st.integers(1, 15), min_size=1, max_size=15), st.integers(5, 40))
@settings(max_examples=50)
def test_reservoir_balance_invariant(seed, sizes, cap):
    res = ClassBalancedReservoir(cap, seed)
    for c, n in enumerate(sizes):
        res.add([c] * n, range(n))
        assert len(res) <= cap
        counts = res.counts()
        full = [v for k, v in counts.items() if v < sizes[k]]
        if full and len(res) == cap:
            assert max(counts.values()) - min(full) <= 1


def test_accumulate_rejects_repeat(tiny_stream):
    acc = TestAccumulator(100)
    _, _, te = task_split(tiny_stream, make_task(tiny_stream, 0))
    accumulate_test(acc, te)
    with pytest.raises(ConfigError):
        accumulate_test(acc, te)
    labels, factors = acc.arrays()
    assert len(labels) == len(te) and factors.shape == (len(te), 5)


@pytest.mark.parametrize("kind", [KIND_RECIPE, KIND_PIXELS])
def test_dataset_round_trip(tmp_path, tiny_stream, kind):
    ds = make_task(tiny_stream, 1)
    if kind == KIND_PIXELS:
        ds = ds.materialize()
    path = write_dataset(ds, tmp_path / "t.idsp", kind)
    back = read_dataset(path)
    assert back == ds
    assert np.array_equal(back.images(), ds.images())
    assert (tmp_path / "t.idsp.json").exists()


def test_dataset_corruption(tiny_stream):
    buf = encode_dataset(make_task(tiny_stream, 0))
    with pytest.raises(BadMagicError):
        decode_dataset(b"XXXX" + buf[4:])
    with pytest.raises(VersionError):
        decode_dataset(buf[:4] + struct.pack("<H", 9) + buf[6:])
    with pytest.raises(TruncatedError):
        decode_dataset(buf[:-10])
    bad = bytearray(buf)
    bad[-1] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_dataset(bytes(bad))
    with pytest.raises(TruncatedError):
        decode_dataset(buf[:5])


def test_crc_covers_payload(tiny_stream):
    buf = encode_dataset(make_task(tiny_stream, 0))
    head = struct.calcsize("<4sHB") + struct.calcsize("<6I4I7dQI")
    crc = struct.unpack_from("<I", buf, head - 4)[0]
    assert crc == zlib.crc32(buf[head:])


def test_exemplar_is_canonical(tiny_stream):
    from idsprites.raster import render

    ds = make_task(tiny_stream, 0)
    ex = ds.exemplars()
    assert np.array_equal(ex[1], render(ds.shapes[1], Latents(), 32, 2))
