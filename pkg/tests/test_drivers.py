import io

import numpy as np
import pytest

from lpstoch.drivers import (
    BROWNIAN,
    TIME,
    DrivingPath,
    PathError,
    coarsen,
    load_increments,
    make_time_brownian,
    make_trial_paths,
    save_increments,
    stack,
    trial_seed,
    zero_noise,
)


def test_time_only_path():
    p = make_time_brownian(0, 0.01, 10, 0)
    assert p.increments.shape == (10, 1)
    assert np.all(p.increments == 0.01)
    assert p.kinds == (TIME,)


def test_moments():
    p = make_time_brownian(123, 1e-3, 100_000, 1)
    dw = p.increments[:, 1]
    assert abs(dw.var() / 1e-3 - 1) < 0.05
    assert abs(np.mean(dw ** 4) / (3e-6) - 1) < 0.10


def test_reproducible():
    a = make_time_brownian(7, 1e-3, 100, 3)
    b = make_time_brownian(7, 1e-3, 100, 3)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, make_time_brownian(8, 1e-3, 100, 3).increments)


@pytest.mark.parametrize("h,N,k", [(0.0, 10, 1), (-1.0, 10, 1), (0.1, 0, 1), (0.1, 10, -1)])
def test_rejects_bad_arguments(h, N, k):
    with pytest.raises(PathError):
        make_time_brownian(0, h, N, k)


def test_time_channel_invariant_enforced():
    inc = np.full((4, 2), 0.1)
    inc[2, 0] = 0.2
    with pytest.raises(PathError):
        DrivingPath(0.0, 0.1, inc, (TIME, BROWNIAN))


def test_increments_read_only():
    p = make_time_brownian(0, 0.1, 5, 1)
    with pytest.raises(ValueError):
        p.increments[0, 0] = 1.0


def test_trial_seeds_match_spawn():
    master = np.random.SeedSequence(99)
    spawned = master.spawn(5)
    for i, child in enumerate(spawned):
        assert trial_seed(99, i).generate_state(4).tolist() == child.generate_state(4).tolist()


def test_trial_paths_independent_of_batching():
    whole = make_trial_paths(5, 6, 1e-2, 20, 2)
    part = make_trial_paths(5, 3, 1e-2, 20, 2, first=3)
    assert np.array_equal(whole.increments[:, 3:], part.increments)
    single = make_time_brownian(trial_seed(5, 4), 1e-2, 20, 2)
    assert np.array_equal(whole.increments[:, 4], single.increments)


def test_coarsen():
    p = make_time_brownian(1, 1e-3, 64, 2)
    assert coarsen(p, 1) is p
    one = coarsen(p, 64)
    assert one.N == 1 and one.h == pytest.approx(0.064)
    np.testing.assert_allclose(one.increments[0, 1:], p.increments[:, 1:].sum(axis=0), atol=1e-13)
    c = coarsen(p, 4)
    assert c.increments[0, 0] == 4e-3
    np.testing.assert_allclose(c.increments.sum(axis=0)[1:], p.increments.sum(axis=0)[1:], atol=1e-13)
    with pytest.raises(PathError):
        coarsen(p, 3)


def test_zero_noise():
    p = make_time_brownian(2, 0.1, 10, 3)
    z = zero_noise(p)
    assert np.all(z.increments[:, 1:] == 0)
    assert np.array_equal(z.increments[:, 0], p.increments[:, 0])
    assert np.array_equal(zero_noise(z).increments, z.increments)
    t = make_time_brownian(2, 0.1, 10, 0)
    assert np.array_equal(zero_noise(t).increments, t.increments)


def test_stack_rejects_mismatched_grids():
    with pytest.raises(PathError):
        stack([make_time_brownian(0, 0.1, 10, 1), make_time_brownian(0, 0.2, 10, 1)])


def test_binary_round_trip(tmp_path):
    p = make_time_brownian(3, 1e-2, 17, 2)
    target = tmp_path / "inc.lpsd"
    save_increments(p, target)
    raw = target.read_bytes()
    assert raw[:4] == b"LPSD" and len(raw) == 24 + 8 * 17 * 3
    assert int.from_bytes(raw[8:16], "little") == 17
    assert int.from_bytes(raw[16:20], "little") == 3
    assert np.array_equal(load_increments(target), p.increments)


def test_binary_rejects_bad_magic():
    buf = io.BytesIO(b"XXXX" + bytes(20))
    with pytest.raises(PathError):
        load_increments(buf)


def test_cumulative_and_times():
    p = make_time_brownian(4, 0.5, 4, 1)
    assert np.allclose(p.times, [0, 0.5, 1.0, 1.5, 2.0])
    assert p.cumulative()[-1, 0] == pytest.approx(2.0)
