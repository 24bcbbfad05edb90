"""Driving semimartingale paths ``X = (X^0, ..., X^k)`` on a uniform grid.

Increments are stored as an array of shape ``(N, *batch, k+1)``; batched
paths (one per Monte Carlo trial) share the time channel.  Randomness comes
from numpy's counter-based Philox generator keyed by a seed sequence, so a
trial's path depends only on ``(master_seed, trial_index)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

TIME, BROWNIAN, CUSTOM = "time", "brownian", "custom"

MAGIC = b"LPSD"
FORMAT_VERSION = 1
# magic, version u32, N u64, k+1 u32, reserved u32 -> 24 bytes
_HEADER = struct.Struct("<4sIQII")


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class DrivingPath:
    t0: float
    h: float
    increments: np.ndarray
    kinds: tuple

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if not self.h > 0:
            raise PathError(f"step size must be positive, got {self.h}")
        if inc.ndim < 2:
            raise PathError("increments must have shape (N, ..., k+1)")
        if len(self.kinds) != inc.shape[-1]:
            raise PathError("one channel kind per increment column required")
        if not np.all(np.isfinite(inc)):
            raise PathError("increments must be finite")
        for j, kind in enumerate(self.kinds):
            if kind == TIME and not np.all(inc[..., j] == self.h):
                raise PathError(f"time channel {j} must have increments equal to h")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def N(self):
        return self.increments.shape[0]

    @property
    def k(self):
        return self.increments.shape[-1] - 1

    @property
    def batch_shape(self):
        return self.increments.shape[1:-1]

    @property
    def T(self):
        return self.N * self.h

    @property
    def times(self):
        return self.t0 + self.h * np.arange(self.N + 1)

    def cumulative(self):
        """Path values ``X_t - X_0`` at the grid times, shape ``(N+1, *batch, k+1)``."""
        zero = np.zeros((1,) + self.increments.shape[1:])
        return np.concatenate([zero, np.cumsum(self.increments, axis=0)], axis=0)

    @classmethod
    def custom(cls, increments, h, t0=0.0, kinds=None):
        inc = np.asarray(increments, dtype=float)
        if kinds is None:
            kinds = (CUSTOM,) * inc.shape[-1]
        return cls(t0, h, inc, tuple(kinds))


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)


def trial_seed(master_seed, trial):
    """Seed sequence for trial ``trial``; identical to ``spawn(...)[trial]``."""
    master = _seed_sequence(master_seed)
    return np.random.SeedSequence(master.entropy, spawn_key=master.spawn_key + (int(trial),))


def make_time_brownian(seed, h, N, k, t0=0.0):
    """Channel 0 is time, channels 1..k are independent N(0, h) increments."""
    if not h > 0:
        raise PathError(f"step size must be positive, got {h}")
    if int(N) < 1:
        raise PathError(f"step count must be at least 1, got {N}")
    if int(k) < 0:
        raise PathError(f"noise channel count must be non-negative, got {k}")
    N, k = int(N), int(k)
    rng = np.random.Generator(np.random.Philox(_seed_sequence(seed)))
    inc = np.empty((N, k + 1))
    inc[:, 0] = h
    inc[:, 1:] = rng.standard_normal((N, k)) * np.sqrt(h)
    return DrivingPath(t0, h, inc, (TIME,) + (BROWNIAN,) * k)


def make_trial_paths(master_seed, trials, h, N, k, first=0):
    """Batch of per-trial paths, increments shape ``(N, trials, k+1)``."""
    paths = [make_time_brownian(trial_seed(master_seed, first + i), h, N, k) for i in range(trials)]
    return stack(paths)


def stack(paths):
    """Combine unbatched paths on the same grid into one batched path."""
    first = paths[0]
    for p in paths[1:]:
        if p.h != first.h or p.N != first.N or p.kinds != first.kinds or p.t0 != first.t0:
            raise PathError("paths must share grid and channel kinds")
    inc = np.stack([p.increments for p in paths], axis=1)
    return DrivingPath(first.t0, first.h, inc, first.kinds)


def coarsen(path, factor):
    """Sum blocks of ``factor`` fine increments; Brownian paths stay coupled."""
    factor = int(factor)
    if factor < 1 or path.N % factor:
        raise PathError(f"factor {factor} does not divide N={path.N}")
    if factor == 1:
        return path
    shape = (path.N // factor, factor) + path.increments.shape[1:]
    inc = path.increments.reshape(shape).sum(axis=1)
    h = path.h * factor
    for j, kind in enumerate(path.kinds):
        if kind == TIME:
            inc[..., j] = h
    return DrivingPath(path.t0, h, inc, path.kinds)


def zero_noise(path):
    """Zero every channel except channel 0."""
    inc = np.array(path.increments, copy=True)
    inc[..., 1:] = 0.0
    kinds = path.kinds[:1] + tuple(CUSTOM if kd == BROWNIAN else kd for kd in path.kinds[1:])
    return replace(path, increments=inc, kinds=kinds)


def save_increments(path, fh):
    """Write an unbatched increment matrix in the LPSD little-endian format."""
    inc = np.asarray(path.increments if isinstance(path, DrivingPath) else path, dtype="<f8")
    if inc.ndim != 2:
        raise PathError("only unbatched (N, k+1) increment matrices can be saved")
    N, cols = inc.shape
    close = False
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        fh, close = open(fh, "wb"), True
    try:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, N, cols, 0))
        fh.write(np.ascontiguousarray(inc).tobytes(order="C"))
    finally:
        if close:
            fh.close()


def load_increments(fh):
    """Inverse of :func:`save_increments`; returns the ``(N, k+1)`` matrix."""
    close = False
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        fh, close = open(fh, "rb"), True
    try:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise PathError("truncated header")
        magic, version, N, cols, _ = _HEADER.unpack(header)
        if magic != MAGIC:
            raise PathError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise PathError(f"unsupported format version {version}")
        data = fh.read(8 * N * cols)
        if len(data) != 8 * N * cols:
            raise PathError("truncated increment data")
    finally:
        if close:
            fh.close()
    return np.frombuffer(data, dtype="<f8").reshape(N, cols).astype(float)
