"""Deterministic geometric channel synthesis over a UE grid.

Replaces ray-traced data with a LOS + single-bounce scatterer model whose
channels are a pure function of UE position, so the two mappings the
position-aided pipelines rely on (channel -> position, position -> channel
characteristics) hold by construction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgument

_MAGIC = b"PCE1"
_VERSION = 1


@dataclass
class ScenarioConfig:
    bs_positions: list          # 2-D coords (m); index 0 = main BS, 1 = side BS
    antenna_count: int
    wavelength: float
    tx_power: float
    scatterers: list
    grid_origin: tuple
    grid_rows: int
    grid_cols: int
    grid_spacing: float
    ue_height: float = 1.5
    bs_height: float = 6.0
    env_seed: int = 0
    reflection_loss: float = 0.3
    max_paths: int = 10
    split_fractions: tuple = (0.85, 0.05, 0.10)

    def __post_init__(self):
        self.bs_positions = [np.asarray(p, dtype=np.float64) for p in self.bs_positions]
        self.scatterers = [np.asarray(s, dtype=np.float64) for s in self.scatterers]
        self.grid_origin = np.asarray(self.grid_origin, dtype=np.float64)
        self.validate()

    def validate(self):
        if len(self.bs_positions) < 2:
            raise InvalidArgument("need at least 2 BS positions (main + side)")
        for i, a in enumerate(self.bs_positions):
            for b in self.bs_positions[i + 1:]:
                if np.array_equal(a, b):
                    raise InvalidArgument("bs_positions must be distinct")
        if self.antenna_count < 1:
            raise InvalidArgument(f"antenna_count must be >= 1, got {self.antenna_count}")
        if self.grid_spacing <= 0:
            raise InvalidArgument(f"grid_spacing must be positive, got {self.grid_spacing}")
        if self.grid_rows * self.grid_cols < 1:
            raise InvalidArgument("grid must contain at least one point")
        if self.wavelength <= 0:
            raise InvalidArgument("wavelength must be positive")
        if self.max_paths < 1:
            raise InvalidArgument("max_paths must be >= 1")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise InvalidArgument(f"split_fractions must be nonnegative and sum to 1")

    @property
    def grid_size(self):
        return self.grid_rows * self.grid_cols

    def grid_positions(self):
        """All UE positions, row-major (row index varies slowest)."""
        r, c = np.divmod(np.arange(self.grid_size), self.grid_cols)
        return self.grid_origin + self.grid_spacing * np.stack([c, r], axis=1)

    def grid_center(self):
        r = (self.grid_rows - 1) / 2.0
        c = (self.grid_cols - 1) / 2.0
        return self.grid_origin + self.grid_spacing * np.array([c, r])

    def grid_diagonal(self):
        return self.grid_spacing * np.hypot(self.grid_rows - 1, self.grid_cols - 1)

    @classmethod
    def from_dict(cls, d):
        grid = d["grid"]
        return cls(
            bs_positions=d["bs_positions"],
            antenna_count=int(d["antenna_count"]),
            wavelength=float(d["wavelength"]),
            tx_power=float(d["tx_power"]),
            scatterers=d.get("scatterers", []),
            grid_origin=grid["origin"],
            grid_rows=int(grid["rows"]),
            grid_cols=int(grid["cols"]),
            grid_spacing=float(grid["spacing"]),
            ue_height=float(d.get("ue_height", 1.5)),
            bs_height=float(d.get("bs_height", 6.0)),
            env_seed=int(d.get("env_seed", 0)),
            reflection_loss=float(d.get("reflection_loss", 0.3)),
            max_paths=int(d.get("max_paths", 10)),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class PropagationPath:
    angle: float          # departure angle, radians in (-pi/2, pi/2)
    gain: complex

    def __post_init__(self):
        if not np.isfinite(self.angle):
            raise InvalidArgument("path angle must be finite")
        if abs(self.gain) <= 0:
            raise InvalidArgument("path amplitude must be positive")


@dataclass
class ChannelSample:
    position: np.ndarray    # (2,)
    h_main: np.ndarray      # complex (N,)
    h_side: np.ndarray      # complex (N,)


@dataclass
class Dataset:
    samples: list
    split: dict             # name -> sorted index array; disjoint, covering
    norm_scale: float
    config: ScenarioConfig = None

    @property
    def n_ant(self):
        return len(self.samples[0].h_main)

    def split_samples(self, name):
        if name not in self.split:
            raise InvalidArgument(f"unknown split '{name}'")
        return [self.samples[i] for i in self.split[name]]

    def channels(self, name, which):
        """Stack one split's channels as a complex (S, N) matrix."""
        ss = self.split_samples(name)
        key = {"main": "h_main", "side": "h_side"}[which]
        return np.stack([getattr(s, key) for s in ss])

    def positions(self, name):
        return np.stack([s.position for s in self.split_samples(name)])


def steering_vector(theta, n_ant):
    """Half-wavelength ULA response: entry k = exp(j*pi*k*sin(theta))."""
    if not np.isfinite(theta):
        raise InvalidArgument("theta must be finite")
    if n_ant < 1:
        raise InvalidArgument("antenna count must be >= 1")
    return np.exp(1j * np.pi * np.arange(n_ant) * np.sin(theta))


def _departure_angle(bs_xy, boresight, target_xy):
    d = target_xy - bs_xy
    forward = float(d @ boresight)
    lateral = float(d[0] * boresight[1] - d[1] * boresight[0])
    return np.arctan2(lateral, forward)


def synthesize_paths(config, bs_index, position):
    """LOS plus one single-bounce path per scatterer, strongest max_paths kept.

    Amplitudes follow a 1/d law with the configured reflection loss on
    bounced paths; phases are -2*pi*(path length)/wavelength. The array
    boresight points from the BS toward the grid center; targets behind the
    array (|angle| >= pi/2) are unreachable.
    """
    if bs_index >= len(config.bs_positions):
        raise InvalidArgument(f"bs_index {bs_index} out of range")
    bs = config.bs_positions[bs_index]
    position = np.asarray(position, dtype=np.float64)
    dz = config.bs_height - config.ue_height
    lam = config.wavelength
    bore = config.grid_center() - bs
    bn = np.linalg.norm(bore)
    if bn == 0:
        raise InvalidArgument("BS coincides with grid center; boresight undefined")
    bore = bore / bn

    d_h = np.linalg.norm(position - bs)
    if d_h == 0:
        raise InvalidArgument("UE coincides with BS (zero distance)")
    d_los = np.hypot(d_h, dz)
    theta = _departure_angle(bs, bore, position)
    if abs(theta) >= np.pi / 2:
        raise InvalidArgument("UE lies behind the BS array (LOS angle out of range)")
    amp = lam / (4.0 * np.pi * d_los)
    paths = [PropagationPath(theta, amp * np.exp(-2j * np.pi * (d_los / lam % 1.0)))]

    for sc in config.scatterers:
        if np.array_equal(sc, bs) or np.array_equal(sc, position):
            continue
        th = _departure_angle(bs, bore, sc)
        if abs(th) >= np.pi / 2:
            continue
        d1 = np.hypot(np.linalg.norm(sc - bs), dz)
        d2 = np.linalg.norm(position - sc)
        total = d1 + d2
        a = config.reflection_loss * lam / (4.0 * np.pi * total)
        paths.append(PropagationPath(th, a * np.exp(-2j * np.pi * (total / lam % 1.0))))

    if len(paths) > config.max_paths:
        order = np.argsort([-abs(p.gain) for p in paths], kind="stable")
        keep = set(order[: config.max_paths])
        paths = [p for i, p in enumerate(paths) if i in keep]
    return paths


def channel_from_paths(paths, n_ant):
    """Narrowband superposition: sum of gain-weighted steering vectors."""
    if not paths:
        raise InvalidArgument("path list is empty")
    h = np.zeros(n_ant, dtype=np.complex128)
    for p in paths:
        h += p.gain * steering_vector(p.angle, n_ant)
    return h


def channels_for_position(config, position):
    """Unnormalized (h_main, h_side) for an arbitrary UE position."""
    n = config.antenna_count
    hm = channel_from_paths(synthesize_paths(config, 0, position), n)
    hs = channel_from_paths(synthesize_paths(config, 1, position), n)
    return hm, hs


def _split_indices(config):
    n = config.grid_size
    f_train, f_val, _ = config.split_fractions
    n_train = int(np.floor(f_train * n))
    n_val = int(np.floor(f_val * n))
    order = np.random.default_rng(config.env_seed).permutation(n)
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }


def generate_dataset(config):
    """One sample per grid point (row-major), normalized so the training-set
    average per-antenna power of the main channel is 1."""
    positions = config.grid_positions()
    raw = [channels_for_position(config, p) for p in positions]
    split = _split_indices(config)
    train_main = np.stack([raw[i][0] for i in split["train"]])
    mean_power = np.mean(np.abs(train_main) ** 2)
    if mean_power <= 0:
        raise InvalidArgument("degenerate scenario: zero average channel power")
    scale = 1.0 / np.sqrt(mean_power)
    samples = [
        ChannelSample(p, hm * scale, hs * scale)
        for p, (hm, hs) in zip(positions, raw)
    ]
    return Dataset(samples=samples, split=split, norm_scale=scale, config=config)


def angular_transform(h):
    """Entrywise magnitude of the unitary-DFT image F^H h (energy preserving)."""
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim == 1:
        n = h.shape[0]
    else:
        n = h.shape[-1]
    if n < 1:
        raise InvalidArgument("empty channel vector")
    return np.abs(np.fft.ifft(h, axis=-1) * np.sqrt(n))


# ---------------------------------------------------------------------------
# Dataset file format (magic "PCE1")
# ---------------------------------------------------------------------------

_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_IDS.items()}


def _interleave(h):
    out = np.empty(2 * h.size, dtype="<f4")
    out[0::2] = h.real
    out[1::2] = h.imag
    return out


def save_dataset(dataset, path):
    n = dataset.n_ant
    count = len(dataset.samples)
    ids = np.zeros(count, dtype=np.uint8)
    for name, idx in dataset.split.items():
        ids[idx] = _SPLIT_IDS[name]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIQ", _VERSION, n, count))
        f.write(ids.tobytes())
        for s in dataset.samples:
            f.write(np.asarray(s.position, dtype="<f4").tobytes())
            f.write(_interleave(s.h_main).tobytes())
            f.write(_interleave(s.h_side).tobytes())
        f.write(struct.pack("<d", dataset.norm_scale))


def load_dataset(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"bad dataset magic {data[:4]!r}", offset=0)
    if len(data) < 20:
        raise FormatError("truncated dataset header", offset=len(data))
    version, n, count = struct.unpack_from("<IIQ", data, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=4)
    per_sample = 4 * (2 + 4 * n)
    expected = 20 + count + count * per_sample + 8
    if len(data) != expected:
        raise FormatError(
            f"dataset file size mismatch: expected {expected} bytes, got {len(data)}",
            offset=min(expected, len(data)))
    ids = np.frombuffer(data, dtype=np.uint8, count=count, offset=20)
    pos = 20 + count
    samples = []
    for _ in range(count):
        rec = np.frombuffer(data, dtype="<f4", count=2 + 4 * n, offset=pos)
        pos += per_sample
        p = rec[:2].astype(np.float64)
        hm = rec[2:2 + 2 * n].astype(np.float64)
        hs = rec[2 + 2 * n:].astype(np.float64)
        samples.append(ChannelSample(
            position=p,
            h_main=hm[0::2] + 1j * hm[1::2],
            h_side=hs[0::2] + 1j * hs[1::2],
        ))
    (norm_scale,) = struct.unpack_from("<d", data, pos)
    split = {
        name: np.flatnonzero(ids == sid).astype(np.int64)
        for sid, name in _SPLIT_NAMES.items()
    }
    return Dataset(samples=samples, split=split, norm_scale=norm_scale)
