"""Channel-to-position bridges: supervised localization, label-free charting
via the main-to-side characteristics mapping, a vanilla autoencoder control,
and chart/localization quality metrics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InvalidArgument
from .e2e import _mse_grad, residual_stack
from .nn import (Activation, AdamState, Dense, NetworkGraph, adam_step,
                 glorot_init)


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 512
    lr: float = 0.001
    seed: int = 0


@dataclass
class PositionScaler:
    """Affine map between meters and the standardized training frame:
    subtract the grid centroid, divide by half the grid diagonal."""
    center: np.ndarray
    half_diag: float

    @classmethod
    def from_positions(cls, positions):
        positions = np.asarray(positions, dtype=np.float64)
        lo, hi = positions.min(axis=0), positions.max(axis=0)
        half = float(np.linalg.norm(hi - lo) / 2.0)
        return cls(center=(lo + hi) / 2.0, half_diag=half if half > 0 else 1.0)

    def standardize(self, p):
        return (np.asarray(p, dtype=np.float64) - self.center) / self.half_diag

    def destandardize(self, s):
        return np.asarray(s, dtype=np.float64) * self.half_diag + self.center


@dataclass
class LocalizationReport:
    errors: np.ndarray    # per-sample Euclidean errors (m), sorted ascending

    @classmethod
    def from_estimates(cls, estimated, true):
        err = np.linalg.norm(np.asarray(estimated) - np.asarray(true), axis=-1)
        return cls(errors=np.sort(err))

    @property
    def mean(self):
        return float(np.mean(self.errors))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("error_m\n")
            for e in self.errors:
                f.write(f"{float(e)!r}\n")


def error_cdf(report, q):
    """Linear-interpolated empirical quantile of the error distribution."""
    if report.errors.size == 0:
        raise InvalidArgument("empty localization report")
    if not 0 < q < 1:
        raise InvalidArgument(f"quantile must be in (0,1), got {q}")
    return float(np.quantile(report.errors, q, method="linear"))


def build_localizer(n_ant, seed=0):
    """Three ReLU feature layers of width 8N, then a linear two-neuron head."""
    if n_ant < 1:
        raise InvalidArgument("antenna count must be >= 1")
    w = 8 * n_ant
    layers = [Dense(2 * n_ant, w, name="loc1"), Activation("relu", name="loc1_act"),
              Dense(w, w, name="loc2"), Activation("relu", name="loc2_act"),
              Dense(w, w, name="loc3"), Activation("relu", name="loc3_act"),
              Dense(w, 2, name="loc_out")]
    return glorot_init(NetworkGraph(layers), seed)


def train_localizer(graph, channels, positions, scaler, config,
                    val_channels=None, val_positions=None):
    """MSE training on standardized positions; best-on-validation (mean
    Euclidean error in meters) parameters are kept."""
    from .e2e import minibatch_train

    channels = np.asarray(channels, dtype=np.float64)
    if channels.shape[0] == 0:
        raise InvalidArgument("empty localizer training set")
    targets = scaler.standardize(positions)

    val_fn = None
    if val_channels is not None and len(val_channels):
        def val_fn(_epoch):
            est = localize(graph, val_channels, scaler)
            return float(np.mean(np.linalg.norm(est - val_positions, axis=1)))

    history = minibatch_train(
        graph, channels, targets,
        epochs=config.epochs, batch_size=config.batch_size, lr=config.lr,
        seed=config.seed, val_fn=val_fn)
    return graph, history


def localize(graph, channels, scaler):
    """Deterministic position estimate in meters from real-pair channels."""
    channels = np.asarray(channels, dtype=np.float64)
    single = channels.ndim == 1
    out = graph.predict(channels)
    est = scaler.destandardize(out)
    return est[0] if single else est


# ---------------------------------------------------------------------------
# Charting (label-free relative positioning) and the autoencoder control
# ---------------------------------------------------------------------------

def _charting_encoder(n_ant, prefix):
    w = 4 * n_ant
    return [Dense(2 * n_ant, w, name=f"{prefix}1"),
            Activation("relu", name=f"{prefix}1_act"),
            Dense(w, w, name=f"{prefix}2"), Activation("relu", name=f"{prefix}2_act"),
            Dense(w, w, name=f"{prefix}3"), Activation("relu", name=f"{prefix}3_act"),
            Dense(w, 2, name=f"{prefix}_latent"),
            Activation("sigmoid", name=f"{prefix}_latent_act")]


def _charting_decoder(n_ant, out_dim, prefix, blocks=10):
    return [Dense(2, 2 * n_ant, name=f"{prefix}_in"),
            *residual_stack(n_ant, blocks, prefix),
            Dense(2 * n_ant, out_dim, name=f"{prefix}_out")]


def build_charting_pair(n_ant, seed=0, blocks=10):
    """Encoder to a (0,1)^2 latent; decoder to the N-point angular magnitude."""
    if n_ant < 1:
        raise InvalidArgument("antenna count must be >= 1")
    enc = NetworkGraph(_charting_encoder(n_ant, "chenc"))
    dec = NetworkGraph(_charting_decoder(n_ant, n_ant, "chdec", blocks))
    glorot_init(enc, seed)
    glorot_init(dec, (seed, 1))
    return enc, dec


def build_vanilla_autoencoder(n_ant, seed=0, blocks=10):
    """Same shapes as the charting pair, but the decoder reconstructs the
    main channel itself (2N outputs)."""
    enc = NetworkGraph(_charting_encoder(n_ant, "vaenc"))
    dec = NetworkGraph(_charting_decoder(n_ant, 2 * n_ant, "vadec", blocks))
    glorot_init(enc, seed)
    glorot_init(dec, (seed, 1))
    return enc, dec


def train_pair(encoder, decoder, inputs, targets, config):
    """Joint MSE training of decoder(encoder(x)) against targets."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise InvalidArgument("empty training set")
    opt = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history = []
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            z, enc_cache = encoder.forward(inputs[idx], mode=nn.TRAIN, rng=rng)
            out, dec_cache = decoder.forward(z, mode=nn.TRAIN, rng=rng)
            loss, dy = _mse_grad(out, targets[idx])
            dz, dec_grads = decoder.backward(dec_cache, dy)
            _, enc_grads = encoder.backward(enc_cache, dz)
            params = {f"enc::{k}": v for k, v in encoder.parameters().items()}
            params.update({f"dec::{k}": v for k, v in decoder.parameters().items()})
            grads = {f"enc::{k}": v for k, v in enc_grads.items()}
            grads.update({f"dec::{k}": v for k, v in dec_grads.items()})
            adam_step(opt, params, grads)
            epoch_loss += loss
            n_batches += 1
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_batches})
    return history


def train_charting(encoder, decoder, channels, angular_targets, config):
    """Fit the main-channel -> side-characteristics map end to end.

    channels: real pairs (S, 2N); angular_targets: nonnegative (S, N).
    """
    angular_targets = np.asarray(angular_targets, dtype=np.float64)
    n_ant = np.asarray(channels).shape[1] // 2
    if angular_targets.ndim != 2 or angular_targets.shape[1] != n_ant:
        raise InvalidArgument(
            f"targets must be (S, {n_ant}), got {angular_targets.shape}")
    if np.any(angular_targets < 0):
        raise InvalidArgument("angular magnitude targets must be nonnegative")
    history = train_pair(encoder, decoder, channels, angular_targets, config)
    return encoder, decoder, history


def train_vanilla_autoencoder(n_ant, channels, config, blocks=10):
    """Control model: compress and reconstruct the main channel itself."""
    enc, dec = build_vanilla_autoencoder(n_ant, seed=config.seed, blocks=blocks)
    channels = np.asarray(channels, dtype=np.float64)
    history = train_pair(enc, dec, channels, channels, config)
    return enc, dec, history


def latent_positions(encoder, channels):
    """Chart coordinates in (0,1)^2 for a batch of real-pair channels."""
    return encoder.predict(np.asarray(channels, dtype=np.float64))


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.arange(values.size)
    # average tied ranks
    sorted_vals = values[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def chart_quality(latents, true_positions, max_pairs=100_000, seed=0):
    """Spearman rank correlation between all-pairs latent distances and
    all-pairs true-position distances (subsampled above max_pairs)."""
    latents = np.asarray(latents, dtype=np.float64)
    true_positions = np.asarray(true_positions, dtype=np.float64)
    s = latents.shape[0]
    if s != true_positions.shape[0] or s < 10:
        raise InvalidArgument("need >= 10 matched (latent, position) rows")
    iu, ju = np.triu_indices(s, k=1)
    if iu.size > max_pairs:
        pick = np.random.default_rng(seed).choice(iu.size, size=max_pairs,
                                                  replace=False)
        iu, ju = iu[pick], ju[pick]
    d_lat = np.linalg.norm(latents[iu] - latents[ju], axis=1)
    d_pos = np.linalg.norm(true_positions[iu] - true_positions[ju], axis=1)
    if np.ptp(d_lat) == 0 or np.ptp(d_pos) == 0:
        warnings.warn("degenerate constant distances; chart quality undefined",
                      RuntimeWarning)
        return 0.0
    r_lat = _average_ranks(d_lat)
    r_pos = _average_ranks(d_pos)
    r_lat -= r_lat.mean()
    r_pos -= r_pos.mean()
    denom = np.sqrt(np.sum(r_lat ** 2) * np.sum(r_pos ** 2))
    return float(np.sum(r_lat * r_pos) / denom)
