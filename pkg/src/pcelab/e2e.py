"""End-to-end learned CSI acquisition: pilot design, quantized feedback
compression, residual reconstruction, plus LS/MMSE baselines and the NMSE
metric.

Complex channels enter the real-valued engine as [Re(h) | Im(h)] rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import InvalidArgument
from .nn import (
    AWGN, Activation, AdamState, ComplexPilot, Dense, NetworkGraph,
    Quantize, Residual, adam_step, awgn_apply, quantize_ste,
)


@dataclass
class E2EConfig:
    n_ant: int
    pilot_len: int
    n_bits: int                 # total feedback bits
    quant_bits: int = 4
    power: float = 1.0
    train_snr_db: float = 10.0
    residual_blocks: int = 10
    epochs: int = 500
    batch_size: int = 512
    lr: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.pilot_len > self.n_ant:
            raise InvalidArgument("pilot_len must be <= antenna count")
        if self.pilot_len < 1 or self.n_ant < 1:
            raise InvalidArgument("dims must be positive")
        if self.n_bits % self.quant_bits != 0:
            raise InvalidArgument(
                f"n_bits ({self.n_bits}) must be divisible by quant_bits ({self.quant_bits})")
        if self.residual_blocks < 1:
            raise InvalidArgument("residual_blocks must be >= 1")

    @property
    def codeword_len(self):
        return self.n_bits // self.quant_bits


@dataclass
class Codeword:
    """Quantized feedback payload: n_bits/B levels, each a quantizer midpoint."""
    levels: np.ndarray
    bits: int

    def to_bits(self):
        idx = np.floor(np.asarray(self.levels) * 2 ** self.bits).astype(np.int64)
        idx = np.minimum(idx, 2 ** self.bits - 1)
        out = np.zeros(self.levels.size * self.bits, dtype=np.uint8)
        for k in range(self.bits):
            out[k::self.bits] = (idx >> (self.bits - 1 - k)) & 1
        return out

    @classmethod
    def from_bits(cls, bitstream, bits):
        bitstream = np.asarray(bitstream, dtype=np.int64)
        if bitstream.size % bits != 0:
            raise InvalidArgument("bitstream length not a multiple of quantizer bits")
        idx = np.zeros(bitstream.size // bits, dtype=np.int64)
        for k in range(bits):
            idx = (idx << 1) | bitstream[k::bits]
        return cls(levels=(idx + 0.5) / 2 ** bits, bits=bits)


def to_real_halves(h):
    """Complex (S, N) or (N,) -> real [..., 2N] as [Re | Im]."""
    h = np.asarray(h, dtype=np.complex128)
    return np.concatenate([h.real, h.imag], axis=-1)


def from_real_halves(x):
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def simulate_pilot_reception(h, x_pilot, snr_db, seed):
    """y = h X + z for a row-vector channel, via the real-pair decomposition."""
    h = np.asarray(h, dtype=np.complex128)
    x_pilot = np.asarray(x_pilot, dtype=np.complex128)
    if h.shape[-1] != x_pilot.shape[0]:
        raise InvalidArgument(
            f"channel length {h.shape[-1]} != pilot rows {x_pilot.shape[0]}")
    hr, hi = h.real, h.imag
    xr, xi = x_pilot.real, x_pilot.imag
    yr = hr @ xr - hi @ xi
    yi = hi @ xr + hr @ xi
    y = np.concatenate([yr, yi], axis=-1)
    y = awgn_apply(y, snr_db, np.random.default_rng(seed))
    return from_real_halves(y)


def residual_stack(n_ant, blocks, prefix, hidden_mult=8, out_dim=None):
    """Linear entry layer is supplied by the caller; this builds the repeated
    skip blocks: dense(2N->8N) tanh, dense(8N->2N) tanh, residual add."""
    width = out_dim if out_dim is not None else 2 * n_ant
    layers = []
    for i in range(blocks):
        inner = [
            Dense(width, hidden_mult * n_ant, name=f"{prefix}_res{i}_a"),
            Activation("tanh", name=f"{prefix}_res{i}_a_act"),
            Dense(hidden_mult * n_ant, width, name=f"{prefix}_res{i}_b"),
            Activation("tanh", name=f"{prefix}_res{i}_b_act"),
        ]
        layers.append(Residual(inner, name=f"{prefix}_res{i}"))
    return layers


def compression_layers(in_dim, codeword_len, quant_bits, prefix="enc"):
    """UE-side feedback encoder: two sigmoid FC layers then the quantizer."""
    return [
        Dense(in_dim, 2 * codeword_len, name=f"{prefix}1"),
        Activation("sigmoid", name=f"{prefix}1_act"),
        Dense(2 * codeword_len, codeword_len, name=f"{prefix}2"),
        Activation("sigmoid", name=f"{prefix}2_act"),
        Quantize(quant_bits, name=f"{prefix}_quant"),
    ]


def reconstruction_layers(codeword_in, n_ant, blocks, prefix="dec"):
    """BS-side decoder: linear widening layer then the residual stack."""
    return [
        Dense(codeword_in, 2 * n_ant, name=f"{prefix}_in"),
        *residual_stack(n_ant, blocks, prefix),
    ]


def build_e2e_graph(config):
    """Pilot -> AWGN -> compression+quantizer -> residual reconstruction."""
    n, l = config.n_ant, config.pilot_len
    k = config.codeword_len
    layers = [
        ComplexPilot(n, l, name="pilot"),
        AWGN(config.train_snr_db, name="noise"),
        *compression_layers(2 * l, k, config.quant_bits),
        *reconstruction_layers(k, n, config.residual_blocks),
    ]
    graph = NetworkGraph(layers)
    nn.glorot_init(graph, config.seed)
    pilot = graph.layers[0]
    pilot.project(config.power)
    return graph


def pilot_matrix(graph):
    """The complex N x L pilot held by a graph built with build_e2e_graph."""
    layer = graph.layers[0]
    return layer.w_re + 1j * layer.w_im


def nmse(true, est):
    """(1/S) sum ||h - h_hat||^2 / ||h||^2; returns (linear, dB).

    A perfect estimate yields linear 0 and the -inf dB sentinel.
    """
    true = np.atleast_2d(np.asarray(true))
    est = np.atleast_2d(np.asarray(est))
    if true.shape != est.shape:
        raise InvalidArgument(f"shape mismatch {true.shape} vs {est.shape}")
    norms = np.sum(np.abs(true) ** 2, axis=1)
    if np.any(norms == 0):
        raise InvalidArgument("zero-norm true channel")
    linear = float(np.mean(np.sum(np.abs(true - est) ** 2, axis=1) / norms))
    db = 10.0 * np.log10(linear) if linear > 0 else float("-inf")
    return linear, db


def ls_estimate(y, x_pilot):
    """Minimum-norm least-squares channel estimate via the pseudoinverse."""
    y = np.asarray(y, dtype=np.complex128)
    x_pilot = np.asarray(x_pilot, dtype=np.complex128)
    return y @ np.linalg.pinv(x_pilot)


def mmse_estimate(y, x_pilot, noise_var, channel_mean, channel_cov):
    """Linear MMSE for row-vector channels:
    h_hat = mu + (y - mu X) (X^H C X + sigma^2 I)^(-1) X^H C,
    with C = E[(h - mu)^H (h - mu)]. Reduces to exact recovery as
    sigma^2 -> 0 with full-rank square X.
    """
    y = np.asarray(y, dtype=np.complex128)
    batched = y.ndim > 1
    y = np.atleast_2d(y)
    x_pilot = np.asarray(x_pilot, dtype=np.complex128)
    mu = np.asarray(channel_mean, dtype=np.complex128).reshape(1, -1)
    cov = np.asarray(channel_cov, dtype=np.complex128)
    l = x_pilot.shape[1]
    inner = x_pilot.conj().T @ cov @ x_pilot + noise_var * np.eye(l)
    gain = np.linalg.solve(inner, x_pilot.conj().T @ cov)
    est = mu + (y - mu @ x_pilot) @ gain
    return est if batched else est[0]


def channel_statistics(channels):
    """Sample mean and covariance (rows are channel realizations)."""
    channels = np.asarray(channels, dtype=np.complex128)
    mu = channels.mean(axis=0)
    centered = channels - mu
    cov = centered.conj().T @ centered / channels.shape[0]
    return mu, cov


def _find_awgn(graph):
    for layer in graph.layers:
        if isinstance(layer, AWGN):
            return layer
    raise InvalidArgument("graph has no AWGN layer")


def graph_forward_at_snr(graph, x, snr_db, seed):
    """Eval-mode forward with the noise layer pinned to snr_db (seeded)."""
    noise = _find_awgn(graph)
    saved = (noise.snr_db, noise.always_on)
    noise.snr_db = snr_db
    noise.always_on = True
    try:
        out = graph.predict(x, rng=np.random.default_rng(seed))
    finally:
        noise.snr_db, noise.always_on = saved
    return out


def _mse_grad(out, target):
    diff = out - target
    loss = float(np.mean(diff ** 2))
    return loss, 2.0 * diff / diff.size


def minibatch_train(graph, inputs, targets, epochs, batch_size, lr, seed,
                    val_fn=None, post_step=None):
    """Generic seeded minibatch Adam loop with best-on-validation selection.

    `val_fn(epoch)` returns a lower-is-better score after each epoch; the
    parameter state with the best score is restored at the end. `post_step`
    runs after each optimizer step (e.g. pilot re-projection).
    """
    if inputs.shape[0] == 0:
        raise InvalidArgument("empty training split")
    opt = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    best = None
    n = inputs.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, caches = graph.forward(inputs[idx], mode=nn.TRAIN, rng=rng)
            loss, dy = _mse_grad(out, targets[idx])
            _, grads = graph.backward(caches, dy)
            adam_step(opt, graph.parameters(), grads)
            if post_step is not None:
                post_step()
            epoch_loss += loss
            n_batches += 1
        score = val_fn(epoch) if val_fn is not None else None
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_batches,
                        "val_score": score})
        if score is not None and (best is None or score < best[0]):
            best = (score, graph.copy_state())
    if best is not None:
        graph.load_state(best[1])
    return history


def train_e2e(graph, dataset, channel_selector, config):
    """End-to-end MSE training of the acquisition graph on one channel kind."""
    h_train = dataset.channels("train", channel_selector)
    x = to_real_halves(h_train)
    val = dataset.channels("val", channel_selector)
    pilot = graph.layers[0]

    val_fn = None
    if val.shape[0]:
        # fixed noise draws: epochs must compete on identical validation
        # noise, otherwise best-on-validation selects the luckiest draw
        def val_fn(epoch):
            scores = []
            for draw in range(4):
                out = graph_forward_at_snr(graph, to_real_halves(val),
                                           config.train_snr_db,
                                           seed=(config.seed, 0x5EED, draw))
                scores.append(nmse(val, from_real_halves(out))[0])
            return float(np.mean(scores))

    history = minibatch_train(
        graph, x, x,
        epochs=config.epochs, batch_size=config.batch_size, lr=config.lr,
        seed=config.seed, val_fn=val_fn,
        post_step=lambda: pilot.project(config.power),
    )
    return graph, history


def evaluate_pipeline(graph, dataset, split, channel_selector, test_snr_db, seed):
    """Eval-mode NMSE of a trained graph over one split at a given test SNR."""
    h = dataset.channels(split, channel_selector)
    out = graph_forward_at_snr(graph, to_real_halves(h), test_snr_db, seed)
    est = from_real_halves(out)
    per_sample = (np.sum(np.abs(h - est) ** 2, axis=1)
                  / np.sum(np.abs(h) ** 2, axis=1))
    linear, db = nmse(h, est)
    return {
        "nmse_linear": linear,
        "nmse_db": db,
        "per_sample": per_sample,
        "split": split,
        "test_snr_db": test_snr_db,
    }
