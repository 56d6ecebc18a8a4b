"""Position-domain side-channel acquisition pipelines.

Three variants share the same skeleton: acquire the main channel with the
learned end-to-end pipeline, turn it into a position (supervised localizer,
or unsupervised chart latent), then spend that position on the side link --
conditioning the side pilot (full / label_free) and fusing it into the side
reconstructor (all modes). Training is three sequential stages; inference
follows the fixed step order enforced in run_inference.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .channel import angular_transform
from .e2e import (Codeword, E2EConfig, build_e2e_graph, _mse_grad,
                  compression_layers, from_real_halves, graph_forward_at_snr,
                  nmse, reconstruction_layers, to_real_halves, train_e2e)
from .errors import InvalidArgument, StateError
from .nn import (Activation, AdamState, Branch, ComplexPilot, Dense,
                 NetworkGraph, PowerProject, adam_step, awgn_apply,
                 glorot_init, load_params, save_params)
from .positioning import (PositionScaler, TrainConfig, build_charting_pair,
                          build_localizer, latent_positions, localize,
                          train_charting, train_localizer)

MODES = ("full", "one_sided", "label_free")
POSITION_SOURCES = ("estimated", "perfect", "latent")


@dataclass
class PcenetConfig:
    mode: str
    main: E2EConfig
    side: E2EConfig
    position_source: str = "estimated"
    localizer_epochs: int = 300
    charting_epochs: int = 100
    latent_style: str = "charting"   # label_free only: charting | autoencoder
    stage2_draws: int = 4            # noise draws of ĥ'_m used as stage-2 input

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode '{self.mode}'")
        if self.stage2_draws < 1:
            raise InvalidArgument("stage2_draws must be >= 1")
        if self.latent_style not in ("charting", "autoencoder"):
            raise InvalidArgument(f"unknown latent_style '{self.latent_style}'")
        if self.position_source not in POSITION_SOURCES:
            raise InvalidArgument(f"unknown position_source '{self.position_source}'")
        if self.mode == "label_free" and self.position_source != "latent":
            raise InvalidArgument("label_free mode requires position_source=latent")
        if self.mode != "label_free" and self.position_source == "latent":
            raise InvalidArgument("latent positions require label_free mode")
        if self.main.n_ant != self.side.n_ant:
            raise InvalidArgument("main/side antenna counts must match")


@dataclass
class PipelineBundle:
    config: PcenetConfig
    scaler: PositionScaler
    main_graph: NetworkGraph
    side_pilot: NetworkGraph        # position-pilot net, or fixed ComplexPilot
    side_ue: NetworkGraph
    side_fusion: NetworkGraph
    localizer: NetworkGraph = None
    chart_encoder: NetworkGraph = None
    chart_decoder: NetworkGraph = None
    provenance: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)

    def stage_names(self):
        return [s["stage"] for s in self.provenance.get("stages", [])]


# ---------------------------------------------------------------------------
# Graph builders
# ---------------------------------------------------------------------------

def build_position_pilot_graph(n_ant, pilot_len, power, seed=0):
    """Position-conditioned side pilot: tanh feature layer of width 4*L*N,
    two parallel tanh heads of width L*N for the real/imag parts, then a
    per-column power projection."""
    if n_ant < 1 or pilot_len < 1:
        raise InvalidArgument("dims must be positive")
    ln = pilot_len * n_ant
    head_re = [Dense(4 * ln, ln, name="pp_re"), Activation("tanh", name="pp_re_act")]
    head_im = [Dense(4 * ln, ln, name="pp_im"), Activation("tanh", name="pp_im_act")]
    layers = [
        Dense(2, 4 * ln, name="pp1"),
        Activation("tanh", name="pp1_act"),
        Branch(4 * ln, [(0, 4 * ln, head_re), (0, 4 * ln, head_im)], name="pp_heads"),
        PowerProject(power, n_ant, pilot_len, name="pp_proj"),
    ]
    return glorot_init(NetworkGraph(layers), seed)


def build_fixed_pilot_graph(n_ant, pilot_len, power, seed=0):
    """One-sided variant: the bias-free learned pilot, independent of position."""
    graph = glorot_init(NetworkGraph([ComplexPilot(n_ant, pilot_len, name="pilot")]),
                        seed)
    graph.layers[0].project(power)
    return graph


def build_side_ue_graph(pilot_len, n_bits, quant_bits, seed=0):
    """Side-link UE compressor: two sigmoid FC layers plus the quantizer."""
    k = n_bits // quant_bits
    return glorot_init(
        NetworkGraph(compression_layers(2 * pilot_len, k, quant_bits, prefix="sue")),
        seed)


def build_fusion_reconstructor(n_ant, n_bits, quant_bits, seed=0, blocks=10):
    """Hybrid fusion: position features (dense 2->4N->N, sigmoid) concatenated
    with the codeword levels, then the standard reconstruction stack."""
    if n_bits % quant_bits != 0:
        raise InvalidArgument("n_bits must be divisible by quant_bits")
    k = n_bits // quant_bits
    pos_branch = [Dense(2, 4 * n_ant, name="fus_pos1"),
                  Dense(4 * n_ant, n_ant, name="fus_pos2"),
                  Activation("sigmoid", name="fus_pos_act")]
    layers = [
        Branch(2 + k, [(0, 2, pos_branch), (2, 2 + k, None)], name="fus_concat"),
        *reconstruction_layers(n_ant + k, n_ant, blocks, prefix="fus"),
    ]
    return glorot_init(NetworkGraph(layers), seed)


def build_direct_mapper(n_ant, seed=0):
    """Control network regressing the side channel straight from the
    reconstructed main channel (localizer backbone, 2N-output head)."""
    w = 8 * n_ant
    layers = [Dense(2 * n_ant, w, name="dm1"), Activation("relu", name="dm1_act"),
              Dense(w, w, name="dm2"), Activation("relu", name="dm2_act"),
              Dense(w, w, name="dm3"), Activation("relu", name="dm3_act"),
              Dense(w, 2 * n_ant, name="dm_out")]
    return glorot_init(NetworkGraph(layers), seed)


# ---------------------------------------------------------------------------
# Side-link pilot reception (couples per-sample channels with per-sample pilots)
# ---------------------------------------------------------------------------

def _reception_forward(hs_real, x_flat, n_ant, pilot_len, snr_db, rng):
    """y = h X + z with a per-sample pilot. hs_real: (b, 2N) fixed data;
    x_flat: (b, 2NL) differentiable activations."""
    b = hs_real.shape[0]
    hr, hi = hs_real[:, :n_ant], hs_real[:, n_ant:]
    x = x_flat.reshape(b, 2, n_ant, pilot_len)
    xr, xi = x[:, 0], x[:, 1]
    yr = np.einsum("bn,bnl->bl", hr, xr) - np.einsum("bn,bnl->bl", hi, xi)
    yi = np.einsum("bn,bnl->bl", hi, xr) + np.einsum("bn,bnl->bl", hr, xi)
    y = np.concatenate([yr, yi], axis=1)
    if snr_db is not None:
        y = awgn_apply(y, snr_db, rng)
    return y, (hr, hi)


def _reception_backward(cache, dy, pilot_len):
    hr, hi = cache
    gr, gi = dy[:, :pilot_len], dy[:, pilot_len:]
    dxr = hr[:, :, None] * gr[:, None, :] + hi[:, :, None] * gi[:, None, :]
    dxi = -hi[:, :, None] * gr[:, None, :] + hr[:, :, None] * gi[:, None, :]
    b = hr.shape[0]
    return np.stack([dxr, dxi], axis=1).reshape(b, -1)


def _tile_pilot(layer, batch):
    flat = np.concatenate([layer.w_re.ravel(), layer.w_im.ravel()])
    return np.broadcast_to(flat, (batch, flat.size)).copy()


def side_pipeline_forward(bundle, pos_input, hs_real, snr_db, rng, mode=nn.TRAIN):
    """Forward the whole side link; returns (output, cache-tuple)."""
    cfg = bundle.config.side
    b = hs_real.shape[0]
    if bundle.config.mode == "one_sided":
        x_flat = _tile_pilot(bundle.side_pilot.layers[0], b)
        pilot_caches = None
    else:
        x_flat, pilot_caches = bundle.side_pilot.forward(pos_input, mode=mode, rng=rng)
    y, rec_cache = _reception_forward(hs_real, x_flat, cfg.n_ant, cfg.pilot_len,
                                      snr_db, rng)
    code, ue_caches = bundle.side_ue.forward(y, mode=mode, rng=rng)
    fin = np.concatenate([pos_input, code], axis=1)
    out, fus_caches = bundle.side_fusion.forward(fin, mode=mode, rng=rng)
    return out, (pilot_caches, rec_cache, ue_caches, fus_caches)


def side_pipeline_backward(bundle, caches, dy):
    """Gradients for pilot/ue/fusion graphs; position inputs are upstream-frozen."""
    cfg = bundle.config.side
    pilot_caches, rec_cache, ue_caches, fus_caches = caches
    dfin, fus_grads = bundle.side_fusion.backward(fus_caches, dy)
    dcode = dfin[:, 2:]
    dyr, ue_grads = bundle.side_ue.backward(ue_caches, dcode)
    dx_flat = _reception_backward(rec_cache, dyr, cfg.pilot_len)
    grads = {}
    grads.update({f"fus::{k}": v for k, v in fus_grads.items()})
    grads.update({f"sue::{k}": v for k, v in ue_grads.items()})
    if bundle.config.mode == "one_sided":
        n, l = cfg.n_ant, cfg.pilot_len
        dx = dx_flat.sum(axis=0).reshape(2, n, l)
        grads["pil::pilot.w_re"] = dx[0]
        grads["pil::pilot.w_im"] = dx[1]
    else:
        _, pilot_grads = bundle.side_pilot.backward(pilot_caches, dx_flat)
        grads.update({f"pil::{k}": v for k, v in pilot_grads.items()})
    return grads


def _side_params(bundle):
    params = {f"pil::{k}": v for k, v in bundle.side_pilot.parameters().items()}
    params.update({f"sue::{k}": v for k, v in bundle.side_ue.parameters().items()})
    params.update({f"fus::{k}": v for k, v in bundle.side_fusion.parameters().items()})
    return params


# ---------------------------------------------------------------------------
# Position inputs
# ---------------------------------------------------------------------------

def reconstruct_main(bundle, h_main, snr_db, seed):
    """Main-channel acquisition output as real pairs (b, 2N)."""
    return graph_forward_at_snr(bundle.main_graph, to_real_halves(h_main),
                                snr_db, seed)


def position_inputs(bundle, h_main, true_positions, snr_db, seed):
    """The standardized position rows fed to the side pilot/fusion branches.

    estimated: localizer on the reconstructed main channel;
    perfect:    localizer on the true main channel;
    latent:     charting encoder on the reconstructed main channel.
    """
    src = bundle.config.position_source
    if src == "perfect":
        if bundle.localizer is None:
            raise StateError("stage 2 missing: localizer not trained")
        est = localize(bundle.localizer, to_real_halves(h_main), bundle.scaler)
        return bundle.scaler.standardize(est)
    rec = reconstruct_main(bundle, h_main, snr_db, seed)
    if src == "estimated":
        if bundle.localizer is None:
            raise StateError("stage 2 missing: localizer not trained")
        est = localize(bundle.localizer, rec, bundle.scaler)
        return bundle.scaler.standardize(est)
    if bundle.chart_encoder is None:
        raise StateError("stage 2 missing: charting encoder not trained")
    return latent_positions(bundle.chart_encoder, rec)


# ---------------------------------------------------------------------------
# Stage 3 training
# ---------------------------------------------------------------------------

def train_pcenet_stage3(bundle, dataset):
    """Jointly train side pilot design, UE compression, and fusion
    reconstruction against MSE on the side channel, with the upstream
    localizer/charting stage frozen."""
    cfg = bundle.config.side
    if bundle.main_graph is None:
        raise StateError("stage 1 missing: main acquisition not trained")
    hm_train = dataset.channels("train", "main")
    hs_train = dataset.channels("train", "side")
    pos_train = position_inputs(bundle, hm_train, dataset.positions("train"),
                                cfg.train_snr_db, seed=(cfg.seed, 31))
    hs_real = to_real_halves(hs_train)

    hm_val = dataset.channels("val", "main")
    hs_val = dataset.channels("val", "side")
    has_val = hm_val.shape[0] > 0
    if has_val:
        pos_val_draws = [
            position_inputs(bundle, hm_val, dataset.positions("val"),
                            cfg.train_snr_db, seed=(cfg.seed, 32, d))
            for d in range(4)]

    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    best = None
    n = hs_real.shape[0]

    def snapshot():
        return {k: v.copy() for k, v in _side_params(bundle).items()}

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out, caches = side_pipeline_forward(
                bundle, pos_train[idx], hs_real[idx], cfg.train_snr_db, rng)
            loss, dy = _mse_grad(out, hs_real[idx])
            grads = side_pipeline_backward(bundle, caches, dy)
            adam_step(opt, _side_params(bundle), grads)
            if bundle.config.mode == "one_sided":
                bundle.side_pilot.layers[0].project(cfg.power)
            epoch_loss += loss
            n_batches += 1
        val_db = None
        if has_val:
            # fixed noise and position-estimate draws: epochs must compete on
            # identical validation randomness, otherwise best-on-validation
            # selects the luckiest draw; averaging draws also keeps one
            # realization's quirks from steering the selection
            scores = []
            for draw, pos_val in enumerate(pos_val_draws):
                vrng = np.random.default_rng((cfg.seed, 0x5EED, draw))
                out, _ = side_pipeline_forward(bundle, pos_val,
                                               to_real_halves(hs_val),
                                               cfg.train_snr_db, vrng,
                                               mode=nn.EVAL)
                scores.append(nmse(hs_val, from_real_halves(out))[0])
            val_lin = float(np.mean(scores))
            val_db = 10.0 * np.log10(val_lin) if val_lin > 0 else -np.inf
            if best is None or val_lin < best[0]:
                best = (val_lin, snapshot())
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_batches,
                        "val_nmse_db": val_db})
    if best is not None:
        params = _side_params(bundle)
        for k, v in best[1].items():
            params[k][...] = v
    return history


def evaluate_side(bundle, dataset, split, test_snr_db, seed):
    """Side-channel NMSE of a trained bundle over one split."""
    hm = dataset.channels(split, "main")
    hs = dataset.channels(split, "side")
    pos = position_inputs(bundle, hm, dataset.positions(split), test_snr_db,
                          seed=(seed, 1))
    rng = np.random.default_rng((seed, 2))
    out, _ = side_pipeline_forward(bundle, pos, to_real_halves(hs), test_snr_db,
                                   rng, mode=nn.EVAL)
    linear, db = nmse(hs, from_real_halves(out))
    return {"nmse_linear": linear, "nmse_db": db, "split": split,
            "test_snr_db": test_snr_db}


# ---------------------------------------------------------------------------
# Orchestration (three sequential stages)
# ---------------------------------------------------------------------------

def orchestrate_training(dataset, config, loc_batch_size=None):
    """Stage 1: main acquisition; stage 2: localizer or charting pair;
    stage 3: side acquisition. Returns the trained bundle with provenance."""
    scaler = PositionScaler.from_positions(dataset.positions("train"))
    stages = []

    main_graph = build_e2e_graph(config.main)
    _, hist1 = train_e2e(main_graph, dataset, "main", config.main)
    stages.append({"stage": "main_acquisition", "epochs": config.main.epochs})
    histories = {"main_acquisition": hist1}

    bundle = PipelineBundle(
        config=config, scaler=scaler, main_graph=main_graph,
        side_pilot=None, side_ue=None, side_fusion=None)

    hm_train = dataset.channels("train", "main")
    hm_val = dataset.channels("val", "main")
    has_val = hm_val.shape[0] > 0
    if config.position_source == "perfect":
        draws = 1
        loc_in = to_real_halves(hm_train)
        loc_val_in = to_real_halves(hm_val) if has_val else None
    else:
        # several independent noise draws of the stage-1 output act as data
        # augmentation: stage 2 then fits the reconstruction's noise
        # distribution instead of one realization of it
        draws = config.stage2_draws
        loc_in = np.vstack([
            reconstruct_main(bundle, hm_train, config.main.train_snr_db,
                             seed=(config.main.seed, 21, d))
            for d in range(draws)])
        loc_val_in = (reconstruct_main(bundle, hm_val, config.main.train_snr_db,
                                       seed=(config.main.seed, 22))
                      if has_val else None)

    if config.mode == "label_free":
        tc = TrainConfig(epochs=config.charting_epochs,
                         batch_size=config.main.batch_size,
                         lr=config.main.lr, seed=config.main.seed)
        if config.latent_style == "autoencoder":
            from .positioning import train_vanilla_autoencoder
            enc, dec, hist2 = train_vanilla_autoencoder(config.main.n_ant, loc_in, tc)
        else:
            enc, dec = build_charting_pair(config.main.n_ant, seed=config.main.seed)
            targets = np.tile(angular_transform(dataset.channels("train", "side")),
                              (draws, 1))
            _, _, hist2 = train_charting(enc, dec, loc_in, targets, tc)
        bundle.chart_encoder, bundle.chart_decoder = enc, dec
        stages.append({"stage": "charting", "epochs": config.charting_epochs})
        histories["charting"] = hist2
    else:
        loc = build_localizer(config.main.n_ant, seed=config.main.seed)
        tc = TrainConfig(epochs=config.localizer_epochs,
                         batch_size=loc_batch_size or config.main.batch_size,
                         lr=config.main.lr, seed=config.main.seed)
        _, hist2 = train_localizer(
            loc, loc_in, np.tile(dataset.positions("train"), (draws, 1)),
            scaler, tc,
            val_channels=loc_val_in,
            val_positions=dataset.positions("val") if has_val else None)
        bundle.localizer = loc
        stages.append({"stage": "localization", "epochs": config.localizer_epochs})
        histories["localization"] = hist2

    side = config.side
    if config.mode == "one_sided":
        bundle.side_pilot = build_fixed_pilot_graph(side.n_ant, side.pilot_len,
                                                    side.power, seed=side.seed)
    else:
        bundle.side_pilot = build_position_pilot_graph(side.n_ant, side.pilot_len,
                                                       side.power, seed=side.seed)
    bundle.side_ue = build_side_ue_graph(side.pilot_len, side.n_bits,
                                         side.quant_bits, seed=(side.seed, 1))
    bundle.side_fusion = build_fusion_reconstructor(side.n_ant, side.n_bits,
                                                    side.quant_bits,
                                                    seed=(side.seed, 2),
                                                    blocks=side.residual_blocks)
    hist3 = train_pcenet_stage3(bundle, dataset)
    stages.append({"stage": "side_acquisition", "epochs": side.epochs})
    histories["side_acquisition"] = hist3

    bundle.provenance = {"stages": stages, "mode": config.mode,
                         "position_source": config.position_source}
    bundle.histories = histories
    return bundle


# ---------------------------------------------------------------------------
# Inference (fixed step order)
# ---------------------------------------------------------------------------

def _forward_with_tap(graph, x, tap_name, rng=None):
    """Eval forward that also returns the activations after one named layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    tap = None
    for layer in graph.layers:
        x, _ = layer.forward(x, nn.EVAL, rng)
        if layer.name == tap_name:
            tap = x
    return x, tap


def run_inference(bundle, sample, test_snr_db, seed):
    """Execute the side-acquisition protocol for one UE sample.

    Steps: main pilot reception -> UE feedback -> main reconstruction ->
    position estimation -> side pilot design (fixed pilot in one_sided mode)
    -> side reception -> UE feedback -> fusion reconstruction. Every noise
    draw is derived from `seed`.
    """
    cfg = bundle.config.side
    mcfg = bundle.config.main
    n, l = cfg.n_ant, cfg.pilot_len

    # Steps 1-3: main link at the test SNR, tapping the feedback codeword.
    noise = bundle.main_graph.layers[1]
    saved = (noise.snr_db, noise.always_on)
    noise.snr_db, noise.always_on = test_snr_db, True
    try:
        rec, main_code = _forward_with_tap(
            bundle.main_graph, to_real_halves(sample.h_main), "enc_quant",
            rng=np.random.default_rng((seed, 1)))
    finally:
        noise.snr_db, noise.always_on = saved
    h_main_rec = from_real_halves(rec)[0]

    # Step 4: position estimate (or chart latent).
    src = bundle.config.position_source
    if src == "latent":
        pos_est = None
        pos_input = latent_positions(bundle.chart_encoder, rec)
    else:
        loc_in = to_real_halves(sample.h_main)[None, :] if src == "perfect" else rec
        pos_est = localize(bundle.localizer, loc_in, bundle.scaler)[0]
        pos_input = bundle.scaler.standardize(pos_est)[None, :]

    # Step 5: side pilot (position-designed unless one_sided).
    if bundle.config.mode == "one_sided":
        x_flat = _tile_pilot(bundle.side_pilot.layers[0], 1)
    else:
        x_flat = bundle.side_pilot.predict(pos_input)
    x_side = x_flat.reshape(2, n, l)
    pilot_side = x_side[0] + 1j * x_side[1]

    # Steps 6-8: side reception and feedback.
    hs_real = to_real_halves(sample.h_side)[None, :]
    y, _ = _reception_forward(hs_real, x_flat, n, l, test_snr_db,
                              np.random.default_rng((seed, 2)))
    code, _ = _forward_with_tap(bundle.side_ue, y, "sue_quant")
    side_code = code

    # Step 9: fusion reconstruction.
    out = bundle.side_fusion.predict(np.concatenate([pos_input, side_code], axis=1))
    return {
        "h_main_rec": h_main_rec,
        "position_est": pos_est,
        "position_input": pos_input[0],
        "pilot_side": pilot_side,
        "h_side_rec": from_real_halves(out)[0],
        "codeword_main": Codeword(levels=main_code[0], bits=mcfg.quant_bits),
        "codeword_side": Codeword(levels=side_code[0], bits=cfg.quant_bits),
    }


# ---------------------------------------------------------------------------
# Direct-mapping control
# ---------------------------------------------------------------------------

def train_direct_mapper(dataset, main_graph, main_config, epochs, seed,
                        batch_size=512, lr=0.001):
    """Regress the side channel straight from the reconstructed main channel."""
    from .e2e import minibatch_train

    graph = build_direct_mapper(main_config.n_ant, seed=seed)
    bundle_like = PipelineBundle(config=None, scaler=None, main_graph=main_graph,
                                 side_pilot=None, side_ue=None, side_fusion=None)
    x = reconstruct_main(bundle_like, dataset.channels("train", "main"),
                         main_config.train_snr_db, seed=(seed, 41))
    y = to_real_halves(dataset.channels("train", "side"))
    hm_val = dataset.channels("val", "main")
    val_fn = None
    if hm_val.shape[0]:
        xv = reconstruct_main(bundle_like, hm_val, main_config.train_snr_db,
                              seed=(seed, 42))
        hs_val = dataset.channels("val", "side")

        def val_fn(_epoch):
            return nmse(hs_val, from_real_halves(graph.predict(xv)))[1]

    history = minibatch_train(graph, x, y, epochs=epochs, batch_size=batch_size,
                              lr=lr, seed=seed, val_fn=val_fn)
    return graph, history


def evaluate_direct_mapper(graph, main_graph, main_config, dataset, split,
                           test_snr_db, seed):
    bundle_like = PipelineBundle(config=None, scaler=None, main_graph=main_graph,
                                 side_pilot=None, side_ue=None, side_fusion=None)
    x = reconstruct_main(bundle_like, dataset.channels(split, "main"),
                         test_snr_db, seed=(seed, 43))
    hs = dataset.channels(split, "side")
    linear, db = nmse(hs, from_real_halves(graph.predict(x)))
    return {"nmse_linear": linear, "nmse_db": db, "split": split,
            "test_snr_db": test_snr_db}


# ---------------------------------------------------------------------------
# Bundle checkpointing
# ---------------------------------------------------------------------------

_GRAPH_FILES = {
    "main_graph": "main.pcew",
    "localizer": "localizer.pcew",
    "chart_encoder": "chart_encoder.pcew",
    "chart_decoder": "chart_decoder.pcew",
    "side_pilot": "side_pilot.pcew",
    "side_ue": "side_ue.pcew",
    "side_fusion": "side_fusion.pcew",
}


def save_bundle(bundle, directory):
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "mode": bundle.config.mode,
        "position_source": bundle.config.position_source,
        "localizer_epochs": bundle.config.localizer_epochs,
        "charting_epochs": bundle.config.charting_epochs,
        "latent_style": bundle.config.latent_style,
        "stage2_draws": bundle.config.stage2_draws,
        "main": asdict(bundle.config.main),
        "side": asdict(bundle.config.side),
        "scaler": {"center": list(bundle.scaler.center),
                   "half_diag": bundle.scaler.half_diag},
        "provenance": bundle.provenance,
        "graphs": [],
    }
    for attr, fname in _GRAPH_FILES.items():
        graph = getattr(bundle, attr)
        if graph is not None:
            save_params(graph, os.path.join(directory, fname))
            manifest["graphs"].append(attr)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_bundle(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    main = E2EConfig(**manifest["main"])
    side = E2EConfig(**manifest["side"])
    config = PcenetConfig(mode=manifest["mode"], main=main, side=side,
                          position_source=manifest["position_source"],
                          localizer_epochs=manifest["localizer_epochs"],
                          charting_epochs=manifest["charting_epochs"],
                          latent_style=manifest.get("latent_style", "charting"),
                          stage2_draws=manifest.get("stage2_draws", 1))
    scaler = PositionScaler(center=np.array(manifest["scaler"]["center"]),
                            half_diag=manifest["scaler"]["half_diag"])
    bundle = PipelineBundle(config=config, scaler=scaler,
                            main_graph=build_e2e_graph(main),
                            side_pilot=None, side_ue=None, side_fusion=None,
                            provenance=manifest["provenance"])
    if config.mode == "one_sided":
        bundle.side_pilot = build_fixed_pilot_graph(side.n_ant, side.pilot_len,
                                                    side.power, seed=side.seed)
    else:
        bundle.side_pilot = build_position_pilot_graph(side.n_ant, side.pilot_len,
                                                       side.power, seed=side.seed)
    bundle.side_ue = build_side_ue_graph(side.pilot_len, side.n_bits,
                                         side.quant_bits, seed=(side.seed, 1))
    bundle.side_fusion = build_fusion_reconstructor(side.n_ant, side.n_bits,
                                                    side.quant_bits,
                                                    seed=(side.seed, 2),
                                                    blocks=side.residual_blocks)
    if "localizer" in manifest["graphs"]:
        bundle.localizer = build_localizer(main.n_ant)
    if "chart_encoder" in manifest["graphs"]:
        if config.latent_style == "autoencoder":
            from .positioning import build_vanilla_autoencoder
            enc, dec = build_vanilla_autoencoder(main.n_ant)
        else:
            enc, dec = build_charting_pair(main.n_ant)
        bundle.chart_encoder, bundle.chart_decoder = enc, dec
    for attr, fname in _GRAPH_FILES.items():
        graph = getattr(bundle, attr)
        if attr in manifest["graphs"] and graph is not None:
            load_params(graph, os.path.join(directory, fname))
    return bundle
