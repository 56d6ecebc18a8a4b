"""Tests for the learned CSI acquisition pipeline and classical baselines."""

import numpy as np
import pytest

from pcelab import channel, e2e, nn
from pcelab.errors import InvalidArgument


def toy_dataset(n_ant=4, rows=4, cols=5, seed=3):
    cfg = channel.ScenarioConfig(
        bs_positions=[(-5.0, -10.0), (15.0, -10.0)],
        antenna_count=n_ant,
        wavelength=2.0,
        tx_power=1.0,
        scatterers=[(1.0, 3.0), (4.0, -1.0)],
        grid_origin=(0.0, 0.0),
        grid_rows=rows,
        grid_cols=cols,
        grid_spacing=0.5,
        env_seed=seed,
    )
    return channel.generate_dataset(cfg)


# ---------------------------------------------------------------------------
# real-pair layout and pilot reception
# ---------------------------------------------------------------------------

def test_real_halves_roundtrip():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5))
    x = e2e.to_real_halves(h)
    assert x.shape == (3, 10)
    np.testing.assert_array_equal(e2e.from_real_halves(x), h)


def test_reception_scalar_product():
    y = e2e.simulate_pilot_reception([1.0], [[1.0 + 1j]], snr_db=None, seed=0)
    np.testing.assert_allclose(y, [1.0 + 1j])


def test_reception_j_times_j():
    y = e2e.simulate_pilot_reception([1j], [[1j]], snr_db=None, seed=0)
    np.testing.assert_allclose(y, [-1.0])


def test_reception_matches_complex_matmul():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(1, 17)
        l = rng.integers(1, 9)
        h = rng.normal(size=n) + 1j * rng.normal(size=n)
        x = rng.normal(size=(n, l)) + 1j * rng.normal(size=(n, l))
        y = e2e.simulate_pilot_reception(h, x, snr_db=None, seed=0)
        np.testing.assert_allclose(y, h @ x, atol=1e-12)


def test_reception_shape_mismatch():
    with pytest.raises(InvalidArgument):
        e2e.simulate_pilot_reception([1.0, 2.0], [[1.0]], snr_db=None, seed=0)


def test_reception_noise_is_seeded():
    h = np.array([1.0 + 2j, 0.5 - 1j])
    x = np.eye(2)
    a = e2e.simulate_pilot_reception(h, x, 10.0, seed=42)
    b = e2e.simulate_pilot_reception(h, x, 10.0, seed=42)
    c = e2e.simulate_pilot_reception(h, x, 10.0, seed=43)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# config and graph construction
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidArgument):
        e2e.E2EConfig(n_ant=4, pilot_len=8, n_bits=32)
    with pytest.raises(InvalidArgument):
        e2e.E2EConfig(n_ant=4, pilot_len=4, n_bits=30, quant_bits=4)
    with pytest.raises(InvalidArgument):
        e2e.E2EConfig(n_ant=4, pilot_len=4, n_bits=32, residual_blocks=0)
    cfg = e2e.E2EConfig(n_ant=8, pilot_len=4, n_bits=32, quant_bits=4)
    assert cfg.codeword_len == 8


def test_graph_parameter_count_closed_form():
    n, l, nbit, b, blocks = 16, 8, 64, 4, 10
    cfg = e2e.E2EConfig(n_ant=n, pilot_len=l, n_bits=nbit, quant_bits=b,
                        residual_blocks=blocks)
    g = e2e.build_e2e_graph(cfg)
    k = nbit // b
    pilot = 2 * n * l                                   # bias-free re/im pair
    enc = (2 * l * 2 * k + 2 * k) + (2 * k * k + k)     # two sigmoid FC layers
    dec_in = k * 2 * n + 2 * n                          # linear widening layer
    block = (2 * n * 8 * n + 8 * n) + (8 * n * 2 * n + 2 * n)
    assert g.param_count() == pilot + enc + dec_in + blocks * block


def test_graph_output_shape():
    cfg = e2e.E2EConfig(n_ant=6, pilot_len=3, n_bits=16, quant_bits=4,
                        residual_blocks=2)
    g = e2e.build_e2e_graph(cfg)
    out = g.predict(np.random.default_rng(0).normal(size=(7, 12)))
    assert out.shape == (7, 12)


def test_graph_single_quantizer_between_enc_and_dec():
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=2, n_bits=8, quant_bits=4,
                        residual_blocks=1)
    g = e2e.build_e2e_graph(cfg)
    kinds = [type(layer).__name__ for layer in g.layers]
    assert kinds.count("Quantize") == 1
    qi = kinds.index("Quantize")
    names = [layer.name for layer in g.layers]
    assert names[qi - 1].startswith("enc")
    assert names[qi + 1].startswith("dec")


def test_pilot_columns_power_projected():
    cfg = e2e.E2EConfig(n_ant=8, pilot_len=4, n_bits=32, power=2.5)
    g = e2e.build_e2e_graph(cfg)
    x = e2e.pilot_matrix(g)
    assert x.shape == (8, 4)
    np.testing.assert_allclose(np.sum(np.abs(x) ** 2, axis=0), 2.5, rtol=1e-12)


# ---------------------------------------------------------------------------
# codeword
# ---------------------------------------------------------------------------

def test_codeword_roundtrip_exact():
    for bits in (1, 2, 4, 8):
        mids = nn.quantizer_midpoints(bits)
        cw = e2e.Codeword(levels=mids, bits=bits)
        back = e2e.Codeword.from_bits(cw.to_bits(), bits)
        np.testing.assert_array_equal(back.levels, mids)


def test_codeword_bit_length():
    cw = e2e.Codeword(levels=np.array([0.125, 0.625]), bits=2)
    assert cw.to_bits().size == 4


def test_codeword_bad_bitstream():
    with pytest.raises(InvalidArgument):
        e2e.Codeword.from_bits([1, 0, 1], bits=2)


# ---------------------------------------------------------------------------
# nmse
# ---------------------------------------------------------------------------

def test_nmse_perfect_sentinel():
    h = np.array([[1.0 + 1j, 2.0]])
    linear, db = e2e.nmse(h, h)
    assert linear == 0.0
    assert db == float("-inf")


def test_nmse_zero_estimate():
    h = np.array([[1.0 + 1j, 2.0]])
    linear, db = e2e.nmse(h, np.zeros_like(h))
    assert linear == pytest.approx(1.0)
    assert db == pytest.approx(0.0)


def test_nmse_half_example():
    linear, db = e2e.nmse([[1.0, 1.0]], [[1.0, 0.0]])
    assert linear == pytest.approx(0.5)
    assert db == pytest.approx(10 * np.log10(0.5))


def test_nmse_rejects_zero_true():
    with pytest.raises(InvalidArgument):
        e2e.nmse([[0.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(InvalidArgument):
        e2e.nmse([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# LS / MMSE baselines
# ---------------------------------------------------------------------------

def test_ls_exact_recovery_square_pilot():
    rng = np.random.default_rng(2)
    h = rng.normal(size=4) + 1j * rng.normal(size=4)
    x = np.sqrt(2.0) * np.eye(4)
    y = h @ x
    np.testing.assert_allclose(e2e.ls_estimate(y, x), h, atol=1e-12)


def test_ls_beats_random_perturbations():
    rng = np.random.default_rng(3)
    n, l = 8, 3
    h = rng.normal(size=n) + 1j * rng.normal(size=n)
    x = rng.normal(size=(n, l)) + 1j * rng.normal(size=(n, l))
    y = h @ x + 0.1 * (rng.normal(size=l) + 1j * rng.normal(size=l))
    est = e2e.ls_estimate(y, x)
    res = np.linalg.norm(y - est @ x)
    for _ in range(100):
        pert = est + 0.01 * (rng.normal(size=n) + 1j * rng.normal(size=n))
        assert np.linalg.norm(y - pert @ x) >= res - 1e-12


def test_ls_minimum_norm():
    rng = np.random.default_rng(4)
    n, l = 6, 2
    h = rng.normal(size=n) + 1j * rng.normal(size=n)
    x = rng.normal(size=(n, l)) + 1j * rng.normal(size=(n, l))
    est = e2e.ls_estimate(h @ x, x)
    # any left-null-space component of X^H increases the estimate norm
    q, _ = np.linalg.qr(x, mode="complete")
    null = q[:, l:].conj().T
    for k in range(null.shape[0]):
        bumped = est + 0.5 * null[k]
        np.testing.assert_allclose(bumped @ x, est @ x, atol=1e-10)
        assert np.linalg.norm(bumped) > np.linalg.norm(est)


def test_mmse_prior_dominates_at_high_noise():
    rng = np.random.default_rng(5)
    h = rng.normal(size=(40, 4)) + 1j * rng.normal(size=(40, 4))
    mu, cov = e2e.channel_statistics(h)
    x = np.eye(4)
    y = h[0] @ x
    est = e2e.mmse_estimate(y, x, noise_var=1e12, channel_mean=mu, channel_cov=cov)
    np.testing.assert_allclose(est, mu, atol=1e-6)


def test_mmse_exact_recovery_noiseless():
    rng = np.random.default_rng(6)
    h = rng.normal(size=(40, 4)) + 1j * rng.normal(size=(40, 4))
    mu, cov = e2e.channel_statistics(h)
    x = np.sqrt(3.0) * np.eye(4)
    y = h[1] @ x
    est = e2e.mmse_estimate(y, x, noise_var=0.0, channel_mean=mu, channel_cov=cov)
    np.testing.assert_allclose(est, h[1], atol=1e-9)


def test_mmse_scalar_wiener():
    # N = L = 1: h ~ (mu, c), y = h x + z. The Wiener estimate is
    # mu + (y - mu x) * conj(x) c / (|x|^2 c + sigma^2).
    mu, c, x, s2 = 0.3 + 0.1j, 2.0, 1.5 - 0.5j, 0.7
    y = 1.1 + 0.2j
    want = mu + (y - mu * x) * np.conj(x) * c / (abs(x) ** 2 * c + s2)
    got = e2e.mmse_estimate(
        np.array([y]), np.array([[x]]), s2, np.array([mu]), np.array([[c]]))
    np.testing.assert_allclose(got, [want], atol=1e-12)


def test_mmse_batch_rows():
    rng = np.random.default_rng(7)
    h = rng.normal(size=(30, 4)) + 1j * rng.normal(size=(30, 4))
    mu, cov = e2e.channel_statistics(h)
    x = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    y = h[:5] @ x
    est = e2e.mmse_estimate(y, x, 0.1, mu, cov)
    assert est.shape == (5, 4)
    one = e2e.mmse_estimate(y[2], x, 0.1, mu, cov)
    np.testing.assert_allclose(one, est[2], atol=1e-12)


def test_channel_statistics_shapes():
    rng = np.random.default_rng(8)
    h = rng.normal(size=(20, 3)) + 1j * rng.normal(size=(20, 3))
    mu, cov = e2e.channel_statistics(h)
    assert mu.shape == (3,) and cov.shape == (3, 3)
    np.testing.assert_allclose(cov, cov.conj().T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(cov) > -1e-10)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def test_train_zero_epochs_keeps_parameters():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=4, n_bits=32, epochs=0,
                        residual_blocks=2, batch_size=8)
    g = e2e.build_e2e_graph(cfg)
    before = {k: v.copy() for k, v in g.parameters().items()}
    e2e.train_e2e(g, ds, "main", cfg)
    after = g.parameters()
    for k in before:
        np.testing.assert_array_equal(before[k], after[k])


def test_training_reduces_nmse():
    ds = toy_dataset(n_ant=4, rows=4, cols=5)
    base = dict(n_ant=4, pilot_len=4, n_bits=32, residual_blocks=2,
                batch_size=8, seed=1)
    g1 = e2e.build_e2e_graph(e2e.E2EConfig(epochs=1, **base))
    e2e.train_e2e(g1, ds, "main", e2e.E2EConfig(epochs=1, **base))
    g2 = e2e.build_e2e_graph(e2e.E2EConfig(epochs=200, **base))
    e2e.train_e2e(g2, ds, "main", e2e.E2EConfig(epochs=200, **base))
    h = ds.channels("train", "main")
    out1 = e2e.from_real_halves(g1.predict(e2e.to_real_halves(h)))
    out2 = e2e.from_real_halves(g2.predict(e2e.to_real_halves(h)))
    assert e2e.nmse(h, out2)[0] < e2e.nmse(h, out1)[0]


def test_pilot_projected_after_training():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=2, n_bits=16, epochs=5,
                        residual_blocks=1, batch_size=8, power=1.0)
    g = e2e.build_e2e_graph(cfg)
    e2e.train_e2e(g, ds, "side", cfg)
    x = e2e.pilot_matrix(g)
    np.testing.assert_allclose(np.sum(np.abs(x) ** 2, axis=0), 1.0, atol=1e-6)


def test_train_records_history():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=2, n_bits=16, epochs=3,
                        residual_blocks=1, batch_size=8)
    _, hist = e2e.train_e2e(ds and e2e.build_e2e_graph(cfg), ds, "main", cfg)
    assert len(hist) == 3
    assert {"epoch", "train_loss", "val_score"} <= set(hist[0])


def test_evaluate_deterministic_with_seed():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=2, n_bits=16, epochs=2,
                        residual_blocks=1, batch_size=8)
    g = e2e.build_e2e_graph(cfg)
    e2e.train_e2e(g, ds, "main", cfg)
    a = e2e.evaluate_pipeline(g, ds, "test", "main", 10.0, seed=5)
    b = e2e.evaluate_pipeline(g, ds, "test", "main", 10.0, seed=5)
    assert a["nmse_db"] == b["nmse_db"]
    np.testing.assert_array_equal(a["per_sample"], b["per_sample"])


def test_evaluate_high_snr_not_worse():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=4, n_bits=32, epochs=150,
                        residual_blocks=2, batch_size=8, seed=0)
    g = e2e.build_e2e_graph(cfg)
    e2e.train_e2e(g, ds, "main", cfg)
    hi = e2e.evaluate_pipeline(g, ds, "test", "main", None, seed=1)["nmse_linear"]
    lo = e2e.evaluate_pipeline(g, ds, "test", "main", 0.0, seed=1)["nmse_linear"]
    assert hi <= lo


def test_untrained_model_near_zero_db_or_worse():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=2, n_bits=16, residual_blocks=1)
    g = e2e.build_e2e_graph(cfg)
    rec = e2e.evaluate_pipeline(g, ds, "test", "main", 10.0, seed=2)
    assert rec["nmse_db"] > -3.0


def test_unknown_split_rejected():
    ds = toy_dataset()
    cfg = e2e.E2EConfig(n_ant=4, pilot_len=2, n_bits=16, residual_blocks=1)
    g = e2e.build_e2e_graph(cfg)
    with pytest.raises(InvalidArgument):
        e2e.evaluate_pipeline(g, ds, "holdout", "main", 10.0, seed=0)
