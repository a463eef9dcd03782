import numpy as np
import pytest

from voxgan import losses
from voxgan.checkpoint import checkpoint_bytes
from voxgan.optim import Adam
from voxgan.rng import RngStream, sample_latent
from voxgan.synthetic import SyntheticSpec, make_synthetic_dataset
from voxgan.training import (GanTrainConfig, TrainLog, TrainRecord, VaeGanTrainConfig, _should_update_d,
                             build_networks, gan_train_step, train, vaegan_train_step)
from voxgan.models import TINY

from conftest import MICRO, MICRO8


def _items(n, res=16, seed=0, kinds=("box",)):
    return make_synthetic_dataset(SyntheticSpec(kinds=kinds, seed=seed), n, res, 64)


def _snap(net):
    return {k: p.data.copy() for k, p in net.parameters().items()}


def _same(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


def test_gate_boundary():
    assert _should_update_d(None, 0.8)
    assert _should_update_d(0.80, 0.8)
    assert not _should_update_d(0.85, 0.8)


def test_config_defaults_and_validation():
    c = GanTrainConfig()
    assert (c.lr_g, c.lr_d, c.batch_size, c.d_accuracy_gate) == (0.0025, 1e-5, 100, 0.8)
    v = VaeGanTrainConfig()
    assert (v.alpha1, v.alpha2) == (5.0, 1e-4)
    with pytest.raises(ValueError):
        GanTrainConfig(lr_g=-1)
    with pytest.raises(ValueError):
        GanTrainConfig(d_accuracy_gate=1.5)
    with pytest.raises(ValueError):
        VaeGanTrainConfig(alpha1=-1)


def _step_setup(prev, lr_d=1e-3):
    nets = build_networks("gan", MICRO, 0)
    G, D = nets["G"], nets["D"]
    og, od = Adam(G.parameters(), 1e-3), Adam(D.parameters(), lr_d)
    grids = np.stack([it.grid for it in _items(4)])
    before = _snap(D)
    r = gan_train_step(G, D, og, od, grids, GanTrainConfig(), prev, RngStream(0))
    return r, before, _snap(D)


def test_step_skips_d_above_gate():
    r, before, after = _step_setup(0.85)
    assert not r.d_updated and _same(before, after)


def test_step_updates_d_at_gate():
    r, before, after = _step_setup(0.80)
    assert r.d_updated and not _same(before, after)
    assert 0.0 <= r.d_accuracy <= 1.0


def test_zero_lr_d_freezes_d():
    r, before, after = _step_setup(None, lr_d=0.0)
    assert r.d_updated and _same(before, after)


def test_empty_batch_rejected():
    nets = build_networks("gan", MICRO, 0)
    og, od = Adam(nets["G"].parameters(), 1e-3), Adam(nets["D"].parameters(), 1e-3)
    with pytest.raises(ValueError, match="empty"):
        gan_train_step(nets["G"], nets["D"], og, od, np.zeros((0, 16, 16, 16)), GanTrainConfig(), None,
                       RngStream(0))


def test_gate_audit_and_invariants():
    items = _items(48)
    cfg = GanTrainConfig(lr_g=2e-3, lr_d=1e-3, batch_size=4, epochs=2)
    shapes = None

    def check(rec):
        nonlocal shapes
        cur = {k: p.shape for k, p in nets["G"].parameters().items()}
        shapes = shapes or cur
        assert cur == shapes

    nets = build_networks("gan", MICRO, 0)
    _, log = train("gan", items, cfg, MICRO, nets=nets, progress=check)
    assert len(log) == 24
    assert log.records[0].d_updated
    assert log.gate_violations(0.8) == []


def test_gate_violation_detector():
    log = TrainLog()
    log.append(TrainRecord(1, 0, True, 0.9, 0, 0, 0))
    log.append(TrainRecord(2, 0, True, 0.5, 0, 0, 0))
    log.append(TrainRecord(3, 0, True, 0.5, 0, 0, 0))
    assert log.gate_violations(0.8) == [2]


@pytest.mark.parametrize("gate", [1.0, 0.0])
def test_extreme_gates(gate):
    items = _items(16, res=8)
    nets = build_networks("gan", MICRO8, 1)
    snaps = []
    cfg = GanTrainConfig(lr_d=1e-2, batch_size=4, epochs=2, d_accuracy_gate=gate)
    _, log = train("gan", items, cfg, MICRO8, nets=nets, progress=lambda r: snaps.append(_snap(nets["D"])))
    if gate == 1.0:
        assert all(r.d_updated for r in log.records)
    else:
        # Inclusive rule: only a previous accuracy of exactly zero re-opens the gate.
        for prev, cur in zip(log.records, log.records[1:]):
            assert cur.d_updated == (prev.d_accuracy == 0.0)
        frozen = [i for i, r in enumerate(log.records) if i > 0 and not r.d_updated]
        for i in frozen:
            assert _same(snaps[i - 1], snaps[i])


def test_partial_batch_dropped_and_bad_inputs():
    items = _items(10, res=8)
    _, log = train("gan", items, GanTrainConfig(batch_size=4, epochs=1), MICRO8)
    assert len(log) == 2
    with pytest.raises(ValueError, match="expects"):
        train("gan", _items(4), GanTrainConfig(batch_size=2), MICRO8)
    with pytest.raises(ValueError):
        train("gan", [], GanTrainConfig(), MICRO8)
    with pytest.raises(ValueError):
        train("flow", items, GanTrainConfig(), MICRO8)


def test_training_deterministic(tmp_path):
    items = _items(12, res=8)
    cfg = GanTrainConfig(lr_g=1e-3, lr_d=1e-3, batch_size=4, epochs=2, seed=7)
    a, la = train("gan", items, cfg, MICRO8, out_dir=tmp_path / "a")
    b, lb = train("gan", items, cfg, MICRO8, out_dir=tmp_path / "b")
    assert la.to_csv() == lb.to_csv()
    assert (tmp_path / "a" / "final.vxg").read_bytes() == (tmp_path / "b" / "final.vxg").read_bytes()
    assert checkpoint_bytes(a) == checkpoint_bytes(b)


def test_checkpoint_every(tmp_path):
    cfg = GanTrainConfig(batch_size=4, epochs=1, checkpoint_every=1)
    train("gan", _items(8, res=8), cfg, MICRO8, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "checkpoint_000001.vxg", "checkpoint_000002.vxg", "final.vxg", "trainlog.csv"]


def test_generator_descent_with_frozen_discriminator():
    drops = []
    for seed in range(5):
        nets = build_networks("gan", TINY, seed)
        G, D = nets["G"], nets["D"]
        D.eval()
        opt = Adam(G.parameters(), 2e-4)
        z = sample_latent(RngStream(seed), "uniform01", TINY.latent_dim, 8)
        vals = []
        for _ in range(50):
            opt.zero_grad()
            loss = losses.generator_objective_logits(D.logits(G(z))[0])
            loss.backward()
            opt.step()
            vals.append(float(loss.data))
        drops.append(np.diff(vals))
    mean_diff = np.mean(drops, axis=0)
    assert np.all(mean_diff <= 1e-6)


def _vae_setup(alpha1=5.0, alpha2=1e-4):
    nets = build_networks("vaegan", MICRO, 0)
    opts = {k: Adam(n.parameters(), 1e-3) for k, n in nets.items()}
    items = make_synthetic_dataset(SyntheticSpec(seed=0), 4, 16, 64)
    images = np.stack([it.image for it in items])
    shapes = np.stack([it.grid for it in items])
    return nets, opts, images, shapes, VaeGanTrainConfig(alpha1=alpha1, alpha2=alpha2)


def test_vaegan_step_ownership():
    nets, opts, images, shapes, cfg = _vae_setup()
    E, G, D = nets["E"], nets["G"], nets["D"]
    # Step 1 alone (E, G at zero lr): only D moves.
    before = {k: _snap(n) for k, n in nets.items()}
    zero = {k: Adam(n.parameters(), 0.0) for k, n in nets.items()}
    vaegan_train_step(E, G, D, zero["E"], zero["G"], opts["D"], images, shapes, cfg, None, RngStream(1))
    assert _same(before["E"], _snap(E)) and _same(before["G"], _snap(G))
    assert not _same(before["D"], _snap(D))
    # Step 2 alone (D gated off, G at zero lr): only E moves.
    before = {k: _snap(n) for k, n in nets.items()}
    r = vaegan_train_step(E, G, D, opts["E"], zero["G"], opts["D"], images, shapes, cfg, 1.0, RngStream(2))
    assert not r.d_updated
    assert _same(before["D"], _snap(D)) and _same(before["G"], _snap(G))
    assert not _same(before["E"], _snap(E))
    assert np.isfinite(r.kl) and r.kl > 0
    assert r.recon_weighted == pytest.approx(r.recon * 1e-4)


def test_vaegan_zero_alphas_freeze_encoder():
    nets, opts, images, shapes, cfg = _vae_setup(0.0, 0.0)
    before = _snap(nets["E"])
    vaegan_train_step(nets["E"], nets["G"], nets["D"], opts["E"], opts["G"], opts["D"], images, shapes, cfg,
                      None, RngStream(0))
    assert _same(before, _snap(nets["E"]))


def test_vaegan_count_mismatch():
    nets, opts, images, shapes, cfg = _vae_setup()
    with pytest.raises(ValueError, match="images"):
        vaegan_train_step(nets["E"], nets["G"], nets["D"], opts["E"], opts["G"], opts["D"], images[:3], shapes,
                          cfg, None, RngStream(0))


@pytest.mark.slow
def test_vaegan_recon_decreases():
    items = make_synthetic_dataset(SyntheticSpec(seed=0), 20, 16, 64)
    cfg = VaeGanTrainConfig(batch_size=20, epochs=200, lr_g=1e-3, lr_d=1e-4)
    _, log = train("vaegan", items, cfg, TINY)
    assert log.records[-1].recon < log.records[0].recon
    assert all(np.isfinite(r.kl) and r.kl > 0 for r in log.records)
