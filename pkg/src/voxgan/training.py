"""Adversarial training loops: 3D-GAN with the accuracy gate, and the
three-step VAE-GAN update (discriminator, encoder, generator)."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import losses
from .checkpoint import Checkpoint, save_checkpoint
from .models import Discriminator, Generator, ImageEncoder, ScaleProfile
from .optim import Adam
from .rng import RngStream, sample_latent
from .tensor import Tensor, concat, no_grad

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when a parameter becomes NaN or infinite."""


@dataclass
class GanTrainConfig:
    lr_g: float = 0.0025
    lr_d: float = 1e-5
    batch_size: int = 100
    d_accuracy_gate: float = 0.80
    seed: int = 0
    epochs: int = 1
    beta1: float = 0.5
    prior: str = "uniform01"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0.0 <= self.d_accuracy_gate <= 1.0:
            raise ValueError("accuracy gate must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VaeGanTrainConfig(GanTrainConfig):
    alpha1: float = 5.0
    alpha2: float = 1e-4
    prior: str = "standard_normal"
    lr_e: Optional[float] = None

    def __post_init__(self):
        super().__post_init__()
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha weights must be non-negative")


@dataclass
class TrainRecord:
    batch: int
    epoch: int
    d_updated: bool
    d_accuracy: float
    d_loss: float
    g_loss: float
    adv_value: float
    e_loss: float = float("nan")
    kl: float = float("nan")
    recon: float = float("nan")
    recon_weighted: float = float("nan")
    wall_time: float = 0.0


CSV_COLUMNS = [f.name for f in fields(TrainRecord) if f.name != "wall_time"]


@dataclass
class TrainLog:
    records: List[TrainRecord] = field(default_factory=list)

    def append(self, rec: TrainRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, include_timing: bool = False) -> str:
        """One row per batch, columns in ``CSV_COLUMNS`` order.

        Wall time is left out unless asked for so that logs of identical
        runs are byte-identical.
        """
        cols = CSV_COLUMNS + (["wall_time"] if include_timing else [])
        rows = [",".join(cols)]
        for r in self.records:
            vals = []
            for c in cols:
                v = getattr(r, c)
                vals.append(str(int(v)) if isinstance(v, (bool, int, np.integer)) else repr(float(v)))
            rows.append(",".join(vals))
        return "\n".join(rows) + "\n"

    def gate_violations(self, gate: float = 0.80) -> List[int]:
        """Batches t >= 2 where the update decision disagrees with accuracy(t-1) <= gate."""
        bad = []
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.d_updated != (prev.d_accuracy <= gate):
                bad.append(cur.batch)
        return bad


@dataclass
class StepResult:
    d_updated: bool
    d_accuracy: float
    d_loss: float
    g_loss: float
    adv_value: float
    e_loss: float = float("nan")
    kl: float = float("nan")
    recon: float = float("nan")
    recon_weighted: float = float("nan")


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _accuracy(real_logit: np.ndarray, fake_logit: np.ndarray) -> float:
    correct = np.count_nonzero(real_logit > 0) + np.count_nonzero(fake_logit < 0)
    return correct / (real_logit.size + fake_logit.size)


def _should_update_d(prev_accuracy: Optional[float], gate: float) -> bool:
    return prev_accuracy is None or prev_accuracy <= gate


def _joint_logits(D, real, fake):
    """Score reals and fakes in one batch so batch norm sees both together."""
    n = real.shape[0]
    logit, _ = D.logits(concat([real, fake], axis=0))
    return logit[:n], logit[n:]


def _discriminator_step(D, opt_d, real, fake_data, gate, prev_accuracy):
    opt_d.zero_grad()
    real_logit, fake_logit = _joint_logits(D, real, Tensor(fake_data))
    d_loss = losses.discriminator_objective_logits(real_logit, fake_logit)
    acc = _accuracy(real_logit.data, fake_logit.data)
    adv = losses.pair_value_logits(real_logit.data, fake_logit.data)
    update = _should_update_d(prev_accuracy, gate)
    if update:
        d_loss.backward()
        opt_d.step()
    opt_d.zero_grad()
    return update, acc, float(d_loss.data), adv


def gan_train_step(G: Generator, D: Discriminator, opt_g: Adam, opt_d: Adam, real_batch,
                   config: GanTrainConfig, prev_d_accuracy: Optional[float], stream: RngStream) -> StepResult:
    """One adversarial update on a batch of real grids.

    D is updated only when ``prev_d_accuracy`` (None on the first batch) is at
    most the gate; G is always updated on ``-log D(G(z))`` scored by the
    current D in a joint batch with the reals.
    """
    real = _as_tensor(real_batch, G.dtype)
    n = real.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    z = sample_latent(stream, config.prior, G.profile.latent_dim, n, dtype=G.dtype)
    opt_g.zero_grad()
    fake = G(z)
    update, acc, d_loss, adv = _discriminator_step(D, opt_d, real, fake.data, config.d_accuracy_gate,
                                                   prev_d_accuracy)
    _, fake_logit = _joint_logits(D, real, fake)
    g_loss = losses.generator_objective_logits(fake_logit)
    g_loss.backward()
    opt_g.step()
    opt_g.zero_grad()
    D.zero_grad()
    return StepResult(update, acc, d_loss, float(g_loss.data), adv)


def vaegan_train_step(E: ImageEncoder, G: Generator, D: Discriminator, opt_e: Adam, opt_g: Adam, opt_d: Adam,
                      images, shapes, config: VaeGanTrainConfig, prev_d_accuracy: Optional[float],
                      stream: RngStream) -> StepResult:
    """Sequential D, E, G updates on one batch of (image, shape) pairs."""
    y = _as_tensor(images, E.dtype)
    x = _as_tensor(shapes, G.dtype)
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"{y.shape[0]} images but {x.shape[0]} shapes")
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    z_t = sample_latent(stream, config.prior, G.profile.latent_dim, n, dtype=G.dtype)

    # Step 1: discriminator on real shapes vs G(z_t).
    with no_grad():
        fake_data = G(z_t).data
    update, acc, d_loss, adv = _discriminator_step(D, opt_d, x, fake_data, config.d_accuracy_gate,
                                                   prev_d_accuracy)

    # Step 2: encoder on alpha1 * KL + alpha2 * recon.
    opt_e.zero_grad()
    mu, log_var = E(y)
    z = losses.reparameterize(mu, log_var, stream)
    kl = losses.kl_gaussian(mu, log_var)
    recon = losses.recon_loss(G(z), x)
    e_loss = kl * config.alpha1 + recon * config.alpha2
    e_loss.backward()
    opt_e.step()
    opt_e.zero_grad()
    G.zero_grad()

    # Step 3: generator on -log D(G(z_t)) + alpha2 * recon, encoder frozen.
    with no_grad():
        mu3, log_var3 = E(y)
        z_e = losses.reparameterize(mu3, log_var3, stream).data
    opt_g.zero_grad()
    _, fake_logit = _joint_logits(D, x, G(z_t))
    adv_g = losses.generator_objective_logits(fake_logit)
    recon3 = losses.recon_loss(G(Tensor(z_e)), x)
    g_loss = adv_g + recon3 * config.alpha2
    g_loss.backward()
    opt_g.step()
    opt_g.zero_grad()
    D.zero_grad()
    r = float(recon.data)
    return StepResult(update, acc, d_loss, float(g_loss.data), adv, float(e_loss.data), float(kl.data),
                      r, r * config.alpha2)


def _check_finite(nets) -> None:
    for key, net in nets.items():
        for name, p in net.parameters().items():
            if not np.all(np.isfinite(p.data)):
                raise NumericalError(f"non-finite values in {key}.{name}")


def build_networks(kind: str, profile: ScaleProfile, seed: int, dtype=np.float32) -> dict:
    root = RngStream(seed)
    nets = {
        "G": Generator(profile, root.child("init-G"), dtype),
        "D": Discriminator(profile, root.child("init-D"), dtype),
    }
    if kind == "vaegan":
        nets["E"] = ImageEncoder(profile, root.child("init-E"), dtype)
    return nets


def train(kind: str, items: Sequence, config: GanTrainConfig, profile: ScaleProfile,
          out_dir=None, nets: Optional[dict] = None, progress=None):
    """Run ``config.epochs`` passes over ``items`` and return (Checkpoint, TrainLog).

    ``items`` are :class:`~voxgan.synthetic.ShapeItem`-like objects with
    ``grid`` (and ``image`` for VAE-GAN). Each epoch is a seeded shuffle;
    the trailing partial batch is dropped. With ``out_dir`` a checkpoint is
    written every ``config.checkpoint_every`` batches and at the end.
    """
    if kind not in ("gan", "vaegan"):
        raise ValueError(f"unknown model kind {kind!r}")
    if len(items) == 0:
        raise ValueError("dataset is empty")
    nets = nets or build_networks(kind, profile, config.seed)
    G, D = nets["G"], nets["D"]
    E = nets.get("E")
    for net in nets.values():
        net.train()
    opts = {"G": Adam(G.parameters(), config.lr_g, config.beta1), "D": Adam(D.parameters(), config.lr_d, config.beta1)}
    if kind == "vaegan":
        lr_e = config.lr_g if config.lr_e is None else config.lr_e
        opts["E"] = Adam(E.parameters(), lr_e, config.beta1)
    root = RngStream(config.seed)
    shuffle_rng = root.child("shuffle")
    step_rng = root.child("steps")
    res = profile.resolution
    grids = np.stack([np.asarray(it.grid, dtype=np.float32) for it in items])
    if grids.shape[1:] != (res, res, res):
        raise ValueError(f"dataset grids are {grids.shape[1:]}, profile expects {res}^3")
    images = np.stack([it.image for it in items]).astype(np.float32) if kind == "vaegan" else None
    bs = min(config.batch_size, len(items))
    log = TrainLog()
    prev_acc = None
    batch_no = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def snapshot():
        return Checkpoint(profile, config.prior, nets, opts,
                          {"kind": kind, "config": config.to_dict(), "batches": batch_no})

    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(items))
        for start in range(0, len(items) - bs + 1, bs):
            idx = order[start:start + bs]
            if kind == "gan":
                res_ = gan_train_step(G, D, opts["G"], opts["D"], grids[idx], config, prev_acc, step_rng)
            else:
                res_ = vaegan_train_step(E, G, D, opts["E"], opts["G"], opts["D"], images[idx], grids[idx],
                                         config, prev_acc, step_rng)
            _check_finite(nets)
            batch_no += 1
            prev_acc = res_.d_accuracy
            rec = TrainRecord(batch_no, epoch, **asdict(res_), wall_time=time.perf_counter() - t0)
            log.append(rec)
            if progress is not None:
                progress(rec)
            if out is not None and config.checkpoint_every and batch_no % config.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{batch_no:06d}.vxg", snapshot())
        logger.debug("epoch %d done after %d batches", epoch, batch_no)
    ckpt = snapshot()
    if out is not None:
        save_checkpoint(out / "final.vxg", ckpt)
        (out / "trainlog.csv").write_text(log.to_csv())
    return ckpt, log
