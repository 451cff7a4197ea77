"""SGD training loops for the joint (pattern + network) and fixed-pattern
regimes, with temperature annealing, hardened-pattern validation, and
checksummed checkpointing.

Everything is reproducible from the config seed: batch randomness is a
function of (seed, iteration), the temperature is recomputed from the
iteration counter each step, and checkpoint save / restore / continue is
bit-identical to an uninterrupted run.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import data as dp
from . import reconnet, sensor
from .autodiff import Tensor
from .patterns import HardPattern

# Reference iteration count the published annealing constant was tuned for;
# shorter runs rescale gamma so the final temperature matches.
REFERENCE_ITERS = 1_500_000
DEFAULT_GAMMA = 2.5e-5

CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good checkpoint state."""

    def __init__(self, iteration, last_good):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.last_good = last_good


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 1e-3
    iters: int = REFERENCE_ITERS
    gamma: float = DEFAULT_GAMMA
    noise_std: float = 0.01
    seed: int = 0
    validate_every: int = 1000
    checkpoint_every: int = 0          # 0 disables periodic checkpoints
    fine_tune: Optional[tuple] = None  # (extra iters, lr) second phase
    momentum: float = 0.0
    P: int = 8
    K: int = 24
    F: int = 128
    channels: int = 4
    gate_softmax: bool = False
    warm_start: bool = False
    val_batches: int = 4

    def __post_init__(self):
        if min(self.batch_size, self.iters, self.validate_every) < 1 or self.lr <= 0:
            raise ValueError("batch_size, iters, validate_every must be >= 1 and lr > 0")
        if self.validate_every > self.iters:
            raise ValueError("validate_every must be <= iters")

    def effective_gamma(self) -> float:
        """Gamma rescaled so the final temperature matches the reference run."""
        return self.gamma * REFERENCE_ITERS / self.iters


@dataclass
class ValidationRecord:
    iteration: int
    train_loss: float
    val_loss: float
    mean_entropy: float
    hard_pattern: Optional[np.ndarray] = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec: ValidationRecord):
        self.records.append(rec)

    def lines(self):
        return [f"{r.iteration}, {r.train_loss:.8e}, {r.val_loss:.8e}, {r.mean_entropy:.6f}"
                for r in self.records]

    def write(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def sgd_step(params, lr: float, momentum: float = 0.0, velocity=None):
    """Plain SGD update p <- p - lr * g, in place; grads are cleared.

    With momentum > 0 a classical velocity buffer is used (off by default).
    """
    for i, p in enumerate(params):
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ad.ShapeError("gradient shape mismatch")
        if momentum > 0.0:
            v = velocity[i]
            v *= momentum
            v += p.grad
            p.data -= lr * v
        else:
            # grads are uniquely owned here, so scale in place
            np.multiply(p.grad, lr, out=p.grad)
            np.subtract(p.data, p.grad, out=p.data)
        p.grad = None


def _val_batches(val_chans, config: TrainConfig):
    """Fixed validation batches; seed stream disjoint from training batches."""
    return [
        dp.sample_patch_pairs(val_chans, config.P, config.batch_size,
                              [config.seed, 0x5EED], config.noise_std, batch_index=b)
        for b in range(config.val_batches)
    ]


def _eval_loss(selection, batches, params) -> float:
    total = 0.0
    for batch in batches:
        s = sensor.measure(selection, batch.x)
        out = reconnet.forward(s, params)
        total += float(ad.mse_loss(out.y_hat, batch.y).data)
    return total / len(batches)


def train_joint(config: TrainConfig, train_imgs, val_imgs,
                checkpoint_path=None, resume_from=None, stop_at=None):
    """Jointly learn the sensor pattern and the reconstruction network.

    Returns (SensorPattern, NetParams, TrainLog).  Validation always uses
    the hardened pattern; the training loss always uses the soft one.
    ``stop_at`` halts early (after checkpointing) while keeping the full
    run's annealing schedule, so a resumed run is bit-identical.
    """
    train_chans = [dp.build_channels(im) for im in train_imgs]
    val_chans = [dp.build_channels(im) for im in val_imgs]
    schedule = sensor.AnnealSchedule(config.effective_gamma())

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        start = state["iteration"]
        pattern = sensor.SensorPattern(config.P, config.channels,
                                       Tensor(state["sensor_w"], requires_grad=True))
        params = _params_from_state(config, state)
        log = TrainLog()
    else:
        start = 0
        pattern = sensor.SensorPattern.init(config.P, config.channels, seed=config.seed)
        params = reconnet.init_params(config.P, config.K, config.F, seed=config.seed + 1,
                                      gate_softmax=config.gate_softmax,
                                      warm_start=config.warm_start)
        log = TrainLog()

    vbatches = _val_batches(val_chans, config)
    all_params = [pattern.w] + params.parameters()
    velocity = [np.zeros_like(p.data) for p in all_params] if config.momentum > 0 else None
    last_good = _make_state(config, 0, pattern, params)
    train_loss = float("nan")
    end = config.iters if stop_at is None else min(stop_at, config.iters)

    if start == 0:
        hard = sensor.harden(pattern)
        log.append(ValidationRecord(
            0, float("nan"),
            _eval_loss(sensor.one_hot(hard, config.channels), vbatches, params),
            sensor.mean_entropy(sensor.soft_select(pattern, schedule.alpha_at(0))),
            hard.copy()))

    for t in range(start, end):
        alpha = schedule.alpha_at(t)
        batch = dp.sample_patch_pairs(train_chans, config.P, config.batch_size,
                                      config.seed, config.noise_std, batch_index=t)
        selection = sensor.soft_select(pattern, alpha)
        s = sensor.measure(selection, batch.x)
        out = reconnet.forward(s, params)
        loss = ad.mse_loss(out.y_hat, batch.y)
        train_loss = float(loss.data)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(t, last_good)
        ad.backward(loss)
        sgd_step(all_params, config.lr, config.momentum, velocity)

        t1 = t + 1
        if t1 % config.validate_every == 0 or t1 == config.iters:
            hard = sensor.harden(pattern)
            hard_sel = sensor.one_hot(hard, config.channels)
            val_loss = _eval_loss(hard_sel, vbatches, params)
            ent = sensor.mean_entropy(
                sensor.soft_select(pattern, schedule.alpha_at(t1)))
            log.append(ValidationRecord(t1, train_loss, val_loss, ent, hard.copy()))
        if config.checkpoint_every and t1 % config.checkpoint_every == 0:
            last_good = _make_state(config, t1, pattern, params)
            if checkpoint_path is not None:
                save_checkpoint(last_good, checkpoint_path)

    if checkpoint_path is not None:
        save_checkpoint(_make_state(config, end, pattern, params), checkpoint_path)
    return pattern, params, log


def train_fixed(hard_pattern: HardPattern, config: TrainConfig, train_imgs, val_imgs,
                checkpoint_path=None):
    """Train a reconstruction network from scratch for a fixed hard pattern.

    Supports the two-phase schedule: ``config.iters`` at ``config.lr``, then
    ``config.fine_tune = (extra_iters, lr2)``.  Returns (NetParams, TrainLog).
    """
    train_chans = [dp.build_channels(im) for im in train_imgs]
    val_chans = [dp.build_channels(im) for im in val_imgs]
    if hard_pattern.period != config.P:
        raise ValueError("pattern period does not match config.P")
    selection = sensor.one_hot(hard_pattern.channels, config.channels)

    params = reconnet.init_params(config.P, config.K, config.F, seed=config.seed + 1,
                                  gate_softmax=config.gate_softmax,
                                  warm_start=config.warm_start)
    log = TrainLog()
    vbatches = _val_batches(val_chans, config)
    plist = params.parameters()
    velocity = [np.zeros_like(p.data) for p in plist] if config.momentum > 0 else None
    last_good = _make_state(config, 0, None, params)

    phases = [(config.iters, config.lr)]
    if config.fine_tune is not None:
        phases.append((int(config.fine_tune[0]), float(config.fine_tune[1])))

    log.append(ValidationRecord(0, float("nan"), _eval_loss(selection, vbatches, params), 0.0))
    t = 0
    for phase_iters, lr in phases:
        for _ in range(phase_iters):
            batch = dp.sample_patch_pairs(train_chans, config.P, config.batch_size,
                                          config.seed, config.noise_std, batch_index=t)
            s = sensor.measure(selection, batch.x)
            out = reconnet.forward(s, params)
            loss = ad.mse_loss(out.y_hat, batch.y)
            train_loss = float(loss.data)
            if not np.isfinite(train_loss):
                raise TrainingDiverged(t, last_good)
            ad.backward(loss)
            sgd_step(plist, lr, config.momentum, velocity)
            t += 1
            if t % config.validate_every == 0 or t == sum(p for p, _ in phases):
                val_loss = _eval_loss(selection, vbatches, params)
                log.append(ValidationRecord(t, train_loss, val_loss, 0.0))
            if config.checkpoint_every and t % config.checkpoint_every == 0:
                last_good = _make_state(config, t, None, params)
                if checkpoint_path is not None:
                    save_checkpoint(last_good, checkpoint_path)

    if checkpoint_path is not None:
        save_checkpoint(_make_state(config, t, None, params), checkpoint_path)
    return params, log


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _make_state(config: TrainConfig, iteration: int, pattern, params) -> dict:
    state = {
        "iteration": iteration,
        "config": {"P": config.P, "K": config.K, "F": config.F,
                   "channels": config.channels, "seed": config.seed,
                   "gate_softmax": config.gate_softmax},
    }
    if pattern is not None:
        state["sensor_w"] = pattern.w.data.copy()
    for name, arr in params.state_arrays().items():
        state[f"net/{name}"] = arr.copy()
    return state


def _params_from_state(config: TrainConfig, state: dict) -> reconnet.NetParams:
    def t(name):
        return Tensor(state[f"net/{name}"], requires_grad=True)

    return reconnet.NetParams(
        P=config.P, K=config.K, F=config.F,
        w_log=t("w_log"), w_mix=t("w_mix"),
        conv1_k=t("conv1_k"), conv1_b=t("conv1_b"),
        conv2_k=t("conv2_k"), conv2_b=t("conv2_b"),
        w_gate=t("w_gate"), gate_b=t("gate_b"),
        gate_softmax=config.gate_softmax,
    )


def params_from_checkpoint(state: dict) -> reconnet.NetParams:
    """Rebuild NetParams from a loaded checkpoint's own stored config."""
    c = state["config"]
    cfg = TrainConfig(P=c["P"], K=c["K"], F=c["F"], channels=c["channels"],
                      seed=c["seed"], gate_softmax=c["gate_softmax"],
                      iters=1, batch_size=1, validate_every=1)
    return _params_from_state(cfg, state)


def save_checkpoint(state: dict, path) -> None:
    """Versioned binary container: magic, version, sha256, npz payload.

    Floats round-trip bit-exactly (npz stores raw IEEE bytes).
    """
    arrays = {k: v for k, v in state.items() if isinstance(v, np.ndarray)}
    meta = {k: v for k, v in state.items() if not isinstance(v, np.ndarray)}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("ascii"), dtype=np.uint8), **arrays)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(digest)
        fh.write(payload)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int.from_bytes(blob[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest, payload = blob[8:40], blob[40:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    with np.load(io.BytesIO(payload)) as npz:
        state = {k: npz[k] for k in npz.files if k != "__meta__"}
        meta = json.loads(npz["__meta__"].tobytes().decode("ascii"))
    state.update(meta)
    return state
