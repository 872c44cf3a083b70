"""Loss assembly and the optimization loop.

The loss is plain L1 in meters: joints, full-mesh vertices, and every
per-block coarse prediction against (joints || coarse vertices), summed with
unit weights. All run-to-run nondeterminism is removed by deriving every rng
from (seed, epoch, sample index), so shuffling batches cannot change what a
sample sees and resumed runs replay the original stream exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import Frame
from .fusion import DEPTH, MaskConfig
from .nn import collect_grads, wrap
from .tensor import AdamState, adam_step, backward
from .variants import BaseModel, ModelOutput


class TrainingAborted(RuntimeError):
    pass


@dataclass
class LossReport:
    """Per-term L1 losses in meters (mean absolute per coordinate)."""

    total: float
    l1_joints: float
    l1_verts_full: float
    l1_coarse_per_layer: list[float]


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 4
    seed: int = 0
    scale: str = "desk"
    mask_modality_prob: float = 0.3
    mask_token_frac: float = 0.3

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def mask(self) -> MaskConfig:
        return MaskConfig(modality_prob=self.mask_modality_prob,
                          max_token_frac=self.mask_token_frac)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        data = json.loads(Path(path).read_text())
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def compute_loss(output: ModelOutput, frame: Frame) -> tuple[T.Array, LossReport]:
    """Assemble the training loss graph; returns (scalar node, report)."""
    if output.pose_params is not None:
        if frame.pose is None:
            raise ValueError("parametric training needs pose ground truth in the frame")
        target = T.constant(frame.pose.as_vector().reshape(1, -1))
        term = T.mean_all(T.absolute(T.sub(output.pose_params, target)))
        report = LossReport(total=term.item(), l1_joints=term.item(),
                            l1_verts_full=0.0, l1_coarse_per_layer=[0.0] * DEPTH)
        return term, report

    if output.joints.shape != frame.gt_joints.shape:
        raise T.ShapeError(f"loss: joint shapes differ, {output.joints.shape} "
                           f"vs {frame.gt_joints.shape}")
    if output.verts_full.shape != frame.gt_verts_full.shape:
        raise T.ShapeError(f"loss: vertex shapes differ, {output.verts_full.shape} "
                           f"vs {frame.gt_verts_full.shape}")

    t_joints = T.mean_all(T.absolute(T.sub(output.joints, T.constant(frame.gt_joints))))
    t_verts = T.mean_all(T.absolute(T.sub(output.verts_full, T.constant(frame.gt_verts_full))))
    coarse_gt = T.constant(np.concatenate([frame.gt_joints, frame.gt_verts_coarse], axis=0))
    t_layers = [T.mean_all(T.absolute(T.sub(pred, coarse_gt))) for pred in output.per_layer]

    total = T.add(t_joints, t_verts)
    for t in t_layers:
        total = T.add(total, t)
    report = LossReport(total=total.item(), l1_joints=t_joints.item(),
                        l1_verts_full=t_verts.item(),
                        l1_coarse_per_layer=[t.item() for t in t_layers])
    return total, report


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    curve: list[dict] = field(default_factory=list)
    checkpoint_dir: Path | None = None
    final_checkpoint: Path | None = None


def _sample_rng(seed: int, epoch: int, idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, 2, epoch, idx)))


def train(model: BaseModel, frames: list[Frame], config: TrainConfig,
          out_dir=None, resume_from=None) -> TrainResult:
    """Train a variant; deterministic given (config.seed, dataset).

    Writes one checkpoint per epoch (params + optimizer moments + counters)
    plus a running ``curve.csv`` when ``out_dir`` is given. ``resume_from``
    restores params, optimizer state and the epoch counter, and because all
    rngs are keyed by (seed, epoch, index) the resumed run is bitwise
    identical to an unbroken one.
    """
    if not frames:
        raise ValueError("train: empty dataset")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = 0
    step = 0
    if resume_from is not None:
        arrays, extra = load_checkpoint(resume_from)
        params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
        state = AdamState(
            m={k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")},
            v={k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")},
            t=extra["adam_t"])
        start_epoch = extra["epoch"]
        step = extra["step"]
    else:
        params = model.init_params(config.seed)
        state = AdamState.init(params)

    n = len(frames)
    curve: list[dict] = []
    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((config.seed, 1, epoch))).permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            wrapped = wrap(params)
            totals = []
            reports = []
            try:
                for idx in batch:
                    rng = _sample_rng(config.seed, epoch, int(idx))
                    out = model.forward(wrapped, frames[idx], training=True, rng=rng)
                    tot, rep = compute_loss(out, frames[idx])
                    totals.append(tot)
                    reports.append(rep)
                batch_loss = totals[0]
                for t in totals[1:]:
                    batch_loss = T.add(batch_loss, t)
                batch_loss = T.scale(batch_loss, 1.0 / len(totals))
                backward(batch_loss)
            except T.GraphError as e:
                raise TrainingAborted(
                    f"non-finite value at epoch {epoch} step {step}: {e}") from e
            grads = collect_grads(wrapped)
            adam_step(params, grads, state, lr=config.lr)
            step += 1
            curve.append(_curve_row(step, reports))
        if out_dir is not None:
            _write_epoch(out_dir, params, state, config, epoch, step, curve)

    result = TrainResult(params=params, curve=curve)
    if out_dir is not None:
        result.checkpoint_dir = out_dir
        result.final_checkpoint = out_dir / f"epoch_{config.epochs:04d}"
    return result


def _curve_row(step: int, reports: list[LossReport]) -> dict:
    k = len(reports)
    row = {
        "step": step,
        "total": sum(r.total for r in reports) / k,
        "joints": sum(r.l1_joints for r in reports) / k,
        "verts": sum(r.l1_verts_full for r in reports) / k,
    }
    depth = len(reports[0].l1_coarse_per_layer)
    for i in range(depth):
        row[f"coarse_{i}"] = sum(r.l1_coarse_per_layer[i] for r in reports) / k
    return row


def _write_epoch(out_dir: Path, params, state: AdamState, config: TrainConfig,
                 epoch: int, step: int, curve: list[dict]) -> None:
    arrays = {f"param.{k}": v for k, v in params.items()}
    arrays.update({f"adam.m.{k}": v for k, v in state.m.items()})
    arrays.update({f"adam.v.{k}": v for k, v in state.v.items()})
    extra = {"epoch": epoch + 1, "step": step, "adam_t": state.t,
             "config": asdict(config)}
    save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}", arrays, extra)
    write_curve(out_dir / "curve.csv", curve)


def write_curve(path, curve: list[dict]) -> None:
    if not curve:
        return
    cols = list(curve[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in curve:
            writer.writerow([row["step"]] + [f"{row[c]:.8f}" for c in cols[1:]])


def load_params(checkpoint_path) -> dict[str, np.ndarray]:
    arrays, _ = load_checkpoint(checkpoint_path)
    return {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
