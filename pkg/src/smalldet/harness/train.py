"""Deterministic training loop for the toy detector.

The loss is a sum of three terms: positive-weighted objectness binary
cross-entropy over all cells, class binary cross-entropy over positive
cells, and the configured box loss over positive cells (a cell is positive
when an object center falls in it). The optimizer is Adam with decoupled
weight decay.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..losses import FocalerParams, batched_box_loss
from ..tensor import (NonFiniteError, Tape, Tensor, backward, ops, precision,
                      reset_grads, set_debug)
from .model import STRIDE, init_toy_model, model_forward, named_parameters


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    focaler_d: float = 0.0
    focaler_u: float = 0.95
    loss_kind: str = "focaler_siou"
    objectness_pos_weight: float = 16.0
    seed: int = 7
    precision: str = "single"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.objectness_pos_weight <= 0:
            raise ValueError("objectness_pos_weight must be positive")
        if self.loss_kind not in ("giou", "siou", "focaler_siou"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"unknown precision {self.precision!r}")
        FocalerParams(self.focaler_d, self.focaler_u)  # validates the pair

    def focaler(self):
        return FocalerParams(self.focaler_d, self.focaler_u)


class AdamW:
    """Adam with decoupled weight decay; state kept per parameter name."""

    def __init__(self, named_params, lr, weight_decay, beta1, beta2, eps=1e-8):
        self.named_params = named_params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in named_params}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data = p.data - self.lr * update - (self.lr * self.weight_decay) * p.data


def build_targets(per_image_gts, grid_hw, num_classes):
    """Positive-cell assignment for one batch.

    Returns (obj_target [B,1,Hg,Wg], n_idx, i_idx, j_idx, cls_target [M,nc],
    gt_boxes [M,4]); the first ground truth claiming a cell wins.
    """
    hg, wg = grid_hw
    b = len(per_image_gts)
    obj = np.zeros((b, 1, hg, wg), dtype=np.float64)
    n_idx, i_idx, j_idx, cls_rows, box_rows = [], [], [], [], []
    for n, gts in enumerate(per_image_gts):
        seen = set()
        for g in gts:
            i = min(hg - 1, max(0, int(g.box.cy // STRIDE)))
            j = min(wg - 1, max(0, int(g.box.cx // STRIDE)))
            if (i, j) in seen:
                continue
            seen.add((i, j))
            obj[n, 0, i, j] = 1.0
            n_idx.append(n)
            i_idx.append(i)
            j_idx.append(j)
            onehot = np.zeros(num_classes, dtype=np.float64)
            onehot[g.class_id] = 1.0
            cls_rows.append(onehot)
            box_rows.append([g.box.x1, g.box.y1, g.box.x2, g.box.y2])
    return (obj, np.array(n_idx), np.array(i_idx), np.array(j_idx),
            np.array(cls_rows), np.array(box_rows, dtype=np.float64))


def detector_loss(model, x, targets, config):
    """Scalar loss tensor for one batch plus a float breakdown."""
    obj_t, n_idx, i_idx, j_idx, cls_t, gt_boxes = targets
    nc = model.num_classes
    logits = model_forward(model, x)

    obj_logits = ops.slice_channels(logits, 4 + nc, 5 + nc)
    # positive cells are ~1:300 against background, so they carry extra weight
    # in the objectness term or their gradient washes out
    w = np.where(obj_t > 0.5, config.objectness_pos_weight, 1.0)
    obj_bce = ops.bce_with_logits(obj_logits, obj_t)
    obj_loss = ops.scale(ops.tsum(ops.mul(obj_bce, Tensor(w))),
                         1.0 / float(w.sum()))

    cells = ops.select_cells(logits, n_idx, i_idx, j_idx)  # [M, 5+nc]
    cls_mat = ops.stack_columns([ops.column(cells, 4 + k) for k in range(nc)])
    cls_loss = ops.tmean(ops.bce_with_logits(cls_mat, cls_t))

    sx = ops.sigmoid(ops.column(cells, 0))
    sy = ops.sigmoid(ops.column(cells, 1))
    cx = ops.scale(ops.add(sx, Tensor(j_idx.astype(np.float64))), float(STRIDE))
    cy = ops.scale(ops.add(sy, Tensor(i_idx.astype(np.float64))), float(STRIDE))
    # exp is clamped so a wild early step cannot overflow the box decode
    bw = ops.scale(ops.exp(ops.clamp(ops.column(cells, 2), -10.0, 10.0)), float(STRIDE))
    bh = ops.scale(ops.exp(ops.clamp(ops.column(cells, 3), -10.0, 10.0)), float(STRIDE))
    pred_boxes = ops.stack_columns([
        ops.sub(cx, ops.scale(bw, 0.5)),
        ops.sub(cy, ops.scale(bh, 0.5)),
        ops.add(cx, ops.scale(bw, 0.5)),
        ops.add(cy, ops.scale(bh, 0.5)),
    ])
    box_loss = batched_box_loss(pred_boxes, Tensor(gt_boxes),
                                config.loss_kind, config.focaler())

    total = ops.add(ops.add(obj_loss, cls_loss), box_loss)
    parts = {
        "objectness": obj_loss.item(),
        "classification": cls_loss.item(),
        "box": box_loss.item(),
    }
    return total, parts


@dataclass
class TrainResult:
    model: object
    loss_curve: list
    coverage: dict
    config: TrainConfig
    metadata: dict = field(default_factory=dict)


def _diagnose_nonfinite(model, x, targets, config):
    """Re-run the failing batch with the per-op sentinel enabled to name
    the first op that produced a non-finite value."""
    set_debug(True)
    try:
        with Tape():
            detector_loss(model, x, targets, config)
    except NonFiniteError as e:
        return str(e)
    finally:
        set_debug(False)
    return "loss is non-finite but every op output was finite"


def train(config, dataset):
    """Run the full deterministic loop; returns a TrainResult."""
    if len(dataset) < 1:
        raise ValueError("dataset is empty")
    with precision(config.precision):
        rng = np.random.Generator(np.random.PCG64(config.seed))
        model = init_toy_model(
            rng,
            image_size=dataset.spec.image_size,
            num_classes=dataset.spec.num_classes,
        )
        params = named_parameters(model)
        opt = AdamW(params, config.learning_rate, config.weight_decay,
                    config.beta1, config.beta2)
        grid_hw = (dataset.spec.image_size[0] // STRIDE,
                   dataset.spec.image_size[1] // STRIDE)
        coverage = {name: False for name, _ in params}
        loss_curve = []
        n = len(dataset)
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            step_losses = []
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                x = Tensor(np.stack([dataset.images[k] for k in idx])[:, None])
                targets = build_targets(
                    [dataset.annotations[k] for k in idx], grid_hw,
                    dataset.spec.num_classes,
                )
                reset_grads([p for _, p in params])
                with Tape():
                    loss, _ = detector_loss(model, x, targets, config)
                    if not math.isfinite(loss.item()):
                        detail = _diagnose_nonfinite(model, x, targets, config)
                        raise RuntimeError(
                            f"training aborted at epoch {epoch}: {detail}"
                        )
                    backward(loss)
                for name, p in params:
                    if not coverage[name] and p.grad is not None and np.any(p.grad):
                        coverage[name] = True
                opt.step()
                step_losses.append(loss.item())
            loss_curve.append(float(np.mean(step_losses)))
        metadata = {
            "config": asdict(config),
            "final_epoch": config.epochs,
            "final_loss": loss_curve[-1],
            "loss_curve": loss_curve,
            "model": {
                "image_size": list(model.image_size),
                "num_classes": model.num_classes,
                "channels": list(model.channels),
            },
        }
        return TrainResult(model=model, loss_curve=loss_curve,
                           coverage=coverage, config=config, metadata=metadata)
