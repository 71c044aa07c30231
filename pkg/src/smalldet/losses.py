"""IoU-family bounding-box losses.

Scalar functions operate on ``BBox`` pairs in plain float arithmetic; the
batched op mirrors the same operation sequence with tape-recorded tensor
ops so single-row batches reproduce the scalar values bit for bit. All
ratio denominators are floored at a tiny constant instead of branching, so
degenerate geometry yields finite values (zero-area unions give IoU 0).
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ops

_TINY = 1e-12


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in corner form; zero-area boxes are permitted."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"invalid box corners: {self}")

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def cx(self):
        return (self.x1 + self.x2) / 2.0

    @property
    def cy(self):
        return (self.y1 + self.y2) / 2.0


@dataclass(frozen=True)
class FocalerParams:
    """Linear reshaping interval [d, u] for IoU values."""

    d: float
    u: float

    def __post_init__(self):
        if not (0.0 <= self.d < self.u <= 1.0):
            raise ValueError(f"thresholds need 0 <= d < u <= 1, got {self}")


@dataclass(frozen=True)
class SIoUTerms:
    """Diagnostic breakdown of the SIoU penalty."""

    angle_cost: float
    distance_cost: float
    shape_cost: float


def iou(a, b):
    """Intersection over union; 0 when the union has zero area."""
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = (a.area + b.area) - inter
    return inter / max(union, _TINY)


def giou_loss(a, b):
    """1 - GIoU with the enclosing-hull penalty."""
    i = iou(a, b)
    hull_w = max(a.x2, b.x2) - min(a.x1, b.x1)
    hull_h = max(a.y2, b.y2) - min(a.y1, b.y1)
    hull = hull_w * hull_h
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    union = (a.area + b.area) - iw * ih
    return 1.0 - (i - (hull - union) / max(hull, _TINY))


def siou_loss(a, b):
    """SIoU loss of prediction ``a`` against ground truth ``b``.

    Returns (loss, SIoUTerms). The angle cost uses the closed form
    2*s*sqrt(1 - s^2) with s the normalized vertical center offset; the
    distance cost exponent scales with (2 - angle); the shape cost raises
    each normalized size gap to the fourth power.
    """
    if b.width <= 0.0 or b.height <= 0.0:
        raise ValueError(f"ground-truth box is degenerate: {b}")
    i = iou(a, b)
    hull_w = max(a.x2, b.x2) - min(a.x1, b.x1)
    hull_h = max(a.y2, b.y2) - min(a.y1, b.y1)
    dcx = b.cx - a.cx
    dcy = b.cy - a.cy
    sigma = math.sqrt(dcx * dcx + dcy * dcy)
    sin_a = min(1.0, abs(dcy) / max(sigma, _TINY))
    angle = 2.0 * (sin_a * math.sqrt(max(0.0, 1.0 - sin_a * sin_a)))
    gamma = 2.0 - angle
    qx = dcx / max(hull_w, _TINY)
    qy = dcy / max(hull_h, _TINY)
    # np.exp, not math.exp: the two round differently by an ulp on some
    # arguments, and the batched op must reproduce these values exactly
    dist = (1.0 - float(np.exp((gamma * (qx * qx)) * -1.0))) + (
        1.0 - float(np.exp((gamma * (qy * qy)) * -1.0))
    )
    ww = abs(a.width - b.width) / max(a.width, b.width)
    wh = abs(a.height - b.height) / max(a.height, b.height)
    sw = 1.0 - float(np.exp(ww * -1.0))
    sh = 1.0 - float(np.exp(wh * -1.0))
    sw2 = sw * sw
    sh2 = sh * sh
    shape = sw2 * sw2 + sh2 * sh2
    loss = (1.0 - i) + (dist + shape) * 0.5
    return loss, SIoUTerms(angle, dist, shape)


def focaler_map(value, p):
    """Piecewise-linear reshaping of an IoU value: 0 below d, 1 above u,
    linear between."""
    return min(1.0, max(0.0, (value - p.d) / (p.u - p.d)))


def focaler_iou_loss(a, b, p):
    return 1.0 - focaler_map(iou(a, b), p)


def focaler_siou_loss(a, b, p):
    """SIoU loss plus the gap between raw and reshaped IoU."""
    loss, _ = siou_loss(a, b)
    i = iou(a, b)
    return (loss + i) - focaler_map(i, p)


def _validate_rows(arr, label):
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"{label} must have shape [M, 4], got {arr.shape}")
    bad = np.nonzero((arr[:, 2] < arr[:, 0]) | (arr[:, 3] < arr[:, 1]))[0]
    if bad.size:
        raise ValueError(f"invalid {label} box at row {int(bad[0])}")


def batched_box_loss(pred, gt, kind, params=None):
    """Mean box loss over M (pred, gt) row pairs, tape-recorded.

    ``kind`` is one of giou, siou, focaler_siou. The op sequence matches
    the scalar functions exactly, so an M=1 batch reproduces them bit for
    bit; gradients reach every pred and gt coordinate.
    """
    _validate_rows(pred.data, "pred")
    _validate_rows(gt.data, "gt")
    if kind not in ("giou", "siou", "focaler_siou"):
        raise ValueError(f"unknown box loss kind {kind!r}")
    if pred.data.shape != gt.data.shape:
        raise ValueError(
            f"pred shape {pred.data.shape} does not match gt {gt.data.shape}"
        )
    if kind != "giou":
        flat = np.nonzero(
            (gt.data[:, 2] <= gt.data[:, 0]) | (gt.data[:, 3] <= gt.data[:, 1])
        )[0]
        if flat.size:
            raise ValueError(f"degenerate ground-truth box at row {int(flat[0])}")
    if kind == "focaler_siou" and params is None:
        params = FocalerParams(0.0, 0.95)

    x1p, y1p, x2p, y2p = (ops.column(pred, j) for j in range(4))
    x1g, y1g, x2g, y2g = (ops.column(gt, j) for j in range(4))

    area_p = ops.mul(ops.sub(x2p, x1p), ops.sub(y2p, y1p))
    area_g = ops.mul(ops.sub(x2g, x1g), ops.sub(y2g, y1g))
    iw = ops.relu(ops.sub(ops.minimum(x2p, x2g), ops.maximum(x1p, x1g)))
    ih = ops.relu(ops.sub(ops.minimum(y2p, y2g), ops.maximum(y1p, y1g)))
    inter = ops.mul(iw, ih)
    union = ops.sub(ops.add(area_p, area_g), inter)
    iou_v = ops.div(inter, ops.maximum(union, _TINY))

    hull_w = ops.sub(ops.maximum(x2p, x2g), ops.minimum(x1p, x1g))
    hull_h = ops.sub(ops.maximum(y2p, y2g), ops.minimum(y1p, y1g))

    if kind == "giou":
        hull = ops.mul(hull_w, hull_h)
        penalty = ops.div(ops.sub(hull, union), ops.maximum(hull, _TINY))
        per_pair = ops.sub(1.0, ops.sub(iou_v, penalty))
        return ops.tmean(per_pair)

    cxp = ops.div(ops.add(x1p, x2p), 2.0)
    cyp = ops.div(ops.add(y1p, y2p), 2.0)
    cxg = ops.div(ops.add(x1g, x2g), 2.0)
    cyg = ops.div(ops.add(y1g, y2g), 2.0)
    dcx = ops.sub(cxg, cxp)
    dcy = ops.sub(cyg, cyp)
    sigma = ops.sqrt(ops.add(ops.mul(dcx, dcx), ops.mul(dcy, dcy)))
    sin_a = ops.clamp(
        ops.div(ops.absolute(dcy), ops.maximum(sigma, _TINY)), 0.0, 1.0
    )
    root = ops.sqrt(ops.relu(ops.sub(1.0, ops.mul(sin_a, sin_a))))
    angle = ops.scale(ops.mul(sin_a, root), 2.0)
    gamma = ops.sub(2.0, angle)
    qx = ops.div(dcx, ops.maximum(hull_w, _TINY))
    qy = ops.div(dcy, ops.maximum(hull_h, _TINY))
    dist = ops.add(
        ops.sub(1.0, ops.exp(ops.scale(ops.mul(gamma, ops.mul(qx, qx)), -1.0))),
        ops.sub(1.0, ops.exp(ops.scale(ops.mul(gamma, ops.mul(qy, qy)), -1.0))),
    )
    wp = ops.sub(x2p, x1p)
    hp = ops.sub(y2p, y1p)
    wg = ops.sub(x2g, x1g)
    hg = ops.sub(y2g, y1g)
    ww = ops.div(ops.absolute(ops.sub(wp, wg)), ops.maximum(wp, wg))
    wh = ops.div(ops.absolute(ops.sub(hp, hg)), ops.maximum(hp, hg))
    sw = ops.sub(1.0, ops.exp(ops.scale(ww, -1.0)))
    sh = ops.sub(1.0, ops.exp(ops.scale(wh, -1.0)))
    sw2 = ops.mul(sw, sw)
    sh2 = ops.mul(sh, sh)
    shape = ops.add(ops.mul(sw2, sw2), ops.mul(sh2, sh2))
    siou = ops.add(ops.sub(1.0, iou_v), ops.scale(ops.add(dist, shape), 0.5))

    if kind == "siou":
        return ops.tmean(siou)
    reshaped = ops.clamp(
        ops.div(ops.sub(iou_v, params.d), params.u - params.d), 0.0, 1.0
    )
    per_pair = ops.sub(ops.add(siou, iou_v), reshaped)
    return ops.tmean(per_pair)
