"""Toy dense detector: stem, two detail-focus blocks, one space-to-depth
downsample, one fusion block, and a 1x1 prediction head.

The head emits, per stride-2 cell, four box deltas (tx, ty, tw, th),
``num_classes`` class logits, and one objectness logit. Decoding maps a
cell (i, j) to center ((j + sigmoid(tx)) * 2, (i + sigmoid(ty)) * 2) and
size (2 * exp(tw), 2 * exp(th)).
"""

from dataclasses import dataclass

import numpy as np

from ..initializers import kaiming_uniform, zeros
from ..losses import BBox
from ..metrics import Detection
from ..neck import (MFFFParams, SPDCConvParams, init_mfff, init_spdcconv,
                    mfff_forward, spdcconv_forward)
from ..padf import PADFBlockParams, init_padf, padf_forward
from ..tensor import Tensor, ops
from ..losses import iou

STRIDE = 2


@dataclass
class ToyModelParams:
    stem_w: Tensor
    stem_b: Tensor
    padf1: PADFBlockParams
    padf2: PADFBlockParams
    spdc: SPDCConvParams
    mfff: MFFFParams
    head_w: Tensor
    head_b: Tensor
    num_classes: int
    image_size: tuple
    channels: tuple  # (C0, C1)


def init_toy_model(rng, image_size=(64, 64), num_classes=2, channels=(8, 16)):
    h, w = image_size
    if h % 2 or w % 2:
        raise ValueError(f"image size must be even, got {image_size}")
    c0, c1 = channels
    head_out = 4 + num_classes + 1
    head_b = np.zeros(head_out)
    head_b[-1] = -2.0  # objectness starts negative so a fresh model is sparse
    return ToyModelParams(
        stem_w=kaiming_uniform(rng, (c0, 1, 3, 3), 9),
        stem_b=zeros((c0,)),
        padf1=init_padf(rng, c0),
        padf2=init_padf(rng, c0),
        spdc=init_spdcconv(rng, c0, c1),
        mfff=init_mfff(rng, c1, (h // STRIDE, w // STRIDE)),
        head_w=kaiming_uniform(rng, (head_out, c1, 1, 1), c1),
        head_b=Tensor(head_b),
        num_classes=num_classes,
        image_size=(h, w),
        channels=(c0, c1),
    )


def named_parameters(m):
    out = [("stem.w", m.stem_w), ("stem.b", m.stem_b)]
    out += m.padf1.named("padf1.")
    out += m.padf2.named("padf2.")
    out += m.spdc.named("spdc.")
    out += m.mfff.named("mfff.")
    out += [("head.w", m.head_w), ("head.b", m.head_b)]
    return out


def model_forward(m, x):
    """x[N,1,H,W] -> logits [N, 4 + num_classes + 1, H/2, W/2]."""
    if x.shape[2:] != tuple(m.image_size):
        raise ValueError(
            f"model expects {m.image_size} inputs, got {x.shape[2:]}"
        )
    z = ops.relu(ops.conv2d(x, m.stem_w, m.stem_b, stride=1, padding=1))
    z = padf_forward(z, m.padf1)
    z = padf_forward(z, m.padf2)
    z = ops.relu(spdcconv_forward(z, m.spdc))
    z = mfff_forward(z, m.mfff)
    return ops.conv2d(z, m.head_w, m.head_b)


def _sigmoid(v):
    return np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                    np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))


def decode_predictions(grid, num_classes, image_id, confidence_threshold):
    """Turn one image's head output [C,Hg,Wg] into Detection records.

    Confidence is objectness times the best class probability; cells below
    ``confidence_threshold`` are dropped.
    """
    nc = num_classes
    tx, ty, tw, th = grid[0], grid[1], grid[2], grid[3]
    cls_prob = _sigmoid(grid[4:4 + nc])
    obj_prob = _sigmoid(grid[4 + nc])
    best_class = cls_prob.argmax(axis=0)
    confidence = obj_prob * np.take_along_axis(
        cls_prob, best_class[None], axis=0
    )[0]
    cx = (_sigmoid(tx) + np.arange(grid.shape[2])[None, :]) * STRIDE
    cy = (_sigmoid(ty) + np.arange(grid.shape[1])[:, None]) * STRIDE
    bw = STRIDE * np.exp(np.clip(tw, -10.0, 10.0))
    bh = STRIDE * np.exp(np.clip(th, -10.0, 10.0))
    dets = []
    for i, j in zip(*np.nonzero(confidence >= confidence_threshold)):
        w = float(bw[i, j])
        h = float(bh[i, j])
        x = float(cx[i, j])
        y = float(cy[i, j])
        dets.append(Detection(
            box=BBox(x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0),
            class_id=int(best_class[i, j]),
            confidence=min(1.0, float(confidence[i, j])),
            image_id=image_id,
        ))
    return dets


def nms(dets, nms_iou):
    """Greedy per-class suppression; keeps the highest-confidence box of
    any overlapping group (ties broken by input order)."""
    kept = []
    for c in sorted({d.class_id for d in dets}):
        pool = [d for d in dets if d.class_id == c]
        pool.sort(key=lambda d: -d.confidence)
        chosen = []
        for d in pool:
            if all(iou(d.box, k.box) < nms_iou for k in chosen):
                chosen.append(d)
        kept.extend(chosen)
    kept.sort(key=lambda d: -d.confidence)
    return kept
