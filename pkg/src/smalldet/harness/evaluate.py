"""Evaluation: decode, suppress, score against the metric stack."""

import time
from dataclasses import dataclass, field

import numpy as np

from ..metrics import map_50_95, map_at
from ..tensor import Tensor, precision
from .checkpoint import load_checkpoint, load_into_model
from .model import decode_predictions, init_toy_model, model_forward, nms


@dataclass
class EvalReport:
    per_class_ap50: dict
    map50: float
    map50_95: float
    wall_clock: float
    loss_curve: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "per_class_ap50": {str(k): v for k, v in self.per_class_ap50.items()},
            "map50": self.map50,
            "map50_95": self.map50_95,
            "wall_clock": self.wall_clock,
            "loss_curve": list(self.loss_curve),
            "config_echo": dict(self.config_echo),
        }


def predict_dataset(model, dataset, confidence_threshold=0.05, nms_iou=0.5,
                    batch_size=8):
    """Detached forward over the whole dataset; per-image decode + NMS."""
    dets = []
    n = len(dataset)
    for start in range(0, n, batch_size):
        batch = np.stack(dataset.images[start:start + batch_size])[:, None]
        logits = model_forward(model, Tensor(batch)).data
        for k in range(logits.shape[0]):
            raw = decode_predictions(logits[k], model.num_classes, start + k,
                                     confidence_threshold)
            dets.extend(nms(raw, nms_iou))
    return dets


def evaluate_model(model, dataset, confidence_threshold=0.05, nms_iou=0.5,
                   loss_curve=None, config_echo=None):
    t0 = time.perf_counter()
    with precision("single"):
        dets = predict_dataset(model, dataset, confidence_threshold, nms_iou)
    gts = dataset.ground_truths()
    at50 = map_at(dets, gts, 0.5)
    wide = map_50_95(dets, gts)
    return EvalReport(
        per_class_ap50=at50.per_class_ap,
        map50=at50.map_value,
        map50_95=wide,
        wall_clock=time.perf_counter() - t0,
        loss_curve=loss_curve or [],
        config_echo=config_echo or {},
    )


def evaluate_checkpoint(path, dataset, confidence_threshold=0.05, nms_iou=0.5):
    """Rebuild the architecture recorded in the sidecar, load weights,
    evaluate. Shape mismatches fail while loading, naming the tensor."""
    tensors, meta = load_checkpoint(path)
    arch = meta.get("model", {})
    model = init_toy_model(
        np.random.Generator(np.random.PCG64(0)),
        image_size=tuple(arch.get("image_size", dataset.spec.image_size)),
        num_classes=arch.get("num_classes", dataset.spec.num_classes),
        channels=tuple(arch.get("channels", (8, 16))),
    )
    load_into_model(model, tensors)
    return evaluate_model(model, dataset, confidence_threshold, nms_iou,
                          loss_curve=meta.get("loss_curve"),
                          config_echo=meta.get("config", {}))
