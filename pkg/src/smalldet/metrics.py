"""Detection evaluation: greedy matching, precision/recall, AP, mAP.

Matching is per class and confidence-ordered (ties broken by lower image
id, then insertion order); each ground truth matches at most one detection.
AP integrates the monotone precision envelope at 101 evenly spaced recall
points. Classes with no ground truths are excluded from the mAP mean.
"""

from dataclasses import dataclass

from .losses import BBox, iou


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    confidence: float
    image_id: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class GroundTruth:
    box: BBox
    class_id: int
    image_id: int


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class APResult:
    per_class_ap: dict
    map_value: float


def match_detections(dets, gts, iou_threshold):
    """Greedily match single-class detections against ground truths.

    Returns (labels, counts): ``labels`` is a list of (detection index,
    is_tp) pairs in match order, i.e. descending confidence with ties
    broken by lower image_id then insertion order.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    classes = {d.class_id for d in dets} | {g.class_id for g in gts}
    if len(classes) > 1:
        raise ValueError(f"matching expects a single class, got {sorted(classes)}")

    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].confidence, dets[i].image_id, i))
    by_image = {}
    for j, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(j)
    taken = [False] * len(gts)

    labels = []
    tp = 0
    for i in order:
        det = dets[i]
        best_j = -1
        best_iou = 0.0
        for j in by_image.get(det.image_id, ()):
            if taken[j]:
                continue
            v = iou(det.box, gts[j].box)
            if v > best_iou:
                best_iou = v
                best_j = j
        hit = best_j >= 0 and best_iou >= iou_threshold
        if hit:
            taken[best_j] = True
            tp += 1
        labels.append((i, hit))
    return labels, MatchCounts(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp)


def precision_recall(counts):
    """(P, R) with the 0/0 -> 0 convention."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return p, r


def average_precision(tp_labels, total_gt):
    """AP from confidence-ordered TP/FP labels.

    Builds the cumulative PR curve, applies the monotone precision
    envelope, and averages the interpolated precision at the 101 recall
    points 0.00, 0.01, ..., 1.00. Zero ground truths give AP 0.
    """
    if total_gt < 0:
        raise ValueError(f"total_gt must be >= 0, got {total_gt}")
    if total_gt == 0:
        return 0.0
    recalls = []
    precisions = []
    tp = 0
    for k, is_tp in enumerate(tp_labels, start=1):
        tp += bool(is_tp)
        recalls.append(tp / total_gt)
        precisions.append(tp / k)
    envelope = list(precisions)
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    total = 0.0
    for k in range(101):
        r = k / 100.0
        value = 0.0
        for i, rv in enumerate(recalls):
            if rv >= r:
                value = envelope[i]
                break
        total += value
    return total / 101.0


def map_at(dets, gts, iou_threshold):
    """Per-class AP at one IoU threshold plus the mean over populated classes."""
    if not gts:
        raise ValueError("mAP is undefined without ground truths")
    classes = sorted({d.class_id for d in dets} | {g.class_id for g in gts})
    per_class = {}
    populated = []
    for c in classes:
        dc = [d for d in dets if d.class_id == c]
        gc = [g for g in gts if g.class_id == c]
        labels, _ = match_detections(dc, gc, iou_threshold)
        ap = average_precision([hit for _, hit in labels], len(gc))
        per_class[c] = ap
        if gc:
            populated.append(ap)
    return APResult(per_class, sum(populated) / len(populated))


def map_50_95(dets, gts):
    """Mean of map_at over IoU thresholds 0.50, 0.55, ..., 0.95."""
    values = [map_at(dets, gts, (50 + 5 * k) / 100.0).map_value for k in range(10)]
    return sum(values) / len(values)
