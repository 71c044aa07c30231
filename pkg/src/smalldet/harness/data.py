"""Synthetic small-object scenes and their on-disk formats.

Scenes are square grayscale images with a noisy low-intensity background
and a handful of constant-intensity rectangles (2..8 px a side). Each class
owns a disjoint intensity band, so classification is learnable from pixel
values alone. Objects are placed with at least one pixel of separation and
with centers in distinct stride-2 grid cells, which keeps the one-positive-
cell-per-object training assignment well defined.

Image files use a small headered binary layout (magic ``PTDS``); the
accompanying ``annotations.json`` carries boxes in corner form. The PRNG is
PCG64, so a given seed reproduces the same bytes everywhere.
"""

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..losses import BBox
from ..metrics import GroundTruth

PTDS_MAGIC = b"PTDS"
PTDS_VERSION = 1
ANNOTATION_FILE = "annotations.json"


@dataclass(frozen=True)
class SceneSpec:
    image_size: tuple = (64, 64)
    num_objects: int = 3
    size_range: tuple = (4, 8)
    num_classes: int = 2
    background_range: tuple = (0.0, 0.15)
    foreground_span: tuple = (0.4, 1.0)
    seed: int = 0

    def __post_init__(self):
        h, w = self.image_size
        if h != w or h not in (32, 64):
            raise ValueError(f"image_size must be square 32 or 64, got {self.image_size}")
        if not 1 <= self.num_objects <= 8:
            raise ValueError(f"num_objects must be in 1..8, got {self.num_objects}")
        lo, hi = self.size_range
        if not 2 <= lo <= hi <= 8:
            raise ValueError(f"size_range must lie in 2..8, got {self.size_range}")
        if hi > h:
            raise ValueError(f"objects of size {hi} cannot fit a {h}x{w} image")
        if not 1 <= self.num_classes <= 4:
            raise ValueError(f"num_classes must be in 1..4, got {self.num_classes}")
        b0, b1 = self.background_range
        f0, f1 = self.foreground_span
        if not (0.0 <= b0 < b1 < f0 < f1 <= 1.0):
            raise ValueError(
                "intensity ranges must satisfy 0 <= bg_lo < bg_hi < fg_lo < fg_hi <= 1"
            )


def class_bands(spec):
    """Disjoint per-class intensity bands inside the foreground span."""
    lo, hi = spec.foreground_span
    width = (hi - lo) / spec.num_classes
    return [
        (lo + k * width + 0.25 * width, lo + k * width + 0.75 * width)
        for k in range(spec.num_classes)
    ]


@dataclass
class Dataset:
    spec: SceneSpec
    images: list  # float32 arrays of shape (H, W)
    annotations: list = field(default_factory=list)  # per-image GroundTruth lists

    def __len__(self):
        return len(self.images)

    def ground_truths(self):
        """All annotations flattened, image_id matching list position."""
        return [g for per_image in self.annotations for g in per_image]


def _overlaps_with_margin(x0, y0, w, h, placed, margin=1):
    for (px0, py0, pw, ph) in placed:
        if (x0 - margin < px0 + pw and x0 + w + margin > px0
                and y0 - margin < py0 + ph and y0 + h + margin > py0):
            return True
    return False


def generate_dataset(spec, n_images):
    """Render ``n_images`` scenes; deterministic for a given spec.seed."""
    if n_images < 1:
        raise ValueError(f"n_images must be positive, got {n_images}")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    h, w = spec.image_size
    lo, hi = spec.size_range
    bands = class_bands(spec)
    images = []
    annotations = []
    for i in range(n_images):
        img = rng.uniform(spec.background_range[0], spec.background_range[1], (h, w))
        placed = []
        cells = set()
        per_image = []
        for _ in range(spec.num_objects):
            for _attempt in range(1000):
                ow = int(rng.integers(lo, hi + 1))
                oh = int(rng.integers(lo, hi + 1))
                x0 = int(rng.integers(0, w - ow + 1))
                y0 = int(rng.integers(0, h - oh + 1))
                cell = (int((y0 + oh / 2.0) // 2), int((x0 + ow / 2.0) // 2))
                if cell in cells or _overlaps_with_margin(x0, y0, ow, oh, placed):
                    continue
                break
            else:
                raise RuntimeError(
                    f"could not place {spec.num_objects} objects in image {i}"
                )
            cls = int(rng.integers(0, spec.num_classes))
            level = float(rng.uniform(bands[cls][0], bands[cls][1]))
            img[y0:y0 + oh, x0:x0 + ow] = level
            placed.append((x0, y0, ow, oh))
            cells.add(cell)
            per_image.append(
                GroundTruth(BBox(float(x0), float(y0), float(x0 + ow),
                                 float(y0 + oh)), cls, i)
            )
        images.append(img.astype(np.float32))
        annotations.append(per_image)
    return Dataset(spec=spec, images=images, annotations=annotations)


# ---------------------------------------------------------------------------
# PTDS image files


def save_image_ptds(path, image):
    arr = np.ascontiguousarray(image, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(PTDS_MAGIC)
        f.write(struct.pack("<III", PTDS_VERSION, h, w))
        f.write(arr.tobytes())


def load_image_ptds(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != PTDS_MAGIC:
        raise ValueError(f"not a PTDS image file: {path}")
    version, h, w = struct.unpack_from("<III", blob, 4)
    if version != PTDS_VERSION:
        raise ValueError(f"unsupported PTDS version {version} in {path}")
    expected = 16 + 4 * h * w
    if len(blob) != expected:
        raise ValueError(f"truncated PTDS file {path}: {len(blob)} != {expected} bytes")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# Dataset directories


def save_dataset(dataset, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for i, (img, per_image) in enumerate(zip(dataset.images, dataset.annotations)):
        fname = f"img_{i:05d}.ptds"
        save_image_ptds(os.path.join(dirpath, fname), img)
        entries.append({
            "file": fname,
            "objects": [
                {"box": [g.box.x1, g.box.y1, g.box.x2, g.box.y2],
                 "class_id": g.class_id}
                for g in per_image
            ],
        })
    doc = {
        "format_version": 1,
        "spec": asdict(dataset.spec),
        "images": entries,
    }
    with open(os.path.join(dirpath, ANNOTATION_FILE), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_dataset(dirpath):
    ann_path = os.path.join(dirpath, ANNOTATION_FILE)
    with open(ann_path) as f:
        doc = json.load(f)
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported annotation format in {ann_path}")
    sd = doc["spec"]
    spec = SceneSpec(
        image_size=tuple(sd["image_size"]),
        num_objects=sd["num_objects"],
        size_range=tuple(sd["size_range"]),
        num_classes=sd["num_classes"],
        background_range=tuple(sd["background_range"]),
        foreground_span=tuple(sd["foreground_span"]),
        seed=sd["seed"],
    )
    images = []
    annotations = []
    for i, entry in enumerate(doc["images"]):
        images.append(load_image_ptds(os.path.join(dirpath, entry["file"])))
        annotations.append([
            GroundTruth(BBox(*obj["box"]), int(obj["class_id"]), i)
            for obj in entry["objects"]
        ])
    return Dataset(spec=spec, images=images, annotations=annotations)


# ---------------------------------------------------------------------------
# PGM (for the rearrangement demo)


def load_pgm(path):
    """Read a binary (P5) PGM with maxval <= 255 into floats in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(blob) and blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i:i + 1].isspace():
            i += 1
        tokens.append(blob[start:i])
    if tokens[0] != b"P5":
        raise ValueError(f"only binary P5 PGM is supported: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"16-bit PGM not supported: {path}")
    i += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=i, count=h * w)
    return (pixels.reshape(h, w).astype(np.float32)) / maxval


def save_pgm(path, image):
    """Write floats in [0, 1] as a binary (P5) 8-bit PGM."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {arr.shape}")
    data = np.round(arr * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
