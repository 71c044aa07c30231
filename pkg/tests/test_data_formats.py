"""Scene generation and on-disk format verification.

The rendered scenes are re-scanned pixel by pixel to confirm the
annotations describe exactly what was drawn, and every binary format is
round-tripped bit for bit.
"""

import dataclasses
import struct

import numpy as np
import pytest

from smalldet.harness.checkpoint import (
    PTDT_MAGIC,
    load_checkpoint,
    load_into_model,
    save_checkpoint,
    sidecar_path,
)
from smalldet.harness.data import (
    Dataset,
    SceneSpec,
    class_bands,
    generate_dataset,
    load_dataset,
    load_image_ptds,
    load_pgm,
    save_dataset,
    save_image_ptds,
    save_pgm,
)
from smalldet.harness.model import init_toy_model, named_parameters


class TestSceneSpec:
    def test_defaults_valid(self):
        spec = SceneSpec()
        assert spec.image_size == (64, 64)

    @pytest.mark.parametrize(
        "kwargs, message",
        [
            ({"image_size": (48, 48)}, "square 32 or 64"),
            ({"image_size": (64, 32)}, "square 32 or 64"),
            ({"num_objects": 0}, "num_objects"),
            ({"num_objects": 9}, "num_objects"),
            ({"size_range": (1, 6)}, "size_range"),
            ({"size_range": (4, 9)}, "size_range"),
            ({"size_range": (6, 4)}, "size_range"),
            ({"num_classes": 0}, "num_classes"),
            ({"num_classes": 5}, "num_classes"),
            ({"background_range": (0.0, 0.5), "foreground_span": (0.4, 1.0)},
             "intensity ranges"),
            ({"foreground_span": (0.4, 1.1)}, "intensity ranges"),
        ],
    )
    def test_validation(self, kwargs, message):
        with pytest.raises(ValueError, match=message):
            SceneSpec(**kwargs)

    def test_class_bands_disjoint_and_ordered(self):
        spec = SceneSpec(num_classes=4)
        bands = class_bands(spec)
        assert len(bands) == 4
        for (lo, hi), (nlo, _) in zip(bands, bands[1:]):
            assert lo < hi < nlo
        assert bands[0][0] >= spec.foreground_span[0]
        assert bands[-1][1] <= spec.foreground_span[1]


class TestGeneration:
    def test_seed_reproduces_identical_bytes(self):
        spec = SceneSpec(seed=42)
        a = generate_dataset(spec, 4)
        b = generate_dataset(spec, 4)
        for ia, ib in zip(a.images, b.images):
            assert ia.tobytes() == ib.tobytes()
        assert a.annotations == b.annotations

    def test_different_seeds_differ(self):
        a = generate_dataset(SceneSpec(seed=1), 1)
        b = generate_dataset(SceneSpec(seed=2), 1)
        assert not np.array_equal(a.images[0], b.images[0])

    def test_rescan_recovers_annotations(self):
        # every annotated box must be a constant plateau in its class
        # band, the ring just outside must be background, and no
        # foreground pixel may fall outside the annotated boxes
        spec = SceneSpec(seed=9, num_objects=5, num_classes=3)
        ds = generate_dataset(spec, 8)
        bands = class_bands(spec)
        fg_lo = spec.foreground_span[0]
        for img, per_image in zip(ds.images, ds.annotations):
            covered = np.zeros(img.shape, dtype=bool)
            for g in per_image:
                x1, y1, x2, y2 = (int(v) for v in
                                  (g.box.x1, g.box.y1, g.box.x2, g.box.y2))
                patch = img[y1:y2, x1:x2]
                assert patch.size == (x2 - x1) * (y2 - y1)
                assert np.all(patch == patch.flat[0])
                lo, hi = bands[g.class_id]
                assert lo <= patch.flat[0] <= hi
                ry1, ry2 = max(0, y1 - 1), min(img.shape[0], y2 + 1)
                rx1, rx2 = max(0, x1 - 1), min(img.shape[1], x2 + 1)
                ring = img[ry1:ry2, rx1:rx2].copy()
                ring[y1 - ry1:ring.shape[0] - (ry2 - y2),
                     x1 - rx1:ring.shape[1] - (rx2 - x2)] = 0.0
                assert np.all(ring < fg_lo)
                covered[y1:y2, x1:x2] = True
            assert np.count_nonzero(img >= fg_lo) == covered.sum()

    def test_object_centers_in_distinct_stride2_cells(self):
        ds = generate_dataset(SceneSpec(seed=5, num_objects=8), 6)
        for per_image in ds.annotations:
            cells = {
                (int(g.box.cy // 2), int(g.box.cx // 2)) for g in per_image
            }
            assert len(cells) == len(per_image) == 8

    def test_ground_truths_flatten_with_image_ids(self):
        ds = generate_dataset(SceneSpec(seed=3, num_objects=2), 3)
        flat = ds.ground_truths()
        assert len(flat) == 6
        assert [g.image_id for g in flat] == [0, 0, 1, 1, 2, 2]

    def test_image_count_validation(self):
        with pytest.raises(ValueError, match="n_images"):
            generate_dataset(SceneSpec(), 0)


class TestPTDSFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(701)
        img = rng.uniform(0.0, 1.0, (64, 64)).astype(np.float32)
        path = tmp_path / "img.ptds"
        save_image_ptds(path, img)
        back = load_image_ptds(path)
        assert back.dtype == np.float32
        assert back.tobytes() == img.tobytes()

    def test_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError, match="2-D"):
            save_image_ptds(tmp_path / "x.ptds", np.zeros((2, 2, 2)))

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ptds"
        path.write_bytes(b"JUNKxxxxxxxxxxxxxxxx")
        with pytest.raises(ValueError, match="not a PTDS"):
            load_image_ptds(path)

    def test_rejects_wrong_version(self, tmp_path):
        path = tmp_path / "v9.ptds"
        path.write_bytes(b"PTDS" + struct.pack("<III", 9, 1, 1) + b"\0" * 4)
        with pytest.raises(ValueError, match="version 9"):
            load_image_ptds(path)

    def test_rejects_truncation(self, tmp_path):
        path = tmp_path / "t.ptds"
        save_image_ptds(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ValueError, match="truncated"):
            load_image_ptds(path)


class TestDatasetDirectory:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(SceneSpec(seed=11, num_classes=3), 5)
        save_dataset(ds, tmp_path / "scenes")
        back = load_dataset(tmp_path / "scenes")
        assert back.spec == ds.spec
        assert len(back) == 5
        for ia, ib in zip(ds.images, back.images):
            assert ia.tobytes() == ib.tobytes()
        assert back.annotations == ds.annotations

    def test_rejects_unknown_format_version(self, tmp_path):
        ds = generate_dataset(SceneSpec(seed=1), 1)
        save_dataset(ds, tmp_path / "d")
        ann = tmp_path / "d" / "annotations.json"
        ann.write_text(ann.read_text().replace('"format_version": 1',
                                               '"format_version": 2'))
        with pytest.raises(ValueError, match="unsupported annotation format"):
            load_dataset(tmp_path / "d")


class TestPGM:
    def test_round_trip_of_quantized_values(self, tmp_path):
        levels = (np.arange(256, dtype=np.uint8).reshape(16, 16)
                  .astype(np.float32) / 255.0)
        path = tmp_path / "x.pgm"
        save_pgm(path, levels)
        back = load_pgm(path)
        assert np.array_equal(back, levels)

    def test_comment_and_whitespace_tolerant_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n# more\n255\n\x00\x7f\xff\x40")
        img = load_pgm(path)
        assert img.shape == (2, 2)
        assert img[0, 0] == 0.0
        assert img[1, 1] == np.float32(0x40) / 255.0

    def test_rejects_ascii_pgm(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ValueError, match="P5"):
            load_pgm(path)

    def test_rejects_16_bit(self, tmp_path):
        path = tmp_path / "w.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError, match="16-bit"):
            load_pgm(path)

    def test_save_clips_and_rejects_bad_rank(self, tmp_path):
        path = tmp_path / "s.pgm"
        save_pgm(path, np.array([[-1.0, 2.0]]))
        img = load_pgm(path)
        assert img[0, 0] == 0.0 and img[0, 1] == 1.0
        with pytest.raises(ValueError, match="2-D"):
            save_pgm(path, np.zeros(4))


class TestCheckpoint:
    def _tensors(self):
        rng = np.random.default_rng(702)
        return [
            ("stem.w", rng.standard_normal((8, 1, 3, 3)).astype(np.float32)),
            ("stem.b", rng.standard_normal(8).astype(np.float32)),
            ("gain", np.float32(1.5).reshape(())),
        ]

    def test_round_trip_bit_exact_with_metadata(self, tmp_path):
        path = tmp_path / "model.ptdt"
        meta = {"final_loss": 0.125, "config": {"epochs": 3}}
        named = self._tensors()
        save_checkpoint(path, named, meta)
        tensors, back_meta = load_checkpoint(path)
        assert list(tensors) == [name for name, _ in named]
        for name, arr in named:
            assert tensors[name].tobytes() == arr.tobytes()
            assert tensors[name].shape == arr.shape
        assert back_meta == meta

    def test_save_is_deterministic(self, tmp_path):
        named = self._tensors()
        save_checkpoint(tmp_path / "a.ptdt", named, {"k": 1})
        save_checkpoint(tmp_path / "b.ptdt", named, {"k": 1})
        assert (tmp_path / "a.ptdt").read_bytes() == (tmp_path / "b.ptdt").read_bytes()
        assert (
            (tmp_path / "a.ptdt.meta.json").read_bytes()
            == (tmp_path / "b.ptdt.meta.json").read_bytes()
        )

    def test_sidecar_path_and_missing_sidecar(self, tmp_path):
        assert sidecar_path("x.ptdt") == "x.ptdt.meta.json"
        path = tmp_path / "bare.ptdt"
        save_checkpoint(path, self._tensors(), {"k": 1})
        (tmp_path / "bare.ptdt.meta.json").unlink()
        _, meta = load_checkpoint(path)
        assert meta == {}

    def test_rejects_bad_magic_version_trailing(self, tmp_path):
        bad = tmp_path / "bad.ptdt"
        bad.write_bytes(b"NOPE" + b"\0" * 8)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(bad)
        v9 = tmp_path / "v9.ptdt"
        v9.write_bytes(PTDT_MAGIC + struct.pack("<II", 9, 0))
        with pytest.raises(ValueError, match="version 9"):
            load_checkpoint(v9)
        path = tmp_path / "trail.ptdt"
        save_checkpoint(path, self._tensors(), {})
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(ValueError, match="trailing bytes"):
            load_checkpoint(path)

    def test_load_into_model_round_trip(self, tmp_path):
        rng = np.random.default_rng(703)
        model = init_toy_model(rng)
        named = [(name, t.data.copy()) for name, t in named_parameters(model)]
        path = tmp_path / "m.ptdt"
        save_checkpoint(path, named, {})
        fresh = init_toy_model(np.random.default_rng(704))
        tensors, _ = load_checkpoint(path)
        load_into_model(fresh, tensors)
        for (name, want), (_, got) in zip(named, named_parameters(fresh)):
            assert np.array_equal(got.data.astype(np.float32), want), name

    def test_load_into_model_errors_name_the_tensor(self, tmp_path):
        rng = np.random.default_rng(705)
        model = init_toy_model(rng)
        named = [(name, t.data) for name, t in named_parameters(model)]
        path = tmp_path / "m.ptdt"
        save_checkpoint(path, named, {})
        tensors, _ = load_checkpoint(path)

        first = named[0][0]
        missing = dict(tensors)
        del missing[first]
        with pytest.raises(ValueError, match=f"missing tensor '{first}'"):
            load_into_model(model, missing)

        wrong = dict(tensors)
        wrong[first] = np.zeros((1, 1), dtype=np.float32)
        with pytest.raises(ValueError, match="has shape"):
            load_into_model(model, wrong)

        extra = dict(tensors)
        extra["zzz.unknown"] = np.zeros(1, dtype=np.float32)
        with pytest.raises(ValueError, match="unknown tensor 'zzz.unknown'"):
            load_into_model(model, extra)


class TestDatasetContainer:
    def test_len_and_replace(self):
        ds = generate_dataset(SceneSpec(seed=8), 2)
        assert len(ds) == 2
        trimmed = Dataset(spec=ds.spec, images=ds.images[:1],
                          annotations=ds.annotations[:1])
        assert len(trimmed) == 1
        assert dataclasses.is_dataclass(trimmed)
