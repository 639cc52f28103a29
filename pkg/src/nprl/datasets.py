"""Labeled image datasets: manifest directories, synthetic object/texture mixes, gratings.

A dataset directory holds ``manifest.csv`` (relative_path, label_name, split)
next to the PNG files it references.  Class indices follow sorted class names.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError, OutputError

SPLITS = ("train", "test")
MANIFEST_FIELDS = ("relative_path", "label_name", "split")


@dataclass
class LabeledDataset:
    """Decoded images (uint8 N x R x R x 3) with dense labels and a split tag per item."""

    images: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    class_names: tuple[str, ...]
    resolution: int
    refs: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.images)
        if self.images.ndim != 4 or self.images.shape[1:] != (self.resolution, self.resolution, 3):
            raise DataError(f"images must be N x {self.resolution} x {self.resolution} x 3, got {self.images.shape}")
        if len(self.labels) != n or len(self.splits) != n:
            raise DataError("images, labels and splits differ in length")
        k = len(self.class_names)
        if n and (self.labels.min() < 0 or self.labels.max() >= k):
            raise DataError(f"labels must lie in [0, {k})")
        bad = set(np.unique(self.splits)) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split tags {sorted(bad)}")
        empty = [self.class_names[c] for c in range(k) if not np.any(self.labels == c)]
        if empty:
            raise DataError(f"empty classes: {empty}")
        if not self.refs:
            self.refs = tuple(f"item{i:06d}" for i in range(n))
        if len(set(self.refs)) != len(self.refs):
            raise DataError("item references must be unique")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.images)

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)

    def subset(self, split: str) -> "LabeledDataset":
        idx = self.indices(split)
        return LabeledDataset(self.images[idx], self.labels[idx], self.splits[idx], self.class_names,
                              self.resolution, tuple(self.refs[i] for i in idx))

    def save(self, root) -> Path:
        """Write PNGs plus manifest.csv; the inverse of :func:`load_image_dataset`."""
        root = Path(root)
        try:
            (root / "images").mkdir(parents=True, exist_ok=True)
            rows = []
            for i in range(len(self)):
                rel = f"images/{i:06d}.png"
                Image.fromarray(self.images[i]).save(root / rel)
                rows.append((rel, self.class_names[self.labels[i]], self.splits[i]))
            with open(root / "manifest.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(MANIFEST_FIELDS)
                w.writerows(rows)
        except OSError as exc:
            raise OutputError(f"cannot write dataset to {root}: {exc}") from exc
        return root


def resize_image(img: Image.Image, resolution: int) -> np.ndarray:
    """Any PIL image -> uint8 R x R x 3 (bilinear, grayscale replicated to RGB)."""
    img = img.convert("RGB")
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def load_image_dataset(root, resolution: int = 128) -> LabeledDataset:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"missing manifest: {manifest}")
    with open(manifest, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(reader.fieldnames) != set(MANIFEST_FIELDS):
            raise DataError(f"{manifest}: header must be {', '.join(MANIFEST_FIELDS)}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{manifest}: no rows")
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if row["relative_path"] in seen:
            raise DataError(f"{manifest}:{lineno}: duplicate relative_path {row['relative_path']!r}")
        seen.add(row["relative_path"])
        if row["split"] not in SPLITS:
            raise DataError(f"{manifest}:{lineno}: split must be train or test, got {row['split']!r}")
        if not row["label_name"]:
            raise DataError(f"{manifest}:{lineno}: empty label_name")
    class_names = tuple(sorted({r["label_name"] for r in rows}))
    index = {c: i for i, c in enumerate(class_names)}
    images = np.empty((len(rows), resolution, resolution, 3), np.uint8)
    for i, row in enumerate(rows):
        path = root / row["relative_path"]
        try:
            with Image.open(path) as img:
                images[i] = resize_image(img, resolution)
        except (OSError, ValueError) as exc:
            raise DataError(f"{manifest}:{i + 2}: cannot decode {path}: {exc}") from exc
    return LabeledDataset(
        images=images,
        labels=np.array([index[r["label_name"]] for r in rows], np.int64),
        splits=np.array([r["split"] for r in rows]),
        class_names=class_names,
        resolution=resolution,
        refs=tuple(r["relative_path"] for r in rows),
    )


def split_tags(n: int, test_fraction: float, rng: np.random.Generator) -> np.ndarray:
    tags = np.array(["train"] * n, dtype="<U5")
    n_test = int(round(n * test_fraction))
    tags[rng.permutation(n)[:n_test]] = "test"
    return tags


# ---------------------------------------------------------------------------- textures


def _coords(res: int):
    y, x = np.mgrid[0:res, 0:res].astype(np.float64) / res
    return x, y


def _rotate(x, y, theta):
    c, s = math.cos(theta), math.sin(theta)
    return c * x + s * y, -s * x + c * y


def _value_noise(res: int, cells: int, rng) -> np.ndarray:
    grid = rng.random((cells + 1, cells + 1))
    t = np.linspace(0, cells, res, endpoint=False)
    i = t.astype(int)
    f = t - i
    f = f * f * (3 - 2 * f)
    a = grid[i][:, i] * (1 - f)[None, :] + grid[i][:, i + 1] * f[None, :]
    b = grid[i + 1][:, i] * (1 - f)[None, :] + grid[i + 1][:, i + 1] * f[None, :]
    return a * (1 - f)[:, None] + b * f[:, None]


def _tex_sine(x, y, rng, res):
    u, _ = _rotate(x, y, rng.uniform(0, math.pi))
    return 0.5 + 0.5 * np.sin(2 * math.pi * rng.uniform(3, 8) * u + rng.uniform(0, 2 * math.pi))


def _tex_square(x, y, rng, res):
    u, _ = _rotate(x, y, rng.uniform(0, math.pi))
    return (np.sin(2 * math.pi * rng.uniform(3, 7) * u + rng.uniform(0, 2 * math.pi)) > 0).astype(float)


def _tex_checker(x, y, rng, res):
    u, v = _rotate(x, y, rng.uniform(0, math.pi / 2))
    f = rng.uniform(3, 7)
    p = rng.uniform(0, 1, 2)
    return ((np.floor(f * u + p[0]) + np.floor(f * v + p[1])) % 2).astype(float)


def _tex_noise(x, y, rng, res):
    out = np.zeros_like(x)
    base = int(rng.integers(3, 6))
    for octave in range(3):
        out += _value_noise(res, base * 2 ** octave, rng) / 2 ** octave
    return out / 1.75


def _tex_dots(x, y, rng, res):
    u, v = _rotate(x, y, rng.uniform(0, math.pi / 2))
    f = rng.uniform(4, 8)
    du = (f * u + rng.uniform(0, 1)) % 1 - 0.5
    dv = (f * v + rng.uniform(0, 1)) % 1 - 0.5
    return (du ** 2 + dv ** 2 < rng.uniform(0.04, 0.09)).astype(float)


def _tex_rings(x, y, rng, res):
    cx, cy = rng.uniform(0.2, 0.8, 2)
    r = np.hypot(x - cx, y - cy)
    return 0.5 + 0.5 * np.sin(2 * math.pi * rng.uniform(5, 10) * r + rng.uniform(0, 2 * math.pi))


def _tex_plaid(x, y, rng, res):
    th = rng.uniform(0, math.pi)
    f = rng.uniform(3, 7)
    u, _ = _rotate(x, y, th)
    w, _ = _rotate(x, y, th + math.pi / 2)
    return 0.25 * (2 + np.sin(2 * math.pi * f * u) + np.sin(2 * math.pi * f * w + rng.uniform(0, 6.3)))


def _tex_spokes(x, y, rng, res):
    cx, cy = rng.uniform(0.3, 0.7, 2)
    ang = np.arctan2(y - cy, x - cx)
    return 0.5 + 0.5 * np.sin(int(rng.integers(6, 14)) * ang + rng.uniform(0, 2 * math.pi))


def _tex_zigzag(x, y, rng, res):
    u, v = _rotate(x, y, rng.uniform(0, math.pi))
    amp = rng.uniform(0.04, 0.08)
    tri = 2 * np.abs((v * rng.uniform(4, 8)) % 1 - 0.5)
    return ((np.floor((u + amp * tri) * rng.uniform(4, 8) * 2)) % 2).astype(float)


def _tex_blobs(x, y, rng, res):
    n = _value_noise(res, int(rng.integers(4, 7)), rng)
    return (n > np.median(n)).astype(float)


TEXTURES = {
    "sine-grating": _tex_sine,
    "square-grating": _tex_square,
    "checkerboard": _tex_checker,
    "value-noise": _tex_noise,
    "dot-lattice": _tex_dots,
    "rings": _tex_rings,
    "plaid": _tex_plaid,
    "spokes": _tex_spokes,
    "zigzag": _tex_zigzag,
    "blobs": _tex_blobs,
}


def render_texture(kind: str, res: int, rng: np.random.Generator, pixel_noise: float = 0.03) -> np.ndarray:
    x, y = _coords(res)
    field_ = np.clip(TEXTURES[kind](x, y, rng, res), 0.0, 1.0)
    contrast = rng.uniform(0.6, 1.0)
    g = 0.5 + contrast * (field_ - 0.5)
    if pixel_noise > 0:
        g = g + rng.normal(0, pixel_noise, g.shape)
    return (np.clip(g, 0, 1)[..., None].repeat(3, axis=2) * 255).round().astype(np.uint8)


# ---------------------------------------------------------------------------- objects


def _box(sx=1.0, sy=1.0, sz=1.0, c=(0.0, 0.0, 0.0)):
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float) * [sx, sy, sz] + c
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    return v, quads


def _merge(*meshes):
    verts, faces, off = [], [], 0
    for v, f in meshes:
        verts.append(v)
        faces += [tuple(i + off for i in face) for face in f]
        off += len(v)
    return np.concatenate(verts), faces


def _revolve(profile, n=16):
    """Surface of revolution about z from (r, z) profile points."""
    verts, faces = [], []
    m = len(profile)
    for k in range(n):
        a = 2 * math.pi * k / n
        for r, z in profile:
            verts.append((r * math.cos(a), r * math.sin(a), z))
    for k in range(n):
        k2 = (k + 1) % n
        for j in range(m - 1):
            faces.append((k * m + j, k2 * m + j, k2 * m + j + 1, k * m + j + 1))
    return np.array(verts, float), faces


def _with_caps(profile, n=16):
    v, f = _revolve(profile, n)
    m = len(profile)
    if profile[0][0] > 0:
        f.append(tuple(k * m for k in range(n))[::-1])
    if profile[-1][0] > 0:
        f.append(tuple(k * m + m - 1 for k in range(n)))
    return v, f


def _mesh(kind: str):
    if kind == "cube":
        return _box()
    if kind == "pyramid":
        v = np.array([[-1, -1, -0.8], [1, -1, -0.8], [1, 1, -0.8], [-1, 1, -0.8], [0, 0, 1.2]], float)
        return v, [(0, 3, 2, 1), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    if kind == "octahedron":
        v = np.array([[1.3, 0, 0], [-1.3, 0, 0], [0, 1.3, 0], [0, -1.3, 0], [0, 0, 1.3], [0, 0, -1.3]])
        f = [(0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4), (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5)]
        return v, f
    if kind == "sphere":
        prof = [(1.2 * math.sin(t), -1.2 * math.cos(t)) for t in np.linspace(0, math.pi, 9)]
        return _revolve(prof)
    if kind == "torus":
        prof = [(0.85 + 0.4 * math.cos(t), 0.4 * math.sin(t)) for t in np.linspace(0, 2 * math.pi, 9)]
        return _revolve(prof, 20)
    if kind == "cylinder":
        return _with_caps([(0.8, -1.1), (0.8, 1.1)])
    if kind == "cone":
        return _with_caps([(1.0, -1.0), (0.0, 1.2)])
    if kind == "prism":
        return _with_caps([(1.1, -0.9), (1.1, 0.9)], n=3)
    if kind == "cross":
        return _merge(_box(1.3, 0.35, 0.35), _box(0.35, 1.3, 0.35), _box(0.35, 0.35, 1.3))
    if kind == "arch":
        return _merge(_box(0.3, 0.35, 0.9, (-0.9, 0, -0.2)), _box(0.3, 0.35, 0.9, (0.9, 0, -0.2)),
                      _box(1.2, 0.35, 0.3, (0, 0, 0.95)))
    raise DataError(f"unknown object kind {kind!r}")


OBJECTS = ("cube", "pyramid", "octahedron", "sphere", "torus", "cylinder", "cone", "prism", "cross", "arch")


def _upright_pose(rng: np.random.Generator) -> np.ndarray:
    """Random yaw about the object's vertical axis, camera elevated 10-35 deg, small roll.

    Maps object coordinates (z up) to camera coordinates (x right, y up, z depth).
    """
    yaw = rng.uniform(0, 2 * math.pi)
    elev = rng.uniform(0.17, 0.6)
    roll = rng.uniform(-0.2, 0.2)
    cy, sy = math.cos(yaw), math.sin(yaw)
    ce, se = math.cos(elev), math.sin(elev)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    to_cam = np.array([[1, 0, 0], [0, -se, ce], [0, -ce, -se]])  # right, up, depth (camera above)
    rr = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rr @ to_cam @ rz


def render_object(kind: str, res: int, rng: np.random.Generator) -> np.ndarray:
    """Flat-shaded perspective projection of a random pose over a noise background."""
    verts, faces = _mesh(kind)
    v = verts @ _upright_pose(rng).T
    scale = rng.uniform(0.8, 1.2)
    cx, cy = rng.uniform(0.38, 0.62, 2)
    z = v[:, 2] + 6.0
    px = (cx + scale * 0.22 * v[:, 0] * 6.0 / z) * res
    py = (cy - scale * 0.22 * v[:, 1] * 6.0 / z) * res

    bg = _value_noise(res, int(rng.integers(3, 7)), rng)
    lo, hi = rng.uniform(0.1, 0.35), rng.uniform(0.45, 0.7)
    base = (lo + (hi - lo) * bg)[..., None] * rng.uniform(0.7, 1.0, 3)
    img = Image.fromarray((np.clip(base, 0, 1) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)

    color = rng.uniform(0.5, 1.0, 3)
    light = np.array([0.4, 0.5, -0.77])
    polys = []
    for face in faces:
        p = v[list(face)]
        n = np.cross(p[1] - p[0], p[2] - p[0])
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n = n / norm
        centroid = p.mean(axis=0)
        if n @ (centroid + [0, 0, 6.0]) > 0:  # back face: normal points away from the camera
            continue
        shade = 0.4 + 0.6 * abs(float(n @ light))
        polys.append((float(centroid[2]), [(float(px[i]), float(py[i])) for i in face], shade))
    polys.sort(key=lambda t: -t[0])
    for _, pts, shade in polys:
        draw.polygon(pts, fill=tuple(int(c) for c in np.clip(color * shade * 255, 0, 255)))
    return np.asarray(img, dtype=np.uint8)


# ---------------------------------------------------------------------------- synthetic datasets


def make_synthetic_mix(n_object_classes: int = 10, n_texture_classes: int = 10, samples_per_class: int = 100,
                       resolution: int = 128, seed: int = 0, test_fraction: float = 0.2) -> LabeledDataset:
    """Object silhouettes plus parametric textures; deterministic in ``seed``."""
    if not 1 <= n_object_classes <= len(OBJECTS) or not 1 <= n_texture_classes <= len(TEXTURES):
        raise DataError(f"class counts must lie in [1, {len(OBJECTS)}] and [1, {len(TEXTURES)}]")
    if resolution < 16:
        raise DataError(f"unsupported resolution {resolution}; need at least 16")
    if samples_per_class < 1:
        raise DataError("samples_per_class must be positive")
    kinds = [("object", k) for k in OBJECTS[:n_object_classes]]
    kinds += [("texture", k) for k in list(TEXTURES)[:n_texture_classes]]
    class_names = tuple(sorted(f"{g}-{k}" for g, k in kinds))
    index = {c: i for i, c in enumerate(class_names)}
    n = len(kinds) * samples_per_class
    images = np.empty((n, resolution, resolution, 3), np.uint8)
    labels = np.empty(n, np.int64)
    streams = np.random.SeedSequence(seed).spawn(len(kinds))
    i = 0
    for (group, kind), ss in zip(kinds, streams):
        rng = np.random.default_rng(ss)
        for _ in range(samples_per_class):
            images[i] = render_object(kind, resolution, rng) if group == "object" else render_texture(kind, resolution, rng)
            labels[i] = index[f"{group}-{kind}"]
            i += 1
    splits = split_tags(n, test_fraction, np.random.default_rng([seed, 1]))
    return LabeledDataset(images, labels, splits, class_names, resolution)


def make_gratings(samples_per_class: int = 500, resolution: int = 64, seed: int = 0,
                  test_fraction: float = 0.2, noise: float = 0.1) -> LabeledDataset:
    """Two classes: horizontal vs vertical sine gratings with random frequency, phase and contrast."""
    rng = np.random.default_rng(seed)
    x, y = _coords(resolution)
    n = 2 * samples_per_class
    images = np.empty((n, resolution, resolution, 3), np.uint8)
    labels = np.repeat(np.arange(2), samples_per_class)
    for i, lab in enumerate(labels):
        u = y if lab == 0 else x
        g = 0.5 + 0.5 * rng.uniform(0.3, 1.0) * np.sin(2 * math.pi * rng.uniform(2, 8) * u + rng.uniform(0, 2 * math.pi))
        g = np.clip(g + rng.normal(0, noise, g.shape), 0, 1)
        images[i] = (g[..., None].repeat(3, axis=2) * 255).round().astype(np.uint8)
    splits = split_tags(n, test_fraction, np.random.default_rng([seed, 1]))
    return LabeledDataset(images, labels, splits, ("horizontal", "vertical"), resolution)


# ---------------------------------------------------------------------------- CIFAR-10 binary batches

CIFAR10_NAMES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")
_CIFAR_RECORD = 1 + 3 * 32 * 32


def read_cifar_binary(path) -> tuple[np.ndarray, np.ndarray]:
    """One CIFAR-10 binary batch file -> (uint8 N x 32 x 32 x 3, labels)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD:
        raise DataError(f"{path}: size {raw.size} is not a multiple of the {_CIFAR_RECORD}-byte record")
    rec = raw.reshape(-1, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise DataError(f"{path}: label byte {labels.max()} out of range")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def convert_cifar(src, out, limit: int | None = None) -> Path:
    """``data_batch_*.bin`` / ``test_batch.bin`` -> manifest directory (32 x 32 PNGs)."""
    src, out = Path(src), Path(out)
    train_files = sorted(src.glob("data_batch_*.bin"))
    test_files = sorted(src.glob("test_batch*.bin"))
    if not train_files and not test_files:
        raise DataError(f"{src}: no data_batch_*.bin or test_batch.bin files")
    names = CIFAR10_NAMES
    meta = src / "batches.meta.txt"
    if meta.is_file():
        listed = tuple(line.strip() for line in meta.read_text().splitlines() if line.strip())
        if len(listed) == 10:
            names = listed
    rows = []
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        for split, files in (("train", train_files), ("test", test_files)):
            count = 0
            for path in files:
                images, labels = read_cifar_binary(path)
                for img, lab in zip(images, labels):
                    if limit is not None and count >= limit:
                        break
                    rel = f"images/{split}_{count:05d}.png"
                    Image.fromarray(img).save(out / rel)
                    rows.append((rel, names[lab], split))
                    count += 1
        with open(out / "manifest.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(MANIFEST_FIELDS)
            w.writerows(rows)
    except OSError as exc:
        raise OutputError(f"cannot write {out}: {exc}") from exc
    return out
