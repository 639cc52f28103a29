"""Neural predictivity: linear maps from layer activations to recorded responses.

Each capture layer's activations are reduced to their top-k principal
components, a ridge regression maps the standardized components to every
neuron, and held-out Pearson correlations are aggregated per area (median
over neurons, mean and standard error over cross-validation folds).
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import OBJECTS, TEXTURES, render_object, render_texture, resize_image
from .errors import ConfigError, DataError, OutputError, ShapeError, UndefinedCorrelationError
from .model import LAYERS, ModelGraph

AREAS = ("V1", "V2", "V4", "IT")
# neuron counts of the recordings this pipeline was built for, by area
EXPECTED_NEURONS = {"V1": 102, "V2": 103, "V4": 88, "IT": 168}


# ---------------------------------------------------------------------------- statistics


def pearson_r(y, y_pred) -> float:
    """Product-moment correlation; zero variance in either argument is an error."""
    y = np.asarray(y, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ShapeError(f"pearson_r: lengths differ ({y.size} vs {p.size})")
    if y.size < 3:
        raise ShapeError(f"pearson_r needs at least 3 values, got {y.size}")
    dy = y - y.mean()
    dp = p - p.mean()
    for name, v, d in (("y", y, dy), ("y'", p, dp)):
        scale = np.abs(v).max()
        if not np.any(d) or np.sqrt(np.mean(d * d)) <= 1e-7 * scale:
            raise UndefinedCorrelationError(f"pearson_r: {name} has zero variance")
    r = float(np.dot(dy, dp) / math.sqrt(np.dot(dy, dy) * np.dot(dp, dp)))
    return min(1.0, max(-1.0, r))


def standard_error(values) -> float:
    """Sample standard deviation (n - 1 denominator) over sqrt(n)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ShapeError("standard_error needs at least 2 values")
    return float(v.std(ddof=1) / math.sqrt(v.size))


# ---------------------------------------------------------------------------- linear map


@dataclass
class LinearMap:
    mean: np.ndarray  # F, training feature mean
    basis: np.ndarray  # F x k principal axes
    scale: np.ndarray  # k, std of the training component scores
    weights: np.ndarray  # k x neurons, ridge weights on standardized scores
    intercept: np.ndarray  # neurons

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.size:
            raise ShapeError(f"expected N x {self.mean.size} features, got {X.shape}")
        return (X - self.mean) @ self.basis / self.scale

    def predict(self, X) -> np.ndarray:
        return self.transform(X) @ self.weights + self.intercept


def principal_axes(Xc: np.ndarray, k: int, clamp: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal axes (F x k) and eigenvalues of centered data, via the smaller Gram matrix.

    ``k`` above the numerical rank is an error unless ``clamp`` lowers it to the rank.
    """
    n, f = Xc.shape
    if n <= f:
        evals, u = np.linalg.eigh(Xc @ Xc.T)
        order = np.argsort(evals)[::-1]
        evals, u = evals[order], u[:, order]
        rank = int(np.sum(evals > evals[0] * 1e-12)) if evals[0] > 0 else 0
        k = _check_rank(k, rank, clamp)
        axes = Xc.T @ u[:, :k] / np.sqrt(evals[:k])
    else:
        evals, v = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(evals)[::-1]
        evals, v = evals[order], v[:, order]
        rank = int(np.sum(evals > evals[0] * 1e-12)) if evals[0] > 0 else 0
        k = _check_rank(k, rank, clamp)
        axes = v[:, :k]
    # fix the sign of each axis so results do not depend on the eigensolver
    signs = np.sign(axes[np.argmax(np.abs(axes), axis=0), np.arange(k)])
    return axes * signs, evals[:k]


def _check_rank(k: int, rank: int, clamp: bool) -> int:
    if k <= rank:
        return k
    if clamp and rank >= 1:
        return rank
    raise ConfigError(f"k={k} exceeds the rank {rank} of the training activations")


def fit_linear_map(X_train, Y_train, k: int = 25, lam: float = 0.01, clamp_k: bool = False) -> LinearMap:
    X = np.asarray(X_train, dtype=np.float64)
    Y = np.asarray(Y_train, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ShapeError(f"X {X.shape} and Y {Y.shape} must share the stimulus axis")
    if lam < 0:
        raise ConfigError(f"ridge penalty must be non-negative, got {lam}")
    n, f = X.shape
    if k < 1:
        raise ConfigError("k must be positive")
    if n < k + 2:
        raise ConfigError(f"need at least k + 2 = {k + 2} training stimuli, got {n}")
    if k > min(n - 1, f):
        raise ConfigError(f"k={k} exceeds min(training stimuli - 1, features) = {min(n - 1, f)}")
    mean = X.mean(axis=0)
    Xc = X - mean
    basis, _ = principal_axes(Xc, k, clamp_k)
    k = basis.shape[1]
    scores = Xc @ basis
    scale = scores.std(axis=0)
    scale[scale == 0] = 1.0
    Z = scores / scale
    y_mean = Y.mean(axis=0)
    gram = Z.T @ Z + lam * np.eye(k)
    weights = np.linalg.solve(gram, Z.T @ (Y - y_mean))
    return LinearMap(mean=mean, basis=basis, scale=scale, weights=weights, intercept=y_mean)


# ---------------------------------------------------------------------------- cross-validation


def fold_indices(n: int, splits: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle into ``splits`` disjoint held-out folds covering all rows."""
    if splits < 2:
        raise ConfigError("splits must be at least 2")
    if n < splits:
        raise ConfigError(f"cannot make {splits} folds from {n} stimuli")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, splits)]


@dataclass
class CvScore:
    score: float  # mean over folds of the median held-out r over neurons
    se: float
    fold_scores: list[float]
    fold_means: list[float]  # mean (not median) over neurons, per fold
    per_neuron: np.ndarray  # folds x neurons, NaN where invalid
    n_invalid: int
    k_used: int = 0  # smallest number of components used in any fold

    @property
    def neuron_r(self) -> np.ndarray:
        """Held-out r per neuron averaged over its valid folds (NaN if never valid)."""
        with np.errstate(invalid="ignore"):
            valid = ~np.isnan(self.per_neuron)
            total = np.where(valid, self.per_neuron, 0.0).sum(axis=0)
            return np.where(valid.any(axis=0), total / np.maximum(valid.sum(axis=0), 1), np.nan)

    @property
    def n_valid_neurons(self) -> int:
        return int(np.sum(~np.isnan(self.per_neuron).all(axis=0)))


def _target_is_constant(v: np.ndarray) -> bool:
    d = v - v.mean()
    return not np.any(d) or np.sqrt(np.mean(d * d)) <= 1e-7 * np.abs(v).max()


def cross_validated_score(X, Y, splits: int = 10, k: int = 25, lam: float = 0.01, seed: int = 0,
                          stimulus_ids=None, clamp_k: bool = False) -> CvScore:
    """K-fold held-out predictivity.

    With ``stimulus_ids`` the rows are first put in sorted-id order, so the
    folds depend only on the seed and the set of stimuli, not on row order.
    A neuron constant within a held-out fold makes that (fold, neuron) cell
    invalid; constant predictions raise :class:`UndefinedCorrelationError`.
    ``clamp_k`` lowers k to the rank of a rank-deficient training fold.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    if stimulus_ids is not None:
        ids = np.asarray(stimulus_ids)
        if ids.shape != (X.shape[0],) or len(set(ids.tolist())) != ids.size:
            raise DataError("stimulus ids must be unique, one per row")
        order = np.argsort(ids, kind="stable")
        X, Y = X[order], Y[order]
    folds = fold_indices(X.shape[0], splits, seed)
    per = np.full((splits, Y.shape[1]), np.nan)
    all_rows = np.arange(X.shape[0])
    k_used = k
    for i, test in enumerate(folds):
        train = np.setdiff1d(all_rows, test, assume_unique=True)
        lm = fit_linear_map(X[train], Y[train], k, lam, clamp_k)
        k_used = min(k_used, lm.k)
        pred = lm.predict(X[test])
        for j in range(Y.shape[1]):
            if _target_is_constant(Y[test, j]):
                continue
            per[i, j] = pearson_r(Y[test, j], pred[:, j])
    fold_scores, fold_means = [], []
    for i in range(splits):
        row = per[i][~np.isnan(per[i])]
        if row.size == 0:
            raise UndefinedCorrelationError(f"fold {i}: no neuron varies across the held-out stimuli")
        fold_scores.append(float(np.median(row)))
        fold_means.append(float(row.mean()))
    return CvScore(
        score=float(np.mean(fold_scores)),
        se=standard_error(fold_scores),
        fold_scores=fold_scores,
        fold_means=fold_means,
        per_neuron=per,
        n_invalid=int(np.isnan(per).sum()),
        k_used=k_used,
    )


# ---------------------------------------------------------------------------- stimuli and assemblies


@dataclass
class StimulusSet:
    ids: tuple[str, ...]
    images: list  # uint8 H x W x 3 arrays, any size
    refs: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.ids) != len(self.images):
            raise DataError("stimulus ids and images differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("stimulus ids must be unique")
        if not self.refs:
            self.refs = tuple(f"stimuli/{sid}.png" for sid in self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def resized(self, resolution: int) -> np.ndarray:
        out = np.empty((len(self), resolution, resolution, 3), np.uint8)
        for i, img in enumerate(self.images):
            arr = np.asarray(img)
            if arr.shape == (resolution, resolution, 3):
                out[i] = arr
            else:
                out[i] = resize_image(Image.fromarray(arr), resolution)
        return out


@dataclass
class NeuralAssembly:
    area: str
    stimulus_ids: tuple[str, ...]
    neuron_ids: tuple[str, ...]
    responses: np.ndarray  # stimuli x neurons
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        R = np.asarray(self.responses, dtype=np.float64)
        if R.shape != (len(self.stimulus_ids), len(self.neuron_ids)):
            raise DataError(f"responses {R.shape} do not match {len(self.stimulus_ids)} stimuli x "
                            f"{len(self.neuron_ids)} neurons")
        if not np.all(np.isfinite(R)):
            raise DataError("responses contain NaN or infinite values")
        if len(set(self.neuron_ids)) != len(self.neuron_ids) or len(set(self.stimulus_ids)) != len(self.stimulus_ids):
            raise DataError("stimulus and neuron ids must be unique")
        flat = [self.neuron_ids[j] for j in range(R.shape[1]) if _target_is_constant(R[:, j])]
        if flat:
            raise DataError(f"neurons with zero variance across stimuli: {flat[:5]}")
        self.responses = R

    def aligned(self, stimuli: StimulusSet) -> np.ndarray:
        """Response rows reordered to follow ``stimuli.ids``."""
        pos = {sid: i for i, sid in enumerate(self.stimulus_ids)}
        missing = [s for s in stimuli.ids if s not in pos]
        if missing or len(stimuli) != len(self.stimulus_ids):
            raise DataError(f"assembly and stimulus set are not aligned (missing {missing[:5]})")
        return self.responses[[pos[s] for s in stimuli.ids]]


def _fmt(v: float) -> str:
    return repr(float(v))


def save_assembly(assembly: NeuralAssembly, stimuli: StimulusSet, out, extra_files: dict | None = None) -> Path:
    """Write meta.json, responses.csv, manifest.csv and stimuli/ PNGs."""
    out = Path(out)
    try:
        (out / "stimuli").mkdir(parents=True, exist_ok=True)
        R = assembly.aligned(stimuli)
        for sid, ref, img in zip(stimuli.ids, stimuli.refs, stimuli.images):
            Image.fromarray(np.asarray(img, dtype=np.uint8)).save(out / ref)
        with open(out / "manifest.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("stimulus_id", "relative_path"))
            w.writerows(zip(stimuli.ids, stimuli.refs))
        with open(out / "responses.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("stimulus_id",) + tuple(assembly.neuron_ids))
            for sid, row in zip(stimuli.ids, R):
                w.writerow([sid] + [_fmt(v) for v in row])
        meta = {"area": assembly.area, "neuron_ids": list(assembly.neuron_ids), **assembly.meta}
        meta.setdefault("units", "arbitrary")
        meta.setdefault("provenance", "unspecified")
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        for name, text in (extra_files or {}).items():
            (out / name).write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write assembly to {out}: {exc}") from exc
    return out


def load_stimuli(root) -> StimulusSet:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"missing stimulus manifest: {manifest}")
    with open(manifest, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["stimulus_id", "relative_path"]:
            raise DataError(f"{manifest}: header must be stimulus_id,relative_path")
        rows = list(reader)
    images = []
    for r in rows:
        try:
            with Image.open(root / r["relative_path"]) as img:
                images.append(np.asarray(img.convert("RGB"), dtype=np.uint8))
        except (OSError, ValueError) as exc:
            raise DataError(f"stimulus {r['stimulus_id']!r}: cannot decode {r['relative_path']}: {exc}") from exc
    return StimulusSet(tuple(r["stimulus_id"] for r in rows), images, tuple(r["relative_path"] for r in rows))


def load_assembly(root) -> tuple[NeuralAssembly, StimulusSet]:
    """Read and validate an assembly directory; returns the assembly and its stimuli."""
    root = Path(root)
    for name in ("meta.json", "responses.csv", "manifest.csv"):
        if not (root / name).is_file():
            raise DataError(f"assembly {root}: missing {name}")
    meta = json.loads((root / "meta.json").read_text())
    for key in ("area", "neuron_ids"):
        if key not in meta:
            raise DataError(f"{root / 'meta.json'}: missing key {key!r}")
    with open(root / "responses.csv", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        rows = list(reader)
    if not header or header[0] != "stimulus_id":
        raise DataError(f"{root / 'responses.csv'}: first column must be stimulus_id")
    if header[1:] != list(meta["neuron_ids"]):
        raise DataError(f"{root}: responses.csv columns disagree with meta.json neuron_ids")
    try:
        R = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 1)
    except ValueError as exc:
        raise DataError(f"{root / 'responses.csv'}: {exc}") from exc
    extra = {k: v for k, v in meta.items() if k not in ("area", "neuron_ids")}
    assembly = NeuralAssembly(meta["area"], tuple(r[0] for r in rows), tuple(header[1:]), R, extra)
    stimuli = load_stimuli(root)
    assembly.aligned(stimuli)
    return assembly, stimuli


def validate_assembly(root) -> dict:
    """Schema check of an assembly directory; returns a short summary."""
    assembly, stimuli = load_assembly(root)
    return {"area": assembly.area, "stimuli": len(stimuli), "neurons": len(assembly.neuron_ids)}


def convert_assembly(responses_csv, stimuli_dir, area: str, out, provenance: str = "user-supplied") -> Path:
    """User matrix CSV (stimulus_id, one column per neuron) plus a stimulus manifest -> assembly directory."""
    with open(responses_csv, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        rows = list(reader)
    if not header or header[0] != "stimulus_id" or len(header) < 2:
        raise DataError(f"{responses_csv}: header must be stimulus_id followed by neuron ids")
    try:
        R = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{responses_csv}: {exc}") from exc
    assembly = NeuralAssembly(area, tuple(r[0] for r in rows), tuple(header[1:]), R,
                              {"provenance": provenance, "units": "arbitrary"})
    stimuli = load_stimuli(stimuli_dir)
    stimuli = StimulusSet(stimuli.ids, stimuli.images, tuple(f"stimuli/{sid}.png" for sid in stimuli.ids))
    return save_assembly(assembly, stimuli, out)


STIMULUS_KINDS = ("objects", "textures", "mixed")


def make_stimuli(n: int, resolution: int = 128, seed: int = 0, kinds: str = "objects") -> StimulusSet:
    """Seeded renders, one random class per stimulus.

    ``objects`` are shaded solids over smooth backgrounds; ``textures`` are
    noise-free parametric fields; ``mixed`` draws from both.
    """
    if n < 1:
        raise DataError("need at least one stimulus")
    if kinds not in STIMULUS_KINDS:
        raise ConfigError(f"kinds must be one of {STIMULUS_KINDS}, got {kinds!r}")
    pool = []
    if kinds in ("objects", "mixed"):
        pool += [("object", k) for k in OBJECTS]
    if kinds in ("textures", "mixed"):
        pool += [("texture", k) for k in TEXTURES]
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(n):
        group, kind = pool[int(rng.integers(len(pool)))]
        if group == "object":
            images.append(render_object(kind, resolution, rng))
        else:
            images.append(render_texture(kind, resolution, rng, pixel_noise=0.0))
    ids = tuple(f"s{i:05d}" for i in range(n))
    return StimulusSet(ids, images)


# ---------------------------------------------------------------------------- model activations


def extract_activations(model: ModelGraph, stimuli, layers=LAYERS, batch: int = 32) -> dict[str, np.ndarray]:
    """Eval-mode flattened activations per layer, stimuli x features (float32)."""
    images = stimuli.resized(model.trunk.resolution) if isinstance(stimuli, StimulusSet) else np.asarray(stimuli)
    layers = (layers,) if isinstance(layers, str) else tuple(layers)
    chunks: dict[str, list] = {name: [] for name in layers}
    for s in range(0, len(images), batch):
        x = np.ascontiguousarray(images[s:s + batch].transpose(0, 3, 1, 2), dtype=np.float32) / np.float32(255.0)
        _, acts = model.forward_with_activations(x, layers)
        for name in layers:
            chunks[name].append(acts[name].astype(np.float32))
    return {name: np.concatenate(c) for name, c in chunks.items()}


# ---------------------------------------------------------------------------- synthetic assemblies


def synthetic_ceiling(sigma: float) -> float:
    return 1.0 / math.sqrt(1.0 + sigma * sigma)


def generate_synthetic_assembly(reference: ModelGraph, layer: str, n_neurons: int, sigma: float,
                                stimuli: StimulusSet, seed: int = 0, area: str = "V1", n_axes: int = 5,
                                fan_in: int = 3):
    """Noisy linear readouts of one layer of ``reference``.

    Each neuron mixes ``fan_in`` of the top ``n_axes`` principal axes of the
    layer's activations over ``stimuli``; its signal is standardized to zero
    mean and unit variance, then i.i.d. Normal(0, sigma^2) noise is added.
    Returns (assembly, ground_truth dict, readout arrays).
    """
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    if n_neurons < 1:
        raise ConfigError("n_neurons must be positive")
    if layer not in LAYERS and layer != "output":
        raise ConfigError(f"unknown layer {layer!r}; valid names: {list(LAYERS) + ['output']}")
    X = extract_activations(reference, stimuli, (layer,))[layer].astype(np.float64)
    mean = X.mean(axis=0)
    Xc = X - mean
    n_axes = min(n_axes, X.shape[0] - 1, X.shape[1])
    axes, _ = principal_axes(Xc, n_axes)
    rng = np.random.default_rng(seed)
    W = np.zeros((X.shape[1], n_neurons))
    offset = np.zeros(n_neurons)
    for j in range(n_neurons):
        pick = rng.choice(n_axes, size=min(fan_in, n_axes), replace=False)
        coef = rng.normal(size=pick.size)
        w = axes[:, pick] @ coef
        s = Xc @ w
        sd = s.std()
        W[:, j] = w / sd
        offset[j] = -(mean @ W[:, j])
    signal = X @ W + offset
    noise = rng.normal(size=signal.shape) * sigma
    R = signal + noise
    neuron_ids = tuple(f"n{j:04d}" for j in range(n_neurons))
    ceiling = synthetic_ceiling(sigma)
    truth = {
        "layer": layer,
        "sigma": float(sigma),
        "ceiling": ceiling,
        "n_axes": int(n_axes),
        "fan_in": int(fan_in),
        "seed": int(seed),
        "reference": reference.config_dict(),
        "readout": "readout.npz",
    }
    meta = {"units": "arbitrary", "provenance": f"synthetic readout of {layer}, sigma={sigma!r}, seed={seed}"}
    assembly = NeuralAssembly(area, stimuli.ids, neuron_ids, R, meta)
    return assembly, truth, {"weights": W.astype(np.float64), "offset": offset}


def write_synthetic_assembly(out, assembly: NeuralAssembly, stimuli: StimulusSet, truth: dict, readout: dict) -> Path:
    out = Path(out)
    save_assembly(assembly, stimuli, out,
                  {"ground_truth.json": json.dumps(truth, indent=2, sort_keys=True) + "\n"})
    try:
        # np.savez stores zip timestamps; write the arrays through a fixed-date zip for reproducible bytes
        _savez_deterministic(out / "readout.npz", readout)
    except OSError as exc:
        raise OutputError(f"cannot write {out / 'readout.npz'}: {exc}") from exc
    return out


def _savez_deterministic(path: Path, arrays: dict) -> None:
    import io
    import zipfile

    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


# ---------------------------------------------------------------------------- reports

REPORT_FIELDS = ("layer", "area", "score", "se", "n_valid_neurons")


@dataclass
class PredictivityReport:
    rows: list[dict]  # one per (layer, area), in layer-major order
    layers: tuple[str, ...]
    areas: tuple[str, ...]
    params: dict

    def grid(self) -> np.ndarray:
        """layers x areas matrix of scores."""
        g = np.empty((len(self.layers), len(self.areas)))
        for row in self.rows:
            g[self.layers.index(row["layer"]), self.areas.index(row["area"])] = row["score"]
        return g

    def best(self) -> dict[str, dict]:
        """Best-scoring layer per area (first layer wins ties)."""
        out = {}
        for area in self.areas:
            rows = [r for r in self.rows if r["area"] == area]
            top = max(rows, key=lambda r: r["score"])
            out[area] = {"layer": top["layer"], "score": top["score"], "se": top["se"]}
        return out

    def to_json(self) -> dict:
        return {"params": self.params, "layers": list(self.layers), "areas": list(self.areas),
                "rows": self.rows, "best_layer": self.best()}


def default_workers() -> int:
    raw = os.environ.get("NPRL_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NPRL_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("NPRL_WORKERS must be at least 1")
    return n


def score_model(model: ModelGraph, pairs, layers=LAYERS, k: int = 25, lam: float = 0.01, splits: int = 10,
                seed: int = 0, workers: int | None = None, ceilings: dict | None = None) -> PredictivityReport:
    """Score every capture layer against every (stimuli, assembly) pair.

    Jobs run on up to ``workers`` threads; rows are assembled in fixed
    (layer, area) order so the report does not depend on scheduling.  A layer
    whose activations have rank below ``k`` is mapped with as many components
    as its rank allows; the row records ``k_used``.
    """
    workers = default_workers() if workers is None else workers
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("no assemblies to score")
    areas = tuple(a.area for _, a in pairs)
    if len(set(areas)) != len(areas):
        raise ConfigError(f"duplicate area labels {areas}")
    layers = tuple(layers)
    acts = [extract_activations(model, stim, layers) for stim, _ in pairs]
    targets = [a.aligned(stim) for stim, a in pairs]
    jobs = [(li, ai) for li in range(len(layers)) for ai in range(len(pairs))]

    def run(job):
        li, ai = job
        return cross_validated_score(acts[ai][layers[li]], targets[ai], splits, k, lam, seed,
                                     stimulus_ids=pairs[ai][0].ids, clamp_k=True)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    rows = []
    for (li, ai), cv in zip(jobs, results):
        assembly = pairs[ai][1]
        row = {
            "layer": layers[li],
            "area": assembly.area,
            "score": cv.score,
            "se": cv.se,
            "n_valid_neurons": cv.n_valid_neurons,
            "mean_over_neurons": float(np.mean(cv.fold_means)),
            "fold_scores": cv.fold_scores,
            "n_invalid_cells": cv.n_invalid,
            "k_used": cv.k_used,
            "neurons": {nid: (None if np.isnan(r) else float(r)) for nid, r in zip(assembly.neuron_ids, cv.neuron_r)},
        }
        if ceilings and assembly.area in ceilings:
            row["ceiling_normalized"] = cv.score / float(ceilings[assembly.area])
        rows.append(row)
    params = {"k": k, "lambda": lam, "splits": splits, "seed": seed, "layers": list(layers)}
    return PredictivityReport(rows, layers, areas, params)


def write_report(report: PredictivityReport, out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(REPORT_FIELDS)
            for row in report.rows:
                w.writerow([row["layer"], row["area"], _fmt(row["score"]), _fmt(row["se"]), row["n_valid_neurons"]])
        (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write report to {out}: {exc}") from exc
    return out


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"layer": r["layer"], "area": r["area"], "score": float(r["score"]), "se": float(r["se"]),
                 "n_valid_neurons": int(r["n_valid_neurons"])} for r in csv.DictReader(f)]
