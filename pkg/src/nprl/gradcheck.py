"""Central finite-difference checks of the tape's gradients in float64."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import Head, TrunkConfig, build_model


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def _weighted_sum(out: T.Tensor, weights: np.ndarray) -> T.Tensor:
    return T.tsum(T.mul(out, T.Tensor(weights)))


def check_function(fn, arrays: list[np.ndarray], eps: float = 1e-6, seed: int = 0,
                   max_coords: int | None = None) -> float:
    """Largest relative error between tape and central-difference gradients of ``fn``.

    ``fn`` maps a list of tensors to an output tensor of any shape; it is
    reduced to a scalar with fixed random weights.  With ``max_coords`` only a
    random sample of each input's coordinates is perturbed.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn([T.Tensor(a) for a in arrays])
    weights = rng.normal(size=probe.shape)

    def loss_value(vals) -> float:
        with T.no_grad():
            return float(_weighted_sum(fn([T.Tensor(v) for v in vals]), weights).data)

    leaves = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    _weighted_sum(fn(leaves), weights).backward()
    worst = 0.0
    for i, a in enumerate(arrays):
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = rng.choice(a.size, size=max_coords, replace=False)
        numeric = np.empty(coords.size)
        for n, c in enumerate(coords):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[i].flat[c] += eps
            minus[i].flat[c] -= eps
            numeric[n] = (loss_value(plus) - loss_value(minus)) / (2 * eps)
        worst = max(worst, relative_error(analytic.ravel()[coords], numeric))
    return worst


def check_model(model, x: np.ndarray, mode: str = "train", n_dirs: int = 3, eps: float = 1e-6,
                seed: int = 0) -> float:
    """Directional-derivative check of a float64 model w.r.t. all parameters and the input.

    For random unit directions d compares <grad, d> with
    (L(theta + eps d) - L(theta - eps d)) / (2 eps).
    """
    rng = np.random.default_rng(seed)
    model = model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    names = list(model.params)
    with T.no_grad():
        probe = model.copy().forward(x, mode)
    weights = rng.normal(size=probe.shape)

    def loss_at(params: dict, xin: np.ndarray) -> float:
        m = model.copy()  # fresh running statistics each evaluation
        for k, v in params.items():
            m.params[k].data = v
        with T.no_grad():
            return float(_weighted_sum(m.forward(xin, mode), weights).data)

    m = model.copy()
    xin = T.Tensor(x.copy(), requires_grad=True)
    _weighted_sum(m.forward(xin, mode), weights).backward()
    grads = {k: m.params[k].grad for k in names}
    base = {k: model.params[k].data.copy() for k in names}
    analytic, numeric = [], []
    for _ in range(n_dirs):
        d = {k: rng.normal(size=base[k].shape) for k in names}
        dx = rng.normal(size=x.shape)
        norm = np.sqrt(sum(float((v * v).sum()) for v in d.values()) + float((dx * dx).sum()))
        d = {k: v / norm for k, v in d.items()}
        dx = dx / norm
        analytic.append(sum(float((grads[k] * d[k]).sum()) for k in names) + float((xin.grad * dx).sum()))
        up = loss_at({k: base[k] + eps * d[k] for k in names}, x + eps * dx)
        dn = loss_at({k: base[k] - eps * d[k] for k in names}, x - eps * dx)
        numeric.append((up - dn) / (2 * eps))
    return relative_error(np.array(analytic), np.array(numeric))


@dataclass
class GradCase:
    name: str
    rel_error: float


def _bn(training: bool, channels_last: bool):
    def fn(t):
        x, g, b = t
        c = x.shape[3] if channels_last else x.shape[1]
        return T.batchnorm2d(x, g, b, np.zeros(c), np.ones(c), training=training, channels_last=channels_last)
    return fn


def _jitter_biases(model, rng: np.random.Generator):
    """Zero-initialized biases can leave pre-activations exactly on the ReLU kink; move them off it."""
    for name, p in model.params.items():
        if name.endswith((".bias", ".beta")):
            p.data = (p.data + 0.1 * rng.normal(size=p.shape)).astype(p.data.dtype)
    return model


def gradient_suite(n_random: int = 12, seed: int = 0, full_resolution: bool = True) -> list[GradCase]:
    """Fixed op cases plus ``n_random`` randomly sized ones and whole-model checks."""
    rng = np.random.default_rng(seed)
    cases: list[GradCase] = []

    def add(name, fn, arrays, **kw):
        cases.append(GradCase(name, check_function(fn, arrays, seed=int(rng.integers(2 ** 31)), **kw)))

    def away_from_zero(shape):
        v = rng.normal(size=shape)
        return np.where(np.abs(v) < 0.05, 0.05 * np.sign(v) + 0.05 * (v == 0), v)

    add("add", lambda t: T.add(t[0], t[1]), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])
    add("sub", lambda t: T.sub(t[0], t[1]), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])
    add("mul", lambda t: T.mul(t[0], t[1]), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])
    add("mean", lambda t: T.mean(t[0]), [rng.normal(size=(2, 5))])
    add("relu", lambda t: T.relu(t[0]), [away_from_zero((4, 6))])
    add("flatten", lambda t: T.flatten(t[0]), [rng.normal(size=(2, 3, 2, 2))])
    add("select", lambda t: T.select(t[0], [2, 0, 1]), [rng.normal(size=(3, 4))])
    add("dense", lambda t: T.dense(t[0], t[1], t[2]), [rng.normal(size=(4, 5)), rng.normal(size=(5, 3)),
                                                      rng.normal(size=3)])
    labels = rng.integers(0, 5, size=6)
    add("softmax_cross_entropy", lambda t: T.softmax_cross_entropy(t[0], labels), [rng.normal(size=(6, 5))])
    target = rng.normal(size=(4, 3))
    add("mse", lambda t: T.mse(t[0], target), [rng.normal(size=(4, 3))])
    for stride in (1, 2):
        add(f"conv2d stride {stride}", lambda t, s=stride: T.conv2d(t[0], t[1], t[2], stride=s),
            [rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)])
    for training in (True, False):
        for cl in (False, True):
            shape = (3, 5, 4, 2) if cl else (3, 2, 5, 4)
            add(f"batchnorm2d {'train' if training else 'eval'}{' channels-last' if cl else ''}",
                _bn(training, cl), [rng.normal(size=shape), rng.normal(size=2), rng.normal(size=2)])

    for i in range(n_random):
        kind = ("conv2d", "batchnorm2d", "dense", "softmax_cross_entropy")[i % 4]
        n = int(rng.integers(1, 4))
        if kind == "conv2d":
            cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            h, stride = int(rng.integers(5, 10)), int(rng.integers(1, 3))
            add(f"random conv2d #{i} ({n}x{cin}x{h}x{h} -> {cout}, stride {stride})",
                lambda t, s=stride: T.conv2d(t[0], t[1], t[2], stride=s),
                [rng.normal(size=(n, cin, h, h)), rng.normal(size=(cout, cin, 3, 3)), rng.normal(size=cout)])
        elif kind == "batchnorm2d":
            c, h = int(rng.integers(1, 4)), int(rng.integers(2, 5))
            training = bool(rng.integers(2))
            add(f"random batchnorm2d #{i} ({n + 1}x{c}x{h}x{h}, {'train' if training else 'eval'})",
                _bn(training, False), [rng.normal(size=(n + 1, c, h, h)), rng.normal(size=c), rng.normal(size=c)])
        elif kind == "dense":
            f, u = int(rng.integers(1, 8)), int(rng.integers(1, 6))
            add(f"random dense #{i} ({n}x{f} -> {u})", lambda t: T.dense(t[0], t[1], t[2]),
                [rng.normal(size=(n, f)), rng.normal(size=(f, u)), rng.normal(size=u)])
        else:
            k = int(rng.integers(2, 7))
            lab = rng.integers(0, k, size=n + 2)
            add(f"random softmax_cross_entropy #{i} ({n + 2}x{k})",
                lambda t, y=lab: T.softmax_cross_entropy(t[0], y), [3 * rng.normal(size=(n + 2, k))])

    small = TrunkConfig(resolution=24, channels=(3, 4, 4, 3), fc_units=5)
    for head in (Head.classifier(4), Head.dueling(3)):
        for mode in ("train", "eval"):
            model = _jitter_biases(build_model(small, head, seed=int(rng.integers(1000))), rng)
            x = rng.random((3, 3, 24, 24))
            cases.append(GradCase(f"model 24px {head.kind} {mode}",
                                  check_model(model, x, mode, n_dirs=4, seed=int(rng.integers(2 ** 31)))))
    if full_resolution:
        for head in (Head.classifier(20), Head.dueling(6)):
            model = _jitter_biases(build_model(TrunkConfig(), head, seed=int(rng.integers(1000))), rng)
            x = rng.random((2, 3, 128, 128))
            cases.append(GradCase(f"model 128px {head.kind} train",
                                  check_model(model, x, "train", n_dirs=2, seed=int(rng.integers(2 ** 31)))))
    return cases
