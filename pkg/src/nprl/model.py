"""The fixed convolutional trunk with classifier or dueling heads.

Trunk: four valid 3x3 convolutions (16, 32, 64, 32 maps; strides 2, 2, 1, 1),
each followed by batch normalization and a rectifier, then one 64-unit dense
layer with a rectifier.  Heads attach to the 64-unit representation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

CAPTURE_POINTS = ("conv1", "conv2", "conv3", "conv4", "fc", "output")
LAYERS = CAPTURE_POINTS[:-1]


@dataclass(frozen=True)
class TrunkConfig:
    resolution: int = 128
    in_channels: int = 3
    channels: tuple[int, ...] = (16, 32, 64, 32)
    strides: tuple[int, ...] = (2, 2, 1, 1)
    kernel: int = 3
    fc_units: int = 64
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "strides", tuple(self.strides))
        if len(self.channels) != 4 or len(self.strides) != 4:
            raise ConfigError("trunk needs exactly 4 conv layers (channels and strides of length 4)")
        if self.kernel != 3:
            raise ConfigError("only 3x3 kernels are supported")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError(f"strides must be 1 or 2, got {self.strides}")
        if min(self.channels) < 1 or self.fc_units < 1 or self.in_channels < 1:
            raise ConfigError("channel and unit counts must be positive")
        sizes = self.spatial_sizes()
        if sizes[-1] < 1:
            raise ConfigError(f"resolution {self.resolution} too small for the trunk")

    def spatial_sizes(self) -> list[int]:
        sizes, h = [], self.resolution
        for s in self.strides:
            h = (h - 3) // s + 1 if h >= 3 else 0
            sizes.append(h)
        return sizes

    @property
    def flatten_size(self) -> int:
        return self.channels[-1] * self.spatial_sizes()[-1] ** 2

    def activation_sizes(self) -> dict[str, int]:
        sizes = self.spatial_sizes()
        out = {f"conv{i + 1}": c * h * h for i, (c, h) in enumerate(zip(self.channels, sizes))}
        out["fc"] = self.fc_units
        return out


@dataclass(frozen=True)
class Head:
    kind: str
    n_outputs: int

    def __post_init__(self):
        if self.kind not in ("classifier", "dueling"):
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if self.n_outputs < 2:
            raise ConfigError("heads need at least 2 classes or actions")

    @classmethod
    def classifier(cls, num_classes: int) -> "Head":
        return cls("classifier", num_classes)

    @classmethod
    def dueling(cls, num_actions: int) -> "Head":
        return cls("dueling", num_actions)


def parameter_count(trunk: TrunkConfig, head: Head | None = None) -> int:
    """Analytic count of trainable values (running statistics excluded)."""
    total, cin = 0, trunk.in_channels
    for c in trunk.channels:
        total += c * cin * 9 + c  # conv weight + bias
        total += 2 * c  # batchnorm gamma, beta
        cin = c
    total += trunk.flatten_size * trunk.fc_units + trunk.fc_units
    if head is not None:
        u = trunk.fc_units
        if head.kind == "classifier":
            total += u * head.n_outputs + head.n_outputs
        else:
            total += (u + 1) + (u * head.n_outputs + head.n_outputs)
    return total


def dueling_aggregate(v: Tensor, a: Tensor) -> Tensor:
    """Q = V + A - mean over actions of A."""
    if a.ndim != 2 or a.shape[1] == 0:
        raise ShapeError(f"dueling_aggregate: advantages must be N x A with A >= 1, got {a.shape}")
    if v.shape != (a.shape[0], 1):
        raise ShapeError(f"dueling_aggregate: value {v.shape} vs advantages {a.shape}")
    q = v.data + (a.data - a.data.mean(axis=1, keepdims=True))

    def back(g):
        return g.sum(axis=1, keepdims=True), g - g.mean(axis=1, keepdims=True)

    return T.from_op(q, (v, a), back, "dueling_aggregate")


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass
class ModelGraph:
    trunk: TrunkConfig
    head: Head
    seed: int
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def capture_points(self) -> tuple[str, ...]:
        return CAPTURE_POINTS

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "ModelGraph":
        """Copy of the model in another float precision (e.g. float64 for checks)."""
        out = self.copy()
        for name, p in out.params.items():
            out.params[name] = Tensor(p.data.astype(dtype), requires_grad=True, name=name)
        for name, b in out.buffers.items():
            out.buffers[name] = b.astype(dtype)
        return out

    def copy(self) -> "ModelGraph":
        return ModelGraph(
            trunk=self.trunk,
            head=self.head,
            seed=self.seed,
            params={k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()},
            buffers={k: b.copy() for k, b in self.buffers.items()},
            meta=dict(self.meta),
        )

    def same_architecture(self, other: "ModelGraph") -> bool:
        return (
            self.trunk == other.trunk
            and self.head == other.head
            and all(p.shape == other.params[k].shape for k, p in self.params.items() if k in other.params)
            and self.params.keys() == other.params.keys()
        )

    def load_state(self, other: "ModelGraph") -> None:
        """Overwrite parameters and running statistics with copies of ``other``'s."""
        if not self.same_architecture(other):
            raise ConfigError("cannot copy state between models of different architecture")
        for k, p in other.params.items():
            self.params[k].data = p.data.copy()
        for k, b in other.buffers.items():
            self.buffers[k] = b.copy()

    # ------------------------------------------------------------------ forward

    def _check_input(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        r = self.trunk.resolution
        want = (self.trunk.in_channels, r, r)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"model expects N x {want[0]} x {r} x {r} input, got {x.shape}")
        return x

    def _run(self, x: Tensor, training: bool, capture: set[str] | None):
        acts: dict[str, np.ndarray] = {}
        tc = self.trunk
        h = T.to_channels_last(x)
        for i, s in enumerate(tc.strides, start=1):
            h = T.conv2d_nhwc(h, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], stride=s)
            h = T.batchnorm2d(
                h,
                self.params[f"bn{i}.gamma"],
                self.params[f"bn{i}.beta"],
                self.buffers[f"bn{i}.running_mean"],
                self.buffers[f"bn{i}.running_var"],
                training=training,
                momentum=tc.bn_momentum,
                eps=tc.bn_eps,
                channels_last=True,
            )
            h = T.relu(h)
            if capture and f"conv{i}" in capture:
                acts[f"conv{i}"] = h.data.transpose(0, 3, 1, 2).reshape(h.shape[0], -1)
        h = T.flatten(T.to_channels_first(h))
        h = T.relu(T.dense(h, self.params["fc.weight"], self.params["fc.bias"]))
        if capture and "fc" in capture:
            acts["fc"] = h.data
        if self.head.kind == "classifier":
            out = T.dense(h, self.params["out.weight"], self.params["out.bias"])
        else:
            v = T.dense(h, self.params["value.weight"], self.params["value.bias"])
            a = T.dense(h, self.params["advantage.weight"], self.params["advantage.bias"])
            out = dueling_aggregate(v, a)
        if capture and "output" in capture:
            acts["output"] = out.data
        return out, acts

    def forward(self, batch, mode: str = "eval") -> Tensor:
        """Logits (classifier) or Q-values (dueling), N x n_outputs."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        out, _ = self._run(self._check_input(batch), mode == "train", None)
        return out

    __call__ = forward

    def forward_with_activations(self, batch, capture) -> tuple[Tensor, dict[str, np.ndarray]]:
        """Eval-mode forward returning flattened post-rectifier activations by name."""
        capture = set(capture)
        unknown = capture - set(CAPTURE_POINTS)
        if unknown:
            raise ConfigError(f"unknown capture point(s) {sorted(unknown)}; valid names: {list(CAPTURE_POINTS)}")
        with T.no_grad():
            out, acts = self._run(self._check_input(batch), False, capture)
        return out, acts

    def config_dict(self) -> dict:
        return {"trunk": asdict(self.trunk), "head": asdict(self.head), "seed": self.seed}


def build_model(trunk: TrunkConfig | None = None, head: Head | None = None, seed: int = 0) -> ModelGraph:
    """Deterministically initialized model (He-uniform weights, zero biases)."""
    trunk = trunk or TrunkConfig()
    if head is None:
        raise ConfigError("a head (classifier or dueling) is required")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    cin = trunk.in_channels
    for i, c in enumerate(trunk.channels, start=1):
        params[f"conv{i}.weight"] = _he_uniform(rng, (c, cin, 3, 3), cin * 9)
        params[f"conv{i}.bias"] = np.zeros(c, np.float32)
        params[f"bn{i}.gamma"] = np.ones(c, np.float32)
        params[f"bn{i}.beta"] = np.zeros(c, np.float32)
        buffers[f"bn{i}.running_mean"] = np.zeros(c, np.float32)
        buffers[f"bn{i}.running_var"] = np.ones(c, np.float32)
        cin = c
    f, u = trunk.flatten_size, trunk.fc_units
    params["fc.weight"] = _he_uniform(rng, (f, u), f)
    params["fc.bias"] = np.zeros(u, np.float32)
    k = head.n_outputs
    if head.kind == "classifier":
        params["out.weight"] = _he_uniform(rng, (u, k), u)
        params["out.bias"] = np.zeros(k, np.float32)
    else:
        params["value.weight"] = _he_uniform(rng, (u, 1), u)
        params["value.bias"] = np.zeros(1, np.float32)
        params["advantage.weight"] = _he_uniform(rng, (u, k), u)
        params["advantage.bias"] = np.zeros(k, np.float32)
    model = ModelGraph(
        trunk=trunk,
        head=head,
        seed=seed,
        params={n: Tensor(a, requires_grad=True, name=n) for n, a in params.items()},
        buffers=buffers,
    )
    assert model.n_parameters() == parameter_count(trunk, head)
    return model
