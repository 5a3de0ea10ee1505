"""MLP stacks for the generator, category discriminator and classifier roles."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .autodiff import ShapeError, Tape, Tensor

__all__ = [
    "Role",
    "NetworkSpec",
    "Layer",
    "Network",
    "ModelBundle",
    "build",
    "forward",
    "predict_labels",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CHECKPOINT_VERSION",
]


class Role(str, Enum):
    GENERATOR = "generator"
    DISCRIMINATOR = "discriminator"
    CLASSIFIER = "classifier"
    DOMAIN_CLASSIFIER = "domain_classifier"


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 2
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.dims
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @property
    def dims(self) -> tuple:
        return (int(self.input_dim), *self.hidden_dims, int(self.output_dim))


@dataclass
class Layer:
    weight: Tensor
    bias: Tensor
    activate: bool


@dataclass
class Network:
    spec: NetworkSpec
    role: Role
    layers: list = field(default_factory=list)

    def __post_init__(self):
        self.role = Role(self.role)
        prev = self.spec.input_dim
        for layer in self.layers:
            w, b = layer.weight.shape, layer.bias.shape
            if len(w) != 2 or w[0] != prev or b != (w[1],):
                raise ShapeError(f"layer chain broken at weight {w}, bias {b} (expected {prev} inputs)")
            prev = w[1]
        if prev != self.spec.output_dim:
            raise ShapeError(f"last layer emits {prev}, spec says {self.spec.output_dim}")

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "Network":
        layers = [
            Layer(
                Tensor(l.weight.values.copy(), requires_grad=True),
                Tensor(l.bias.values.copy(), requires_grad=True),
                l.activate,
            )
            for l in self.layers
        ]
        return Network(self.spec, self.role, layers)


def build(spec: NetworkSpec, role: Union[Role, str]) -> Network:
    """He-uniform weights from ``spec.seed``, zero biases.

    Hidden layers are always activated; the final layer is activated only
    for the generator, whose output is used directly as the feature vector.
    """
    role = Role(role)
    if role in (Role.DISCRIMINATOR, Role.CLASSIFIER) and spec.output_dim < 2:
        raise ValueError("classification heads need output_dim >= 2")
    if role is Role.DOMAIN_CLASSIFIER and spec.output_dim != 2:
        raise ValueError("domain classifier must have output_dim 2")
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        last = i == len(dims) - 2
        layers.append(
            Layer(
                Tensor(w, requires_grad=True),
                Tensor(np.zeros(fan_out), requires_grad=True),
                activate=(not last) or role is Role.GENERATOR,
            )
        )
    return Network(spec, role, layers)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def forward(net: Network, x, tape: Optional[Tape] = None) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"{net.role.value} expects [m, {net.input_dim}] input, got {x.shape}")
    tape = tape if tape is not None else Tape(record=False)
    h = x
    for layer in net.layers:
        h = tape.affine(h, layer.weight, layer.bias)
        if layer.activate:
            h = tape.relu(h)
    return h


@dataclass
class ModelBundle:
    """Generator plus its heads.

    ``c`` is absent for the G+D ablation. ``domain`` holds the 2-way domain
    classifier used by the DANN baseline.
    """

    g: Network
    d: Optional[Network] = None
    c: Optional[Network] = None
    domain: Optional[Network] = None

    def __post_init__(self):
        feat = self.g.output_dim
        heads = [n for n in (self.d, self.c, self.domain) if n is not None]
        if not heads:
            raise ValueError("bundle needs at least one head")
        for head in heads:
            if head.input_dim != feat:
                raise ShapeError(
                    f"{head.role.value} expects {head.input_dim} features, generator emits {feat}"
                )
        if self.d is not None and self.c is not None and self.d.output_dim != self.c.output_dim:
            raise ShapeError(
                f"discriminator and classifier disagree on class count: "
                f"{self.d.output_dim} vs {self.c.output_dim}"
            )
        if self.domain is not None and self.domain.output_dim != 2:
            raise ShapeError("domain head must be 2-way")

    @property
    def n_classes(self) -> int:
        head = self.c if self.c is not None else self.d
        return head.output_dim

    @property
    def input_dim(self) -> int:
        return self.g.input_dim

    def networks(self) -> dict:
        return {
            name: net
            for name, net in (("g", self.g), ("d", self.d), ("c", self.c), ("domain", self.domain))
            if net is not None
        }

    def parameters(self) -> list:
        out = []
        for net in self.networks().values():
            out.extend(net.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "ModelBundle":
        return ModelBundle(**{k: v.copy() for k, v in self.networks().items()})

    def default_head(self) -> str:
        return "classifier" if self.c is not None else "discriminator"

    def features(self, x) -> np.ndarray:
        return forward(self.g, x).values

    def logits(self, x, head: str = "classifier") -> np.ndarray:
        net = self._head(head)
        return forward(net, forward(self.g, x)).values

    def _head(self, head: str) -> Network:
        if head not in ("classifier", "discriminator"):
            raise ValueError(f"unknown head {head!r}; use 'classifier' or 'discriminator'")
        net = self.c if head == "classifier" else self.d
        if net is None:
            raise ValueError(f"bundle has no {head} head")
        return net


def predict_labels(bundle: ModelBundle, x, head: str = "classifier") -> np.ndarray:
    """Argmax of the head's class scores; ties go to the lowest index."""
    return np.argmax(bundle.logits(x, head), axis=1)


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"MMENCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, bundle: ModelBundle, meta: Optional[dict] = None) -> None:
    """Write a self-describing binary checkpoint.

    Layout: magic, u32 version, u32 header length, UTF-8 JSON header, then
    every parameter as little-endian float64 in network/layer order.
    """
    header = {"networks": {}, "meta": meta or {}}
    blobs = []
    for name, net in bundle.networks().items():
        header["networks"][name] = {
            "role": net.role.value,
            "spec": asdict(net.spec),
            "activate": [l.activate for l in net.layers],
        }
        for p in net.parameters():
            blobs.append(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple:
    """Return ``(bundle, meta)`` from a file written by :func:`save_checkpoint`."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 8:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    nets = {}
    for name in ("g", "d", "c", "domain"):
        entry = header["networks"].get(name)
        if entry is None:
            continue
        spec_fields = dict(entry["spec"])
        spec = NetworkSpec(**spec_fields)
        layers = []
        for fan_in, fan_out, act in zip(spec.dims[:-1], spec.dims[1:], entry["activate"]):
            arrays = []
            for shape in ((fan_in, fan_out), (fan_out,)):
                n = int(np.prod(shape)) * 8
                if off + n > len(data):
                    raise CheckpointError(f"{path}: truncated parameter data")
                arrays.append(np.frombuffer(data, dtype="<f8", count=n // 8, offset=off).reshape(shape).copy())
                off += n
            layers.append(Layer(Tensor(arrays[0], requires_grad=True), Tensor(arrays[1], requires_grad=True), act))
        nets[name] = Network(spec, Role(entry["role"]), layers)
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return ModelBundle(**nets), header["meta"]
