"""Layer specs, parameter sets and forward passes for the embedding g and classifier h."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

CHECKPOINT_FORMAT = "ccsa-params"
CHECKPOINT_VERSION = 1

LAYER_KINDS = ("dense", "conv2d", "maxpool2d", "relu", "flatten", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    fan_in: int = 0
    fan_out: int = 0
    kernel: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")

    def __str__(self):
        if self.kind == "dense":
            return f"dense({self.fan_in}->{self.fan_out})"
        if self.kind == "conv2d":
            return f"conv2d({self.fan_in}->{self.fan_out}, {self.kernel}x{self.kernel})"
        return self.kind


def dense(fan_in: int, fan_out: int) -> LayerSpec:
    return LayerSpec("dense", fan_in, fan_out)


def conv(in_channels: int, filters: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv2d", in_channels, filters, kernel)


def maxpool() -> LayerSpec:
    return LayerSpec("maxpool2d")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


@dataclass(frozen=True)
class NetSpec:
    """A layer stack plus the per-sample input shape it expects."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shape entering each layer, plus the final output shape.

        Raises ShapeError naming the producing and consuming layers when the
        stack does not compose.
        """
        shapes = [self.input_shape]
        cur = self.input_shape
        for i, layer in enumerate(self.layers):
            prev = f"layer {i - 1} {self.layers[i - 1]}" if i else "input"
            where = f"{prev} -> layer {i} {layer}"
            if layer.kind == "dense":
                if len(cur) != 1 or cur[0] != layer.fan_in:
                    raise ShapeError("compose", cur, (layer.fan_in,), where)
                cur = (layer.fan_out,)
            elif layer.kind == "conv2d":
                if len(cur) != 3 or cur[0] != layer.fan_in or min(cur[1:]) < layer.kernel:
                    raise ShapeError("compose", cur, (layer.fan_in, layer.kernel, layer.kernel), where)
                cur = (layer.fan_out, cur[1] - layer.kernel + 1, cur[2] - layer.kernel + 1)
            elif layer.kind == "maxpool2d":
                if len(cur) < 2 or min(cur[-2:]) < 2:
                    raise ShapeError("compose", cur, (2, 2), where)
                cur = cur[:-2] + (cur[-2] // 2, cur[-1] // 2)
            elif layer.kind == "flatten":
                cur = (int(np.prod(cur)),)
            shapes.append(cur)
        return shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes()[-1]

    def param_shapes(self) -> list[tuple[int, ...]]:
        out = []
        for layer in self.layers:
            if layer.kind == "dense":
                out += [(layer.fan_in, layer.fan_out), (layer.fan_out,)]
            elif layer.kind == "conv2d":
                out += [(layer.fan_out, layer.fan_in, layer.kernel, layer.kernel), (layer.fan_out,)]
        return out

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [[l.kind, l.fan_in, l.fan_out, l.kernel] for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec(*row) for row in d["layers"]))

    def __add__(self, other: "NetSpec") -> "NetSpec":
        if self.output_shape != other.input_shape:
            raise ShapeError("compose", self.output_shape, other.input_shape, "g output -> h input")
        return NetSpec(self.input_shape, self.layers + other.layers)


def lenet_g(side: int = 16, channels: int = 1) -> NetSpec:
    """conv 6@5x5 -> pool -> conv 16@5x5 -> pool -> flatten -> 120 -> ReLU -> 84."""
    s = ((side - 4) // 2 - 4) // 2
    return NetSpec((channels, side, side), (
        conv(channels, 6, 5), maxpool(), conv(6, 16, 5), maxpool(), flatten(),
        dense(16 * s * s, 120), relu(), dense(120, 84)))


def mlp_g(in_dim: int, hidden: int = 1024, out: int = 128) -> NetSpec:
    """Two dense layers with a ReLU between; no activation on the embedding."""
    return NetSpec((in_dim,), (dense(in_dim, hidden), relu(), dense(hidden, out)))


def softmax_h(embed_dim: int, num_classes: int) -> NetSpec:
    return NetSpec((embed_dim,), (dense(embed_dim, num_classes), softmax()))


@dataclass
class NetworkParams:
    """Parameters of g and h.

    With ``shared_g`` both streams use ``g``; otherwise the target stream uses
    ``g_target``, which has the same shapes. Entries are numpy arrays, or leaf
    Tensors inside a training step (see :meth:`map`).
    """

    g: list
    h: list
    shared_g: bool = True
    g_target: list | None = None

    def __post_init__(self):
        if self.shared_g and self.g_target is not None:
            raise ValueError("shared_g=True must not carry a separate g_target")
        if not self.shared_g:
            if self.g_target is None:
                raise ValueError("shared_g=False requires g_target")
            if [np.shape(a) for a in self.g] != [np.shape(a) for a in self.g_target]:
                raise ShapeError("g_target", [np.shape(a) for a in self.g],
                                 [np.shape(a) for a in self.g_target])

    def g_for(self, stream: str) -> list:
        if stream not in ("source", "target"):
            raise ValueError(f"stream must be 'source' or 'target', got {stream!r}")
        return self.g if self.shared_g or stream == "source" else self.g_target

    def map(self, fn) -> "NetworkParams":
        return NetworkParams([fn(a) for a in self.g], [fn(a) for a in self.h], self.shared_g,
                             None if self.g_target is None else [fn(a) for a in self.g_target])

    def flat(self) -> list:
        """All distinct parameter entries: g, then g_target (if any), then h."""
        return list(self.g) + list(self.g_target or []) + list(self.h)

    def with_flat(self, values: list) -> "NetworkParams":
        ng = len(self.g)
        nt = len(self.g_target or [])
        return replace(self, g=list(values[:ng]),
                       g_target=None if self.g_target is None else list(values[ng:ng + nt]),
                       h=list(values[ng + nt:]))

    def copy(self) -> "NetworkParams":
        return self.map(lambda a: np.array(a, dtype=np.float64, copy=True))

    def unshared(self) -> "NetworkParams":
        """Split into two g streams, the target one starting as a copy of g."""
        if not self.shared_g:
            return self.copy()
        base = self.copy()
        return NetworkParams(base.g, base.h, False, [a.copy() for a in base.g])


def _glorot(rng: np.random.Generator, layer: LayerSpec) -> np.ndarray:
    if layer.kind == "dense":
        fan_in, fan_out = layer.fan_in, layer.fan_out
        shape = (fan_in, fan_out)
    else:
        k2 = layer.kernel * layer.kernel
        fan_in, fan_out = layer.fan_in * k2, layer.fan_out * k2
        shape = (layer.fan_out, layer.fan_in, layer.kernel, layer.kernel)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_stack(rng, spec: NetSpec) -> list[np.ndarray]:
    params = []
    for layer in spec.layers:
        if layer.has_params:
            params.append(_glorot(rng, layer))
            params.append(np.zeros(layer.fan_out))
    return params


def init_params(g_spec: NetSpec, h_spec: NetSpec, seed: int, shared_g: bool = True) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    if g_spec.output_shape != h_spec.input_shape:
        raise ShapeError("compose", g_spec.output_shape, h_spec.input_shape,
                         f"g last layer {g_spec.layers[-1]} -> h first layer {h_spec.layers[0]}")
    rng = np.random.default_rng(seed)
    g = _init_stack(rng, g_spec)
    h = _init_stack(rng, h_spec)
    if shared_g:
        return NetworkParams(g, h, True)
    return NetworkParams(g, h, False, [a.copy() for a in g])


def forward(spec: NetSpec, params: list, x) -> Tensor:
    """Run ``x`` (batch-first) through ``spec`` with the given parameter list."""
    x = ad.as_tensor(x)
    want = spec.input_shape
    if x.shape[1:] != want:
        if x.ndim >= 1 and int(np.prod(x.shape[1:])) == int(np.prod(want)):
            x = ad.reshape(x, (x.shape[0], *want))
        else:
            raise ShapeError("input", x.shape[1:], want, "batch features vs spec input")
    k = 0
    for layer in spec.layers:
        if layer.kind == "dense":
            x = ad.add(ad.matmul(x, params[k]), params[k + 1])
            k += 2
        elif layer.kind == "conv2d":
            bias = ad.reshape(params[k + 1], (layer.fan_out, 1, 1))
            x = ad.add(ad.conv2d(x, params[k]), bias)
            k += 2
        elif layer.kind == "maxpool2d":
            x = ad.maxpool2d(x)
        elif layer.kind == "relu":
            x = ad.relu(x)
        elif layer.kind == "flatten":
            x = ad.flatten(x)
        elif layer.kind == "softmax":
            x = ad.softmax(x)
    return x


def embed(params: NetworkParams, g_spec: NetSpec, batch, stream: str = "source") -> Tensor:
    """Embeddings g(x) for a batch, using the parameter set of ``stream``."""
    return forward(g_spec, params.g_for(stream), batch)


def predict(params: NetworkParams, h_spec: NetSpec, embeddings) -> Tensor:
    """Class probabilities h(z); rows sum to one when ``h_spec`` ends in softmax."""
    z = ad.as_tensor(embeddings)
    if z.shape[1:] != h_spec.input_shape:
        raise ShapeError("predict", z.shape[1:], h_spec.input_shape, "embedding width vs h fan-in")
    return forward(h_spec, params.h, z)


def save_params(path, params: NetworkParams, g_spec: NetSpec, h_spec: NetSpec,
                seed: int | None = None, extra: dict | None = None) -> None:
    """Write a checkpoint: an uncompressed ``.npz`` with a JSON ``__meta__`` entry.

    Arrays are stored as ``g/<i>``, ``g_target/<i>`` and ``h/<i>`` in float64,
    so a save/load round trip is bit-exact.
    """
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "g_spec": g_spec.to_dict(), "h_spec": h_spec.to_dict(),
            "shared_g": params.shared_g, "seed": seed,
            "counts": {"g": len(params.g), "g_target": len(params.g_target or []), "h": len(params.h)}}
    if extra:
        meta["extra"] = extra
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, group in (("g", params.g), ("g_target", params.g_target or []), ("h", params.h)):
        for i, a in enumerate(group):
            arrays[f"{name}/{i}"] = np.asarray(a, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> tuple[NetworkParams, NetSpec, NetSpec, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        groups = {name: [z[f"{name}/{i}"].copy() for i in range(n)]
                  for name, n in meta["counts"].items()}
    params = NetworkParams(groups["g"], groups["h"], meta["shared_g"],
                           groups["g_target"] if not meta["shared_g"] else None)
    return params, NetSpec.from_dict(meta["g_spec"]), NetSpec.from_dict(meta["h_spec"]), meta
