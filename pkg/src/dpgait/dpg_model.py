"""Dual-branch convolutional regressor and its binary checkpoint format.

Each branch runs three ``MaxPool(ReLU(Conv3x3(.)))`` blocks; the two
flattened feature maps are concatenated and passed through four
``Dropout(ReLU(Linear(.)))`` layers and a final linear layer to a scalar.
With the default config a 128x128x3 input gives 16*16*128 = 32,768 features
per branch and 65,536 after concatenation.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import (CheckpointCorruptError, CheckpointFormatError, CheckpointIntegrityError,
                     DivergenceError, ShapeError)
from .tensor_core import Graph, Tensor

DEFAULT_CONV_CHANNELS = (32, 64, 128)
DEFAULT_FC_WIDTHS = (512, 256, 128, 64)
BRANCHES = ("coord", "traj")


@dataclass
class DpgConfig:
    conv_channels: tuple[int, ...] = DEFAULT_CONV_CHANNELS
    fc_widths: tuple[int, ...] = DEFAULT_FC_WIDTHS
    input_side: int = 128
    input_channels: int = 3
    dropout_p: float = 0.5
    shared_branches: bool = False
    target: str = "GDI"
    side: str = "L"
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.fc_widths = tuple(int(w) for w in self.fc_widths)
        n_pool = len(self.conv_channels)
        if self.input_side % (2 ** n_pool):
            raise ShapeError(f"input side {self.input_side} is not divisible by 2^{n_pool}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must satisfy 0 <= p < 1")

    @property
    def is_default_architecture(self) -> bool:
        return (self.conv_channels == DEFAULT_CONV_CHANNELS and self.fc_widths == DEFAULT_FC_WIDTHS
                and self.input_side == 128 and self.input_channels == 3)

    @property
    def branch_features(self) -> int:
        side = self.input_side // 2 ** len(self.conv_channels)
        return side * side * self.conv_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DpgConfig:
        return cls(**d)

    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter names and shapes in the fixed init and serialization order."""
        shapes = []
        branches = BRANCHES[:1] if self.shared_branches else BRANCHES
        for branch in branches:
            cin = self.input_channels
            for i, cout in enumerate(self.conv_channels, start=1):
                shapes.append((f"{branch}.conv{i}.weight", (cout, cin, 3, 3)))
                shapes.append((f"{branch}.conv{i}.bias", (cout,)))
                cin = cout
        fan_in = 2 * self.branch_features
        for i, width in enumerate(self.fc_widths, start=1):
            shapes.append((f"fc{i}.weight", (width, fan_in)))
            shapes.append((f"fc{i}.bias", (width,)))
            fan_in = width
        shapes.append(("out.weight", (1, fan_in)))
        shapes.append(("out.bias", (1,)))
        return shapes


class DpgModel:
    def __init__(self, config: DpgConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.metadata: dict = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def copy(self) -> DpgModel:
        return DpgModel(DpgConfig.from_dict(self.config.to_dict()),
                        {k: Tensor(t.data.copy(), requires_grad=True, name=k)
                         for k, t in self.params.items()})

    def astype(self, dtype) -> DpgModel:
        return DpgModel(self.config, {k: Tensor(t.data.astype(dtype), requires_grad=True, name=k)
                                      for k, t in self.params.items()})

    def conv_params(self, branch: str) -> list[tuple[Tensor, Tensor]]:
        name = BRANCHES[0] if self.config.shared_branches else branch
        return [(self.params[f"{name}.conv{i}.weight"], self.params[f"{name}.conv{i}.bias"])
                for i in range(1, len(self.config.conv_channels) + 1)]


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_model(config: DpgConfig, dtype=np.float32) -> DpgModel:
    """Glorot-uniform weights (conv fans counted over the 3x3 field), zero biases.

    Draws are taken from one seeded generator in ``parameter_shapes`` order.
    """
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in config.parameter_shapes():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            if len(shape) == 4:
                fan_in, fan_out = shape[1] * 9, shape[0] * 9
            else:
                fan_in, fan_out = shape[1], shape[0]
            a = glorot_bound(fan_in, fan_out)
            data = rng.uniform(-a, a, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return DpgModel(config, params)


def _prepare_images(images, config: DpgConfig, dtype) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    expected = (config.input_side, config.input_side, config.input_channels)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f"expected images of shape (N, {expected[0]}, {expected[1]}, "
                         f"{expected[2]}), got {images.shape}")
    # intensities are scaled to [0, 1] before the first convolution
    return images.astype(dtype) / dtype(255.0)


def branch_forward(model: DpgModel, branch: str, x: Tensor, trace: list | None = None) -> Tensor:
    for weight, bias in model.conv_params(branch):
        x = tc.conv2d(x, weight, bias)
        if trace is not None:
            trace.append((f"{branch}.conv", x.shape))
        x = tc.maxpool2d(tc.relu(x))
        if trace is not None:
            trace.append((f"{branch}.pool", x.shape))
    x = tc.flatten(x, start_axis=1)
    if trace is not None:
        trace.append((f"{branch}.flatten", x.shape))
    return x


def forward(model: DpgModel, coord_images, traj_images, mode: str = "eval", rng_state=None,
            trace: list | None = None) -> Tensor:
    """Predict one scalar per sample; returns a (batch,) tensor.

    Images are uint8 (or already float) arrays with values in 0..255. In
    train mode dropout masks are drawn from ``rng_state`` in layer order.
    """
    dtype = model.params["out.weight"].dtype.type
    coord = Tensor(_prepare_images(coord_images, model.config, dtype))
    traj = Tensor(_prepare_images(traj_images, model.config, dtype))
    if coord.shape[0] != traj.shape[0]:
        raise ShapeError("the two image batches differ in size")
    rng = tc._generator(rng_state) if mode == "train" else None
    h = tc.concat(branch_forward(model, "coord", coord, trace),
                  branch_forward(model, "traj", traj, trace))
    if trace is not None:
        trace.append(("concat", h.shape))
    for i in range(1, len(model.config.fc_widths) + 1):
        h = tc.linear(h, model.params[f"fc{i}.weight"], model.params[f"fc{i}.bias"])
        h = tc.dropout(tc.relu(h), model.config.dropout_p, mode, rng)
        if trace is not None:
            trace.append((f"fc{i}", h.shape))
    y = tc.linear(h, model.params["out.weight"], model.params["out.bias"])
    if trace is not None:
        trace.append(("out", y.shape))
    return tc.reshape(y, (y.shape[0],))


def backward(model: DpgModel, graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Run reverse accumulation and return finite gradients for every parameter."""
    model.zero_grad()
    graph.backward(loss)
    grads = {}
    for name, t in model.params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in layer {name}")
        grads[name] = g
    return grads


def loss_and_grads(model: DpgModel, coord, traj, targets, mode: str = "train", rng_state=None):
    with Graph() as graph:
        pred = forward(model, coord, traj, mode, rng_state)
        loss = tc.mse_loss(pred, np.asarray(targets, dtype=pred.dtype))
    if not np.isfinite(loss.data):
        raise DivergenceError("non-finite loss")
    return float(loss.data), backward(model, graph, loss), pred.data


def predict(model: DpgModel, coord, traj, batch_size: int = 32) -> np.ndarray:
    coord, traj = np.asarray(coord), np.asarray(traj)
    if coord.ndim == 3:
        coord, traj = coord[None], traj[None]
    out = [forward(model, coord[i:i + batch_size], traj[i:i + batch_size], "eval").data
           for i in range(0, len(coord), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def zero_model(config: DpgConfig) -> DpgModel:
    model = init_model(config)
    for t in model.params.values():
        t.data[...] = 0
    return model


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: b"DPGC" | u32 version | u64 header length | JSON header (utf-8)
#         | parameter blocks as little-endian float32, in header order

MAGIC = b"DPGC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(model: DpgModel, path, metadata: dict | None = None) -> None:
    blocks = [(name, np.ascontiguousarray(t.data, dtype="<f4")) for name, t in model.params.items()]
    payload = b"".join(b.tobytes() for _, b in blocks)
    header = {
        "config": model.config.to_dict(),
        "target": model.config.target,
        "side": model.config.side,
        "seed": model.config.seed,
        "metadata": metadata or {},
        "blocks": [{"name": n, "shape": list(b.shape)} for n, b in blocks],
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(raw)))
        fh.write(raw)
        fh.write(payload)


def read_checkpoint_header(path) -> dict:
    return _read(path)[0]


def load_checkpoint(path) -> DpgModel:
    header, model = _read(path)
    model.metadata = header["metadata"]
    return model


def _read(path):
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a DPGC checkpoint (bad magic)")
    if len(data) < _PREFIX.size:
        raise CheckpointCorruptError(f"{path}: truncated prefix")
    _, version, hlen = _PREFIX.unpack_from(data)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointCorruptError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        config = DpgConfig.from_dict(header["config"])
        directory = [(b["name"], tuple(b["shape"])) for b in header["blocks"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable header ({exc})") from exc

    expected = config.parameter_shapes()
    if directory != expected:
        raise CheckpointIntegrityError(
            f"{path}: header declares {len(directory)} blocks that do not match the "
            f"{len(expected)} parameters of its config")
    payload = data[start + hlen:]
    sizes = [int(np.prod(s)) * 4 for _, s in directory]
    declared = sum(sizes)
    if header.get("payload_bytes") != declared:
        raise CheckpointIntegrityError(f"{path}: payload size field disagrees with block directory")
    if len(payload) != declared:
        boundaries = np.cumsum([0] + sizes)
        if len(payload) < declared and len(payload) in boundaries:
            n_present = int(np.searchsorted(boundaries, len(payload)))
            raise CheckpointIntegrityError(
                f"{path}: header declares {len(directory)} blocks but file contains {n_present}")
        if len(payload) > declared:
            raise CheckpointIntegrityError(f"{path}: {len(payload) - declared} trailing bytes")
        raise CheckpointCorruptError(f"{path}: truncated inside a parameter block")
    if zlib.crc32(payload) != header.get("payload_crc32"):
        raise CheckpointCorruptError(f"{path}: payload checksum mismatch")

    params, pos = {}, 0
    for (name, shape), size in zip(directory, sizes):
        arr = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=pos)
        params[name] = Tensor(arr.astype(np.float32).reshape(shape), requires_grad=True, name=name)
        pos += size
    return header, DpgModel(config, params)

