"""Classifier variants and their training schemes.

Three networks share one architecture and differ in what they consume:
the plain net sees original images (N outputs), the masked net sees
masked images (N outputs), and the dual net sees each image twice with a
2N-way output layer, node i for original class i and node N+i for the
masked version of class i. The dual softmax couples the two nodes of a
class, which is the lever the saliency descent pulls on.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import dataset as ds
from . import tensor as T
from .rng import stream

LABEL_SPACES = ("plain", "masked", "dual")
VARIANTS = ("cnn1", "cnn2", "cnn3")
VARIANT_LABEL_SPACE = {"cnn1": "plain", "cnn2": "masked", "cnn3": "dual"}

CHECKPOINT_MAGIC = b"GSALCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class LabelSpaceError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 7
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need learning_rate > 0 and momentum in [0, 1)")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_accuracy: float
    samples_seen: int


class Network:
    """Ordered layer stack ending in softmax, with a declared label space."""

    def __init__(self, layers: Sequence[T.Layer], label_space: str,
                 class_names: Sequence[str], image_size: int,
                 arch: Optional[List[dict]] = None):
        if label_space not in LABEL_SPACES:
            raise LabelSpaceError(f"unknown label space {label_space!r}")
        if not layers or layers[-1].kind != "softmax":
            raise ValueError("network must end in a softmax layer")
        self.layers = list(layers)
        self.label_space = label_space
        self.class_names = list(class_names)
        self.image_size = int(image_size)
        self.arch = arch or []
        n = len(self.class_names)
        expected = 2 * n if label_space == "dual" else n
        out_layer = next(l for l in reversed(self.layers) if l.kind == "affine")
        if out_layer.out_features != expected:
            raise LabelSpaceError(
                f"{label_space} label space needs {expected} outputs, "
                f"network has {out_layer.out_features}"
            )
        self.out_width = expected

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def params(self) -> List[T.Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Probabilities for a (N, 3, H, W) image batch.

        Layers run channels-last internally; this boundary transposes.
        """
        if batch.ndim != 4:
            raise T.ShapeError(f"expected a (N, 3, H, W) batch, got {batch.shape}")
        nhwc = np.ascontiguousarray(batch.transpose(0, 2, 3, 1))
        return T.forward_stack(self.layers, nhwc)

    def forward_single(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3:
            raise T.ShapeError(f"expected a (3, H, W) image, got {image.shape}")
        return self.forward(image[None])[0]

    def input_gradient(self, error_signal: np.ndarray) -> np.ndarray:
        """Backprop a logits-level error signal down to the cached input.

        Returns the gradient in the caller's (N, 3, H, W) layout.
        """
        g = T.inject_output_error(self.layers, error_signal)
        return np.ascontiguousarray(g.transpose(0, 3, 1, 2))

    def accumulate_param_grads(self, error_signal: np.ndarray) -> None:
        """Training path: parameter grads only, no pixel gradient."""
        T.inject_output_error(self.layers, error_signal, input_grad=False)

    def classify(self, image: np.ndarray) -> Tuple[int, np.ndarray]:
        """Predicted label (argmax, lowest index on ties) and probabilities."""
        y = self.forward_single(image)
        return int(np.argmax(y)), y

    def zero_grads(self) -> None:
        T.zero_param_grads(self.layers)

    def clear_caches(self) -> None:
        T.clear_caches(self.layers)


def _toy_arch(image_size: int, out_width: int) -> List[dict]:
    """Small conv net for square RGB inputs: 3 conv/pool blocks, 2 affine."""
    if image_size % 8 != 0:
        raise ValueError(f"image size must be a multiple of 8, got {image_size}")
    side = image_size // 8
    return [
        {"kind": "conv2d", "in": 3, "out": 6, "k": 3, "stride": 1, "pad": 1},
        {"kind": "relu"},
        {"kind": "maxpool2d", "k": 2},
        {"kind": "conv2d", "in": 6, "out": 12, "k": 3, "stride": 1, "pad": 1},
        {"kind": "relu"},
        {"kind": "maxpool2d", "k": 2},
        {"kind": "conv2d", "in": 12, "out": 24, "k": 3, "stride": 1, "pad": 1},
        {"kind": "relu"},
        {"kind": "maxpool2d", "k": 2},
        {"kind": "flatten"},
        {"kind": "affine", "in": 24 * side * side, "out": 48},
        {"kind": "relu"},
        {"kind": "affine", "in": 48, "out": out_width},
        {"kind": "softmax"},
    ]


def _layers_from_arch(arch: List[dict], rng: np.random.Generator) -> List[T.Layer]:
    layers: List[T.Layer] = []
    for spec in arch:
        kind = spec["kind"]
        if kind == "conv2d":
            layers.append(T.Conv2d(spec["in"], spec["out"], spec["k"],
                                   stride=spec.get("stride", 1),
                                   padding=spec.get("pad", 0), rng=rng))
        elif kind == "maxpool2d":
            layers.append(T.MaxPool2d(spec["k"]))
        elif kind == "relu":
            layers.append(T.ReLU())
        elif kind == "flatten":
            layers.append(T.Flatten())
        elif kind == "affine":
            layers.append(T.Affine(spec["in"], spec["out"], rng=rng))
        elif kind == "softmax":
            layers.append(T.Softmax())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return layers


def build_network(class_names: Sequence[str], label_space: str,
                  image_size: int, seed: int = 0) -> Network:
    n = len(class_names)
    out_width = 2 * n if label_space == "dual" else n
    arch = _toy_arch(image_size, out_width)
    rng = stream(seed, "init", label_space)
    return Network(_layers_from_arch(arch, rng), label_space, class_names,
                   image_size, arch=arch)


def _training_arrays(manifest: ds.DatasetManifest, variant: str, split: str):
    """Materialize the (inputs, labels) stream a variant trains on.

    cnn1: originals -> l; cnn2: masked -> l; cnn3: originals -> l plus
    masked -> N + l (twice the samples).
    """
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no samples in split {split!r}")
    n = len(manifest.classes)
    images, labels = [], []
    for entry in entries:
        sample = manifest.load_sample(entry)
        if variant in ("cnn1", "cnn3"):
            images.append(sample.image.astype(np.float32))
            labels.append(sample.label)
        if variant in ("cnn2", "cnn3"):
            masked = ds.make_masked(sample)
            images.append(masked.astype(np.float32))
            labels.append(sample.label if variant == "cnn2" else n + sample.label)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def _batch_loss_and_seed(net: Network, xb: np.ndarray, yb: np.ndarray):
    """Forward a batch; return (mean NLL, logits-level gradient seed)."""
    probs = net.forward(xb)
    b = xb.shape[0]
    picked = np.clip(probs[np.arange(b), yb], 1e-300, None)
    loss = float(-np.log(picked).mean())
    seed = probs.copy()
    seed[np.arange(b), yb] -= 1.0
    seed /= b
    return loss, seed


def evaluate_accuracy(net: Network, images: np.ndarray, labels: np.ndarray,
                      batch_size: int = 64) -> float:
    hits = 0
    for start in range(0, len(images), batch_size):
        xb = images[start:start + batch_size].astype(np.float64)
        probs = net.forward(xb)
        hits += int((probs.argmax(axis=1) == labels[start:start + batch_size]).sum())
    net.clear_caches()
    return hits / len(images)


def train(net: Network, manifest: ds.DatasetManifest, variant: str,
          cfg: TrainConfig) -> List[EpochMetrics]:
    """Minibatch SGD with momentum; deterministic for a fixed seed."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if VARIANT_LABEL_SPACE[variant] != net.label_space:
        raise LabelSpaceError(
            f"variant {variant} needs label space "
            f"{VARIANT_LABEL_SPACE[variant]!r}, network has {net.label_space!r}"
        )
    train_x, train_y = _training_arrays(manifest, variant, "train")
    test_x, test_y = _training_arrays(manifest, variant, "test")
    if train_y.max() >= net.out_width:
        raise ValueError("label out of range for network output width")

    rng = stream(cfg.seed, "train", variant)
    params = net.params()
    velocity = [np.zeros_like(p.data) for p in params]
    history: List[EpochMetrics] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_x)) if cfg.shuffle \
            else np.arange(len(train_x))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = train_x[idx].astype(np.float64)
            yb = train_y[idx]
            net.zero_grads()
            loss, seed = _batch_loss_and_seed(net, xb, yb)
            net.accumulate_param_grads(seed)
            for p, v in zip(params, velocity):
                v *= cfg.momentum
                v -= cfg.learning_rate * p.grad
                p.data += v
            losses.append(loss)
        acc = evaluate_accuracy(net, test_x, test_y)
        history.append(EpochMetrics(epoch=epoch, train_loss=float(np.mean(losses)),
                                    test_accuracy=acc, samples_seen=len(train_x)))
    net.clear_caches()
    return history


def metrics_csv(history: List[EpochMetrics]) -> str:
    lines = ["epoch,loss,test_accuracy"]
    for m in history:
        lines.append(f"{m.epoch},{m.train_loss!r},{m.test_accuracy!r}")
    return "\n".join(lines) + "\n"


def save(net: Network, path) -> None:
    """Versioned little-endian checkpoint: header JSON, f64 blobs, CRC32."""
    header = {
        "label_space": net.label_space,
        "class_names": net.class_names,
        "image_size": net.image_size,
        "arch": net.arch,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
    blob += header_bytes
    for p in net.params():
        blob += p.data.astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def load(path, expect_label_space: Optional[str] = None) -> Network:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a gradsal checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum failure")
    off = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off += 8
    header = json.loads(raw[off:off + header_len].decode("utf-8"))
    off += header_len
    if expect_label_space and header["label_space"] != expect_label_space:
        raise LabelSpaceError(
            f"{path}: checkpoint label space {header['label_space']!r} "
            f"!= expected {expect_label_space!r}"
        )
    layers = _layers_from_arch(header["arch"], np.random.default_rng(0))
    net = Network(layers, header["label_space"], header["class_names"],
                  header["image_size"], arch=header["arch"])
    for p in net.params():
        n_bytes = p.data.size * 8
        if off + n_bytes > len(raw) - 4:
            raise CheckpointError(f"{path}: truncated parameter data")
        flat = np.frombuffer(raw, dtype="<f8", count=p.data.size, offset=off)
        p.data = flat.reshape(p.data.shape).astype(np.float64)
        off += n_bytes
    if off != len(raw) - 4:
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return net
