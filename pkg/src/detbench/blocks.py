"""Forward-only, toy-width YOLO11 building blocks in numpy.

Tensors are ``(N, C, H, W)`` float64 arrays.  Weights are drawn from a seeded
generator and kept as float32 values so they survive a round trip through
the DBWT weight format unchanged.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ChannelMismatch, DecodeError, OddChannels, ShapeMismatch, TooSmall
from .geometry import BoundingBox, iou_matrix

Padding = Union[int, Tuple[int, int, int, int]]  # int or (top, bottom, left, right)

# k=2 convolutions keep spatial size with zero padding only on the far side
PAD_K2 = (0, 1, 0, 1)


def check_tensor4(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ShapeMismatch(f"expected a non-empty (N, C, H, W) tensor, got shape {x.shape}")
    return x


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: Padding = 0
    activation: str = "silu"
    weight: Optional[np.ndarray] = None   # (out, in, k, k)
    bias: Optional[np.ndarray] = None     # (out,)

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        if min(self.pads) < 0:
            raise ValueError("padding must be non-negative")
        if self.activation not in ("silu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight is None:
            self.weight = np.zeros((self.out_channels, self.in_channels, self.kernel, self.kernel), np.float32)
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, np.float32)
        if self.weight.shape != (self.out_channels, self.in_channels, self.kernel, self.kernel):
            raise ShapeMismatch(f"weight shape {self.weight.shape} does not match the conv spec")

    @property
    def pads(self) -> Tuple[int, int, int, int]:
        if isinstance(self.padding, int):
            return (self.padding,) * 4
        return tuple(self.padding)

    @classmethod
    def seeded(cls, rng: np.random.Generator, in_channels, out_channels, kernel, stride=1, padding=0,
               activation="silu") -> "ConvSpec":
        fan_in = in_channels * kernel * kernel
        w = rng.normal(0.0, np.sqrt(1.0 / fan_in), (out_channels, in_channels, kernel, kernel)).astype(np.float32)
        b = np.zeros(out_channels, np.float32)
        return cls(in_channels, out_channels, kernel, stride, padding, activation, w, b)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return conv2d(x, self)


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Direct cross-correlation followed by the spec's activation.

    Output size per axis is ``floor((H + pad_total - k) / stride) + 1``.
    """
    x = check_tensor4(x)
    if x.shape[1] != spec.in_channels:
        raise ChannelMismatch(f"input has {x.shape[1]} channels, conv expects {spec.in_channels}")
    top, bottom, left, right = spec.pads
    k, s = spec.kernel, spec.stride
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    if xp.shape[2] < k or xp.shape[3] < k:
        raise TooSmall(f"padded input {xp.shape[2:]} smaller than kernel {k}")
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    out = np.einsum("nchwij,ocij->nohw", win, spec.weight.astype(float), optimize=True)
    out += spec.bias.astype(float)[None, :, None, None]
    return silu(out) if spec.activation == "silu" else out


def max_pool_same(x: np.ndarray, kernel: int) -> np.ndarray:
    """Stride-1 max pool with -inf padding of kernel // 2 per side."""
    x = check_tensor4(x)
    if kernel == 1:
        return x.copy()
    p = kernel // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, kernel - 1 - p), (p, kernel - 1 - p)), constant_values=-np.inf)
    return sliding_window_view(xp, (kernel, kernel), axis=(2, 3)).max(axis=(-2, -1))


def upsample2x(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(check_tensor4(x), 2, axis=2), 2, axis=3)


# ---------------------------------------------------------------------------
# blocks


class Bottleneck:
    """Two k=2 convolutions with a residual connection; shape preserving."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.cv1 = ConvSpec.seeded(rng, channels, channels, 2, 1, PAD_K2)
        self.cv2 = ConvSpec.seeded(rng, channels, channels, 2, 1, PAD_K2)

    def convs(self):
        return {"cv1": self.cv1, "cv2": self.cv2}

    def __call__(self, x):
        return x + self.cv2(self.cv1(x))


class C3k2:
    """Split channels in half, run one half through k=2 bottlenecks, concat, project."""

    def __init__(self, in_channels: int, out_channels: Optional[int] = None, n_bottlenecks: int = 2,
                 rng: Optional[np.random.Generator] = None):
        if in_channels % 2:
            raise OddChannels(f"C3k2 needs an even channel count, got {in_channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels or in_channels
        half = in_channels // 2
        self.bottlenecks = [Bottleneck(half, rng) for _ in range(n_bottlenecks)]
        self.project = ConvSpec.seeded(rng, in_channels, self.out_channels, 1)

    def convs(self):
        out = {}
        for i, b in enumerate(self.bottlenecks):
            out.update({f"m{i}.{k}": v for k, v in b.convs().items()})
        out["project"] = self.project
        return out

    def __call__(self, x):
        x = check_tensor4(x)
        if x.shape[1] != self.in_channels:
            raise ChannelMismatch(f"C3k2 expects {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[1] % 2:
            raise OddChannels("odd channel count")
        half = x.shape[1] // 2
        xa, xb = x[:, :half], x[:, half:]
        for b in self.bottlenecks:
            xb = b(xb)
        return self.project(np.concatenate([xa, xb], axis=1))


class SPPF:
    """Parallel stride-1 max pools (5, 3, 1) concatenated along channels."""

    kernels = (5, 3, 1)

    def convs(self):
        return {}

    def __call__(self, x):
        x = check_tensor4(x)
        if x.shape[2] < 5 or x.shape[3] < 5:
            raise TooSmall(f"SPPF needs H, W >= 5, got {x.shape[2:]}")
        return np.concatenate([max_pool_same(x, k) for k in self.kernels], axis=1)


class C2PSA:
    """Two 1x1 paths, concatenated and modulated by a logistic spatial attention map."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        if channels % 2:
            raise OddChannels(f"C2PSA needs an even channel count, got {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        half = channels // 2
        self.path1 = ConvSpec.seeded(rng, channels, half, 1)
        self.path2 = ConvSpec.seeded(rng, channels, half, 1)
        self.attn = ConvSpec.seeded(rng, channels, 1, 1, activation="linear")
        self.project = ConvSpec.seeded(rng, channels, channels, 1)

    def convs(self):
        return {"path1": self.path1, "path2": self.path2, "attn": self.attn, "project": self.project}

    def paths(self, x):
        x = check_tensor4(x)
        if x.shape[1] != self.channels:
            raise ChannelMismatch(f"C2PSA expects {self.channels} channels, got {x.shape[1]}")
        return np.concatenate([self.path1(x), self.path2(x)], axis=1)

    def attention(self, z):
        return sigmoid(self.attn(z))

    def __call__(self, x, use_attention: bool = True):
        z = self.paths(x)
        if use_attention:
            z = self.attention(z) * z
        return self.project(z)


@dataclass
class FeaturePyramid:
    p3: np.ndarray
    p4: np.ndarray
    p5: np.ndarray

    def __post_init__(self):
        for a in (self.p3, self.p4, self.p5):
            check_tensor4(a)
        for fine, coarse in ((self.p3, self.p4), (self.p4, self.p5)):
            if fine.shape[2] != 2 * coarse.shape[2] or fine.shape[3] != 2 * coarse.shape[3]:
                raise ShapeMismatch(f"levels must halve: {fine.shape[2:]} -> {coarse.shape[2:]}")

    def levels(self):
        return (self.p3, self.p4, self.p5)


class Neck:
    """Top-down aggregation: upsample coarse, concat with finer, C3k2."""

    def __init__(self, channels: Tuple[int, int, int], rng: Optional[np.random.Generator] = None,
                 n_bottlenecks: int = 2):
        rng = rng if rng is not None else np.random.default_rng(0)
        c3, c4, c5 = channels
        self.channels = channels
        self.n5 = C3k2(c5, c5, n_bottlenecks, rng)
        self.n4 = C3k2(c5 + c4, c4, n_bottlenecks, rng)
        self.n3 = C3k2(c4 + c3, c3, n_bottlenecks, rng)

    def convs(self):
        out = {}
        for name in ("n5", "n4", "n3"):
            out.update({f"{name}.{k}": v for k, v in getattr(self, name).convs().items()})
        return out

    @staticmethod
    def merge(coarse, fine):
        up = upsample2x(coarse)
        if up.shape[2:] != fine.shape[2:]:
            raise ShapeMismatch(f"upsampled {up.shape[2:]} does not match finer level {fine.shape[2:]}")
        return np.concatenate([up, fine], axis=1)

    def __call__(self, p: FeaturePyramid) -> FeaturePyramid:
        n5 = self.n5(p.p5)
        n4 = self.n4(self.merge(p.p5, p.p4))
        n3 = self.n3(self.merge(n4, p.p3))
        return FeaturePyramid(n3, n4, n5)


def decode_level(raw: np.ndarray, stride: int, n_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Decode one level's ``(4 + n_classes, H, W)`` head output.

    Distances (left, top, right, bottom) are ReLU-clipped and measured in
    stride units from the cell centre.  Returns corner boxes ``(H*W, 4)`` and
    class scores ``(H*W, n_classes)``.
    """
    if raw.shape[0] != 4 + n_classes:
        raise ShapeMismatch(f"expected {4 + n_classes} head channels, got {raw.shape[0]}")
    h, w = raw.shape[1:]
    dist = np.maximum(raw[:4].reshape(4, -1), 0.0) * stride
    ys, xs = np.mgrid[0:h, 0:w]
    cx = (xs.ravel() + 0.5) * stride
    cy = (ys.ravel() + 0.5) * stride
    boxes = np.stack([cx - dist[0], cy - dist[1], cx + dist[2], cy + dist[3]], axis=1)
    scores = sigmoid(raw[4:].reshape(n_classes, -1)).T
    return boxes, scores


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> List[int]:
    """Greedy NMS; returns kept indices in descending score order."""
    order = list(np.argsort(-scores, kind="stable"))
    keep = []
    while order:
        i = order.pop(0)
        keep.append(int(i))
        if not order:
            break
        ious = iou_matrix(boxes[i:i + 1], boxes[order])[0]
        order = [j for j, v in zip(order, ious) if v <= iou_threshold]
    return keep


class DetectHead:
    """Anchor-free head: a linear 1x1 conv per level, distance decode, per-class NMS."""

    strides = (8, 16, 32)

    def __init__(self, channels: Tuple[int, int, int], n_classes: int = 5,
                 rng: Optional[np.random.Generator] = None, score_bias: float = -4.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_classes = n_classes
        self.heads = [ConvSpec.seeded(rng, c, 4 + n_classes, 1, activation="linear") for c in channels]
        for h in self.heads:
            h.bias[4:] = score_bias

    def convs(self):
        return {f"level{i}": h for i, h in enumerate(self.heads)}

    def raw(self, p: FeaturePyramid) -> List[np.ndarray]:
        return [head(x) for head, x in zip(self.heads, p.levels())]

    def __call__(self, p: FeaturePyramid, conf_threshold: float = 0.25, nms_iou: float = 0.45,
                 image_size: Optional[Tuple[int, int]] = None) -> List[List[BoundingBox]]:
        outputs = self.raw(p)
        if image_size is None:
            image_size = (p.p3.shape[3] * self.strides[0], p.p3.shape[2] * self.strides[0])
        return [
            postprocess([o[n] for o in outputs], self.strides, self.n_classes, conf_threshold, nms_iou, image_size)
            for n in range(p.p3.shape[0])
        ]


def postprocess(level_outputs: Sequence[np.ndarray], strides: Sequence[int], n_classes: int,
                conf_threshold: float = 0.25, nms_iou: float = 0.45,
                image_size: Optional[Tuple[int, int]] = None) -> List[BoundingBox]:
    """Decode every level, threshold on the best class score, NMS per class."""
    if not (0 < conf_threshold < 1 and 0 < nms_iou < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    all_boxes, all_scores = [], []
    for raw, stride in zip(level_outputs, strides):
        b, s = decode_level(np.asarray(raw, dtype=float), stride, n_classes)
        all_boxes.append(b)
        all_scores.append(s)
    boxes = np.concatenate(all_boxes)
    scores = np.concatenate(all_scores)
    if image_size is not None:
        boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0, image_size[0])
        boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0, image_size[1])
    cls = scores.argmax(axis=1)
    conf = scores.max(axis=1)
    cand = np.flatnonzero(conf > conf_threshold)
    dets = []
    for c in np.unique(cls[cand]):
        idx = cand[cls[cand] == c]
        for k in nms(boxes[idx], conf[idx], nms_iou):
            i = idx[k]
            x0, y0, x1, y1 = (float(v) for v in boxes[i])
            dets.append(BoundingBox(x0, y0, x1, y1, int(c), float(min(conf[i], 1.0))))
    dets.sort(key=lambda b: -b.confidence)
    return dets


# ---------------------------------------------------------------------------
# functional entry points (weights seeded per call)


def c3k2_forward(x, n_bottlenecks: int = 2, out_channels: Optional[int] = None, seed: int = 0) -> np.ndarray:
    x = check_tensor4(x)
    if x.shape[1] % 2:
        raise OddChannels(f"C3k2 needs an even channel count, got {x.shape[1]}")
    return C3k2(x.shape[1], out_channels, n_bottlenecks, np.random.default_rng(seed))(x)


def sppf_forward(x) -> np.ndarray:
    return SPPF()(x)


def c2psa_forward(x, seed: int = 0) -> np.ndarray:
    x = check_tensor4(x)
    if x.shape[1] % 2:
        raise OddChannels(f"C2PSA needs an even channel count, got {x.shape[1]}")
    return C2PSA(x.shape[1], np.random.default_rng(seed))(x)


def neck_aggregate(p: FeaturePyramid, seed: int = 0, n_bottlenecks: int = 2) -> FeaturePyramid:
    channels = (p.p3.shape[1], p.p4.shape[1], p.p5.shape[1])
    return Neck(channels, np.random.default_rng(seed), n_bottlenecks)(p)


def detect_head(p: FeaturePyramid, conf_threshold: float = 0.25, nms_iou: float = 0.45, n_classes: int = 5,
                seed: int = 0) -> List[BoundingBox]:
    """Detections for the first image of the batch."""
    channels = (p.p3.shape[1], p.p4.shape[1], p.p5.shape[1])
    return DetectHead(channels, n_classes, np.random.default_rng(seed))(p, conf_threshold, nms_iou)[0]


# ---------------------------------------------------------------------------
# full toy model


class ToyYOLO11:
    """Backbone (conv stem, C3k2 stages, SPPF, C2PSA), top-down neck and Detect head."""

    def __init__(self, widths: Sequence[int] = (16, 32, 64, 96, 128), n_classes: int = 5, seed: int = 0,
                 n_bottlenecks: int = 2):
        w1, w2, w3, w4, w5 = widths
        rng = np.random.default_rng(seed)
        self.widths = tuple(widths)
        self.n_classes = n_classes
        self.stem1 = ConvSpec.seeded(rng, 3, w1, 3, 2, 1)
        self.stem2 = ConvSpec.seeded(rng, w1, w2, 3, 2, 1)
        self.stage2 = C3k2(w2, w2, n_bottlenecks, rng)
        self.down3 = ConvSpec.seeded(rng, w2, w3, 3, 2, 1)
        self.stage3 = C3k2(w3, w3, n_bottlenecks, rng)
        self.down4 = ConvSpec.seeded(rng, w3, w4, 3, 2, 1)
        self.stage4 = C3k2(w4, w4, n_bottlenecks, rng)
        self.down5 = ConvSpec.seeded(rng, w4, w5, 3, 2, 1)
        self.stage5 = C3k2(w5, w5, n_bottlenecks, rng)
        self.sppf = SPPF()
        self.sppf_project = ConvSpec.seeded(rng, 3 * w5, w5, 1)
        self.c2psa = C2PSA(w5, rng)
        self.neck = Neck((w3, w4, w5), rng, n_bottlenecks)
        self.head = DetectHead((w3, w4, w5), n_classes, rng)

    def convs(self) -> Dict[str, ConvSpec]:
        out = {}
        for name, obj in vars(self).items():
            if isinstance(obj, ConvSpec):
                out[name] = obj
            elif hasattr(obj, "convs"):
                out.update({f"{name}.{k}": v for k, v in obj.convs().items()})
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for name, conv in self.convs().items():
            state[f"{name}.weight"] = conv.weight
            state[f"{name}.bias"] = conv.bias
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, conv in self.convs().items():
            for part in ("weight", "bias"):
                arr = state[f"{name}.{part}"]
                if arr.shape != getattr(conv, part).shape:
                    raise ShapeMismatch(f"{name}.{part}: {arr.shape} != {getattr(conv, part).shape}")
                setattr(conv, part, np.asarray(arr, dtype=np.float32))

    def backbone(self, x) -> FeaturePyramid:
        x = check_tensor4(x)
        if x.shape[1] != 3:
            raise ChannelMismatch(f"expected 3 input channels, got {x.shape[1]}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ShapeMismatch(f"input size {x.shape[2:]} must be a multiple of 32")
        x = self.stage2(self.stem2(self.stem1(x)))
        p3 = self.stage3(self.down3(x))
        p4 = self.stage4(self.down4(p3))
        p5 = self.stage5(self.down5(p4))
        p5 = self.c2psa(self.sppf_project(self.sppf(p5)))
        return FeaturePyramid(p3, p4, p5)

    def features(self, x) -> FeaturePyramid:
        return self.neck(self.backbone(x))

    def __call__(self, x, conf_threshold: float = 0.25, nms_iou: float = 0.45) -> List[List[BoundingBox]]:
        x = check_tensor4(x)
        return self.head(self.features(x), conf_threshold, nms_iou, (x.shape[3], x.shape[2]))


# ---------------------------------------------------------------------------
# DBWT weight files

MAGIC = b"DBWT"
VERSION = 1


def save_weights(path, tensors: Dict[str, np.ndarray]) -> None:
    """Header ``DBWT`` + u32 version, then per tensor: u32 name length, UTF-8
    name, u32 rank, u32 dims, little-endian float32 data."""
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_weights(path) -> Dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DecodeError(f"{path}: not a DBWT file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise DecodeError(f"{path}: unsupported DBWT version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(data):
                raise DecodeError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(data, "<f4", count, pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise DecodeError(f"{path}: truncated record ({exc})") from None
    return out
