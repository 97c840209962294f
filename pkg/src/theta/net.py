"""Joint-angle bin classifier: depthwise-separable inverted-residual network,
temperature-scaled softmax, frequency-weighted focal loss, hand-rolled Adam,
deterministic training with optional layer freezing.

torch supplies the tensor kernels and autograd; everything above that
(architecture, losses, weighting, optimizer update, checkpoint format,
training loop) lives here. Gradients are independently verified against
central finite differences in the test suite.
"""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import (
    ArgumentError,
    CheckpointFormatError,
    DataError,
    DegenerateDataError,
    LabelError,
    ShapeError,
)
from .handmodel import JOINT_COUNT, NUM_BINS

INPUT_CHANNELS = 9
INPUT_SIZE = 224

DEFAULT_TEMPERATURE = 2.0
DEFAULT_GAMMA = 2.0

BN_MOMENTUM = 0.1
BN_EPS = 1e-5

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class NetworkSpec:
    stem_channels: int = 16
    # (expansion factor, stride, output channels) per inverted-residual block.
    blocks: tuple = ((6, 1, 16), (6, 2, 24), (6, 2, 32), (6, 1, 32))

    def to_dict(self) -> dict:
        return {"stem_channels": self.stem_channels, "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            stem_channels=int(d["stem_channels"]),
            blocks=tuple(tuple(int(x) for x in b) for b in d["blocks"]),
        )


class InvertedResidual(nn.Module):
    """Expand -> depthwise 3x3 -> project; shortcut iff stride 1 and c_in == c_out."""

    def __init__(self, c_in: int, c_out: int, expansion: int, stride: int):
        super().__init__()
        mid = c_in * expansion
        self.use_shortcut = stride == 1 and c_in == c_out
        self.expand = nn.Conv2d(c_in, mid, 1, bias=False)
        self.expand_bn = nn.BatchNorm2d(mid, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.dw = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, groups=mid, bias=False)
        self.dw_bn = nn.BatchNorm2d(mid, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.project = nn.Conv2d(mid, c_out, 1, bias=False)
        self.project_bn = nn.BatchNorm2d(c_out, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.act = nn.ReLU6()

    def forward(self, x):
        y = self.act(self.expand_bn(self.expand(x)))
        y = self.act(self.dw_bn(self.dw(y)))
        y = self.project_bn(self.project(y))
        return x + y if self.use_shortcut else y


class JointBinNet(nn.Module):
    """Stem conv -> inverted-residual chain -> global average pool -> (15, 10) head."""

    def __init__(self, spec: NetworkSpec = NetworkSpec()):
        super().__init__()
        self.spec = spec
        self.stem = nn.Conv2d(INPUT_CHANNELS, spec.stem_channels, 3, stride=2, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(spec.stem_channels, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.act = nn.ReLU6()
        blocks = []
        c_in = spec.stem_channels
        for expansion, stride, c_out in spec.blocks:
            blocks.append(InvertedResidual(c_in, c_out, expansion, stride))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(c_in, JOINT_COUNT * NUM_BINS)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1:] != (INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE):
            raise ShapeError(
                f"expected (B, {INPUT_CHANNELS}, {INPUT_SIZE}, {INPUT_SIZE}), got {tuple(x.shape)}"
            )
        x = self.act(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            x = block(x)
        x = x.mean(dim=(2, 3))
        return self.head(x).view(-1, JOINT_COUNT, NUM_BINS)

    def module_groups(self) -> list:
        """Coarse layers in depth order, used by the freeze policy."""
        stem = nn.ModuleList([self.stem, self.stem_bn])
        return [stem, *self.blocks, self.head]


def init_parameters(net: JointBinNet, seed: int = 0) -> JointBinNet:
    """He-uniform conv/linear weights, unit batch norm, zero head. Seeded."""
    rng = np.random.default_rng([seed, 0x7EAA])
    for name, module in net.named_modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels // module.groups * module.kernel_size[0] * module.kernel_size[1]
            bound = float(np.sqrt(6.0 / fan_in))
            w = rng.uniform(-bound, bound, size=tuple(module.weight.shape))
            with torch.no_grad():
                module.weight.copy_(torch.from_numpy(w.astype(np.float32)))
        elif isinstance(module, nn.BatchNorm2d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.fill_(0.0)
                module.running_mean.fill_(0.0)
                module.running_var.fill_(1.0)
        elif isinstance(module, nn.Linear):
            with torch.no_grad():
                module.weight.zero_()
                module.bias.zero_()
    return net


def build_network(spec: NetworkSpec = NetworkSpec(), seed: int = 0) -> JointBinNet:
    net = JointBinNet(spec)
    init_parameters(net, seed)
    return net.to(memory_format=torch.channels_last)


def temperature_softmax(logits, temperature: float = DEFAULT_TEMPERATURE):
    """Per (sample, joint) softmax of logits / T, max-subtracted for stability.

    Accepts torch tensors (differentiable) or numpy arrays; returns the same
    kind it was given.
    """
    if temperature <= 0:
        raise ArgumentError(f"temperature must be > 0, got {temperature}")
    is_numpy = not torch.is_tensor(logits)
    z = torch.from_numpy(np.asarray(logits, dtype=np.float64)) if is_numpy else logits
    z = z / temperature
    z = z - z.max(dim=-1, keepdim=True).values
    e = torch.exp(z)
    p = e / e.sum(dim=-1, keepdim=True)
    return p.numpy() if is_numpy else p


def inverse_frequency_weights(histogram, floor: float = 1.0) -> np.ndarray:
    """(15, 10) class weights: 1/max(count, floor), rescaled to mean 1 per joint."""
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (JOINT_COUNT, NUM_BINS):
        raise ShapeError(f"expected ({JOINT_COUNT}, {NUM_BINS}) histogram, got {hist.shape}")
    if np.any(hist.sum(axis=1) <= 0):
        raise DegenerateDataError("a joint has an all-zero label histogram")
    w = 1.0 / np.maximum(hist, floor)
    return w / w.mean(axis=1, keepdims=True)


def focal_loss(probabilities, labels, alpha=None, gamma: float = DEFAULT_GAMMA):
    """Mean over (sample, joint) of -alpha[j, y] * (1 - p_y)^gamma * ln(p_y).

    probabilities: (B, 15, 10) rows summing to 1; labels: (B, 15) bin indices.
    p_y is clamped to >= 1e-12. Returns a scalar (torch if given torch).
    """
    if gamma < 0:
        raise ArgumentError(f"gamma must be >= 0, got {gamma}")
    is_numpy = not torch.is_tensor(probabilities)
    probs = (
        torch.from_numpy(np.asarray(probabilities, dtype=np.float64))
        if is_numpy
        else probabilities
    )
    labels_t = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if labels_t.numel() and (labels_t.min() < 0 or labels_t.max() >= NUM_BINS):
        raise LabelError(f"label bin outside 0..{NUM_BINS - 1}")
    p_y = probs.gather(-1, labels_t.unsqueeze(-1)).squeeze(-1)
    p_y = p_y.clamp_min(PROB_FLOOR)
    loss = -((1.0 - p_y) ** gamma) * torch.log(p_y)
    if alpha is not None:
        alpha_t = torch.as_tensor(
            np.asarray(alpha, dtype=np.float64) if not torch.is_tensor(alpha) else alpha
        ).to(loss.dtype)
        loss = loss * alpha_t.unsqueeze(0).expand_as(probs).gather(
            -1, labels_t.unsqueeze(-1)
        ).squeeze(-1)
    out = loss.mean()
    return float(out.item()) if is_numpy else out


@dataclass
class AdamState:
    """Standard bias-corrected Adam, applied in place to named parameters."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One Adam update over {name: tensor} params with matching grads."""
    state.t += 1
    t = state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)} for {name}")
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m = state.m[name]
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
            m_hat = m / (1 - state.beta1**t)
            v_hat = v / (1 - state.beta2**t)
            p.add_(-state.lr * m_hat / (v_hat.sqrt() + state.eps))
    return state


FREEZE_NONE = "none"
FREEZE_ALL_BUT_LAST_2 = "all_but_last_2"


def apply_freeze(net: JointBinNet, policy: str) -> list:
    """Mark parameters trainable per policy; returns frozen module list.

    all_but_last_2 keeps only the affine head and the last residual block
    trainable; frozen batch-norm layers also stop updating running stats.
    """
    groups = net.module_groups()
    if policy == FREEZE_NONE:
        frozen = []
    elif policy == FREEZE_ALL_BUT_LAST_2:
        frozen = groups[:-2]
    else:
        raise ArgumentError(f"unknown freeze policy {policy!r}")
    for module in frozen:
        for p in module.parameters():
            p.requires_grad_(False)
    return frozen


def _frozen_bns_eval(frozen_modules) -> None:
    for module in frozen_modules:
        for sub in module.modules():
            if isinstance(sub, nn.BatchNorm2d):
                sub.eval()


BN_CALIBRATION_SAMPLES = 256


def recalibrate_bn(net: JointBinNet, data, idx, batch_size: int, frozen=()) -> None:
    """Re-estimate batch-norm running statistics under the current weights.

    The exponential running estimates lag the rapidly-moving parameters
    during optimization (and near-constant channels make the variance
    estimate unstable), which can leave eval-mode predictions far from the
    batch-statistics behavior actually trained. A cumulative-average forward
    pass over a fixed slice of the training data pins the statistics to the
    current parameters. Frozen modules keep their stored statistics.
    """
    skip = {
        id(sub)
        for module in frozen
        for sub in module.modules()
        if isinstance(sub, nn.BatchNorm2d)
    }
    bns = [
        m for m in net.modules() if isinstance(m, nn.BatchNorm2d) and id(m) not in skip
    ]
    if not bns:
        return
    for m in bns:
        m.reset_running_stats()
        m.momentum = None  # cumulative average over the calibration pass
    net.train()
    _frozen_bns_eval(frozen)
    with torch.no_grad():
        for start in range(0, len(idx), batch_size):
            net(_batch_tensor(data.inputs, idx[start : start + batch_size]))
    for m in bns:
        m.momentum = BN_MOMENTUM


@dataclass
class TrainingData:
    """Prepared training set: quantized fused tensors plus labels.

    inputs: (N, 9, 224, 224) uint8, quantized from [-1, 1] floats;
    labels: (N, 15) int64 bin indices; groups: (N,) gesture ids used for
    the stratified split.
    """

    inputs: np.ndarray
    labels: np.ndarray
    groups: np.ndarray

    @staticmethod
    def quantize(prepared: np.ndarray) -> np.ndarray:
        return np.clip(np.rint((prepared + 1.0) * 127.5), 0, 255).astype(np.uint8)

    @staticmethod
    def dequantize(q: np.ndarray) -> np.ndarray:
        return q.astype(np.float32) / 127.5 - 1.0


def stratified_split(groups: np.ndarray, val_fraction: float, seed: int):
    """Per-group shuffled split; returns (train_idx, val_idx)."""
    rng = np.random.default_rng([seed, 0x5717])
    train, val = [], []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) * val_fraction))
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(val, dtype=np.int64))


@dataclass
class TrainResult:
    net: JointBinNet
    history: list
    best_state: dict
    best_val_acc: float


def _batch_tensor(q_inputs: np.ndarray, idx: np.ndarray) -> torch.Tensor:
    x = TrainingData.dequantize(q_inputs[idx])
    return torch.from_numpy(x).to(memory_format=torch.channels_last)


def _evaluate(net, data, idx, batch_size, alpha_t, gamma, temperature):
    net.eval()
    total_loss = 0.0
    correct = 0
    with torch.no_grad():
        for start in range(0, len(idx), batch_size):
            b = idx[start : start + batch_size]
            x = _batch_tensor(data.inputs, b)
            y = torch.from_numpy(data.labels[b])
            logits = net(x)
            probs = temperature_softmax(logits, temperature)
            loss = focal_loss(probs, y, alpha_t, gamma)
            total_loss += float(loss.item()) * len(b)
            correct += int((logits.argmax(dim=-1) == y).sum().item())
    return total_loss / len(idx), correct / (len(idx) * JOINT_COUNT)


def train(
    data: TrainingData,
    spec: NetworkSpec = NetworkSpec(),
    *,
    epochs: int = 10,
    lr: float = 0.001,
    batch_size: int = 16,
    gamma: float = DEFAULT_GAMMA,
    temperature: float = DEFAULT_TEMPERATURE,
    freeze: str = FREEZE_NONE,
    seed: int = 0,
    val_fraction: float = 0.2,
    bf16: bool = True,
    log_fn=None,
) -> TrainResult:
    """Deterministic training run; returns history and the best-val checkpoint.

    bf16 runs the forward/backward convolutions under bfloat16 autocast
    (parameters and the loss stay float32); disable for full fp32 compute.
    """
    net = build_network(spec, seed)
    frozen = apply_freeze(net, freeze)
    trainable = {n: p for n, p in net.named_parameters() if p.requires_grad}

    if epochs == 0:
        return TrainResult(net, [], _clone_state(net), 0.0)

    train_idx, val_idx = stratified_split(data.groups, val_fraction, seed)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError(
            f"empty split: {len(train_idx)} train / {len(val_idx)} val samples"
        )

    hist = np.zeros((JOINT_COUNT, NUM_BINS), dtype=np.int64)
    for j in range(JOINT_COUNT):
        np.add.at(hist[j], data.labels[train_idx, j], 1)
    alpha = inverse_frequency_weights(hist)
    alpha_t = torch.from_numpy(alpha.astype(np.float32))

    adam = AdamState(lr=lr)
    rng = np.random.default_rng([seed, 0xBA7C])
    history = []
    best_state = _clone_state(net)
    best_val_acc = -1.0

    for epoch in range(epochs):
        net.train()
        _frozen_bns_eval(frozen)
        perm = train_idx[rng.permutation(len(train_idx))]
        epoch_loss = 0.0
        correct = 0
        for start in range(0, len(perm), batch_size):
            b = perm[start : start + batch_size]
            x = _batch_tensor(data.inputs, b)
            y = torch.from_numpy(data.labels[b])
            with torch.autocast("cpu", dtype=torch.bfloat16, enabled=bf16):
                logits = net(x)
            logits = logits.float()
            probs = temperature_softmax(logits, temperature)
            loss = focal_loss(probs, y, alpha_t, gamma)
            for p in trainable.values():
                p.grad = None
            loss.backward()
            grads = {n: p.grad for n, p in trainable.items()}
            adam_step(trainable, grads, adam)
            epoch_loss += float(loss.item()) * len(b)
            correct += int((logits.detach().argmax(dim=-1) == y).sum().item())
        recalibrate_bn(net, data, perm[:BN_CALIBRATION_SAMPLES], batch_size, frozen)
        val_loss, val_acc = _evaluate(
            net, data, val_idx, batch_size, alpha_t, gamma, temperature
        )
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / len(perm),
            "train_acc": correct / (len(perm) * JOINT_COUNT),
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        if val_acc > best_val_acc:
            best_val_acc = val_acc
            best_state = _clone_state(net)
    return TrainResult(net, history, best_state, best_val_acc)


def predict_bins(net: JointBinNet, fused: np.ndarray, temperature: float = DEFAULT_TEMPERATURE):
    """Per-joint argmax bins and max-probability confidences for one tensor.

    Ties resolve to the lowest bin index.
    """
    net.eval()
    x = np.asarray(fused, dtype=np.float32)
    single = x.ndim == 3
    if single:
        x = x[None]
    with torch.no_grad():
        logits = net(torch.from_numpy(x).to(memory_format=torch.channels_last))
    probs = temperature_softmax(logits.numpy().astype(np.float64), temperature)
    bins = probs.argmax(axis=-1)
    conf = probs.max(axis=-1)
    if single:
        return bins[0], conf[0]
    return bins, conf


# --- checkpoint serialization -------------------------------------------------

CHECKPOINT_MAGIC = b"THETA1\x00"
CHECKPOINT_VERSION = 1


def _clone_state(net: JointBinNet) -> dict:
    return {
        k: v.detach().clone()
        for k, v in net.state_dict().items()
        if not k.endswith("num_batches_tracked")
    }


def _state_entries(state: dict) -> list:
    return sorted(state.items())


def save_checkpoint(net_or_state, path, spec: NetworkSpec | None = None) -> None:
    """Write magic, version, network config, shape table, then raw float32 data."""
    if isinstance(net_or_state, JointBinNet):
        state = _clone_state(net_or_state)
        spec = net_or_state.spec
    else:
        state = net_or_state
        if spec is None:
            raise ArgumentError("spec required when saving a bare state dict")
    entries = _state_entries(state)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    config = json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(config)))
    buf.write(config)
    buf.write(struct.pack("<I", len(entries)))
    for name, tensor in entries:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        dims = tuple(tensor.shape)
        buf.write(struct.pack("<I", len(dims)))
        for d in dims:
            buf.write(struct.pack("<I", d))
    for _, tensor in entries:
        buf.write(tensor.detach().numpy().astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def load_checkpoint(path) -> JointBinNet:
    """Rebuild the network from a checkpoint file; no partial loads."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointFormatError("bad checkpoint magic")
        (version,) = struct.unpack("<B", _read_exact(fh, 1))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            spec = NetworkSpec.from_dict(json.loads(_read_exact(fh, cfg_len)))
        except (ValueError, KeyError) as exc:
            raise CheckpointFormatError(f"bad network config: {exc}")
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4))
        table = []
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            table.append((name, dims))
        tensors = {}
        for name, dims in table:
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 4 * count)
            tensors[name] = torch.from_numpy(
                np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
            )
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes after checkpoint data")

    net = JointBinNet(spec)
    expected = _clone_state(net)
    if set(expected) != set(tensors):
        missing = set(expected) ^ set(tensors)
        raise CheckpointFormatError(f"shape table mismatch: {sorted(missing)}")
    for name, tensor in tensors.items():
        if tuple(expected[name].shape) != tuple(tensor.shape):
            raise CheckpointFormatError(
                f"shape mismatch for {name}: expected {tuple(expected[name].shape)}, got {tuple(tensor.shape)}"
            )
    net.load_state_dict(tensors, strict=False)
    return net.to(memory_format=torch.channels_last)
