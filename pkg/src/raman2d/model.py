"""Convolutional inverse model: 2D power profile -> four pump powers."""

from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .sim import DEFAULT_PUMP_MAX, P_MIN_DBM, GridMismatchError, PowerProfile2D

log = logging.getLogger(__name__)

MAGIC = b"RINV"
VERSION = 1


class ModelFormatError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    pool: int = 1  # average-pooling factor after the activation; 1 means none


@dataclass(frozen=True)
class ModelArchitecture:
    conv_layers: tuple[ConvSpec, ...] = (ConvSpec(16, 3, 2), ConvSpec(32, 3, 2),
                                         ConvSpec(64, 3, 2), ConvSpec(64, 3, 1))
    dense_layers: tuple[int, ...] = (256, 128)
    input_shape: tuple[int, int] = (44, 100)
    n_outputs: int = 4

    def __post_init__(self):
        if len(self.conv_layers) != 4 or len(self.dense_layers) != 2:
            raise ValueError("architecture needs exactly 4 conv and 2 hidden dense layers")
        if self.n_outputs != 4:
            raise ValueError("the model predicts exactly 4 pump powers")
        dims = [c.out_channels for c in self.conv_layers] + [c.kernel for c in self.conv_layers]
        dims += [c.pool for c in self.conv_layers] + list(self.dense_layers) + list(self.input_shape)
        if min(dims) <= 0:
            raise ValueError("all architecture dimensions must be positive")
        h, w = self.feature_shape()
        if h <= 0 or w <= 0:
            raise ValueError("input too small for the pooling stack")

    def feature_shape(self) -> tuple[int, int]:
        h, w = self.input_shape
        for c in self.conv_layers:
            h, w = h // c.pool, w // c.pool
        return h, w

    @classmethod
    def tiny(cls, input_shape=(8, 12)) -> "ModelArchitecture":
        """Two-channel convs and three-unit dense layers, for gradient checks."""
        return cls(conv_layers=(ConvSpec(2, 3, 2), ConvSpec(2, 3, 2), ConvSpec(2, 3, 2), ConvSpec(2, 3, 1)),
                   dense_layers=(3, 3), input_shape=input_shape)


class InverseCNN(nn.Module):
    def __init__(self, arch: ModelArchitecture):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 1
        for c in arch.conv_layers:
            layers += [nn.Conv2d(in_ch, c.out_channels, c.kernel, padding=c.kernel // 2), nn.ReLU()]
            if c.pool > 1:
                layers.append(nn.AvgPool2d(c.pool))
            in_ch = c.out_channels
        probe = nn.Sequential(*layers)(torch.zeros(1, 1, *arch.input_shape))
        n_feat = probe.numel()
        layers.append(nn.Flatten())
        for size in arch.dense_layers:
            layers += [nn.Linear(n_feat, size), nn.ReLU()]
            n_feat = size
        layers.append(nn.Linear(n_feat, arch.n_outputs))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x.unsqueeze(1))


def init_weights(module: nn.Module, seed: int) -> None:
    """Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    g = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                m.weight.copy_(torch.rand(m.weight.shape, generator=g, dtype=m.weight.dtype) * 2 * bound - bound)
                m.bias.copy_(torch.rand(m.bias.shape, generator=g, dtype=m.bias.dtype) * 2 * bound - bound)


# -- normalization ---------------------------------------------------------------

@dataclass
class Normalization:
    """Per-cell profile standardization and min-max pump scaling."""

    profile_mean: np.ndarray | None = None
    profile_std: np.ndarray | None = None
    pump_min: np.ndarray = field(default_factory=lambda: np.full(4, P_MIN_DBM))
    pump_max: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PUMP_MAX))

    STD_FLOOR = 1e-6

    @classmethod
    def fit(cls, profiles, pump_min=None, pump_max=None) -> "Normalization":
        p = np.asarray(profiles, dtype=float)
        kw = {}
        if pump_min is not None:
            kw["pump_min"] = np.asarray(pump_min, dtype=float)
        if pump_max is not None:
            kw["pump_max"] = np.asarray(pump_max, dtype=float)
        return cls(p.mean(axis=0), np.maximum(p.std(axis=0), cls.STD_FLOOR), **kw)

    def _check(self):
        if self.profile_mean is None or self.profile_std is None:
            raise RuntimeError("normalization statistics have not been fitted")

    def normalize_profile(self, x):
        self._check()
        return (np.asarray(x, dtype=float) - self.profile_mean) / self.profile_std

    def denormalize_profile(self, x):
        self._check()
        return np.asarray(x, dtype=float) * self.profile_std + self.profile_mean

    def normalize_pumps(self, p):
        return (np.asarray(p, dtype=float) - self.pump_min) / (self.pump_max - self.pump_min)

    def denormalize_pumps(self, p):
        return np.asarray(p, dtype=float) * (self.pump_max - self.pump_min) + self.pump_min


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    early_stop_patience: int = 20
    seed: int = 0

    def __post_init__(self):
        for k in ("epochs", "batch_size", "learning_rate", "early_stop_patience"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")


@dataclass
class InverseModel:
    architecture: ModelArchitecture
    network: InverseCNN
    normalization: Normalization
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([p.detach().cpu().numpy().astype(np.float32).ravel()
                               for p in self.network.state_dict().values()])

    def predict_batch(self, profiles) -> np.ndarray:
        x = np.asarray(profiles, dtype=float)
        if x.shape[1:] != self.architecture.input_shape:
            raise GridMismatchError(
                f"profile shape {x.shape[1:]} does not match model input {self.architecture.input_shape}")
        xn = torch.as_tensor(self.normalization.normalize_profile(x), dtype=torch.float32)
        self.network.eval()
        with torch.no_grad():
            y = self.network(xn).double().numpy()
        nz = self.normalization
        return np.clip(nz.denormalize_pumps(y), nz.pump_min, nz.pump_max)

    def predict(self, profile) -> np.ndarray:
        if isinstance(profile, PowerProfile2D):
            profile = profile.values
        return self.predict_batch(np.asarray(profile)[None])[0]


def predict(model: InverseModel, profile) -> np.ndarray:
    """Pump powers (dBm) predicted for a single profile, clamped to the global bounds."""
    return model.predict(profile)


def _loss(net, x, y):
    return torch.mean((net(x) - y) ** 2)


def train(train_set, val_set, architecture: ModelArchitecture = ModelArchitecture(),
          config: TrainConfig = TrainConfig(), pump_min=None, pump_max=None) -> InverseModel:
    """Fit the inverse model with Adam on normalized-pump MSE.

    ``train_set`` and ``val_set`` are :class:`~raman2d.pipeline.Dataset`
    objects. Stops after ``early_stop_patience`` epochs without validation
    improvement and returns the weights of the best validation epoch.
    """
    torch.manual_seed(config.seed)
    norm = Normalization.fit(train_set.profiles, pump_min, pump_max)

    def tensors(ds):
        x = torch.as_tensor(norm.normalize_profile(ds.profiles), dtype=torch.float32)
        y = torch.as_tensor(norm.normalize_pumps(ds.pumps), dtype=torch.float32)
        return x, y

    xt, yt = tensors(train_set)
    xv, yv = tensors(val_set)
    net = InverseCNN(architecture)
    init_weights(net, config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed)

    best_state, best_val, best_epoch, stale = None, np.inf, 0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        net.train()
        perm = torch.randperm(len(xt), generator=gen)
        total = 0.0
        for start in range(0, len(xt), config.batch_size):
            idx = perm[start:start + config.batch_size]
            opt.zero_grad()
            loss = _loss(net, xt[idx], yt[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_loss = total / len(xt)
        net.eval()
        with torch.no_grad():
            val_loss = _loss(net, xv, yv).item() if len(xv) else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch} (train {train_loss}, val {val_loss}, "
                f"lr {config.learning_rate})")
        history.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_epoch, stale = val_loss, epoch, 0
            best_state = copy.deepcopy(net.state_dict())
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    net.load_state_dict(best_state)
    net.eval()
    return InverseModel(architecture, net, norm, history, best_epoch)


# -- metrics ---------------------------------------------------------------------

def r2_score(true, pred) -> np.ndarray:
    """Coefficient of determination per column (per pump for (n, 4) inputs)."""
    t = np.asarray(true, dtype=float)
    p = np.asarray(pred, dtype=float)
    if t.shape != p.shape:
        raise ValueError("true and predicted values must have the same shape")
    if t.shape[0] < 2:
        raise ValueError("need at least two samples")
    ss_tot = np.sum((t - t.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot == 0):
        raise ValueError("R2 undefined: true values have zero variance")
    return 1.0 - np.sum((t - p) ** 2, axis=0) / ss_tot


@dataclass
class MaeStats:
    mean: float
    std: float
    below_0_5: float
    below_1_0: float
    bin_edges: np.ndarray
    pdf: np.ndarray
    cdf_x: np.ndarray
    cdf_y: np.ndarray

    def fraction_below(self, threshold: float) -> float:
        return float(np.searchsorted(self.cdf_x, threshold, side="left") / len(self.cdf_x))

    def summary(self) -> dict:
        return {"mean": self.mean, "std": self.std, "fraction_below_0.5": self.below_0_5,
                "fraction_below_1.0": self.below_1_0, "count": int(len(self.cdf_x))}


def mae_statistics(errors, bin_width: float = 0.1) -> MaeStats:
    """Summary of per-profile maximum absolute errors (dB): moments, PDF and empirical CDF."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("no errors to summarize")
    top = max(bin_width, np.ceil(e.max() / bin_width + 1e-9) * bin_width)
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    pdf, edges = np.histogram(e, bins=edges, density=True)
    xs = np.sort(e)
    return MaeStats(mean=float(e.mean()), std=float(e.std()),
                    below_0_5=float(np.mean(e < 0.5)), below_1_0=float(np.mean(e < 1.0)),
                    bin_edges=edges, pdf=pdf, cdf_x=xs, cdf_y=np.arange(1, e.size + 1) / e.size)


def gradient_check(architecture: ModelArchitecture | None = None, n_samples: int = 3,
                   eps: float = 1e-4, seed: int = 0) -> np.ndarray:
    """Relative difference between autograd and central finite-difference gradients.

    Computed in float64 on random inputs for every parameter of the
    network; returns one relative error per parameter. The default step
    balances truncation against round-off for gradients far below the
    loss magnitude.
    """
    arch = architecture or ModelArchitecture.tiny()
    torch.manual_seed(seed)
    net = InverseCNN(arch).double()
    init_weights(net, seed)
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.randn((n_samples,) + arch.input_shape, generator=g, dtype=torch.float64)
    y = torch.rand((n_samples, arch.n_outputs), generator=g, dtype=torch.float64)

    net.zero_grad()
    _loss(net, x, y).backward()
    rel = []
    with torch.no_grad():
        for prm in net.parameters():
            flat = prm.view(-1)
            grad = prm.grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = _loss(net, x, y).item()
                flat[i] = orig - eps
                down = _loss(net, x, y).item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                ana = grad[i].item()
                rel.append(abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return np.array(rel)


# -- persistence -----------------------------------------------------------------

def model_save(model: InverseModel, path) -> None:
    """Binary layout (little-endian).

    magic ``RINV``, u16 version; architecture block: u32 input height,
    u32 input width, u32 n_conv, n_conv x (u32 out_channels, u32 kernel,
    u32 pool), u32 n_dense, n_dense x u32 size, u32 n_outputs;
    normalization block: u32 cell count, f64 means, f64 stds, 4 f64
    pump minima, 4 f64 pump maxima; u32 weight count, then f32 weights in
    layer order (each layer's weight tensor followed by its bias).
    """
    a, nz = model.architecture, model.normalization
    out = bytearray(MAGIC + struct.pack("<H", VERSION))
    out += struct.pack("<III", *a.input_shape, len(a.conv_layers))
    for c in a.conv_layers:
        out += struct.pack("<III", c.out_channels, c.kernel, c.pool)
    out += struct.pack("<I", len(a.dense_layers)) + struct.pack(f"<{len(a.dense_layers)}I", *a.dense_layers)
    out += struct.pack("<I", a.n_outputs)
    mean = np.asarray(nz.profile_mean, dtype="<f8").ravel()
    out += struct.pack("<I", mean.size) + mean.tobytes()
    out += np.asarray(nz.profile_std, dtype="<f8").ravel().tobytes()
    out += np.asarray(nz.pump_min, dtype="<f8").tobytes() + np.asarray(nz.pump_max, dtype="<f8").tobytes()
    w = model.weights.astype("<f4")
    out += struct.pack("<I", w.size) + w.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, fmt: str):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated model file")
        v = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return v

    def array(self, dtype: str, n: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * n
        if self.pos + size > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated model file")
        a = np.frombuffer(self.data, dtype=dtype, count=n, offset=self.pos).copy()
        self.pos += size
        return a


def model_load(path) -> InverseModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.take("<H")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    h, w, n_conv = r.take("<III")
    if n_conv > 64:
        raise ModelFormatError(f"{path}: implausible conv layer count {n_conv}")
    convs = tuple(ConvSpec(*r.take("<III")) for _ in range(n_conv))
    (n_dense,) = r.take("<I")
    if n_dense > 64:
        raise ModelFormatError(f"{path}: implausible dense layer count {n_dense}")
    dense = r.take(f"<{n_dense}I")
    (n_out,) = r.take("<I")
    try:
        arch = ModelArchitecture(convs, tuple(dense), (h, w), n_out)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: invalid architecture ({exc})") from None
    (n_cells,) = r.take("<I")
    if n_cells != h * w:
        raise ModelFormatError(f"{path}: normalization size {n_cells} does not match input {h}x{w}")
    mean = r.array("<f8", n_cells).reshape(h, w)
    std = r.array("<f8", n_cells).reshape(h, w)
    pmin, pmax = r.array("<f8", 4), r.array("<f8", 4)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
        raise ModelFormatError(f"{path}: invalid normalization statistics")
    (n_w,) = r.take("<I")
    net = InverseCNN(arch)
    state = net.state_dict()
    expected = sum(t.numel() for t in state.values())
    if n_w != expected:
        raise ModelFormatError(f"{path}: {n_w} weights stored, architecture needs {expected}")
    flat = r.array("<f4", n_w)
    if r.pos != len(r.data):
        raise ModelFormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    off = 0
    for k, t in state.items():
        state[k] = torch.from_numpy(flat[off:off + t.numel()].reshape(t.shape).copy())
        off += t.numel()
    net.load_state_dict(state)
    net.eval()
    return InverseModel(arch, net, Normalization(mean, std, pmin, pmax))
