"""Toy convolutional noise predictor with timestep conditioning.

A small UNet in pixel space: `num_blocks` down/up pairs around one middle
block, skip connections, and a sinusoidal timestep embedding projected into
every block as a per-channel bias. Channels double per level from
`base_channels`. There is no encoder; the network sees raw pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .diffusion import NoiseSchedule, ddpm_loss
from .tensor import GradientTape, Tensor, concat, gradients, silu

CHECKPOINT_MAGIC = b"APDN0001"


@dataclass(frozen=True)
class DenoiserSpec:
    in_channels: int = 1
    base_channels: int = 16
    num_blocks: int = 2
    embed_dim: int = 32

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.embed_dim < 4 or self.embed_dim % 2:
            raise ValueError(f"embed_dim must be even and >= 4, got {self.embed_dim}")
        if self.in_channels < 1 or self.base_channels < 1:
            raise ValueError("channel counts must be positive")

    def channels(self, level: int) -> int:
        return self.base_channels * (2 ** level)


@dataclass
class DenoiserModel:
    spec: DenoiserSpec
    params: dict[str, Tensor]
    train_steps: int = 0
    final_loss: float = float("nan")
    loss_curve: list[float] = field(default_factory=list, repr=False)

    def predict(self, x, t: int) -> Tensor:
        return forward(self, x, t)

    def copy(self) -> "DenoiserModel":
        return DenoiserModel(spec=self.spec,
                             params={k: v.copy() for k, v in self.params.items()},
                             train_steps=self.train_steps,
                             final_loss=self.final_loss,
                             loss_curve=list(self.loss_curve))


def _param_shapes(spec: DenoiserSpec) -> dict[str, tuple[int, ...]]:
    """Parameter table in network order; dict order fixes checkpoint layout."""
    ed, nb = spec.embed_dim, spec.num_blocks
    shapes: dict[str, tuple[int, ...]] = {
        "temb.w": (ed, ed), "temb.b": (ed,),
        "stem.w": (spec.channels(0), spec.in_channels, 3, 3), "stem.b": (spec.channels(0),),
    }

    def block(prefix, cin, cout):
        shapes[f"{prefix}.conv1.w"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.conv1.b"] = (cout,)
        shapes[f"{prefix}.tproj.w"] = (cout, ed)
        shapes[f"{prefix}.tproj.b"] = (cout,)
        shapes[f"{prefix}.conv2.w"] = (cout, cout, 3, 3)
        shapes[f"{prefix}.conv2.b"] = (cout,)

    for i in range(nb):
        block(f"down{i}", spec.channels(i), spec.channels(i + 1))
    block("mid", spec.channels(nb), spec.channels(nb))
    for i in reversed(range(nb)):
        block(f"up{i}", 2 * spec.channels(i + 1), spec.channels(i))
    shapes["head.w"] = (spec.in_channels, spec.channels(0), 3, 3)
    shapes["head.b"] = (spec.in_channels,)
    return shapes


def init_model(spec: DenoiserSpec, seed: int) -> DenoiserModel:
    """He-normal weights, zero biases, drawn in fixed parameter order."""
    rng = np.random.default_rng([0x1A17, seed])
    params = {}
    for name, shape in _param_shapes(spec).items():
        if name.endswith(".b"):
            params[name] = Tensor(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))
    return DenoiserModel(spec=spec, params=params)


def _apply_block(p, prefix, h, emb):
    h = nn.conv2d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
    h = nn.channel_bias(h, nn.linear(emb, p[f"{prefix}.tproj.w"], p[f"{prefix}.tproj.b"]))
    h = silu(h)
    return silu(nn.conv2d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"]))


def _forward(model: DenoiserModel, x, t: int, want_blocks: bool):
    spec, p = model.spec, model.params
    x = x if isinstance(x, Tensor) else Tensor(x)
    c, h_dim, w_dim = x.shape if len(x.shape) == 3 else (None, 0, 0)
    div = 2 ** spec.num_blocks
    if c != spec.in_channels or h_dim % div or w_dim % div or h_dim < div or w_dim < div:
        raise ValueError(f"forward: image shape {x.shape} incompatible with "
                         f"{spec.in_channels} channels / {spec.num_blocks} blocks")

    emb = silu(nn.linear(nn.timestep_embed(t, spec.embed_dim), p["temb.w"], p["temb.b"]))
    h = silu(nn.conv2d(x, p["stem.w"], p["stem.b"]))
    blocks = []
    skips = []
    for i in range(spec.num_blocks):
        h = _apply_block(p, f"down{i}", h, emb)
        skips.append(h)
        h = nn.avg_pool2(h)
        blocks.append(h)
    h = _apply_block(p, "mid", h, emb)
    blocks.append(h)
    for i in reversed(range(spec.num_blocks)):
        h = concat([nn.upsample2(h), skips[i]], axis=0)
        h = _apply_block(p, f"up{i}", h, emb)
        blocks.append(h)
    out = nn.conv2d(h, p["head.w"], p["head.b"])
    return (out, blocks) if want_blocks else (out, None)


def forward(model: DenoiserModel, x_t, t: int) -> Tensor:
    """Predicted noise for x_t at timestep t; differentiable w.r.t. x_t and params."""
    return _forward(model, x_t, t, want_blocks=False)[0]


def block_probe(model: DenoiserModel, x_a, x_b, t: int) -> list[float]:
    """Per-block MSE between two inputs' intermediate activations, network order."""
    xa = x_a.data if isinstance(x_a, Tensor) else np.asarray(x_a)
    xb = x_b.data if isinstance(x_b, Tensor) else np.asarray(x_b)
    if xa.shape != xb.shape:
        raise ValueError(f"block_probe: shape mismatch {xa.shape} vs {xb.shape}")
    _, blocks_a = _forward(model, xa, t, want_blocks=True)
    _, blocks_b = _forward(model, xb, t, want_blocks=True)
    return [float(np.mean((a.data - b.data) ** 2)) for a, b in zip(blocks_a, blocks_b)]


def block_names(spec: DenoiserSpec) -> list[str]:
    """Probe entries in network order (up blocks run deepest-first)."""
    down = [f"down{i}" for i in range(spec.num_blocks)]
    ups = [f"up{i}" for i in reversed(range(spec.num_blocks))]
    return down + ["mid"] + ups


def _sgd(model: DenoiserModel, dataset: np.ndarray, steps: int, lr: float,
         rng: np.random.Generator, sched: NoiseSchedule) -> list[float]:
    """Plain SGD on the noise-prediction loss; one (image, t, eps) per step."""
    names = list(model.params)
    losses = []
    with np.errstate(over="ignore", invalid="ignore"):  # divergence raises below
        for step in range(steps):
            idx = int(rng.integers(0, len(dataset)))
            t = int(rng.integers(1, sched.T + 1))
            eps = rng.standard_normal(dataset[idx].shape)
            tape = GradientTape()
            for name in names:
                tape.watch(model.params[name])
            try:
                loss = ddpm_loss(model, dataset[idx], t, eps, sched)
                grads = gradients(loss, tape, [model.params[n] for n in names])
            except ValueError as e:
                raise ValueError(f"training diverged at step {step} ({e}); lower the learning rate") from e
            for name, g in zip(names, grads):
                p = model.params[name]
                p.data -= lr * g.data
                p.tape = None
            losses.append(loss.item())
    return losses


def train(spec: DenoiserSpec, dataset, steps: int, lr: float, seed: int,
          sched: NoiseSchedule) -> DenoiserModel:
    """Train a fresh model from scratch; deterministic given the seed."""
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 4 or len(dataset) == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) array")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = np.random.default_rng([0x7A41, seed])
    model = init_model(spec, seed)
    model.loss_curve = _sgd(model, dataset, steps, lr, rng, sched)
    model.train_steps = steps
    model.final_loss = model.loss_curve[-1]
    return model


# --- checkpoint format ---------------------------------------------------------
# magic (8 bytes) | 4 x uint32 spec fields | uint64 train_steps | float64 final_loss
# | uint32 n_params | per param: uint32 name_len, name (utf-8), uint32 rank,
# rank x uint32 dims, row-major little-endian float64 data.
# All integers little-endian. Exact layout also documented in docs/FORMATS.md.

def save_checkpoint(model: DenoiserModel, path):
    s = model.spec
    out = [CHECKPOINT_MAGIC,
           struct.pack("<4I", s.in_channels, s.base_channels, s.num_blocks, s.embed_dim),
           struct.pack("<Qd", model.train_steps, model.final_loss),
           struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", p.data.ndim))
        out.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        out.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_checkpoint(path) -> DenoiserModel:
    with open(path, "rb") as f:
        buf = f.read()

    def fail(offset, why):
        raise ValueError(f"{path}: checkpoint parse error at byte {offset}: {why}")

    if buf[:8] != CHECKPOINT_MAGIC:
        fail(0, "bad magic")
    pos = 8
    try:
        ic, bc, nb, ed = struct.unpack_from("<4I", buf, pos); pos += 16
        steps, final_loss = struct.unpack_from("<Qd", buf, pos); pos += 16
        (n_params,) = struct.unpack_from("<I", buf, pos); pos += 4
        params = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack_from("<I", buf, pos); pos += 4
            name = buf[pos:pos + name_len].decode("utf-8"); pos += name_len
            (rank,) = struct.unpack_from("<I", buf, pos); pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos); pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            params[name] = Tensor(data.copy())
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        fail(pos, str(e))
    if pos != len(buf):
        fail(pos, f"{len(buf) - pos} trailing bytes")
    spec = DenoiserSpec(in_channels=ic, base_channels=bc, num_blocks=nb, embed_dim=ed)
    expected = _param_shapes(spec)
    if list(params) != list(expected) or any(params[k].shape != expected[k] for k in expected):
        fail(pos, "parameter table does not match spec")
    return DenoiserModel(spec=spec, params=params, train_steps=int(steps),
                         final_loss=float(final_loss))
