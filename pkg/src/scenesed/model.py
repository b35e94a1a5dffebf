"""Network assembly: shared trunk, scene branch, event branch, GRL insertion.

The full multitask network is

    trunk:  [conv 3x3 -> BN -> LeakyReLU -> maxpool 1xP0]
            then 2 x [conv 3x3 -> BN -> LeakyReLU -> maxpool 1x2]
    scene:  [conv 3x3 -> BN -> LeakyReLU -> maxpool Qx1]
            [conv 3x3 -> BN -> LeakyReLU -> global max pool]
            FC -> LeakyReLU -> FC n_scenes (softmax applied at the loss)
    event:  per-frame flatten -> BiGRU -> FC -> LeakyReLU -> FC n_events
            (sigmoid applied at the loss)

with default sizes matching the 500x64 input geometry (P0=8, Q=25, 128/256
channels, 32 GRU units / FC units).  Single-task variants keep the trunk plus
one branch.  A gradient reversal node can be inserted at the scene branch
input (S1), after the scene global max pool (S2), at the event branch input
(E1), or after the BiGRU (E2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .nn.layers import (
    BatchNorm, BiGru, Conv2d, FrameFlatten, GlobalMaxPool, Grl, LeakyReLU,
    Linear, MaxPool2d,
)
from .nn.losses import (
    LossWeights, event_bce_loss, mtl_loss, scene_ce_loss, sigmoid, softmax,
)

GRL_POSITIONS = ("S1", "S2", "E1", "E2")
VARIANTS = ("mtl", "asc", "sed")
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class GrlConfig:
    position: str | None = None
    lam: float = 1.0

    def __post_init__(self):
        if self.position is not None and self.position not in GRL_POSITIONS:
            raise ConfigError(f"unknown GRL position {self.position!r}")
        if self.lam < 0:
            raise ConfigError("GRL lambda must be >= 0")


@dataclass(frozen=True)
class NetworkConfig:
    n_scenes: int = 4
    n_events: int = 25
    frames: int = 500
    bins: int = 64
    trunk_channels: int = 128
    branch_channels: int = 256
    gru_units: int = 32
    fc_units: int = 32
    freq_pools: tuple[int, int, int] = (8, 2, 2)
    scene_time_pool: int = 25
    variant: str = "mtl"
    grl: GrlConfig = field(default_factory=GrlConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_scenes < 2:
            raise ConfigError("need at least 2 scene classes")
        if self.n_events < 1:
            raise ConfigError("need at least 1 event class")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.variant != "mtl" and self.grl.position is not None:
            raise ConfigError("GRL insertion requires the MTL variant")
        if self.trunk_freq_out < 1:
            raise ConfigError(
                f"frequency pooling {self.freq_pools} collapses {self.bins} bins "
                "to nothing")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def trunk_freq_out(self) -> int:
        f = self.bins
        for p in self.freq_pools:
            f //= p
        return f

    @property
    def frame_width(self) -> int:
        """Per-frame feature width entering the BiGRU."""
        return self.trunk_channels * self.trunk_freq_out


@dataclass
class Predictions:
    """Softmax scene probabilities and sigmoid event probabilities."""
    scene_probs: np.ndarray | None
    event_probs: np.ndarray | None


class MtlNetwork:
    """Fixed-topology layer graph with shared trunk and task branches."""

    def __init__(self, config: NetworkConfig, trunk, scene_head, event_head):
        self.config = config
        self.trunk = trunk
        self.scene_head = scene_head
        self.event_head = event_head
        self._trunk_out_shape = None

    # -- structure ---------------------------------------------------------

    def layers(self):
        heads = (self.scene_head or []) + (self.event_head or [])
        return list(self.trunk) + heads

    def params(self):
        return [p for layer in self.layers() for p in layer.params()]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def state_entries(self):
        return [e for layer in self.layers() for e in layer.state_entries()]

    def manifest(self) -> dict:
        return {
            "variant": self.config.variant,
            "trunk": [l.describe() for l in self.trunk],
            "scene_head": [l.describe() for l in self.scene_head] if self.scene_head else None,
            "event_head": [l.describe() for l in self.event_head] if self.event_head else None,
        }

    def load_state(self, entries: dict[str, np.ndarray]):
        dtype = self.config.np_dtype
        own = {name: arr for name, arr in self.state_entries()}
        for name, arr in own.items():
            if name not in entries:
                raise ConfigError(f"checkpoint is missing {name}")
            if entries[name].shape != arr.shape:
                raise ShapeError(
                    f"{name}: checkpoint shape {entries[name].shape} != {arr.shape}")
            arr[...] = entries[name].astype(dtype)

    # -- compute -----------------------------------------------------------

    def _run(self, layers, x, train):
        for layer in layers:
            x = layer.forward(x, train)
        return x

    def forward(self, x: np.ndarray, train: bool = False):
        """Returns (scene_logits, event_logits); absent branches give None."""
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input (N,1,T,F), got {x.shape}")
        h = self._run(self.trunk, x, train)
        self._trunk_out_shape = h.shape
        scene_logits = self._run(self.scene_head, h, train) if self.scene_head else None
        event_logits = self._run(self.event_head, h, train) if self.event_head else None
        return scene_logits, event_logits

    def backward(self, d_scene=None, d_event=None):
        """Backpropagate head gradients; trunk gradients sum over branches."""
        d_trunk = None
        if d_scene is not None:
            g = d_scene
            for layer in reversed(self.scene_head):
                g = layer.backward(g)
            d_trunk = g
        if d_event is not None:
            g = d_event
            for layer in reversed(self.event_head):
                g = layer.backward(g)
            d_trunk = g if d_trunk is None else d_trunk + g
        if d_trunk is None:
            raise ValueError("backward needs at least one head gradient")
        for layer in reversed(self.trunk):
            d_trunk = layer.backward(d_trunk)
        return d_trunk

    def predict(self, x: np.ndarray) -> Predictions:
        scene_logits, event_logits = self.forward(x, train=False)
        return Predictions(
            scene_probs=softmax(scene_logits) if scene_logits is not None else None,
            event_probs=sigmoid(event_logits) if event_logits is not None else None,
        )


def _conv_block(c_in, c_out, pool, rng, dtype, name):
    return [
        Conv2d(c_in, c_out, rng, dtype=dtype, name=f"{name}.conv"),
        BatchNorm(c_out, dtype=dtype, name=f"{name}.bn"),
        LeakyReLU(LEAKY_SLOPE, name=f"{name}.act"),
        MaxPool2d(pool[0], pool[1], name=f"{name}.pool"),
    ]


def build_network(config: NetworkConfig, seed: int = 0) -> MtlNetwork:
    """Instantiate the configured topology with seeded fan-in init."""
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype
    tc, bc = config.trunk_channels, config.branch_channels
    p0, p1, p2 = config.freq_pools

    trunk = (
        _conv_block(1, tc, (1, p0), rng, dtype, "trunk.block1")
        + _conv_block(tc, tc, (1, p1), rng, dtype, "trunk.block2")
        + _conv_block(tc, tc, (1, p2), rng, dtype, "trunk.block3")
    )

    scene_head = None
    if config.variant in ("mtl", "asc"):
        scene_head = _conv_block(tc, bc, (config.scene_time_pool, 1), rng, dtype,
                                 "scene.block1")
        scene_head += [
            Conv2d(bc, bc, rng, dtype=dtype, name="scene.block2.conv"),
            BatchNorm(bc, dtype=dtype, name="scene.block2.bn"),
            LeakyReLU(LEAKY_SLOPE, name="scene.block2.act"),
            GlobalMaxPool(name="scene.block2.gmp"),
            Linear(bc, config.fc_units, rng, dtype=dtype, name="scene.fc1"),
            LeakyReLU(LEAKY_SLOPE, name="scene.fc1.act"),
            Linear(config.fc_units, config.n_scenes, rng, dtype=dtype, name="scene.fc2"),
        ]

    event_head = None
    if config.variant in ("mtl", "sed"):
        event_head = [
            FrameFlatten(name="event.frames"),
            BiGru(config.frame_width, config.gru_units, rng, dtype=dtype,
                  name="event.bigru"),
            Linear(2 * config.gru_units, config.fc_units, rng, dtype=dtype,
                   name="event.fc1"),
            LeakyReLU(LEAKY_SLOPE, name="event.fc1.act"),
            Linear(config.fc_units, config.n_events, rng, dtype=dtype, name="event.fc2"),
        ]

    net = MtlNetwork(config, trunk, scene_head, event_head)
    if config.grl.position is not None:
        insert_grl(net, config.grl.position, config.grl.lam)
    return net


def _grl_index(net: MtlNetwork, position: str):
    """(head, insertion index) for a GRL position."""
    if position == "S1":
        return net.scene_head, 0
    if position == "S2":
        head = net.scene_head
        idx = next(i for i, l in enumerate(head) if isinstance(l, GlobalMaxPool)) + 1
        return head, idx
    if position == "E1":
        return net.event_head, 0
    if position == "E2":
        head = net.event_head
        idx = next(i for i, l in enumerate(head) if isinstance(l, BiGru)) + 1
        return head, idx
    raise ConfigError(f"unknown GRL position {position!r}")


def insert_grl(net: MtlNetwork, position: str, lam: float = 1.0) -> MtlNetwork:
    """Insert exactly one gradient reversal node at S1/S2/E1/E2."""
    if net.config.variant != "mtl":
        raise ConfigError("GRL insertion requires the MTL variant")
    if any(isinstance(l, Grl) for l in net.layers()):
        raise ConfigError("network already contains a GRL node")
    if position not in GRL_POSITIONS:
        raise ConfigError(f"unknown GRL position {position!r}")
    head, idx = _grl_index(net, position)
    head.insert(idx, Grl(lam, name=f"grl.{position.lower()}"))
    return net


def upstream_param_names(net: MtlNetwork, position: str) -> set[str]:
    """Names of parameters strictly upstream of a GRL position.

    Works whether or not the GRL is already inserted (the node itself carries
    no parameters).
    """
    names = {p.name for layer in net.trunk for p in layer.params()}
    head, idx = _grl_index(net, position)
    for layer in head[:idx]:
        for p in layer.params():
            names.add(p.name)
    return names


def train_step(net: MtlNetwork, x, scene_targets, event_targets,
               weights: LossWeights, optimizer):
    """One optimisation step on a batch; returns (total, scene, event) losses.

    The combined objective is alpha * scene CE + beta * event BCE; both head
    gradients flow in one backward pass and sum inside the trunk.
    """
    net.zero_grads()
    scene_logits, event_logits = net.forward(x, train=True)
    l_scene = 0.0
    l_event = 0.0
    d_scene = d_event = None
    if scene_logits is not None:
        probs = softmax(scene_logits)
        l_scene, g = scene_ce_loss(probs, scene_targets)
        d_scene = weights.alpha * g
    if event_logits is not None:
        probs = sigmoid(event_logits)
        l_event, g = event_bce_loss(probs, event_targets)
        d_event = weights.beta * g
    total = mtl_loss(l_scene, l_event, weights)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite training loss {total}")
    net.backward(d_scene, d_event)
    optimizer.step()
    return total, l_scene, l_event
