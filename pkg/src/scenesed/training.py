"""Dataset containers, fake-label generation, and the training loop.

Fake labels replace the training targets with randomly reordered copies
(a per-clip permutation of the scene one-hot, or an independent per-frame
permutation of each event vector) while the original labels stay untouched
for evaluation.  Training is fully seeded: a given (config, seed, dataset)
triple reproduces checkpoints and loss curves exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, LabelError
from .features import FeatureClip
from .model import GrlConfig, NetworkConfig, build_network, train_step
from .nn.losses import LossWeights
from .nn.optim import RAdam

FAKE_MODES = ("none", "scene", "event")


@dataclass
class LabeledClip:
    clip_id: str
    features: FeatureClip
    scene: np.ndarray  # one-hot over scene classes
    events: np.ndarray  # binary (frames x event classes)

    def __post_init__(self):
        self.scene = np.asarray(self.scene, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.float64)
        if not np.isin(self.scene, (0, 1)).all() or self.scene.sum() != 1:
            raise LabelError(f"{self.clip_id}: scene label must be one-hot")
        if not np.isin(self.events, (0, 1)).all():
            raise LabelError(f"{self.clip_id}: event roll must be binary")

    @property
    def scene_index(self) -> int:
        return int(np.argmax(self.scene))


def fake_scene_labels(clips: list[LabeledClip], rng: np.random.Generator) -> list[LabeledClip]:
    """Independently permute each clip's scene vector; inputs are not mutated."""
    out = []
    for clip in clips:
        perm = rng.permutation(clip.scene.size)
        out.append(LabeledClip(clip.clip_id, clip.features,
                               clip.scene[perm], clip.events))
    return out


def fake_event_labels(clips: list[LabeledClip], rng: np.random.Generator) -> list[LabeledClip]:
    """Independently permute each frame's event vector; inputs are not mutated."""
    out = []
    for clip in clips:
        roll = clip.events
        shuffled = np.empty_like(roll)
        for t in range(roll.shape[0]):
            shuffled[t] = roll[t][rng.permutation(roll.shape[1])]
        out.append(LabeledClip(clip.clip_id, clip.features, clip.scene, shuffled))
    return out


# Geometry presets; `full` mirrors the 500x64 production input, `fast` is the
# small profile used for quick synthetic experiments and CI.
PROFILES = {
    "full": dict(n_scenes=4, n_events=25, frames=500, bins=64,
                 trunk_channels=128, branch_channels=256, gru_units=32,
                 fc_units=32, freq_pools=(8, 2, 2), scene_time_pool=25),
    "fast": dict(n_scenes=4, n_events=6, frames=100, bins=16,
                 trunk_channels=16, branch_channels=32, gru_units=16,
                 fc_units=16, freq_pools=(4, 2, 2), scene_time_pool=25),
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    dataset: str | None = None
    variant: str = "mtl"
    grl_position: str | None = None
    grl_lambda: float = 1.0
    fake_labels: str = "none"
    fake_resample_per_epoch: bool = False
    seeds: tuple[int, ...] = (0,)
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    alpha: float = 0.0001
    beta: float = 1.0
    eval_fraction: float = 0.2
    threshold: float = 0.5
    dtype: str = "float64"
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

    def __post_init__(self):
        if self.fake_labels not in FAKE_MODES:
            raise ConfigError(f"unknown fake_labels mode {self.fake_labels!r}")
        if self.fake_labels != "none" and self.grl_position is not None:
            raise ConfigError(
                "fake labels and GRL are evaluated separately; pick one per run")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 1 and batch_size >= 2")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in (0, 1)")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            n_scenes=self.n_scenes, n_events=self.n_events,
            frames=self.frames, bins=self.bins,
            trunk_channels=self.trunk_channels,
            branch_channels=self.branch_channels,
            gru_units=self.gru_units, fc_units=self.fc_units,
            freq_pools=tuple(self.freq_pools),
            scene_time_pool=self.scene_time_pool,
            variant=self.variant,
            grl=GrlConfig(self.grl_position, self.grl_lambda),
            loss_weights=LossWeights(self.alpha, self.beta),
            dtype=self.dtype,
        )

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        d["seeds"] = list(self.seeds)
        d["freq_pools"] = list(self.freq_pools)
        return d


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "yes", "1"):
        return True
    if raw.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_none_str(raw: str):
    return None if raw.lower() == "none" else raw


_CONFIG_KEYS = {
    "name": str,
    "dataset": str,
    "variant": str,
    "grl_position": _parse_none_str,
    "grl_lambda": float,
    "fake_labels": str,
    "fake_resample_per_epoch": _parse_bool,
    "seeds": lambda raw: tuple(int(x) for x in raw.split(",")),
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "alpha": float,
    "beta": float,
    "eval_fraction": float,
    "threshold": float,
    "dtype": str,
    "n_scenes": int,
    "n_events": int,
    "frames": int,
    "bins": int,
    "trunk_channels": int,
    "branch_channels": int,
    "gru_units": int,
    "fc_units": int,
    "freq_pools": lambda raw: tuple(int(x) for x in raw.split(",")),
    "scene_time_pool": int,
}


def parse_config_lines(lines, source: str, extra_keys=()) -> dict:
    """Parse `key = value` lines into a dict; errors carry file:line anchors."""
    out: dict = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key == "profile":
            if raw not in PROFILES:
                raise ConfigError(
                    f"{source}:{lineno}: unknown profile {raw!r} (choices: {sorted(PROFILES)})")
            out.update(PROFILES[raw])
            continue
        if key in extra_keys:
            out[key] = raw
            continue
        conv = _CONFIG_KEYS.get(key)
        if conv is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return out


def load_experiment_config(path) -> ExperimentConfig:
    """Read an experiment config file; relative dataset paths resolve against it."""
    path = Path(path)
    values = parse_config_lines(path.read_text().splitlines(), str(path))
    values.setdefault("name", path.stem)
    if "dataset" not in values:
        raise ConfigError(f"{path}: missing required key 'dataset'")
    dataset = Path(values["dataset"])
    if not dataset.is_absolute():
        values["dataset"] = str((path.parent / dataset).resolve())
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def split_dataset(clips: list[LabeledClip], eval_fraction: float):
    """Deterministic stratified split: every k-th clip of each scene is held out."""
    k = max(2, int(round(1.0 / eval_fraction)))
    ordered = sorted(clips, key=lambda c: c.clip_id)
    train, holdout = [], []
    counters: dict[int, int] = {}
    for clip in ordered:
        idx = counters.get(clip.scene_index, 0)
        counters[clip.scene_index] = idx + 1
        (holdout if idx % k == k - 1 else train).append(clip)
    return train, holdout


def stack_batch(clips: list[LabeledClip], dtype):
    x = np.stack([c.features.values for c in clips]).astype(dtype)[:, None, :, :]
    s = np.stack([c.scene for c in clips]).astype(dtype)
    z = np.stack([c.events for c in clips]).astype(dtype)
    return x, s, z


@dataclass
class SeedRun:
    seed: int
    net: object
    # one row per epoch: (total, scene, event) mean over batches
    loss_curve: list[tuple[float, float, float]] = field(default_factory=list)


def apply_fake_labels(cfg: ExperimentConfig, clips, rng):
    if cfg.fake_labels == "scene":
        return fake_scene_labels(clips, rng)
    if cfg.fake_labels == "event":
        return fake_event_labels(clips, rng)
    return clips


def run_training(cfg: ExperimentConfig, clips: list[LabeledClip],
                 seeds=None) -> list[SeedRun]:
    """Train one network per seed; raises NumericalError if a seed diverges."""
    if not clips:
        raise ConfigError("dataset is empty")
    net_cfg = cfg.network_config()
    dtype = net_cfg.np_dtype
    runs = []
    for seed in (cfg.seeds if seeds is None else seeds):
        rng = np.random.default_rng(seed)
        train_clips = apply_fake_labels(cfg, clips, rng)
        net = build_network(net_cfg, seed=seed)
        opt = RAdam(net.params(), lr=cfg.learning_rate)
        weights = net_cfg.loss_weights
        x_all, s_all, z_all = stack_batch(train_clips, dtype)
        run = SeedRun(seed=seed, net=net)
        n = len(train_clips)
        for _ in range(cfg.epochs):
            if cfg.fake_resample_per_epoch and cfg.fake_labels != "none":
                train_clips = apply_fake_labels(cfg, clips, rng)
                x_all, s_all, z_all = stack_batch(train_clips, dtype)
            order = rng.permutation(n)
            sums = np.zeros(3)
            batches = 0
            for start in range(0, n, cfg.batch_size):
                take = order[start:start + cfg.batch_size]
                if take.size < 2:  # batch norm needs at least two clips
                    continue
                losses = train_step(net, x_all[take], s_all[take], z_all[take],
                                    weights, opt)
                sums += losses
                batches += 1
            run.loss_curve.append(tuple(sums / max(batches, 1)))
        runs.append(run)
    return runs
