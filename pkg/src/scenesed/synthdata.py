"""Synthetic scene/event dataset generation.

Each scene is described by per-event occurrence priors, per-event spectral
templates, and a background spectrum (level plus tilt).  A clip is built in
linear energy space: lognormal-jittered background, one contiguous interval
per active event with its template added on top, then a floored natural log
to land in the same log-mel space the feature extractor produces.  The event
roll and scene label are emitted from the placement bookkeeping itself, so
labels are exact by construction.

Two scenes share most of their event priors by default, mirroring the kind
of city-centre / residential-area pair whose events overlap; the other two
scenes differ in both events and background.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, SpecError
from .features import (
    DEFAULT_CONFIG, LOG_FLOOR, FeatureClip, FeatureConfig, Waveform,
    extract_logmel, load_feature_file, mel_filter_centers, save_feature_file,
)
from .training import LabeledClip

DEFAULT_HOP_S = 0.020
DEFAULT_LEN_S = 0.040


@dataclass
class SceneSpec:
    name: str
    event_priors: np.ndarray  # (M,) per-clip occurrence probability per event
    templates: np.ndarray  # (M, D) linear-energy spectral patterns
    background_level: float = 1.0
    background_tilt: float = 0.0  # log-energy slope across bands

    def __post_init__(self):
        self.event_priors = np.asarray(self.event_priors, dtype=np.float64)
        self.templates = np.asarray(self.templates, dtype=np.float64)
        if ((self.event_priors < 0) | (self.event_priors > 1)).any():
            raise SpecError(f"{self.name}: priors must lie in [0, 1]")
        if (self.templates.max(axis=1) <= 0).any():
            raise SpecError(f"{self.name}: every template needs a positive band")
        if self.background_level <= 0:
            raise SpecError(f"{self.name}: background level must be positive")

    def background(self, bins: int) -> np.ndarray:
        ramp = np.linspace(-0.5, 0.5, bins)
        return self.background_level * np.exp(self.background_tilt * ramp)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "event_priors": self.event_priors.tolist(),
            "templates": self.templates.tolist(),
            "background_level": self.background_level,
            "background_tilt": self.background_tilt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(d["name"], np.asarray(d["event_priors"]),
                   np.asarray(d["templates"]), d["background_level"],
                   d["background_tilt"])


def event_templates(n_events: int, bins: int, amplitude: float = 6.0) -> np.ndarray:
    """Gaussian band bumps with centers spread across the spectrum."""
    centers = np.linspace(0.1 * bins, 0.9 * bins, n_events)
    width = max(1.0, 0.07 * bins)
    grid = np.arange(bins)
    return amplitude * np.exp(-0.5 * ((grid[None, :] - centers[:, None]) / width) ** 2)


def _prior_matrix(n_events: int, rows: list[list[tuple[int, float]]]) -> np.ndarray:
    out = np.zeros((len(rows), n_events))
    for i, entries in enumerate(rows):
        for event, p in entries:
            out[i, event % n_events] = p
    return out


def default_scene_specs(n_events: int = 25, bins: int = 64) -> list[SceneSpec]:
    """Four scenes; the first two overlap in events and background."""
    templates = event_templates(n_events, bins)
    q = max(n_events // 4, 2)
    rows = [
        # city_a / city_b: shared mid events, one private marker each
        [(0, 0.85)] + [(k, 0.65) for k in range(1, q)],
        [(q, 0.85)] + [(k, 0.65) for k in range(1, q)],
        [(k, 0.8) for k in range(q + 1, 2 * q)] + [(2 * q, 0.3)],
        [(k, 0.8) for k in range(2 * q + 1, 3 * q)] + [(2 * q, 0.3)],
    ]
    priors = _prior_matrix(n_events, rows)
    return [
        SceneSpec("city_a", priors[0], templates, 1.0, 0.0),
        SceneSpec("city_b", priors[1], templates, 1.0, 0.0),
        SceneSpec("park", priors[2], templates, 0.55, 2.5),
        SceneSpec("hall", priors[3], templates, 1.7, -2.5),
    ]


def fast_scene_specs(n_events: int = 6, bins: int = 16) -> list[SceneSpec]:
    """Small-profile counterpart of the default four scenes."""
    templates = event_templates(n_events, bins)
    priors = _prior_matrix(n_events, [
        [(0, 0.90), (1, 0.65), (2, 0.55), (4, 0.05)],
        [(3, 0.90), (1, 0.65), (2, 0.55), (4, 0.05)],
        [(4, 0.80), (5, 0.30), (0, 0.05), (1, 0.10)],
        [(5, 0.80), (4, 0.30), (2, 0.10), (3, 0.05)],
    ])
    return [
        SceneSpec("city_a", priors[0], templates, 1.0, 0.0),
        SceneSpec("city_b", priors[1], templates, 1.0, 0.0),
        SceneSpec("park", priors[2], templates, 0.55, 2.5),
        SceneSpec("hall", priors[3], templates, 1.7, -2.5),
    ]


def _check_specs(specs: list[SceneSpec]):
    if len(specs) < 2:
        raise SpecError("need at least two scenes")
    if all((s.event_priors == 0).all() for s in specs):
        backgrounds = {(s.background_level, s.background_tilt) for s in specs}
        if len(backgrounds) == 1:
            raise SpecError("all priors zero and identical backgrounds: "
                            "scenes are indistinguishable")


def generate_clip(spec: SceneSpec, scene_index: int, n_scenes: int, clip_id: str,
                  frames: int, bins: int, rng: np.random.Generator,
                  min_len: int | None = None, max_len: int | None = None) -> LabeledClip:
    if min_len is None:
        min_len = max(frames // 8, 1)
    if max_len is None:
        max_len = max(frames // 2, min_len)
    n_events = spec.event_priors.size
    energy = spec.background(bins)[None, :] * np.exp(
        0.3 * rng.standard_normal((frames, bins)))
    roll = np.zeros((frames, n_events))
    active = rng.random(n_events) < spec.event_priors
    for m in np.nonzero(active)[0]:
        length = int(rng.integers(min_len, max_len + 1))
        onset = int(rng.integers(0, frames - length + 1))
        jitter = rng.uniform(0.8, 1.2, size=(length, 1))
        energy[onset:onset + length] += jitter * spec.templates[m][None, :]
        roll[onset:onset + length, m] = 1.0  # offset is exclusive
    scene = np.zeros(n_scenes)
    scene[scene_index] = 1.0
    values = np.log(energy + LOG_FLOOR)
    features = FeatureClip(values=values, frame_hop_s=DEFAULT_HOP_S,
                           frame_len_s=DEFAULT_LEN_S)
    return LabeledClip(clip_id, features, scene, roll)


def generate_dataset(specs: list[SceneSpec], clips_per_scene: int,
                     frames: int, bins: int, rng: np.random.Generator,
                     min_len: int | None = None,
                     max_len: int | None = None) -> list[LabeledClip]:
    """Sample clips_per_scene clips for every scene, in scene order."""
    _check_specs(specs)
    clips = []
    for i, spec in enumerate(specs):
        for j in range(clips_per_scene):
            clip_id = f"{spec.name}_{j:05d}"
            clips.append(generate_clip(spec, i, len(specs), clip_id,
                                       frames, bins, rng, min_len, max_len))
    return clips


def synthesize_waveform_clip(spec: SceneSpec, scene_index: int, n_scenes: int,
                             clip_id: str, seconds: float,
                             rng: np.random.Generator,
                             config: FeatureConfig = DEFAULT_CONFIG) -> LabeledClip:
    """Audio-domain alternative to generate_clip, routed through the DSP front end.

    Background is white noise at the scene's level (the spectral tilt is only
    modelled in the direct log-mel route); each active event is a sine tone at
    the centre frequency of its template's strongest mel band.  The event roll
    is kept in feature frames, aligned with the extractor's hop.
    """
    sr = config.sample_rate
    hop = int(round(config.hop_s * sr))
    n_samples = int(round(seconds * sr))
    frames = -(-n_samples // hop)
    n_events = spec.event_priors.size
    centers = mel_filter_centers(config.n_mels, sr)
    samples = 0.01 * spec.background_level * rng.standard_normal(n_samples)
    roll = np.zeros((frames, n_events))
    min_len = max(frames // 8, 1)
    max_len = max(frames // 2, min_len)
    active = rng.random(n_events) < spec.event_priors
    t_axis = np.arange(n_samples) / sr
    for m in np.nonzero(active)[0]:
        length = int(rng.integers(min_len, max_len + 1))
        onset = int(rng.integers(0, frames - length + 1))
        roll[onset:onset + length, m] = 1.0
        band = int(spec.templates[m].argmax() * (config.n_mels / spec.templates.shape[1]))
        freq = centers[min(band, config.n_mels - 1)]
        lo, hi = onset * hop, min((onset + length) * hop, n_samples)
        samples[lo:hi] += 0.2 * np.sin(2 * np.pi * freq * t_axis[lo:hi])
    features = extract_logmel(Waveform(samples, sr), config)
    features.values = features.values[:frames]
    scene = np.zeros(n_scenes)
    scene[scene_index] = 1.0
    return LabeledClip(clip_id, features, scene, roll)


# -- on-disk layout: features/*.lmel + labels.csv + spec.json ---------------

def save_dataset(out_dir, clips: list[LabeledClip], specs: list[SceneSpec],
                 seed: int | None = None):
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    frames, bins = clips[0].features.values.shape
    meta = {
        "scenes": [s.to_dict() for s in specs],
        "frames": frames,
        "bins": bins,
        "n_events": int(clips[0].events.shape[1]),
        "seed": seed,
    }
    (out / "spec.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "scene_id", "event_class",
                         "onset_frame", "offset_frame"])
        for clip in clips:
            save_feature_file(out / "features" / f"{clip.clip_id}.lmel",
                              clip.features)
            intervals = roll_to_intervals(clip.events)
            if not intervals:
                writer.writerow([clip.clip_id, clip.scene_index, "", "", ""])
            for m, onset, offset in intervals:
                writer.writerow([clip.clip_id, clip.scene_index, m, onset, offset])


def roll_to_intervals(roll: np.ndarray) -> list[tuple[int, int, int]]:
    """(event, onset, offset) runs of activity; offsets are exclusive."""
    intervals = []
    padded = np.zeros((roll.shape[0] + 2, roll.shape[1]))
    padded[1:-1] = roll
    diff = np.diff(padded, axis=0)
    for m in range(roll.shape[1]):
        onsets = np.nonzero(diff[:, m] == 1)[0]
        offsets = np.nonzero(diff[:, m] == -1)[0]
        for a, b in zip(onsets, offsets):
            intervals.append((m, int(a), int(b)))
    intervals.sort()
    return intervals


def load_dataset(data_dir):
    """Read a dataset directory back; returns (clips sorted by id, specs, meta)."""
    data = Path(data_dir)
    spec_path = data / "spec.json"
    if not spec_path.exists():
        raise FormatError(f"{data}: missing spec.json")
    meta = json.loads(spec_path.read_text())
    specs = [SceneSpec.from_dict(d) for d in meta["scenes"]]
    frames, n_events = meta["frames"], meta["n_events"]
    rows_by_clip: dict[str, list] = {}
    scene_by_clip: dict[str, int] = {}
    with open(data / "labels.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            cid = row["clip_id"]
            scene_by_clip[cid] = int(row["scene_id"])
            if row["event_class"] != "":
                rows_by_clip.setdefault(cid, []).append(
                    (int(row["event_class"]), int(row["onset_frame"]),
                     int(row["offset_frame"])))
            else:
                rows_by_clip.setdefault(cid, [])
    clips = []
    for cid in sorted(scene_by_clip):
        features = load_feature_file(data / "features" / f"{cid}.lmel")
        roll = np.zeros((frames, n_events))
        for m, onset, offset in rows_by_clip[cid]:
            roll[onset:offset, m] = 1.0
        scene = np.zeros(len(specs))
        scene[scene_by_clip[cid]] = 1.0
        clips.append(LabeledClip(cid, features, scene, roll))
    return clips, specs, meta
