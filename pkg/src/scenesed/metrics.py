"""Clip-level scene and frame-based event scoring.

Scene scores are micro/macro F over predicted clip classes (micro F equals
accuracy for single-label classification).  Event scores are frame-based:
true/false positives and false negatives are counted per class over every
frame of every clip, with no onset/offset collar.  Macro averages run over
all classes, so classes that never fire contribute an F of zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError


def binarize_events(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where probability strictly exceeds the threshold, else 0."""
    return (np.asarray(probs) > threshold).astype(np.float64)


def _fscore(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def event_fscores(pred: np.ndarray, ref: np.ndarray):
    """Frame-based (micro F, macro F, per-class F) for pooled binary rolls."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} vs reference {ref.shape}")
    tp = ((pred == 1) & (ref == 1)).sum(axis=0)
    fp = ((pred == 1) & (ref == 0)).sum(axis=0)
    fn = ((pred == 0) & (ref == 1)).sum(axis=0)
    per_class = np.array([_fscore(t, f, n) for t, f, n in zip(tp, fp, fn)])
    micro = _fscore(tp.sum(), fp.sum(), fn.sum())
    return micro, float(per_class.mean()), per_class


def scene_fscores(pred_classes, ref_classes, n_classes: int):
    """(micro F, macro F) over clip-level class decisions."""
    pred = np.asarray(pred_classes)
    ref = np.asarray(ref_classes)
    if pred.size == 0:
        raise InputError("no clips to score")
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} vs reference {ref.shape}")
    tps = fps = fns = 0
    per_class = []
    for c in range(n_classes):
        tp = int(((pred == c) & (ref == c)).sum())
        fp = int(((pred == c) & (ref != c)).sum())
        fn = int(((pred != c) & (ref == c)).sum())
        per_class.append(_fscore(tp, fp, fn))
        tps, fps, fns = tps + tp, fps + fp, fns + fn
    return _fscore(tps, fps, fns), float(np.mean(per_class))


def confusion_recall(pred_classes, ref_classes, n_classes: int) -> np.ndarray:
    """Row-normalised confusion matrix in percent.

    Entry (i, j) is the share of true-class-i clips predicted as j, times 100.
    Rows for classes with no reference clips are NaN.
    """
    pred = np.asarray(pred_classes)
    ref = np.asarray(ref_classes)
    out = np.full((n_classes, n_classes), np.nan)
    for i in range(n_classes):
        mask = ref == i
        total = int(mask.sum())
        if total == 0:
            continue
        for j in range(n_classes):
            out[i, j] = 100.0 * int((pred[mask] == j).sum()) / total
    return out


@dataclass
class MetricReport:
    scene_micro_f: float
    scene_macro_f: float
    event_micro_f: float
    event_macro_f: float
    per_event_f: np.ndarray
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "scene_micro_f": self.scene_micro_f,
            "scene_macro_f": self.scene_macro_f,
            "event_micro_f": self.event_micro_f,
            "event_macro_f": self.event_macro_f,
            "per_event_f": [float(v) for v in self.per_event_f],
            "confusion": [[None if np.isnan(v) else float(v) for v in row]
                          for row in self.confusion],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        conf = np.array([[np.nan if v is None else v for v in row]
                         for row in d["confusion"]])
        return cls(d["scene_micro_f"], d["scene_macro_f"], d["event_micro_f"],
                   d["event_macro_f"], np.asarray(d["per_event_f"], dtype=float),
                   conf)


def evaluate_model(net, clips, threshold: float = 0.5,
                   batch_size: int = 32) -> MetricReport:
    """Score a trained network on labeled clips (original labels only)."""
    if not clips:
        raise InputError("no clips to evaluate")
    n_scenes = net.config.n_scenes
    has_scene = net.scene_head is not None
    has_event = net.event_head is not None
    scene_pred, scene_ref = [], []
    event_pred, event_ref = [], []
    for start in range(0, len(clips), batch_size):
        chunk = clips[start:start + batch_size]
        x = np.stack([c.features.values for c in chunk])[:, None, :, :]
        x = x.astype(net.config.np_dtype)
        preds = net.predict(x)
        if has_scene:
            scene_pred.extend(np.argmax(preds.scene_probs, axis=1).tolist())
            scene_ref.extend(c.scene_index for c in chunk)
        if has_event:
            event_pred.append(binarize_events(preds.event_probs, threshold)
                              .reshape(-1, net.config.n_events))
            event_ref.append(np.concatenate([c.events for c in chunk], axis=0))
    if has_scene:
        scene_micro, scene_macro = scene_fscores(scene_pred, scene_ref, n_scenes)
        confusion = confusion_recall(scene_pred, scene_ref, n_scenes)
    else:
        scene_micro = scene_macro = float("nan")
        confusion = np.full((n_scenes, n_scenes), np.nan)
    if has_event:
        ev_micro, ev_macro, per_event = event_fscores(
            np.concatenate(event_pred, axis=0), np.concatenate(event_ref, axis=0))
    else:
        ev_micro = ev_macro = float("nan")
        per_event = np.full(net.config.n_events, np.nan)
    return MetricReport(scene_micro, scene_macro, ev_micro, ev_macro,
                        per_event, confusion)
