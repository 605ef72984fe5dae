"""Pixel-level and target-level segmentation metrics with component matching."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from .tensor import ShapeError

MATCH_RADIUS = 3.0
EIGHT_CONNECTED = np.ones((3, 3), dtype=int)
REPORT_HEADER = ("iou", "f1", "precision", "recall", "pd", "fa_e6",
                 "tp", "fp", "fn", "tn", "t_correct", "t_act", "p_false", "p_all")


@dataclass
class Component:
    id: int
    pixels: np.ndarray  # (K, 2) row, col
    centroid: tuple
    area: int


@dataclass
class ComponentSet:
    labels: np.ndarray
    components: list

    def __len__(self):
        return len(self.components)


def _binary(mask) -> np.ndarray:
    return np.asarray(mask).astype(bool)


def label_components(mask) -> ComponentSet:
    """8-connected components, numbered 1.. in raster order of first pixel."""
    labels, count = ndimage.label(_binary(mask), structure=EIGHT_CONNECTED)
    comps = []
    for i in range(1, count + 1):
        pix = np.argwhere(labels == i)
        comps.append(Component(i, pix, (float(pix[:, 0].mean()), float(pix[:, 1].mean())), len(pix)))
    return ComponentSet(labels, comps)


@dataclass
class PixelCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return PixelCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def pixel_counts(pred, gt) -> PixelCounts:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return PixelCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def scores_from_counts(c: PixelCounts) -> tuple:
    """(IoU, precision, recall, F1) with the empty-set conventions.

    IoU is 1 when both masks are empty. Precision (recall) is 1 when
    nothing was predicted (nothing was there) and nothing was missed
    (nothing was spuriously predicted), i.e. both masks empty; otherwise 0
    on a zero denominator.
    """
    both_empty = c.tp + c.fp + c.fn == 0
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, 1.0)
    pre = _ratio(c.tp, c.tp + c.fp, 1.0 if both_empty else 0.0)
    rec = _ratio(c.tp, c.tp + c.fn, 1.0 if both_empty else 0.0)
    f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
    return iou, pre, rec, f1


def pixel_metrics(pred, gt) -> tuple:
    return scores_from_counts(pixel_counts(pred, gt))


@dataclass
class TargetCounts:
    t_correct: int = 0
    t_act: int = 0
    p_false: int = 0
    p_all: int = 0

    def __add__(self, other):
        return TargetCounts(self.t_correct + other.t_correct, self.t_act + other.t_act,
                            self.p_false + other.p_false, self.p_all + other.p_all)

    @property
    def pd(self) -> float:
        return _ratio(self.t_correct, self.t_act, 1.0)

    @property
    def fa(self) -> float:
        return _ratio(self.p_false, self.p_all, 0.0)


def match_components(pred: ComponentSet, gt: ComponentSet, radius: float = MATCH_RADIUS) -> list:
    """Greedy nearest-first one-to-one matching on centroid distance.

    Candidate pairs within ``radius`` are taken in order of (distance,
    gt id, pred id); a pair is kept when neither side is matched yet.
    Returns (gt id, pred id) pairs.
    """
    cands = []
    for g in gt.components:
        for p in pred.components:
            d = float(np.hypot(g.centroid[0] - p.centroid[0], g.centroid[1] - p.centroid[1]))
            if d <= radius:
                cands.append((d, g.id, p.id))
    cands.sort()
    used_g, used_p, pairs = set(), set(), []
    for _, gi, pi in cands:
        if gi not in used_g and pi not in used_p:
            used_g.add(gi)
            used_p.add(pi)
            pairs.append((gi, pi))
    return pairs


def target_counts(pred, gt, radius: float = MATCH_RADIUS) -> TargetCounts:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    pc, gc = label_components(p), label_components(g)
    pairs = match_components(pc, gc, radius)
    matched = {pi for _, pi in pairs}
    p_false = sum(c.area for c in pc.components if c.id not in matched)
    return TargetCounts(len(pairs), len(gc), p_false, p.size)


def target_metrics(pred, gt, radius: float = MATCH_RADIUS) -> tuple:
    """(Pd, Fa) for one image; Pd is 1 when there are no targets."""
    c = target_counts(pred, gt, radius)
    return c.pd, c.fa


def roc_curve(saliency_maps, gt_masks, thresholds) -> list:
    """Pixel-level (threshold, FPR, TPR) rows, prediction = ``saliency > t``.

    Thresholds must be strictly descending inside (0, 1); the fixed endpoints
    (1, 0, 0) and (0, 1, 1) are added, so everything is foreground at 0 and
    nothing at 1 regardless of exact saliency values.
    """
    ts = [float(t) for t in thresholds]
    if any(not 0.0 < t < 1.0 for t in ts) or any(a <= b for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be strictly descending inside (0, 1)")
    sal = [np.asarray(s, dtype=np.float64) for s in saliency_maps]
    gts = [_binary(m) for m in gt_masks]
    if len(sal) != len(gts):
        raise ValueError(f"{len(sal)} saliency maps but {len(gts)} masks")
    rows = [(1.0, 0.0, 0.0)]
    for t in ts:
        c = PixelCounts()
        for s, g in zip(sal, gts):
            c = c + pixel_counts(s > t, g)
        rows.append((t, _ratio(c.fp, c.fp + c.tn, 0.0), _ratio(c.tp, c.tp + c.fn, 0.0)))
    rows.append((0.0, 1.0, 1.0))
    return rows


@dataclass
class EvalConfig:
    threshold: float = 0.5
    match_radius: float = MATCH_RADIUS
    roc_thresholds: tuple = tuple(np.round(np.linspace(0.95, 0.05, 19), 2))


@dataclass
class EvalReport:
    iou: float
    f1: float
    precision: float
    recall: float
    pd: float
    fa_e6: float
    tp: int
    fp: int
    fn: int
    tn: int
    t_correct: int
    t_act: int
    p_false: int
    p_all: int
    roc: list = field(default_factory=list)

    @property
    def fa(self) -> float:
        return self.fa_e6 * 1e-6

    def csv(self) -> str:
        vals = [getattr(self, k) for k in REPORT_HEADER]
        return ",".join(REPORT_HEADER) + "\n" + ",".join(
            repr(float(v)) if isinstance(v, float) else str(v) for v in vals) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) != 2 or tuple(lines[0].split(",")) != REPORT_HEADER:
            raise ValueError("not an evaluation report")
        kinds = {f.name: f.type for f in fields(cls)}
        vals = lines[1].split(",")
        return cls(**{k: (float(v) if kinds[k] == "float" else int(v)) for k, v in zip(REPORT_HEADER, vals)})


def roc_csv(rows) -> str:
    return "threshold,fpr,tpr\n" + "".join(f"{t!r},{f!r},{p!r}\n" for t, f, p in rows)


def evaluate_split(saliency_maps, masks, config: EvalConfig | None = None) -> EvalReport:
    """Micro-averaged report: counts are summed over the split before any ratio."""
    config = config or EvalConfig()
    sal = [np.asarray(s, dtype=np.float64).squeeze() for s in saliency_maps]
    gts = [_binary(m).squeeze() for m in masks]
    if len(sal) != len(gts):
        raise ValueError(f"{len(sal)} predictions but {len(gts)} masks")
    pc, tc = PixelCounts(), TargetCounts()
    for s, g in zip(sal, gts):
        pred = s > config.threshold
        pc = pc + pixel_counts(pred, g)
        tc = tc + target_counts(pred, g, config.match_radius)
    iou, pre, rec, f1 = scores_from_counts(pc)
    roc = roc_curve(sal, gts, config.roc_thresholds) if config.roc_thresholds else []
    return EvalReport(iou, f1, pre, rec, tc.pd, tc.fa * 1e6, pc.tp, pc.fp, pc.fn, pc.tn,
                      tc.t_correct, tc.t_act, tc.p_false, tc.p_all, roc)
