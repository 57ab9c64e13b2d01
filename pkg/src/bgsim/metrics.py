"""Keypoint evaluation: OKS, greedy matching with AP/AR, and PCKh tables.

Ground truth keypoints are ``(x, y, v)`` rows with COCO visibility flags;
any ``v > 0`` counts as labelled and is scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2).tolist())
PCKH_COLUMNS = ("Head", "Shoulder", "Elbow", "Wrist", "Hip", "Knee", "Ankle")


class UndefinedMetricError(ValueError):
    pass


@dataclass
class GroundTruthPerson:
    keypoints: np.ndarray               # (N, 3) x, y, v
    scale: float                        # sqrt of object area
    head_size: float | None = None
    occlusion: np.ndarray | None = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        self.scale = float(self.scale)
        if self.occlusion is not None:
            self.occlusion = np.asarray(self.occlusion, dtype=np.int64)

    @property
    def visible(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0


@dataclass
class PredictedPerson:
    keypoints: np.ndarray               # (N, >=2), first two columns are x, y
    score: float = 0.0

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.score = float(self.score)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)


@dataclass
class APResult:
    ap: dict[float, float]
    recall: dict[float, float]
    mean_ap: float
    ar: float
    n_gt: int
    n_pred: int
    skipped_images: int = 0

    def to_dict(self) -> dict:
        return {"ap": {f"{t:.2f}": v for t, v in self.ap.items()},
                "recall": {f"{t:.2f}": v for t, v in self.recall.items()},
                "mean_ap": self.mean_ap, "ar": self.ar, "n_gt": self.n_gt,
                "n_pred": self.n_pred, "skipped_images": self.skipped_images}


def _coords(pred) -> np.ndarray:
    if hasattr(pred, "positions"):
        return np.asarray(pred.positions, dtype=np.float64)
    if isinstance(pred, PredictedPerson):
        return pred.keypoints[:, :2]
    return np.asarray(pred, dtype=np.float64)[:, :2]


def _score(pred) -> float:
    return float(getattr(pred, "score", 0.0))


def oks(gt: GroundTruthPerson, pred, k) -> float:
    """Object keypoint similarity averaged over labelled keypoints."""
    vis = gt.visible
    if not vis.any():
        raise UndefinedMetricError("OKS undefined: ground truth has no labelled keypoints")
    if not gt.scale > 0:
        raise UndefinedMetricError(f"OKS undefined: scale must be positive, got {gt.scale}")
    k = np.asarray(k, dtype=np.float64)
    d2 = np.sum((_coords(pred) - gt.keypoints[:, :2]) ** 2, axis=1)
    e = np.exp(-d2 / (2.0 * gt.scale ** 2 * k ** 2))
    return float(np.sum(e[vis]) / np.sum(vis))


def greedy_match(gts, preds, threshold: float, k, scores=None) -> MatchResult:
    """Match predictions in descending score order to the unmatched ground
    truth of highest OKS, provided it reaches ``threshold``."""
    scores = [_score(p) for p in preds] if scores is None else list(scores)
    order = sorted(range(len(preds)), key=lambda i: -scores[i])
    table = np.array([[oks(g, p, k) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    taken = np.zeros(len(gts), dtype=bool)
    res = MatchResult()
    for i in order:
        cand = np.where(taken, -np.inf, table[i]) if len(gts) else np.zeros(0)
        g = int(np.argmax(cand)) if len(gts) else -1
        if g >= 0 and cand[g] >= threshold:
            taken[g] = True
            res.pairs.append((g, i, float(table[i, g])))
        else:
            res.unmatched_pred.append(i)
    res.unmatched_gt = [g for g in range(len(gts)) if not taken[g]]
    return res


def average_precision(tp, n_gt: int) -> float:
    """All-point interpolated AP of a score-sorted list of true-positive flags."""
    if n_gt <= 0:
        raise UndefinedMetricError("AP undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def evaluate(images, thresholds=COCO_THRESHOLDS, k=None) -> APResult:
    """Pooled AP/AR over ``images``, a sequence of ``(gts, preds)`` pairs.

    Images without ground truth are left out and counted in ``skipped_images``.
    """
    images = list(images)
    used = [(g, p) for g, p in images if len(g) > 0]
    skipped = len(images) - len(used)
    n_gt = sum(len(g) for g, _ in used)
    n_pred = sum(len(p) for _, p in used)
    if n_gt == 0:
        raise UndefinedMetricError("AP undefined: no image has ground truth")
    if k is None:
        k = np.full(len(used[0][0][0].keypoints), 0.1)
    ap, rec = {}, {}
    for t in thresholds:
        flags = []                       # (score, image, pred, tp)
        for im, (gts, preds) in enumerate(used):
            m = greedy_match(gts, preds, t, k)
            hit = {i for _, i, _ in m.pairs}
            flags += [(-_score(p), im, i, i in hit) for i, p in enumerate(preds)]
        flags.sort(key=lambda f: f[:3])
        tp = [f[3] for f in flags]
        ap[t] = average_precision(tp, n_gt)
        rec[t] = float(sum(tp)) / n_gt
    return APResult(ap, rec, float(np.mean(list(ap.values()))), float(np.mean(list(rec.values()))),
                    n_gt, n_pred, skipped)


def match_and_ap(gts, preds, thresholds=COCO_THRESHOLDS, k=None) -> APResult:
    """AP per OKS threshold, mean AP and AR for a single image."""
    return evaluate([(gts, preds)], thresholds, k)


# --- PCKh --------------------------------------------------------------------

def pckh_column(name: str) -> str | None:
    n = name.lower()
    if "head" in n or "neck" in n:
        return "Head"
    for col in PCKH_COLUMNS[1:]:
        if col.lower() in n:
            return col
    return None


@dataclass
class PCKhResult:
    table: dict[str, float]
    total: float
    counts: dict[str, tuple[int, int]]
    skipped: int = 0

    def to_dict(self) -> dict:
        return {"table": self.table, "total": self.total,
                "counts": {k: list(v) for k, v in self.counts.items()}, "skipped": self.skipped}


def pckh_match(gts, preds, alpha: float = 0.5, head_sizes=None, names=None) -> PCKhResult:
    """Per-column fraction of labelled joints within ``alpha * head size``.

    ``gts``/``preds`` may be flat lists for one image or lists of per-image
    lists.  Each ground-truth person takes, in order, the unused prediction
    with the most correct joints (ties: smaller summed distance, lower index).
    Persons lacking a head size are skipped and counted.
    """
    if gts and not isinstance(gts[0], GroundTruthPerson):
        images = list(zip(gts, preds))
        sizes = head_sizes if head_sizes is not None else [None] * len(images)
    else:
        images = [(gts, preds)]
        sizes = [head_sizes]
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    skipped = 0
    for (g_list, p_list), hs in zip(images, sizes):
        used: set[int] = set()
        for gi, gt in enumerate(g_list):
            h = hs[gi] if hs is not None else gt.head_size
            if h is None or not h > 0:
                skipped += 1
                continue
            vis = gt.visible
            best, best_key = None, None
            for pi, p in enumerate(p_list):
                if pi in used:
                    continue
                d = np.linalg.norm(_coords(p) - gt.keypoints[:, :2], axis=1)
                ok = (d <= alpha * h) & vis
                key = (-int(ok.sum()), float(d[vis].sum()), pi)
                if best_key is None or key < best_key:
                    best, best_key = (pi, ok), key
            if best is None:
                ok = np.zeros(len(vis), dtype=bool)
            else:
                used.add(best[0])
                ok = best[1]
            labels = names if names is not None else [f"joint{j}" for j in range(len(vis))]
            for j in np.flatnonzero(vis):
                col = pckh_column(labels[j]) or "Other"
                for c in (col, "Total"):
                    total[c] = total.get(c, 0) + 1
                    correct[c] = correct.get(c, 0) + int(ok[j])
    table = {c: 100.0 * correct[c] / total[c] for c in PCKH_COLUMNS if total.get(c)}
    tot = 100.0 * correct["Total"] / total["Total"] if total.get("Total") else float("nan")
    counts = {c: (correct[c], total[c]) for c in total}
    return PCKhResult(table, tot, counts, skipped)


# --- pose / ground-truth files -----------------------------------------------

class SchemaError(ValueError):
    pass


def _require(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"missing key {key!r} in {where}")
    return d[key]


def load_pose_file(path, kind: str = "gt"):
    """Read a ground-truth or prediction JSON file.

    Returns a list of ``(image id, persons)`` with :class:`GroundTruthPerson`
    or :class:`PredictedPerson` entries.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for n, im in enumerate(_require(data, "images", "top level")):
        where = f"images[{n}]"
        persons = []
        for m, p in enumerate(_require(im, "persons", where)):
            pw = f"{where}.persons[{m}]"
            kp = np.asarray(_require(p, "keypoints", pw), dtype=np.float64)
            if kp.ndim != 2 or kp.shape[1] < (3 if kind == "gt" else 2):
                raise SchemaError(f"malformed key 'keypoints' in {pw}")
            if kind == "gt":
                persons.append(GroundTruthPerson(kp[:, :3], _require(p, "scale", pw),
                                                 p.get("head_size"), p.get("occlusion")))
            else:
                persons.append(PredictedPerson(kp, _require(p, "score", pw)))
        out.append((str(im.get("id", n)), persons))
    return out
