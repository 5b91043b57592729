"""Detection metrics: rotated BEV / 3D IoU, greedy score-order matching,
average precision at 40 recall points, binned relative distance error,
and the detected-ratio-vs-distance curve.

Matching follows the usual benchmark convention: predictions claim
ground truths in descending score order, each taking the unmatched GT
with the highest IoU at or above the threshold (ties break toward the
lower GT index).  Frames are independent, so per-frame statistics can
be computed in parallel and merged before the precision/recall sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera_geometry import Box3D

DEFAULT_DISTANCE_BINS = ((0.0, 50.0), (50.0, 100.0), (100.0, 150.0), (150.0, 200.0))

N_RECALL_POINTS = 40


def footprint_polygon(box: Box3D) -> list[tuple[float, float]]:
    """Counter-clockwise BEV footprint corners of the box."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hl, hw = box.l / 2.0, box.w / 2.0
    return [
        (box.x + c * dx - s * dy, box.y + s * dx + c * dy)
        for dx, dy in ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw))
    ]


def _clip_by_edge(poly, ax, ay, bx, by):
    # Keep the part of poly on the left of the directed edge a -> b.
    ex, ey = bx - ax, by - ay
    out = []
    n = len(poly)
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        sp = ex * (py - ay) - ey * (px - ax)
        sq = ex * (qy - ay) - ey * (qx - ax)
        if sp >= 0.0:
            out.append((px, py))
        if (sp >= 0.0) != (sq >= 0.0):
            t = sp / (sp - sq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def _polygon_area(poly) -> float:
    area = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def _footprint_intersection_area(a: Box3D, b: Box3D) -> float:
    poly = footprint_polygon(a)
    clip = footprint_polygon(b)
    for i in range(4):
        if len(poly) < 3:
            return 0.0
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % 4]
        poly = _clip_by_edge(poly, ax, ay, bx, by)
    if len(poly) < 3:
        return 0.0
    return _polygon_area(poly)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU of the two BEV footprints.

    The footprint is invariant to a yaw flip of pi (and to pi/2 for
    square footprints), so such flips score 1.0 here even though the
    corner-paired regression loss penalizes them; orientation-sensitive
    metrics are out of scope.
    """
    inter = _footprint_intersection_area(a, b)
    area_a = a.l * a.w
    area_b = b.l * b.w
    inter = min(inter, area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU: BEV intersection times the vertical overlap of the
    [z, z+h] extents."""
    overlap_h = min(a.z + a.h, b.z + b.h) - max(a.z, b.z)
    if overlap_h <= 0.0:
        return 0.0
    inter = _footprint_intersection_area(a, b) * overlap_h
    vol_a = a.l * a.w * a.h
    vol_b = b.l * b.w * b.h
    inter = min(inter, vol_a, vol_b)
    union = vol_a + vol_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def box2d_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Axis-aligned IoU of two pixel-space (x1, y1, x2, y2) rectangles."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def bev_center_distance(a: Box3D, b: Box3D) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class MatchPair:
    gt_index: int
    pred_index: int
    iou: float
    center_distance: float


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[MatchPair, ...]
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]
    gts: tuple[Box3D, ...]
    preds: tuple[Box3D, ...]
    iou_threshold: float


_IOU_KINDS = ("bev", "3d", "pixel")


def match(
    gts,
    preds,
    iou_threshold: float,
    iou_kind: str = "bev",
    gt_boxes_2d=None,
    pred_boxes_2d=None,
) -> MatchResult:
    """Greedy score-descending matching of predictions to ground truths.

    ``iou_kind`` selects the overlap measure: "bev" and "3d" work on the
    boxes themselves; "pixel" matches on axis-aligned image rectangles,
    which must then be supplied for both sides (mirroring benchmarks
    that associate boxes in the image plane before measuring 3D error).
    """
    if iou_kind not in _IOU_KINDS:
        raise ValueError(f"iou_kind must be one of {_IOU_KINDS}, got {iou_kind!r}")
    gts = tuple(gts)
    preds = tuple(preds)
    if any(p.score is None for p in preds):
        raise ValueError("all predictions must carry a score")
    if iou_kind == "pixel":
        if gt_boxes_2d is None or pred_boxes_2d is None:
            raise ValueError("pixel matching requires 2D boxes for both sides")
        if len(gt_boxes_2d) != len(gts) or len(pred_boxes_2d) != len(preds):
            raise ValueError("2D box lists must align with the 3D boxes")

        def overlap(gi: int, pi: int) -> float:
            return box2d_iou(gt_boxes_2d[gi], pred_boxes_2d[pi])

    else:
        measure = bev_iou if iou_kind == "bev" else iou3d

        def overlap(gi: int, pi: int) -> float:
            return measure(gts[gi], preds[pi])

    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    pairs = []
    for pi in order:
        best_gi = -1
        best_iou = 0.0
        for gi in range(len(gts)):
            if taken[gi]:
                continue
            iou = overlap(gi, pi)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_gi = gi
        if best_gi >= 0:
            taken[best_gi] = True
            pairs.append(
                MatchPair(best_gi, pi, best_iou, bev_center_distance(gts[best_gi], preds[pi]))
            )
    matched_gt = {p.gt_index for p in pairs}
    matched_pred = {p.pred_index for p in pairs}
    if len(matched_gt) != len(pairs) or len(matched_pred) != len(pairs):
        raise RuntimeError("internal error: duplicate assignment in matching")
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_gt=tuple(i for i in range(len(gts)) if i not in matched_gt),
        unmatched_pred=tuple(i for i in range(len(preds)) if i not in matched_pred),
        gts=gts,
        preds=preds,
        iou_threshold=iou_threshold,
    )


@dataclass(frozen=True)
class PRCurve:
    """Precision at the 40 evenly spaced recall sample points, and the
    resulting average precision in percent."""

    recalls: np.ndarray
    precisions: np.ndarray
    ap: float
    zero_gt_warning: bool = False

    def __post_init__(self):
        rec = np.asarray(self.recalls, dtype=float)
        prec = np.asarray(self.precisions, dtype=float)
        if rec.shape != (N_RECALL_POINTS,) or prec.shape != (N_RECALL_POINTS,):
            raise ValueError(f"curves must have {N_RECALL_POINTS} samples")
        expected = np.arange(1, N_RECALL_POINTS + 1) / N_RECALL_POINTS
        if np.max(np.abs(rec - expected)) > 1e-12:
            raise ValueError("recall points must be i/40 for i in 1..40")
        if np.any((prec < 0) | (prec > 1)):
            raise ValueError("precision must lie in [0, 1]")
        if not 0.0 <= self.ap <= 100.0:
            raise ValueError("AP must lie in [0, 100]")
        object.__setattr__(self, "recalls", rec)
        object.__setattr__(self, "precisions", prec)


@dataclass(frozen=True)
class FrameStats:
    """Mergeable per-frame detection outcome: one (score, is_tp) row per
    prediction plus the ground-truth count."""

    scores: np.ndarray
    is_tp: np.ndarray
    n_gt: int


def frame_detection_stats(
    gts,
    preds,
    iou_threshold: float,
    iou_kind: str = "bev",
    gt_filter=None,
    gt_boxes_2d=None,
    pred_boxes_2d=None,
) -> FrameStats:
    """Match one frame and reduce it to score/TP rows.  ``gt_filter``
    restricts the ground truth (difficulty tiers are caller-supplied
    predicates, not built in)."""
    gts = tuple(gts)
    if gt_filter is not None:
        keep = [i for i, g in enumerate(gts) if gt_filter(g)]
        gts = tuple(gts[i] for i in keep)
        if gt_boxes_2d is not None:
            gt_boxes_2d = [gt_boxes_2d[i] for i in keep]
    preds = tuple(preds)
    result = match(gts, preds, iou_threshold, iou_kind, gt_boxes_2d, pred_boxes_2d)
    matched = {p.pred_index for p in result.pairs}
    return FrameStats(
        scores=np.array([p.score for p in preds], dtype=float),
        is_tp=np.array([i in matched for i in range(len(preds))], dtype=bool),
        n_gt=len(gts),
    )


def pr_curve_from_stats(stats_list) -> PRCurve:
    """Fold per-frame stats into the R40 curve: rank all predictions by
    score, sweep the rank cutoff, and take the max precision to the
    right of each recall sample point."""
    stats_list = list(stats_list)
    n_gt = sum(s.n_gt for s in stats_list)
    recall_points = np.arange(1, N_RECALL_POINTS + 1) / N_RECALL_POINTS
    if n_gt == 0:
        return PRCurve(recall_points, np.zeros(N_RECALL_POINTS), 0.0, zero_gt_warning=True)
    scores = np.concatenate([s.scores for s in stats_list]) if stats_list else np.zeros(0)
    is_tp = np.concatenate([s.is_tp for s in stats_list]) if stats_list else np.zeros(0, bool)
    if scores.size == 0:
        return PRCurve(recall_points, np.zeros(N_RECALL_POINTS), 0.0)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    precision = tp / (tp + fp)
    recall = tp / n_gt
    # Max precision over all ranks whose recall is >= the query point.
    best_right = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, recall_points, side="left")
    precisions = np.where(idx < len(recall), best_right[np.minimum(idx, len(recall) - 1)], 0.0)
    ap = float(precisions.mean() * 100.0)
    return PRCurve(recall_points, precisions, ap)


def average_precision_r40(
    gts_per_frame,
    preds_per_frame,
    iou_threshold: float,
    iou_kind: str = "bev",
    gt_filter=None,
) -> PRCurve:
    """AP|R40 over a list of frames (parallel lists of GT and prediction
    box lists)."""
    gts_per_frame = list(gts_per_frame)
    preds_per_frame = list(preds_per_frame)
    if len(gts_per_frame) != len(preds_per_frame):
        raise ValueError("frame lists must have equal length")
    stats = [
        frame_detection_stats(g, p, iou_threshold, iou_kind, gt_filter)
        for g, p in zip(gts_per_frame, preds_per_frame)
    ]
    return pr_curve_from_stats(stats)


@dataclass(frozen=True)
class DistanceErrorBin:
    lo: float
    hi: float
    mean_error_pct: float | None
    count: int


@dataclass(frozen=True)
class DistanceErrorTable:
    bins: tuple[DistanceErrorBin, ...]
    skipped: int


def distance_error(
    matches,
    bins=DEFAULT_DISTANCE_BINS,
    camera_foot: tuple[float, float] = (0.0, 0.0),
) -> DistanceErrorTable:
    """Mean relative range error |d_p - d_g| / d_g * 100% of matched
    pairs, binned by the ground-truth range d_g.

    Ranges are BEV distances from the camera's ground foot point.  Pass
    one MatchResult or a sequence of them (frames); empty bins report
    ``None``.  Pairs with non-positive d_g are skipped and counted.
    """
    if isinstance(matches, MatchResult):
        matches = [matches]
    sums = [0.0] * len(bins)
    counts = [0] * len(bins)
    skipped = 0
    fx, fy = camera_foot
    for result in matches:
        for pair in result.pairs:
            gt = result.gts[pair.gt_index]
            pred = result.preds[pair.pred_index]
            d_g = math.hypot(gt.x - fx, gt.y - fy)
            d_p = math.hypot(pred.x - fx, pred.y - fy)
            if d_g <= 0.0:
                skipped += 1
                continue
            err = abs(d_p - d_g) / d_g * 100.0
            for bi, (lo, hi) in enumerate(bins):
                if lo <= d_g < hi:
                    sums[bi] += err
                    counts[bi] += 1
                    break
    table = tuple(
        DistanceErrorBin(lo, hi, (sums[i] / counts[i]) if counts[i] else None, counts[i])
        for i, (lo, hi) in enumerate(bins)
    )
    return DistanceErrorTable(table, skipped)


def detection_ratio_curve(gts_per_frame, preds_per_frame, thresholds) -> list[float]:
    """Fraction of ground truths whose nearest prediction (BEV center
    distance, within the same frame) lies within each threshold.
    Non-decreasing in the threshold by construction."""
    gts_per_frame = list(gts_per_frame)
    preds_per_frame = list(preds_per_frame)
    if len(gts_per_frame) != len(preds_per_frame):
        raise ValueError("frame lists must have equal length")
    nearest = []
    for gts, preds in zip(gts_per_frame, preds_per_frame):
        for gt in gts:
            if preds:
                nearest.append(min(bev_center_distance(gt, p) for p in preds))
            else:
                nearest.append(math.inf)
    if not nearest:
        return [0.0 for _ in thresholds]
    arr = np.array(nearest)
    return [float(np.mean(arr <= t)) for t in thresholds]
