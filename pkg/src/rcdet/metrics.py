"""Detection evaluation: center-distance matching, average precision, the
five true-positive error terms, and the composite detection score.

Matching is greedy in confidence order against per-frame ground truth of the
same class, within a BEV center-distance threshold. AP integrates the
precision/recall curve on a 101-point recall grid, discarding the region
below minimum recall and precision (0.1 each). The composite score combines
mAP with the clipped complements of the five TP errors:

    score = (5 * mAP + sum(1 - min(1, err))) / 10

The orientation error is measured in radians in [0, pi] and is divided by pi
before the clip (mapping its full range onto [0, 1]); the other errors enter
as-is, so published component values reproduce their published composite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import DetectionBox3D
from .errors import EmptyGroundTruth
from .geometry import Box3D, aligned_iou3d, wrap_angle

DEFAULT_DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_TP_THRESHOLD = 2.0
DEFAULT_MIN_RECALL = 0.1
DEFAULT_MIN_PRECISION = 0.1


@dataclass(eq=False)
class GroundTruth:
    """An annotated object: box, class, attribute label."""

    box: Box3D
    class_id: int
    attribute: int = 0


@dataclass
class EvalConfig:
    distance_thresholds: tuple[float, ...] = DEFAULT_DISTANCE_THRESHOLDS
    tp_threshold: float = DEFAULT_TP_THRESHOLD
    min_recall: float = DEFAULT_MIN_RECALL
    min_precision: float = DEFAULT_MIN_PRECISION
    class_ids: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        thresholds = tuple(self.distance_thresholds)
        if not thresholds or any(t <= 0 for t in thresholds):
            raise ValueError("distance thresholds must be positive")
        if list(thresholds) != sorted(thresholds):
            raise ValueError("distance thresholds must be ascending")
        self.distance_thresholds = thresholds


@dataclass
class TPErrors:
    """Mean translation, scale, orientation, velocity, attribute errors."""

    ate: float
    ase: float
    aoe: float
    ave: float
    aae: float

    def as_dict(self) -> dict[str, float]:
        return {
            "mATE": self.ate,
            "mASE": self.ase,
            "mAOE": self.aoe,
            "mAVE": self.ave,
            "mAAE": self.aae,
        }


@dataclass(eq=False)
class EvalResult:
    ap: dict[tuple[int, float], float]
    mean_ap: float
    errors: TPErrors
    nds: float


def _bev_distance(a: np.ndarray, b: np.ndarray) -> float:
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    return math.sqrt(dx * dx + dy * dy)


def match_detections(
    dets: list[DetectionBox3D], gts: list[GroundTruth], threshold: float
) -> tuple[list[tuple[int, int, float]], list[int], list[int]]:
    """Greedy matching of one frame's detections against its ground truth.

    ``dets`` must already be sorted by confidence, descending; each detection
    claims the nearest still-unmatched ground truth of its class within the
    BEV center-distance threshold. Returns (matches, unmatched detection
    indices, unmatched ground-truth indices) with matches as
    (det_index, gt_index, distance) triples.
    """
    taken: set[int] = set()
    matches = []
    unmatched_dets = []
    for di, det in enumerate(dets):
        best_gi = -1
        best_dist = math.inf
        for gi, gt in enumerate(gts):
            if gi in taken or gt.class_id != det.class_id:
                continue
            dist = _bev_distance(det.box.center, gt.box.center)
            if dist <= threshold and dist < best_dist:
                best_gi = gi
                best_dist = dist
        if best_gi >= 0:
            taken.add(best_gi)
            matches.append((di, best_gi, best_dist))
        else:
            unmatched_dets.append(di)
    unmatched_gts = [gi for gi in range(len(gts)) if gi not in taken]
    return matches, unmatched_dets, unmatched_gts


def average_precision(
    scores: np.ndarray,
    tp_flags: np.ndarray,
    num_gt: int,
    min_recall: float = DEFAULT_MIN_RECALL,
    min_precision: float = DEFAULT_MIN_PRECISION,
) -> float:
    """Normalized area under the precision/recall curve.

    ``scores``/``tp_flags`` describe every detection of one class pooled over
    the scene set. Precision is sampled on a 101-point recall grid; samples
    at or below ``min_recall`` are dropped and precision is measured above
    ``min_precision``, renormalized to keep a perfect detector at 1.0.
    """
    if num_gt <= 0:
        raise ValueError("average precision needs at least one ground-truth box")
    scores = np.asarray(scores, dtype=np.float64)
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if scores.shape != tp_flags.shape:
        raise ValueError("scores and tp_flags must have the same length")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp_cum = np.cumsum(tp_flags[order])
    fp_cum = np.cumsum(~tp_flags[order])
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # Exact-hundredth grid points (linspace would put 0.7000...01 above a
    # recall of exactly 7/10 and spuriously zero that sample).
    grid = np.arange(101) / 100.0
    sampled = np.interp(grid, recall, precision, right=0.0)
    start = round(100 * min_recall) + 1
    clipped = np.maximum(sampled[start:] - min_precision, 0.0)
    # fsum keeps the mean exact for a perfect detector (all samples equal).
    return math.fsum(clipped) / clipped.size / (1.0 - min_precision)


def tp_errors(pairs: list[tuple[DetectionBox3D, GroundTruth]]) -> TPErrors:
    """Mean per-match errors; with no matches every error is 1.0 by convention.

    Translation is BEV center distance (m); scale is 1 - center/yaw-aligned
    3D IoU; orientation is the smallest absolute yaw difference (radians, in
    [0, pi]); velocity is the BEV L2 error (m/s); attribute is 1 - accuracy.
    """
    if not pairs:
        return TPErrors(ate=1.0, ase=1.0, aoe=1.0, ave=1.0, aae=1.0)
    ate = ase = aoe = ave = aae = 0.0
    for det, gt in pairs:
        ate += _bev_distance(det.box.center, gt.box.center)
        ase += 1.0 - aligned_iou3d(det.box.dims, gt.box.dims)
        aoe += abs(wrap_angle(det.box.yaw - gt.box.yaw))
        dvx = float(det.box.velocity[0]) - float(gt.box.velocity[0])
        dvy = float(det.box.velocity[1]) - float(gt.box.velocity[1])
        ave += math.sqrt(dvx * dvx + dvy * dvy)
        aae += 0.0 if det.attribute == gt.attribute else 1.0
    n = len(pairs)
    return TPErrors(ate=ate / n, ase=ase / n, aoe=aoe / n, ave=ave / n, aae=aae / n)


def nds(
    mean_ap: float, ate: float, ase: float, aoe: float, ave: float, aae: float
) -> float:
    """Composite detection score from mAP and the five TP error terms.

    Each error contributes 1 - min(1, err); the orientation term is expected
    already normalized to [0, 1] (see :func:`evaluate`, which divides the
    radian error by pi). Published component values plug in directly.
    """
    terms = sum(1.0 - min(1.0, err) for err in (ate, ase, aoe, ave, aae))
    return (5.0 * mean_ap + terms) / 10.0


def evaluate(
    dets_per_frame: list[list[DetectionBox3D]],
    gts_per_frame: list[list[GroundTruth]],
    cfg: EvalConfig | None = None,
) -> EvalResult:
    """Full evaluation over a frame set.

    Per class and distance threshold, detections are matched frame by frame
    (greedily, in confidence order) and pooled into one PR curve; mAP
    averages AP over classes and thresholds. TP errors are averaged per
    class over the matches at ``tp_threshold`` (classes with no matches
    count each error as 1.0) and then across classes. Classes that never
    appear in the ground truth are skipped; an entirely empty ground truth
    raises EmptyGroundTruth.
    """
    cfg = cfg or EvalConfig()
    if len(dets_per_frame) != len(gts_per_frame):
        raise ValueError("detections and ground truth must cover the same frames")
    gt_counts: dict[int, int] = {}
    for gts in gts_per_frame:
        for gt in gts:
            gt_counts[gt.class_id] = gt_counts.get(gt.class_id, 0) + 1
    if not gt_counts:
        raise EmptyGroundTruth("no ground-truth boxes in any frame")
    if cfg.class_ids is None:
        class_ids = sorted(gt_counts)
    else:
        class_ids = [c for c in cfg.class_ids if gt_counts.get(c, 0) > 0]
        if not class_ids:
            raise EmptyGroundTruth("no ground truth for any configured class")

    sorted_dets = [sorted(dets, key=lambda d: -d.score) for dets in dets_per_frame]

    ap: dict[tuple[int, float], float] = {}
    per_class_errors: list[TPErrors] = []
    for class_id in class_ids:
        frame_dets = [
            [d for d in dets if d.class_id == class_id] for dets in sorted_dets
        ]
        frame_gts = [
            [g for g in gts if g.class_id == class_id] for gts in gts_per_frame
        ]
        for threshold in cfg.distance_thresholds:
            scores: list[float] = []
            flags: list[bool] = []
            for dets, gts in zip(frame_dets, frame_gts):
                matches, unmatched, _ = match_detections(dets, gts, threshold)
                matched_idx = {di for di, _, _ in matches}
                for di, det in enumerate(dets):
                    scores.append(det.score)
                    flags.append(di in matched_idx)
            ap[(class_id, threshold)] = average_precision(
                np.array(scores),
                np.array(flags, dtype=bool),
                gt_counts[class_id],
                cfg.min_recall,
                cfg.min_precision,
            )
        pairs = []
        for dets, gts in zip(frame_dets, frame_gts):
            matches, _, _ = match_detections(dets, gts, cfg.tp_threshold)
            pairs.extend((dets[di], gts[gi]) for di, gi, _ in matches)
        per_class_errors.append((tp_errors(pairs), bool(pairs)))

    mean_ap = float(np.mean([ap[key] for key in ap]))
    errors = TPErrors(
        ate=float(np.mean([e.ate for e, _ in per_class_errors])),
        ase=float(np.mean([e.ase for e, _ in per_class_errors])),
        aoe=float(np.mean([e.aoe for e, _ in per_class_errors])),
        ave=float(np.mean([e.ave for e, _ in per_class_errors])),
        aae=float(np.mean([e.aae for e, _ in per_class_errors])),
    )
    # Real orientation errors are radians in [0, pi] and get normalized by pi
    # for the composite; the no-match convention value of 1.0 already lives in
    # the clipped space and enters as-is (so no detections score 0).
    aoe_normalized = float(
        np.mean([e.aoe / math.pi if matched else e.aoe for e, matched in per_class_errors])
    )
    score = nds(mean_ap, errors.ate, errors.ase, aoe_normalized, errors.ave, errors.aae)
    return EvalResult(ap=ap, mean_ap=mean_ap, errors=errors, nds=score)


def format_report(result: EvalResult) -> str:
    """Human-readable evaluation summary."""
    lines = ["metric   value", "-" * 17]
    lines.append(f"NDS      {result.nds:7.4f}")
    lines.append(f"mAP      {result.mean_ap:7.4f}")
    for name, value in result.errors.as_dict().items():
        lines.append(f"{name:<8} {value:7.4f}")
    lines.append("")
    lines.append("per-class AP")
    for (class_id, threshold), value in sorted(result.ap.items()):
        lines.append(f"  class {class_id} @ {threshold:g} m: {value:.4f}")
    return "\n".join(lines)


def report_key_values(result: EvalResult) -> str:
    """Machine-readable key=value report, one metric per line."""
    lines = [f"NDS={result.nds!r}", f"mAP={result.mean_ap!r}"]
    for name, value in result.errors.as_dict().items():
        lines.append(f"{name}={value!r}")
    for (class_id, threshold), value in sorted(result.ap.items()):
        lines.append(f"AP[class={class_id},threshold={threshold:g}]={value!r}")
    return "\n".join(lines) + "\n"
