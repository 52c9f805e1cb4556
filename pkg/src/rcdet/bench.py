"""Micro-benchmark comparing the vectorized association against the naive
double loop on identical seeded inputs.

Correctness is asserted (the two paths must produce identical clusters);
the measured speedup is reported but never asserted, since absolute timings
are hardware-dependent.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .errors import ResultMismatch
from .geometry import Box3D, CameraModel, project_box_to_bbox2d, project_point
from .radar import (
    Cluster,
    PreliminaryDetection,
    RadarPoint,
    associate,
    associate_naive,
)
from .scene_io import _CLASS_DIMS, default_camera


@dataclass
class BenchReport:
    n_points: int
    n_dets: int
    iters: int
    batched_mean_s: float
    batched_std_s: float
    naive_mean_s: float
    naive_std_s: float

    @property
    def speedup(self) -> float:
        return self.naive_mean_s / self.batched_mean_s if self.batched_mean_s > 0 else math.inf


def random_association_inputs(
    n_points: int, n_dets: int, seed: int = 0
) -> tuple[list[RadarPoint], list[PreliminaryDetection], CameraModel]:
    """Seeded points and detections representative of a dense frame."""
    rng = np.random.default_rng(seed)
    camera = default_camera()
    points = [
        RadarPoint(
            position=np.array([rng.uniform(-35.0, 35.0), rng.uniform(2.0, 58.0), 0.0]),
            velocity=rng.uniform(-5.0, 5.0, size=2),
            rcs=float(rng.uniform(-5.0, 15.0)),
        )
        for _ in range(n_points)
    ]
    dets = []
    while len(dets) < n_dets:
        dims = _CLASS_DIMS[int(rng.integers(len(_CLASS_DIMS)))] * rng.uniform(0.9, 1.1, 3)
        bearing = rng.uniform(-0.4, 0.4)
        distance = rng.uniform(6.0, 50.0)
        center = np.array(
            [distance * math.sin(bearing), distance * math.cos(bearing), dims[2] / 2.0]
        )
        box = Box3D(
            center=center,
            dims=dims,
            yaw=rng.uniform(-math.pi, math.pi),
            velocity=rng.uniform(-5.0, 5.0, size=2),
        )
        bbox = project_box_to_bbox2d(camera, box)
        if bbox.area <= 0:
            continue
        center_px, depth = project_point(camera, center)
        dets.append(
            PreliminaryDetection(
                class_id=int(rng.integers(3)),
                score=float(rng.uniform(0.3, 1.0)),
                bbox2d=bbox,
                projected_center=center_px,
                depth=depth,
                log_sigma=-2.0,
                box3d=box,
            )
        )
    return points, dets, camera


def _member_indices(clusters: list[Cluster], points: list[RadarPoint]) -> list[list[int]]:
    index_of = {id(p): i for i, p in enumerate(points)}
    return [[index_of[id(m)] for m in cluster.members] for cluster in clusters]


def bench_association(
    n_points: int, n_dets: int, iters: int = 5, seed: int = 0
) -> BenchReport:
    """Time associate vs associate_naive on identical inputs.

    Both paths are warmed once; their outputs are compared cluster by
    cluster, raising ResultMismatch on any disagreement.
    """
    if n_points < 1 or n_dets < 1 or iters < 1:
        raise ValueError("n_points, n_dets, and iters must be positive")
    points, dets, camera = random_association_inputs(n_points, n_dets, seed)

    batched = associate(points, dets, camera)
    naive = associate_naive(points, dets, camera)
    if _member_indices(batched, points) != _member_indices(naive, points):
        raise ResultMismatch(
            "associate and associate_naive disagree on membership"
        )

    batched_times = []
    naive_times = []
    for _ in range(iters):
        start = time.perf_counter()
        associate(points, dets, camera)
        batched_times.append(time.perf_counter() - start)
    for _ in range(iters):
        start = time.perf_counter()
        associate_naive(points, dets, camera)
        naive_times.append(time.perf_counter() - start)

    return BenchReport(
        n_points=n_points,
        n_dets=n_dets,
        iters=iters,
        batched_mean_s=statistics.fmean(batched_times),
        batched_std_s=statistics.stdev(batched_times) if iters > 1 else 0.0,
        naive_mean_s=statistics.fmean(naive_times),
        naive_std_s=statistics.stdev(naive_times) if iters > 1 else 0.0,
    )


def format_bench(report: BenchReport) -> str:
    return "\n".join(
        [
            f"association benchmark: {report.n_points} points x {report.n_dets} "
            f"detections, {report.iters} iterations",
            f"  batched: {report.batched_mean_s * 1e3:9.3f} ms "
            f"(+/- {report.batched_std_s * 1e3:.3f})",
            f"  naive:   {report.naive_mean_s * 1e3:9.3f} ms "
            f"(+/- {report.naive_std_s * 1e3:.3f})",
            f"  speedup: {report.speedup:.1f}x",
        ]
    )
