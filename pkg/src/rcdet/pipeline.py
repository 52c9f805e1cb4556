"""Per-frame processing: radar preprocessing, association, cluster feature
extraction and rasterization, then box decoding.

The radar feature heatmap is the fusion-side product of a frame (the input
contract for downstream regression heads); the decoded boxes come from the
preliminary-detection records planted into the decoder grids. Frames are
independent, so a scene set can be processed by a worker pool; results are
always ordered by frame id regardless of completion order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .decoder import (
    DetectionBox3D,
    build_maps_from_detections,
    decode_detections,
    topk_peaks,
)
from .errors import EmptyCluster
from .features import (
    FeatureHeatmap,
    FeatureVector,
    HandcraftedConfig,
    extract_handcrafted,
    rasterize_heatmap,
    zero_features,
)
from .kpconv import KPNetworkConfig, extract_hybrid, extract_learned
from .radar import (
    DEFAULT_MAX_RANGE,
    DEFAULT_MAX_SWEEPS,
    DEFAULT_MIN_RANGE,
    DEFAULT_PILLAR_DIMS,
    Cluster,
    accumulate_sweeps,
    associate,
    range_filter,
)
from .scene_io import SceneFrame

FEATURE_STRATEGIES = ("handcrafted", "learned", "hybrid")

WORKERS_ENV_VAR = "RCDET_WORKERS"


@dataclass
class PipelineConfig:
    feature_strategy: str = "handcrafted"
    handcrafted: HandcraftedConfig = field(default_factory=HandcraftedConfig)
    pillar_dims: tuple[float, float, float] = DEFAULT_PILLAR_DIMS
    expansion: float = 1.0
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    min_range: float = DEFAULT_MIN_RANGE
    max_range: float = DEFAULT_MAX_RANGE
    downsample: int = 4
    top_k: int = 100
    score_threshold: float = 0.0
    num_classes: int | None = None

    def __post_init__(self) -> None:
        if self.feature_strategy not in FEATURE_STRATEGIES:
            raise ValueError(
                f"unknown feature strategy {self.feature_strategy!r}, "
                f"expected one of {FEATURE_STRATEGIES}"
            )


@dataclass(eq=False)
class FrameResult:
    frame_id: int
    detections: list[DetectionBox3D]
    radar_heatmap: FeatureHeatmap
    clusters: list[Cluster]


def feature_length(cfg: PipelineConfig, net: KPNetworkConfig | None) -> int:
    if cfg.feature_strategy == "handcrafted":
        return cfg.handcrafted.length
    if net is None:
        raise ValueError(f"{cfg.feature_strategy} extraction needs a network config")
    if cfg.feature_strategy == "learned":
        return net.output_dim
    return cfg.handcrafted.length + net.output_dim


def extract_cluster_features(
    cluster: Cluster, cfg: PipelineConfig, net: KPNetworkConfig | None
) -> FeatureVector:
    """Extract features per the configured strategy; empty clusters give zeros."""
    try:
        if cfg.feature_strategy == "handcrafted":
            return extract_handcrafted(cluster, cfg.handcrafted)
        if cfg.feature_strategy == "learned":
            return extract_learned(cluster, net)
        return extract_hybrid(cluster, cfg.handcrafted, net)
    except EmptyCluster:
        return zero_features(feature_length(cfg, net), kind=cfg.feature_strategy)


def process_frame(
    frame: SceneFrame, cfg: PipelineConfig, net: KPNetworkConfig | None = None
) -> FrameResult:
    """Run one frame through the full chain: accumulate, filter, associate,
    extract, rasterize, decode."""
    if cfg.feature_strategy != "handcrafted" and net is None:
        raise ValueError(f"{cfg.feature_strategy} extraction needs a network config")
    points = accumulate_sweeps(frame.radar_sweeps, cfg.max_sweeps)
    points = range_filter(points, cfg.min_range, cfg.max_range)
    clusters = associate(
        points, frame.detections, frame.camera, cfg.pillar_dims, cfg.expansion
    )
    features = [extract_cluster_features(c, cfg, net) for c in clusters]
    radar_heatmap = rasterize_heatmap(
        list(zip(clusters, features)), frame.camera.image_size, cfg.downsample
    )
    num_classes = cfg.num_classes
    if num_classes is None:
        num_classes = max((d.class_id + 1 for d in frame.detections), default=1)
    class_heatmap, maps = build_maps_from_detections(
        frame.detections, frame.camera.image_size, num_classes, cfg.downsample
    )
    candidates = topk_peaks(class_heatmap, cfg.top_k)
    detections = decode_detections(candidates, maps, frame.camera, cfg.score_threshold)
    return FrameResult(
        frame_id=frame.frame_id,
        detections=detections,
        radar_heatmap=radar_heatmap,
        clusters=clusters,
    )


def default_workers() -> int:
    """Worker count from the environment override, defaulting to 1."""
    try:
        return max(1, int(os.environ.get(WORKERS_ENV_VAR, "1")))
    except ValueError:
        return 1


def run_scenes(
    frames: Sequence[SceneFrame],
    cfg: PipelineConfig,
    net: KPNetworkConfig | None = None,
    workers: int | None = None,
) -> list[FrameResult]:
    """Process frames (optionally with a thread pool) and order results by frame id."""
    workers = workers if workers is not None else default_workers()
    if workers > 1 and len(frames) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda f: process_frame(f, cfg, net), frames))
    else:
        results = [process_frame(frame, cfg, net) for frame in frames]
    return sorted(results, key=lambda r: r.frame_id)
