"""Ensemble uncertainty estimators: multiple models (MM) and multiple transforms (MT).

Both run several flow estimations of the same image pair and report the
per-pixel, per-component sample standard deviation of the members as the
uncertainty, with the member mean as the ensemble flow prediction. MM varies
the estimator configuration; MT varies the input by right-angle rotations
and maps each result back to the original frame before aggregating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EnsembleError, EstimationError, ParameterError
from .flowdata import FlowField, ImagePair, UncertaintyField
from .pivcc import EstimatorConfig, estimate

RIGHT_ANGLES = (0, 90, 180, 270)

# Positivity floor applied when building the UncertaintyField; degenerate
# zero-spread ensembles must still satisfy the strict-positivity invariant.
SIGMA_FLOOR = 1e-6

# Estimator-config diversity standing in for independently trained model
# instances: four window/peak-fit variants.
DEFAULT_MM_CONFIGS = (
    EstimatorConfig(window_size=16, peak_fit="gaussian3", instance_id=0),
    EstimatorConfig(window_size=24, peak_fit="gaussian3", instance_id=1),
    EstimatorConfig(window_size=32, peak_fit="parabolic3", instance_id=2),
    EstimatorConfig(window_size=48, peak_fit="gaussian3", instance_id=3),
)

Estimator = Callable[[ImagePair], FlowField]


@dataclass(frozen=True)
class EnsembleResult:
    """Member flows with their per-pixel mean and sample standard deviation."""

    mean_flow: FlowField
    uncertainty: UncertaintyField
    member_flows: tuple[FlowField, ...]


def _aggregate(members: Sequence[FlowField]) -> EnsembleResult:
    if len(members) < 2:
        raise EnsembleError(f"need at least 2 surviving members, got {len(members)}")
    shape = members[0].shape
    for m in members[1:]:
        if m.shape != shape:
            raise EnsembleError(f"member shapes disagree: {m.shape} != {shape}")
    us = np.stack([m.u for m in members])
    vs = np.stack([m.v for m in members])
    mean = FlowField(u=us.mean(axis=0), v=vs.mean(axis=0))
    sigma = UncertaintyField(
        sigma_u=np.maximum(us.std(axis=0, ddof=1), SIGMA_FLOOR),
        sigma_v=np.maximum(vs.std(axis=0, ddof=1), SIGMA_FLOOR),
    )
    return EnsembleResult(mean_flow=mean, uncertainty=sigma, member_flows=tuple(members))


def mm_estimate(pair: ImagePair, configs: Sequence[EstimatorConfig] = DEFAULT_MM_CONFIGS) -> EnsembleResult:
    """Run one estimator per config and aggregate the member statistics.

    Members that fail estimation are dropped; fewer than two survivors is an
    ensemble error.
    """
    if len(configs) < 2:
        raise ParameterError(f"mm_estimate needs at least 2 configs, got {len(configs)}")
    members = []
    for cfg in configs:
        try:
            members.append(estimate(pair, cfg))
        except EstimationError:
            continue
    return _aggregate(members)


def _rot_steps(angle: int) -> int:
    if angle not in RIGHT_ANGLES:
        raise ParameterError(f"rotation angle must be one of {RIGHT_ANGLES}, got {angle}")
    return (angle // 90) % 4


def rotate_pair(pair: ImagePair, angle: int) -> ImagePair:
    """Rotate both frames by a right angle CCW. Exact pixel permutation."""
    k = _rot_steps(angle)
    return ImagePair(frame_a=np.rot90(pair.frame_a, k), frame_b=np.rot90(pair.frame_b, k))


def rotate_flow(flow: FlowField, angle: int) -> FlowField:
    """Flow field of the scene whose images were rotated by `angle` CCW.

    Rotates the component grids and the 2-vectors together: one 90-degree
    step maps (u, v) -> (v, -u) on the rotated grid.
    """
    u, v = flow.u, flow.v
    for _ in range(_rot_steps(angle)):
        u, v = np.rot90(v), -np.rot90(u)
    return FlowField(u=u, v=v)


def rotate_flow_back(flow: FlowField, angle: int) -> FlowField:
    """Exact inverse of rotate_flow: back to the original grid and vector frame."""
    u, v = flow.u, flow.v
    for _ in range(_rot_steps(angle)):
        u, v = -np.rot90(v, -1), np.rot90(u, -1)
    return FlowField(u=u, v=v)


def mt_estimate(
    pair: ImagePair,
    cfg: EstimatorConfig = EstimatorConfig(),
    angles: Sequence[int] = RIGHT_ANGLES,
    estimator: Estimator | None = None,
) -> EnsembleResult:
    """Rotation-augmented ensemble with a single estimator.

    For each angle the pair is rotated, estimated, and the flow is mapped
    back to the original frame; members then aggregate exactly as in
    mm_estimate. `estimator` overrides the default pivcc estimator (the
    callable receives the rotated pair).
    """
    if len(angles) < 2:
        raise ParameterError(f"mt_estimate needs at least 2 angles, got {len(angles)}")
    for angle in angles:
        _rot_steps(angle)
    est = estimator if estimator is not None else (lambda p: estimate(p, cfg))
    members = []
    for angle in angles:
        try:
            rotated_flow = est(rotate_pair(pair, angle))
        except EstimationError:
            continue
        members.append(rotate_flow_back(rotated_flow, angle))
    return _aggregate(members)
