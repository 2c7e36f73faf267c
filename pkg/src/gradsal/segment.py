"""Saliency refinement and binary object segmentation.

Refinement: repeatedly seed a region growing pass from random salient
points and average the binary outcomes into a soft foreground map.
Proposals come from multi-threshold connected components of that map;
the final mask is the proposal with the highest Jaccard index against
the delta-thresholded saliency mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import morphology
from .rng import stream
from .saliency import SaliencyMap

PROPOSAL_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))


class SegmentError(ValueError):
    pass


class NoProposalsError(SegmentError):
    """Proposal list is empty; there is nothing to select."""


@dataclass
class SegmentationConfig:
    delta_fraction: float = 0.5  # threshold for M1, as a fraction of map max
    seeds_per_run: int = 50
    runs: int = 100
    proposal_budget: int = 50
    growth_tolerance: float = 0.1  # Euclidean RGB distance to the running mean
    salient_fraction: float = 0.5  # seed pool membership: value > fraction * max
    morph_cleanup: bool = True  # close each proposal with a 3x3 element
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.delta_fraction < 1:
            raise SegmentError("delta_fraction must be in (0, 1)")
        if min(self.seeds_per_run, self.runs, self.proposal_budget) < 1:
            raise SegmentError("counts must be positive")
        if self.growth_tolerance <= 0:
            raise SegmentError("growth tolerance must be positive")
        if not 0 < self.salient_fraction < 1:
            raise SegmentError("salient_fraction must be in (0, 1)")


@dataclass
class Selection:
    found: bool
    index: int = -1
    jaccard: float = 0.0
    mask: Optional[np.ndarray] = None
    delta_resolved: float = 0.0


def _neighbors_dilate(mask: np.ndarray) -> np.ndarray:
    """8-connected dilation of a boolean mask by one pixel."""
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:h + 1, 1:w + 1] = mask
    out = np.zeros_like(mask)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def region_grow(image: np.ndarray, seeds: np.ndarray,
                tolerance: float) -> np.ndarray:
    """Grow a region from seed pixels over the color image.

    Sweeps absorb every 8-neighbor of the current region whose Euclidean
    RGB distance to the running region mean is within tolerance; the
    mean is refreshed after each sweep. Seeds always belong.
    """
    if image.ndim != 3 or image.shape[1:] != seeds.shape:
        raise SegmentError(
            f"image {image.shape} and seed mask {seeds.shape} disagree"
        )
    region = seeds.copy()
    if not region.any():
        return region
    mean = image[:, region].mean(axis=1)
    while True:
        candidates = _neighbors_dilate(region) & ~region
        if not candidates.any():
            break
        cand_idx = np.flatnonzero(candidates)
        colors = image.reshape(3, -1)[:, cand_idx]
        dist = np.sqrt(((colors - mean[:, None]) ** 2).sum(axis=0))
        accepted = cand_idx[dist <= tolerance]
        if accepted.size == 0:
            break
        region.reshape(-1)[accepted] = True
        mean = image[:, region].mean(axis=1)
    return region


def refine(image: np.ndarray, smap: SaliencyMap,
           cfg: SegmentationConfig) -> SaliencyMap:
    """Average many seeded segmentations into a soft foreground map.

    Values land in [0, 1] as multiples of 1/runs. An empty salient point
    set yields a flagged all-zero map.
    """
    if image.shape[1:] != smap.values.shape:
        raise SegmentError(
            f"image {image.shape} and map {smap.values.shape} disagree"
        )
    mx = float(smap.values.max())
    salient = smap.values > cfg.salient_fraction * mx if mx > 0 \
        else np.zeros_like(smap.values, dtype=bool)
    points = np.flatnonzero(salient)
    provenance = f"refined({smap.provenance})"
    if points.size == 0:
        return SaliencyMap(values=np.zeros_like(smap.values), state="refined",
                           provenance=provenance, degenerate=True)
    acc = np.zeros(smap.values.shape, dtype=np.float64)
    for run in range(cfg.runs):
        rng = stream(cfg.seed, f"run-{run:04d}")
        chosen = rng.choice(points, size=cfg.seeds_per_run, replace=True)
        seed_mask = np.zeros(smap.values.shape, dtype=bool)
        seed_mask.reshape(-1)[chosen] = True
        acc += region_grow(image, seed_mask, cfg.growth_tolerance)
    return SaliencyMap(values=acc / cfg.runs, state="refined",
                       provenance=provenance, degenerate=False)


def jaccard(m1: np.ndarray, m2: np.ndarray) -> float:
    """Intersection over union; 0 when both masks are empty."""
    if m1.shape != m2.shape:
        raise SegmentError(f"mask dimensions disagree: {m1.shape} vs {m2.shape}")
    a = np.asarray(m1, dtype=bool)
    b = np.asarray(m2, dtype=bool)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def connected_components(mask: np.ndarray) -> List[np.ndarray]:
    """8-connected components of a boolean mask, in scan order."""
    remaining = mask.copy()
    components: List[np.ndarray] = []
    while remaining.any():
        comp = np.zeros_like(mask)
        comp.reshape(-1)[int(np.flatnonzero(remaining)[0])] = True
        while True:
            grown = _neighbors_dilate(comp) & remaining
            if np.array_equal(grown, comp):
                break
            comp = grown
        remaining &= ~comp
        components.append(comp)
    return components


def propose(refined: SaliencyMap, cfg: SegmentationConfig) -> List[np.ndarray]:
    """Candidate masks from multi-threshold connected components.

    Components are collected at nine fixed levels, optionally closed to
    fill pinholes, deduplicated, ranked by area, and truncated to the
    proposal budget. An all-zero map yields an empty list.
    """
    seen = set()
    candidates: List[np.ndarray] = []
    for level in PROPOSAL_LEVELS:
        binary = refined.values > level
        if not binary.any():
            continue
        for comp in connected_components(binary):
            if cfg.morph_cleanup:
                comp = morphology.binary_close(comp)
            if not comp.any():
                continue
            key = comp.tobytes()
            if key in seen:
                continue
            seen.add(key)
            candidates.append(comp)
    candidates.sort(key=lambda m: int(np.count_nonzero(m)), reverse=True)
    return candidates[:cfg.proposal_budget]


def select(refined: SaliencyMap, proposals: List[np.ndarray],
           cfg: SegmentationConfig) -> Selection:
    """Pick the proposal with the highest Jaccard index against M1.

    M1 is the refined map thresholded at delta (a fraction of its max).
    Ties keep the earlier proposal. Raises NoProposalsError on an empty
    proposal list.
    """
    if not proposals:
        raise NoProposalsError("no proposals to select from")
    mx = float(refined.values.max())
    delta = cfg.delta_fraction * mx
    m1 = refined.values > delta
    best_idx, best_score = 0, -1.0
    for i, proposal in enumerate(proposals):
        score = jaccard(m1, proposal)
        if score > best_score:
            best_idx, best_score = i, score
    return Selection(found=True, index=best_idx, jaccard=best_score,
                     mask=proposals[best_idx], delta_resolved=delta)
