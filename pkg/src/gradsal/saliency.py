"""Object saliency by iterative gradient descent on the input image.

A trained classifier stays frozen while the image is nudged downhill on
a class-specific objectness cost, with negative gradient components
floored to zero so pixels can only darken. After T steps the per-pixel
RGB-averaged difference between the original and the modified image is
the raw saliency map, which is then threshold-pruned, normalized, and
optionally smoothed with a closing/opening pair.

Cost menu (l is the label the plain classifier predicts):
  plain  net, F1: +ln y_l       -- push the recognized class down
  masked net, F2: -ln y_l       -- pull the image toward masked-l
  dual   net, F3: -ln y_(N+l)   -- pull toward the masked node of l

Each cost's gradient with respect to the logits has a closed form
(Kronecker-delta minus probabilities, up to sign), so descent seeds the
backward pass directly at the logits instead of differentiating the
cost symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import morphology
from .models import Network

VARIANT_COST = {"cnn1": "f1", "cnn2": "f2", "cnn3": "f3"}
COST_LABEL_SPACE = {"f1": "plain", "f2": "masked", "f3": "dual"}


class SaliencyError(ValueError):
    pass


class CostDomainError(SaliencyError):
    """Target-node probability is zero; the log cost is undefined."""


@dataclass
class SaliencyConfig:
    iterations: int = 15
    step_mode: str = "max-pixel"  # "max-pixel" scales each step; "fixed" uses step_size as-is
    step_size: float = 0.02
    prune_mode: str = "mean-std"  # theta = mean + prune_value * std, or "constant"
    prune_value: float = 1.0
    norm: str = "l2"  # or "l1", "linf"
    smooth_element: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise SaliencyError("need at least one iteration")
        if self.step_mode not in ("max-pixel", "fixed"):
            raise SaliencyError(f"unknown step mode {self.step_mode!r}")
        if self.step_size <= 0 or not np.isfinite(self.step_size):
            raise SaliencyError("step size must be positive and finite")
        if self.prune_mode not in ("mean-std", "constant"):
            raise SaliencyError(f"unknown prune mode {self.prune_mode!r}")
        if self.prune_mode == "constant" and self.prune_value < 0:
            raise SaliencyError("constant threshold must be >= 0")
        if self.norm not in ("l2", "l1", "linf"):
            raise SaliencyError(f"unknown norm {self.norm!r}")
        if self.smooth_element < 1 or self.smooth_element % 2 == 0:
            raise SaliencyError("smoothing element must be odd and positive")


@dataclass
class Objective:
    """Cost choice for one extraction: variant plus the target label."""

    variant: str  # "f1" | "f2" | "f3"
    label: int
    n_classes: int

    def __post_init__(self):
        if self.variant not in COST_LABEL_SPACE:
            raise SaliencyError(f"unknown cost variant {self.variant!r}")
        if not 0 <= self.label < self.n_classes:
            raise SaliencyError(
                f"label {self.label} out of range for {self.n_classes} classes"
            )

    @property
    def target_node(self) -> int:
        """Output node the cost reads: l, or N+l for the dual variant."""
        if self.variant == "f3":
            return self.n_classes + self.label
        return self.label

    def check_network(self, net: Network) -> None:
        expected = COST_LABEL_SPACE[self.variant]
        if net.label_space != expected:
            raise SaliencyError(
                f"cost {self.variant} needs a {expected!r} network, "
                f"got {net.label_space!r}"
            )
        if net.n_classes != self.n_classes:
            raise SaliencyError(
                f"objective built for {self.n_classes} classes, "
                f"network has {net.n_classes}"
            )


@dataclass
class SaliencyMap:
    """Nonnegative single-channel map with an explicit processing state."""

    values: np.ndarray  # (H, W) float64, >= 0
    state: str  # "raw" | "pruned" | "unit" | "smoothed" | "refined"
    provenance: str
    degenerate: bool = False  # all-zero map survived the pipeline
    theta: Optional[float] = None  # resolved pruning threshold, once applied

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise SaliencyError(f"map must be 2-D, got shape {self.values.shape}")
        if self.values.size and float(self.values.min()) < 0:
            raise SaliencyError("saliency values must be nonnegative")


@dataclass
class GDResult:
    final_image: np.ndarray
    costs: List[float]
    raw_map: SaliencyMap
    steps_applied: int = 0


def cost(objective: Objective, y: np.ndarray) -> float:
    """Scalar objectness cost read off the output probabilities."""
    y = np.asarray(y, dtype=np.float64)
    expected = 2 * objective.n_classes if objective.variant == "f3" \
        else objective.n_classes
    if y.shape != (expected,):
        raise SaliencyError(
            f"cost {objective.variant}: expected {expected} probabilities, "
            f"got shape {y.shape}"
        )
    p = float(y[objective.target_node])
    if p <= 0.0:
        raise CostDomainError(
            f"target node {objective.target_node} has zero probability"
        )
    return float(np.log(p)) if objective.variant == "f1" else float(-np.log(p))


def error_signal(objective: Objective, y: np.ndarray) -> np.ndarray:
    """Closed-form cost gradient at the logits.

    f1: delta(i-l) - y_i;  f2: y_i - delta(i-l);  f3: y_i - delta(i-lbar).
    """
    y = np.asarray(y, dtype=np.float64)
    delta = np.zeros_like(y)
    delta[objective.target_node] = 1.0
    if objective.variant == "f1":
        return delta - y
    return y - delta


def compute_input_gradient(net: Network, objective: Objective,
                           image: np.ndarray) -> np.ndarray:
    """Gradient of the objective's cost with respect to the input pixels.

    Sign convention: this is the gradient of the cost that the descent
    update reduces, so the caller subtracts (a floored copy of) it.
    """
    objective.check_network(net)
    y = net.forward_single(image)
    e = error_signal(objective, y)
    net.zero_grads()
    grad = net.input_gradient(e)
    return grad[0]


def run_gd(net: Network, objective: Objective, image: np.ndarray,
           cfg: SaliencyConfig) -> GDResult:
    """Iterate the floored descent update and distill the raw map.

    Per step: forward (cost recorded), backward to the input, negative
    gradient components floored to zero, update, clamp to [0, 1]. The
    raw map is the RGB-channel mean of (original - final); flooring plus
    clamping make it nonnegative by construction.
    """
    objective.check_network(net)
    x0 = np.asarray(image, dtype=np.float64)
    if x0.ndim != 3 or x0.min() < 0 or x0.max() > 1:
        raise SaliencyError("input image must be (3, H, W) with values in [0, 1]")
    x = x0.copy()
    costs: List[float] = []
    steps = 0
    for t in range(1, cfg.iterations + 1):
        y = net.forward_single(x)
        costs.append(cost(objective, y))
        e = error_signal(objective, y)
        net.zero_grads()
        grad = net.input_gradient(e)[0]
        if not np.all(np.isfinite(grad)):
            raise SaliencyError(f"non-finite input gradient at iteration {t}")
        g = np.maximum(grad, 0.0)
        gmax = float(g.max())
        if gmax > 0.0:
            eps = cfg.step_size / gmax if cfg.step_mode == "max-pixel" \
                else cfg.step_size
            x = np.clip(x - eps * g, 0.0, 1.0)
            steps += 1
    raw = (x0 - x).mean(axis=0)
    raw_map = SaliencyMap(values=raw, state="raw", provenance=objective.variant,
                          degenerate=not raw.any())
    net.clear_caches()
    return GDResult(final_image=x, costs=costs, raw_map=raw_map, steps_applied=steps)


def _norm(values: np.ndarray, kind: str) -> float:
    if kind == "l1":
        return float(np.abs(values).sum())
    if kind == "linf":
        return float(np.abs(values).max()) if values.size else 0.0
    return float(np.sqrt((values * values).sum()))


def resolve_theta(raw: SaliencyMap, cfg: SaliencyConfig) -> float:
    if cfg.prune_mode == "constant":
        return float(cfg.prune_value)
    v = raw.values
    return float(v.mean() + cfg.prune_value * v.std())


def postprocess(raw: SaliencyMap, cfg: SaliencyConfig) -> SaliencyMap:
    """Prune with the resolved threshold, then normalize to unit norm.

    An all-zero map after pruning is legal: it stays zero and comes back
    flagged degenerate.
    """
    if raw.state != "raw":
        raise SaliencyError(f"postprocess expects a raw map, got {raw.state!r}")
    theta = resolve_theta(raw, cfg)
    pruned = np.maximum(raw.values - theta, 0.0)
    n = _norm(pruned, cfg.norm)
    if n == 0.0:
        return SaliencyMap(values=pruned, state="unit", provenance=raw.provenance,
                           degenerate=True, theta=theta)
    return SaliencyMap(values=pruned / n, state="unit", provenance=raw.provenance,
                       degenerate=False, theta=theta)


def combine(map2: SaliencyMap, map3: SaliencyMap,
            cfg: Optional[SaliencyConfig] = None) -> SaliencyMap:
    """Pixelwise mean of two unit-norm maps, re-normalized."""
    cfg = cfg or SaliencyConfig()
    for m in (map2, map3):
        if m.state not in ("unit", "smoothed"):
            raise SaliencyError(f"combine expects unit-norm maps, got {m.state!r}")
    if map2.values.shape != map3.values.shape:
        raise SaliencyError(
            f"map dimensions disagree: {map2.values.shape} vs {map3.values.shape}"
        )
    mean = (map2.values + map3.values) / 2.0
    n = _norm(mean, cfg.norm)
    provenance = f"{map2.provenance}+{map3.provenance}"
    if n == 0.0:
        return SaliencyMap(values=mean, state="unit", provenance=provenance,
                           degenerate=True)
    return SaliencyMap(values=mean / n, state="unit", provenance=provenance,
                       degenerate=False)


def smooth(smap: SaliencyMap, cfg: Optional[SaliencyConfig] = None) -> SaliencyMap:
    """Closing then opening with the square element, then re-normalize."""
    cfg = cfg or SaliencyConfig()
    if smap.state not in ("unit", "pruned"):
        raise SaliencyError(f"smooth expects a unit or pruned map, got {smap.state!r}")
    size = cfg.smooth_element
    values = morphology.open_(morphology.close(smap.values, size), size)
    values = np.maximum(values, 0.0)
    n = _norm(values, cfg.norm)
    if n == 0.0:
        return SaliencyMap(values=values, state="smoothed",
                           provenance=smap.provenance, degenerate=True,
                           theta=smap.theta)
    return SaliencyMap(values=values / n, state="smoothed",
                       provenance=smap.provenance, degenerate=False,
                       theta=smap.theta)
