"""Closed-form desired states with smoothness metadata.

Each target carries the Sobolev class that drives both the expected
convergence rate under the rho = h^2 coupling (2.0 / 1.5 / 0.5 for
H2 / H32 / H12) and the quadrature treatment: piecewise-defined targets
expose a box test marking regions where they are low-degree
polynomials, so subdivided integration descends only near
discontinuities and creases.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

RATE_BY_CLASS = {"H2": 2.0, "H32": 1.5, "H12": 0.5}


@dataclass(frozen=True)
class TargetSpec:
    """Desired state: pure evaluator plus integration metadata.

    evaluator maps an (n, d) point array to (n,) values.
    simple_on_boxes, when set, maps box corner arrays (lo, hi) of shape
    (n, d) to a boolean mask: True where the target restricted to the
    box is a polynomial of degree <= 1 (the base quadrature rule is
    then exact and subdivision can stop).  resolution, when set, is an
    absolute length scale the quadrature must resolve regardless of
    local smoothness.  components splits the evaluator into parts
    integrated separately (values sum).
    """

    kind: str
    dim: int
    smoothness_class: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    norm_l2: Optional[float] = None
    simple_on_boxes: Optional[Callable] = None
    resolution: Optional[float] = None
    components: Optional[tuple] = None

    @property
    def expected_rate(self):
        return RATE_BY_CLASS[self.smoothness_class]

    @property
    def non_smooth(self):
        """True when load assembly must use subdivided quadrature."""
        return self.smoothness_class != "H2" or self.resolution is not None


def smooth_target(n_space):
    """Separable sine product, one factor per space axis plus time.

    Vanishes on the whole boundary of Q; lies in H^2(Q).  The exact
    L2(Q) norm is 2^{-(n_space+1)/2}.
    """
    if n_space not in (1, 2, 3):
        raise ValueError(f"n_space must be 1, 2 or 3, got {n_space}")
    d = n_space + 1

    def evaluate(points):
        return np.prod(np.sin(np.pi * points), axis=1)

    return TargetSpec(
        kind="smooth",
        dim=d,
        smoothness_class="H2",
        evaluator=evaluate,
        norm_l2=2.0 ** (-d / 2.0),
    )


def hat_target(d):
    """Max-norm cone: 1 at the center of Q, 0 on the whole boundary.

    Piecewise linear and continuous, in H^{3/2-eps}(Q).  The exact
    squared L2 norm is 2 / ((d+1)(d+2)).
    """
    if d not in (2, 3, 4):
        raise ValueError(f"d must be 2, 3 or 4, got {d}")

    def evaluate(points):
        m = np.abs(points - 0.5).max(axis=1)
        return np.maximum(0.0, 1.0 - 2.0 * m)

    def simple_on_boxes(lo, hi):
        # Linear on a box iff one signed coordinate dominates throughout:
        # there is an axis i and a side such that |y_i - 1/2| beats every
        # other axis on the whole box and keeps a fixed sign.
        glo = np.maximum.reduce([0.5 - hi, lo - 0.5, np.zeros_like(lo)])
        ghi = np.maximum(np.abs(lo - 0.5), np.abs(hi - 0.5))
        simple = np.zeros(len(lo), dtype=bool)
        for i in range(d):
            others = [ghi[:, j] for j in range(d) if j != i]
            rest = np.maximum.reduce(others)
            sign_fixed = (lo[:, i] >= 0.5) | (hi[:, i] <= 0.5)
            simple |= (glo[:, i] >= rest) & sign_fixed
        return simple

    return TargetSpec(
        kind="hat",
        dim=d,
        smoothness_class="H32",
        evaluator=evaluate,
        norm_l2=math.sqrt(2.0 / ((d + 1) * (d + 2))),
        simple_on_boxes=simple_on_boxes,
    )


def cube_indicator(d):
    """Indicator of the closed inscribed cube [1/4, 3/4]^d.

    Discontinuous, in H^{1/2-eps}(Q); integral over Q equals 2^-d.
    """
    if d not in (2, 3, 4):
        raise ValueError(f"d must be 2, 3 or 4, got {d}")

    def evaluate(points):
        inside = np.all((points >= 0.25) & (points <= 0.75), axis=1)
        return inside.astype(float)

    return TargetSpec(
        kind="cube",
        dim=d,
        smoothness_class="H12",
        evaluator=evaluate,
        norm_l2=2.0 ** (-d / 2.0),
        simple_on_boxes=_cube_box_test(d),
    )


def _cube_box_test(d):
    def simple_on_boxes(lo, hi):
        inside = np.all((lo >= 0.25) & (hi <= 0.75), axis=1)
        outside = np.any((hi <= 0.25) | (lo >= 0.75), axis=1)
        return inside | outside

    return simple_on_boxes


def noisy_indicator(delta):
    """Cube indicator polluted by a separable 10-pi sine of level delta.

    Defined for two space dimensions (d = 3).  The pollution has exact
    L2(Q) norm delta, is L2-orthogonal to the clean indicator, and the
    stored delta drives the h = 16 delta^2 coupling in noise studies.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    d = 3
    amp = 2.0 * math.sqrt(2.0) * delta
    clean = cube_indicator(d)

    def noise(points):
        return amp * np.prod(np.sin(10.0 * np.pi * points), axis=1)

    def evaluate(points):
        return clean.evaluator(points) + noise(points)

    noise_part = TargetSpec(
        kind="noise_term",
        dim=d,
        smoothness_class="H2",
        evaluator=noise,
        resolution=1.0 / 64.0,
    )
    return TargetSpec(
        kind="noisy",
        dim=d,
        smoothness_class="H12",
        evaluator=evaluate,
        params={"delta": delta},
        norm_l2=math.sqrt(2.0 ** (-d) + delta**2),
        components=(clean, noise_part),
    )


def custom_target(evaluator, d, smoothness_class="H2", norm_l2=None,
                  simple_on_boxes=None):
    """Wrap a user-supplied evaluator as a target."""
    return TargetSpec(
        kind="custom",
        dim=d,
        smoothness_class=smoothness_class,
        evaluator=evaluator,
        norm_l2=norm_l2,
        simple_on_boxes=simple_on_boxes,
    )


def target_by_name(name, d, delta=None):
    """Resolve a config-file target name for dimension d."""
    if name == "smooth":
        return smooth_target(d - 1)
    if name == "hat":
        return hat_target(d)
    if name == "cube":
        return cube_indicator(d)
    if name == "noisy":
        if d != 3:
            raise ValueError("noisy target is defined for dimension 3 only")
        if delta is None:
            raise ValueError("noisy target requires delta")
        return noisy_indicator(delta)
    raise ValueError(f"unknown target {name!r}")
