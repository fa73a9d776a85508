"""Disk barrier between vehicle pairs and the constraint rows built on it.

Each vehicle occupies a disk of radius r in the plane. For a pair with
offset xi = p_i - p_j the barrier is

    h = xi . xi - ((1 + beta) (r_i + r_j))**2

which is nonnegative exactly when the beta-inflated disks do not overlap.
Two linear constraints derive from it:

* speed-level row, used when speeds are the controls. Enforcing
  dh/dt + bandwidth * h >= 0 with dh/dt = 2 xi . (u_i d_i - u_j d_j) gives

      (2 xi . d_i) u_i + (-2 xi . d_j) u_j + bandwidth * h >= 0

* acceleration-level bound, used when accelerations are the controls and the
  peer's acceleration is assumed known. The cascade
  d2h/dt2 + (bw1 + bw2) dh/dt + bw1 bw2 h >= 0 with
  d2h/dt2 = 2 |v_rel|**2 + 2 xi . (a_i d_i - a_j d_j) yields a single linear
  inequality in a_i.

Headings are piecewise constant along each road, so the derivatives above
hold everywhere except at the instant the merge road joins the highway line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PairGeometry


@dataclass(frozen=True)
class BarrierParams:
    """Inflation margin shared by every pairwise disk barrier."""

    beta: float = 0.1

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")


@dataclass(frozen=True)
class ConstraintRow:
    """Linear inequality coeff_i * u_i + coeff_j * u_j + constant >= 0."""

    coeff_i: float
    coeff_j: float
    constant: float


def barrier_value(
    pair: PairGeometry, radius_i: float, radius_j: float, beta: float = 0.0
) -> float:
    """Barrier h for one pair; beta = 0 gives the raw disk-overlap test."""
    xi = pair.offset
    inflated = (1.0 + beta) * (radius_i + radius_j)
    return float(xi @ xi - inflated * inflated)


def first_order_row(
    pair: PairGeometry,
    radius_i: float,
    radius_j: float,
    params: BarrierParams,
    bandwidth: float,
) -> ConstraintRow:
    """Speed-level constraint row for one pair.

    Scaling the row by any positive constant leaves the feasible set and the
    downstream optimum unchanged; callers may normalize freely.
    """
    xi = pair.offset
    h = barrier_value(pair, radius_i, radius_j, params.beta)
    coeff_i = 2.0 * float(xi @ pair.heading_i)
    coeff_j = -2.0 * float(xi @ pair.heading_j)
    return ConstraintRow(coeff_i, coeff_j, bandwidth * h)


def second_order_constraint(
    pair: PairGeometry,
    radius_i: float,
    radius_j: float,
    params: BarrierParams,
    bandwidth1: float,
    bandwidth2: float,
    peer_accel: float = 0.0,
) -> tuple[float, float]:
    """Acceleration-level bound for vehicle i against a fixed peer j.

    Returns (coeff, constant) with the constraint coeff * a_i + constant >= 0.
    peer_accel is vehicle j's assumed acceleration along its heading.
    """
    xi = pair.offset
    v_rel = pair.rel_velocity
    h = barrier_value(pair, radius_i, radius_j, params.beta)
    h_dot = 2.0 * float(xi @ v_rel)
    coeff = 2.0 * float(xi @ pair.heading_i)
    peer_term = -2.0 * float(xi @ pair.heading_j) * peer_accel
    constant = (
        2.0 * float(v_rel @ v_rel)
        + peer_term
        + (bandwidth1 + bandwidth2) * h_dot
        + bandwidth1 * bandwidth2 * h
    )
    return coeff, constant
