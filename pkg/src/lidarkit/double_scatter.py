"""double_scatter.py

Double-scattering return rate ``I21(t)`` and bounds on the neglected
double-scatter terms.

Heights follow the trajectory backwards: ``z1`` is the height of the second
(last) scattering, from which the particle runs straight down into the
receiver, and ``z2`` the height of the first scattering.  The acceptance domain
``D0`` holds the pairs whose trajectories can enter the aperture.

Usage::

    from lidarkit.double_scatter import double_scatter_return

    res = double_scatter_return(100.0, geom, medium)
    res.value, res.error
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError, SingularPointError
from .geometry import DetectorGeometry
from .medium import PHASE_MODES, MediumModel, PhaseApproximationMode
from .quadrature import QuadratureConfig, Rect, adaptive_integrate

logger = logging.getLogger(__name__)

__all__ = [
    "D0Point",
    "DoubleScatterResult",
    "QuadratureConfig",
    "d0_contains",
    "d0_mask",
    "d0_offset_mask",
    "double_attenuation",
    "double_scatter_integrand",
    "double_scatter_return",
    "i22_bound",
    "i23_bound",
]


@dataclass(frozen=True)
class D0Point:
    """``z1``: height of the second scattering; ``z2``: of the first."""

    z1: float
    z2: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.z1) and math.isfinite(self.z2)):
            raise DomainError(f"scattering heights must be finite, got ({self.z1}, {self.z2})")


@dataclass(frozen=True)
class DoubleScatterResult:
    value: float
    error: float
    subdivisions: int
    empty: bool = False


# ------------------------------------------------------------
# Acceptance domain
# ------------------------------------------------------------

def d0_mask(z1: ArrayLike, z2: ArrayLike, t: float, geom: DetectorGeometry) -> NDArray[np.bool_]:
    """Vectorised :func:`d0_contains` over arrays of heights."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    half = 0.5 * t
    reach = geom.epsilon * z1 - geom.rho0
    inside = (z1 >= 0.0) & (z1 <= half) & (z2 >= 0.0) & (z2 < half) & (reach > 0.0)
    return inside & ((t - 2.0 * z1) * (t - 2.0 * z2) < reach * reach)


def d0_offset_mask(z1: ArrayLike, xi: ArrayLike, geom: DetectorGeometry) -> NDArray[np.bool_]:
    """D0 membership from the measured horizontal offset *xi* of the last scattering.

    Same test as :func:`d0_mask` with ``xi`` taken from an actual trajectory
    instead of ``xi**2 = (t - 2 z1)(t - 2 z2)``.
    """
    reach = geom.epsilon * np.asarray(z1, dtype=float) - geom.rho0
    return (reach > 0.0) & (np.asarray(xi, dtype=float) < reach)


def d0_contains(p: D0Point, t: float, geom: DetectorGeometry) -> bool:
    """Whether a double-scatter trajectory through *p* can reach the receiver.

    The last leg from ``z1`` must land within ``rho0`` of the axis at an angle
    inside the aperture: with ``xi**2 = (t - 2 z1)(t - 2 z2)`` the horizontal
    offset of the second scattering, the test is
    ``eps*z1 > rho0`` and ``xi**2 < (eps*z1 - rho0)**2``.
    """
    if not t > 0.0:
        raise DomainError(f"return time must be positive, got {t}")
    return bool(d0_mask(p.z1, p.z2, t, geom))


# ------------------------------------------------------------
# Integrand
# ------------------------------------------------------------

def _attenuation(medium: MediumModel, z1, z2, ratio) -> NDArray[np.float64]:
    # ratio = (t - 2 z1) / (t - z1 - z2); second integral is signed
    tau1 = medium.extinction.integral(z1)
    tau2 = medium.extinction.integral(z2)
    return np.exp(-2.0 * tau1 - ratio * (tau2 - tau1))


def _phase_product(medium: MediumModel, z1, z2, cos1, mode: str, theta0: float) -> NDArray[np.float64]:
    cos1 = np.clip(cos1, -1.0, 1.0)
    if mode == "half_aperture":
        first = -np.cos(np.arccos(cos1) + 0.5 * theta0)
    else:
        first = -cos1
    return medium.phase.evaluate(first, z2) * medium.phase.evaluate(cos1, z1)


def _core(medium: MediumModel, theta0: float, mode: str, z1, z2, cos1, ratio) -> NDArray[np.float64]:
    """Integrand times ``t - z1 - z2``."""
    return _attenuation(medium, z1, z2, ratio) * _phase_product(medium, z1, z2, cos1, mode, theta0) / (z1 * z1)


def _check_mode(mode: str) -> None:
    if mode not in PHASE_MODES:
        raise DomainError(f"unknown phase approximation mode {mode!r}; expected one of {PHASE_MODES}")


def double_attenuation(p: D0Point, t: float, medium: MediumModel) -> float:
    """``exp[-2∫0^z1 σt - ((t-2z1)/(t-z1-z2)) ∫_z1^z2 σt]``.

    Raises:
        DomainError: If ``z1 + z2 >= t``.
    """
    w = t - p.z1 - p.z2
    if not w > 0.0:
        raise DomainError(f"double attenuation needs z1 + z2 < t, got {p.z1} + {p.z2} >= {t}")
    return float(_attenuation(medium, p.z1, p.z2, (t - 2.0 * p.z1) / w))


def double_scatter_integrand(
    p: Union[D0Point, Tuple[ArrayLike, ArrayLike]],
    t: float,
    geom: DetectorGeometry,
    medium: MediumModel,
    mode: PhaseApproximationMode = "exact",
) -> Union[float, NDArray[np.float64]]:
    """``E σ(a, z2) σ(cosθ1, z1) / (z1² (t - z1 - z2))``.

    ``cosθ1 = (z1 - z2)/(t - z1 - z2)``; the first phase argument ``a`` is
    ``-cosθ1``, or ``cos(π - θ1 - θ0/2)`` in ``half_aperture`` mode.  *p* may
    be a :class:`D0Point` or a pair of equally shaped arrays.

    Raises:
        SingularPointError: If any point has ``z1 <= 0`` or ``z1 + z2 >= t``.
    """
    _check_mode(mode)
    if isinstance(p, D0Point):
        z1, z2 = np.asarray(p.z1, dtype=float), np.asarray(p.z2, dtype=float)
    else:
        z1, z2 = (np.asarray(x, dtype=float) for x in p)
    w = t - z1 - z2
    if np.any(z1 <= 0.0) or np.any(w <= 0.0):
        raise SingularPointError("integrand is singular at z1 = 0 and on z1 + z2 = t")
    out = _core(medium, geom.theta0, mode, z1, z2, (z1 - z2) / w, (t - 2.0 * z1) / w) / w
    return float(out) if np.ndim(out) == 0 else out


# ------------------------------------------------------------
# Quadrature over D0
# ------------------------------------------------------------

def _corner_kink(kappa: float, eps: float) -> float:
    """Cosine-ratio ``v`` where the aperture bound meets ``z2 >= 0``."""
    b = 2.0 * kappa * (kappa + eps) + 4.0
    c = (kappa + eps) ** 2 + 4.0
    return 2.0 * kappa * kappa / (b + math.sqrt(max(b * b - 4.0 * c * kappa * kappa, 0.0)))


def _corner_problem(t, geom, medium, mode, scale):
    """Integrand and cells in ``(psi, s)`` with ``v = sin(psi)**2``.

    ``u = t - z1 - z2``, ``v = a/u``, ``a = s u_max v`` and
    ``b = s u_max (1 - v)``.  The Jacobian ``u`` cancels the ``1/u``
    singularity at the corner; ``dv = sin(2 psi) dpsi`` keeps
    ``sqrt(v (1 - v))`` smooth at both ends of the cosine range.
    """
    half, eps = 0.5 * t, geom.epsilon
    k = eps * half - geom.rho0

    def f(psi, s):
        sin2, cos2 = np.sin(psi) ** 2, np.cos(psi) ** 2
        twice = np.sin(2.0 * psi)
        with np.errstate(divide="ignore"):
            um = np.minimum(k / (twice + eps * sin2), half / cos2)
        u = s * um
        z1 = half - u * sin2
        z2 = half - u * cos2
        return scale * twice * um * _core(medium, geom.theta0, mode, z1, z2, 1.0 - 2.0 * sin2, 2.0 * sin2)

    psi_star = math.asin(math.sqrt(_corner_kink(2.0 * k / t, eps)))
    rects: List[Rect] = [(0.0, psi_star, 0.0, 1.0), (psi_star, 0.5 * math.pi, 0.0, 1.0)]
    return f, rects


def _graded_problem(t, geom, medium, mode, scale, levels: int = 24):
    """Integrand and cells in ``(beta, s)`` with ``b = beta**2`` and ``a = s a_max(b)``.

    Cells are graded geometrically toward the corner ``a = b = 0`` in both
    coordinates.
    """
    half, eps = 0.5 * t, geom.epsilon
    k = eps * half - geom.rho0

    def a_max(beta):
        b = beta * beta
        # sqrt(p**2 - 4 eps**2 k**2) = 4 beta sqrt(k eps + b)
        return 2.0 * k * k / (2.0 * k * eps + 4.0 * b + 4.0 * beta * np.sqrt(k * eps + b))

    def f(beta, s):
        am = a_max(beta)
        a = s * am
        b = beta * beta
        u = a + b
        v = a / u
        return scale * 2.0 * beta * am * _core(medium, geom.theta0, mode, half - a, half - b, 1.0 - 2.0 * v, 2.0 * v) / u

    top = math.sqrt(half)
    beta_edges = [top * 0.5**i for i in range(levels + 1)] + [0.0]
    s_edges = [0.5**j for j in range(2 * levels + 1)] + [0.0]
    rects: List[Rect] = [
        (b_lo, b_hi, s_lo, s_hi)
        for b_hi, b_lo in zip(beta_edges[:-1], beta_edges[1:])
        for s_hi, s_lo in zip(s_edges[:-1], s_edges[1:])
    ]
    return f, rects


def double_scatter_return(
    t: float,
    geom: DetectorGeometry,
    medium: MediumModel,
    mode: PhaseApproximationMode = "exact",
    qcfg: Optional[QuadratureConfig] = None,
) -> DoubleScatterResult:
    """``I21(t) = 2π² rho0² ∫∫_D0 integrand dz1 dz2`` by adaptive cubature.

    Args:
        t: Return time, positive and finite.
        geom: Detector geometry.
        medium: Scattering medium.
        mode: Phase approximation for the first phase factor.
        qcfg: Tolerances; defaults to :class:`QuadratureConfig()`.

    Returns:
        Value, a posteriori error estimate and the number of subdivisions.
        Exactly 0 with ``empty=True`` when D0 is empty (``t <= 2 rho0/eps``).

    Raises:
        ConvergenceError: If the tolerance is not met within the cap.
    """
    if not (math.isfinite(t) and t > 0.0):
        raise DomainError(f"return time must be positive, got {t}")
    _check_mode(mode)
    qcfg = qcfg or QuadratureConfig()

    if geom.epsilon * t <= 2.0 * geom.rho0:
        return DoubleScatterResult(0.0, 0.0, 0, empty=True)
    if medium.sigma_max() == 0.0:
        return DoubleScatterResult(0.0, 0.0, 0)

    scale = 2.0 * math.pi**2 * geom.rho0**2
    build = _corner_problem if qcfg.corner_substitution else _graded_problem
    f, rects = build(t, geom, medium, mode, scale)
    res = adaptive_integrate(
        f,
        rects,
        rel_tol=qcfg.rel_tol,
        abs_tol=qcfg.abs_tol,
        max_subdivisions=qcfg.max_subdivisions,
        order=qcfg.order,
    )
    logger.debug("t=%g: I21=%.6g ± %.2g (%d subdivisions)", t, res.value, res.error, res.subdivisions)
    return DoubleScatterResult(max(res.value, 0.0), res.error, res.subdivisions)


# ------------------------------------------------------------
# Bounds on the neglected terms
# ------------------------------------------------------------

def i22_bound(t: float, geom: DetectorGeometry, medium: MediumModel) -> float:
    """``8π² σmax² rho0³ eps / t²``."""
    if not t > 0.0:
        raise DomainError(f"return time must be positive, got {t}")
    smax = medium.sigma_max()
    return 8.0 * math.pi**2 * smax * smax * geom.rho0**3 * geom.epsilon / (t * t)


def i23_bound(t: float, geom: DetectorGeometry, medium: MediumModel) -> float:
    """``16π² σmax² rho0³ eps (2 + π + ln(eps t / 2 rho0)) / t²``.

    Raises:
        DomainError: If ``eps * t <= 2 rho0``.
    """
    ratio = geom.epsilon * t / (2.0 * geom.rho0)
    if not ratio > 1.0:
        raise DomainError(f"I23 bound needs eps*t > 2*rho0, got eps*t/(2 rho0) = {ratio:g}")
    smax = medium.sigma_max()
    return (
        16.0 * math.pi**2 * smax * smax * geom.rho0**3 * geom.epsilon
        * (2.0 + math.pi + math.log(ratio)) / (t * t)
    )
