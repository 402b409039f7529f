"""medium.py

Stratified scattering medium: extinction profile, differential scattering
cross-section and closed-form optical depths.

Every profile is piecewise linear in height, so optical depths (and their
inverses, needed by free-path sampling) are exact trapezoid expressions.
Heights below ``z = 0`` are vacuum.

Usage::

    from lidarkit.medium import MediumModel

    medium = MediumModel.homogeneous(sigma_t=0.1, scattering=0.05)
    medium.optical_depth(0.0, 10.0)      # 1.0
    medium.sigma_scatter(-1.0, 5.0)      # 0.05 / (4 pi)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError, NoScatterError

FOUR_PI = 4.0 * math.pi

Shape = Literal["isotropic", "rayleigh", "henyey_greenstein"]
MediumKind = Literal["homogeneous", "tabulated", "layer"]

# How the first phase-function factor of the double-scatter integrand is
# evaluated (see double_scatter.double_scatter_integrand).
PhaseApproximationMode = Literal["exact", "backscatter", "half_aperture"]
PHASE_MODES: Tuple[str, ...] = ("exact", "backscatter", "half_aperture")


# ------------------------------------------------------------
# Small array helpers
# ------------------------------------------------------------

def _readonly(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _scalar_or_array(x: NDArray[np.float64]) -> Union[float, NDArray[np.float64]]:
    """Return a plain float for 0-d results, the array otherwise."""
    return float(x) if np.ndim(x) == 0 else x


def _require_finite(x: NDArray[np.float64], name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite, got {x!r}")


def _segment_offset(
    v0: NDArray[np.float64],
    slope: NDArray[np.float64],
    r: NDArray[np.float64],
    width: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Solve ``v0*d + slope*d**2/2 = r`` for ``d`` in ``[0, width]``.

    The rationalised root ``2r / (v0 + sqrt(v0**2 + 2*slope*r))`` stays
    accurate for vanishing slopes.
    """
    disc = np.maximum(v0 * v0 + 2.0 * slope * r, 0.0)
    denom = v0 + np.sqrt(disc)
    safe = denom > 0.0
    d = np.divide(2.0 * r, denom, out=np.zeros_like(denom), where=safe)
    return np.clip(d, 0.0, width)


# ------------------------------------------------------------
# Piecewise-linear profile
# ------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseLinearProfile:
    """Non-negative piecewise-linear function of height.

    Attributes:
        z: Node heights.  Must start at 0 and be non-decreasing; a repeated
            node encodes a jump (the profile takes the later value from that
            height on).
        values: Node values, same length as *z*.

    The last value is held beyond the last node, and the profile is 0 for
    ``z < 0``.  Instances are immutable and safe to share between workers.
    """

    z: NDArray[np.float64]
    values: NDArray[np.float64]
    _slope: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    _cum: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if z.size == 0 or z.size != v.size:
            raise DomainError("profile needs matching, non-empty z and value lists")
        _require_finite(z, "profile heights")
        _require_finite(v, "profile values")
        if z[0] != 0.0:
            raise DomainError(f"profile must start at z = 0, got {z[0]}")
        widths = np.diff(z)
        if np.any(widths < 0.0):
            raise DomainError("profile heights must be non-decreasing")
        if np.any(v < 0.0):
            raise DomainError("profile values must be non-negative")

        slope = np.divide(np.diff(v), widths, out=np.zeros_like(widths), where=widths > 0.0)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * widths)))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "values", _readonly(v))
        # trailing zero slope is the held tail
        object.__setattr__(self, "_slope", _readonly(np.append(slope, 0.0)))
        object.__setattr__(self, "_cum", _readonly(cum))

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinearProfile":
        return cls(np.array([0.0]), np.array([value]))

    @classmethod
    def slab(cls, value: float, thickness: float) -> "PiecewiseLinearProfile":
        """*value* on ``[0, thickness)``, 0 from *thickness* on."""
        if not thickness > 0.0:
            raise DomainError(f"layer thickness must be positive, got {thickness}")
        return cls(np.array([0.0, thickness, thickness]), np.array([value, value, 0.0]))

    def scaled(self, factor: float) -> "PiecewiseLinearProfile":
        return PiecewiseLinearProfile(self.z, self.values * factor)

    def _locate(self, z: NDArray[np.float64]) -> NDArray[np.intp]:
        k = np.searchsorted(self.z, z, side="right") - 1
        return np.clip(k, 0, self.z.size - 1)

    def value(self, z: ArrayLike) -> NDArray[np.float64]:
        z = np.asarray(z, dtype=float)
        zc = np.maximum(z, 0.0)
        k = self._locate(zc)
        out = self.values[k] + self._slope[k] * (zc - self.z[k])
        return np.where(z < 0.0, 0.0, out)

    def integral(self, z: ArrayLike) -> NDArray[np.float64]:
        """Cumulative integral from 0 to *z* (0 for ``z <= 0``)."""
        zc = np.maximum(np.asarray(z, dtype=float), 0.0)
        k = self._locate(zc)
        dz = zc - self.z[k]
        return self._cum[k] + dz * (self.values[k] + 0.5 * self._slope[k] * dz)

    def height_at_integral(
        self, target: ArrayLike, side: Literal["left", "right"] = "left"
    ) -> NDArray[np.float64]:
        """Invert :meth:`integral` in closed form.

        ``side="left"`` returns the lowest height whose cumulative integral
        reaches *target* (a photon travelling down meets it first);
        ``side="right"`` the highest height whose integral does not exceed it
        (first met travelling up).  Returns ``inf`` when the target is never
        reached because the held tail is zero.
        """
        c = np.asarray(target, dtype=float)
        n = self.z.size
        idx = np.searchsorted(self._cum, c, side=side)
        k = np.clip(idx - 1, 0, n - 1)
        r = c - self._cum[k]
        width = np.append(np.diff(self.z), np.inf)[k]
        d = _segment_offset(self.values[k], self._slope[k], r, width)
        out = self.z[k] + d
        unreachable = (idx >= n) & (self.values[-1] <= 0.0) & (r > 0.0)
        return np.where(unreachable, np.inf, out)

    def maximum(self) -> float:
        return float(self.values.max())


# ------------------------------------------------------------
# Phase models
# ------------------------------------------------------------

@dataclass(frozen=True)
class SeparablePhase:
    """``sigma(mu, z) = s(z) * p(mu)`` with an analytic angular shape.

    ``p`` integrates to 1 over the sphere, so ``s`` is the scattering
    coefficient ``∫sigma dΩ``.
    """

    scattering: PiecewiseLinearProfile
    shape: Shape = "isotropic"
    g: float = 0.0

    def __post_init__(self) -> None:
        if self.shape not in ("isotropic", "rayleigh", "henyey_greenstein"):
            raise DomainError(f"unknown phase shape {self.shape!r}")
        if not -1.0 < self.g < 1.0:
            raise DomainError(f"asymmetry parameter must lie in (-1, 1), got {self.g}")

    def angular(self, mu: ArrayLike) -> NDArray[np.float64]:
        mu = np.asarray(mu, dtype=float)
        if self.shape == "isotropic":
            return np.full_like(mu, 1.0 / FOUR_PI)
        if self.shape == "rayleigh":
            return 3.0 / (4.0 * FOUR_PI) * (1.0 + mu * mu)
        g = self.g
        denom = 1.0 + g * g - 2.0 * g * mu
        return (1.0 - g * g) / (FOUR_PI * denom * np.sqrt(denom))

    def angular_maximum(self) -> float:
        if self.shape == "isotropic":
            return 1.0 / FOUR_PI
        if self.shape == "rayleigh":
            return 3.0 / (2.0 * FOUR_PI)
        a = abs(self.g)
        return (1.0 + a) / (FOUR_PI * (1.0 - a) ** 2)

    def evaluate(self, mu: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
        return self.scattering.value(z) * self.angular(mu)

    def maximum(self) -> float:
        return self.scattering.maximum() * self.angular_maximum()

    def scaled(self, factor: float) -> "SeparablePhase":
        return SeparablePhase(self.scattering.scaled(factor), self.shape, self.g)

    def sample_cosine(self, z: ArrayLike, rng: np.random.Generator) -> NDArray[np.float64]:
        """Draw scattering-angle cosines at heights *z* (one draw per height)."""
        u = rng.random(np.shape(z))
        if self.shape == "isotropic" or (self.shape == "henyey_greenstein" and abs(self.g) < 1e-6):
            return 2.0 * u - 1.0
        if self.shape == "rayleigh":
            # cubic CDF (mu**3 + 3 mu + 4) / 8 inverted with Cardano
            q = 2.0 * (2.0 * u - 1.0)
            a = np.cbrt(q + np.sqrt(q * q + 1.0))
            return np.clip(a - 1.0 / a, -1.0, 1.0)
        g = self.g
        frac = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
        return np.clip((1.0 + g * g - frac * frac) / (2.0 * g), -1.0, 1.0)


@dataclass(frozen=True)
class TabulatedPhase:
    """Differential cross-section tabulated on a ``(mu, z)`` grid.

    Attributes:
        mu: Cosine nodes, strictly increasing from -1 to 1.
        z: Height nodes, strictly increasing from 0.
        table: ``len(mu) x len(z)`` matrix of ``sigma`` values
            (inverse length per steradian).

    Values are bilinear between nodes; the last column is held above the
    last height node.
    """

    mu: NDArray[np.float64]
    z: NDArray[np.float64]
    table: NDArray[np.float64]
    scattering: PiecewiseLinearProfile = field(init=False, repr=False, compare=False)
    _cdf: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        table = np.asarray(self.table, dtype=float)
        if mu.size < 2 or mu[0] != -1.0 or mu[-1] != 1.0 or np.any(np.diff(mu) <= 0.0):
            raise DomainError("phase table cosines must increase strictly from -1 to 1")
        if z.size < 1 or z[0] != 0.0 or np.any(np.diff(z) <= 0.0):
            raise DomainError("phase table heights must increase strictly from 0")
        if table.shape != (mu.size, z.size):
            raise DomainError(
                f"phase table has shape {table.shape}, expected {(mu.size, z.size)}"
            )
        _require_finite(table, "phase table")
        if np.any(table < 0.0):
            raise DomainError("phase table values must be non-negative")

        dmu = np.diff(mu)[:, None]
        cdf = np.vstack([np.zeros((1, z.size)), np.cumsum(0.5 * (table[1:] + table[:-1]) * dmu, axis=0)])
        object.__setattr__(self, "mu", _readonly(mu))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "table", _readonly(table))
        object.__setattr__(self, "_cdf", _readonly(cdf))
        object.__setattr__(self, "scattering", PiecewiseLinearProfile(z, 2.0 * math.pi * cdf[-1]))

    def _height_weights(self, z: NDArray[np.float64]) -> Tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.float64]]:
        zc = np.maximum(z, 0.0)
        n = self.z.size
        k = np.clip(np.searchsorted(self.z, zc, side="right") - 1, 0, n - 1)
        k2 = np.minimum(k + 1, n - 1)
        span = self.z[k2] - self.z[k]
        w = np.divide(zc - self.z[k], span, out=np.zeros_like(zc), where=span > 0.0)
        return k, k2, w

    def evaluate(self, mu: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
        mu, z = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(z, dtype=float))
        i = np.clip(np.searchsorted(self.mu, mu, side="right") - 1, 0, self.mu.size - 2)
        fm = (mu - self.mu[i]) / (self.mu[i + 1] - self.mu[i])
        k, k2, w = self._height_weights(z)
        left = (1.0 - fm) * self.table[i, k] + fm * self.table[i + 1, k]
        right = (1.0 - fm) * self.table[i, k2] + fm * self.table[i + 1, k2]
        return np.where(z < 0.0, 0.0, (1.0 - w) * left + w * right)

    def maximum(self) -> float:
        return float(self.table.max())

    def scaled(self, factor: float) -> "TabulatedPhase":
        return TabulatedPhase(self.mu, self.z, self.table * factor)

    def sample_cosine(self, z: ArrayLike, rng: np.random.Generator) -> NDArray[np.float64]:
        """Draw cosines from the height-interpolated table.

        The density at *z* is a two-column mixture; a column is picked with
        its weight and the cosine is drawn by inverting that column's
        piecewise-quadratic CDF, which samples the interpolated density
        exactly.
        """
        z = np.asarray(z, dtype=float)
        k, k2, w = self._height_weights(z)
        totals = self._cdf[-1]
        lower = (1.0 - w) * totals[k]
        upper = w * totals[k2]
        u_band = rng.random(z.shape)
        u_mu = rng.random(z.shape)
        column = np.where(u_band * (lower + upper) < upper, k2, k)

        out = np.empty(z.shape)
        for j in np.unique(column):
            sel = column == j
            target = u_mu[sel] * totals[j]
            idx = np.searchsorted(self._cdf[:, j], target, side="left")
            seg = np.clip(idx - 1, 0, self.mu.size - 2)
            width = self.mu[seg + 1] - self.mu[seg]
            v0 = self.table[seg, j]
            slope = (self.table[seg + 1, j] - v0) / width
            out[sel] = self.mu[seg] + _segment_offset(v0, slope, target - self._cdf[seg, j], width)
        return np.clip(out, -1.0, 1.0)


PhaseModel = Union[SeparablePhase, TabulatedPhase]


# ------------------------------------------------------------
# Medium
# ------------------------------------------------------------

@dataclass(frozen=True)
class MediumModel:
    """Extinction profile plus differential scattering cross-section.

    Immutable after construction; safe for unsynchronised shared reads.
    """

    extinction: PiecewiseLinearProfile
    phase: PhaseModel
    kind: MediumKind = "tabulated"

    def __post_init__(self) -> None:
        ext, sca = self.extinction, self.phase.scattering
        nodes = np.union1d(ext.z, sca.z)
        # right limits at every node, left limits just below the positive ones
        below = np.nextafter(nodes[nodes > 0.0], -np.inf)
        heights = np.concatenate((nodes, below))
        excess = sca.value(heights) - ext.value(heights)
        tol = 1e-12 * np.maximum(ext.value(heights), 1.0)
        bad = excess > tol
        if np.any(bad):
            z_bad = float(heights[bad][0])
            raise DomainError(
                f"extinction must cover scattering: sigma_t < ∫sigma dΩ at z = {z_bad:g}"
            )

    # --------------------------------------------------------

    @classmethod
    def homogeneous(
        cls, sigma_t: float, scattering: float, shape: Shape = "isotropic", g: float = 0.0
    ) -> "MediumModel":
        """Half-space with constant extinction and scattering coefficient."""
        phase = SeparablePhase(PiecewiseLinearProfile.constant(scattering), shape, g)
        return cls(PiecewiseLinearProfile.constant(sigma_t), phase, "homogeneous")

    @classmethod
    def layer(
        cls,
        sigma_t: float,
        scattering: float,
        thickness: float,
        shape: Shape = "isotropic",
        g: float = 0.0,
    ) -> "MediumModel":
        """Homogeneous layer on ``[0, thickness)`` above empty space."""
        phase = SeparablePhase(PiecewiseLinearProfile.slab(scattering, thickness), shape, g)
        return cls(PiecewiseLinearProfile.slab(sigma_t, thickness), phase, "layer")

    @classmethod
    def tabulated(
        cls, z: Sequence[float], sigma_t: Sequence[float], phase: PhaseModel
    ) -> "MediumModel":
        return cls(PiecewiseLinearProfile(np.asarray(z), np.asarray(sigma_t)), phase, "tabulated")

    def scaled(self, factor: float) -> "MediumModel":
        """Scale extinction and scattering together by *factor*."""
        if not factor >= 0.0:
            raise DomainError(f"scale factor must be non-negative, got {factor}")
        return MediumModel(self.extinction.scaled(factor), self.phase.scaled(factor), self.kind)

    # --------------------------------------------------------

    def sigma_t(self, z: ArrayLike) -> Union[float, NDArray[np.float64]]:
        """Extinction coefficient at height *z* (0 above the medium)."""
        z = np.asarray(z, dtype=float)
        _require_finite(z, "z")
        return _scalar_or_array(self.extinction.value(z))

    def sigma_scatter(self, mu: ArrayLike, z: ArrayLike) -> Union[float, NDArray[np.float64]]:
        """Differential scattering cross-section ``sigma(mu, z)``."""
        mu = np.asarray(mu, dtype=float)
        z = np.asarray(z, dtype=float)
        _require_finite(z, "z")
        if not np.all(np.abs(mu) <= 1.0):
            raise DomainError(f"scattering cosine must lie in [-1, 1], got {mu!r}")
        return _scalar_or_array(self.phase.evaluate(mu, z))

    def scattering_coefficient(self, z: ArrayLike) -> Union[float, NDArray[np.float64]]:
        """``∫sigma(mu, z) dΩ`` at height *z*."""
        z = np.asarray(z, dtype=float)
        _require_finite(z, "z")
        return _scalar_or_array(self.phase.scattering.value(z))

    def optical_depth(self, z_a: ArrayLike, z_b: ArrayLike) -> Union[float, NDArray[np.float64]]:
        """Unsigned ``∫ sigma_t dz`` between two heights, in closed form."""
        a = np.asarray(z_a, dtype=float)
        b = np.asarray(z_b, dtype=float)
        _require_finite(a, "z_a")
        _require_finite(b, "z_b")
        return _scalar_or_array(np.abs(self.extinction.integral(b) - self.extinction.integral(a)))

    def sigma_max(self) -> float:
        """Global maximum of ``sigma(mu, z)`` over cosines and profile nodes."""
        return self.phase.maximum()

    def sample_cosine(self, z: ArrayLike, rng: np.random.Generator) -> NDArray[np.float64]:
        """Scattering cosines at heights *z*; every height must scatter."""
        z = np.asarray(z, dtype=float)
        if np.any(self.phase.scattering.value(z) <= 0.0):
            raise NoScatterError("no scattering at the requested height")
        return self.phase.sample_cosine(z, rng)
