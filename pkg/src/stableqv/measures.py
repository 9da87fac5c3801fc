"""Directional measures on the unit sphere and stable-process specifications.

A symmetric finite measure H on the unit sphere S_d is the angular part of
the Levy measure of a symmetric beta-stable process in polar form: the
radial density is rho^-(1+beta) and H carries the directions.  Two variants
are supported: a finite list of weighted atoms (auto-symmetrized at
construction) and a uniform density on the sphere.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMeasureError, InvalidDirectionError

# Directions closer than this (after normalization) are merged as duplicates.
_MERGE_TOL = 1e-12


def sphere_surface_area(d: int) -> float:
    """Surface area of the unit sphere S_d embedded in R^d (d=2: 2*pi)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass
class DirectionalMeasure:
    """Finite symmetric measure on the unit sphere of R^d.

    Exactly one of the two variants is populated:

    * atomic   -- ``directions`` is an (n, d) array of unit vectors and
      ``weights`` the matching positive masses; the atom set is closed
      under negation with equal weights.
    * uniform  -- constant density ``density`` with respect to surface
      measure on the sphere.

    Instances are immutable after construction and safe to share.
    """

    d: int
    directions: np.ndarray | None = None
    weights: np.ndarray | None = None
    density: float | None = None
    _cum_probs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise InvalidDirectionError(f"dimension must be >= 1, got {self.d}")
        if self.is_atomic:
            self.directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(self.weights <= 0):
                raise InvalidDirectionError("all atom weights must be strictly positive")
            self.directions.setflags(write=False)
            self.weights.setflags(write=False)
            self._cum_probs = np.cumsum(self.weights) / np.sum(self.weights)
        else:
            if self.density is None or self.density <= 0:
                raise InvalidDirectionError("uniform density must be strictly positive")

    @property
    def is_atomic(self) -> bool:
        return self.directions is not None

    def total_mass(self) -> float:
        """H(S_d): sum of atom weights, or density times sphere area."""
        if self.is_atomic:
            return float(np.sum(self.weights))
        return self.density * sphere_surface_area(self.d)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n directions distributed as H / H(S_d); returns (n, d)."""
        if self.is_atomic:
            idx = np.searchsorted(self._cum_probs, rng.random(n), side="right")
            idx = np.minimum(idx, len(self.weights) - 1)
            return self.directions[idx]
        g = rng.standard_normal((n, self.d))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def spans_rd(self) -> bool:
        """True iff the support of H spans R^d.

        Atomic: rank of the direction matrix, counting singular values
        above 1e-10 times the largest.  Uniform: always true.
        """
        if not self.is_atomic:
            return True
        sv = np.linalg.svd(self.directions, compute_uv=False)
        if sv[0] == 0.0:
            return False
        return int(np.sum(sv > 1e-10 * sv[0])) == self.d

    def to_dict(self) -> dict:
        if self.is_atomic:
            return {
                "type": "atomic",
                "atoms": [
                    {"dir": [float(x) for x in th], "w": float(w)}
                    for th, w in zip(self.directions, self.weights)
                ],
            }
        return {"type": "uniform", "d": self.d, "a": float(self.density)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def measure_from_dict(spec: dict) -> DirectionalMeasure:
    """Rebuild a measure from its dict form; inverse of ``to_dict``."""
    kind = spec.get("type")
    if kind == "atomic":
        atoms = spec["atoms"]
        if not atoms:
            raise EmptyMeasureError("atomic measure needs at least one atom")
        dirs = np.array([a["dir"] for a in atoms], dtype=float)
        w = np.array([a["w"] for a in atoms], dtype=float)
        return DirectionalMeasure(d=dirs.shape[1], directions=dirs, weights=w)
    if kind == "uniform":
        return DirectionalMeasure(d=int(spec["d"]), density=float(spec["a"]))
    raise InvalidDirectionError(f"unknown measure type {kind!r}")


def measure_from_json(text: str) -> DirectionalMeasure:
    return measure_from_dict(json.loads(text))


def make_atomic_H(pairs) -> DirectionalMeasure:
    """Build a symmetric atomic measure from (vector, weight) pairs.

    Vectors are normalized to unit length; duplicate directions are merged
    by summing weights; for every atom the mirrored atom -theta is ensured:
    copied with the same weight if absent, averaged with it if both members
    of a mirror pair were given with unequal weights (H is assumed
    symmetric, so conflicting input is reconciled rather than rejected).
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyMeasureError("cannot build a measure from an empty atom list")
    d = None
    dirs: list[np.ndarray] = []
    weights: list[float] = []
    for vec, w in pairs:
        v = np.asarray(vec, dtype=float)
        if v.ndim != 1:
            raise InvalidDirectionError("directions must be 1-d vectors")
        if d is None:
            d = v.shape[0]
        elif v.shape[0] != d:
            raise InvalidDirectionError("all directions must share one dimension")
        norm = np.linalg.norm(v)
        if norm == 0.0 or not np.isfinite(norm):
            raise InvalidDirectionError(f"direction {vec!r} is zero or non-finite")
        if w <= 0:
            raise InvalidDirectionError(f"weight {w!r} is not strictly positive")
        v = v / norm
        # merge with an existing duplicate, else append
        for i, u in enumerate(dirs):
            if np.linalg.norm(u - v) <= _MERGE_TOL:
                weights[i] += float(w)
                break
        else:
            dirs.append(v)
            weights.append(float(w))
    # symmetrize: pair each atom with its mirror
    out_dirs: list[np.ndarray] = []
    out_w: list[float] = []
    used = [False] * len(dirs)
    for i, u in enumerate(dirs):
        if used[i]:
            continue
        used[i] = True
        mirror = None
        for j in range(i + 1, len(dirs)):
            if not used[j] and np.linalg.norm(dirs[j] + u) <= _MERGE_TOL:
                mirror = j
                used[j] = True
                break
        w = weights[i] if mirror is None else 0.5 * (weights[i] + weights[mirror])
        out_dirs.extend([u, -u])
        out_w.extend([w, w])
    return DirectionalMeasure(
        d=d, directions=np.array(out_dirs), weights=np.array(out_w)
    )


def uniform_H(d: int, a: float = 1.0) -> DirectionalMeasure:
    """Uniform measure with density a on the unit sphere of R^d."""
    return DirectionalMeasure(d=d, density=a)


# module-level wrappers matching the operation names used elsewhere
def total_mass(H: DirectionalMeasure) -> float:
    return H.total_mass()


def sample_direction(H: DirectionalMeasure, rng: np.random.Generator, n: int = 1):
    """One direction (default) or an (n, d) batch drawn from H / H(S_d)."""
    out = H.sample(n, rng)
    return out[0] if n == 1 else out


def span_check(H: DirectionalMeasure) -> bool:
    return H.spans_rd()


@dataclass
class StableLevySpec:
    """Full law of a symmetric beta-stable Levy process: (d, beta, H).

    The Levy measure is rho^-(1+beta) d rho H(d theta) in polar
    coordinates, with Levy triplet (0, 0, G).
    """

    beta: float
    H: DirectionalMeasure

    def __post_init__(self):
        if not (0.0 < self.beta < 2.0):
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")

    @property
    def d(self) -> int:
        return self.H.d

    def tail_mass(self, u: float) -> float:
        """G({x : ||x|| > u}) = H(S_d) u^-beta / beta."""
        return self.H.total_mass() * u ** (-self.beta) / self.beta

    def to_dict(self) -> dict:
        return {"beta": self.beta, "H": self.H.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def spec_from_dict(spec: dict) -> StableLevySpec:
    return StableLevySpec(beta=float(spec["beta"]), H=measure_from_dict(spec["H"]))


def iid_H(d: int, a: float = 1.0) -> DirectionalMeasure:
    """Atoms +-e_i with weight a each: the i.i.d.-components case."""
    eye = np.eye(d)
    return make_atomic_H([(eye[i], a) for i in range(d)])
