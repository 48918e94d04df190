# Copyright 2026 The cma_lab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Moduli of continuity as concave piecewise-linear polylines.

Pair statistics over grid nodes go through `node_pairs`, which is shared
with the regularity checks so that every "for all pairs" estimate sees the
same deterministic sample.
"""

import dataclasses
import functools
from typing import Optional, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from cma_lab.grid import GridDomain, ScalarField

_CONCAVITY_TOL = 1e-9
_HULL_MERGE_TOL = 1e-12
_PAIR_CHUNK = 1024


@dataclasses.dataclass(frozen=True, eq=False)
class ModulusOfContinuity:
  """Breakpoints (r_k, omega_k) from (0, 0); constant past the last one."""

  radii: np.ndarray
  values: np.ndarray

  def __post_init__(self):
    radii = np.asarray(self.radii, dtype=np.float64)
    values = np.asarray(self.values, dtype=np.float64)
    if radii.ndim != 1 or radii.shape != values.shape or len(radii) < 2:
      raise ValueError("a modulus needs at least two matching breakpoints")
    if radii[0] != 0.0 or values[0] != 0.0:
      raise ValueError("a modulus must start at (0, 0)")
    if np.any(np.diff(radii) <= 0):
      raise ValueError("breakpoint radii must be strictly increasing")
    scale = max(1.0, float(np.max(np.abs(values))))
    if np.any(np.diff(values) < -_CONCAVITY_TOL * scale):
      raise ValueError("a modulus must be nondecreasing")
    slopes = np.diff(values) / np.diff(radii)
    slope_scale = max(1.0, float(np.max(np.abs(slopes))))
    if np.any(np.diff(slopes) > _CONCAVITY_TOL * slope_scale):
      raise ValueError("a modulus must be concave")
    object.__setattr__(self, "radii", radii)
    object.__setattr__(self, "values", values)

  @classmethod
  def identity(cls, r_max: float = 10.0):
    return cls(np.array([0.0, r_max]), np.array([0.0, r_max]))

  def __call__(self, r):
    return np.interp(np.asarray(r, dtype=np.float64), self.radii, self.values)

  def evaluate(self, r: float) -> float:
    if r < 0:
      raise ValueError(f"modulus argument must be >= 0, got {r}")
    return float(self(r))

  def scaled(self, factor: float):
    return ModulusOfContinuity(self.radii, factor * self.values)

  def to_csv(self, path: str):
    np.savetxt(
        path,
        np.column_stack([self.radii, self.values]),
        delimiter=",",
        fmt="%.17g",
        header="r,omega",
        comments="",
    )


def holder_modulus(
    epsilon: float, r_min: float = 1e-3, r_max: float = 10.0, points: int = 64
) -> ModulusOfContinuity:
  """t^epsilon sampled on a geometric radius grid."""
  if not 0.0 < epsilon <= 1.0:
    raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
  if epsilon == 1.0:
    return ModulusOfContinuity.identity(r_max)
  radii = np.concatenate([[0.0], np.geomspace(r_min, r_max, points)])
  return ModulusOfContinuity(radii, radii**epsilon)


@dataclasses.dataclass(frozen=True, eq=False)
class PairSample:
  """Node pairs (nodes[first[k]], nodes[second[k]]) with index distances."""

  domain: GridDomain
  nodes: np.ndarray
  first: np.ndarray
  second: np.ndarray
  index_dist_sq: np.ndarray

  def __len__(self):
    return len(self.first)

  @functools.cached_property
  def distances(self) -> np.ndarray:
    return self.domain.h * np.sqrt(self.index_dist_sq.astype(np.float64))

  def differences(self, field: ScalarField) -> np.ndarray:
    """|v(x) - v(y)| per pair."""
    values = np.asarray(field.values)[tuple(self.nodes.T)]
    return np.abs(values[self.first] - values[self.second])

  def signed_differences(self, field: ScalarField) -> np.ndarray:
    """v(y) - v(x) per pair, both orders."""
    values = np.asarray(field.values)[tuple(self.nodes.T)]
    forward = values[self.second] - values[self.first]
    return np.concatenate([forward, -forward])


def _all_pairs(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
  count = len(points)
  first, second = [], []
  for start in range(0, count, _PAIR_CHUNK):
    rows = np.arange(start, min(start + _PAIR_CHUNK, count))
    a, b = np.meshgrid(rows, np.arange(count), indexing="ij")
    keep = b > a
    first.append(a[keep])
    second.append(b[keep])
  if not first:
    return np.zeros(0, np.int64), np.zeros(0, np.int64)
  return np.concatenate(first), np.concatenate(second)


def node_pairs(
    domain: GridDomain,
    mask=None,
    budget: int = 10_000,
    seed: int = 0,
    exhaustive_limit: int = 3000,
) -> PairSample:
  """Deterministic pair sample over the nodes selected by `mask`.

  Node sets up to `exhaustive_limit` use every pair. Larger sets use every
  pair of a coarsened sub-lattice plus `budget` pseudo-random pairs drawn
  from `jax.random.PRNGKey(seed)`.
  """
  mask = domain.inside_mask if mask is None else mask
  nodes = np.argwhere(np.asarray(mask))
  if len(nodes) <= exhaustive_limit:
    first, second = _all_pairs(nodes)
  else:
    stride = 2
    while True:
      coarse = np.flatnonzero(np.all(nodes % stride == 0, axis=1))
      if len(coarse) <= exhaustive_limit:
        break
      stride += 1
    a, b = _all_pairs(nodes[coarse])
    key_a, key_b = jax.random.split(jax.random.PRNGKey(seed))
    rand_a = np.asarray(jax.random.randint(key_a, (budget,), 0, len(nodes)))
    rand_b = np.asarray(jax.random.randint(key_b, (budget,), 0, len(nodes)))
    distinct = rand_a != rand_b
    first = np.concatenate([coarse[a], rand_a[distinct]])
    second = np.concatenate([coarse[b], rand_b[distinct]])
  diff = nodes[first] - nodes[second]
  return PairSample(domain, nodes, first, second, np.sum(diff * diff, axis=1))


def _oscillation(field: ScalarField, pairs: PairSample) -> float:
  values = np.asarray(field.values)[tuple(pairs.nodes.T)]
  if len(values) == 0:
    return 0.0
  return float(np.max(values) - np.min(values))


def empirical_modulus(
    rho: ScalarField,
    r_grid=None,
    pairs: Optional[PairSample] = None,
    budget: int = 10_000,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
  """Samples of sup{|rho(x) - rho(y)| : |x - y| <= r} over closed-domain nodes.

  Without `r_grid` the radii are every distinct pair distance. Radii at or
  beyond the largest pair distance get the global oscillation.
  """
  if pairs is None:
    pairs = node_pairs(
        rho.domain, rho.domain.inside_mask & rho.mask, budget, seed
    )
  order = np.argsort(pairs.index_dist_sq, kind="stable")
  dist_sq = pairs.index_dist_sq[order]
  running = np.maximum.accumulate(pairs.differences(rho)[order])
  if r_grid is None:
    unique_sq, last = np.unique(dist_sq[::-1], return_index=True)
    last = len(dist_sq) - 1 - last
    radii = rho.domain.h * np.sqrt(unique_sq.astype(np.float64))
    return radii, running[last]

  radii = np.asarray(r_grid, dtype=np.float64)
  if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
    raise ValueError("r_grid must be positive and increasing")
  distances = rho.domain.h * np.sqrt(dist_sq.astype(np.float64))
  count = np.searchsorted(distances, radii * (1 + 1e-12), side="right")
  samples = np.where(count > 0, running[np.maximum(count - 1, 0)], 0.0)
  if len(distances):
    samples = np.where(radii >= distances[-1], _oscillation(rho, pairs), samples)
  return radii, samples


def least_concave_majorant(radii, samples) -> ModulusOfContinuity:
  """Upper concave hull of the samples together with (0, 0)."""
  radii = np.asarray(radii, dtype=np.float64)
  samples = np.asarray(samples, dtype=np.float64)
  if np.any(samples < 0):
    raise ValueError("modulus samples must be nonnegative")
  if np.any(radii < 0):
    raise ValueError("modulus radii must be nonnegative")
  points = sorted(
      {(0.0, 0.0)}
      | {(float(r), float(s)) for r, s in zip(radii, samples) if r > 0}
  )
  scale = max(1.0, max(abs(p[1]) for p in points), max(p[0] for p in points))
  hull = []
  for p in points:
    if hull and hull[-1][0] == p[0]:
      if p[1] <= hull[-1][1]:
        continue
      hull.pop()
    while len(hull) >= 2:
      (x0, y0), (x1, y1) = hull[-2], hull[-1]
      cross = (x1 - x0) * (p[1] - y0) - (y1 - y0) * (p[0] - x0)
      if cross >= -_HULL_MERGE_TOL * scale * scale:
        hull.pop()
      else:
        break
    hull.append(p)
  hull = np.asarray(hull)
  if len(hull) == 1:
    hull = np.array([[0.0, 0.0], [1.0, 0.0]])
  top = int(np.argmax(hull[:, 1]))
  hull = hull[: max(top, 1) + 1]
  return ModulusOfContinuity(hull[:, 0], hull[:, 1])


def comega_membership(
    psi: ScalarField,
    omega: ModulusOfContinuity,
    budget: int = 10_000,
    c_max: float = float("inf"),
    seed: int = 0,
    pairs: Optional[PairSample] = None,
) -> Tuple[bool, float]:
  """Least sampled C with |psi(x) - psi(y)| <= C omega(|x - y|)."""
  if pairs is None:
    pairs = node_pairs(
        psi.domain, psi.domain.inside_mask & psi.mask, budget, seed
    )
  if len(pairs) == 0:
    return True, 0.0
  denom = omega(pairs.distances)
  if np.any(denom <= 0):
    raise ValueError("omega must be positive at every sampled distance")
  C = float(np.max(pairs.differences(psi) / denom))
  return C <= c_max, C


def pair_ratio_max(
    differences: np.ndarray, distances: np.ndarray, omega: ModulusOfContinuity
) -> float:
  """max of differences / omega(distances) over pairs with positive distance."""
  keep = distances > 0
  if not keep.any():
    return 0.0
  return float(np.max(differences[keep] / omega(distances[keep])))


def fit_log_profile(radii, maxima) -> Tuple[float, float, float]:
  """Least squares log M = a + e log r; returns (e, a, residual).

  The residual is the largest absolute deviation of log M from the line.
  Needs more points than the two fitted parameters.
  """
  radii = jnp.asarray(radii, dtype=jnp.float64)
  if radii.shape[0] < 3:
    raise ValueError(
        f"need at least 3 points to fit a line, got {radii.shape[0]}"
    )
  log_m = jnp.log(jnp.maximum(jnp.asarray(maxima, dtype=jnp.float64), 1e-30))
  design = jnp.stack([jnp.ones_like(radii), jnp.log(radii)], axis=1)
  coef, _, _, _ = jnp.linalg.lstsq(design, log_m)
  residual = float(jnp.max(jnp.abs(design @ coef - log_m)))
  return float(coef[1]), float(coef[0]), residual
