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

"""Uniform lattices over R^{2n} = C^n, node classification, scalar fields.

Coordinates are ordered (x1, y1, ..., xn, yn) with z_j = x_j + i y_j. Fields
are dense arrays over the bounding-box lattice; only the nodes in a field's
support carry meaning, everything else is stored as zero.
"""

import dataclasses
import functools
import itertools
from typing import Callable, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

EXTERIOR = 0
INTERIOR = 1
BOUNDARY = 2

DefiningFn = Callable[[jax.Array], jax.Array]
Node = Tuple[int, ...]

_ANCHOR_BISECTION_STEPS = 60
_ANCHOR_TOL = 1e-8
_INSIDE_TOL = 1e-12
_LATTICE_SNAP = 1e-9
_DIAMETER_NODE_LIMIT = 3000


class DegenerateGridError(ValueError):
  """No Interior node survives classification."""


class ClassificationError(RuntimeError):
  """Boundary anchor bisection could not bracket the zero set."""


class DomainMismatchError(ValueError):
  """Fields living on different grids were combined."""


class StencilError(ValueError):
  """A stencil or interpolation sample touched an Exterior node."""


def stencil_offsets(dim: int, radius: int) -> np.ndarray:
  """All integer offsets in [-radius, radius]^dim, lexicographic order."""
  return np.array(
      list(itertools.product(range(-radius, radius + 1), repeat=dim)),
      dtype=np.int64,
  )


def shift(values, offset):
  """Returns s with s[k] = values[k + offset] on the leading lattice axes.

  Wraps around at the box edge; callers only read nodes whose stencil stays
  inside the box.
  """
  offset = tuple(int(o) for o in offset)
  return jnp.roll(
      values, shift=tuple(-o for o in offset), axis=tuple(range(len(offset)))
  )


def _np_shift(mask: np.ndarray, offset) -> np.ndarray:
  offset = tuple(int(o) for o in offset)
  return np.roll(
      mask, shift=tuple(-o for o in offset), axis=tuple(range(len(offset)))
  )


def edge_mask(shape: Sequence[int], reach: int) -> np.ndarray:
  """True at nodes at least `reach` lattice steps away from every box face."""
  mask = np.ones(shape, dtype=bool)
  for axis, count in enumerate(shape):
    index = np.arange(count)
    ok = (index >= reach) & (index <= count - 1 - reach)
    view = [1] * len(shape)
    view[axis] = count
    mask &= ok.reshape(view)
  return mask


def lattice_coordinates(
    lower: Sequence[float], h: float, shape: Sequence[int]
) -> jax.Array:
  index = np.stack(np.indices(shape), axis=-1).astype(np.float64)
  return jnp.asarray(np.asarray(lower, dtype=np.float64) + h * index)


@dataclasses.dataclass(frozen=True, eq=False)
class GridDomain:
  """A lattice over a bounding box with Interior / Boundary / Exterior labels.

  `anchor_points[k]` is the boundary anchor of the k-th Boundary node in
  lexicographic lattice order.
  """

  n: int
  h: float
  lower: Tuple[float, ...]
  shape: Tuple[int, ...]
  labels: np.ndarray
  defining_fn: DefiningFn
  defining_values: np.ndarray
  anchor_points: np.ndarray
  stencil_radius: int = 1

  @property
  def dim(self) -> int:
    return 2 * self.n

  @property
  def bbox(self) -> Tuple[Tuple[float, float], ...]:
    return tuple(
        (lo, lo + self.h * (count - 1))
        for lo, count in zip(self.lower, self.shape)
    )

  @functools.cached_property
  def coordinates(self) -> jax.Array:
    return lattice_coordinates(self.lower, self.h, self.shape)

  @functools.cached_property
  def norm_sq(self) -> jax.Array:
    return jnp.sum(self.coordinates**2, axis=-1)

  @functools.cached_property
  def interior_mask(self) -> jax.Array:
    return jnp.asarray(self.labels == INTERIOR)

  @functools.cached_property
  def boundary_mask(self) -> jax.Array:
    return jnp.asarray(self.labels == BOUNDARY)

  @functools.cached_property
  def active_mask(self) -> jax.Array:
    return jnp.asarray(self.labels != EXTERIOR)

  @functools.cached_property
  def inside_mask(self) -> jax.Array:
    """Non-Exterior nodes lying in the closed domain."""
    return self.active_mask & jnp.asarray(
        self.defining_values <= _INSIDE_TOL
    )

  @functools.cached_property
  def interior_nodes(self) -> np.ndarray:
    return np.argwhere(self.labels == INTERIOR)

  @functools.cached_property
  def boundary_nodes(self) -> np.ndarray:
    return np.argwhere(self.labels == BOUNDARY)

  @functools.cached_property
  def _boundary_rank(self) -> np.ndarray:
    rank = np.full(self.shape, -1, dtype=np.int64)
    rank[tuple(self.boundary_nodes.T)] = np.arange(len(self.boundary_nodes))
    return rank

  @functools.cached_property
  def defining_scale(self) -> float:
    return float(max(1.0, np.max(np.abs(self.defining_values))))

  @functools.cached_property
  def diameter(self) -> float:
    """Largest distance between two closed-domain nodes (subsampled)."""
    nodes = np.argwhere(np.asarray(self.inside_mask))
    points = np.asarray(self.coordinates)[tuple(nodes.T)]
    if len(points) > _DIAMETER_NODE_LIMIT:
      step = int(np.ceil(len(points) / _DIAMETER_NODE_LIMIT))
      extremes = np.concatenate(
          [np.argmin(points, axis=0), np.argmax(points, axis=0)]
      )
      keep = np.union1d(np.arange(0, len(points), step), extremes)
      points = points[keep]
    best = 0.0
    for start in range(0, len(points), 512):
      block = points[start : start + 512]
      dist_sq = np.sum((block[:, None, :] - points[None, :, :]) ** 2, axis=-1)
      best = max(best, float(np.max(dist_sq)))
    return float(np.sqrt(best))

  def node_point(self, node: Node) -> np.ndarray:
    return np.asarray(self.lower) + self.h * np.asarray(node, dtype=np.float64)

  def label(self, node: Node) -> int:
    return int(self.labels[tuple(node)])

  def boundary_anchor(self, node: Node) -> np.ndarray:
    """Nearest zero-set point of the defining function for a Boundary node."""
    node = tuple(int(k) for k in node)
    if self.label(node) != BOUNDARY:
      raise ValueError(
          f"boundary_anchor needs a Boundary node, {node} has label"
          f" {self.label(node)}"
      )
    return self.anchor_points[self._boundary_rank[node]]


def classify_nodes(
    defining_fn: DefiningFn,
    bbox: Sequence[Tuple[float, float]],
    h: float,
    stencil_radius: int = 1,
) -> GridDomain:
  """Builds the lattice over `bbox` and labels its nodes.

  Args:
    defining_fn: maps an array (..., 2n) of points to (...) values, negative
      exactly on the open domain.
    bbox: one (lo, hi) pair per real axis.
    h: lattice spacing.
    stencil_radius: reach of the widest stencil an Interior node must carry.

  Returns:
    The classified GridDomain, boundary anchors included.
  """
  if not h > 0:
    raise ValueError(f"grid spacing must be positive, got {h}")
  bbox = tuple((float(lo), float(hi)) for lo, hi in bbox)
  if len(bbox) == 0 or len(bbox) % 2:
    raise ValueError(f"bbox needs 2n axes, got {len(bbox)}")
  for lo, hi in bbox:
    if not hi > lo:
      raise ValueError(f"empty bbox axis ({lo}, {hi})")
  if stencil_radius < 1:
    raise ValueError(f"stencil_radius must be >= 1, got {stencil_radius}")

  n = len(bbox) // 2
  shape = tuple(int(np.floor((hi - lo) / h + 1e-9)) + 1 for lo, hi in bbox)
  lower = tuple(lo for lo, _ in bbox)
  coords = lattice_coordinates(lower, h, shape)
  values = np.asarray(defining_fn(coords), dtype=np.float64)
  if values.shape != shape:
    raise ValueError(
        f"defining_fn returned shape {values.shape}, expected {shape}"
    )

  negative = values < 0
  if np.any((values <= 0) & ~edge_mask(shape, 1)):
    raise ValueError("bbox must strictly contain {defining_fn <= 0}")
  offsets = stencil_offsets(2 * n, stencil_radius)

  interior = negative & edge_mask(shape, stencil_radius)
  if not interior.any():
    raise DegenerateGridError(
        f"no Interior node at h={h}; the discretization is too coarse"
    )
  near_interior = np.zeros(shape, dtype=bool)
  for offset in offsets:
    near_interior |= _np_shift(interior, offset)
  boundary = ~interior & near_interior
  exterior = ~(interior | boundary)

  touches_exterior = np.zeros(shape, dtype=bool)
  for offset in offsets:
    touches_exterior |= _np_shift(exterior, offset)
  demoted = interior & touches_exterior
  interior &= ~demoted
  boundary |= demoted
  if not interior.any():
    raise DegenerateGridError(
        f"every Interior node at h={h} lost its stencil; refine the grid"
    )

  labels = np.full(shape, EXTERIOR, dtype=np.int8)
  labels[interior] = INTERIOR
  labels[boundary] = BOUNDARY

  anchors = _boundary_anchors(
      defining_fn, values, np.asarray(coords), labels, h, stencil_radius
  )
  return GridDomain(
      n=n,
      h=float(h),
      lower=lower,
      shape=shape,
      labels=labels,
      defining_fn=defining_fn,
      defining_values=values,
      anchor_points=anchors,
      stencil_radius=stencil_radius,
  )


def _boundary_anchors(defining_fn, values, coords, labels, h, radius):
  """Bisects from every Boundary node toward its nearest opposite-sign node."""
  nodes = np.argwhere(labels == BOUNDARY)
  dim = labels.ndim
  if len(nodes) == 0:
    return np.zeros((0, dim))
  offsets = [o for o in stencil_offsets(dim, radius) if np.any(o)]
  offsets.sort(key=lambda o: (int(o @ o), tuple(int(k) for k in o)))
  offsets = np.asarray(offsets)

  shape = np.asarray(labels.shape)
  node_negative = values[tuple(nodes.T)] < 0
  choice = np.full(len(nodes), -1, dtype=np.int64)
  for k, offset in enumerate(offsets):
    target = nodes + offset
    inside = np.all((target >= 0) & (target < shape), axis=1)
    target = np.clip(target, 0, shape - 1)
    opposite = inside & ((values[tuple(target.T)] < 0) != node_negative)
    choice[(choice < 0) & opposite] = k
  if np.any(choice < 0):
    bad = tuple(int(k) for k in nodes[np.argmax(choice < 0)])
    raise ClassificationError(
        f"Boundary node {bad} has no opposite-sign neighbor to bracket"
    )

  a = coords[tuple(nodes.T)]
  b = a + h * offsets[choice]
  for _ in range(_ANCHOR_BISECTION_STEPS):
    mid = 0.5 * (a + b)
    same = (np.asarray(defining_fn(jnp.asarray(mid))) < 0) == node_negative
    a = np.where(same[:, None], mid, a)
    b = np.where(same[:, None], b, mid)
  anchors = 0.5 * (a + b)

  residual = np.abs(np.asarray(defining_fn(jnp.asarray(anchors))))
  scale = max(1.0, float(np.max(np.abs(values))))
  if np.any(residual > _ANCHOR_TOL * scale):
    worst = int(np.argmax(residual))
    raise ClassificationError(
        f"anchor bisection for node {tuple(nodes[worst])} ended at"
        f" |defining_fn| = {residual[worst]:.3e}; classification is"
        " inconsistent with the defining function"
    )
  return anchors


@dataclasses.dataclass(frozen=True, eq=False)
class ScalarField:
  """Real values on the nodes of a GridDomain.

  `support` defaults to all non-Exterior nodes. `fn`, when present, is the
  analytic generator of the samples and is used for exact boundary traces.
  """

  domain: GridDomain
  values: jax.Array
  support: Optional[jax.Array] = None
  fn: Optional[DefiningFn] = None

  def __post_init__(self):
    values = jnp.asarray(self.values, dtype=jnp.float64)
    if values.shape != self.domain.shape:
      raise ValueError(
          f"field shape {values.shape} does not match grid {self.domain.shape}"
      )
    values = jnp.where(self.mask, values, 0.0)
    if not bool(jnp.all(jnp.isfinite(values))):
      raise ValueError("field values must be finite on the support")
    object.__setattr__(self, "values", values)

  @classmethod
  def from_function(cls, domain: GridDomain, fn: DefiningFn, support=None):
    values = jnp.asarray(fn(domain.coordinates), dtype=jnp.float64)
    values = jnp.broadcast_to(values, domain.shape)
    mask = domain.active_mask if support is None else support
    return cls(domain, jnp.where(mask, values, 0.0), support, fn)

  @classmethod
  def zeros(cls, domain: GridDomain):
    return cls(domain, jnp.zeros(domain.shape), None, None)

  @property
  def mask(self) -> jax.Array:
    return self.domain.active_mask if self.support is None else self.support

  def value_at(self, node: Node) -> float:
    node = tuple(int(k) for k in node)
    if not bool(self.mask[node]):
      raise ValueError(f"node {node} is outside the field support")
    return float(self.values[node])

  def trace(self) -> jax.Array:
    """Values at the boundary anchors, one per Boundary node."""
    if self.fn is not None:
      return jnp.asarray(
          self.fn(jnp.asarray(self.domain.anchor_points)), dtype=jnp.float64
      )
    return self.values[tuple(self.domain.boundary_nodes.T)]

  def with_values(self, values, fn=None):
    return ScalarField(self.domain, values, self.support, fn)

  def restrict(self, support):
    return ScalarField(self.domain, self.values, self.mask & support, self.fn)

  def _combine(self, other, op):
    if isinstance(other, ScalarField):
      check_same_domain(self, other)
      support = None
      if self.support is not None or other.support is not None:
        support = self.mask & other.mask
      fn = None
      if self.fn is not None and other.fn is not None:
        fa, fb = self.fn, other.fn
        fn = lambda x: op(fa(x), fb(x))
      return ScalarField(self.domain, op(self.values, other.values), support, fn)
    scalar = float(other)
    fn = None
    if self.fn is not None:
      fa = self.fn
      fn = lambda x: op(fa(x), scalar)
    return ScalarField(self.domain, op(self.values, scalar), self.support, fn)

  def __add__(self, other):
    return self._combine(other, lambda a, b: a + b)

  def __radd__(self, other):
    return self.__add__(other)

  def __sub__(self, other):
    return self._combine(other, lambda a, b: a - b)

  def __rsub__(self, other):
    return (-self).__add__(other)

  def __mul__(self, other):
    if isinstance(other, ScalarField):
      raise TypeError("fields only scale by real numbers")
    return self._combine(other, lambda a, b: a * b)

  def __rmul__(self, other):
    return self.__mul__(other)

  def __neg__(self):
    return self.__mul__(-1.0)


def check_same_domain(a: ScalarField, b: ScalarField):
  if a.domain is not b.domain:
    raise DomainMismatchError("fields live on different GridDomains")


def maximum(a: ScalarField, b: ScalarField) -> ScalarField:
  """Nodewise max on the common support."""
  check_same_domain(a, b)
  support = None
  if a.support is not None or b.support is not None:
    support = a.mask & b.mask
  fn = None
  if a.fn is not None and b.fn is not None:
    fa, fb = a.fn, b.fn
    fn = lambda x: jnp.maximum(fa(x), fb(x))
  return ScalarField(a.domain, jnp.maximum(a.values, b.values), support, fn)


def sup_norm_diff(a: ScalarField, b: ScalarField) -> float:
  """Max of |a - b| over the nodes both fields are defined on."""
  check_same_domain(a, b)
  mask = a.mask & b.mask
  return float(jnp.max(jnp.where(mask, jnp.abs(a.values - b.values), 0.0)))


def interpolate(field: ScalarField, points) -> jax.Array:
  """Multilinear interpolation of `field` at points of shape (P, 2n).

  Raises:
    StencilError: a corner with positive weight is outside the support.
  """
  domain = field.domain
  points = np.atleast_2d(np.asarray(points, dtype=np.float64))
  rel = (points - np.asarray(domain.lower)) / domain.h
  snapped = np.round(rel)
  rel = np.where(np.abs(rel - snapped) <= _LATTICE_SNAP, snapped, rel)
  base = np.floor(rel).astype(np.int64)
  frac = rel - base

  mask = np.asarray(field.mask)
  values = np.asarray(field.values)
  shape = np.asarray(domain.shape)
  total = np.zeros(len(points))
  for corner in itertools.product((0, 1), repeat=domain.dim):
    corner = np.asarray(corner)
    weight = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
    index = base + corner
    in_box = np.all((index >= 0) & (index < shape), axis=1)
    index = np.clip(index, 0, shape - 1)
    ok = in_box & mask[tuple(index.T)]
    used = weight > 0
    if np.any(used & ~ok):
      bad = points[np.argmax(used & ~ok)]
      raise StencilError(
          f"sample point {bad.tolist()} falls outside the non-Exterior hull"
      )
    total += np.where(used, weight * values[tuple(index.T)], 0.0)
  return jnp.asarray(total)


def write_field_csv(field: ScalarField, path: str):
  """Writes `x1,y1,...,value` rows for supported nodes, lexicographic order."""
  domain = field.domain
  nodes = np.argwhere(np.asarray(field.mask))
  coords = np.asarray(domain.coordinates)[tuple(nodes.T)]
  values = np.asarray(field.values)[tuple(nodes.T)]
  header = ",".join(
      [f"{axis}{j + 1}" for j in range(domain.n) for axis in ("x", "y")]
      + ["value"]
  )
  np.savetxt(
      path,
      np.column_stack([coords, values]),
      delimiter=",",
      fmt="%.17g",
      header=header,
      comments="",
  )
