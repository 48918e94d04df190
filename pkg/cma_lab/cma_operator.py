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

"""Discrete complex Hessian and the two Monge-Ampere proxies.

ma_pointwise is A_n det of the central-difference complex Hessian.
ma_monotone is the clamped wide-stencil minimum over a FrameSet, which is
what the solver inverts node by node.
"""

import dataclasses
import functools
import itertools
import math
from typing import Tuple

import jax
import jax.numpy as jnp
import numpy as np

from cma_lab import grid
from cma_lab import hermitian
from cma_lab.grid import Node, ScalarField, StencilError


def normalization_constant(n: int) -> float:
  """A_n = 4^n n!."""
  return float(4**n * math.factorial(n))


def complex_to_real(vector) -> np.ndarray:
  """(v_1, ..., v_n) in C^n to (Re v_1, Im v_1, ..., Re v_n, Im v_n)."""
  vector = np.asarray(vector, dtype=np.complex128)
  return np.stack([vector.real, vector.imag], axis=-1).reshape(
      vector.shape[:-1] + (2 * vector.shape[-1],)
  )


def _unit(dim, axis):
  e = np.zeros(dim, dtype=np.int64)
  e[axis] = 1
  return e


def _hessian_from_sampler(sample, n: int, h: float):
  """Central-difference complex Hessian; sample(offset) reads u(z + h*offset)."""
  dim = 2 * n
  center = sample(np.zeros(dim, dtype=np.int64))
  second = {}
  for a in range(dim):
    e = _unit(dim, a)
    second[a, a] = (sample(e) - 2.0 * center + sample(-e)) / h**2
  for a, b in itertools.combinations(range(dim), 2):
    ea, eb = _unit(dim, a), _unit(dim, b)
    mixed = (
        sample(ea + eb) - sample(ea - eb) - sample(-ea + eb) + sample(-ea - eb)
    ) / (4.0 * h**2)
    second[a, b] = second[b, a] = mixed

  rows = []
  for j in range(n):
    row = []
    for k in range(n):
      xx = second[2 * j, 2 * k] + second[2 * j + 1, 2 * k + 1]
      xy = second[2 * j, 2 * k + 1] - second[2 * j + 1, 2 * k]
      row.append(0.25 * xx + 0.25j * xy)
    rows.append(jnp.stack(row, axis=-1))
  matrix = jnp.stack(rows, axis=-2)
  return 0.5 * (matrix + jnp.conj(jnp.swapaxes(matrix, -1, -2)))


def stencil_valid(u: ScalarField, reach: int) -> jax.Array:
  """Nodes whose full [-reach, reach] cube lies in the support of u."""
  mask = u.mask
  valid = mask & jnp.asarray(grid.edge_mask(u.domain.shape, reach))
  for offset in grid.stencil_offsets(u.domain.dim, reach):
    valid = valid & grid.shift(mask, offset)
  return valid


def complex_hessian_field(u: ScalarField) -> Tuple[jax.Array, jax.Array]:
  """Hessians (*shape, n, n) and the mask of nodes where they are defined."""
  sample = lambda offset: grid.shift(u.values, offset)
  hessians = _hessian_from_sampler(sample, u.domain.n, u.domain.h)
  return hessians, stencil_valid(u, 1)


def _check_local_stencil(u: ScalarField, node: Node, reach: int):
  node = np.asarray(node, dtype=np.int64)
  shape = np.asarray(u.domain.shape)
  mask = np.asarray(u.mask)
  for offset in grid.stencil_offsets(u.domain.dim, reach):
    target = node + offset
    if np.any(target < 0) or np.any(target >= shape) or not mask[
        tuple(target)
    ]:
      raise StencilError(
          f"stencil of node {tuple(node)} touches {tuple(target)}, which is"
          " Exterior or outside the field"
      )


def complex_hessian(u: ScalarField, node: Node) -> hermitian.HermitianForm:
  _check_local_stencil(u, node, 1)
  values = np.asarray(u.values)
  base = np.asarray(node, dtype=np.int64)
  sample = lambda offset: jnp.asarray(values[tuple(base + offset)])
  matrix = _hessian_from_sampler(sample, u.domain.n, u.domain.h)
  return hermitian.HermitianForm(np.asarray(matrix))


def ma_pointwise_field(u: ScalarField) -> Tuple[jax.Array, jax.Array]:
  hessians, valid = complex_hessian_field(u)
  values = normalization_constant(u.domain.n) * hermitian.batch_det(hessians)
  return jnp.where(valid, values, 0.0), valid


def ma_pointwise(u: ScalarField, node: Node) -> float:
  return normalization_constant(u.domain.n) * hermitian.det(
      complex_hessian(u, node)
  )


def directional_second_difference(
    u: ScalarField, node: Node, v, step: float | None = None
) -> float:
  """[u(z+sv) + u(z-sv) + u(z+isv) + u(z-isv) - 4u(z)] / (4 s^2).

  s defaults to h. Off-lattice samples are interpolated multilinearly.
  """
  v = np.asarray(v, dtype=np.complex128)
  if abs(np.linalg.norm(v) - 1.0) > 1e-9:
    raise ValueError(f"direction must be a unit vector, |v| = {np.linalg.norm(v)}")
  step = u.domain.h if step is None else float(step)
  z = u.domain.node_point(node)
  points = np.stack([
      z + step * complex_to_real(v),
      z - step * complex_to_real(v),
      z + step * complex_to_real(1j * v),
      z - step * complex_to_real(1j * v),
  ])
  total = float(jnp.sum(grid.interpolate(u, points)))
  return (total - 4.0 * u.value_at(node)) / (4.0 * step**2)


def _canonical(vector: np.ndarray) -> Tuple[int, ...]:
  """Representative of a Gaussian-integer vector modulo the units {1,i,-1,-i}."""
  best = None
  for k in range(4):
    real = complex_to_real((1j) ** k * vector)
    key = tuple(int(round(x)) for x in real)
    if best is None or key > best:
      best = key
  return best


def _from_real(key) -> np.ndarray:
  key = np.asarray(key, dtype=np.float64)
  return key[0::2] + 1j * key[1::2]


def _perp(vector: np.ndarray) -> np.ndarray:
  return np.array([-np.conj(vector[1]), np.conj(vector[0])])


@dataclasses.dataclass(frozen=True, eq=False)
class FrameSet:
  """Orthogonal frames of Gaussian-integer vectors with entries in [-r, r].

  `lattice_vectors[f, j]` is the j-th vector of frame f. The canonical
  coordinate frame comes first.
  """

  n: int
  radius: int
  lattice_vectors: np.ndarray

  @classmethod
  def build(cls, n: int, radius: int = 2):
    if radius < 1:
      raise ValueError(f"frame radius must be >= 1, got {radius}")
    span = range(-radius, radius + 1)
    keys = set()
    for real in itertools.product(span, repeat=2 * n):
      if not any(real):
        continue
      w = _from_real(real)
      if n == 1:
        keys.add((_canonical(w),))
      elif n == 2:
        pair = sorted([_canonical(w), _canonical(_perp(w))], reverse=True)
        keys.add(tuple(pair))
      else:
        raise NotImplementedError(f"frames are built for n <= 2, got n={n}")
    ordered = sorted(
        keys, key=lambda frame: (sum(x * x for x in frame[0]), frame)
    )
    vectors = np.array(
        [[_from_real(key) for key in frame] for frame in ordered],
        dtype=np.complex128,
    )
    return cls(n=n, radius=radius, lattice_vectors=vectors)

  def __len__(self):
    return len(self.lattice_vectors)

  @functools.cached_property
  def squared_norms(self) -> np.ndarray:
    return np.sum(np.abs(self.lattice_vectors) ** 2, axis=-1)

  @functools.cached_property
  def unit_frames(self) -> np.ndarray:
    return self.lattice_vectors / np.sqrt(self.squared_norms)[..., None]

  @functools.cached_property
  def sample_offsets(self) -> np.ndarray:
    """Integer offsets (F, n, 4, 2n) of the samples z+w, z-w, z+iw, z-iw."""
    w = complex_to_real(self.lattice_vectors)
    iw = complex_to_real(1j * self.lattice_vectors)
    return np.rint(np.stack([w, -w, iw, -iw], axis=2)).astype(np.int64)


def frame_second_differences(values, frames: FrameSet, h: float) -> jax.Array:
  """Directional differences (F, n, *shape) with steps h|w| on the lattice."""
  offsets = frames.sample_offsets
  out = []
  for f in range(len(frames)):
    row = []
    for j in range(frames.n):
      total = sum(grid.shift(values, offset) for offset in offsets[f, j])
      row.append(
          (total - 4.0 * values) / (4.0 * h**2 * frames.squared_norms[f, j])
      )
    out.append(jnp.stack(row))
  return jnp.stack(out)


def ma_monotone_field(
    u: ScalarField, frames: FrameSet
) -> Tuple[jax.Array, jax.Array]:
  diffs = frame_second_differences(u.values, frames, u.domain.h)
  products = jnp.prod(jnp.maximum(diffs, 0.0), axis=1)
  values = normalization_constant(u.domain.n) * jnp.min(products, axis=0)
  valid = stencil_valid(u, frames.radius)
  return jnp.where(valid, values, 0.0), valid


def ma_monotone(u: ScalarField, node: Node, frames: FrameSet) -> float:
  """A_n min over frames of prod_j max(directional difference, 0)."""
  h = u.domain.h
  best = np.inf
  for f in range(len(frames)):
    product = 1.0
    for j in range(frames.n):
      step = h * float(np.sqrt(frames.squared_norms[f, j]))
      d = directional_second_difference(
          u, node, frames.unit_frames[f, j], step=step
      )
      product *= max(d, 0.0)
    best = min(best, product)
  return normalization_constant(u.domain.n) * best
