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

"""Test domains with analytic defining functions.

Each constructor returns a DomainSpec. `candidate_status` says what to expect
from the shipped rho candidate:

  passes            rho - |z|^2 is psh, the solver pipelines accept it
  expected_to_fail  rho is a defining function but not uniformly strictly psh
  none              no candidate exists; the domain is a negative control
"""

import dataclasses
from typing import Callable, Dict, Optional, Sequence, Tuple

import jax.numpy as jnp
import numpy as np

from cma_lab import grid
from cma_lab.grid import DefiningFn, GridDomain, ScalarField

PASSES = "passes"
EXPECTED_TO_FAIL = "expected_to_fail"
NO_CANDIDATE = "none"
EXPERIMENTAL = "experimental"

_BBOX_MARGIN = 1.25


def abs2(x, j: int):
  """|z_j|^2 for points x of shape (..., 2n), j zero-based."""
  return x[..., 2 * j] ** 2 + x[..., 2 * j + 1] ** 2


@dataclasses.dataclass(frozen=True)
# pylint: disable-next=all
class DomainSpec:
  name: str
  n: int
  defining_fn: DefiningFn
  rho_candidate: Optional[DefiningFn]
  candidate_status: str
  bbox: Tuple[Tuple[float, float], ...]

  # Where an expected_to_fail candidate loses strict plurisubharmonicity.
  failure_locus: Optional[str] = None

  # psh function vanishing on the boundary, for barrier diagnostics only.
  barrier_rho: Optional[DefiningFn] = None

  # Alternative candidate shipped with candidate_status EXPERIMENTAL.
  blend_candidate: Optional[DefiningFn] = None

  notes: str = ""

  def classify(self, h: float, stencil_radius: int = 1) -> GridDomain:
    return grid.classify_nodes(self.defining_fn, self.bbox, h, stencil_radius)

  def rho_field(self, domain: GridDomain, which: str = "candidate") -> ScalarField:
    fn = {
        "candidate": self.rho_candidate,
        "blend": self.blend_candidate,
        "barrier": self.barrier_rho,
    }.get(which)
    if fn is None:
      raise ValueError(f"domain {self.name!r} ships no {which!r} rho")
    return ScalarField.from_function(domain, fn)


def _box(center: np.ndarray, half_widths: Sequence[float]):
  return tuple(
      (float(c - _BBOX_MARGIN * w), float(c + _BBOX_MARGIN * w))
      for c, w in zip(center, half_widths)
  )


def make_ball(n: int = 2, radius: float = 1.0, center=None) -> DomainSpec:
  if not radius > 0:
    raise ValueError(f"ball radius must be positive, got {radius}")
  if center is None:
    c = np.zeros(2 * n)
  else:
    c = np.asarray(center)
    if np.iscomplexobj(c) or c.shape == (n,):
      c = np.asarray(c, dtype=np.complex128)
      c = np.stack([c.real, c.imag], axis=-1).reshape(-1)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (2 * n,):
      raise ValueError(f"ball center needs {n} complex or {2 * n} real entries")
  r2 = float(radius) ** 2
  fn = lambda x: jnp.sum((x - c) ** 2, axis=-1) - r2
  return DomainSpec(
      name="ball",
      n=n,
      defining_fn=fn,
      rho_candidate=fn,
      candidate_status=PASSES,
      bbox=_box(c, [radius] * (2 * n)),
      notes="complex Hessian of rho is the identity",
  )


def make_ellipsoid(n: int = 2, semiaxes: Sequence[float] = (1.0, 0.5)) -> DomainSpec:
  a = np.asarray(semiaxes, dtype=np.float64)
  if a.shape != (n,):
    raise ValueError(f"need {n} semiaxes, got {len(a)}")
  if np.any(a <= 0):
    raise ValueError(f"semiaxes must be positive, got {a.tolist()}")
  scale = float(np.max(a) ** 2)
  weights = 1.0 / a**2

  def fn(x):
    return sum(weights[j] * abs2(x, j) for j in range(n)) - 1.0

  return DomainSpec(
      name="ellipsoid",
      n=n,
      defining_fn=fn,
      rho_candidate=lambda x: scale * fn(x),
      candidate_status=PASSES,
      bbox=_box(np.zeros(2 * n), np.repeat(a, 2)),
      notes="rho scaled by max a_j^2 so its complex Hessian dominates I",
  )


def make_egg(m: int = 2, blend: float = 0.5) -> DomainSpec:
  """{|z1|^2 + |z2|^{2m} < 1}, weakly pseudoconvex along z2 = 0."""
  if int(m) != m or m < 2:
    raise ValueError(f"egg exponent m must be an integer >= 2, got {m}")
  if not 0.0 <= blend < 1.0:
    raise ValueError(f"blend weight must lie in [0, 1), got {blend}")
  m = int(m)
  fn = lambda x: abs2(x, 0) + abs2(x, 1) ** m - 1.0
  ball = lambda x: abs2(x, 0) + abs2(x, 1) - 1.0
  # the z2 Hessian entry of the blend is at least 1 - blend
  mix = lambda x: (blend * fn(x) + (1.0 - blend) * ball(x)) / (1.0 - blend)
  radius = (1.0 / m**2) ** (1.0 / (2 * m - 2))
  return DomainSpec(
      name="egg",
      n=2,
      defining_fn=fn,
      rho_candidate=fn,
      candidate_status=EXPECTED_TO_FAIL,
      bbox=_box(np.zeros(4), [1.0] * 4),
      failure_locus=(
          f"|z2| < {radius:.6g}, where the z2 Hessian entry"
          f" {m * m}|z2|^{2 * m - 2} drops below 1"
      ),
      blend_candidate=mix,
      notes=(
          "blend candidate is experimental: its zero set is not the egg"
          " boundary, so it is not a defining function of the egg"
      ),
  )


def make_bidisc() -> DomainSpec:
  """Unit bidisc; its boundary contains analytic discs, no rho exists."""
  return DomainSpec(
      name="bidisc",
      n=2,
      defining_fn=lambda x: jnp.sqrt(jnp.maximum(abs2(x, 0), abs2(x, 1))) - 1.0,
      rho_candidate=None,
      candidate_status=NO_CANDIDATE,
      bbox=_box(np.zeros(4), [1.0] * 4),
      barrier_rho=lambda x: jnp.maximum(abs2(x, 0), abs2(x, 1)) - 1.0,
      notes="negative control for barrier diagnostics",
  )


DOMAINS: Dict[str, Callable[..., DomainSpec]] = {
    "ball": make_ball,
    "ellipsoid": make_ellipsoid,
    "egg": make_egg,
    "bidisc": make_bidisc,
}


def make_domain(name: str, **params) -> DomainSpec:
  if name not in DOMAINS:
    raise ValueError(
        f"unknown domain {name!r}; choose one of {sorted(DOMAINS)}"
    )
  return DOMAINS[name](**params)
