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

"""Discrete plurisubharmonicity checks, barriers and mollification."""

import dataclasses
from typing import Callable, List, Optional

from absl import logging
import jax
import jax.numpy as jnp
import numpy as np

from cma_lab import cma_operator
from cma_lab import grid
from cma_lab import hermitian
from cma_lab.grid import GridDomain, Node, ScalarField

_BARRIER_ZERO_SET_TOL = 1e-6
_SEARCH_START = 2.0**-4


class PshConstantError(RuntimeError):
  """No constant up to K_max makes the combination psh."""


@dataclasses.dataclass
class PshReport:
  violating_node_count: int
  worst_eigenvalue: float
  worst_node: Optional[Node]
  checked_node_count: int

  @property
  def passed(self) -> bool:
    return self.violating_node_count == 0


def _report_from_eigenvalues(eig, check, tol) -> PshReport:
  eig = np.asarray(eig)
  check = np.asarray(check)
  if not check.any():
    return PshReport(0, float("inf"), None, 0)
  masked = np.where(check, eig, np.inf)
  worst = np.unravel_index(np.argmin(masked), masked.shape)
  violations = int(np.sum(check & (eig < -tol)))
  return PshReport(
      violating_node_count=violations,
      worst_eigenvalue=float(masked[worst]),
      worst_node=tuple(int(k) for k in worst),
      checked_node_count=int(check.sum()),
  )


def psh_report(
    u: ScalarField, tol: float = 0.0, region: Optional[jax.Array] = None
) -> PshReport:
  """Checks the complex Hessian is PSD (to -tol) at every Interior node.

  Interior nodes whose Hessian stencil leaves the support of u are skipped.
  `region` narrows the check further.
  """
  if tol < 0:
    raise ValueError(f"tol must be >= 0, got {tol}")
  hessians, valid = cma_operator.complex_hessian_field(u)
  check = valid & u.domain.interior_mask
  if region is not None:
    check = check & region
  eig = hermitian.batch_min_eigenvalue(hessians)
  return _report_from_eigenvalues(eig, check, tol)


def norm_sq_field(domain: GridDomain) -> ScalarField:
  return ScalarField.from_function(domain, lambda x: jnp.sum(x**2, axis=-1))


def strict_psh_report(rho: ScalarField, tol: float = 1e-8) -> PshReport:
  """psh_report of rho - |z|^2."""
  return psh_report(rho - norm_sq_field(rho.domain), tol)


def uniformly_strictly_psh(rho: ScalarField, tol: float = 1e-8) -> bool:
  return strict_psh_report(rho, tol).passed


def _check_on_boundary(domain: GridDomain, zeta: np.ndarray):
  value = float(domain.defining_fn(jnp.asarray(zeta)))
  if abs(value) > _BARRIER_ZERO_SET_TOL:
    raise ValueError(
        f"zeta {zeta.tolist()} is not on the boundary: defining_fn = {value:.3e}"
    )


def barrier(rho: ScalarField, zeta) -> ScalarField:
  """v(z) = -|z - zeta|^2 + rho(z)."""
  zeta = np.asarray(zeta, dtype=np.float64)
  _check_on_boundary(rho.domain, zeta)
  dist_sq = lambda x: jnp.sum((x - zeta) ** 2, axis=-1)
  fn = None
  if rho.fn is not None:
    rho_fn = rho.fn
    fn = lambda x: rho_fn(x) - dist_sq(x)
  values = rho.values - dist_sq(rho.domain.coordinates)
  return ScalarField(rho.domain, values, rho.support, fn)


def linear_peak_candidate(domain: GridDomain, zeta) -> ScalarField:
  """Pluriharmonic candidate Re<z, zeta> - |zeta|^2, zero at zeta."""
  zeta = np.asarray(zeta, dtype=np.float64)
  _check_on_boundary(domain, zeta)
  offset = float(zeta @ zeta)
  return ScalarField.from_function(domain, lambda x: x @ zeta - offset)


@dataclasses.dataclass
class BarrierCheck:
  zeta: np.ndarray
  value_at_zeta: float
  sup_outside: float
  worst_node: Optional[Node]
  zero_tol: float

  @property
  def passed(self) -> bool:
    return abs(self.value_at_zeta) <= self.zero_tol and self.sup_outside < 0

  def __bool__(self):
    return self.passed


def verify_barrier(
    v: ScalarField, zeta, delta: float, zero_tol: Optional[float] = None
) -> BarrierCheck:
  """Checks v(zeta) = 0 and sup of v over closed-domain nodes off B(zeta, delta) < 0.

  v(zeta) is read from the analytic generator when v has one, otherwise from
  the nearest closed-domain node, in which case the zero tolerance is 4h.
  """
  domain = v.domain
  if not delta > 2 * domain.h:
    raise ValueError(f"delta must exceed 2h = {2 * domain.h}, got {delta}")
  zeta = np.asarray(zeta, dtype=np.float64)
  candidates = np.asarray(domain.inside_mask & v.mask)
  dist = np.sqrt(
      np.sum((np.asarray(domain.coordinates) - zeta) ** 2, axis=-1)
  )
  if v.fn is not None:
    at_zeta = float(v.fn(jnp.asarray(zeta)))
    zero_tol = _BARRIER_ZERO_SET_TOL if zero_tol is None else zero_tol
  else:
    nearest = np.unravel_index(
        np.argmin(np.where(candidates, dist, np.inf)), dist.shape
    )
    at_zeta = float(v.values[nearest])
    zero_tol = 4 * domain.h if zero_tol is None else zero_tol

  outside = candidates & (dist > delta)
  if not outside.any():
    return BarrierCheck(zeta, at_zeta, float("-inf"), None, zero_tol)
  masked = np.where(outside, np.asarray(v.values), -np.inf)
  worst = np.unravel_index(np.argmax(masked), masked.shape)
  return BarrierCheck(
      zeta, at_zeta, float(masked[worst]), tuple(int(k) for k in worst), zero_tol
  )


@dataclasses.dataclass
class BarrierSweep:
  """Barrier verification over a set of boundary anchors."""

  psh: PshReport
  checked: int
  failures: List[BarrierCheck]
  worst_sup: float
  worst_zeta: Optional[np.ndarray]

  @property
  def passed(self) -> bool:
    return self.psh.passed and not self.failures


def barrier_sweep(
    rho: ScalarField,
    delta: Optional[float] = None,
    max_anchors: int = 64,
    candidate: Optional[Callable[[ScalarField, np.ndarray], ScalarField]] = None,
    tol: float = 1e-8,
) -> BarrierSweep:
  """Builds and verifies a barrier at evenly spaced boundary anchors.

  The default candidate is `barrier(rho, zeta)`, whose Hessian does not
  depend on zeta, so plurisubharmonicity is checked once.
  """
  domain = rho.domain
  delta = 4 * domain.h if delta is None else delta
  anchors = domain.anchor_points
  if len(anchors) > max_anchors:
    picks = np.linspace(0, len(anchors) - 1, max_anchors).round().astype(int)
    anchors = anchors[np.unique(picks)]

  if candidate is None:
    psh = strict_psh_report(rho, tol)
    build = barrier
  else:
    psh = None
    build = candidate

  failures = []
  worst_sup, worst_zeta = float("-inf"), None
  for zeta in anchors:
    v = build(rho, zeta)
    if psh is None:
      psh = psh_report(v, tol)
    check = verify_barrier(v, zeta, delta)
    if check.sup_outside > worst_sup:
      worst_sup, worst_zeta = check.sup_outside, zeta
    if not check:
      failures.append(check)
  logging.info(
      "barrier sweep: %d anchors, %d failures, worst sup %.3e, psh violations %d",
      len(anchors),
      len(failures),
      worst_sup,
      psh.violating_node_count,
  )
  return BarrierSweep(psh, len(anchors), failures, worst_sup, worst_zeta)


def search_constant(
    accepts: Callable[[float], bool],
    K_max: float,
    rel_width: float = 1e-3,
) -> Optional[float]:
  """Smallest accepted K on 0, 2^-4, 2^-3, ... then bisection; None past K_max."""
  if accepts(0.0):
    return 0.0
  lo, hi = 0.0, _SEARCH_START
  while not accepts(hi):
    lo, hi = hi, 2.0 * hi
    if hi > K_max:
      if lo < K_max and accepts(K_max):
        hi = K_max
        break
      return None
  while hi - lo > rel_width * hi:
    mid = 0.5 * (lo + hi)
    if accepts(mid):
      hi = mid
    else:
      lo = mid
  return hi


def find_psh_K(
    psi: ScalarField, rho: ScalarField, K_max: float = 1e4, tol: float = 1e-8
) -> float:
  """Near-minimal K >= 0 with psi + K rho psh at every Interior node."""
  grid.check_same_domain(psi, rho)
  h_psi, valid_psi = cma_operator.complex_hessian_field(psi)
  h_rho, valid_rho = cma_operator.complex_hessian_field(rho)
  check = valid_psi & valid_rho & psi.domain.interior_mask

  def min_eigenvalues(K):
    return hermitian.batch_min_eigenvalue(h_psi + K * h_rho)

  def accepts(K):
    return bool(jnp.all(jnp.where(check, min_eigenvalues(K), 0.0) >= -tol))

  K = search_constant(accepts, K_max)
  if K is None:
    report = _report_from_eigenvalues(min_eigenvalues(K_max), check, tol)
    raise PshConstantError(
        f"no K <= {K_max} makes psi + K rho psh; worst node"
        f" {report.worst_node} has eigenvalue {report.worst_eigenvalue:.3e}"
    )
  return K


def _bump_weights(dim: int, h: float, eps: float):
  reach = int(np.floor(eps / h + 1e-12))
  offsets = grid.stencil_offsets(dim, reach)
  r = h * np.sqrt(np.sum(offsets**2, axis=1))
  keep = r < eps
  weights = (1.0 - (r[keep] / eps) ** 2) ** 3
  return offsets[keep], weights / weights.sum()


def mollify(u: ScalarField, eps: float) -> ScalarField:
  """Convolution with the normalized bump (1 - (r/eps)^2)^3 of radius eps.

  With an analytic generator the convolution is exact on lattice offsets and
  defined everywhere. Otherwise it is taken on the lattice at nodes whose
  eps-ball stays in the support and the original values are kept elsewhere.
  """
  domain = u.domain
  if eps < domain.h:
    raise ValueError(f"eps must be >= h = {domain.h}, got {eps}")
  offsets, weights = _bump_weights(domain.dim, domain.h, eps)

  if u.fn is not None:
    fn_u = u.fn
    shifts = jnp.asarray(domain.h * offsets.astype(np.float64))

    def fn(x):
      x = jnp.asarray(x)
      total = 0.0
      for w, s in zip(weights, shifts):
        total = total + w * fn_u(x - s)
      return total

    return ScalarField(domain, fn(domain.coordinates), u.support, fn)

  mask = u.mask
  total = jnp.zeros(domain.shape)
  full = mask & jnp.asarray(grid.edge_mask(domain.shape, int(np.max(offsets))))
  for w, offset in zip(weights, offsets):
    total = total + w * grid.shift(u.values, -offset)
    full = full & grid.shift(mask, -offset)
  return u.with_values(jnp.where(full, total, u.values))
