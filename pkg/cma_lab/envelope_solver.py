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

"""Monotone nonlinear Gauss-Seidel solver for the Dirichlet problem.

The scheme at an Interior node z is

  A_n min_F prod_j max((s_j - u(z)) / (h^2 |w_j|^2), 0) = f(z),

where F runs over a FrameSet of Gaussian-integer frames, w_j is the j-th
vector of F and s_j is the mean of u at z + w_j, z - w_j, z + i w_j and
z - i w_j. The left side is decreasing in u(z), so each node update is the
unique root, clamped above by the supersolution.
"""

import dataclasses
import functools
from typing import List, Optional, Tuple

from absl import logging
import jax
from jax import lax
import jax.numpy as jnp
import numpy as np

from cma_lab import cma_operator
from cma_lab import grid
from cma_lab import hermitian
from cma_lab import psh_tools
from cma_lab.grid import DefiningFn, GridDomain, Node, ScalarField
from cma_lab.modulus import ModulusOfContinuity

SWEEP_ORDERS = ("lexicographic", "red_black")
ROOT_FINDERS = ("closed_form", "bisection")

_ROOT_BISECTION_STEPS = 60
_SUBSOLUTION_TOL = 1e-8
SWEEP_LOG_HEADER = "sweep,index,max_update,max_residual"


class SolverNotConvergedError(RuntimeError):
  """The sweep limit was reached before the stopping rule held."""

  def __init__(self, message: str, sweeps: int, residual: float):
    super().__init__(message)
    self.sweeps = sweeps
    self.residual = residual


@dataclasses.dataclass(frozen=True, eq=False)
class DirichletData:
  """Boundary data phi (defined near the boundary) and density f >= 0."""

  phi: DefiningFn
  f: DefiningFn
  f_root_modulus: Optional[ModulusOfContinuity] = None

  def phi_field(self, domain: GridDomain) -> ScalarField:
    return ScalarField.from_function(domain, self.phi)

  def f_field(self, domain: GridDomain) -> ScalarField:
    return ScalarField.from_function(domain, self.f)

  def boundary_values(self, domain: GridDomain) -> jax.Array:
    """phi at the boundary anchors, one per Boundary node."""
    return jnp.asarray(
        self.phi(jnp.asarray(domain.anchor_points)), dtype=jnp.float64
    )


@dataclasses.dataclass
# pylint: disable-next=all
class SolveConfig:
  frame_radius: int = 1
  tol_res: float = 1e-6
  max_sweeps: int = 5000
  sweep_order: str = "lexicographic"  # lexicographic, red_black
  root_finder: str = "closed_form"  # closed_form, bisection

  # Search ceiling for the subsolution / supersolution constants.
  K_max: float = 1e4

  # threads > 1 selects the red-black sweep
  threads: int = 1

  # If set, per-sweep CSV lines are appended here.
  sweep_log_path: Optional[str] = None

  def __post_init__(self):
    if not self.tol_res > 0:
      raise ValueError(f"tol_res must be positive, got {self.tol_res}")
    if self.max_sweeps < 1:
      raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
    if self.frame_radius < 1:
      raise ValueError(f"frame_radius must be >= 1, got {self.frame_radius}")
    if self.threads < 1:
      raise ValueError(f"threads must be >= 1, got {self.threads}")
    if self.sweep_order not in SWEEP_ORDERS:
      raise ValueError(
          f"sweep_order must be one of {SWEEP_ORDERS}, got {self.sweep_order}"
      )
    if self.root_finder not in ROOT_FINDERS:
      raise ValueError(
          f"root_finder must be one of {ROOT_FINDERS}, got {self.root_finder}"
      )

  @property
  def effective_sweep_order(self) -> str:
    return "red_black" if self.threads > 1 else self.sweep_order


@dataclasses.dataclass
class SweepRecord:
  index: int
  max_update: float
  max_residual: float

  def csv(self) -> str:
    return f"sweep,{self.index},{self.max_update:.17g},{self.max_residual:.17g}"


@dataclasses.dataclass
class SolveResult:
  """Solution plus the sandwich and convergence diagnostics."""

  u: ScalarField
  sweeps: int
  max_update: float
  residual: float

  # over every Interior node, pinned ones included
  residual_with_pinned: float

  sub: ScalarField
  sup: ScalarField
  K_sub: float
  K_super: float
  history: List[SweepRecord]
  pinned_node_count: int

  # max over Interior nodes of sub - u; positive near the boundary by O(h)
  sandwich_gap: float

  @property
  def K(self) -> float:
    return max(self.K_sub, self.K_super)


def _combined_constant(phi_ext, rho, accepts_extra, K_max, what):
  grid.check_same_domain(phi_ext, rho)
  h_phi, valid_phi = cma_operator.complex_hessian_field(phi_ext)
  h_rho, valid_rho = cma_operator.complex_hessian_field(rho)
  check = valid_phi & valid_rho & rho.domain.interior_mask

  def accepts(K):
    hessians = h_phi + K * h_rho
    eig = hermitian.batch_min_eigenvalue(hessians)
    ok = jnp.all(jnp.where(check, eig, 0.0) >= -_SUBSOLUTION_TOL)
    if accepts_extra is not None:
      ok = ok & accepts_extra(hessians, check)
    return bool(ok)

  K = psh_tools.search_constant(accepts, K_max)
  if K is None:
    hessians = h_phi + K_max * h_rho
    eig = np.asarray(hermitian.batch_min_eigenvalue(hessians))
    eig = np.where(np.asarray(check), eig, np.inf)
    worst = tuple(int(k) for k in np.unravel_index(np.argmin(eig), eig.shape))
    raise psh_tools.PshConstantError(
        f"{what}: no K <= {K_max} works; worst node {worst} has minimum"
        f" eigenvalue {eig[worst]:.3e} at K_max"
    )
  return K


def subsolution(
    data: DirichletData, rho: ScalarField, K_max: float = 1e4
) -> Tuple[ScalarField, float]:
  """v = phi_ext + K rho, psh with A_n det >= f at every Interior node."""
  if not psh_tools.uniformly_strictly_psh(rho):
    raise ValueError("rho must be uniformly strictly psh")
  domain = rho.domain
  phi_ext = data.phi_field(domain)
  f_values = data.f_field(domain).values
  a_n = cma_operator.normalization_constant(domain.n)

  def density(hessians, check):
    ma = a_n * hermitian.batch_det(hessians)
    return jnp.all(jnp.where(check, ma - f_values, 0.0) >= -_SUBSOLUTION_TOL)

  K = _combined_constant(phi_ext, rho, density, K_max, "subsolution")
  return phi_ext + K * rho, K


def supersolution_with_constant(
    data: DirichletData, rho: ScalarField, K_max: float = 1e4
) -> Tuple[ScalarField, float]:
  """-v~ = phi_ext - K rho with K from find_psh_K(-phi_ext, rho)."""
  phi_ext = data.phi_field(rho.domain)
  K = psh_tools.find_psh_K(-phi_ext, rho, K_max)
  return phi_ext - K * rho, K


def supersolution(
    data: DirichletData, rho: ScalarField, K_max: float = 1e4
) -> ScalarField:
  return supersolution_with_constant(data, rho, K_max)[0]


def _frame_roots(s, c, wsq, h: float, n: int, method: str):
  """min over frames of the root t of prod_j max((s_j - t)/(h^2|w_j|^2), 0) = c.

  s has shape (..., F, n), c shape (...), wsq shape (F, n).
  """
  c = c[..., None]
  if method == "closed_form" and n == 1:
    t = s[..., 0] - h**2 * wsq[:, 0] * c
  elif method == "closed_form" and n == 2:
    k = c * h**4 * wsq[:, 0] * wsq[:, 1]
    gap = s[..., 0] - s[..., 1]
    t = 0.5 * ((s[..., 0] + s[..., 1]) - jnp.sqrt(gap**2 + 4.0 * k))
  else:
    hi = jnp.min(s, axis=-1)
    lo = hi - h**2 * jnp.max(wsq, axis=-1) * c ** (1.0 / n)
    scale = h**2 * wsq

    def body(_, bounds):
      lo, hi = bounds
      mid = 0.5 * (lo + hi)
      product = jnp.prod(jnp.maximum((s - mid[..., None]) / scale, 0.0), -1)
      ok = product >= c
      return jnp.where(ok, mid, lo), jnp.where(ok, hi, mid)

    t, _ = lax.fori_loop(0, _ROOT_BISECTION_STEPS, body, (lo, hi))
  return jnp.min(t, axis=-1)


@functools.partial(jax.jit, static_argnames=("h", "n", "method"))
def _lexicographic_sweep(
    values, interior, flat_offsets, c, ceiling, wsq, h, n, method
):
  """One Gauss-Seidel pass over `interior` (flat indices, lattice order)."""

  def body(k, carry):
    values, worst = carry
    p = interior[k]
    s = jnp.mean(values[p + flat_offsets], axis=-1)
    t = jnp.minimum(_frame_roots(s, c[p], wsq, h, n, method), ceiling[p])
    worst = jnp.maximum(worst, jnp.abs(t - values[p]))
    return values.at[p].set(t), worst

  return lax.fori_loop(
      0, interior.shape[0], body, (values, jnp.asarray(0.0, values.dtype))
  )


def _frame_means(values, offsets):
  """Means s_j (*shape, F, n) of the four samples of every frame vector."""
  rows = []
  for frame in offsets:
    rows.append(
        jnp.stack(
            [sum(grid.shift(values, o) for o in vector) / 4.0 for vector in frame],
            axis=-1,
        )
    )
  return jnp.stack(rows, axis=-2)


def _make_color_update(offsets, wsq, h, n, method):
  @jax.jit
  def update(values, color, c, ceiling):
    s = _frame_means(values, offsets)
    t = jnp.minimum(_frame_roots(s, c, wsq, h, n, method), ceiling)
    new = jnp.where(color, t, values)
    return new, jnp.max(jnp.abs(new - values))

  return update


def _residual(values, frames, f_values, a_n, h, check):
  diffs = cma_operator.frame_second_differences(values, frames, h)
  ma = a_n * jnp.min(jnp.prod(jnp.maximum(diffs, 0.0), axis=1), axis=0)
  return float(jnp.max(jnp.where(check, jnp.abs(ma - f_values), 0.0)))


def solve_with_diagnostics(
    domain: GridDomain,
    data: DirichletData,
    rho: ScalarField,
    cfg: SolveConfig,
) -> SolveResult:
  """Iterates the monotone scheme from the subsolution to its fixed point.

  Stops once a sweep moves no node by tol_res * h^2 or more and the scheme
  residual |ma_monotone - f| at non-pinned Interior nodes is at most tol_res.
  Nodes pinned at the supersolution ceiling are left out of the stopping rule;
  the residual over every Interior node is reported as residual_with_pinned.

  Raises:
    SolverNotConvergedError: max_sweeps reached first.
    ValueError: f is negative at a sampled node.
  """
  if rho.domain is not domain:
    raise grid.DomainMismatchError("rho lives on a different GridDomain")
  if domain.stencil_radius < cfg.frame_radius:
    raise grid.StencilError(
        f"frame radius {cfg.frame_radius} exceeds the classification stencil"
        f" radius {domain.stencil_radius}"
    )
  f_values = data.f_field(domain).values
  if bool(jnp.any(jnp.where(domain.active_mask, f_values, 0.0) < 0)):
    raise ValueError("f must be nonnegative at every sampled node")

  sub, K_sub = subsolution(data, rho, cfg.K_max)
  sup, K_super = supersolution_with_constant(data, rho, cfg.K_max)
  logging.info("subsolution K = %.6g, supersolution K = %.6g", K_sub, K_super)

  frames = cma_operator.FrameSet.build(domain.n, cfg.frame_radius)
  a_n = cma_operator.normalization_constant(domain.n)
  h, n = domain.h, domain.n
  interior = domain.interior_mask
  wsq = jnp.asarray(frames.squared_norms, dtype=jnp.float64)
  c = jnp.where(interior, f_values / a_n, 0.0)
  ceiling = jnp.where(interior, sup.values, jnp.inf)

  values = jnp.where(interior, sub.values, 0.0)
  values = values.at[tuple(domain.boundary_nodes.T)].set(
      data.boundary_values(domain)
  )

  order = cfg.effective_sweep_order
  if order == "lexicographic":
    strides = np.array(
        [int(np.prod(domain.shape[a + 1 :])) for a in range(domain.dim)]
    )
    flat_offsets = jnp.asarray(frames.sample_offsets @ strides)
    interior_flat = jnp.asarray(np.flatnonzero(domain.labels == grid.INTERIOR))
    c_flat, ceiling_flat = c.reshape(-1), ceiling.reshape(-1)

    def sweep(values):
      flat, worst = _lexicographic_sweep(
          values.reshape(-1),
          interior_flat,
          flat_offsets,
          c_flat,
          ceiling_flat,
          wsq,
          h,
          n,
          cfg.root_finder,
      )
      return flat.reshape(domain.shape), float(worst)

  else:
    parity = np.indices(domain.shape).sum(axis=0) % 2
    colors = [interior & jnp.asarray(parity == k) for k in (0, 1)]
    update = _make_color_update(
        frames.sample_offsets, wsq, h, n, cfg.root_finder
    )

    def sweep(values):
      worst = 0.0
      for color in colors:
        values, change = update(values, color, c, ceiling)
        worst = max(worst, float(change))
      return values, worst

  update_tol = cfg.tol_res * h**2
  residual_tol = cfg.tol_res
  log_file = None
  if cfg.sweep_log_path:
    log_file = open(cfg.sweep_log_path, "w", encoding="utf-8")
    log_file.write(SWEEP_LOG_HEADER + "\n")

  history = []
  try:
    for index in range(1, cfg.max_sweeps + 1):
      values, max_update = sweep(values)
      unpinned = interior & (values < ceiling)
      residual = _residual(values, frames, f_values, a_n, h, unpinned)
      record = SweepRecord(index, max_update, residual)
      history.append(record)
      logging.info(record.csv())
      if log_file is not None:
        log_file.write(record.csv() + "\n")
      if max_update < update_tol and residual <= residual_tol:
        break
    else:
      raise SolverNotConvergedError(
          f"no convergence after {cfg.max_sweeps} sweeps: max update"
          f" {max_update:.3e} (target {update_tol:.3e}), residual"
          f" {residual:.3e} (target {residual_tol:.3e})",
          cfg.max_sweeps,
          residual,
      )
  finally:
    if log_file is not None:
      log_file.close()

  u = ScalarField(domain, values)
  pinned = int(jnp.sum(interior & (values >= ceiling)))
  residual_with_pinned = _residual(values, frames, f_values, a_n, h, interior)
  gap = float(jnp.max(jnp.where(interior, sub.values - values, -jnp.inf)))
  logging.info(
      "converged after %d sweeps, residual %.3e, %d pinned nodes, sandwich"
      " gap %.3e",
      index,
      residual,
      pinned,
      gap,
  )
  return SolveResult(
      u=u,
      sweeps=index,
      max_update=max_update,
      residual=residual,
      residual_with_pinned=residual_with_pinned,
      sub=sub,
      sup=sup,
      K_sub=K_sub,
      K_super=K_super,
      history=history,
      pinned_node_count=pinned,
      sandwich_gap=gap,
  )


def solve(
    domain: GridDomain,
    data: DirichletData,
    rho: ScalarField,
    cfg: Optional[SolveConfig] = None,
) -> ScalarField:
  return solve_with_diagnostics(domain, data, rho, cfg or SolveConfig()).u


@dataclasses.dataclass
class MembershipReport:
  psh: bool
  boundary: bool
  density: bool
  worst_eigenvalue: float
  boundary_defect: float
  density_defect: float
  worst_density_node: Optional[Node]

  @property
  def passed(self) -> bool:
    return self.psh and self.boundary and self.density


def family_membership(
    v: ScalarField,
    data: DirichletData,
    tol: float,
    operator: str = "pointwise",
    family: str = "B_hat",
    frames: Optional[cma_operator.FrameSet] = None,
) -> MembershipReport:
  """Discrete membership of v in the Perron-Bremermann family.

  family "B_hat" asks v = phi on the boundary, "F" asks v <= phi. With
  operator "pointwise" psh means a PSD central-difference Hessian and the
  density is A_n det; with "monotone" psh means nonnegative frame directional
  differences and the density is ma_monotone. Density defects are measured
  against tol * max(1, max f).
  """
  if operator not in ("pointwise", "monotone"):
    raise ValueError(f"unknown operator {operator!r}")
  if family not in ("B_hat", "F"):
    raise ValueError(f"unknown family {family!r}")
  domain = v.domain
  f_values = data.f_field(domain).values
  interior = domain.interior_mask

  if operator == "pointwise":
    hessians, valid = cma_operator.complex_hessian_field(v)
    eig = hermitian.batch_min_eigenvalue(hessians)
    ma, _ = cma_operator.ma_pointwise_field(v)
  else:
    frames = frames or cma_operator.FrameSet.build(domain.n, 1)
    valid = cma_operator.stencil_valid(v, frames.radius)
    diffs = cma_operator.frame_second_differences(v.values, frames, domain.h)
    eig = jnp.min(diffs.reshape((-1,) + domain.shape), axis=0)
    ma, _ = cma_operator.ma_monotone_field(v, frames)
  check = np.asarray(valid & interior)

  eig = np.where(check, np.asarray(eig), np.inf)
  worst_eig = float(np.min(eig)) if check.any() else float("inf")

  trace_gap = np.asarray(v.trace() - data.boundary_values(domain))
  if family == "B_hat":
    boundary_defect = float(np.max(np.abs(trace_gap), initial=0.0))
  else:
    boundary_defect = float(np.max(trace_gap, initial=0.0))

  scale = max(1.0, float(jnp.max(jnp.where(interior, f_values, 0.0))))
  shortfall = np.where(check, np.asarray(f_values - ma), -np.inf)
  density_defect = float(np.max(shortfall)) if check.any() else 0.0
  worst_density = None
  if check.any():
    worst_density = tuple(
        int(k) for k in np.unravel_index(np.argmax(shortfall), shortfall.shape)
    )

  return MembershipReport(
      psh=worst_eig >= -tol,
      boundary=boundary_defect <= tol,
      density=density_defect <= tol * scale,
      worst_eigenvalue=worst_eig,
      boundary_defect=boundary_defect,
      density_defect=density_defect,
      worst_density_node=worst_density,
  )


@dataclasses.dataclass
class DominanceReport:
  samples: int
  rejected: int
  max_defect: float
  worst_node: Optional[Node]
  tolerance: float

  @property
  def passed(self) -> bool:
    return self.max_defect <= self.tolerance


def _defect(member: ScalarField, u: ScalarField):
  mask = np.asarray(u.domain.inside_mask & member.mask & u.mask)
  gap = np.where(mask, np.asarray(member.values - u.values), -np.inf)
  worst = np.unravel_index(np.argmax(gap), gap.shape)
  return float(gap[worst]), tuple(int(k) for k in worst)


def envelope_dominance(
    u: ScalarField,
    data: DirichletData,
    rho: ScalarField,
    n_samples: int = 100,
    seed: int = 0,
    members: Optional[List[ScalarField]] = None,
    K_max: float = 1e4,
) -> DominanceReport:
  """Checks sampled members of the Perron-Bremermann families lie below u.

  Sampled members are phi_ext + K rho - c with K >= K_sub and c >= 0,
  pointwise maxima of pairs of those, and mollified variants pushed down by
  their boundary defect. Each is membership-checked before the comparison;
  rejected members are counted. `members` adds caller-supplied fields.
  """
  grid.check_same_domain(u, rho)
  domain = u.domain
  h = domain.h
  sub, K_sub = subsolution(data, rho, K_max)
  phi_ext = data.phi_field(domain)

  rng = np.random.default_rng(seed)
  pool = [sub] + list(members or [])
  while len(pool) < n_samples:
    kind = len(pool) % 3
    K = K_sub + rng.uniform(0.0, 1.0 + K_sub)
    shift = rng.uniform(0.0, 0.5)
    base = phi_ext + K * rho - shift
    if kind == 1:
      K2 = K_sub + rng.uniform(0.0, 1.0 + K_sub)
      other = phi_ext + K2 * rho - rng.uniform(0.0, 0.5)
      base = grid.maximum(base, other)
    elif kind == 2:
      smooth = psh_tools.mollify(base, rng.uniform(h, 2 * h))
      push = float(
          jnp.max(smooth.trace() - data.boundary_values(domain), initial=0.0)
      )
      base = smooth - max(push, 0.0)
    pool.append(base)

  worst, worst_node, rejected = -np.inf, None, 0
  for member in pool:
    report = family_membership(member, data, _SUBSOLUTION_TOL * 10, family="F")
    if not report.passed:
      rejected += 1
      continue
    defect, node = _defect(member, u)
    if defect > worst:
      worst, worst_node = defect, node
  logging.info(
      "envelope dominance: %d members, %d rejected, max defect %.3e",
      len(pool),
      rejected,
      worst,
  )
  return DominanceReport(len(pool), rejected, worst, worst_node, 10 * h)
