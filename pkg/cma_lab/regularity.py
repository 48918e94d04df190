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

"""Modulus-of-continuity verification for computed solutions.

The pipeline sandwiches u between the sub- and supersolution, measures the
boundary modulus constant K1, builds translated competitors

  v_tau(z) = u(z + tau) + C_f w(|tau|) |z|^2 - (K1 + K') w(|tau|),

glues them with u, checks the density chain that makes the glued field a
family member, and finally bounds the global modulus of u. Estimated
constants carry a 1.05 safety factor, strict inequalities a 1.01 margin.
"""

import dataclasses
import itertools
import math
from typing import List, Optional, Sequence

from absl import logging
import jax.numpy as jnp
import numpy as np

from cma_lab import cma_operator
from cma_lab import envelope_solver
from cma_lab import grid
from cma_lab import modulus
from cma_lab import psh_tools
from cma_lab.envelope_solver import DirichletData, SolveConfig
from cma_lab.grid import GridDomain, ScalarField
from cma_lab.modulus import ModulusOfContinuity
from cma_lab.reports import CheckRecord, node_coordinates

SAFETY_FACTOR = 1.05
STRICT_MARGIN = 1.01
_ZERO_CF_CONSTANT = 1e-6
_CHAIN_RTOL = 1e-9
_HOLDER_FLOOR = 1e-30
_ANCHOR_CHUNK = 256


class SandwichViolationError(RuntimeError):
  """u left [sub - 10h, super + 10h] at some Interior node."""


@dataclasses.dataclass(frozen=True)
class RegularityConstants:
  A_n: float
  K: float
  K1: float
  K_prime: float
  c_f: float
  C_f: float
  max_norm_sq: float

  def __post_init__(self):
    for name in ("A_n", "K", "K1", "K_prime", "c_f", "C_f", "max_norm_sq"):
      if getattr(self, name) < 0:
        raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
    if not self.K_prime > self.C_f * self.max_norm_sq:
      raise ValueError(
          f"K' = {self.K_prime} must exceed C_f * max |z|^2 ="
          f" {self.C_f * self.max_norm_sq}"
      )

  @classmethod
  def build(
      cls,
      n: int,
      K: float,
      K1: float,
      c_f: float,
      max_norm_sq: float,
      C_f: Optional[float] = None,
  ):
    C_f = compute_Cf(n, c_f) if C_f is None else C_f
    K_prime = STRICT_MARGIN * C_f * max_norm_sq + 1e-12
    return cls(
        A_n=cma_operator.normalization_constant(n),
        K=K,
        K1=K1,
        K_prime=K_prime,
        c_f=c_f,
        C_f=C_f,
        max_norm_sq=max_norm_sq,
    )


@dataclasses.dataclass
class HolderFit:
  epsilon: float
  C: float
  residual: float
  pair_count: int
  raw_slope: float

  def __post_init__(self):
    if not 0.0 < self.epsilon <= 1.0:
      raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
    if not self.C > 0:
      raise ValueError(f"C must be positive, got {self.C}")


def compute_Cf(n: int, c_f: float) -> float:
  """STRICT_MARGIN * max_k binom(n, k)^(1/k) A_n^(-1/n) c_f."""
  if c_f < 0:
    raise ValueError(f"c_f must be >= 0, got {c_f}")
  if c_f == 0:
    return _ZERO_CF_CONSTANT
  a_n = cma_operator.normalization_constant(n)
  best = max(math.comb(n, k) ** (1.0 / k) for k in range(1, n + 1))
  return STRICT_MARGIN * best * a_n ** (-1.0 / n) * c_f


def _root_values(f, domain: GridDomain, mask) -> ScalarField:
  f_field = f if isinstance(f, ScalarField) else ScalarField.from_function(
      domain, f
  )
  if bool(jnp.any(jnp.where(mask, f_field.values, 0.0) < 0)):
    raise ValueError("f must be nonnegative")
  root = jnp.power(jnp.maximum(f_field.values, 0.0), 1.0 / domain.n)
  return f_field.with_values(root)


def estimate_cf(
    f,
    omega: ModulusOfContinuity,
    domain: GridDomain,
    n_pairs: int = 10_000,
    seed: int = 0,
) -> float:
  """SAFETY_FACTOR * max over node pairs of |f^(1/n)(x) - f^(1/n)(y)| / w(|x-y|)."""
  mask = domain.active_mask
  root = _root_values(f, domain, mask)
  pairs = modulus.node_pairs(domain, mask, n_pairs, seed)
  ratio = modulus.pair_ratio_max(
      pairs.differences(root), pairs.distances, omega
  )
  return SAFETY_FACTOR * ratio


def _as_real(tau, n: int) -> np.ndarray:
  tau = np.asarray(tau)
  if np.iscomplexobj(tau) or tau.shape == (n,):
    tau = np.asarray(tau, dtype=np.complex128)
    return np.stack([tau.real, tau.imag], axis=-1).reshape(-1)
  tau = np.asarray(tau, dtype=np.float64)
  if tau.shape != (2 * n,):
    raise ValueError(f"tau needs {n} complex or {2 * n} real entries")
  return tau


def _in_box(shape, offset) -> np.ndarray:
  mask = np.ones(shape, dtype=bool)
  for axis, (count, o) in enumerate(zip(shape, offset)):
    index = np.arange(count) + int(o)
    view = [1] * len(shape)
    view[axis] = count
    mask &= ((index >= 0) & (index < count)).reshape(view)
  return mask


def translate(u: ScalarField, tau_real: np.ndarray, mask):
  """u(z + tau) and the nodes where it is defined with z + tau in `mask`.

  Multilinear interpolation of a fixed translation is a fixed weighted sum of
  lattice shifts, so the whole field is translated at once.
  """
  domain = u.domain
  rel = tau_real / domain.h
  snapped = np.round(rel)
  rel = np.where(np.abs(rel - snapped) <= 1e-9, snapped, rel)
  base = np.floor(rel).astype(np.int64)
  frac = rel - base
  values = jnp.zeros(domain.shape)
  valid = jnp.asarray(np.ones(domain.shape, dtype=bool))
  for corner in itertools.product((0, 1), repeat=domain.dim):
    corner = np.asarray(corner)
    weight = float(np.prod(np.where(corner == 1, frac, 1.0 - frac)))
    if weight <= 0:
      continue
    offset = base + corner
    valid = valid & grid.shift(mask, offset) & jnp.asarray(
        _in_box(domain.shape, offset)
    )
    values = values + weight * grid.shift(u.values, offset)
  return values, valid


def build_vtau(
    u: ScalarField,
    tau,
    consts: RegularityConstants,
    omega: ModulusOfContinuity,
) -> ScalarField:
  """v_tau on the overlap of the closed domain with its translate by -tau."""
  domain = u.domain
  tau_real = _as_real(tau, domain.n)
  length = float(np.linalg.norm(tau_real))
  if length > 4 * domain.h + 1e-12:
    raise ValueError(f"|tau| = {length} exceeds 4h = {4 * domain.h}")
  closed = domain.inside_mask & u.mask
  shifted, overlap = translate(u, tau_real, closed)
  overlap = overlap & closed
  if not bool(jnp.any(overlap)):
    raise ValueError(f"overlap for tau = {tau_real.tolist()} is empty")
  w = omega.evaluate(length)
  values = (
      shifted
      + consts.C_f * w * domain.norm_sq
      - (consts.K1 + consts.K_prime) * w
  )
  return ScalarField(domain, jnp.where(overlap, values, 0.0), overlap)


def glue_Vtau(u: ScalarField, v_tau: ScalarField) -> ScalarField:
  """max(u, v_tau) on the overlap, u elsewhere."""
  grid.check_same_domain(u, v_tau)
  glued = jnp.where(
      v_tau.mask & u.mask, jnp.maximum(u.values, v_tau.values), u.values
  )
  return u.with_values(glued)


def _perturbation_sum(f_shifted, consts: RegularityConstants, w: float, n: int):
  """sum_{k=1}^{n} A_n^{k/n} C_f^k w^k f(. + tau)^{(n-k)/n}."""
  total = jnp.zeros_like(f_shifted)
  base = jnp.maximum(f_shifted, 0.0)
  for k in range(1, n + 1):
    total = total + (
        consts.A_n ** (k / n)
        * (consts.C_f * w) ** k
        * jnp.power(base, (n - k) / n)
    )
  return total


def _worst_record(name, domain, slack, mask, tolerance) -> CheckRecord:
  """Passes when slack >= -tolerance on mask; worst is the minimum slack."""
  mask = np.asarray(mask)
  if not mask.any():
    return CheckRecord(name, True, None, tolerance)
  slack = np.where(mask, np.asarray(slack), np.inf)
  worst = np.unravel_index(np.argmin(slack), slack.shape)
  return CheckRecord(
      name,
      bool(slack[worst] >= -tolerance),
      float(slack[worst]),
      tolerance,
      node_coordinates(domain, worst),
  )


@dataclasses.dataclass
class TauReport:
  tau: List[float]
  checks: List[CheckRecord]

  @property
  def passed(self) -> bool:
    return all(c.passed for c in self.checks)


def verify_translates(
    u: ScalarField,
    data: DirichletData,
    consts: RegularityConstants,
    omega: ModulusOfContinuity,
    taus: Sequence,
    frames: Optional[cma_operator.FrameSet] = None,
) -> List[TauReport]:
  """Per translation: density of v_tau, the density chain, membership of V_tau,
  the perturbation lower bound, and v_tau <= u on the overlap rim."""
  domain = u.domain
  n, h = domain.n, domain.h
  interior = domain.interior_mask
  f_values = data.f_field(domain).values
  max_f = float(jnp.max(jnp.where(domain.active_mask, f_values, 0.0)))
  tol = 20 * h * (1 + max_f)
  reports = []
  for tau in taus:
    tau_real = _as_real(tau, n)
    w = omega.evaluate(float(np.linalg.norm(tau_real)))
    v_tau = build_vtau(u, tau_real, consts, omega)
    overlap = v_tau.mask
    f_shifted = jnp.broadcast_to(
        jnp.asarray(data.f(domain.coordinates + jnp.asarray(tau_real))),
        domain.shape,
    )

    ma, valid = cma_operator.ma_pointwise_field(v_tau)
    check = valid & interior
    checks = [
        _worst_record("density", domain, ma - f_shifted, check, tol),
    ]

    lower = f_shifted + _perturbation_sum(f_shifted, consts, w, n)
    chain_tol = _CHAIN_RTOL * max(1.0, max_f)
    checks.append(
        _worst_record(
            "density_chain", domain, lower - f_values, overlap & interior, chain_tol
        )
    )

    glued = glue_Vtau(u, v_tau)
    membership = envelope_solver.family_membership(
        glued, data, 20 * h, operator="monotone", frames=frames
    )
    checks.append(
        CheckRecord(
            "membership",
            membership.passed,
            max(
                membership.boundary_defect,
                membership.density_defect,
                -membership.worst_eigenvalue,
            ),
            tol,
            node_coordinates(domain, membership.worst_density_node),
        )
    )

    checks.append(_worst_record("lower_bound", domain, ma - lower, check, tol))

    rim = overlap & ~cma_operator.stencil_valid(v_tau, 1)
    checks.append(
        _worst_record("rim", domain, u.values - v_tau.values, rim, tol)
    )
    report = TauReport([float(t) for t in tau_real], checks)
    logging.info(
        "tau %s: %s",
        report.tau,
        ", ".join(f"{c.check}={'ok' if c.passed else 'FAIL'}" for c in checks),
    )
    reports.append(report)
  return reports


def sandwich_check(
    u: ScalarField, sub: ScalarField, sup: ScalarField
) -> List[CheckRecord]:
  domain = u.domain
  interior = domain.interior_mask
  tol = 10 * domain.h
  return [
      _worst_record("sandwich_lower", domain, u.values - sub.values, interior, tol),
      _worst_record("sandwich_upper", domain, sup.values - u.values, interior, tol),
  ]


def _anchor_ratio(points, values, anchors, phi_anchor, omega) -> float:
  """max over node-anchor pairs of |values - phi(anchor)| / w(distance)."""
  best = 0.0
  for start in range(0, len(points), _ANCHOR_CHUNK):
    block = points[start : start + _ANCHOR_CHUNK]
    dist = np.sqrt(np.sum((block[:, None, :] - anchors[None]) ** 2, axis=-1))
    gap = np.abs(values[start : start + _ANCHOR_CHUNK, None] - phi_anchor[None])
    keep = dist > 1e-12
    if keep.any():
      best = max(best, float(np.max(gap[keep] / omega(dist[keep]))))
  return best


def verify_boundary_modulus(
    u: ScalarField,
    data: DirichletData,
    rho: ScalarField,
    omega: ModulusOfContinuity,
    sub: Optional[ScalarField] = None,
    sup: Optional[ScalarField] = None,
) -> float:
  """K1 with |u(z) - phi(zeta)| <= K1 w(|z - zeta|), read off the sandwich.

  Once sub <= u <= super holds, |u(z) - phi(zeta)| is at most the larger of
  |sub(z) - phi(zeta)| and |super(z) - phi(zeta)|, so K1 is SAFETY_FACTOR
  times the largest such ratio of the two barriers over every closed-domain
  node and every boundary anchor. The ratio of u itself carries the
  first-order boundary error and is only logged.

  Raises:
    SandwichViolationError: u leaves [sub, super] by more than 10h.
  """
  domain = u.domain
  if sub is None:
    sub, _ = envelope_solver.subsolution(data, rho)
  if sup is None:
    sup = envelope_solver.supersolution(data, rho)
  for record in sandwich_check(u, sub, sup):
    if not record.passed:
      raise SandwichViolationError(
          f"{record.check} violated by {-record.worst_value:.3e} at"
          f" {record.worst_node} (tolerance {record.tolerance:.3e})"
      )

  nodes = tuple(np.argwhere(np.asarray(domain.inside_mask & u.mask)).T)
  points = np.asarray(domain.coordinates)[nodes]
  anchors = np.asarray(domain.anchor_points)
  phi_anchor = np.asarray(data.boundary_values(domain))
  ratio = lambda f: _anchor_ratio(
      points, np.asarray(f.values)[nodes], anchors, phi_anchor, omega
  )
  K1 = SAFETY_FACTOR * max(ratio(sub), ratio(sup))
  logging.info(
      "boundary modulus K1 = %.6g over %d node-anchor pairs; direct ratio of"
      " u is %.6g",
      K1,
      len(points) * len(anchors),
      ratio(u),
  )
  return K1


def verify_global_modulus(
    u: ScalarField,
    consts: RegularityConstants,
    omega: ModulusOfContinuity,
    budget: int = 10_000,
    seed: int = 0,
) -> CheckRecord:
  """max (u(z') - u(z)) / w(|z - z'|) against (K1 + K')(1 + 10h)."""
  domain = u.domain
  pairs = modulus.node_pairs(domain, domain.inside_mask & u.mask, budget, seed)
  ratio = modulus.pair_ratio_max(pairs.differences(u), pairs.distances, omega)
  bound = (consts.K1 + consts.K_prime) * (1 + 10 * domain.h)
  return CheckRecord("global_modulus", ratio <= bound, ratio, bound)


def holder_fit(
    u: ScalarField,
    budget: int = 10_000,
    seed: int = 0,
    r_max: Optional[float] = None,
    pairs: Optional[modulus.PairSample] = None,
) -> HolderFit:
  """Fits log M = log C + epsilon log d over dyadic distance bins.

  Sampled node pairs with h <= d <= r_max (default: the diameter) are binned
  by h 2^k <= d < h 2^(k+1). Each nonempty bin contributes its largest
  |u(x) - u(y)| at the shortest distance attaining it. epsilon is the slope
  clamped to (0, 1], C = exp(intercept).

  Raises:
    ValueError: fewer than 3 nonempty bins.
  """
  domain = u.domain
  h = domain.h
  r_max = domain.diameter if r_max is None else float(r_max)
  if pairs is None:
    pairs = modulus.node_pairs(
        domain, domain.inside_mask & u.mask, budget, seed
    )
  distances = pairs.distances
  differences = pairs.differences(u)
  keep = (distances >= h * (1 - 1e-9)) & (distances <= r_max * (1 + 1e-9))
  bins = np.floor(np.log2(distances[keep] / h) + 1e-9).astype(np.int64)
  distances, differences = distances[keep], differences[keep]

  radii, maxima = [], []
  for k in np.unique(bins):
    in_bin = bins == k
    top = float(np.max(differences[in_bin]))
    attaining = in_bin & (differences >= top)
    radii.append(float(np.min(distances[attaining])))
    maxima.append(top)
  if len(radii) < 3:
    raise ValueError(
        f"holder_fit needs at least 3 nonempty distance bins in [{h}, {r_max}],"
        f" got {len(radii)}; refine the grid"
    )
  if max(maxima) <= 0:
    return HolderFit(1.0, _HOLDER_FLOOR, 0.0, len(pairs), 0.0)
  slope, intercept, residual = modulus.fit_log_profile(radii, maxima)
  epsilon = float(min(max(slope, 1e-6), 1.0))
  logging.info(
      "holder fit over %d bins: slope %.4f, C %.4g, residual %.3g",
      len(radii),
      slope,
      math.exp(intercept),
      residual,
  )
  return HolderFit(
      epsilon, float(math.exp(intercept)), residual, len(pairs), slope
  )


@dataclasses.dataclass
class ExtractionReport:
  checks: List[CheckRecord]
  sup_diff_to_reference: Optional[float]

  @property
  def passed(self) -> bool:
    return all(c.passed for c in self.checks)


def defining_function_from_solution(
    domain: GridDomain,
    rho_ref: ScalarField,
    cfg: Optional[SolveConfig] = None,
):
  """Solves with phi = -|z|^2, f = 0 and returns rho_new = u + |z|^2.

  Checks rho_new < 0 at Interior nodes whose neighbors are all Interior,
  rho_new <= 10h on the Interior band next to the boundary, |rho_new| <= 10h
  at Boundary nodes, and that rho_new - |z|^2 passes the monotone psh test
  at tolerance 10h.
  """
  cfg = cfg or SolveConfig()
  norm_sq = lambda x: jnp.sum(x**2, axis=-1)
  data = DirichletData(phi=lambda x: -norm_sq(x), f=lambda x: 0.0 * norm_sq(x))
  u = envelope_solver.solve(domain, data, rho_ref, cfg)
  rho_new = u + psh_tools.norm_sq_field(domain)

  h = domain.h
  interior = domain.interior_mask
  deep = interior
  for offset in grid.stencil_offsets(domain.dim, 1):
    deep = deep & grid.shift(interior, offset)
  deep = deep & jnp.asarray(grid.edge_mask(domain.shape, 1))
  band = interior & ~deep
  values = rho_new.values
  checks = [
      _worst_record("interior_negative", domain, -values, deep, 0.0),
      _worst_record("boundary_band", domain, 10 * h - values, band, 0.0),
      _worst_record(
          "boundary_small",
          domain,
          10 * h - jnp.abs(values),
          domain.boundary_mask,
          0.0,
      ),
  ]
  if checks[0].passed and checks[0].worst_value is not None:
    checks[0].passed = checks[0].worst_value > 0
  membership = envelope_solver.family_membership(
      u, data, 10 * h, operator="monotone"
  )
  checks.append(
      CheckRecord(
          "solution_psh",
          membership.psh,
          membership.worst_eigenvalue,
          10 * h,
      )
  )
  sup_diff = grid.sup_norm_diff(rho_new, rho_ref)
  return rho_new, ExtractionReport(checks, sup_diff)


def domain_modulus(
    rho: ScalarField, budget: int = 10_000, seed: int = 0
) -> ModulusOfContinuity:
  """Least concave majorant of the empirical modulus of rho."""
  radii, samples = modulus.empirical_modulus(rho, budget=budget, seed=seed)
  return modulus.least_concave_majorant(radii, samples)


@dataclasses.dataclass
class RootHolderReport:
  epsilon_f: float
  epsilon_root: float
  consistent: bool


def root_holder_consistency(
    f, domain: GridDomain, budget: int = 10_000, seed: int = 0, atol: float = 0.1
) -> RootHolderReport:
  """Fits Hoelder exponents of f and f^(1/n); for f = 0 or f > 0 they agree."""
  f_field = f if isinstance(f, ScalarField) else ScalarField.from_function(
      domain, f
  )
  values = np.asarray(f_field.values)[np.asarray(domain.inside_mask)]
  if np.any(values < 0):
    raise ValueError("f must be nonnegative")
  if np.all(values == 0):
    return RootHolderReport(1.0, 1.0, True)
  if np.any(values == 0):
    raise ValueError("the exponent comparison needs f = 0 or f > 0")
  root = _root_values(f_field, domain, domain.active_mask)
  eps_f = holder_fit(f_field, budget, seed).epsilon
  eps_root = holder_fit(root, budget, seed).epsilon
  return RootHolderReport(eps_f, eps_root, abs(eps_f - eps_root) <= atol)


@dataclasses.dataclass
class RegularityReport:
  constants: RegularityConstants
  checks: List[CheckRecord]
  taus: List[TauReport]
  fit: Optional[HolderFit]

  @property
  def passed(self) -> bool:
    return all(c.passed for c in self.checks) and all(
        t.passed for t in self.taus
    )

  def all_checks(self) -> List[CheckRecord]:
    records = list(self.checks)
    for t in self.taus:
      for c in t.checks:
        records.append(
            CheckRecord(
                f"translate_{c.check}@tau={t.tau}",
                c.passed,
                c.worst_value,
                c.tolerance,
                c.worst_node,
            )
        )
    return records


def default_taus(domain: GridDomain) -> List[np.ndarray]:
  """+-h e_j along the real axis of every complex coordinate."""
  taus = []
  for j in range(domain.n):
    e = np.zeros(domain.n, dtype=np.complex128)
    e[j] = domain.h
    taus += [e, -e]
  return taus


def run_regularity(
    u: ScalarField,
    data: DirichletData,
    rho: ScalarField,
    omega: ModulusOfContinuity,
    taus: Optional[Sequence] = None,
    cf_override: Optional[float] = None,
    budget: int = 10_000,
    seed: int = 0,
    frames: Optional[cma_operator.FrameSet] = None,
) -> RegularityReport:
  """Sandwich, K1, constants, translated competitors, global modulus, fit."""
  domain = u.domain
  sub, K_sub = envelope_solver.subsolution(data, rho)
  sup, K_super = envelope_solver.supersolution_with_constant(data, rho)
  checks = sandwich_check(u, sub, sup)
  K1 = verify_boundary_modulus(u, data, rho, omega, sub=sub, sup=sup)
  checks.append(CheckRecord("boundary_modulus", True, K1, None))

  c_f = estimate_cf(data.f, omega, domain, budget, seed)
  max_norm_sq = float(
      jnp.max(jnp.where(domain.active_mask, domain.norm_sq, 0.0))
  )
  consts = RegularityConstants.build(
      domain.n, max(K_sub, K_super), K1, c_f, max_norm_sq, C_f=cf_override
  )
  logging.info("regularity constants: %s", consts)

  tau_reports = verify_translates(
      u, data, consts, omega, taus or default_taus(domain), frames
  )
  checks.append(verify_global_modulus(u, consts, omega, budget, seed))
  fit = holder_fit(u, budget, seed)
  return RegularityReport(consts, checks, tau_reports, fit)
