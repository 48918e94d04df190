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

import dataclasses
import os
from typing import Any, Dict, List, Mapping, Optional, Tuple

from absl import logging
import yaml

from cma_lab import domains
from cma_lab import expressions
from cma_lab import grid
from cma_lab import modulus
from cma_lab import psh_tools
from cma_lab import regularity
from cma_lab.envelope_solver import DirichletData, SolveConfig
from cma_lab.grid import GridDomain, ScalarField

SEED_ENV_VAR = "CMA_SEED"


class ConfigError(ValueError):
  """The run configuration cannot be turned into a lab environment."""


@dataclasses.dataclass
# pylint: disable-next=all
class RegularityConfig:
  # None uses +-h along every complex axis
  tau: Optional[List[List[float]]] = None

  # Replaces the computed C_f
  cf_override: Optional[float] = None

  # Sampled node pairs for empirical moduli and c_f
  pair_budget: int = 10_000


@dataclasses.dataclass
# pylint: disable-next=all
class LabEnvironmentData:
  domain: str = "ball"
  domain_params: Dict[str, Any] = dataclasses.field(default_factory=dict)

  phi: str = "zero"
  f: str = "zero"

  # lipschitz, holder:<eps>, domain; None means f carries no modulus
  f_modulus: Optional[str] = None

  h: float = 0.25
  bbox: Optional[List[List[float]]] = None  # overrides the domain default

  frame_radius: int = 1
  tol_res: float = 1e-6
  max_sweeps: int = 5000
  threads: int = 1
  sweep_order: str = "lexicographic"
  root_finder: str = "closed_form"

  rho: str = "candidate"  # candidate, blend

  outdir: str = "."

  regularity: RegularityConfig = dataclasses.field(
      default_factory=RegularityConfig
  )

  seed: int = 0

  @classmethod
  def from_mapping(cls, mapping: Mapping[str, Any]):
    """Builds the record from config-file keys, rejecting unknown ones."""
    mapping = dict(mapping)
    reg_keys = {f.name for f in dataclasses.fields(RegularityConfig)}
    top_keys = {f.name for f in dataclasses.fields(cls)} - {
        "regularity",
        "domain_params",
    }
    unknown = sorted(set(mapping) - reg_keys - top_keys)
    if unknown:
      raise ConfigError(f"unknown config keys {unknown}")
    reg = RegularityConfig(**{k: mapping.pop(k) for k in reg_keys & set(mapping)})
    domain = mapping.pop("domain", cls.domain)
    params = {}
    if isinstance(domain, Mapping):
      if "name" not in domain:
        raise ConfigError("domain mapping needs a 'name'")
      params = {k: v for k, v in domain.items() if k not in ("name", "params")}
      params.update(domain.get("params") or {})
      domain = domain["name"]
    return cls(domain=str(domain), domain_params=params, regularity=reg, **mapping)


def load_config_file(path: str) -> Dict[str, Any]:
  """Reads a JSON or YAML config file into a mapping."""
  try:
    with open(path, encoding="utf-8") as f:
      loaded = yaml.safe_load(f)
  except (OSError, yaml.YAMLError) as e:
    raise ConfigError(f"cannot read config {path}: {e}") from e
  if loaded is None:
    return {}
  if not isinstance(loaded, dict):
    raise ConfigError(f"config {path} must hold a mapping")
  return loaded


def seed_from_env(default: int = 0) -> int:
  value = os.environ.get(SEED_ENV_VAR)
  if value is None or value == "":
    return default
  try:
    return int(value)
  except ValueError as e:
    raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {value!r}") from e


def _check_ranges(data: LabEnvironmentData):
  if not data.h > 0:
    raise ConfigError(f"h must be positive, got {data.h}")
  if data.rho not in ("candidate", "blend"):
    raise ConfigError(f"rho must be 'candidate' or 'blend', got {data.rho!r}")
  if data.regularity.pair_budget < 1:
    raise ConfigError(
        f"pair_budget must be >= 1, got {data.regularity.pair_budget}"
    )
  if data.regularity.cf_override is not None and data.regularity.cf_override < 0:
    raise ConfigError(
        f"cf_override must be >= 0, got {data.regularity.cf_override}"
    )


# pylint: disable-next=all
class LabEnvironment:
  """Config record plus the objects built from it on first use."""

  def __init__(self, data: LabEnvironmentData):
    _check_ranges(data)
    self._data = data
    self._spec = None
    self._grid = None
    self._rho = None
    self._dirichlet = None
    try:
      self.solve_config = SolveConfig(
          frame_radius=data.frame_radius,
          tol_res=data.tol_res,
          max_sweeps=data.max_sweeps,
          sweep_order=data.sweep_order,
          root_finder=data.root_finder,
          threads=data.threads,
          sweep_log_path=os.path.join(data.outdir, "sweeps.csv"),
      )
    except ValueError as e:
      raise ConfigError(str(e)) from e

  def __getattr__(self, name):
    return getattr(self._data, name)

  @property
  def spec(self) -> domains.DomainSpec:
    if self._spec is None:
      try:
        spec = domains.make_domain(self._data.domain, **self._data.domain_params)
      except (TypeError, ValueError) as e:
        raise ConfigError(f"bad domain {self._data.domain!r}: {e}") from e
      if self._data.bbox is not None:
        bbox = tuple(tuple(float(v) for v in pair) for pair in self._data.bbox)
        if len(bbox) != 2 * spec.n or any(len(p) != 2 for p in bbox):
          raise ConfigError(f"bbox needs {2 * spec.n} (lo, hi) pairs")
        spec = dataclasses.replace(spec, bbox=bbox)
      self._spec = spec
    return self._spec

  @property
  def n(self) -> int:
    return self.spec.n

  @property
  def grid(self) -> GridDomain:
    if self._grid is None:
      try:
        self._grid = self.spec.classify(self._data.h, self._data.frame_radius)
      except grid.DegenerateGridError as e:
        raise ConfigError(str(e)) from e
      logging.info(
          "grid %s h=%g: %d interior, %d boundary nodes",
          self.spec.name,
          self._data.h,
          len(self._grid.interior_nodes),
          len(self._grid.boundary_nodes),
      )
    return self._grid

  @property
  def rho(self) -> ScalarField:
    """The configured defining function; ConfigError when the domain has none."""
    if self._rho is None:
      try:
        self._rho = self.spec.rho_field(self.grid, self._data.rho)
      except ValueError as e:
        raise ConfigError(str(e)) from e
    return self._rho

  @property
  def strict_rho(self) -> ScalarField:
    """rho, checked uniformly strictly psh as the solver pipelines require."""
    rho = self.rho
    report = psh_tools.strict_psh_report(rho)
    if not report.passed:
      raise ConfigError(
          f"{self._data.rho} rho of {self.spec.name!r} is not uniformly"
          f" strictly psh: rho - |z|^2 has eigenvalue"
          f" {report.worst_eigenvalue:.3e} at node {report.worst_node}"
      )
    return rho

  def parse(self, text: str) -> expressions.Expression:
    try:
      return expressions.parse_expression(text, self.n)
    except expressions.ExpressionError as e:
      raise ConfigError(str(e)) from e

  def f_root_modulus(self) -> Optional[modulus.ModulusOfContinuity]:
    kind = self._data.f_modulus
    if kind is None:
      return None
    r_max = max(10.0, 2.0 * self.grid.diameter)
    if kind == "lipschitz":
      return modulus.ModulusOfContinuity.identity(r_max)
    if kind.startswith("holder:"):
      try:
        return modulus.holder_modulus(float(kind.split(":", 1)[1]), r_max=r_max)
      except ValueError as e:
        raise ConfigError(f"bad f_modulus {kind!r}: {e}") from e
    if kind == "domain":
      return regularity.domain_modulus(
          self.rho, self._data.regularity.pair_budget, self._data.seed
      )
    raise ConfigError(
        f"f_modulus must be lipschitz, holder:<eps> or domain, got {kind!r}"
    )

  @property
  def dirichlet(self) -> DirichletData:
    if self._dirichlet is None:
      self._dirichlet = DirichletData(
          phi=self.parse(self._data.phi),
          f=self.parse(self._data.f),
          f_root_modulus=self.f_root_modulus(),
      )
    return self._dirichlet

  def taus(self) -> Optional[List[Tuple[float, ...]]]:
    tau = self._data.regularity.tau
    if tau is None:
      return None
    taus = [tuple(float(v) for v in t) for t in tau]
    if any(len(t) != 2 * self.n for t in taus):
      raise ConfigError(f"every tau needs {2 * self.n} real entries")
    return taus

  def describe(self) -> Dict[str, Any]:
    return {
        "domain": self.spec.name,
        "n": self.n,
        "h": float(self._data.h),
        "phi": self._data.phi,
        "f": self._data.f,
        "seed": int(self._data.seed),
    }
