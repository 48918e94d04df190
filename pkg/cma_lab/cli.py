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
from typing import Any, Dict, List, Optional

from absl import app
from absl import logging
import jax.numpy as jnp

from cma_lab import cma_operator
from cma_lab import config
from cma_lab import domains
from cma_lab import envelope_solver
from cma_lab import grid
from cma_lab import hermitian
from cma_lab import psh_tools
from cma_lab import regularity
from cma_lab import reports
from cma_lab.environment import ConfigError, LabEnvironment
from cma_lab.reports import CheckRecord

EXIT_OK = 0
EXIT_DIAGNOSTIC_FAILURE = 1
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG_ERROR = 3

REPORT_SCHEMA = "report.schema.json"
RUN_SCHEMA = "run.schema.json"


def _outdir(env: LabEnvironment) -> str:
  os.makedirs(env.outdir, exist_ok=True)
  return env.outdir


def _residual_field(u: grid.ScalarField, f_values, frame_radius: int):
  """|ma_monotone(u) - f| at Interior nodes with a full frame stencil."""
  frames = cma_operator.FrameSet.build(u.domain.n, frame_radius)
  ma, valid = cma_operator.ma_monotone_field(u, frames)
  check = valid & u.domain.interior_mask
  return grid.ScalarField(
      u.domain, jnp.where(check, jnp.abs(ma - f_values), 0.0), check
  )


def _run_payload(env: LabEnvironment, result=None, error=None) -> Dict[str, Any]:
  cfg = env.solve_config
  domain = env.grid
  payload = env.describe()
  payload.update(
      frame_radius=cfg.frame_radius,
      tol_res=cfg.tol_res,
      max_sweeps=cfg.max_sweeps,
      sweep_order=cfg.effective_sweep_order,
      root_finder=cfg.root_finder,
      residual_scope="unpinned_interior",
      interior_nodes=int(len(domain.interior_nodes)),
      boundary_nodes=int(len(domain.boundary_nodes)),
  )
  if result is not None:
    payload.update(
        sweeps=result.sweeps,
        residual=reports.finite_or_none(result.residual),
        residual_with_pinned=reports.finite_or_none(
            result.residual_with_pinned
        ),
        max_update=reports.finite_or_none(result.max_update),
        K_sub=reports.finite_or_none(result.K_sub),
        K_super=reports.finite_or_none(result.K_super),
        pinned_node_count=result.pinned_node_count,
        sandwich_gap=reports.finite_or_none(result.sandwich_gap),
        converged=True,
    )
  else:
    payload.update(
        sweeps=error.sweeps,
        residual=reports.finite_or_none(error.residual),
        residual_with_pinned=None,
        max_update=None,
        K_sub=None,
        K_super=None,
        pinned_node_count=0,
        sandwich_gap=None,
        converged=False,
    )
  return payload


def _solve(env: LabEnvironment):
  """Solves the configured problem; returns (result, None) or (None, error)."""
  try:
    result = envelope_solver.solve_with_diagnostics(
        env.grid, env.dirichlet, env.strict_rho, env.solve_config
    )
  except envelope_solver.SolverNotConvergedError as e:
    print(f"solver did not converge: {e}")
    return None, e
  return result, None


def cmd_solve(env: LabEnvironment) -> int:
  """Writes u.csv, residual.csv and run.json."""
  rho, data = env.strict_rho, env.dirichlet
  outdir = _outdir(env)
  result, error = _solve(env)
  reports.write_json(
      os.path.join(outdir, "run.json"), _run_payload(env, result, error), RUN_SCHEMA
  )
  if result is None:
    return EXIT_NOT_CONVERGED
  grid.write_field_csv(result.u, os.path.join(outdir, "u.csv"))
  residual = _residual_field(
      result.u, data.f_field(rho.domain).values, env.solve_config.frame_radius
  )
  grid.write_field_csv(residual, os.path.join(outdir, "residual.csv"))
  print(
      f"solved {env.spec.name} h={env.h}: {result.sweeps} sweeps, residual"
      f" {result.residual:.3e}, {result.pinned_node_count} pinned nodes"
  )
  print(f"wrote u.csv, residual.csv, run.json to {outdir}")
  return EXIT_OK


def _check_domain_records(env: LabEnvironment) -> List[CheckRecord]:
  spec, domain = env.spec, env.grid
  which = env.rho if spec.rho_candidate is not None else None
  records = []
  if which is None:
    # no candidate: exercise the barrier construction on the barrier function
    rho = spec.rho_field(domain, "barrier")
    records.append(CheckRecord("uniformly_strictly_psh", False, None, None))
  else:
    rho = which
    strict = psh_tools.strict_psh_report(rho)
    records.append(
        CheckRecord(
            "uniformly_strictly_psh",
            strict.passed,
            strict.worst_eigenvalue,
            1e-8,
            reports.node_coordinates(domain, strict.worst_node),
        )
    )

  sweep = psh_tools.barrier_sweep(rho)
  worst_zeta = (
      sweep.failures[0].zeta if sweep.failures else sweep.worst_zeta
  )
  records.append(
      CheckRecord(
          "barrier",
          sweep.passed,
          sweep.worst_sup,
          0.0,
          reports.point_list(worst_zeta),
      )
  )

  if which is not None:
    phi_ext = env.dirichlet.phi_field(domain)
    try:
      K = psh_tools.find_psh_K(-phi_ext, rho)
      records.append(CheckRecord("psh_constant", True, K, None))
    except psh_tools.PshConstantError as e:
      logging.warning("%s", e)
      records.append(CheckRecord("psh_constant", False, None, None))
  return records


def cmd_check_domain(env: LabEnvironment) -> int:
  """Writes domain_report.json."""
  records = _check_domain_records(env)
  spec = env.spec
  payload = reports.report_payload(
      "domain",
      records,
      {
          "domain": spec.name,
          "candidate_status": spec.candidate_status,
          "failure_locus": spec.failure_locus,
          "notes": spec.notes,
      },
  )
  path = os.path.join(_outdir(env), "domain_report.json")
  reports.write_json(path, payload, REPORT_SCHEMA)
  _print_checks(records)
  if spec.candidate_status == domains.EXPECTED_TO_FAIL and not payload["passed"]:
    print(f"{spec.name}: candidate fails as expected ({spec.failure_locus})")
  print(f"wrote {path}")
  return EXIT_OK if payload["passed"] else EXIT_DIAGNOSTIC_FAILURE


def cmd_regularity(env: LabEnvironment) -> int:
  """Writes regularity_report.json and modulus.csv."""
  rho, data = env.strict_rho, env.dirichlet
  omega = data.f_root_modulus
  if omega is None:
    logging.warning("f has no modulus metadata; regularity checks skipped")
    print("regularity skipped: set f_modulus to enable it")
    return EXIT_OK
  taus = env.taus()
  outdir = _outdir(env)
  result, _ = _solve(env)
  if result is None:
    return EXIT_NOT_CONVERGED
  path = os.path.join(outdir, "regularity_report.json")
  try:
    report = regularity.run_regularity(
        result.u,
        data,
        rho,
        omega,
        taus=taus,
        cf_override=env.regularity.cf_override,
        budget=env.regularity.pair_budget,
        seed=env.seed,
    )
  except regularity.SandwichViolationError as e:
    print(f"sandwich violated: {e}")
    records = regularity.sandwich_check(result.u, result.sub, result.sup)
    reports.write_json(
        path, reports.report_payload("regularity", records), REPORT_SCHEMA
    )
    return EXIT_DIAGNOSTIC_FAILURE

  records = report.all_checks()
  fit = report.fit
  consts = report.constants
  details = {
      "constants": {k: float(v) for k, v in dataclasses.asdict(consts).items()},
      "holder_epsilon": fit.epsilon,
      "holder_C": fit.C,
      "holder_residual": fit.residual,
      "pair_count": fit.pair_count,
  }
  reports.write_json(
      path, reports.report_payload("regularity", records, details), REPORT_SCHEMA
  )
  regularity.domain_modulus(
      result.u, env.regularity.pair_budget, env.seed
  ).to_csv(os.path.join(outdir, "modulus.csv"))
  _print_checks(records)
  print(f"holder fit: epsilon={fit.epsilon:.3f} C={fit.C:.3e}")
  print(f"wrote {path} and modulus.csv")
  return EXIT_OK if report.passed else EXIT_DIAGNOSTIC_FAILURE


def cmd_extract_rho(env: LabEnvironment) -> int:
  """Writes rho_new.csv and extract_rho_report.json."""
  outdir = _outdir(env)
  try:
    rho_new, report = regularity.defining_function_from_solution(
        env.grid, env.strict_rho, env.solve_config
    )
  except envelope_solver.SolverNotConvergedError as e:
    print(f"solver did not converge: {e}")
    return EXIT_NOT_CONVERGED
  grid.write_field_csv(rho_new, os.path.join(outdir, "rho_new.csv"))
  path = os.path.join(outdir, "extract_rho_report.json")
  payload = reports.report_payload(
      "extract_rho",
      report.checks,
      {"sup_diff_to_reference": reports.finite_or_none(report.sup_diff_to_reference)},
  )
  reports.write_json(path, payload, REPORT_SCHEMA)
  _print_checks(report.checks)
  print(f"wrote rho_new.csv and {path}")
  return EXIT_OK if report.passed else EXIT_DIAGNOSTIC_FAILURE


def cmd_lemmas(seed: int = 0, outdir: Optional[str] = None) -> int:
  """Runs the determinant property suite and prints a table."""
  rows = hermitian.lemma_property_suite(seed)
  print(f"{'check':<28} {'n':>2} {'samples':>8} {'worst':>12}  result")
  for row in rows:
    print(
        f"{row.check:<28} {row.n:>2} {row.samples:>8} {row.worst_slack:>12.3e}"
        f"  {'pass' if row.passed else 'FAIL'}"
    )
  records = [
      CheckRecord(f"{row.check}/n={row.n}", row.passed, row.worst_slack, None)
      for row in rows
  ]
  if outdir:
    os.makedirs(outdir, exist_ok=True)
    reports.write_json(
        os.path.join(outdir, "lemmas_report.json"),
        reports.report_payload("lemmas", records),
        REPORT_SCHEMA,
    )
  return EXIT_OK if all(r.passed for r in rows) else EXIT_DIAGNOSTIC_FAILURE


def list_domains():
  """Print the domain registry."""
  for name, make in domains.DOMAINS.items():
    spec = make()
    print(f"{name:<10} n={spec.n} candidate={spec.candidate_status}")


def _print_checks(records: List[CheckRecord]):
  for r in records:
    value = "-" if r.worst_value is None else f"{r.worst_value:.3e}"
    print(f"  {'ok  ' if r.passed else 'FAIL'} {r.check:<40} {value}")


_COMMANDS = {
    "solve": cmd_solve,
    "check_domain": cmd_check_domain,
    "regularity": cmd_regularity,
    "extract_rho": cmd_extract_rho,
}


def run_command(name: str, env_factory=config.create_environment_from_flags):
  """Runs one subcommand and maps configuration failures to exit code 3."""
  try:
    if name == "lemmas":
      return cmd_lemmas(config.seed_from_env(), config.outdir_from_flags())
    return _COMMANDS[name](env_factory())
  except (ConfigError, psh_tools.PshConstantError) as e:
    print(f"invalid configuration: {e}")
    return EXIT_CONFIG_ERROR


def main():
  """Main function."""

  def main_real(argv):
    """Entry point"""
    commands = ["list", "lemmas"] + list(_COMMANDS)
    if len(argv) < 2 or argv[1] not in commands:
      print(f"Invalid arguments. please specify one of {commands}")
      return EXIT_CONFIG_ERROR
    if argv[1] == "list":
      list_domains()
      return EXIT_OK
    return run_command(argv[1])

  app.run(main_real)
  return 0


if __name__ == "__main__":
  main()
