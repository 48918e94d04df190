"""Wall-clock timing of the solver sweeps on the shipped domains."""

import dataclasses
import time
from typing import Optional

import jax

from cma_lab import domains
from cma_lab import envelope_solver
from cma_lab import expressions
from cma_lab.envelope_solver import DirichletData, SolveConfig


@dataclasses.dataclass
class BenchmarkCase:
  """BenchmarkCase."""

  name: str
  domain: str
  h: float
  f: str
  n: int = 2
  sweep_order: str = "lexicographic"
  threads: int = 1
  profiler_output: Optional[str] = None


allcases = [
    BenchmarkCase(name="disc lexicographic", domain="ball", h=0.0625, f="4", n=1),
    BenchmarkCase(
        name="disc red-black", domain="ball", h=0.0625, f="4", n=1, threads=2
    ),
    BenchmarkCase(name="ball lexicographic", domain="ball", h=0.25, f="a_n"),
    BenchmarkCase(name="ball red-black", domain="ball", h=0.25, f="a_n", threads=2),
    BenchmarkCase(name="ellipsoid", domain="ellipsoid", h=0.125, f="one"),
]


def _build(case):
  params = {"n": case.n} if case.domain == "ball" else {}
  spec = domains.make_domain(case.domain, **params)
  domain = spec.classify(case.h)
  data = DirichletData(
      phi=expressions.parse_expression("zero", spec.n),
      f=expressions.parse_expression(case.f, spec.n),
  )
  cfg = SolveConfig(sweep_order=case.sweep_order, threads=case.threads)
  return domain, data, spec.rho_field(domain), cfg


def _run_case(case, warmup=1, runtimes=3):
  domain, data, rho, cfg = _build(case)
  for _ in range(warmup):
    envelope_solver.solve(domain, data, rho, cfg)

  stamps = []
  sweeps = 0
  for i in range(runtimes):
    if case.profiler_output is not None and i == (runtimes - 1):
      jax.profiler.start_trace(case.profiler_output)
    start = time.perf_counter()
    result = envelope_solver.solve_with_diagnostics(domain, data, rho, cfg)
    jax.block_until_ready(result.u.values)
    end = time.perf_counter()
    if case.profiler_output is not None and i == (runtimes - 1):
      jax.profiler.stop_trace()
    stamps.append(end - start)
    sweeps = result.sweeps
  return sum(stamps) / runtimes, sweeps, len(domain.interior_nodes)


def main():
  print("Number of devices: ", len(jax.devices()))
  for case in allcases:
    avg, sweeps, interior = _run_case(case)
    print(
        f"{case.name}: \t{avg * 1000 :.6} ms \t {sweeps} sweeps"
        f" \t {interior} interior nodes"
    )


if __name__ == "__main__":
  main()
