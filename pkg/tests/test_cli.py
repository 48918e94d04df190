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

import json
import os
import unittest

import numpy as np
from absl.testing import absltest
from absl.testing import parameterized

from cma_lab import cli
from cma_lab.environment import RegularityConfig
from tests import helpers


def _load(outdir, name):
  with open(os.path.join(outdir, name), encoding="utf-8") as f:
    return json.load(f)


class SolveCommandTest(parameterized.TestCase):

  def test_ball(self):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(outdir, f="a_n")
    self.assertEqual(cli.cmd_solve(env), cli.EXIT_OK)
    for name in ("u.csv", "residual.csv", "run.json", "sweeps.csv"):
      self.assertTrue(os.path.exists(os.path.join(outdir, name)), name)
    run = _load(outdir, "run.json")
    self.assertTrue(run["converged"])
    self.assertEqual(run["n"], 2)
    self.assertEqual(run["residual_scope"], "unpinned_interior")
    self.assertLessEqual(run["residual"], run["tol_res"])
    self.assertGreaterEqual(run["residual_with_pinned"], run["residual"])
    rows = np.loadtxt(os.path.join(outdir, "u.csv"), delimiter=",", skiprows=1)
    exact = np.sum(rows[:, :4] ** 2, axis=1) - 1.0
    inside = exact < 0
    self.assertLessEqual(
        float(np.max(np.abs(rows[inside, 4] - exact[inside]))), 10 * env.h
    )

  def test_same_seed_gives_identical_solution_file(self):
    contents = []
    for _ in range(2):
      outdir = self.create_tempdir().full_path
      env = helpers.make_env(outdir, f="a_n", seed=3)
      self.assertEqual(cli.cmd_solve(env), cli.EXIT_OK)
      with open(os.path.join(outdir, "u.csv"), "rb") as f:
        contents.append(f.read())
    self.assertEqual(contents[0], contents[1])

  def test_not_converged(self):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(
        outdir, domain_params={"n": 1}, f="4*(2+x1)", max_sweeps=1
    )
    self.assertEqual(cli.cmd_solve(env), cli.EXIT_NOT_CONVERGED)
    run = _load(outdir, "run.json")
    self.assertFalse(run["converged"])
    self.assertEqual(run["sweeps"], 1)
    self.assertFalse(os.path.exists(os.path.join(outdir, "u.csv")))

  def test_bidisc_is_a_config_error(self):
    outdir = self.create_tempdir().full_path
    code = cli.run_command(
        "solve", lambda: helpers.make_env(outdir, domain="bidisc")
    )
    self.assertEqual(code, cli.EXIT_CONFIG_ERROR)

  @parameterized.named_parameters(
      ("solve", "solve"),
      ("regularity", "regularity"),
      ("extract_rho", "extract_rho"),
  )
  def test_egg_candidate_is_a_config_error(self, command):
    outdir = self.create_tempdir().full_path
    code = cli.run_command(
        command,
        lambda: helpers.make_env(outdir, domain="egg", f_modulus="lipschitz"),
    )
    self.assertEqual(code, cli.EXIT_CONFIG_ERROR)
    self.assertEmpty(os.listdir(outdir))

  def test_egg_blend_solves(self):
    outdir = self.create_tempdir().full_path
    code = cli.run_command(
        "solve", lambda: helpers.make_env(outdir, domain="egg", rho="blend")
    )
    self.assertEqual(code, cli.EXIT_OK)
    self.assertTrue(_load(outdir, "run.json")["converged"])

  def test_bad_expression_is_a_config_error(self):
    outdir = self.create_tempdir().full_path
    code = cli.run_command(
        "solve", lambda: helpers.make_env(outdir, f="sqrt(x1) +")
    )
    self.assertEqual(code, cli.EXIT_CONFIG_ERROR)


class CheckDomainCommandTest(parameterized.TestCase):

  @parameterized.named_parameters(
      ("ball", "ball", cli.EXIT_OK, True),
      ("egg", "egg", cli.EXIT_DIAGNOSTIC_FAILURE, False),
      ("bidisc", "bidisc", cli.EXIT_DIAGNOSTIC_FAILURE, False),
  )
  def test_check_domain(self, domain, expected_code, passed):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(outdir, domain=domain)
    self.assertEqual(cli.cmd_check_domain(env), expected_code)
    report = _load(outdir, "domain_report.json")
    self.assertEqual(report["report"], "domain")
    self.assertEqual(report["passed"], passed)
    names = [c["check"] for c in report["checks"]]
    self.assertIn("uniformly_strictly_psh", names)
    self.assertIn("barrier", names)

  def test_egg_reports_failure_locus(self):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(outdir, domain="egg")
    cli.cmd_check_domain(env)
    report = _load(outdir, "domain_report.json")
    self.assertEqual(report["details"]["candidate_status"], "expected_to_fail")
    strict = next(
        c for c in report["checks"] if c["check"] == "uniformly_strictly_psh"
    )
    self.assertFalse(strict["passed"])
    self.assertLess(np.linalg.norm(strict["worst_node"][2:]), 0.5)


class RegularityCommandTest(absltest.TestCase):

  def test_disc_lipschitz(self):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(
        outdir, domain_params={"n": 1}, f="4", f_modulus="lipschitz"
    )
    self.assertEqual(cli.cmd_regularity(env), cli.EXIT_OK)
    report = _load(outdir, "regularity_report.json")
    self.assertTrue(report["passed"])
    self.assertIn("constants", report["details"])
    self.assertGreater(report["details"]["constants"]["K_prime"], 0.0)
    with open(os.path.join(outdir, "modulus.csv"), encoding="utf-8") as f:
      self.assertEqual(f.readline().strip(), "r,omega")

  def test_skipped_without_modulus(self):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(outdir, domain_params={"n": 1}, f="4")
    self.assertEqual(cli.cmd_regularity(env), cli.EXIT_OK)
    self.assertFalse(
        os.path.exists(os.path.join(outdir, "regularity_report.json"))
    )

  def test_zero_cf_override_fails(self):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(
        outdir,
        domain_params={"n": 1},
        f="4*(2+x1)",
        f_modulus="lipschitz",
        regularity=RegularityConfig(cf_override=0.0),
    )
    self.assertEqual(cli.cmd_regularity(env), cli.EXIT_DIAGNOSTIC_FAILURE)
    report = _load(outdir, "regularity_report.json")
    failed = [c["check"] for c in report["checks"] if not c["passed"]]
    self.assertTrue(any("density_chain" in name for name in failed), failed)


class ExtractRhoCommandTest(parameterized.TestCase):

  @parameterized.named_parameters(
      ("disc", "ball", {"n": 1}, 0.125),
      ("ellipse", "ellipsoid", {"n": 1, "semiaxes": [1.5]}, 0.125),
  )
  def test_extract(self, domain, params, h):
    outdir = self.create_tempdir().full_path
    env = helpers.make_env(outdir, domain=domain, domain_params=params, h=h)
    self.assertEqual(cli.cmd_extract_rho(env), cli.EXIT_OK)
    report = _load(outdir, "extract_rho_report.json")
    self.assertEqual(report["report"], "extract_rho")
    self.assertTrue(report["passed"])
    self.assertTrue(os.path.exists(os.path.join(outdir, "rho_new.csv")))


class LemmasCommandTest(absltest.TestCase):

  def test_lemmas(self):
    outdir = self.create_tempdir().full_path
    self.assertEqual(cli.cmd_lemmas(seed=0, outdir=outdir), cli.EXIT_OK)
    report = _load(outdir, "lemmas_report.json")
    self.assertTrue(report["passed"])
    self.assertEqual(report["report"], "lemmas")


if __name__ == "__main__":
  unittest.main()
