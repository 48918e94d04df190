import unittest

import jax.numpy as jnp
import numpy as np
from absl.testing import absltest
from absl.testing import parameterized

from cma_lab import envelope_solver
from cma_lab import modulus
from cma_lab import regularity
from cma_lab.grid import ScalarField
from cma_lab.modulus import ModulusOfContinuity
from cma_lab.regularity import RegularityConstants
from tests import helpers


def _solve(domain, rho, phi="zero", f="4"):
  data = helpers.make_dirichlet_data(domain.n, phi=phi, f=f)
  return envelope_solver.solve(domain, data, rho), data


class ConstantsTest(parameterized.TestCase):

  @parameterized.named_parameters(
      ("n2", 2, 1.0, 0.357089),
      ("n1", 1, 1.0, 0.2525),
      ("n1_scaled", 1, 2.0, 0.505),
  )
  def test_compute_cf(self, n, c_f, expected):
    self.assertAlmostEqual(regularity.compute_Cf(n, c_f), expected, places=6)

  def test_compute_cf_zero_and_negative(self):
    self.assertGreater(regularity.compute_Cf(2, 0.0), 0.0)
    with self.assertRaises(ValueError):
      regularity.compute_Cf(2, -1.0)

  def test_build(self):
    consts = RegularityConstants.build(2, K=1.0, K1=2.0, c_f=1.0, max_norm_sq=1.5)
    self.assertEqual(consts.A_n, 32.0)
    self.assertGreater(consts.K_prime, consts.C_f * consts.max_norm_sq)
    override = RegularityConstants.build(
        2, K=1.0, K1=2.0, c_f=1.0, max_norm_sq=1.5, C_f=0.0
    )
    self.assertEqual(override.C_f, 0.0)
    self.assertGreater(override.K_prime, 0.0)

  def test_validation(self):
    with self.assertRaises(ValueError):
      RegularityConstants(4.0, 1.0, 1.0, 0.1, 1.0, 0.5, 1.0)
    with self.assertRaises(ValueError):
      RegularityConstants(4.0, -1.0, 1.0, 1.0, 1.0, 0.5, 1.0)

  def test_holder_fit_validation(self):
    with self.assertRaises(ValueError):
      regularity.HolderFit(0.0, 1.0, 0.0, 10, 0.0)
    with self.assertRaises(ValueError):
      regularity.HolderFit(0.5, 0.0, 0.0, 10, 0.5)


class TranslateTest(absltest.TestCase):

  @classmethod
  def setUpClass(cls):
    super().setUpClass()
    cls.domain, _ = helpers.make_disc_domain(h=0.125)
    cls.x1 = ScalarField.from_function(cls.domain, lambda x: x[..., 0])
    cls.omega = ModulusOfContinuity.identity(10.0)
    cls.consts = RegularityConstants(
        A_n=4.0, K=0.0, K1=0.0, K_prime=1e-9, c_f=0.0, C_f=0.0, max_norm_sq=1.0
    )

  def test_lattice_translation(self):
    h = self.domain.h
    v = regularity.build_vtau(
        self.x1, np.array([h + 0.0j]), self.consts, self.omega
    )
    mask = np.asarray(v.mask)
    self.assertTrue(mask.any())
    x = np.asarray(self.domain.coordinates)[..., 0]
    np.testing.assert_allclose(
        np.asarray(v.values)[mask], (x + h - 1e-9 * h)[mask], atol=1e-12
    )

  def test_half_step_translation_is_interpolated(self):
    h = self.domain.h
    v = regularity.build_vtau(
        self.x1, np.array([0.0, 0.5 * h]), self.consts, self.omega
    )
    mask = np.asarray(v.mask)
    x = np.asarray(self.domain.coordinates)[..., 0]
    np.testing.assert_allclose(
        np.asarray(v.values)[mask], (x - 0.5e-9 * h)[mask], atol=1e-12
    )

  def test_long_translation(self):
    with self.assertRaisesRegex(ValueError, "exceeds 4h"):
      regularity.build_vtau(
          self.x1, np.array([5 * self.domain.h, 0.0]), self.consts, self.omega
      )

  def test_glue(self):
    h = self.domain.h
    v = regularity.build_vtau(self.x1, np.array([h, 0.0]), self.consts, self.omega)
    glued = regularity.glue_Vtau(self.x1, v)
    mask = np.asarray(v.mask)
    np.testing.assert_allclose(
        np.asarray(glued.values)[mask], np.asarray(v.values)[mask]
    )
    np.testing.assert_array_equal(
        np.asarray(glued.values)[~mask], np.asarray(self.x1.values)[~mask]
    )

  def test_default_taus(self):
    taus = regularity.default_taus(self.domain)
    self.assertLen(taus, 2)
    np.testing.assert_allclose(np.abs(taus[0]), [self.domain.h])


class EstimatesTest(unittest.TestCase):

  def test_estimate_cf(self):
    domain, _ = helpers.make_disc_domain(h=0.125)
    f = helpers.make_dirichlet_data(1, f="4*(2+x1)").f
    c_f = regularity.estimate_cf(f, ModulusOfContinuity.identity(10.0), domain)
    self.assertAlmostEqual(c_f, 4.2, places=9)

  def test_estimate_cf_rejects_negative_density(self):
    domain, _ = helpers.make_disc_domain(h=0.25)
    f = helpers.make_dirichlet_data(1, f="x1").f
    with self.assertRaises(ValueError):
      regularity.estimate_cf(f, ModulusOfContinuity.identity(10.0), domain)

  def test_holder_fit_linear(self):
    domain, _ = helpers.make_disc_domain(h=0.125)
    fit = regularity.holder_fit(
        ScalarField.from_function(domain, lambda x: x[..., 0])
    )
    self.assertGreaterEqual(fit.epsilon, 0.95)
    self.assertAlmostEqual(fit.C, 1.0, places=6)
    self.assertGreater(fit.pair_count, 0)

  def test_holder_fit_zero_field(self):
    domain, _ = helpers.make_disc_domain(h=0.125)
    fit = regularity.holder_fit(ScalarField.zeros(domain))
    self.assertEqual(fit.epsilon, 1.0)
    self.assertLess(fit.C, 1e-20)

  def test_holder_fit_needs_three_bins(self):
    domain, _ = helpers.make_disc_domain(h=0.125, radius=0.2)
    with self.assertRaisesRegex(ValueError, "distance bins"):
      regularity.holder_fit(ScalarField.zeros(domain))

  def test_domain_modulus_is_concave_majorant(self):
    domain, spec = helpers.make_disc_domain(h=0.25)
    omega = regularity.domain_modulus(spec.rho_field(domain))
    self.assertEqual(omega.radii[0], 0.0)
    self.assertGreater(omega.evaluate(domain.h), 0.0)

  def test_root_holder_consistency(self):
    domain, _ = helpers.make_disc_domain(h=0.125)
    zero = regularity.root_holder_consistency(lambda x: 0.0 * x[..., 0], domain)
    self.assertTrue(zero.consistent)
    positive = regularity.root_holder_consistency(
        lambda x: 2.0 + x[..., 0], domain
    )
    self.assertTrue(positive.consistent)
    self.assertAlmostEqual(positive.epsilon_f, positive.epsilon_root)
    with self.assertRaises(ValueError):
      regularity.root_holder_consistency(lambda x: x[..., 0], domain)
    with self.assertRaisesRegex(ValueError, "f = 0 or f > 0"):
      regularity.root_holder_consistency(lambda x: 1.0 + x[..., 0], domain)


class PipelineTest(absltest.TestCase):

  @classmethod
  def setUpClass(cls):
    super().setUpClass()
    cls.domain, spec = helpers.make_disc_domain(h=0.25)
    cls.rho = spec.rho_field(cls.domain)
    cls.omega = ModulusOfContinuity.identity(10.0)
    cls.u, cls.data = _solve(cls.domain, cls.rho)

  def test_boundary_modulus(self):
    K1 = regularity.verify_boundary_modulus(
        self.u, self.data, self.rho, self.omega
    )
    self.assertGreater(K1, 0.0)
    self.assertLessEqual(K1, 2.2)

  def test_sandwich_violation(self):
    with self.assertRaises(regularity.SandwichViolationError):
      regularity.verify_boundary_modulus(
          self.u - 3.0, self.data, self.rho, self.omega
      )

  def test_run_regularity_passes(self):
    report = regularity.run_regularity(self.u, self.data, self.rho, self.omega)
    self.assertTrue(report.passed, [c for c in report.all_checks() if not c.passed])
    names = [c.check for c in report.all_checks()]
    self.assertIn("global_modulus", names)
    self.assertIn("boundary_modulus", names)
    self.assertTrue(any(name.startswith("translate_density_chain") for name in names))
    self.assertLen(report.taus, 2)
    self.assertIsNotNone(report.fit)

  def test_zero_cf_override_breaks_density_chain(self):
    u, data = _solve(self.domain, self.rho, f="4*(2+x1)")
    report = regularity.run_regularity(
        u, data, self.rho, self.omega, cf_override=0.0
    )
    self.assertFalse(report.passed)
    failed = [c.check for t in report.taus for c in t.checks if not c.passed]
    self.assertIn("density_chain", failed)


class HolderCalibrationTest(parameterized.TestCase):

  @classmethod
  def setUpClass(cls):
    super().setUpClass()
    cls.domain, _ = helpers.make_disc_domain(h=1.0 / 32)
    cls.pairs = modulus.node_pairs(cls.domain, exhaustive_limit=4000)

  def _fit(self, fn, r_max):
    field = ScalarField.from_function(self.domain, fn)
    return regularity.holder_fit(field, r_max=r_max, pairs=self.pairs)

  def test_square_root_profile(self):
    fit = self._fit(
        lambda x: -jnp.sqrt(jnp.maximum(1.0 - jnp.sum(x**2, axis=-1), 0.0)),
        r_max=0.5,
    )
    self.assertBetween(fit.epsilon, 0.4, 0.6)
    self.assertAlmostEqual(fit.epsilon, fit.raw_slope)

  def test_smooth_solution(self):
    fit = self._fit(lambda x: jnp.sum(x**2, axis=-1) - 1.0, r_max=0.25)
    self.assertBetween(fit.epsilon, 0.9, 1.0)

  def test_constant_field(self):
    fit = self._fit(lambda x: 0.0 * x[..., 0] + 3.0, r_max=0.5)
    self.assertEqual(fit.epsilon, 1.0)
    self.assertLessEqual(fit.C, 1e-12)
    self.assertEqual(fit.residual, 0.0)


class BallPipelineTest(parameterized.TestCase):

  @classmethod
  def setUpClass(cls):
    super().setUpClass()
    cls.domain, spec = helpers.make_ball_domain(h=0.25)
    cls.rho = spec.rho_field(cls.domain)
    cls.omega = ModulusOfContinuity.identity(10.0)
    cls.u, cls.data = _solve(cls.domain, cls.rho, f="a_n")
    h = cls.domain.h
    cls.taus = [
        np.array([h, 0.0, 0.0, 0.0]),
        np.array([-h, 0.0, 0.0, 0.0]),
        np.array([0.0, 0.0, h, 0.0]),
        np.array([0.0, 0.0, -h, 0.0]),
    ]
    cls.report = regularity.run_regularity(
        cls.u, cls.data, cls.rho, cls.omega, taus=cls.taus
    )

  def test_boundary_modulus_of_exact_solution(self):
    K1 = regularity.verify_boundary_modulus(
        self.u, self.data, self.rho, self.omega
    )
    self.assertGreater(K1, 0.0)
    self.assertLessEqual(K1, 2.2)
    self.assertAlmostEqual(self.report.constants.K1, K1)

  def test_pipeline_passes(self):
    failed = [c for c in self.report.all_checks() if not c.passed]
    self.assertEmpty(failed)
    self.assertLen(self.report.taus, 4)
    density = self.report.taus[0].checks[0]
    self.assertEqual(density.check, "density")
    self.assertAlmostEqual(density.tolerance, 20 * self.domain.h * 33)

  @parameterized.named_parameters(("z1", 0), ("z2", 2))
  def test_opposite_translations_agree(self, index):
    forward, backward = self.report.taus[index], self.report.taus[index + 1]
    np.testing.assert_allclose(forward.tau, -np.asarray(backward.tau))
    self.assertEqual(forward.passed, backward.passed)
    self.assertEqual(
        [c.check for c in forward.checks], [c.check for c in backward.checks]
    )


class ExtractionTest(unittest.TestCase):

  def test_disc(self):
    domain, spec = helpers.make_disc_domain(h=0.125)
    rho = spec.rho_field(domain)
    rho_new, report = regularity.defining_function_from_solution(domain, rho)
    self.assertTrue(report.passed, report.checks)
    self.assertEqual(
        [c.check for c in report.checks],
        ["interior_negative", "boundary_band", "boundary_small", "solution_psh"],
    )
    self.assertLess(report.sup_diff_to_reference, 10 * domain.h)
    self.assertIs(rho_new.domain, domain)

  def test_ball(self):
    domain, spec = helpers.make_ball_domain(h=0.25)
    rho = spec.rho_field(domain)
    rho_new, report = regularity.defining_function_from_solution(domain, rho)
    self.assertTrue(report.passed, report.checks)
    h = domain.h
    self.assertLessEqual(report.sup_diff_to_reference, 10 * h)
    values = np.asarray(rho_new.values)
    self.assertTrue(np.all(values[np.asarray(domain.interior_mask)] < 0))
    self.assertLessEqual(
        float(np.max(np.abs(values[np.asarray(domain.boundary_mask)]))), 10 * h
    )


if __name__ == "__main__":
  unittest.main()
