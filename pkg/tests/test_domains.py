import unittest

import numpy as np
from absl.testing import parameterized

from cma_lab import domains
from cma_lab import psh_tools


class BallTest(parameterized.TestCase):

  def test_bad_radius(self):
    with self.assertRaises(ValueError):
      domains.make_ball(n=2, radius=0.0)

  def test_complex_center(self):
    spec = domains.make_ball(n=1, radius=0.5, center=[0.5 + 0.25j])
    self.assertEqual(spec.bbox, ((-0.125, 1.125), (-0.375, 0.875)))
    self.assertAlmostEqual(
        float(spec.defining_fn(np.array([0.5, 0.25]))), -0.25
    )

  def test_center_shape_mismatch(self):
    with self.assertRaises(ValueError):
      domains.make_ball(n=2, center=[0.0, 0.0, 0.0])

  def test_candidate_is_defining_function(self):
    spec = domains.make_ball(n=2)
    self.assertEqual(spec.candidate_status, domains.PASSES)
    self.assertIs(spec.rho_candidate, spec.defining_fn)


class EllipsoidTest(unittest.TestCase):

  def test_rho_is_uniformly_strictly_psh(self):
    spec = domains.make_ellipsoid()
    domain = spec.classify(0.25)
    self.assertTrue(psh_tools.uniformly_strictly_psh(spec.rho_field(domain)))

  def test_bad_semiaxes(self):
    with self.assertRaises(ValueError):
      domains.make_ellipsoid(n=2, semiaxes=(1.0,))
    with self.assertRaises(ValueError):
      domains.make_ellipsoid(n=2, semiaxes=(1.0, -0.5))


class EggTest(parameterized.TestCase):

  @parameterized.named_parameters(
      ("m_one", {"m": 1}),
      ("m_fraction", {"m": 2.5}),
      ("blend_high", {"blend": 1.5}),
      ("blend_one", {"blend": 1.0}),
  )
  def test_bad_parameters(self, params):
    with self.assertRaises(ValueError):
      domains.make_egg(**params)

  def test_failure_locus(self):
    spec = domains.make_egg(m=2)
    self.assertEqual(spec.candidate_status, domains.EXPECTED_TO_FAIL)
    self.assertIn("0.5", spec.failure_locus)

  def test_blend_candidate(self):
    spec = domains.make_egg(m=2)
    domain = spec.classify(0.25)
    self.assertFalse(
        psh_tools.uniformly_strictly_psh(spec.rho_field(domain))
    )
    blend = spec.rho_field(domain, "blend")
    report = psh_tools.strict_psh_report(blend)
    self.assertTrue(report.passed, report.worst_eigenvalue)

  @parameterized.parameters(0.0, 0.25, 0.9)
  def test_blend_weights_stay_strictly_psh(self, weight):
    spec = domains.make_egg(m=3, blend=weight)
    domain = spec.classify(0.25)
    self.assertTrue(
        psh_tools.uniformly_strictly_psh(spec.rho_field(domain, "blend"))
    )


class BidiscTest(unittest.TestCase):

  def test_no_candidate(self):
    spec = domains.make_bidisc()
    domain = spec.classify(0.25)
    self.assertEqual(spec.candidate_status, domains.NO_CANDIDATE)
    with self.assertRaisesRegex(ValueError, "ships no"):
      spec.rho_field(domain)
    barrier = spec.rho_field(domain, "barrier")
    values = np.asarray(barrier.values)[tuple(domain.interior_nodes.T)]
    self.assertTrue(np.all(values < 0))


class RegistryTest(unittest.TestCase):

  def test_make_domain(self):
    spec = domains.make_domain("ellipsoid", semiaxes=(1.0, 0.75))
    self.assertEqual(spec.name, "ellipsoid")
    self.assertEqual(spec.n, 2)

  def test_unknown_domain(self):
    with self.assertRaisesRegex(ValueError, "unknown domain"):
      domains.make_domain("torus")


if __name__ == "__main__":
  unittest.main()
