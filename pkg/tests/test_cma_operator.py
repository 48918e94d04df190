import unittest

import jax
import jax.numpy as jnp
import numpy as np
from absl.testing import parameterized

from cma_lab import cma_operator
from cma_lab import domains
from cma_lab import grid
from cma_lab import hermitian
from cma_lab.grid import ScalarField
from tests import helpers


def _center(domain):
  """The lattice node at the origin."""
  node = np.rint(-np.asarray(domain.lower) / domain.h).astype(int)
  return tuple(int(k) for k in node)


class PointwiseOperatorTest(parameterized.TestCase):

  @classmethod
  def setUpClass(cls):
    super().setUpClass()
    cls.disc, _ = helpers.make_disc_domain(h=0.125)
    cls.ball, _ = helpers.make_ball_domain(h=0.25)

  @parameterized.named_parameters(
      ("n1", 1, 4.0),
      ("n2", 2, 32.0),
      ("n3", 3, 384.0),
  )
  def test_normalization_constant(self, n, expected):
    self.assertEqual(cma_operator.normalization_constant(n), expected)

  def test_norm_squared_has_identity_hessian(self):
    u = ScalarField.from_function(self.ball, lambda x: jnp.sum(x**2, axis=-1))
    node = _center(self.ball)
    m = cma_operator.complex_hessian(u, node)
    np.testing.assert_allclose(m.entries, np.eye(2), atol=1e-10)
    self.assertAlmostEqual(cma_operator.ma_pointwise(u, node), 32.0, places=8)

  def test_mixed_term(self):
    # Re(z1 conj z2) = x1 x2 + y1 y2 has off-diagonal entries 1/2
    fn = lambda x: x[..., 0] * x[..., 2] + x[..., 1] * x[..., 3]
    u = ScalarField.from_function(self.ball, fn)
    m = cma_operator.complex_hessian(u, _center(self.ball))
    np.testing.assert_allclose(
        m.entries, [[0.0, 0.5], [0.5, 0.0]], atol=1e-10
    )

  def test_pluriharmonic_function_has_zero_hessian(self):
    # Re(z1^2) = x1^2 - y1^2
    u = ScalarField.from_function(
        self.disc, lambda x: x[..., 0] ** 2 - x[..., 1] ** 2
    )
    hessians, valid = cma_operator.complex_hessian_field(u)
    values = np.abs(np.asarray(hessians))[np.asarray(valid)]
    self.assertLess(float(np.max(values)), 1e-9)

  def test_field_matches_pointwise(self):
    u = ScalarField.from_function(
        self.disc, lambda x: x[..., 0] ** 4 + jnp.sum(x**2, axis=-1)
    )
    ma, valid = cma_operator.ma_pointwise_field(u)
    for node in self.disc.interior_nodes[::7]:
      node = tuple(node)
      self.assertTrue(bool(valid[node]))
      self.assertAlmostEqual(
          float(ma[node]), cma_operator.ma_pointwise(u, node), places=8
      )

  def test_stencil_outside_field(self):
    u = ScalarField.zeros(self.disc)
    with self.assertRaises(grid.StencilError):
      cma_operator.complex_hessian(u, (0, 0))

  def test_directional_second_difference(self):
    u = ScalarField.from_function(self.disc, lambda x: jnp.sum(x**2, axis=-1))
    node = _center(self.disc)
    v = np.array([1.0 + 0.0j])
    self.assertAlmostEqual(
        cma_operator.directional_second_difference(u, node, v), 1.0, places=10
    )
    diagonal = np.array([(1.0 + 1.0j) / np.sqrt(2.0)])
    self.assertAlmostEqual(
        cma_operator.directional_second_difference(
            u, node, diagonal, step=np.sqrt(2.0) * self.disc.h
        ),
        1.0,
        places=10,
    )
    with self.assertRaises(ValueError):
      cma_operator.directional_second_difference(u, node, np.array([2.0]))


class FrameSetTest(parameterized.TestCase):

  def test_one_dimensional_frames(self):
    frames = cma_operator.FrameSet.build(1, 1)
    # 1 and 1 + i modulo the units
    self.assertLen(frames, 2)
    np.testing.assert_allclose(frames.squared_norms[:, 0], [1.0, 2.0])

  @parameterized.named_parameters(
      ("radius1", 1),
      ("radius2", 2),
  )
  def test_two_dimensional_frames_are_orthogonal(self, radius):
    frames = cma_operator.FrameSet.build(2, radius)
    w = frames.lattice_vectors
    inner = np.sum(w[:, 0] * np.conj(w[:, 1]), axis=-1)
    np.testing.assert_allclose(np.abs(inner), 0.0, atol=1e-12)
    np.testing.assert_allclose(frames.squared_norms[0], [1.0, 1.0])
    self.assertTrue(np.all(np.abs(frames.lattice_vectors.real) <= radius))
    self.assertTrue(np.all(np.abs(frames.lattice_vectors.imag) <= radius))
    unit = np.linalg.norm(frames.unit_frames, axis=-1)
    np.testing.assert_allclose(unit, 1.0, atol=1e-12)

  def test_wider_radius_adds_frames(self):
    self.assertGreater(
        len(cma_operator.FrameSet.build(2, 2)),
        len(cma_operator.FrameSet.build(2, 1)),
    )

  def test_bad_arguments(self):
    with self.assertRaises(ValueError):
      cma_operator.FrameSet.build(2, 0)
    with self.assertRaises(NotImplementedError):
      cma_operator.FrameSet.build(3, 1)

  def test_sample_offsets_shape(self):
    frames = cma_operator.FrameSet.build(2, 1)
    self.assertEqual(frames.sample_offsets.shape, (len(frames), 2, 4, 4))


class MonotoneOperatorTest(unittest.TestCase):

  def test_quadratic_is_exact(self):
    domain, _ = helpers.make_disc_domain(h=0.125)
    frames = cma_operator.FrameSet.build(1, 1)
    u = ScalarField.from_function(domain, lambda x: jnp.sum(x**2, axis=-1))
    ma, valid = cma_operator.ma_monotone_field(u, frames)
    check = np.asarray(valid & domain.interior_mask)
    self.assertTrue(check.any())
    np.testing.assert_allclose(np.asarray(ma)[check], 4.0, atol=1e-9)
    node = tuple(domain.interior_nodes[len(domain.interior_nodes) // 2])
    self.assertAlmostEqual(cma_operator.ma_monotone(u, node, frames), 4.0)

  def test_concave_function_has_zero_monotone_value(self):
    domain, _ = helpers.make_disc_domain(h=0.125)
    frames = cma_operator.FrameSet.build(1, 1)
    u = ScalarField.from_function(domain, lambda x: -jnp.sum(x**2, axis=-1))
    ma, valid = cma_operator.ma_monotone_field(u, frames)
    self.assertEqual(float(jnp.max(jnp.abs(jnp.where(valid, ma, 0.0)))), 0.0)

  def test_monotone_in_neighbor_values(self):
    domain, _ = helpers.make_ball_domain(h=0.25)
    frames = cma_operator.FrameSet.build(2, 1)
    u = ScalarField.from_function(domain, lambda x: jnp.sum(x**2, axis=-1))
    node = _center(domain)
    neighbor = list(node)
    neighbor[0] += 1
    bumped = u.with_values(u.values.at[tuple(neighbor)].add(0.1))
    base, _ = cma_operator.ma_monotone_field(u, frames)
    raised, _ = cma_operator.ma_monotone_field(bumped, frames)
    self.assertGreaterEqual(float(raised[node]), float(base[node]))

  def test_lattice_frames_against_random_unitary_frames(self):
    domain, _ = helpers.make_ball_domain(h=0.25)
    frames = cma_operator.FrameSet.build(2, 2)
    weights = np.array([2.0, 1.0])
    u = ScalarField.from_function(
        domain, lambda x: 2.0 * domains.abs2(x, 0) + domains.abs2(x, 1)
    )
    lattice = cma_operator.ma_monotone(u, _center(domain), frames)

    # a quadratic's directional difference along unit v is exactly v* H v
    unitary = np.asarray(
        hermitian.random_unitary(jax.random.PRNGKey(0), 100_000, 2)
    )
    directional = np.einsum("j,fjk->fk", weights, np.abs(unitary) ** 2)
    random_min = 32.0 * float(np.min(np.prod(directional, axis=1)))

    self.assertGreaterEqual(lattice, 32.0 * 2.0 - 1e-8)
    self.assertGreaterEqual(random_min, 32.0 * 2.0 - 1e-8)
    self.assertLessEqual(lattice, random_min + 1e-6)


if __name__ == "__main__":
  unittest.main()
