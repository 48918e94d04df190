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

"""Hermitian matrix utilities.

The batched functions take entries of shape (..., n, n) and are what the
field-level operators use; the HermitianForm wrappers serve single nodes.
"""

import dataclasses
from typing import List

import jax
import jax.numpy as jnp
import numpy as np

_HERMITIAN_TOL = 1e-12
_PSD_PRECONDITION_TOL = 1e-10


@dataclasses.dataclass(frozen=True, eq=False)
class HermitianForm:
  """An n x n complex Hermitian matrix."""

  entries: np.ndarray

  def __post_init__(self):
    entries = np.asarray(self.entries, dtype=np.complex128)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
      raise ValueError(f"expected a square matrix, got shape {entries.shape}")
    scale = 1.0 + float(np.max(np.abs(entries)))
    if np.max(np.abs(entries - entries.conj().T)) > _HERMITIAN_TOL * scale:
      raise ValueError("entries are not Hermitian")
    object.__setattr__(self, "entries", entries)

  @classmethod
  def from_matrix(cls, matrix):
    """Hermitian part (M + M*)/2 of an arbitrary square matrix."""
    matrix = np.asarray(matrix, dtype=np.complex128)
    return cls(0.5 * (matrix + matrix.conj().T))

  @classmethod
  def identity(cls, n: int):
    return cls(np.eye(n, dtype=np.complex128))

  @property
  def n(self) -> int:
    return self.entries.shape[0]


def batch_det(entries) -> jax.Array:
  """Real determinants of Hermitian matrices (..., n, n)."""
  entries = jnp.asarray(entries, dtype=jnp.complex128)
  n = entries.shape[-1]
  if n == 1:
    return jnp.real(entries[..., 0, 0])
  if n == 2:
    return jnp.real(
        entries[..., 0, 0] * entries[..., 1, 1]
        - entries[..., 0, 1] * entries[..., 1, 0]
    )
  return jnp.real(jnp.linalg.det(entries))


def batch_eigenvalues(entries) -> jax.Array:
  """Ascending eigenvalues of Hermitian matrices (..., n, n)."""
  entries = jnp.asarray(entries, dtype=jnp.complex128)
  n = entries.shape[-1]
  if n == 1:
    return jnp.real(entries[..., 0, :])
  if n == 2:
    a = jnp.real(entries[..., 0, 0])
    d = jnp.real(entries[..., 1, 1])
    b = jnp.abs(entries[..., 0, 1])
    mean = 0.5 * (a + d)
    radius = jnp.sqrt((0.5 * (a - d)) ** 2 + b**2)
    return jnp.stack([mean - radius, mean + radius], axis=-1)
  return jnp.linalg.eigvalsh(entries)


def batch_min_eigenvalue(entries) -> jax.Array:
  return batch_eigenvalues(entries)[..., 0]


def batch_det_perturb_lower_bound(entries, beta) -> jax.Array:
  """sum_{k=0}^{n} beta^k (det M)^{(n-k)/n}, with 0^0 = 1."""
  entries = jnp.asarray(entries, dtype=jnp.complex128)
  n = entries.shape[-1]
  det_m = jnp.maximum(batch_det(entries), 0.0)
  beta = jnp.asarray(beta, dtype=jnp.float64)
  total = jnp.zeros_like(det_m)
  for k in range(n + 1):
    total = total + jnp.power(beta, k) * jnp.power(det_m, (n - k) / n)
  return total


def det(m: HermitianForm) -> float:
  """Real determinant; rejects a relative imaginary part above 1e-12."""
  value = complex(np.linalg.det(m.entries))
  scale = max(1.0, abs(value), float(np.max(np.abs(m.entries))) ** m.n)
  if abs(value.imag) > _HERMITIAN_TOL * scale:
    raise ValueError(
        f"determinant {value:.6g} has a non-negligible imaginary part"
    )
  return float(batch_det(m.entries))


def eigenvalues(m: HermitianForm) -> np.ndarray:
  return np.asarray(batch_eigenvalues(m.entries))


def is_psd(m: HermitianForm, tol: float = 0.0) -> bool:
  """True iff every eigenvalue is >= -tol."""
  if tol < 0:
    raise ValueError(f"tol must be >= 0, got {tol}")
  return bool(batch_min_eigenvalue(m.entries) >= -tol)


def det_perturb_lower_bound(m: HermitianForm, beta: float) -> float:
  """Lower bound for det(M + beta I) over PSD M."""
  if beta < 0:
    raise ValueError(f"beta must be >= 0, got {beta}")
  if not is_psd(m, _PSD_PRECONDITION_TOL):
    raise ValueError("det_perturb_lower_bound needs a PSD matrix")
  return float(batch_det_perturb_lower_bound(m.entries, beta))


def random_psd(key, count: int, n: int) -> jax.Array:
  """Squares of random Hermitian matrices, shape (count, n, n)."""
  key_re, key_im = jax.random.split(key)
  a = jax.random.normal(key_re, (count, n, n)) + 1j * jax.random.normal(
      key_im, (count, n, n)
  )
  h = 0.5 * (a + jnp.conj(jnp.swapaxes(a, -1, -2)))
  return h @ h


def random_unitary(key, count: int, n: int) -> jax.Array:
  key_re, key_im = jax.random.split(key)
  a = jax.random.normal(key_re, (count, n, n)) + 1j * jax.random.normal(
      key_im, (count, n, n)
  )
  q, r = jnp.linalg.qr(a)
  phases = jnp.diagonal(r, axis1=-2, axis2=-1)
  phases = phases / jnp.abs(phases)
  return q * phases[..., None, :]


@dataclasses.dataclass
class LemmaRow:
  """One line of the property-suite table."""

  check: str
  n: int
  samples: int
  worst_slack: float
  passed: bool


def lemma_property_suite(seed: int = 0, count: int = 10_000) -> List[LemmaRow]:
  """Random-matrix checks of the determinant perturbation inequality.

  Slack is the relative margin of each checked inequality; a row passes when
  its worst slack is >= -1e-9 (or, for identities, its worst error <= tol).
  """
  key = jax.random.PRNGKey(seed)
  rows = []
  for n in (1, 2, 3):
    key, key_m, key_beta = jax.random.split(key, 3)
    m = random_psd(key_m, count, n)
    beta = jax.random.uniform(key_beta, (count,), minval=0.0, maxval=10.0)
    shifted = m + beta[:, None, None] * jnp.eye(n)
    lhs = batch_det(shifted)
    rhs = batch_det_perturb_lower_bound(m, beta)
    slack = (lhs - rhs) / (1.0 + jnp.abs(lhs))
    worst = float(jnp.min(slack))
    rows.append(
        LemmaRow("det_perturb_lower_bound", n, count, worst, worst >= -1e-9)
    )

    signs = batch_det(m)
    psd = batch_min_eigenvalue(m) >= 0.0
    worst_sign = float(jnp.min(jnp.where(psd, signs, 0.0)))
    rows.append(
        LemmaRow("psd_det_nonnegative", n, count, worst_sign, worst_sign >= -1e-10)
    )

    zero = jnp.zeros((1, n, n))
    beta0 = 2.0
    gap = float(
        batch_det(zero + beta0 * jnp.eye(n))[0]
        - batch_det_perturb_lower_bound(zero, beta0)[0]
    )
    rows.append(LemmaRow("equality_at_zero", n, 1, -abs(gap), abs(gap) <= 1e-9))

  key, key_m, key_u = jax.random.split(key, 3)
  m = random_psd(key_m, count, 2)
  u = random_unitary(key_u, count, 2)
  conj = jnp.conj(jnp.swapaxes(u, -1, -2)) @ m @ u
  before = batch_det(m)
  after = batch_det(0.5 * (conj + jnp.conj(jnp.swapaxes(conj, -1, -2))))
  rel = jnp.abs(after - before) / (1.0 + jnp.abs(before))
  worst_rel = float(jnp.max(rel))
  rows.append(
      LemmaRow("unitary_invariance", 2, count, -worst_rel, worst_rel <= 1e-10)
  )
  return rows
