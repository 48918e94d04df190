from cma_lab import domains
from cma_lab import expressions
from cma_lab.envelope_solver import DirichletData
from cma_lab.environment import LabEnvironment, LabEnvironmentData


# pylint: disable-next=all
def make_disc_domain(h=0.125, radius=1.0, stencil_radius=1):
  spec = domains.make_ball(n=1, radius=radius)
  return spec.classify(h, stencil_radius), spec


# pylint: disable-next=all
def make_ball_domain(h=0.25, stencil_radius=1):
  spec = domains.make_ball(n=2)
  return spec.classify(h, stencil_radius), spec


# pylint: disable-next=all
def make_dirichlet_data(n, phi="zero", f="zero", f_root_modulus=None):
  return DirichletData(
      phi=expressions.parse_expression(phi, n),
      f=expressions.parse_expression(f, n),
      f_root_modulus=f_root_modulus,
  )


# pylint: disable-next=all
def make_env(outdir, env_data_update_fn=lambda _: None, **fields):
  environment_data = LabEnvironmentData(outdir=outdir, **fields)
  env_data_update_fn(environment_data)
  return LabEnvironment(environment_data)
