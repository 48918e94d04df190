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

from typing import Optional

from absl import flags

from cma_lab import domains
from cma_lab.envelope_solver import ROOT_FINDERS, SWEEP_ORDERS
from cma_lab.environment import (
    LabEnvironment,
    LabEnvironmentData,
    load_config_file,
    seed_from_env,
)

FLAGS = flags.FLAGS

flags.DEFINE_string("config", None, "JSON or YAML config file")
flags.DEFINE_enum("domain", "ball", sorted(domains.DOMAINS), "domain name")
flags.DEFINE_string(
    "phi", "zero", "boundary data: builtin name or expression in z1, x1, ..."
)
flags.DEFINE_string("f", "zero", "density f >= 0: builtin name or expression")
flags.DEFINE_string(
    "f_modulus",
    None,
    "modulus of f^(1/n): 'lipschitz', 'holder:<eps>' or 'domain'."
    " Without it the regularity pipeline is skipped",
)
flags.DEFINE_float("h", 0.25, "grid spacing")
flags.DEFINE_integer("frame_radius", 1, "lattice radius of the frame stencil")
flags.DEFINE_float("tol_res", 1e-6, "solver residual tolerance")
flags.DEFINE_integer("max_sweeps", 5000, "sweep budget before giving up")
flags.DEFINE_integer(
    "threads", 1, "values above 1 select the vectorized red-black sweep"
)
flags.DEFINE_string("outdir", ".", "directory for output files")
flags.DEFINE_enum("sweep_order", "lexicographic", SWEEP_ORDERS, "sweep order")
flags.DEFINE_enum("root_finder", "closed_form", ROOT_FINDERS, "node root finder")
flags.DEFINE_enum(
    "rho", "candidate", ["candidate", "blend"], "which defining function to use"
)
flags.DEFINE_float("cf_override", None, "replaces the computed C_f")
flags.DEFINE_integer("pair_budget", 10_000, "sampled node pairs per modulus")

flags.register_validator("h", lambda value: value > 0, "h must be positive")
flags.register_validator(
    "tol_res", lambda value: value > 0, "tol_res must be positive"
)
flags.register_validator(
    "max_sweeps", lambda value: value >= 1, "max_sweeps must be >= 1"
)
flags.register_validator(
    "threads", lambda value: value >= 1, "threads must be >= 1"
)
flags.register_validator(
    "frame_radius", lambda value: value >= 1, "frame_radius must be >= 1"
)
flags.register_validator(
    "pair_budget", lambda value: value >= 1, "pair_budget must be >= 1"
)
flags.register_validator(
    "cf_override",
    lambda value: value is None or value >= 0,
    "cf_override must be >= 0",
)

# Flags that map one to one onto config keys.
_CONFIG_FLAGS = (
    "domain",
    "phi",
    "f",
    "f_modulus",
    "h",
    "frame_radius",
    "tol_res",
    "max_sweeps",
    "threads",
    "outdir",
    "sweep_order",
    "root_finder",
    "rho",
    "cf_override",
    "pair_budget",
)


def config_mapping_from_flags():
  """Config file keys overlaid with the flags given on the command line."""
  mapping = load_config_file(FLAGS.config) if FLAGS.config else {}
  for name in _CONFIG_FLAGS:
    if FLAGS[name].present:
      mapping[name] = FLAGS[name].value
  mapping["seed"] = seed_from_env(int(mapping.get("seed", 0)))
  return mapping


def create_environment_from_flags() -> LabEnvironment:
  """Create the lab environment from cmd flags and the config file"""
  data = LabEnvironmentData.from_mapping(config_mapping_from_flags())
  return LabEnvironment(data)


def outdir_from_flags() -> Optional[str]:
  return FLAGS.outdir if FLAGS["outdir"].present else None
