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

"""JSON report records, validated against the schemas shipped in schemas/."""

import dataclasses
import functools
import json
import math
import os
from typing import Any, Dict, List, Optional

import jsonschema
import numpy as np

from cma_lab.grid import GridDomain, Node

SCHEMA_DIR = os.path.join(os.path.dirname(__file__), "schemas")


@dataclasses.dataclass
class CheckRecord:
  """One verified inequality: pass flag, worst node and the tolerance used."""

  check: str
  passed: bool
  worst_value: Optional[float]
  tolerance: Optional[float]
  worst_node: Optional[List[float]] = None

  def to_dict(self) -> Dict[str, Any]:
    return {
        "check": self.check,
        "passed": bool(self.passed),
        "worst_node": self.worst_node,
        "worst_value": finite_or_none(self.worst_value),
        "tolerance": finite_or_none(self.tolerance),
    }


def finite_or_none(value) -> Optional[float]:
  if value is None:
    return None
  value = float(value)
  return value if math.isfinite(value) else None


def node_coordinates(domain: GridDomain, node: Optional[Node]):
  if node is None:
    return None
  return [float(x) for x in domain.node_point(node)]


def point_list(point) -> Optional[List[float]]:
  if point is None:
    return None
  return [float(x) for x in np.asarray(point).reshape(-1)]


@functools.lru_cache(maxsize=None)
def load_schema(name: str) -> Dict[str, Any]:
  with open(os.path.join(SCHEMA_DIR, name), encoding="utf-8") as f:
    return json.load(f)


def validate(payload: Dict[str, Any], schema_name: str):
  """Raises jsonschema.ValidationError when payload breaks the schema."""
  jsonschema.validate(payload, load_schema(schema_name))


def write_json(path: str, payload: Dict[str, Any], schema_name: str):
  validate(payload, schema_name)
  with open(path, "w", encoding="utf-8") as f:
    json.dump(payload, f, indent=2, sort_keys=True)
    f.write("\n")


def report_payload(
    kind: str, checks: List[CheckRecord], extra: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
  payload = {
      "report": kind,
      "passed": all(c.passed for c in checks),
      "checks": [c.to_dict() for c in checks],
  }
  if extra:
    payload["details"] = extra
  return payload
