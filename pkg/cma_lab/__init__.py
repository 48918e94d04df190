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

import jax

# Every field, determinant and root find in this package runs in float64.
jax.config.update("jax_enable_x64", True)

# pylint: disable-next=wrong-import-position
from cma_lab.grid import classify_nodes, GridDomain, ScalarField

__all__ = ["classify_nodes", "GridDomain", "ScalarField"]
