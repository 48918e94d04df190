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

"""Expression strings for boundary data and densities.

Grammar: arithmetic over the real coordinates x1, y1, ..., xn, yn, the
complex coordinates z1, ..., zn, numbers, I, pi, and the functions abs2, re,
im, pow, exp. A few names are builtins (see BUILTINS). Expressions compile
through sympy.lambdify to jax.numpy.
"""

import dataclasses
import math
from typing import Callable, Dict

import jax.numpy as jnp
import sympy
from sympy.core.function import AppliedUndef
from sympy.parsing import sympy_parser


class ExpressionError(ValueError):
  """The string is not a real-valued expression of the grammar."""


def _norm2(n):
  return " + ".join(f"abs2(z{j + 1})" for j in range(n))


BUILTINS: Dict[str, Callable[[int], str]] = {
    "zero": lambda n: "0",
    "one": lambda n: "1",
    "norm2": _norm2,
    "minus_norm2": lambda n: f"-({_norm2(n)})",
    "re_z1": lambda n: "x1",
    "a_n": lambda n: str(4**n * math.factorial(n)),
}


def _abs2(w):
  return sympy.re(w) ** 2 + sympy.im(w) ** 2


@dataclasses.dataclass(frozen=True, eq=False)
class Expression:
  """A parsed expression, callable on points of shape (..., 2n)."""

  text: str
  n: int
  expr: sympy.Expr
  _compiled: Callable

  def __call__(self, x):
    x = jnp.asarray(x)
    values = self._compiled(*[x[..., k] for k in range(2 * self.n)])
    return jnp.broadcast_to(
        jnp.asarray(values, dtype=jnp.float64), x.shape[:-1]
    )


def parse_expression(text: str, n: int) -> Expression:
  """Parses `text` over C^n."""
  source = str(text).strip()
  if source in BUILTINS:
    source = BUILTINS[source](n)
  reals = []
  local_dict = {}
  for j in range(1, n + 1):
    x, y = sympy.symbols(f"x{j} y{j}", real=True)
    reals += [x, y]
    local_dict[f"x{j}"] = x
    local_dict[f"y{j}"] = y
    local_dict[f"z{j}"] = x + sympy.I * y
  local_dict.update(
      abs2=_abs2, re=sympy.re, im=sympy.im, pow=sympy.Pow, exp=sympy.exp
  )
  global_dict = {
      "Integer": sympy.Integer,
      "Float": sympy.Float,
      "Rational": sympy.Rational,
      "Symbol": sympy.Symbol,
      "Function": sympy.Function,
      "I": sympy.I,
      "pi": sympy.pi,
  }
  try:
    expr = sympy_parser.parse_expr(
        source,
        local_dict=local_dict,
        global_dict=global_dict,
        transformations=sympy_parser.standard_transformations,
    )
  except (SyntaxError, TypeError, ValueError, sympy.SympifyError) as e:
    raise ExpressionError(f"cannot parse {text!r}: {e}") from e
  if not isinstance(expr, sympy.Expr):
    raise ExpressionError(f"{text!r} is not an arithmetic expression")

  unknown_fns = expr.atoms(AppliedUndef)
  if unknown_fns:
    names = sorted(str(f.func) for f in unknown_fns)
    raise ExpressionError(f"unknown functions {names} in {text!r}")
  unknown = expr.free_symbols - set(reals)
  if unknown:
    names = sorted(str(s) for s in unknown)
    raise ExpressionError(f"unknown names {names} in {text!r} for n={n}")
  expr = sympy.expand_complex(expr)
  if sympy.simplify(sympy.im(expr)) != 0:
    raise ExpressionError(f"{text!r} is not real-valued")
  expr = sympy.re(expr)

  compiled = sympy.lambdify(reals, expr, modules="jax")
  return Expression(text=str(text), n=n, expr=expr, _compiled=compiled)
