from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from smbsim.app.services.errors import ExpressionError


# Grammar in docs/expression_grammar.md. Anything outside it is rejected
# before sympy sees the text.
ALLOWED_FUNCTIONS: dict[str, sp.Basic] = {
    "exp": sp.exp,
    "sin": sp.sin,
    "cos": sp.cos,
    "tanh": sp.tanh,
    "abs": sp.Abs,
}

_TOKEN_PATTERN = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)

_PARSER_GLOBALS = {
    "__builtins__": {},
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
    "Symbol": sp.Symbol,
}

_TRANSFORMATIONS = standard_transformations + (convert_xor,)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    position = 0
    stripped = text.rstrip()

    while position < len(stripped):
        match = _TOKEN_PATTERN.match(stripped, position)

        if match is None or match.end() == position:
            raise ExpressionError(
                f"Unexpected character {stripped[position]!r} at position {position} in {text!r}."
            )

        kind = match.lastgroup or ""
        tokens.append((kind, match.group(kind)))
        position = match.end()

    return tokens


def _check_tokens(
    text: str,
    tokens: list[tuple[str, str]],
    allowed_names: set[str],
) -> None:
    if not tokens:
        raise ExpressionError("Empty expression.")

    depth = 0

    for index, (kind, value) in enumerate(tokens):
        following = tokens[index + 1] if index + 1 < len(tokens) else None

        if kind == "name":
            if value in ALLOWED_FUNCTIONS:
                if following != ("op", "("):
                    raise ExpressionError(f"Function {value!r} must be called in {text!r}.")
            elif value not in allowed_names:
                raise ExpressionError(
                    f"Unknown name {value!r} in {text!r}. "
                    f"Allowed: {', '.join(sorted(allowed_names | set(ALLOWED_FUNCTIONS)))}."
                )

        elif kind == "op":
            if value == "(":
                depth += 1
            elif value == ")":
                depth -= 1

                if depth < 0:
                    raise ExpressionError(f"Unbalanced ')' in {text!r}.")
            elif value in "*/^" and following is not None and following[1] in "*/^":
                raise ExpressionError(f"Operator {value + following[1]!r} is not allowed in {text!r}.")

    if depth != 0:
        raise ExpressionError(f"Unbalanced '(' in {text!r}.")


def parse_expression(
    text: str,
    variables: Sequence[str],
    parameters: Mapping[str, float] | None = None,
) -> sp.Expr:
    """
    Parse one coefficient expression into a sympy expression.

    Parameters are substituted by their numeric values at parse time.
    """
    parameters = dict(parameters or {})
    clash = set(variables) & set(parameters)

    if clash:
        raise ExpressionError(f"Names used as both variable and parameter: {sorted(clash)}.")

    tokens = _tokenize(text)
    _check_tokens(text, tokens, set(variables) | set(parameters))

    local_dict: dict[str, object] = dict(ALLOWED_FUNCTIONS)
    local_dict.update({name: sp.Symbol(name, real=True) for name in variables})
    local_dict.update({name: sp.Float(value) for name, value in parameters.items()})

    try:
        expression = parse_expr(
            text,
            local_dict=local_dict,
            global_dict=dict(_PARSER_GLOBALS),
            transformations=_TRANSFORMATIONS,
        )
    except (SyntaxError, TypeError, ValueError, sp.SympifyError) as exc:
        raise ExpressionError(f"Could not parse {text!r}: {exc}") from exc

    if not isinstance(expression, sp.Expr):
        raise ExpressionError(f"{text!r} is not an arithmetic expression.")

    return expression


@dataclass(frozen=True, eq=False)
class ScalarField:
    """
    A compiled expression, vectorised over numpy arrays.

    Calling it broadcasts constants to the shape of the inputs, so
    "0" evaluated on a profile returns a zero profile.
    """

    text: str
    variables: tuple[str, ...]
    expression: sp.Expr
    _function: Callable[..., object] = field(repr=False)

    def __call__(self, *args: object) -> np.ndarray:
        if len(args) != len(self.variables):
            raise TypeError(f"{self.text!r} takes {len(self.variables)} arguments, got {len(args)}.")

        arrays = [np.asarray(arg, dtype=float) for arg in args]
        shape = np.broadcast_shapes(*(array.shape for array in arrays))
        values = np.asarray(self._function(*arrays), dtype=float)
        return np.broadcast_to(values, shape)

    @property
    def is_zero(self) -> bool:
        return self.expression == 0

    def partial(self, variable: str) -> ScalarField:
        if variable not in self.variables:
            raise ExpressionError(f"{variable!r} is not a variable of {self.text!r}.")

        derivative = sp.diff(self.expression, sp.Symbol(variable, real=True))
        return _compile(f"d({self.text})/d{variable}", self.variables, derivative)


def _compile(text: str, variables: Sequence[str], expression: sp.Expr) -> ScalarField:
    symbols = [sp.Symbol(name, real=True) for name in variables]
    function = sp.lambdify(symbols, expression, modules="numpy")

    return ScalarField(
        text=text,
        variables=tuple(variables),
        expression=expression,
        _function=function,
    )


def compile_field(
    text: str,
    variables: Sequence[str],
    parameters: Mapping[str, float] | None = None,
) -> ScalarField:
    expression = parse_expression(text, variables, parameters)
    return _compile(text, variables, expression)
