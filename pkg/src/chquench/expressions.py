"""Closed-form field expressions.

The grammar admits numbers, the variables ``x``, ``y`` and ``t``, the
constant ``pi``, the operators ``+ - * / **`` with parentheses and unary
signs, and the functions ``cos``, ``sin`` and ``exp``.  Anything else is
rejected before evaluation.

>>> compile_expression("0.5*cos(pi*x)")(x=1.0)
-0.5
"""

from __future__ import annotations

import ast
from pathlib import Path

import numpy as np

__all__ = ["ExpressionError", "Expression", "compile_expression", "load_field"]

_FUNCS = {"cos": np.cos, "sin": np.sin, "exp": np.exp}
_VARS = ("x", "y", "t")
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


def _check(node, source):
    if isinstance(node, ast.Expression):
        return _check(node.body, source)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {source!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in _VARS and node.id != "pi":
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        return
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator not allowed in {source!r}")
        _check(node.left, source)
        _check(node.right, source)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _check(node.operand, source)
    if isinstance(node, ast.Call):
        if (not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS
                or node.keywords or len(node.args) != 1):
            raise ExpressionError(f"only cos, sin and exp of one argument in {source!r}")
        return _check(node.args[0], source)
    raise ExpressionError(f"unsupported syntax in {source!r}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return np.pi if node.id == "pi" else env[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else val
    return _FUNCS[node.func.id](_eval(node.args[0], env))


class Expression:
    """A validated expression, callable with keyword arrays ``x``, ``y``, ``t``."""

    def __init__(self, source: str):
        self.source = str(source)
        try:
            tree = ast.parse(self.source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        _check(tree, self.source)
        self._tree = tree.body

    def __call__(self, x=0.0, y=0.0, t=0.0):
        shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(t)).shape
        with np.errstate(divide="raise", over="raise", invalid="raise", under="ignore"):
            try:
                val = _eval(self._tree, {"x": x, "y": y, "t": t})
            except FloatingPointError as exc:
                raise ExpressionError(f"{self.source!r}: {exc}") from None
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy() \
            if shape else float(val)

    def __repr__(self):
        return f"Expression({self.source!r})"


def compile_expression(source) -> Expression:
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        source = repr(float(source))
    return Expression(source)


def load_field(spec, coords, times=None, base_dir: Path | None = None) -> np.ndarray:
    """Evaluate ``spec`` (expression, number or ``.csv`` path) on nodes and times.

    ``coords`` is ``(n, dim)``.  Without ``times`` the result has shape
    ``(n,)``; with times it has shape ``(len(times), n)``.  A CSV file holds
    one row per time level (or a single row, repeated in time) and one
    column per node; lines starting with ``#`` are ignored.
    """
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if isinstance(spec, str) and spec.strip().lower().endswith(".csv"):
        path = Path(spec.strip())
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        except (OSError, ValueError) as exc:
            raise ExpressionError(f"cannot read field file {str(path)!r}: {exc}") from None
        if data.shape[1] != n:
            raise ExpressionError(f"{str(path)!r} has {data.shape[1]} columns, need {n}")
        if times is None:
            if data.shape[0] != 1:
                raise ExpressionError(f"{str(path)!r} must hold a single row")
            return data[0].copy()
        if data.shape[0] == 1:
            return np.repeat(data, len(times), axis=0)
        if data.shape[0] != len(times):
            raise ExpressionError(f"{str(path)!r} has {data.shape[0]} rows, need {len(times)}")
        return data
    expr = compile_expression(spec)
    x = coords[:, 0]
    y = coords[:, 1] if coords.shape[1] > 1 else np.zeros(n)
    if times is None:
        return np.asarray(expr(x=x, y=y, t=np.zeros(n)), dtype=float).reshape(n)
    T = np.asarray(times, dtype=float)[:, None]
    return np.asarray(expr(x=x[None, :], y=y[None, :], t=T + 0 * x[None, :]), dtype=float)
