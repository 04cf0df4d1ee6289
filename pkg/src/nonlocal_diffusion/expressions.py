"""Closed-form coefficient expressions such as ``"r**-1"`` or ``"-x*(1 + y**2)"``.

Variables are the coordinates ``x`` (and ``y`` in 2D) and the radius ``r``;
named parameters may be substituted.  Strings are checked against a whitelist
of identifiers before sympy sees them.
"""

from __future__ import annotations

import re

import numpy as np
import sympy

from .errors import ConfigError
from .operators import CoefficientField

FUNCTIONS = {"exp", "log", "sqrt", "sin", "cos", "tanh", "Abs", "pi"}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_ALLOWED_CHARS = re.compile(r"^[0-9A-Za-z_.+\-*/() ]*$")


def compile_expression(text, dim: int, params: dict | None = None, key: str = "expression"):
    """Vectorized callable ``(m, d) -> (m,)`` for an expression string (or number)."""
    params = params or {}
    if isinstance(text, (int, float)):
        c = float(text)
        return lambda x: np.full(len(x), c)
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("expected a number or an expression string", key)
    if not _ALLOWED_CHARS.match(text) or "__" in text:
        raise ConfigError(f"illegal characters in {text!r}", key)
    coords = ["x", "y"][:dim]
    allowed = set(coords) | {"r"} | FUNCTIONS | set(params)
    unknown = set(_IDENT.findall(text)) - allowed
    if unknown:
        raise ConfigError(f"unknown names {sorted(unknown)} in {text!r}", key)
    syms = {n: sympy.Symbol(n, real=True) for n in (*coords, "r")}
    local = {**syms, **{k: sympy.Float(v) for k, v in params.items()}}
    local.update({f: getattr(sympy, f) for f in FUNCTIONS})
    try:
        expr = sympy.sympify(text, locals=local)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse {text!r}: {exc}", key) from exc
    fn = sympy.lambdify([syms[c] for c in coords] + [syms["r"]], expr, "numpy")

    def call(x):
        x = np.atleast_2d(x)
        cols = [x[:, k] for k in range(dim)] + [np.linalg.norm(x, axis=1)]
        return np.broadcast_to(np.asarray(fn(*cols), dtype=float), (len(x),)).copy()

    return call


def custom_operator(cfg: dict, dim: int, params: dict | None = None) -> CoefficientField:
    """Coefficient field from expression strings.

    ``a`` is either one string (isotropic ``a = s(x) I``) or a ``d x d`` nested
    list; ``b`` is a list of ``d`` strings; ``eta`` a string.
    """
    a_cfg, b_cfg, eta_cfg = cfg.get("a"), cfg.get("b"), cfg.get("eta")
    if a_cfg is None or b_cfg is None or eta_cfg is None:
        raise ConfigError("custom operator needs a, b and eta", "operator")
    if isinstance(a_cfg, list):
        if len(a_cfg) != dim or any(not isinstance(row, list) or len(row) != dim for row in a_cfg):
            raise ConfigError(f"a must be a {dim}x{dim} list", "operator.a")
        entries = [[compile_expression(e, dim, params, "operator.a") for e in row] for row in a_cfg]

        def a(x):
            return np.stack([np.stack([e(x) for e in row], axis=-1) for row in entries], axis=-2)

    else:
        s = compile_expression(a_cfg, dim, params, "operator.a")
        eye = np.eye(dim)

        def a(x):
            return s(x)[:, None, None] * eye

    if not isinstance(b_cfg, list) or len(b_cfg) != dim:
        raise ConfigError(f"b must be a list of {dim} expressions", "operator.b")
    bs = [compile_expression(e, dim, params, "operator.b") for e in b_cfg]
    eta = compile_expression(eta_cfg, dim, params, "operator.eta")
    return CoefficientField(dim, a, lambda x: np.stack([f(x) for f in bs], axis=1), eta, "custom", dict(params or {}))
