"""Stokes body forces F built from the biharmonic load f.

A force with curl F = f1_y-free... concretely curl F = dF2/dx - dF1/dy
= f turns the fourth-order problem into the Stokes + Poisson chain.
Three closed-form constructions are supported (antiderivatives are
user-supplied; nothing is integrated symbolically):

    integral_x : F = (0, int_{c1}^{x} f(s, y) ds)
    integral_y : F = (-int_{c2}^{y} f(x, t) dt, 0)
    blend(eta) : eta times the second plus (1 - eta) times the first

plus ``custom`` (caller provides F directly) and the discrete
alternative ``build_F_curl_w`` (F_n = curl w_n from a Poisson solve).
"""

from dataclasses import dataclass

import numpy as np

from .assembly import assemble_load
from .meshing import builtin_domain
from .solvers import solve_poisson, validate_curl

__all__ = [
    "AnalyticSource",
    "build_F_integral",
    "build_F_curl_w",
    "constant_load",
    "parse_f_spec",
    "parse_F_spec",
]

_MODES = ("integral_x", "integral_y", "blend", "custom")


@dataclass(frozen=True)
class AnalyticSource:
    f: object          # callable f(x, y)
    F: tuple           # (F1, F2) callables
    mode: str
    c1: float = 0.0
    c2: float = 0.0
    eta: float = 0.5


def _as_domain(domain):
    if isinstance(domain, str):
        return builtin_domain(domain)[0]
    return getattr(domain, "domain", domain)


def build_F_integral(domain, f, mode, antiderivative_x=None,
                     antiderivative_y=None, c1=0.0, c2=0.0, eta=0.5,
                     F=None):
    """Package an analytic source, validating curl F = f on the domain.

    ``antiderivative_x`` is G with dG/dx = f and ``antiderivative_y``
    is H with dH/dy = f; the modes use G(x,y) - G(c1,y) and
    H(x,y) - H(x,c2) as the running integrals.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")

    def int_x(x, y):
        return antiderivative_x(x, y) - antiderivative_x(
            np.full_like(np.asarray(x, dtype=float), c1), y)

    def int_y(x, y):
        return antiderivative_y(x, y) - antiderivative_y(
            x, np.full_like(np.asarray(y, dtype=float), c2))

    zero = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
    if mode == "integral_x":
        if antiderivative_x is None:
            raise ValueError("integral_x needs the x-antiderivative of f")
        force = (zero, int_x)
    elif mode == "integral_y":
        if antiderivative_y is None:
            raise ValueError("integral_y needs the y-antiderivative of f")
        force = (lambda x, y: -int_y(x, y), zero)
    elif mode == "blend":
        if antiderivative_x is None or antiderivative_y is None:
            raise ValueError("blend needs both antiderivatives of f")
        if not 0.0 <= eta <= 1.0:
            raise ValueError("blend weight must lie in [0, 1]")
        force = (lambda x, y: -eta * int_y(x, y),
                 lambda x, y: (1.0 - eta) * int_x(x, y))
    else:
        if F is None:
            raise ValueError("custom mode needs the force pair F")
        force = (F[0], F[1])

    validate_curl(_as_domain(domain), f, force)
    return AnalyticSource(f, force, mode, float(c1), float(c2), float(eta))


def build_F_curl_w(domain, f, space):
    """Poisson solve for w_n; the Stokes force is its discrete curl.

    Returns the scalar Field w_n (pass it to
    ``assemble_stokes_rhs_discrete_curl``).  The solve's Galerkin
    residual is verified by the direct solver, which realizes the
    orthogonality (grad(w - w_n), grad psi) = 0 discretely.
    """
    if domain is not None:
        dom = _as_domain(domain)
        if not np.array_equal(dom.vertices, space.mesh.domain.vertices):
            raise ValueError("space was built on a different domain")
    return solve_poisson(space, assemble_load(space, f))


def constant_load(value=1.0):
    """f = value with its two closed-form antiderivatives."""
    v = float(value)
    f = lambda x, y: np.full_like(np.asarray(x, dtype=float), v)
    gx = lambda x, y: v * np.asarray(x, dtype=float)
    gy = lambda x, y: v * np.asarray(y, dtype=float)
    return f, gx, gy


def parse_f_spec(spec):
    """CLI load spec -> callable.  Supported: ``const:<value>``."""
    kind, _, arg = spec.partition(":")
    if kind == "const":
        f, _, _ = constant_load(float(arg) if arg else 1.0)
        return f
    raise ValueError(f"unsupported load spec {spec!r}")


def parse_F_spec(domain, f_spec, F_spec):
    """CLI force spec -> AnalyticSource, or None for ``curl_w``.

    Supported: ``int_x``, ``int_y``, ``blend:<eta>``, ``curl_w``.
    """
    if F_spec == "curl_w":
        return None
    kind, _, arg = F_spec.partition(":")
    fkind, _, farg = f_spec.partition(":")
    if fkind != "const":
        raise ValueError(f"unsupported load spec {f_spec!r}")
    f, gx, gy = constant_load(float(farg) if farg else 1.0)
    if kind == "int_x":
        return build_F_integral(domain, f, "integral_x", antiderivative_x=gx)
    if kind == "int_y":
        return build_F_integral(domain, f, "integral_y", antiderivative_y=gy)
    if kind == "blend":
        eta = float(arg) if arg else 0.5
        return build_F_integral(domain, f, "blend", antiderivative_x=gx,
                                antiderivative_y=gy, eta=eta)
    raise ValueError(f"unsupported force spec {F_spec!r}")
