"""Compactly supported killing fields ``nu = eps * nu_tilde`` on the half-plane."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate


class NuSpecError(ValueError):
    """Malformed field specification; ``field`` names the offending entry."""

    def __init__(self, msg, field=None):
        self.field = field
        super().__init__(f"{field}: {msg}" if field else msg)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance."""


SHAPES = ("constant", "disk", "gaussian")


@dataclass(frozen=True)
class NuField:
    """Killing field of a given ``shape`` and amplitude ``eps``.

    * ``constant``: ``nu_tilde = 1`` on ``box = (x0, x1, y0, y1)``; ``box=None``
      means the whole half-plane (no compact support).
    * ``disk``: indicator of the disk ``|z - center| <= radius``.
    * ``gaussian``: ``exp(-|z - center|^2 / (2 sigma^2))`` truncated at ``cutoff``
      (default ``3 sigma``).
    """
    shape: str
    eps: float = 1.0
    center: complex = 0j
    radius: float = 0.0
    sigma: float = 0.0
    cutoff: float = 0.0
    box: tuple = None
    _r: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise NuSpecError(f"unknown shape {self.shape!r}; expected one of {SHAPES}", "shape")
        if not np.isfinite(self.eps):
            raise NuSpecError("amplitude must be finite", "eps")
        if self.shape == "disk":
            if self.radius <= 0:
                raise NuSpecError("radius must be positive", "radius")
            object.__setattr__(self, "_r", float(self.radius))
        elif self.shape == "gaussian":
            if self.sigma <= 0:
                raise NuSpecError("sigma must be positive", "sigma")
            object.__setattr__(self, "_r", float(self.cutoff or 3.0 * self.sigma))
        elif self.box is not None:
            x0, x1, y0, y1 = self.box
            if not (x0 < x1 and 0 <= y0 < y1):
                raise NuSpecError("box must be (x0, x1, y0, y1) with x0<x1, 0<=y0<y1", "box")
        if self.shape in ("disk", "gaussian"):
            c = complex(self.center)
            object.__setattr__(self, "center", c)
            if c.imag - self._r <= 0:
                raise NuSpecError("support must lie strictly inside the upper half-plane", "center")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def zero(cls):
        return cls("constant", eps=0.0)

    @classmethod
    def disk(cls, center, radius, eps=1.0):
        return cls("disk", eps=eps, center=complex(center), radius=radius)

    @classmethod
    def gaussian(cls, center, sigma, eps=1.0, cutoff=0.0):
        return cls("gaussian", eps=eps, center=complex(center), sigma=sigma, cutoff=cutoff)

    @classmethod
    def constant(cls, value, box=None):
        return cls("constant", eps=value, box=None if box is None else tuple(box))

    def scaled(self, eps):
        """Same profile with amplitude ``eps``."""
        return NuField(self.shape, eps, self.center, self.radius, self.sigma, self.cutoff, self.box)

    @property
    def is_zero(self):
        return self.eps == 0.0

    @property
    def support_box(self):
        if self.shape == "constant":
            return self.box
        c, r = self.center, self._r
        return (c.real - r, c.real + r, c.imag - r, c.imag + r)

    # -- evaluation -------------------------------------------------------------
    def tilde(self, z):
        """Unit-amplitude profile ``nu_tilde(z)``."""
        z = np.asarray(z, dtype=complex)
        if self.shape == "constant":
            if self.box is None:
                return np.ones(z.shape)
            x0, x1, y0, y1 = self.box
            inside = (z.real >= x0) & (z.real <= x1) & (z.imag >= y0) & (z.imag <= y1)
            return inside.astype(float)
        d2 = np.abs(z - self.center) ** 2
        inside = d2 <= self._r ** 2
        if self.shape == "disk":
            return inside.astype(float)
        return np.where(inside, np.exp(-d2 / (2 * self.sigma ** 2)), 0.0)

    def __call__(self, z):
        return self.eps * self.tilde(z)

    def cell_average(self, x, y, h, sub=8):
        """Average of ``nu`` over the ``h``-squares centred at grid points ``(x, y)``.

        Uses a ``sub x sub`` midpoint rule on each square; for the smooth
        profiles this is just a refined point evaluation, for the disk it
        resolves the boundary staircase to ``O(h^2)``.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        off = (np.arange(sub) + 0.5) / sub - 0.5
        acc = np.zeros(np.broadcast(x, y).shape)
        for dx in off:
            for dy in off:
                acc += self(x + dx * h + 1j * (y + dy * h))
        return acc / sub ** 2

    # -- quadrature -------------------------------------------------------------
    def integrate(self, f, singular_point=None, epsrel=1e-8, epsabs=1e-12, limit=200):
        """Adaptive quadrature of ``int nu_tilde(z) f(z) d^2z`` over the support.

        ``f`` takes a complex scalar. A point where ``f`` has an integrable
        (logarithmic) singularity can be passed as ``singular_point``; the
        integration domain is then split there so the singularity sits at a
        corner of every sub-panel. Raises :class:`QuadratureError` (with
        scipy's estimate of the unresolved remainder) if a panel fails.
        """
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                return self._integrate(f, singular_point, epsrel, epsabs, limit)
            except integrate.IntegrationWarning as e:
                raise QuadratureError(f"quadrature did not converge: {e}") from None

    def _integrate(self, f, singular_point, epsrel, epsabs, limit):
        if self.shape == "constant" and self.box is None:
            raise ValueError("whole-plane constant field has no compact support")
        opts = dict(epsrel=epsrel, epsabs=epsabs, limit=limit)
        if self.shape == "constant":
            x0, x1, y0, y1 = self.box
            xs, ys = [x0, x1], [y0, y1]
            if singular_point is not None:
                w = complex(singular_point)
                if x0 < w.real < x1:
                    xs = [x0, w.real, x1]
                if y0 < w.imag < y1:
                    ys = [y0, w.imag, y1]
            total = 0.0
            for a, b in zip(xs[:-1], xs[1:]):
                for c, d in zip(ys[:-1], ys[1:]):
                    val, _ = integrate.nquad(lambda yy, xx: f(complex(xx, yy)), [[c, d], [a, b]],
                                             opts=[opts, opts])
                    total += val
            return total
        c, r = self.center, self._r
        tpts = [0.0, 2 * np.pi]
        rpts = None
        if singular_point is not None:
            dw = complex(singular_point) - c
            if abs(dw) < r:
                th = np.angle(dw) % (2 * np.pi)
                if 0 < th < 2 * np.pi:
                    tpts = [0.0, th, 2 * np.pi]
                rpts = [abs(dw)]

        def radial(th):
            e = np.exp(1j * th)
            g = lambda rho: f(c + rho * e) * self.tilde(c + rho * e) * rho
            v, _ = integrate.quad(g, 0.0, r, points=rpts, **opts)
            return v

        total = 0.0
        for a, b in zip(tpts[:-1], tpts[1:]):
            v, _ = integrate.quad(radial, a, b, **opts)
            total += v
        return total

    def quadrature_nodes(self, n_radial=16, n_angle=32):
        """Fixed product rule ``(nodes, weights)`` with ``sum w f(node) ~ int nu_tilde f``.

        Gauss-Legendre in the radius times the periodic trapezoid rule in the
        angle for disk/gaussian; tensor Gauss-Legendre on the box otherwise.
        The weights already include ``nu_tilde``.
        """
        xg, wg = np.polynomial.legendre.leggauss(n_radial)
        if self.shape == "constant":
            if self.box is None:
                raise ValueError("whole-plane constant field has no compact support")
            x0, x1, y0, y1 = self.box
            xa, wa = np.polynomial.legendre.leggauss(n_angle)
            xs = 0.5 * (x1 - x0) * (xa + 1) + x0
            ys = 0.5 * (y1 - y0) * (xg + 1) + y0
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            W = np.outer(wa, wg) * 0.25 * (x1 - x0) * (y1 - y0)
            return (X + 1j * Y).ravel(), W.ravel()
        r = self._r
        rho = 0.5 * r * (xg + 1)
        wr = 0.5 * r * wg * rho
        th = 2 * np.pi * np.arange(n_angle) / n_angle
        nodes = self.center + np.outer(rho, np.exp(1j * th))
        w = np.outer(wr, np.full(n_angle, 2 * np.pi / n_angle))
        w = w * self.tilde(nodes)
        return nodes.ravel(), w.ravel()

    def mass(self):
        """``int nu_tilde d^2z``."""
        if self.shape == "disk":
            return np.pi * self.radius ** 2
        if self.shape == "gaussian":
            s, r = self.sigma, self._r
            return 2 * np.pi * s ** 2 * (1 - np.exp(-r ** 2 / (2 * s ** 2)))
        if self.box is None:
            return np.inf
        x0, x1, y0, y1 = self.box
        return (x1 - x0) * (y1 - y0)

    def to_dict(self):
        d = {"shape": self.shape, "eps": self.eps}
        if self.shape in ("disk", "gaussian"):
            d["center"] = [self.center.real, self.center.imag]
        if self.shape == "disk":
            d["radius"] = self.radius
        if self.shape == "gaussian":
            d["sigma"] = self.sigma
            d["cutoff"] = self._r
        if self.shape == "constant" and self.box is not None:
            d["box"] = list(self.box)
        return d

    @classmethod
    def from_dict(cls, d):
        """Build from a config mapping; unknown keys are rejected by name."""
        if not isinstance(d, dict):
            raise NuSpecError("expected a mapping", "nu")
        allowed = {"shape", "eps", "center", "radius", "sigma", "cutoff", "box"}
        extra = set(d) - allowed
        if extra:
            raise NuSpecError(f"unknown keys {sorted(extra)}", "nu")
        if "shape" not in d:
            raise NuSpecError("missing", "nu.shape")
        kw = {k: v for k, v in d.items() if k in allowed}
        if "center" in kw:
            cx = kw["center"]
            try:
                kw["center"] = complex(cx[0], cx[1]) if isinstance(cx, (list, tuple)) else complex(cx)
            except (TypeError, ValueError, IndexError):
                raise NuSpecError(f"cannot parse {cx!r}", "nu.center")
        if "box" in kw and kw["box"] is not None:
            kw["box"] = tuple(float(v) for v in kw["box"])
        for k in ("eps", "radius", "sigma", "cutoff"):
            if k in kw:
                try:
                    kw[k] = float(kw[k])
                except (TypeError, ValueError):
                    raise NuSpecError(f"not a number: {kw[k]!r}", f"nu.{k}")
        try:
            return cls(**kw)
        except NuSpecError as e:
            raise NuSpecError(str(e).split(": ", 1)[-1], f"nu.{e.field}") from None
