"""Viscous decoupling field via the Cole-Hopf representation.

With lam = sigma0^-2 and h(y) = H(y) - (x - y)^2 / (2 r_t), H = -int_0^y g,

    theta(t, x) = int ((x - y)/r_t) e^{lam h} dy / int e^{lam h} dy
                = int g(y) e^{lam h} dy / int e^{lam h} dy,

the second form following from one integration by parts.  Because g is
piecewise affine, lam*h is a quadratic on every piece and both integrals are
sums of Gaussian/Dawson-type segment moments that we evaluate in closed form
after shifting every exponent by the global maximum of lam*h.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import dawsn, erfcx

from mfg_select.coefficients import CoefficientTable
from mfg_select.fields import EntropyField, SmoothedTerminal, TerminalCondition

SIGMA0_FLOOR = 0.02

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_SQRT_PI = math.sqrt(math.pi)
# Above this exponent variation a segment integral is evaluated in closed
# form; below it a 64-point Gauss-Legendre rule is exact to rounding.
_V_SWITCH = 40.0
_ASYMPTOTIC_Z = 10.0
_LINEAR_Z = 1e8
_DOUBLE_FACT = np.array([math.prod(range(1, 2 * n, 2)) for n in range(1, 13)], dtype=float)


def _g_series(z):
    """1 - sqrt(pi) z erfcx(z) for large z (asymptotic series)."""
    q = 1.0 / (2.0 * z * z)
    powers = q[..., None] ** np.arange(1, 13)
    signs = (-1.0) ** np.arange(0, 12)
    return (powers * (signs * _DOUBLE_FACT)).sum(axis=-1)


def _k_series(v):
    """2 v D(v) - 1 for large v, D the Dawson integral."""
    q = 1.0 / (2.0 * v * v)
    powers = q[..., None] ** np.arange(1, 13)
    return (powers * _DOUBLE_FACT).sum(axis=-1)


def _G(z):
    z = np.asarray(z, dtype=float)
    big = z >= _ASYMPTOTIC_Z
    out = np.empty_like(z)
    out[~big] = 1.0 - _SQRT_PI * z[~big] * erfcx(z[~big])
    out[big] = _g_series(z[big])
    return out


def _K(v):
    v = np.asarray(v, dtype=float)
    big = v >= _ASYMPTOTIC_Z
    out = np.empty_like(v)
    out[~big] = 2.0 * v[~big] * dawsn(v[~big]) - 1.0
    out[big] = _k_series(v[big])
    return out


def _monotone_moments(e, direction, length, a2, a1):
    """Moments of exp(phi(y) - phi(e)) over a segment starting at its
    maximising end ``e`` and running ``length`` in ``direction``.

    phi is the quadratic with leading coefficient a2 and linear one a1.
    Returns (int e^{phi-phi(e)}, int y e^{phi-phi(e)}).  All inputs are
    1-d arrays of equal length.
    """
    n = e.shape[0]
    J0 = np.zeros(n)
    J1 = np.zeros(n)
    alpha = np.abs(2.0 * a2 * e + a1)
    beta = a2
    finite = np.isfinite(length)
    V = np.full(n, np.inf)
    V[finite] = alpha[finite] * length[finite] - beta[finite] * length[finite] ** 2
    active = length > 0

    quad_mask = active & finite & (V < _V_SWITCH)
    if quad_mask.any():
        L = length[quad_mask][:, None]
        ee = e[quad_mask][:, None]
        d = direction[quad_mask][:, None]
        u = 0.5 * L * (_GL_NODES[None, :] + 1.0)
        y = ee + d * u
        dphi = (y - ee) * (a2[quad_mask][:, None] * (y + ee) + a1[quad_mask][:, None])
        f = np.exp(dphi) * (0.5 * L) * _GL_WEIGHTS[None, :]
        J0[quad_mask] = f.sum(axis=1)
        J1[quad_mask] = (f * u).sum(axis=1)

    rest = active & ~quad_mask
    if rest.any():
        al, be, L = alpha[rest], beta[rest], length[rest]
        E = np.where(np.isfinite(V[rest]), np.exp(-V[rest]), 0.0)
        Lf = np.where(np.isfinite(L), L, 0.0)
        b = np.sqrt(np.abs(be))
        with np.errstate(divide="ignore", invalid="ignore"):
            z0 = np.where(b > 0, al / (2.0 * b), np.inf)
        j0 = np.empty_like(al)
        j1 = np.empty_like(al)

        lin = (be == 0) | (z0 > _LINEAR_Z)
        if lin.any():
            a = al[lin]
            j0[lin] = (1.0 - E[lin]) / a
            j1[lin] = (1.0 - E[lin] * (1.0 + a * Lf[lin])) / (a * a)

        neg = ~lin & (be < 0)
        if neg.any():
            bb, zz, LL, EE = b[neg], z0[neg], Lf[neg], E[neg]
            zL = zz + bb * LL
            tail = np.where(EE > 0, EE * erfcx(zL), 0.0)
            j0[neg] = 0.5 * _SQRT_PI / bb * (erfcx(zz) - tail)
            tail1 = np.where(EE > 0, EE * (_G(zL) + _SQRT_PI * bb * LL * erfcx(zL)), 0.0)
            j1[neg] = (_G(zz) - tail1) / (2.0 * bb * bb)

        pos = ~lin & (be > 0)
        if pos.any():
            if not np.all(np.isfinite(L[pos])):
                raise ValueError("convex exponent on an unbounded piece: integral diverges")
            bb, vv, LL, EE = b[pos], z0[pos], Lf[pos], E[pos]
            vL = np.maximum(vv - bb * LL, 0.0)
            j0[pos] = (dawsn(vv) - EE * dawsn(vL)) / bb
            j1[pos] = (_K(vv) - EE * (_K(vL) + 2.0 * bb * LL * dawsn(vL))) / (2.0 * bb * bb)

        J0[rest] = j0
        J1[rest] = j1
    return J0, e * J0 + direction * J1


@dataclass(frozen=True)
class ViscousField:
    """Evaluation context for the Cole-Hopf field at noise level ``sigma0``.

    ``terminal`` defaults to the clipped linear g; pass a SmoothedTerminal
    for the comparison field.  Arrays broadcast over (t, x).
    """

    table: CoefficientTable
    sigma0: float
    terminal: TerminalCondition | SmoothedTerminal | None = None
    pieces: tuple = dc_field(init=False, repr=False)
    _piece_arrays: dict = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.sigma0) or self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive; use EntropyField for the zero-noise limit")
        if self.sigma0 < SIGMA0_FLOOR:
            raise ValueError(
                f"sigma0={self.sigma0:.6g} is below the evaluation floor {SIGMA0_FLOOR}"
            )
        if self.terminal is None:
            object.__setattr__(self, "terminal", TerminalCondition(self.table.r_delta))
        pieces = self.terminal.pieces()
        object.__setattr__(self, "pieces", pieces)
        col = lambda vals: np.array(vals, dtype=float)[:, None]  # noqa: E731
        object.__setattr__(self, "_piece_arrays", {
            "lo": col([p.lo for p in pieces]),
            "hi": col([p.hi for p in pieces]),
            "slope": col([p.slope for p in pieces]),
            "intercept": col([p.intercept for p in pieces]),
            "c0": col([p.H_ref + 0.5 * p.slope * p.ref ** 2 + p.intercept * p.ref
                       for p in pieces]),
        })

    @property
    def lam(self) -> float:
        return self.sigma0 ** -2

    def __call__(self, t, x):
        return self.evaluate(t, x)

    def evaluate(self, t, x):
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        shape = t_arr.shape
        t_flat = t_arr.ravel()
        x_flat = x_arr.ravel()
        if np.any((t_flat < 0) | (t_flat > self.table.horizon)):
            raise ValueError("t outside [0, T]")
        odd = self.terminal.is_odd
        xs = np.abs(x_flat) if odd else x_flat
        r = np.asarray(self.table.r_at(t_flat), dtype=float).reshape(-1)
        if r.size == 1 and xs.size > 1:
            r = np.full(xs.size, r[0])
        terminal = r <= 1e-14 * self.table.k_T
        out = np.empty(xs.size)
        if terminal.any():
            out[terminal] = self.terminal(xs[terminal])
        live = ~terminal
        if live.any():
            out[live] = self._cole_hopf(r[live], xs[live])
        if odd:
            out = np.sign(x_flat) * out
        out = out.reshape(shape)
        return out if out.ndim else float(out)

    def _cole_hopf(self, r, x):
        lam = self.lam
        n = x.size
        pc = self._piece_arrays
        lo, hi, slope, icpt = pc["lo"], pc["hi"], pc["slope"], pc["intercept"]
        # Exponent lam*h on each piece as a2 y^2 + a1 y + a0, shape (pieces, n);
        # the common -lam x^2 / (2 r) term cancels in the ratio and is dropped.
        a2 = lam * (-0.5 * slope - 0.5 / r[None, :])
        a1 = lam * (-icpt + x[None, :] / r[None, :])
        a0 = np.broadcast_to(lam * pc["c0"], a2.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            vertex = np.where(a2 != 0, -a1 / (2.0 * a2), np.where(a1 > 0, np.inf, -np.inf))
        vc = np.clip(vertex, lo, hi)
        lo_b = np.broadcast_to(lo, a2.shape)
        hi_b = np.broadcast_to(hi, a2.shape)

        peak = np.full(n, -np.inf)
        for end in (lo_b, hi_b, vc):
            ok = np.isfinite(end)
            y = np.where(ok, end, 0.0)
            vals = np.where(ok, (a2 * y + a1) * y + a0, -np.inf)
            peak = np.maximum(peak, vals.max(axis=0))

        # Split every piece at the clipped vertex into two monotone parts and
        # start each part at the end where the exponent is largest.
        concave = a2 <= 0
        left = np.concatenate([lo_b, vc])
        right = np.concatenate([vc, hi_b])
        take_right = np.concatenate([concave, ~concave])
        A2 = np.concatenate([a2, a2])
        A1 = np.concatenate([a1, a1])
        A0 = np.concatenate([a0, a0])
        S = np.broadcast_to(np.concatenate([slope, slope]), A2.shape)
        C = np.broadcast_to(np.concatenate([icpt, icpt]), A2.shape)
        length = right - left
        length = np.where(np.isnan(length), 0.0, length)
        e = np.where(take_right, right, left)
        direction = np.where(take_right, -1.0, 1.0)

        active = length > 0
        m0 = np.zeros(A2.shape)
        m1 = np.zeros(A2.shape)
        ea = e[active]
        j0, j1 = _monotone_moments(ea, direction[active], length[active], A2[active], A1[active])
        scale = np.exp((A2[active] * ea + A1[active]) * ea + A0[active]
                       - np.broadcast_to(peak, A2.shape)[active])
        m0[active] = scale * j0
        m1[active] = scale * j1
        den = m0.sum(axis=0)
        num = (S * m1 + C * m0).sum(axis=0)
        return num / den


def cole_hopf_eval(t, x, sigma0: float, table: CoefficientTable):
    return ViscousField(table, sigma0)(t, x)


def quadrature_oracle(t: float, x: float, sigma0: float, table: CoefficientTable,
                      terminal: TerminalCondition | SmoothedTerminal | None = None) -> float:
    """Direct adaptive quadrature of the Cole-Hopf ratio.  Independent of the
    piecewise machinery; slow, for validation only."""
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    if terminal is None:
        terminal = TerminalCondition(table.r_delta)
    r = float(table.r_at(t))
    if r <= 1e-14 * table.k_T:
        return float(terminal(x))
    lam = sigma0 ** -2
    r0 = table.k_T

    def lam_h(y):
        return lam * (terminal.antiderivative(y) - (x - y) ** 2 / (2.0 * r))

    rad = 12.0 * math.sqrt(r) * sigma0 + 3.0 * r0
    lo, hi = x - rad, x + rad
    probe = np.linspace(lo, hi, 20001)
    kinks = [b for p in terminal.pieces() for b in (p.lo, p.hi) if np.isfinite(b)]
    cand = [x - r, x + r, *kinks]
    cand = [c for c in cand if lo < c < hi]
    peak_y = probe[np.argmax(lam_h(probe))]
    cand.append(float(peak_y))
    shift = max(float(np.max(lam_h(probe))), float(np.max(lam_h(np.array(cand)))))
    pts = sorted(set(cand))

    def den_f(y):
        return math.exp(float(lam_h(y)) - shift)

    def num_f(y):
        return (x - y) / r * den_f(y)

    opts = dict(points=pts, limit=500, epsabs=1e-15, epsrel=1e-13)
    num = integrate.quad(num_f, lo, hi, **opts)[0]
    den = integrate.quad(den_f, lo, hi, **opts)[0]
    return num / den


def psi(t, x, sigma0: float, table: CoefficientTable):
    """Viscous minus entropy field."""
    return ViscousField(table, sigma0)(t, x) - EntropyField(table)(t, x)


@dataclass(frozen=True)
class PsiBoundReport:
    t: float
    x: float
    sigma0: float
    psi_abs: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.psi_abs <= self.bound


def psi_bound(t: float, x: float, sigma0: float, table: CoefficientTable) -> float:
    """Explicit bound on |psi|, valid for t before the kink and
    0 < |x| < r_t - r_delta."""
    r_t = float(table.r_at(t))
    r_d = table.r_delta
    ax = abs(x)
    if r_t <= r_d:
        raise ValueError("bound requires r_t > r_delta (t before the kink time)")
    if not 0.0 < ax < r_t - r_d:
        raise ValueError(f"|x| must lie in (0, r_t - r_delta) = (0, {r_t - r_d:.6g})")
    lam = sigma0 ** -2
    ratio = math.sqrt(r_d / (r_t - r_d))
    t1 = (4.0 + 2.0 * ratio) * math.exp(-2.0 * lam * ax)
    t2 = 2.0 * math.sqrt(2.0) / math.sqrt(lam * math.pi * r_t)
    t3 = 2.0 * ratio * math.exp(-lam * (r_t - r_d) ** 2 / (2.0 * r_t))
    return t1 + t2 + t3


def psi_report(t: float, x: float, sigma0: float, table: CoefficientTable) -> PsiBoundReport:
    val = abs(float(psi(t, x, sigma0, table)))
    return PsiBoundReport(t, x, sigma0, val, psi_bound(t, x, sigma0, table))


def pde_residual(t: float, x: float, sigma0: float, h_t: float, h_x: float,
                 table: CoefficientTable, parts: bool = False):
    """Central-difference residual of
    d_t theta - w^-2 theta d_x theta + (sigma0^2 / 2) w^-2 d_xx theta.

    With ``parts=True`` returns (residual, d_t theta) for scaling.
    """
    if not 0.0 < t - h_t and t + h_t < table.horizon:
        raise ValueError("stencil leaves (0, T)")
    f = ViscousField(table, sigma0)
    xs = np.array([x - h_x, x, x + h_x])
    row = f(t, xs)
    th_t = (f(t + h_t, x) - f(t - h_t, x)) / (2.0 * h_t)
    th_x = (row[2] - row[0]) / (2.0 * h_x)
    th_xx = (row[2] - 2.0 * row[1] + row[0]) / (h_x * h_x)
    inv_w2 = float(table.w_at(t)) ** -2
    res = th_t - inv_w2 * row[1] * th_x + 0.5 * sigma0 ** 2 * inv_w2 * th_xx
    return (res, th_t) if parts else res


def l1_comparison(t: float, sigma0: float, gamma: float, table: CoefficientTable,
                  n_points: int = 20001) -> tuple[float, float]:
    """(int |theta_tilde - theta| dx, min of theta_tilde - theta) on a
    truncated window, Simpson's rule."""
    smooth = SmoothedTerminal(table.r_delta, gamma)
    base = ViscousField(table, sigma0)
    tilde = ViscousField(table, sigma0, terminal=smooth)
    half = 3.0 * table.k_T + 12.0 * sigma0
    if n_points % 2 == 0:
        n_points += 1
    xs = np.linspace(-half, half, n_points)
    diff = tilde(t, xs) - base(t, xs)
    gap = float(integrate.simpson(np.abs(diff), x=xs))
    return gap, float(diff.min())


def max_gradient(t: float, sigma0: float, table: CoefficientTable,
                 half_width: float = 1.0, n_points: int = 4001) -> float:
    """Largest centred finite-difference slope of the field in x."""
    xs = np.linspace(-half_width, half_width, n_points)
    vals = ViscousField(table, sigma0)(t, xs)
    return float(np.max(np.abs(np.diff(vals) / np.diff(xs))))


def tabulate(table: CoefficientTable, sigma0: float, ts, xs, path: str | Path) -> None:
    """Write theta_sigma, theta, psi and (where valid) the bound on a lattice."""
    f = ViscousField(table, sigma0)
    ent = EntropyField(table)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "theta_sigma", "theta", "psi", "bound"])
        for t in ts:
            vs = f(t, np.asarray(xs, dtype=float))
            es = ent(t, np.asarray(xs, dtype=float))
            for x, v, e in zip(xs, vs, es):
                try:
                    b = repr(psi_bound(t, x, sigma0, table))
                except ValueError:
                    b = ""
                wr.writerow([repr(float(t)), repr(float(x)), repr(float(v)),
                             repr(float(e)), repr(float(v - e)), b])
