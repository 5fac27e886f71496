"""Terminal data, the entropy field and the explicit equilibria of the
degenerate (noise-free) game."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfg_select.coefficients import CoefficientTable


@dataclass(frozen=True)
class AffinePiece:
    """g(y) = slope*y + intercept on [lo, hi]; ``H_ref`` is H(ref) with
    H(y) = -int_0^y g and ``ref`` a finite point of the interval."""

    lo: float
    hi: float
    slope: float
    intercept: float
    ref: float
    H_ref: float

    def H(self, y):
        y = np.asarray(y, dtype=float)
        return (self.H_ref - 0.5 * self.slope * (y * y - self.ref ** 2)
                - self.intercept * (y - self.ref))


def _build_pieces(breaks, slopes, intercepts):
    """Chain affine pieces separated by ``breaks`` and anchor H(0) = 0."""
    lows = [-np.inf, *breaks]
    highs = [*breaks, np.inf]
    # Integrate -g from 0 outward to get H at every breakpoint.
    H_at = {0.0: 0.0}
    idx0 = next(i for i, (a, b) in enumerate(zip(lows, highs)) if a <= 0.0 <= b)

    def seg(i, a, b):
        s, c = slopes[i], intercepts[i]
        return -(0.5 * s * (b * b - a * a) + c * (b - a))

    # right of zero
    pos, val = 0.0, 0.0
    for i in range(idx0, len(breaks)):
        b = breaks[i]
        if b <= 0.0:
            continue
        val += seg(i, pos, b)
        pos = b
        H_at[b] = val
    pos, val = 0.0, 0.0
    for i in range(idx0, 0, -1):
        a = breaks[i - 1]
        if a >= 0.0:
            continue
        val += seg(i, a, pos) * -1.0
        pos = a
        H_at[a] = val

    pieces = []
    for i, (a, b) in enumerate(zip(lows, highs)):
        if np.isfinite(a):
            ref = a
        elif np.isfinite(b):
            ref = b
        else:
            ref = 0.0
        if ref not in H_at:
            # ref is a breakpoint straddling zero within this piece
            H_at[ref] = seg(i, 0.0, ref)
        pieces.append(AffinePiece(a, b, slopes[i], intercepts[i], ref, H_at[ref]))
    return tuple(pieces)


@dataclass(frozen=True)
class TerminalCondition:
    """Clipped linear terminal data g(x) = clip(-x / r_delta, -1, 1)."""

    r_delta: float

    def __post_init__(self):
        if not self.r_delta > 0:
            raise ValueError("r_delta must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r = self.r_delta
        return np.where(np.abs(x) <= r, -x / r, -np.sign(x))

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.r_delta

    @property
    def is_odd(self) -> bool:
        return True

    def pieces(self):
        r = self.r_delta
        return _build_pieces([-r, r], [0.0, -1.0 / r, 0.0], [1.0, 0.0, -1.0])

    def antiderivative(self, y):
        """H(y) = -int_0^y g."""
        y = np.abs(np.asarray(y, dtype=float))
        r = self.r_delta
        return np.where(y <= r, 0.5 * y * y / r, 0.5 * r + (y - r))


@dataclass(frozen=True)
class SmoothedTerminal:
    """Non-odd majorant of g: flat plateau on [r-2γ, r-γ], then g shifted
    right by γ until it meets -1 at r+γ."""

    r_delta: float
    gamma: float

    def __post_init__(self):
        if not self.r_delta > 0:
            raise ValueError("r_delta must be positive")
        if not 0.0 < self.gamma < 0.5 * self.r_delta:
            raise ValueError(
                f"gamma must lie in (0, r_delta/2) = (0, {0.5 * self.r_delta:.6g}); got {self.gamma}"
            )

    @property
    def base(self) -> TerminalCondition:
        return TerminalCondition(self.r_delta)

    @property
    def is_odd(self) -> bool:
        return False

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.r_delta

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        g = self.base
        r, gm = self.r_delta, self.gamma
        plateau = -1.0 + 2.0 * gm / r
        out = g(x)
        out = np.where((x >= r - 2 * gm) & (x <= r - gm), plateau, out)
        out = np.where((x > r - gm) & (x <= r + gm), g(x - gm), out)
        return out

    def pieces(self):
        r, gm = self.r_delta, self.gamma
        return _build_pieces(
            [-r, r - 2 * gm, r - gm, r + gm],
            [0.0, -1.0 / r, 0.0, -1.0 / r, 0.0],
            [1.0, 0.0, -1.0 + 2.0 * gm / r, gm / r, -1.0],
        )

    def antiderivative(self, y):
        """H_tilde(y) = -int_0^y g_tilde, as H minus the accumulated gap."""
        y = np.asarray(y, dtype=float)
        r, gm = self.r_delta, self.gamma
        u = y - (r - 2 * gm)
        d = np.where(y <= r - 2 * gm, 0.0, 0.5 * u * u / r)
        d = np.where(y > r - gm, 0.5 * gm * gm / r + (y - r + gm) * gm / r, d)
        s = y - r
        d = np.where(y > r, 1.5 * gm * gm / r + (gm * s - 0.5 * s * s) / r, d)
        d = np.where(y > r + gm, 2.0 * gm * gm / r, d)
        return self.base.antiderivative(y) - d

    def gap_integral(self) -> float:
        """Closed-form integral of (g_tilde - g) over the real line."""
        return 2.0 * self.gamma ** 2 / self.r_delta


def g_eval(x, r_delta: float):
    return TerminalCondition(r_delta)(x)


def g_tilde_eval(x, gamma: float, r_delta: float):
    return SmoothedTerminal(r_delta, gamma)(x)


@dataclass(frozen=True)
class EntropyField:
    """Zero-viscosity limit: -sign(x) up to delta, then a rarefaction fan
    of half-width r_delta - r_t opening around the origin."""

    table: CoefficientTable

    def __call__(self, t, x):
        return self.evaluate(t, x)

    def evaluate(self, t, x):
        tab = self.table
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        t, x = np.broadcast_arrays(t, x)
        width = tab.r_delta - np.asarray(tab.r_at(t), dtype=float)
        after = t > tab.delta + 1e-12 * tab.horizon
        width = np.where(after, np.maximum(width, 0.0), 0.0)
        inside = after & (np.abs(x) < width)
        safe = np.where(inside, width, 1.0)
        out = np.where(inside, -x / safe, -np.sign(x))
        return out if out.ndim else float(out)


def entropy_eval(t, x, table: CoefficientTable):
    return EntropyField(table)(t, x)


@dataclass(frozen=True)
class EquilibriumTriple:
    A: float
    mu: np.ndarray
    h: float
    z: float = 0.0


def admissible_parameters(xi: float, table: CoefficientTable) -> tuple[float, ...]:
    """The three values of A for which xi - A k is an equilibrium mean."""
    k_delta = table.k_delta
    if abs(xi) >= k_delta:
        raise ValueError(
            f"|xi| = {abs(xi):.6g} must be below int_0^delta w^-2 = {k_delta:.6g} "
            "for three equilibria to exist"
        )
    return (-1.0, xi / k_delta, 1.0)


def equilibrium_path(A: float, xi: float, table: CoefficientTable,
                     atol: float = 1e-9) -> EquilibriumTriple:
    allowed = admissible_parameters(xi, table)
    if not any(abs(A - a) <= atol for a in allowed):
        raise ValueError(f"A={A} is not one of the equilibrium parameters {allowed}")
    mu = xi - A * np.asarray(table.k)
    mu.setflags(write=False)
    matched = float(TerminalCondition(table.r_delta)(mu[-1]))
    if abs(matched - A) > atol:
        raise ArithmeticError(f"terminal matching failed: g(mu_T)={matched!r}, A={A!r}")
    return EquilibriumTriple(A=float(A), mu=mu, h=float(A), z=0.0)
