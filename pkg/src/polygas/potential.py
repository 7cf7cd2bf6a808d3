"""Effective potential analysis, running coupling, and scale selection.

The single-site well (g/4)x^4 + (nu/2)x^2 - hbar*x drives everything here:
its minimizer sets the magnetization plateau, the shifted quartic around
that minimizer must admit a uniform quadratic lower bound on a complex
neighborhood, and the window of blocking scales on which both facts hold
simultaneously is what the certificate pipeline later consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

# slope of the inverse-coupling flow per blocking step, times 1/log L
FLOW_SLOPE_NUMERATOR = 9.0
FLOW_SLOPE_DENOMINATOR = 16.0 * math.pi**2

# largest float exponent for which floor(x) still separates integers
_FRAC_RESOLUTION_LIMIT = 2.0**52


def minimize_potential(g, nu, hbar):
    """Global minimizer of (g/4)x^4 + (nu/2)x^2 - hbar*x.

    The critical points solve g x^3 + nu x = hbar; the returned root is
    polished by Newton steps and checked to beat every other critical
    point. hbar < 0 is rejected, negative tilts are handled upstream by
    odd symmetry.
    """
    if g <= 0:
        raise DomainError(f"quartic coupling must be positive, got {g}")
    if hbar < 0:
        raise DomainError("negative tilt: flip the sign of the field instead")
    roots = np.roots([g, 0.0, nu, -hbar])
    real = roots[np.abs(roots.imag) < 1e-9 * (1.0 + np.abs(roots.real))].real
    if real.size == 0:
        # cubic with real coefficients always has a real root; only
        # pathological conditioning lands here
        real = np.array([(hbar / g) ** (1.0 / 3.0) if hbar > 0 else 0.0])

    def well(x):
        return 0.25 * g * x**4 + 0.5 * nu * x**2 - hbar * x

    x = float(real[np.argmin(well(real))])
    for _ in range(4):
        grad = g * x**3 + nu * x - hbar
        hess = 3 * g * x**2 + nu
        if hess <= 0:
            break
        x -= grad / hess
    scale = max(abs(hbar), g * abs(x) ** 3, abs(nu * x), 1e-300)
    if abs(g * x**3 + nu * x - hbar) > 1e-12 * scale:
        raise DomainError("minimizer residual did not converge")
    return x


def v_eps(x, eps, g, phibar):
    """Shifted quartic -eps*x + g*phibar*x^3 + (g/4)x^4.

    Accepts real or complex arrays; the quadratic term is absent because
    it is absorbed into the Gaussian reference measure.
    """
    x = np.asarray(x)
    return -eps * x + g * phibar * x**3 + 0.25 * g * x**4


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of the quadratic-lower-bound verification."""

    measured_infimum: float
    certified_bound: float
    passed: bool
    worst_x: float
    eps_ratio: float
    radius_ratio: float
    binding: str
    tail_ok: bool
    offset: float


def stability_infimum(eps_hat, r_frak, g, phibar, eta=0.0):
    """Verify Re V_eps on a complex tube against a quadratic lower bound.

    Checks, for all real x and complex shifts |r| <= 2*r_frak and tilt
    magnitudes up to eps_hat, that

        -eps_hat|x+r| + Re(g*phibar*(x+r)^3 + (g/4)(x+r)^4)
            >= -(1+eta) g phibar^2 x^2 - 3(1+eta) r_frak (eps_hat + 12 g phibar r_frak^2)

    The x-grid has 4001 points on [-10 phibar, 10 phibar] (step phibar/200,
    so the sharp point -2 phibar is a grid point); both Re(polynomial) and
    -|x+r| attain their minimum over the shift disk on its boundary, which
    is sampled in theta. The certified bound subtracts the worst quadratic
    interpolation error between grid points, and the tail |x| > 10 phibar
    is covered by quartic domination.
    """
    if g <= 0 or phibar <= 0:
        raise DomainError("need g > 0 and phibar > 0")
    if eps_hat < 0 or r_frak < 0 or eta < 0:
        raise DomainError("eps_hat, r_frak, eta must be nonnegative")

    step = phibar / 200.0
    x = np.arange(-2000, 2001, dtype=float) * step
    if r_frak > 0:
        theta = np.linspace(0.0, 2 * math.pi, 256, endpoint=False)
        shifts = 2.0 * r_frak * np.exp(1j * theta)
    else:
        shifts = np.array([0.0 + 0.0j])
    offset = 3.0 * (1 + eta) * r_frak * (eps_hat + 12.0 * g * phibar * r_frak**2)

    y = x[:, None] + shifts[None, :]
    lhs = -eps_hat * np.abs(y) + (g * phibar * y**3 + 0.25 * g * y**4).real
    f = lhs.min(axis=1) + (1 + eta) * g * phibar**2 * x**2 + offset
    worst = int(np.argmin(f))
    measured = float(f[worst])

    # curvature bound for the polynomial part over the sampled tube; the
    # -|x+r| piece is concave in x so it never dips below its chords
    Y = 10.0 * phibar + 2.0 * r_frak
    curv = 6.0 * g * phibar * Y + 3.0 * g * Y**2 + 2.0 * (1 + eta) * g * phibar**2
    certified = measured - curv * step**2 / 8.0

    # beyond the grid the quartic must dominate every negative monomial
    # with a factor-2 cushion, which only improves as |x| grows
    X0 = 10.0 * phibar
    neg = (
        0.25 * g * (8 * X0**3 * r_frak + 24 * X0**2 * r_frak**2
                    + 32 * X0 * r_frak**3 + 16 * r_frak**4)
        + g * phibar * (X0 + 2 * r_frak) ** 3
        + eps_hat * (X0 + 2 * r_frak)
    )
    tail_ok = 0.25 * g * X0**4 >= 2.0 * neg

    scale0 = g * phibar**4
    passed = bool(measured >= -1e-10 * scale0 and tail_ok)
    eps_ratio = g * phibar**2 * r_frak / eps_hat if eps_hat > 0 else math.inf
    radius_ratio = phibar / r_frak if r_frak > 0 else math.inf
    binding = "eps_window" if eps_ratio <= radius_ratio else "radius_window"
    return StabilityReport(
        measured_infimum=measured,
        certified_bound=float(certified),
        passed=passed,
        worst_x=float(x[worst]),
        eps_ratio=eps_ratio,
        radius_ratio=radius_ratio,
        binding=binding,
        tail_ok=bool(tail_ok),
        offset=float(offset),
    )


def coupling_flow(g0, n, L, amplitude=0.0):
    """Running quartic coupling after n blocking steps.

    g(n) = 1 / (1/g0 + (9 log L / 16 pi^2) n + amplitude * log(1+n)).
    The second-order amplitude is a user knob, default off.
    """
    if g0 <= 0:
        raise DomainError(f"g0 must be positive, got {g0}")
    if n < 0:
        raise DomainError(f"step count must be nonnegative, got {n}")
    if L < 2:
        raise DomainError(f"block ratio must be at least 2, got {L}")
    slope = FLOW_SLOPE_NUMERATOR * math.log(L) / FLOW_SLOPE_DENOMINATOR
    return 1.0 / (1.0 / g0 + slope * n + amplitude * math.log1p(n))


@dataclass(frozen=True)
class CouplingState:
    """Couplings of the blocked model at a chosen scale."""

    g: float
    hbar: float
    phibar: float
    scale: float
    frac: float


@dataclass(frozen=True)
class ConditionEntry:
    """One feasibility condition with its measured margin.

    kind "lower" means the ratio must exceed the margin floor M_min
    (margin = ratio / M_min); kind "hard" means a sharp inequality whose
    margin is rhs/lhs directly. margin > 1 means satisfied either way.
    """

    name: str
    kind: str
    ratio: float
    margin: float
    satisfied: bool
    note: str = ""


@dataclass
class ConditionLedger:
    entries: list = field(default_factory=list)
    margin_min: float = 10.0
    eta: float = 0.0

    def add(self, name, ratio, kind="lower", note=""):
        if kind == "lower":
            margin = ratio / self.margin_min
        elif kind == "hard":
            margin = ratio
        else:
            raise DomainError(f"unknown condition kind {kind!r}")
        self.entries.append(
            ConditionEntry(
                name=name,
                kind=kind,
                ratio=float(ratio),
                margin=float(margin),
                satisfied=bool(margin > 1.0),
                note=note,
            )
        )

    def get(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def feasible(self):
        return all(e.satisfied for e in self.entries)

    @property
    def binding(self):
        return min(self.entries, key=lambda e: e.margin)

    def to_rows(self):
        return [
            {
                "name": e.name,
                "kind": e.kind,
                "ratio": e.ratio,
                "margin": e.margin,
                "satisfied": e.satisfied,
                "note": e.note,
            }
            for e in self.entries
        ]


@dataclass(frozen=True)
class ScaleChoice:
    """Blocking-scale selection and the couplings it induces."""

    L: int
    delta: float
    n: float
    n_exact: bool
    frac: float
    g: float
    hbar: float
    phibar: float
    radius: float
    eps_hat: float
    Lcal: int
    ell: int
    loghinv: float
    ledger: ConditionLedger


def _smallest_ell(Lcal, L, c_g):
    k = 1
    while L**k < Lcal:
        if L**k * math.exp(c_g / 12.0 * L**k) >= Lcal:
            return L**k
        k += 1
    return Lcal


def scale_condition_ledger(g, phibar, radius, eps_hat, Lcal, x_window,
                           log_Lcal, hbar, eta=0.0, margin_min=10.0):
    """Margins for every smallness condition expressible from the scale data.

    Ratios are oriented so that bigger is better; margin = ratio/margin_min.
    """
    led = ConditionLedger(margin_min=margin_min, eta=eta)
    gp2 = g * phibar**2
    led.add("small_field", g**-0.25 / phibar,
            note="minimizer well inside the analyticity region")
    led.add("phibar_large", phibar, note="minimizer is a large field")
    led.add("stability_eps", gp2 * radius / eps_hat if eps_hat > 0 else math.inf,
            note="tilt radius small against curvature times field radius")
    led.add("stability_radius", phibar / radius if radius > 0 else math.inf,
            note="field radius small against the minimizer")
    if 0 < gp2 < 1:
        led.add("hs_window", 1.0 / (Lcal**24 * gp2 * math.log(gp2) ** 2),
                note="weighted two-point norm window")
    else:
        led.add("hs_window", 0.0, note="curvature too large for the window")
    led.add("single_block_volume", 1.0 / (Lcal**12 * gp2),
            note="single-cell Gaussian moments stay order one")
    led.add("block_window_eps", 1.0 / (Lcal**4 * eps_hat * radius),
            note="tilt term small on one cell")
    led.add("block_window_cubic", 1.0 / (Lcal**4 * g * phibar * radius**3),
            note="cubic term small on one cell")
    led.add("eps_volume", 1.0 / (Lcal**10 * eps_hat),
            note="tilt derivative beats the cell volume")
    v_at_edge = g * phibar * Lcal**18 + 0.25 * g * Lcal**24
    led.add("potential_at_scale", 1.0 / (Lcal**4 * v_at_edge),
            note="well depth shallow across one cell diameter")
    led.add("expansion_convergence", Lcal**2 * radius * phibar * math.sqrt(g),
            note="coupling strength window for the cluster series")
    led.add("eps_lower", Lcal**4 * eps_hat * phibar,
            note="tilt radius reaches the observable scale")
    led.add("large_field_scale", Lcal * phibar * g**0.25,
            note="minimizer is large at the expansion scale")
    led.add("scale_window_low", x_window,
            note="blocking stops before the critical window closes")
    led.add("scale_window_high",
            log_Lcal / x_window if x_window > 0 else 0.0,
            note="blocking stops early enough for the expansion scale")
    led.add("minimizer_regime", hbar / g,
            note="tilt dominates the quartic at the stopping scale")
    return led


def choose_scales(h=None, delta=0.1, L=2, g0=1.0, *, loghinv=None,
                  amplitude=0.0, c_g=1.0, eta=0.0, margin_min=10.0):
    """Pick the blocking scale and expansion geometry for a given tilt.

    Exactly one of h (the tilt itself) and loghinv (= log 1/h, for tilts
    too small to represent) must be given. Always returns a ScaleChoice
    with a full ConditionLedger attached; infeasibility is recorded in
    the ledger, never raised, so scans over parameters stay total.
    """
    if (h is None) == (loghinv is None):
        raise DomainError("pass exactly one of h or loghinv")
    if h is not None:
        if not 0.0 < h < math.exp(-1.0):
            raise DomainError(f"tilt must lie in (0, 1/e), got {h}")
        loghinv = math.log(1.0 / h)
    if loghinv <= 1.0:
        raise DomainError(f"log(1/h) must exceed 1, got {loghinv}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"relative accuracy must lie in (0,1), got {delta}")
    if L < 2 or int(L) != L:
        raise DomainError(f"block ratio must be an integer >= 2, got {L}")
    L = int(L)

    lnL = math.log(L)
    n_real = (loghinv - math.log(loghinv) / 4.0 + 3.0 * math.log(delta)) / (3.0 * lnL)
    if n_real > _FRAC_RESOLUTION_LIMIT:
        n, frac, n_exact = n_real, 0.0, False
    else:
        n = max(1.0, math.floor(n_real))
        frac = n_real - n
        n_exact = True

    g = coupling_flow(g0, n, L, amplitude)
    hbar = delta**3 * L ** (-3.0 * frac) * loghinv**-0.25
    phibar = minimize_potential(g, 0.0, hbar)
    radius = delta**2 * phibar
    k_cal = max(1, math.floor(-1.75 * math.log(delta) / lnL + 1e-12))
    Lcal = L**k_cal
    eps_hat = 1.0 / (Lcal**4 * phibar * delta)
    ell = _smallest_ell(Lcal, L, c_g)

    x_window = frac + math.log(1.0 / delta) / lnL
    ledger = scale_condition_ledger(
        g, phibar, radius, eps_hat, Lcal,
        x_window=x_window if n_real >= 1.0 else n_real - 1.0,
        log_Lcal=k_cal, hbar=hbar, eta=eta, margin_min=margin_min,
    )
    return ScaleChoice(
        L=L, delta=delta, n=n, n_exact=n_exact, frac=frac, g=g,
        hbar=hbar, phibar=phibar, radius=radius, eps_hat=eps_hat,
        Lcal=Lcal, ell=ell, loghinv=loghinv, ledger=ledger,
    )


def magnetization_coefficient():
    """The exact constant 3/(16 pi^2) in the leading asymptotics."""
    import sympy

    return 3 / (16 * sympy.pi**2)


def predict_magnetization(h, mode="asymptotic", L=2, g0=1.0, delta=0.2,
                          amplitude=0.0):
    """Forecast the small-tilt magnetization.

    asymptotic: (3 h log(1/h) / 16 pi^2)^(1/3). refined: L^-n * phibar
    with the scale, running coupling, and minimizer from choose_scales.
    """
    if not 0.0 < h < math.exp(-1.0):
        raise DomainError(f"tilt must lie in (0, 1/e), got {h}")
    if mode == "asymptotic":
        return (3.0 * h * math.log(1.0 / h) / (16.0 * math.pi**2)) ** (1.0 / 3.0)
    if mode == "refined":
        sc = choose_scales(h=h, delta=delta, L=L, g0=g0, amplitude=amplitude)
        return L ** (-sc.n) * sc.phibar
    raise DomainError(f"unknown mode {mode!r}")


def predict_magnetization_log10(loghinv, mode="asymptotic", L=2, g0=1.0,
                                delta=0.2, amplitude=0.0):
    """log10 of the forecast, for tilts below float underflow."""
    if loghinv <= 1.0:
        raise DomainError(f"log(1/h) must exceed 1, got {loghinv}")
    ln10 = math.log(10.0)
    if mode == "asymptotic":
        return (math.log(3.0 * loghinv / (16.0 * math.pi**2)) - loghinv) / (3.0 * ln10)
    if mode == "refined":
        sc = choose_scales(loghinv=loghinv, delta=delta, L=L, g0=g0,
                           amplitude=amplitude)
        return -sc.n * math.log10(L) + math.log10(sc.phibar)
    raise DomainError(f"unknown mode {mode!r}")
