"""Fourier-side covariance kernels and their lattice norms.

The quadratic part of the effective measure is described by a momentum
multiplier on the block torus.  This module builds the inverse
covariance (base multiplier plus the field-curvature correction carried
through the background extension), takes its operator square root,
and computes the norms that feed the bound pipeline: the weighted
Hilbert-Schmidt form on cell pairs, the cell-block operator norm in
mean-plus-fluctuation coordinates, the weighted row norm of the
background kernel, and smooth momentum-shell decompositions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, VerificationError
from .lattice import BackgroundKernel, LatticeHierarchy, block_mean
from .util import min_image


def psq_grid(side: int, d: int) -> np.ndarray:
    """Symbol of minus the lattice Laplacian, sum_k (2 - 2 cos p_k)."""
    p = 2.0 * np.pi * np.arange(side) / side
    one = 2.0 - 2.0 * np.cos(p)
    grids = np.meshgrid(*([one] * d), indexing="ij")
    return sum(grids)


def momentum_norms(side: int, d: int) -> np.ndarray:
    """Euclidean norm of the principal-value momentum at each grid point."""
    k = np.arange(side)
    p = 2.0 * np.pi * np.where(k <= side // 2, k, k - side) / side
    grids = np.meshgrid(*([p] * d), indexing="ij")
    return np.sqrt(sum(g**2 for g in grids))


@dataclass(frozen=True)
class MultiplierModel:
    """Base inverse-covariance multiplier z * phat^2 + nu plus a cubic
    irrelevant correction of amplitude irrelevant_amplitude * (phat^2)^(3/2).

    c_mu and c_mu_prime delimit the validated window: above momentum
    c_mu the multiplier must stay above c_mu_prime, and below c_mu the
    deviation from the quadratic part must be bounded by the cubic
    envelope with constant |irrelevant_amplitude|.
    """

    z: float = 1.0
    nu: float = 0.0
    irrelevant_amplitude: float = 0.0
    c_mu: float = 0.5
    c_mu_prime: float = 0.05

    @property
    def cubic_constant(self) -> float:
        # phat^2 <= |p|^2, so the cubic term is bounded by |amp| |p|^3
        return abs(self.irrelevant_amplitude)

    def multiplier(self, psq: np.ndarray) -> np.ndarray:
        psq = np.asarray(psq, dtype=float)
        return self.z * psq + self.nu + self.irrelevant_amplitude * psq**1.5

    def validate(self, side: int, d: int) -> None:
        """Check the window bounds on the full momentum grid."""
        psq = psq_grid(side, d)
        pnorm = momentum_norms(side, d)
        mu = self.multiplier(psq)
        bad_low, bad_env = [], []
        hi = pnorm >= self.c_mu
        viol = hi & (mu < self.c_mu_prime)
        if np.any(viol):
            for idx in np.argwhere(viol)[:5]:
                bad_low.append(tuple(int(i) for i in idx))
        lo = ~hi
        dev = np.abs(mu - self.z * psq - self.nu)
        viol2 = lo & (dev > self.cubic_constant * pnorm**3 + 1e-14)
        if np.any(viol2):
            for idx in np.argwhere(viol2)[:5]:
                bad_env.append(tuple(int(i) for i in idx))
        if bad_low or bad_env:
            raise VerificationError(
                "multiplier model fails its window bounds; "
                f"below-floor momenta {bad_low}, envelope-violating momenta {bad_env}"
            )


class KernelOperator:
    """Translation-invariant operator on block-torus fields.

    Stores the momentum multiplier and the matching real-space stencil;
    apply() works by FFT, matrix() densifies for desk-scale checks.
    """

    def __init__(self, multiplier: np.ndarray):
        multiplier = np.asarray(multiplier)
        if np.iscomplexobj(multiplier):
            if np.max(np.abs(multiplier.imag)) > 1e-12:
                raise DomainError("multiplier must be real")
            multiplier = multiplier.real
        self.multiplier = multiplier.astype(float)
        sten = np.fft.ifftn(self.multiplier)
        if np.max(np.abs(sten.imag)) > 1e-12 * max(1.0, np.max(np.abs(sten.real))):
            raise VerificationError(
                "stencil has a non-negligible imaginary part; multiplier "
                "lacks the required symmetry"
            )
        self.stencil = sten.real
        self.shape = self.multiplier.shape
        self.d = self.multiplier.ndim

    def apply(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        if psi.shape != self.shape:
            raise DomainError(f"field shape {psi.shape} != {self.shape}")
        return np.fft.ifftn(np.fft.fftn(psi) * self.multiplier).real

    def matrix(self) -> np.ndarray:
        side_total = int(np.prod(self.shape))
        if side_total > 4096:
            raise DomainError(f"dense matrix too large: {side_total} sites")
        cols = []
        for x in np.ndindex(*self.shape):
            col = np.roll(self.stencil, x, axis=tuple(range(self.d)))
            cols.append(col.ravel())
        return np.stack(cols, axis=1)

    def l1_stencil_norm(self) -> float:
        return float(np.abs(self.stencil).sum())


def gbar_inverse(model: MultiplierModel, hier: LatticeHierarchy) -> KernelOperator:
    """Base inverse covariance on the block torus."""
    psq = psq_grid(hier.side_block, hier.d)
    return KernelOperator(model.multiplier(psq))


def a_star_a(kernel: BackgroundKernel) -> KernelOperator:
    """Block-level autocorrelation of the background extension.

    Entry (x, y) integrates the product of the columns for x and y over
    the fine torus with the volume-normalized integral; the zero-mode
    multiplier is exactly 1 because columns have unit row sums and
    delta cube averages.
    """
    hier = kernel.hier
    spec = hier.spec
    a_hat = np.fft.fftn(kernel.stencil)
    corr = np.fft.ifftn(np.abs(a_hat) ** 2).real
    sl = tuple(
        slice(None, None, spec.block_side) for _ in range(hier.d)
    )
    stencil = corr[sl] * float(spec.L) ** (-spec.d * spec.n)
    mult = np.fft.fftn(stencil)
    if np.max(np.abs(mult.imag)) > 1e-10:
        raise VerificationError("autocorrelation multiplier is not real")
    return KernelOperator(mult.real)


@dataclass
class GammaPair:
    gamma: KernelOperator
    g_inverse: KernelOperator


def gamma(
    model: MultiplierModel,
    kernel: BackgroundKernel,
    g: float,
    phibar: float,
) -> GammaPair:
    """Fluctuation covariance square root.

    The inverse covariance is the base multiplier plus 3 g phibar^2
    times the background autocorrelation; its inverse square root is
    the returned gamma.  Raises when the combined multiplier is not
    strictly positive, reporting the offending momentum.
    """
    hier = kernel.hier
    base = gbar_inverse(model, hier)
    corr = a_star_a(kernel)
    mult = base.multiplier + 3.0 * g * phibar**2 * corr.multiplier
    mmin = float(mult.min())
    if mmin <= 0.0:
        arg = np.unravel_index(int(np.argmin(mult)), mult.shape)
        raise VerificationError(
            f"inverse covariance not positive: min multiplier {mmin:.6g} "
            f"at momentum index {tuple(int(i) for i in arg)}"
        )
    g_inv = KernelOperator(mult)
    return GammaPair(KernelOperator(mult**-0.5), g_inv)


# ---------------------------------------------------------------------------
# dotted (mean plus fluctuation) coordinates on coarse cells


def cell_sites(hier: LatticeHierarchy, cell) -> list:
    """Block-torus sites of a coarse cell, in the fixed lexicographic
    order used for the distinguished first site."""
    return [tuple(int(c) for c in s) for s in hier.sites_of_coarse_cell(np.asarray(cell))]


def dotted_row_maps(hier: LatticeHierarchy, cells):
    """Row transform R and column transform S for the listed cells.

    R maps site fields to (mean, deviations) per cell; S is its right
    inverse mapping dotted coordinates back to site values on the cells.
    Returned as dense arrays indexed (cell-major dotted index, site).
    """
    V = hier.cells_per_coarse
    nsites = hier.side_block**hier.d
    shape = hier.block_shape()

    def flat(site):
        return int(np.ravel_multi_index(site, shape))

    rows_R = []
    cols_S = []
    for cell in cells:
        sites = cell_sites(hier, cell)
        flats = [flat(s) for s in sites]
        r_mean = np.zeros(nsites)
        r_mean[flats] = 1.0 / V
        rows_R.append(r_mean)
        s_mean = np.zeros(nsites)
        s_mean[flats] = 1.0
        cols_S.append(s_mean)
        for k in range(1, V):
            r = np.zeros(nsites)
            r[flats[k]] += 1.0
            r[flats] -= 1.0 / V
            rows_R.append(r)
            s = np.zeros(nsites)
            s[flats[k]] += 1.0
            s[flats[0]] -= 1.0
            cols_S.append(s)
    return np.stack(rows_R, axis=0), np.stack(cols_S, axis=1)


def dotted_weights(V: int, d: int = None, half: bool = True) -> np.ndarray:
    """Per-dotted-index weights: V^(-1/2) for the mean, V^(1/2) for
    deviations."""
    w = np.full(V, math.sqrt(V))
    w[0] = 1.0 / math.sqrt(V)
    return w


@dataclass
class HSNormReport:
    value: float
    lambda_max: float
    rough_bound: float
    n_dotted: int
    sup_index: tuple


def hs_norm(
    K: np.ndarray, hier: LatticeHierarchy, X_cells, Xp_cells
) -> HSNormReport:
    """Weighted Hilbert-Schmidt dominance constant of the composed kernel.

    K maps block fields to fine fields (dense, fine sites by block
    sites).  For cells z in X and dotted columns a, b built on the cells
    of Xp, form M[a, b] = sum over z of the absolute volume-normalized
    integral over the fine region under z of the product of the two
    columns.  The value is the largest u-weighted absolute row sum,
    which dominates the u-weighted quadratic form (and in particular
    its largest eigenvalue, re-verified here).
    """
    spec = hier.spec
    V = hier.cells_per_coarse
    nfine = hier.side_fine**hier.d
    K = np.asarray(K, dtype=float)
    if K.shape != (nfine, hier.side_block**hier.d):
        raise DomainError(f"kernel shape {K.shape} unexpected")

    shape = hier.block_shape()

    def flat(site):
        return int(np.ravel_multi_index(site, shape))

    cols = []
    for cell in Xp_cells:
        sites = cell_sites(hier, cell)
        flats = [flat(s) for s in sites]
        base = K[:, flats]
        c_mean = base.sum(axis=1)
        cols.append(c_mean)
        for k in range(1, V):
            cols.append(base[:, k] - base[:, 0])
    cols = np.stack(cols, axis=1)  # (fine sites, dotted)
    ndot = cols.shape[1]

    weight = float(spec.L) ** (-spec.d * spec.n)
    M = np.zeros((ndot, ndot))
    for z in X_cells:
        fsites = hier.fine_sites_of_coarse_cell(np.asarray(z))
        idx = np.ravel_multi_index(tuple(fsites.T), hier.fine_shape())
        block = cols[idx, :]
        M += np.abs(weight * (block.T @ block))

    u = np.concatenate([dotted_weights(V) for _ in Xp_cells])
    weighted = (u[:, None] * u[None, :]) * M
    rowsums = weighted.sum(axis=1)
    value = float(rowsums.max())
    sup_index = int(np.argmax(rowsums))
    lam = float(np.linalg.eigvalsh((u[:, None] * M * u[None, :])).max())
    rough = (
        4.0
        * float(V) ** 3
        * len(X_cells)
        * len(Xp_cells)
        * float(np.max(np.abs(K))) ** 2
        * nfine
        * weight
    )
    return HSNormReport(value, lam, rough, ndot, (sup_index // V, sup_index % V))


@dataclass
class BlockNormReport:
    value: float
    row_value: float
    col_value: float


def gamma_block_norm(gamma_matrix: np.ndarray, hier: LatticeHierarchy) -> BlockNormReport:
    """Cell-pair operator norm of a block kernel in dotted coordinates.

    The kernel is conjugated to (mean, deviation) coordinates cell by
    cell; each cell pair contributes the largest weighted column sum,
    with weights V for deviation rows, V^(1/2) for deviation columns
    and V^(-1/2) for mean columns.  The norm is the larger of the
    maximal row and column sums over cell pairs.  For the identity the
    value is exactly V^(3/2).
    """
    V = hier.cells_per_coarse
    cells = hier.all_coarse_cells()
    R, S = dotted_row_maps(hier, cells)
    G = np.asarray(gamma_matrix, dtype=float)
    dotted = R @ G @ S
    ncell = len(cells)

    wj = np.full(V, float(V))
    wj[0] = 1.0
    wk = np.full(V, math.sqrt(V))
    wk[0] = 1.0 / math.sqrt(V)

    per_pair = np.zeros((ncell, ncell))
    for a in range(ncell):
        for b in range(ncell):
            blockmat = np.abs(dotted[a * V : (a + 1) * V, b * V : (b + 1) * V])
            scores = (wj[:, None] * blockmat).sum(axis=0) * wk
            per_pair[a, b] = scores.max()
    row_value = float(per_pair.sum(axis=1).max())
    col_value = float(per_pair.sum(axis=0).max())
    return BlockNormReport(max(row_value, col_value), row_value, col_value)


def a_norm(kernel: BackgroundKernel, c_a: float = 1.0) -> float:
    """Distance-weighted row norm of the background kernel.

    sup over fine sites of the sum over blocks of the kernel magnitude
    times exp((c_a / 2) L^(-n) |distance from the site to the block
    center|), distances in fine units with torus wraparound.  At n = 0
    the kernel is the identity and the norm is 1.
    """
    hier = kernel.hier
    spec = hier.spec
    if c_a < 0:
        raise DomainError("c_a must be nonnegative")
    coords = np.stack(
        [g.ravel() for g in np.indices(hier.fine_shape())], axis=-1
    )
    rate = 0.5 * c_a / float(spec.block_side)
    acc = np.zeros(hier.side_fine**hier.d)
    for x in np.ndindex(*hier.block_shape()):
        col = kernel.column(np.array(x)).ravel()
        center = spec.block_side * np.asarray(x)
        delta = min_image(coords - center[None, :], hier.side_fine)
        dist = np.sqrt((delta.astype(float) ** 2).sum(axis=1))
        acc += np.abs(col) * np.exp(rate * dist)
    return float(acc.max())


# ---------------------------------------------------------------------------
# momentum-shell decomposition


def _bump(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def shell_cutoff(t: np.ndarray) -> np.ndarray:
    """Smooth transition equal to 1 for t <= 1 and 0 for t >= 2."""
    t = np.asarray(t, dtype=float)
    a = _bump(2.0 - t)
    b = _bump(t - 1.0)
    return a / (a + b)


@dataclass
class MultiscaleReport:
    n_slices: int
    reconstruction_error: float
    sup_constant: float
    l1_constant: float
    slice_sup: list
    slice_l1: list


def multiscale_decompose(
    msq: float, side: int, d: int, z: float = 1.0
) -> MultiscaleReport:
    """Split the square-root covariance into smooth momentum shells.

    The number of shells is 1 + floor(log(1/m)) with m the mass; shell
    j isolates momenta near e^(-j).  Reports the reconstruction error
    of the summed shells against the unsliced stencil, the largest
    rescaled sup norm sup_j |slice_j|_sup e^((d-1) j), and the largest
    rescaled summed norm sup_j |slice_j|_1 e^(-j).
    """
    if msq <= 0:
        raise DomainError("msq must be positive")
    m = math.sqrt(msq)
    J = max(0, math.floor(math.log(1.0 / m))) if m < 1 else 0
    psq = psq_grid(side, d)
    pnorm = momentum_norms(side, d)
    ghat = (z * psq + msq) ** -0.5

    cuts = []
    if J == 0:
        cuts.append(np.ones_like(pnorm))
    else:
        cuts.append(1.0 - shell_cutoff(math.e * pnorm))
        for j in range(1, J):
            cuts.append(
                shell_cutoff(math.e**j * pnorm) - shell_cutoff(math.e ** (j + 1) * pnorm)
            )
        cuts.append(shell_cutoff(math.e**J * pnorm))

    total = np.zeros((side,) * d)
    slice_sup, slice_l1 = [], []
    for j, chi in enumerate(cuts):
        sten = np.fft.ifftn(chi * ghat).real
        total += sten
        slice_sup.append(float(np.abs(sten).max()))
        slice_l1.append(float(np.abs(sten).sum()))
    ref = np.fft.ifftn(ghat).real
    err = float(np.max(np.abs(total - ref)))
    sup_c = max(s * math.e ** ((d - 1) * j) for j, s in enumerate(slice_sup))
    l1_c = max(s * math.e ** (-j) for j, s in enumerate(slice_l1))
    return MultiscaleReport(len(cuts), err, sup_c, l1_c, slice_sup, slice_l1)


def gamma_tilde_norm(gamma_op: KernelOperator, z: float, msq: float) -> float:
    """Summed-stencil norm of the square-root covariance minus its
    massive reference (z phat^2 + msq)^(-1/2)."""
    if msq <= 0:
        raise DomainError("msq must be positive")
    side = gamma_op.shape[0]
    d = gamma_op.d
    psq = psq_grid(side, d)
    ref = KernelOperator((z * psq + msq) ** -0.5)
    return float(np.abs(gamma_op.stencil - ref.stencil).sum())
