"""Gaussian few-mode machinery for the multi-well trap.

All computations run in trap units: lengths in w_z, energies in
E0 = hbar^2/(m w_z^2), times in t0 = m w_z^2/hbar, so hbar = m = 1
internally. ``UnitSystem`` anchors these to SI and carries the particle
number and scattering length; the only physical input to the matrix
elements is the dimensionless interaction strength g = 4 pi N a / w_z.

The per-well basis functions are Gaussians

    g^k(r) = exp[-A_x^k x^2 - A_y^k y^2 - A_z^k (z - q_z^k)^2],

generally with complex widths. The overlap matrix K, kinetic/potential
matrices T, V and the two-body tensor W~ are closed-form Gaussian
integrals; symmetric orthogonalization (exact or truncated to nearest
neighbors) turns them into an effective tridiagonal model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.constants as const

from .errors import (
    NonNormalizable,
    NotPositiveDefinite,
    NoConvergence,
    OutOfRange,
    SizeMismatch,
)
from .fewmode import TridiagonalComplexModel
from .numerics import minimize_norm_constrained, root_find


@dataclass(frozen=True)
class WellPotentialSpec:
    """Gaussian-profile trap: V(r) = sum_k V^k exp[-2x^2/w_x^2 - 2y^2/w_y^2
    - 2(z - s_z^k)^2/w_z^2]. Depths in E0, positions/widths in w_z."""

    depths: np.ndarray
    positions: np.ndarray
    w_x: float = 4.0
    w_y: float = 4.0
    w_z: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=float))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        if len(self.depths) != len(self.positions):
            raise SizeMismatch("depths and positions must have equal length")
        if np.any(self.depths >= 0):
            raise ValueError("all well depths must be negative")
        if min(self.w_x, self.w_y, self.w_z) <= 0:
            raise ValueError("well widths must be positive")
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("well positions must be strictly increasing")

    @property
    def size(self):
        return len(self.depths)


def standard_four_well(depth_outer=-60.0, depth_inner=-45.0, spacing=1.8):
    """The four-well trap used for the physical scenarios (units of E0/w_z)."""
    pos = spacing * (np.arange(4) - 1.5)
    return WellPotentialSpec(
        depths=np.array([depth_outer, depth_inner, depth_inner, depth_outer]),
        positions=pos,
    )


@dataclass(frozen=True)
class GaussianBasisSet:
    """One Gaussian per well; complex widths allowed, Re(A) > 0 required.
    p_z and gamma are used only by the time-dependent ansatz."""

    A_x: np.ndarray
    A_y: np.ndarray
    A_z: np.ndarray
    q_z: np.ndarray
    p_z: np.ndarray | None = None
    gamma: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A_x", "A_y", "A_z"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex))
        object.__setattr__(self, "q_z", np.asarray(self.q_z, dtype=float))
        n = len(self.q_z)
        if not (len(self.A_x) == len(self.A_y) == len(self.A_z) == n):
            raise SizeMismatch("all basis parameter vectors must share one length")
        pz = np.zeros(n) if self.p_z is None else np.asarray(self.p_z, dtype=float)
        gm = np.zeros(n, dtype=complex) if self.gamma is None else np.asarray(self.gamma, dtype=complex)
        object.__setattr__(self, "p_z", pz)
        object.__setattr__(self, "gamma", gm)
        for a in (self.A_x, self.A_y, self.A_z):
            if np.any(a.real <= 0):
                raise NonNormalizable("Re(A) must be positive on every axis")

    @property
    def size(self):
        return len(self.q_z)


@dataclass(frozen=True)
class UnitSystem:
    """Trap units anchored to SI: length w_z, energy E0 = hbar^2/(m w_z^2),
    time t0 = m w_z^2/hbar."""

    w_z: float
    mass: float
    N: float
    a_scat: float

    @property
    def E0(self):
        return const.hbar**2 / (self.mass * self.w_z**2)

    @property
    def t0(self):
        return self.mass * self.w_z**2 / const.hbar

    @property
    def E0_hz(self):
        return self.E0 / const.h

    @property
    def g(self):
        """Dimensionless interaction 4 pi N a / w_z (hbar = m = 1 units)."""
        return 4.0 * math.pi * self.N * self.a_scat / self.w_z

    @classmethod
    def rubidium87(cls, w_z=1e-6, N=1e5, a_scat=2.83 * const.physical_constants["Bohr radius"][0]):
        return cls(w_z=w_z, mass=86.909180527 * const.u, N=N, a_scat=a_scat)


@dataclass(frozen=True)
class MatrixBundle:
    K: np.ndarray
    T: np.ndarray
    V: np.ndarray
    W_tensor: np.ndarray


@dataclass(frozen=True)
class EffectiveModel:
    onsite: np.ndarray
    tunneling: np.ndarray
    interaction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "onsite", np.asarray(self.onsite, dtype=float))
        object.__setattr__(self, "tunneling", np.asarray(self.tunneling, dtype=float))
        object.__setattr__(self, "interaction", np.asarray(self.interaction, dtype=float))
        if len(self.tunneling) != len(self.onsite) - 1:
            raise SizeMismatch("tunneling must have length size-1")

    def as_model(self, extra_onsite=None):
        onsite = self.onsite.astype(complex)
        if extra_onsite is not None:
            onsite = onsite + np.asarray(extra_onsite, dtype=complex)
        return TridiagonalComplexModel(
            onsite=onsite, coupling=self.tunneling, nonlinear=self.interaction
        )


def _pair(a):
    """A^{kl} = A^k + (A^l)* as an (l, k)-indexed matrix."""
    return a[None, :] + np.conj(a)[:, None]


def overlap_matrix(basis: GaussianBasisSet):
    """K_lk = <g^l|g^k>, all pairs, closed Gaussian form."""
    axy = _pair(basis.A_x)
    ayy = _pair(basis.A_y)
    azz = _pair(basis.A_z)
    kappa_z = basis.A_z[None, :] * np.conj(basis.A_z)[:, None] / azz
    dq = basis.q_z[None, :] - basis.q_z[:, None]
    c = np.exp(-kappa_z * dq**2)
    return np.sqrt(math.pi / axy) * np.sqrt(math.pi / ayy) * np.sqrt(math.pi / azz) * c


def _kappa(a):
    return a[None, :] * np.conj(a)[:, None] / _pair(a)


def _beta(a, w):
    akl = _pair(a)
    return np.sqrt(akl * w**2 / (akl * w**2 + 2.0))


def _potential_exponent(basis, s_m, w_z):
    """Exponent of the z-part of <g^l| well at s_m |g^k> relative to K_lk."""
    ak = basis.A_z[None, :]
    al = np.conj(basis.A_z)[:, None]
    qk = basis.q_z[None, :]
    ql = basis.q_z[:, None]
    akl = ak + al
    num = 2.0 * (ak * (s_m - qk) + al * (s_m - ql)) ** 2
    return np.exp(-num / (akl * (akl * w_z**2 + 2.0)))


def kinetic_matrix(basis: GaussianBasisSet, K=None):
    """T_lk = <g^l| -hbar^2/2m Delta |g^k> (hbar = m = 1)."""
    if K is None:
        K = overlap_matrix(basis)
    kx = _kappa(basis.A_x)
    ky = _kappa(basis.A_y)
    kz = _kappa(basis.A_z)
    dq = basis.q_z[None, :] - basis.q_z[:, None]
    # kappa already carries the 1/2m scale: for real A, kappa^{kk} = A/2,
    # and <g|-(1/2)Delta|g> = K * sum_axis kappa (verified against quadrature)
    return K * (kx + ky + kz - 2.0 * kz**2 * dq**2)


def potential_matrix(basis: GaussianBasisSet, wells: WellPotentialSpec, K=None):
    """V_lk = <g^l| V_trap |g^k>, summed over all trap wells."""
    if K is None:
        K = overlap_matrix(basis)
    bx = _beta(basis.A_x, wells.w_x)
    by = _beta(basis.A_y, wells.w_y)
    bz = _beta(basis.A_z, wells.w_z)
    acc = np.zeros_like(K)
    for vm, sm in zip(wells.depths, wells.positions):
        acc += vm * _potential_exponent(basis, sm, wells.w_z)
    return K * bx * by * bz * acc


def interaction_tensor(basis: GaussianBasisSet, units: UnitSystem):
    """W~_lkji = g * int (g^l)* (g^j)* g^i g^k d^3r with g = 4 pi N a / w_z."""
    n = basis.size
    conj_x, conj_y, conj_z = np.conj(basis.A_x), np.conj(basis.A_y), np.conj(basis.A_z)
    w = np.empty((n, n, n, n), dtype=complex)
    q = basis.q_z
    for l in range(n):
        for k in range(n):
            for j in range(n):
                for i in range(n):
                    sx = basis.A_x[i] + basis.A_x[k] + conj_x[j] + conj_x[l]
                    sy = basis.A_y[i] + basis.A_y[k] + conj_y[j] + conj_y[l]
                    sz = basis.A_z[i] + basis.A_z[k] + conj_z[j] + conj_z[l]
                    p = 2.0 * (basis.A_z[i] * q[i] + basis.A_z[k] * q[k]
                               + conj_z[j] * q[j] + conj_z[l] * q[l])
                    c0 = (basis.A_z[i] * q[i]**2 + basis.A_z[k] * q[k]**2
                          + conj_z[j] * q[j]**2 + conj_z[l] * q[l]**2)
                    w[l, k, j, i] = (
                        np.sqrt(math.pi / sx) * np.sqrt(math.pi / sy)
                        * np.sqrt(math.pi / sz) * np.exp(p**2 / (4.0 * sz) - c0)
                    )
    return units.g * w


def hamiltonian_matrices(basis: GaussianBasisSet, wells: WellPotentialSpec,
                         units: UnitSystem):
    if basis.size != wells.size:
        raise SizeMismatch("basis and trap must have equal well counts")
    K = overlap_matrix(basis)
    return MatrixBundle(
        K=K,
        T=kinetic_matrix(basis, K),
        V=potential_matrix(basis, wells, K),
        W_tensor=interaction_tensor(basis, units),
    )


def lowdin_exact(K):
    """Symmetric orthogonalizer X = U D^{-1/2} U^dag with K = U D U^dag."""
    K = np.asarray(K, dtype=complex)
    evals, U = np.linalg.eigh(K)
    if evals[0] <= 1e-14 * abs(evals[-1]):
        raise NotPositiveDefinite(
            f"overlap matrix has eigenvalue {evals[0]:.3e} (basis linearly dependent)"
        )
    return (U / np.sqrt(evals)) @ U.conj().T


def _geo_root4(basis):
    """Fourth root of the product of real width parts, per well."""
    prod = basis.A_x.real * basis.A_y.real * basis.A_z.real
    return prod**0.25


def _nn_kernel(basis):
    """c^{kl} / sqrt(A_x^{kl} A_y^{kl} A_z^{kl}) on the off-diagonals
    (the geometry factor shared by every nearest-neighbor closed form)."""
    axy = _pair(basis.A_x)
    ayy = _pair(basis.A_y)
    azz = _pair(basis.A_z)
    kappa_z = basis.A_z[None, :] * np.conj(basis.A_z)[:, None] / azz
    dq = basis.q_z[None, :] - basis.q_z[:, None]
    c = np.exp(-kappa_z * dq**2)
    return c / (np.sqrt(axy) * np.sqrt(ayy) * np.sqrt(azz))


def _nn_mask(n):
    m = np.zeros((n, n))
    idx = np.arange(n - 1)
    m[idx, idx + 1] = 1.0
    m[idx + 1, idx] = 1.0
    return m


def lowdin_nn(basis: GaussianBasisSet):
    """Nearest-neighbor orthogonalizer X^(0) + X^(1) in closed form."""
    n = basis.size
    r4 = _geo_root4(basis)
    x0 = np.diag((2.0 / math.pi) ** 0.75 * r4).astype(complex)
    pair_geo = (r4**2)[None, :] * (r4**2)[:, None]
    denom = r4[None, :] + r4[:, None]
    x1 = (
        -((8.0 / math.pi) ** 0.75)
        * _nn_kernel(basis) * _nn_mask(n)
        * pair_geo / denom
    )
    return x0 + x1


def lowdin_nn_inverse(basis: GaussianBasisSet):
    """Closed-form (X^(0) + X^(1))^{-1} through first order in the overlap."""
    n = basis.size
    r4 = _geo_root4(basis)
    y0 = np.diag((math.pi**3 / 8.0) ** 0.25 / r4).astype(complex)
    pair_geo = (r4**2)[None, :] * (r4**2)[:, None]
    denom = r4[None, :] + r4[:, None]
    y1 = (
        (8.0 * math.pi**3) ** 0.25
        * _nn_kernel(basis) * _nn_mask(n)
        * np.sqrt(pair_geo) / denom
    )
    return y0 + y1


def effective_model(basis: GaussianBasisSet, wells: WellPotentialSpec,
                    units: UnitSystem):
    """Tridiagonal few-mode parameters in the nearest-neighbor approximation."""
    if basis.size != wells.size:
        raise SizeMismatch("basis and trap must have equal well counts")
    n = basis.size
    axr = basis.A_x.real
    ayr = basis.A_y.real
    azr = basis.A_z.real

    bx = _beta(basis.A_x, wells.w_x)
    by = _beta(basis.A_y, wells.w_y)
    bz = _beta(basis.A_z, wells.w_z)

    # onsite energies: kinetic zero order plus the own-well potential term
    e = np.empty(n)
    for k in range(n):
        own = wells.depths[k] * math.exp(
            -2.0 * bz[k, k].real ** 2 * (wells.positions[k] - basis.q_z[k]) ** 2
            / wells.w_z**2
        )
        e[k] = 0.5 * (axr[k] + ayr[k] + azr[k]) + (bx[k, k] * by[k, k] * bz[k, k]).real * own

    # h_lk = t_lk + v_lk with the potential restricted to the two own wells
    kx = _kappa(basis.A_x)
    ky = _kappa(basis.A_y)
    kz = _kappa(basis.A_z)
    dq = basis.q_z[None, :] - basis.q_z[:, None]
    t_lk = kx + ky + kz - 2.0 * kz**2 * dq**2
    v_lk = np.zeros((n, n), dtype=complex)
    for l in range(n):
        for k in range(n):
            acc = (
                wells.depths[k] * _potential_exponent(basis, wells.positions[k], wells.w_z)[l, k]
                + wells.depths[l] * _potential_exponent(basis, wells.positions[l], wells.w_z)[l, k]
            )
            v_lk[l, k] = bx[l, k] * by[l, k] * bz[l, k] * acc
    h_lk = t_lk + v_lk

    r4 = _geo_root4(basis)
    kernel = _nn_kernel(basis)
    j = np.empty(n - 1)
    for k in range(n - 1):
        l = k + 1
        pref = -2.0 * math.sqrt(2.0) * (r4[k] ** 2 * r4[l] ** 2) / (r4[k] + r4[l])
        inner = (e[k] - h_lk[l, k]) / r4[k] + (e[l] - h_lk[l, k]) / r4[l]
        h1 = (pref * inner * kernel[l, k]).real
        j[k] = -h1

    c = units.g / math.pi**1.5 * np.sqrt(axr * ayr * azr)
    return EffectiveModel(onsite=e, tunneling=j, interaction=c)


def effective_amplitudes(d, basis: GaussianBasisSet, exact=False):
    """Orthogonalized amplitudes d_eff = X^{-1} d and occupations |d_eff|^2."""
    d = np.asarray(d, dtype=complex)
    if len(d) != basis.size:
        raise SizeMismatch("amplitude vector size mismatch")
    if exact:
        x = lowdin_exact(overlap_matrix(basis))
        d_eff = np.linalg.solve(x, d)
    else:
        d_eff = lowdin_nn_inverse(basis) @ d
    return d_eff, np.abs(d_eff) ** 2


def mean_field_energy(d, basis: GaussianBasisSet, wells: WellPotentialSpec,
                      units: UnitSystem, bundle: MatrixBundle | None = None):
    """E_mf = d^dag (T + V) d + 1/2 sum W~ over the untruncated matrices."""
    d = np.asarray(d, dtype=complex)
    if bundle is None:
        bundle = hamiltonian_matrices(basis, wells, units)
    lin = np.vdot(d, (bundle.T + bundle.V) @ d)
    nonlin = 0.5 * np.einsum(
        "l,k,j,i,lkji->", np.conj(d), d, np.conj(d), d, bundle.W_tensor
    )
    return float((lin + nonlin).real)


def _default_seed(wells: WellPotentialSpec):
    n = wells.size
    return GaussianBasisSet(
        A_x=np.full(n, 0.3), A_y=np.full(n, 0.3), A_z=np.full(n, 2.0),
        q_z=wells.positions.copy(),
    )


def _unpack_fit(x, n):
    ax = x[0:n]
    ay = x[n:2 * n]
    az = x[2 * n:3 * n]
    qz = x[3 * n:4 * n]
    d = x[4 * n:5 * n]
    return ax, ay, az, qz, d


def fit_ground_state(wells: WellPotentialSpec, units: UnitSystem,
                     seed_basis: GaussianBasisSet | None = None, seed_d=None,
                     tol=1e-10, max_iter=800):
    """Minimize the mean-field energy over real widths, positions and real
    amplitudes with the norm constraint d^dag K d = 1.

    Returns (basis, d, energy)."""
    if seed_basis is None:
        seed_basis = _default_seed(wells)
    n = wells.size
    if seed_d is None:
        seed_d = np.full(n, 1.0)
    x0 = np.concatenate([
        seed_basis.A_x.real, seed_basis.A_y.real, seed_basis.A_z.real,
        seed_basis.q_z, np.asarray(seed_d, dtype=float),
    ])

    def build(x):
        ax, ay, az, qz, d = _unpack_fit(x, n)
        basis = GaussianBasisSet(A_x=ax, A_y=ay, A_z=az, q_z=qz)
        return basis, d.astype(complex)

    def energy(x):
        basis, d = build(x)
        return mean_field_energy(d, basis, wells, units)

    def norm_value(x):
        basis, d = build(x)
        return float(np.real(np.vdot(d, overlap_matrix(basis) @ d)))

    lo = np.concatenate([np.full(3 * n, 1e-3), np.full(n, -np.inf), np.full(n, -np.inf)])
    hi = np.full(5 * n, np.inf)

    def project(x):
        basis, d = build(x)
        nrm = float(np.real(np.vdot(d, overlap_matrix(basis) @ d)))
        if nrm <= 0:
            return x
        out = x.copy()
        out[4 * n:5 * n] = x[4 * n:5 * n] / math.sqrt(nrm)
        return out

    x, e = minimize_norm_constrained(
        energy, project(x0), constraint=norm_value, tol=tol,
        project=project, bounds=list(zip(lo, hi)), max_iter=max_iter,
    )
    basis, d = build(x)
    return basis, d, e


def invert_to_potential(target: EffectiveModel, current_wells: WellPotentialSpec,
                        units: UnitSystem, seed_basis: GaussianBasisSet | None = None,
                        tol=1e-8, vary_positions=True):
    """Find outer-well depths (and optionally positions) whose ground-state
    effective model reproduces the targeted outer elements E_0, E_3
    (onsite) and J_01, J_23 (tunneling); inner wells held fixed.

    Continuation problem: ``target`` must lie near the image of
    ``current_wells``. Returns the adjusted WellPotentialSpec."""
    n = current_wells.size
    if n != len(target.onsite):
        raise SizeMismatch("target size must match the trap")
    state = {"basis": seed_basis, "d": None}

    def wells_from(p):
        depths = current_wells.depths.copy()
        positions = current_wells.positions.copy()
        depths[0], depths[-1] = p[0], p[1]
        if vary_positions:
            positions[0], positions[-1] = p[2], p[3]
        if depths[0] >= 0 or depths[-1] >= 0:
            raise OutOfRange("outer-well depth left the attractive domain")
        return replace(current_wells, depths=depths, positions=positions)

    def residual(p):
        wells = wells_from(p)
        basis, d, _ = fit_ground_state(
            wells, units, seed_basis=state["basis"], seed_d=state["d"], tol=1e-11
        )
        state["basis"], state["d"] = basis, d.real
        em = effective_model(basis, wells, units)
        res = [
            em.onsite[0] - target.onsite[0],
            em.onsite[-1] - target.onsite[-1],
        ]
        if vary_positions:
            res += [
                em.tunneling[0] - target.tunneling[0],
                em.tunneling[-1] - target.tunneling[-1],
            ]
        return np.array(res)

    p0 = [current_wells.depths[0], current_wells.depths[-1]]
    if vary_positions:
        p0 += [current_wells.positions[0], current_wells.positions[-1]]
    report = root_find(residual, np.array(p0, dtype=float), tol=tol, max_iter=60)
    if not report.converged:
        raise NoConvergence(
            f"potential inversion stalled at residual {report.residual_norm:.3e}"
        )
    return wells_from(report.solution)
