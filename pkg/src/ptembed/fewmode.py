"""Discrete mode models: tridiagonal (possibly non-Hermitian) Hamiltonians,
observables and their closed-form rates, and the two-mode spectrum.

States are plain complex numpy vectors (the mode amplitudes psi_k). Internal
units set hbar = 1; energies are measured in the reference coupling J12 for
abstract scenarios and in E0 = hbar^2 / (m w_z^2) for physical ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SizeMismatch, UnsupportedSize
from .numerics import IntegratorSettings, integrate_adaptive


@dataclass(frozen=True)
class TridiagonalComplexModel:
    """Onsite energies (complex), nearest-neighbor couplings, nonlinearities.

    Hermitian iff all onsite energies are real.
    """

    onsite: np.ndarray
    coupling: np.ndarray
    nonlinear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "onsite", np.asarray(self.onsite, dtype=complex))
        object.__setattr__(self, "coupling", np.asarray(self.coupling, dtype=float))
        object.__setattr__(self, "nonlinear", np.asarray(self.nonlinear, dtype=float))
        if len(self.coupling) != len(self.onsite) - 1:
            raise SizeMismatch("coupling must have length size-1")
        if len(self.nonlinear) != len(self.onsite):
            raise SizeMismatch("nonlinear must have length size")

    @property
    def size(self):
        return len(self.onsite)

    @property
    def is_hermitian(self):
        return bool(np.all(self.onsite.imag == 0.0))


def pt_two_mode(gamma, j12=1.0, c=0.0):
    """The balanced gain/loss two-mode model: onsite energies +-i*gamma."""
    return TridiagonalComplexModel(
        onsite=np.array([1j * gamma, -1j * gamma]),
        coupling=np.array([j12]),
        nonlinear=np.array([c, c], dtype=float),
    )


@dataclass(frozen=True)
class ObservableSet:
    """Occupations, nearest-neighbor currents and pair correlations.

    ``j_tilde`` and ``j`` are nearest-neighbor vectors (length size-1) with
    j_{k,k+1} = J_{k,k+1} * j_tilde_{k,k+1}; ``C`` is the full symmetric
    correlation matrix C_kl = psi_k psi_l* + psi_k* psi_l.
    """

    n: np.ndarray
    j: np.ndarray
    j_tilde: np.ndarray
    C: np.ndarray = field(repr=False)


def cross_moments(psi):
    """Full pair matrices (C_kl, j_tilde_kl) for all index pairs."""
    p = np.outer(psi, np.conj(psi))
    return 2.0 * p.real, -2.0 * p.imag


def model_rhs(psi, model: TridiagonalComplexModel):
    """d psi / dt for i hbar d psi/dt = H psi (hbar = 1)."""
    if len(psi) != model.size:
        raise SizeMismatch(f"state size {len(psi)} != model size {model.size}")
    h = (model.onsite + model.nonlinear * np.abs(psi) ** 2) * psi
    h[:-1] -= model.coupling * psi[1:]
    h[1:] -= model.coupling * psi[:-1]
    return -1j * h


def observables(psi, model: TridiagonalComplexModel):
    if len(psi) != model.size:
        raise SizeMismatch(f"state size {len(psi)} != model size {model.size}")
    c_mat, jt_mat = cross_moments(psi)
    n = np.abs(psi) ** 2
    jt = np.array([jt_mat[k, k + 1] for k in range(model.size - 1)])
    return ObservableSet(n=n, j=model.coupling * jt, j_tilde=jt, C=c_mat)


def observable_rates(psi, model: TridiagonalComplexModel):
    """Closed-form time derivatives of (n1, n2, j12, C12).

    For size 2 the indices refer to the two modes and the rates carry the
    gain/loss terms 2 n_k Im E_k; for size 4 they refer to the middle wells
    (modes 1 and 2) and carry the reservoir couplings instead.
    """
    if model.size == 2:
        psi = np.asarray(psi, dtype=complex)
        e1, e2 = model.onsite
        c1, c2 = model.nonlinear
        j12c = model.coupling[0]
        c_mat, jt_mat = cross_moments(psi)
        n = np.abs(psi) ** 2
        jt12 = jt_mat[0, 1]
        c12 = c_mat[0, 1]
        de = e1.real - e2.real + c1 * n[0] - c2 * n[1]
        dn1 = -j12c * jt12 + 2.0 * n[0] * e1.imag
        dn2 = j12c * jt12 + 2.0 * n[1] * e2.imag
        dj12 = (
            2.0 * j12c**2 * (n[0] - n[1])
            + (e1.imag + e2.imag) * j12c * jt12
            + j12c * de * c12
        )
        dc12 = (e1.imag + e2.imag) * c12 - de * jt12
        return np.array([dn1, dn2, dj12, dc12])
    if model.size == 4:
        psi = np.asarray(psi, dtype=complex)
        e = model.onsite
        if np.any(e.imag != 0.0):
            raise UnsupportedSize("four-mode rates assume a Hermitian model")
        c = model.nonlinear
        j01c, j12c, j23c = model.coupling
        c_mat, jt_mat = cross_moments(psi)
        n = np.abs(psi) ** 2
        de = e[1].real - e[2].real + c[1] * n[1] - c[2] * n[2]
        dn1 = j01c * jt_mat[0, 1] - j12c * jt_mat[1, 2]
        dn2 = j12c * jt_mat[1, 2] - j23c * jt_mat[2, 3]
        dj12 = (
            2.0 * j12c**2 * (n[1] - n[2])
            - j12c * (j01c * c_mat[0, 2] - j23c * c_mat[1, 3])
            + j12c * de * c_mat[1, 2]
        )
        dc12 = j01c * jt_mat[0, 2] - j23c * jt_mat[1, 3] - de * jt_mat[1, 2]
        return np.array([dn1, dn2, dj12, dc12])
    raise UnsupportedSize(f"observable rates defined for sizes 2 and 4, got {model.size}")


def two_mode_eigenvalues(model: TridiagonalComplexModel):
    """Eigenvalues of the linear two-mode Hamiltonian, sorted by (Re, Im)."""
    if model.size != 2:
        raise UnsupportedSize("two_mode_eigenvalues needs a size-2 model")
    if np.any(model.nonlinear != 0.0):
        raise UnsupportedSize("eigenvalues defined for the linear model only")
    h = np.array(
        [[model.onsite[0], -model.coupling[0]], [-model.coupling[0], model.onsite[1]]]
    )
    ev = np.linalg.eigvals(h)
    order = np.lexsort((ev.imag, ev.real))
    return ev[order]


def propagate(model: TridiagonalComplexModel, psi0, t_span,
              settings: IntegratorSettings = IntegratorSettings()):
    """Integrate the model dynamics; returns the numerics Trajectory."""
    psi0 = np.asarray(psi0, dtype=complex)
    if len(psi0) != model.size:
        raise SizeMismatch("initial state size mismatch")
    return integrate_adaptive(lambda t, y: model_rhs(y, model), psi0, t_span, settings)
