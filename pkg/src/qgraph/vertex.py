"""Vertex scattering matrices.

A vertex matrix maps incoming to outgoing amplitudes on the lines meeting at
a vertex.  Lines are ordered with the lead first (when present) followed by
the bonds to neighbours in ascending neighbour order.  The lead-lead element
is the backscattering amplitude ``rho``, the lead-bond row is ``tau`` and the
bond-bond block is ``sigma``.

Most constructed vertices have a bond block of the form
``c * I + U diag(m) U^T`` with few columns in ``U``.  That structure is
recorded on the :class:`VertexMatrix` so the propagator can use a reduced
solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALIDATION_TOL = 1e-10


class VertexError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VertexMatrix:
    """Unitary symmetric vertex scattering matrix.

    ``low_rank`` is either ``None`` or a tuple ``(c, m, u)`` with ``m`` of
    shape ``(r,)`` and ``u`` of shape ``(degree, r)`` such that
    ``sigma == c * I + u @ diag(m) @ u.T``.
    """

    vertex: int
    has_lead: bool
    gamma: np.ndarray
    family: str = "custom"
    params: dict = field(default_factory=dict)
    low_rank: tuple | None = None

    def __post_init__(self):
        g = np.array(self.gamma, dtype=complex)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] == 0:
            raise VertexError(f"gamma must be a non-empty square matrix, got {g.shape}")
        if self.has_lead and g.shape[0] < 2:
            raise VertexError("a lead vertex needs at least one bond")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if self.low_rank is not None:
            c, m, u = self.low_rank
            m = np.atleast_1d(np.asarray(m, dtype=complex))
            u = np.asarray(u).reshape(self.degree, m.size)
            object.__setattr__(self, "low_rank", (complex(c), m, u))

    @property
    def rank(self) -> int | None:
        """Number of columns of the low-rank factor, or None without that structure."""
        return None if self.low_rank is None else self.low_rank[1].size

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    @property
    def degree(self) -> int:
        """Number of bonds (lines other than the lead)."""
        return self.dim - int(self.has_lead)

    @property
    def rho(self) -> complex:
        if not self.has_lead:
            raise VertexError(f"vertex {self.vertex} has no lead")
        return complex(self.gamma[0, 0])

    @property
    def tau(self) -> np.ndarray:
        if not self.has_lead:
            return np.zeros(self.degree, dtype=complex)
        return self.gamma[0, 1:]

    @property
    def sigma(self) -> np.ndarray:
        return self.gamma[1:, 1:] if self.has_lead else self.gamma

    @property
    def transmission(self) -> float:
        return 1.0 - abs(self.rho) ** 2 if self.has_lead else 0.0


def _symmetrize(g: np.ndarray) -> np.ndarray:
    return 0.5 * (g + g.T)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed real orthogonal matrix; the identity for ``n == 1``."""
    if n == 1:
        return np.ones((1, 1))
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def build_kirchhoff_vertex(valency_total: int, has_lead: bool, vertex: int = 0) -> VertexMatrix:
    """Kirchhoff (Neumann) vertex ``Gamma_ij = 2/v - delta_ij``."""
    v = int(valency_total)
    if v < 1:
        raise VertexError(f"valency must be >= 1, got {v}")
    gamma = np.full((v, v), 2.0 / v) - np.eye(v)
    n = v - int(has_lead)
    low_rank = (-1.0, [2.0 / v], np.ones((n, 1))) if n > 0 else None
    return VertexMatrix(
        vertex=vertex,
        has_lead=has_lead,
        gamma=gamma.astype(complex),
        family="kirchhoff",
        params={"valency_total": v},
        low_rank=low_rank,
    )


def build_canonical_vertex(
    valency_total: int,
    t_coeff: float,
    phases=None,
    mixer_seed: int = 0,
    vertex: int = 0,
) -> VertexMatrix:
    """Lead vertex with prescribed transmission coefficient.

    The unmixed matrix couples the lead to the first bond line only::

        [[rho,              e^{-i p1} sqrt(T),  0              ],
         [e^{-i p1} sqrt(T), -rho e^{-2 i p1},   0              ],
         [0,                0,                  diag(e^{i p_mu})]]

    with ``rho = sqrt(1 - T)``.  It is then conjugated by ``1 (+) O`` where
    ``O`` is a seeded Haar orthogonal matrix on the bond lines, which keeps
    ``rho`` and the spectrum of ``sigma sigma^dagger``.

    Parameters
    ----------
    valency_total : int
        Number of lines including the lead, ``>= 2``.
    t_coeff : float
        Transmission coefficient in ``[0, 1]``.
    phases : array_like, optional
        ``valency_total - 1`` phases ``(p1, p2, ..., p_{v-1})``; zeros by default.
    mixer_seed : int
        Seed of the bond-space orthogonal mixer.
    """
    v = int(valency_total)
    if v < 2:
        raise VertexError(f"canonical vertex needs valency >= 2, got {v}")
    t = float(t_coeff)
    if not 0.0 <= t <= 1.0:
        raise VertexError(f"t_coeff must lie in [0, 1], got {t}")
    ph = np.zeros(v - 1) if phases is None else np.asarray(phases, dtype=float)
    if ph.shape != (v - 1,):
        raise VertexError(f"expected {v - 1} phases, got shape {ph.shape}")

    rho = np.sqrt(1.0 - t)
    coupling = np.exp(-1j * ph[0]) * np.sqrt(t)
    back = -rho * np.exp(-2j * ph[0])
    g0 = np.zeros((v, v), dtype=complex)
    g0[0, 0] = rho
    g0[0, 1] = g0[1, 0] = coupling
    g0[1, 1] = back
    for mu in range(2, v):
        g0[mu, mu] = np.exp(1j * ph[mu - 1])

    ob = random_orthogonal(v - 1, np.random.default_rng(mixer_seed))
    o = np.eye(v)
    o[1:, 1:] = ob
    gamma = _symmetrize(o @ g0 @ o.T)
    gamma[0, 0] = rho

    # the most frequent bond phase becomes the scalar part
    rest = ph[1:]
    if rest.size == 0:
        low_rank = (back, [], np.zeros((1, 0)))
    else:
        vals, counts = np.unique(rest, return_counts=True)
        c = np.exp(1j * vals[np.argmax(counts)])
        cols = [0] + [mu for mu in range(1, v - 1) if np.exp(1j * ph[mu]) != c]
        m = [back - c] + [np.exp(1j * ph[mu]) - c for mu in cols[1:]]
        low_rank = (c, m, ob[:, cols])
    return VertexMatrix(
        vertex=vertex,
        has_lead=True,
        gamma=gamma,
        family="canonical",
        params={"valency_total": v, "t_coeff": t, "phases": ph.tolist(), "mixer_seed": mixer_seed},
        low_rank=low_rank,
    )


def binary_phases(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` phases, ``floor(n/2)`` of them ``pi`` and the rest 0, in random order."""
    ph = np.zeros(n)
    ph[: n // 2] = np.pi
    return rng.permutation(ph)


def build_designed_vertex(
    degree: int, seed: int = 0, vertex: int = 0, spectrum: str = "binary"
) -> VertexMatrix:
    """Lead-free vertex ``exp(iA)`` with ``A`` a seeded real symmetric matrix.

    Parameters
    ----------
    degree : int
        Number of bond lines.
    seed : int
        Seed of the generator for ``A``.
    spectrum : {"binary", "goe"}
        ``"binary"`` takes ``A = pi * Q diag(0/1) Q^T`` with ``Q`` Haar
        orthogonal and ``floor(degree/2)`` unit eigenvalues, so ``Gamma`` is
        the reflection ``I - 2 P``.  Its diagonal is small, so little amplitude
        is backscattered, and its bond block is low rank.  ``"goe"`` draws
        ``A`` from the Gaussian orthogonal ensemble scaled so its spectrum
        covers roughly ``[-pi, pi]``.
    """
    n = int(degree)
    if n < 1:
        raise VertexError(f"degree must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    low_rank = None
    if spectrum == "binary":
        q = random_orthogonal(n, rng)
        r = n // 2
        u = q[:, :r]
        gamma = np.eye(n) - 2.0 * (u @ u.T)
        gamma = _symmetrize(gamma).astype(complex)
        low_rank = (1.0, np.full(r, -2.0), u)
    elif spectrum == "goe":
        x = rng.standard_normal((n, n)) * np.pi / np.sqrt(2.0 * n)
        a = 0.5 * (x + x.T)
        w, q = np.linalg.eigh(a)
        gamma = _symmetrize((q * np.exp(1j * w)) @ q.T)
    else:
        raise VertexError(f"unknown spectrum {spectrum!r}")
    return VertexMatrix(
        vertex=vertex,
        has_lead=False,
        gamma=gamma,
        family="designed",
        params={"degree": n, "seed": seed, "spectrum": spectrum},
        low_rank=low_rank,
    )


@dataclass
class VertexReport:
    unitarity_residual: float
    symmetry_residual: float
    sigma_spectrum: np.ndarray
    ok: bool
    tol: float = VALIDATION_TOL


def validate_vertex(m: VertexMatrix, tol: float = VALIDATION_TOL) -> VertexReport:
    """Residuals of unitarity and symmetry, and the spectrum of ``sigma sigma^dagger``."""
    g = m.gamma
    unit = float(np.max(np.abs(g.conj().T @ g - np.eye(m.dim))))
    sym = float(np.max(np.abs(g - g.T)))
    s = m.sigma
    spec = np.sort(np.linalg.eigvalsh(s @ s.conj().T))[::-1]
    return VertexReport(unit, sym, spec, ok=unit <= tol and sym <= tol, tol=tol)
