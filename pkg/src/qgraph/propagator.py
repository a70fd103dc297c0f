"""Bond-space assembly and exact evaluation of the graph S-matrix.

With ``D = diag(exp(i theta))`` on directed bonds (``theta_b = phi_b + kappa L_b``,
equal for both directions of a bond), the S-matrix is

    S = diag(rho) + (T J) D (I - Sigma D)^{-1} T^T

where ``Sigma[out, in]`` is the vertex amplitude for a wave arriving on ``in``
and leaving on ``out``, ``T[a, out]`` couples lead ``a`` to bonds leaving its
vertex and ``J`` reverses the direction of a directed bond.  The dense route
factors the ``2B x 2B`` matrix.  The low-rank route (every bond block of the
form ``c I + U diag(m) U^T``) applies the Woodbury identity around the
``2 x 2`` bond blocks of ``D^{-1} - C J`` and solves a system whose size is
the total rank; it falls back to the dense route when a sample is
ill-conditioned.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import lapack

from .graph import GraphSpec
from .vertex import (
    VertexMatrix,
    binary_phases,
    build_canonical_vertex,
    build_designed_vertex,
    build_kirchhoff_vertex,
)

RCOND_MIN = 1e-12  # reject samples whose condition number exceeds 1e12
DET_MIN = 1e-6  # below this a bond block is too close to singular for the reduced solve
CAP_COND_MAX = 1e10
LOW_RANK_FRACTION = 0.75  # use the reduced solve when total rank <= this * 2B
_CHUNK_ENTRIES = 4_000_000


class StructureError(ValueError):
    pass


class SolveError(ArithmeticError):
    def __init__(self, message, rcond=None):
        super().__init__(message)
        self.rcond = rcond


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class _LowRankData:
    rank: int
    m: np.ndarray  # (R,) diagonal of the middle factor
    c_big: np.ndarray  # (B,) scalar part at the larger endpoint of each bond
    c_small: np.ndarray  # (B,)
    c_head: np.ndarray  # (2B,) scalar part at the head of each directed bond
    operator: sparse.csr_matrix  # [b_rev (2B), a (B)] -> [K, Left, term1] flattened


@dataclass(frozen=True, eq=False)
class ScatteringSystem:
    graph: GraphSpec
    vertices: tuple
    sigma_b: np.ndarray
    coupling: np.ndarray
    lengths_directed: np.ndarray
    rho_diag: np.ndarray
    _fast: _LowRankData | None = field(default=None, repr=False)

    @property
    def num_channels(self) -> int:
        return self.graph.num_channels

    @property
    def transmissions(self) -> np.ndarray:
        return 1.0 - np.abs(self.rho_diag) ** 2

    @property
    def has_fast_path(self) -> bool:
        return self._fast is not None

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.sigma_b, self.coupling, self.lengths_directed, self.rho_diag):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class SMatrixSample:
    s: np.ndarray
    phases: np.ndarray
    offset: float
    rcond: float = float("nan")


def _vertex_lines(g: GraphSpec):
    """Directed bonds leaving and arriving at each vertex, ordered by neighbour."""
    tail, head = g.tail, g.head
    outs, ins = [], []
    for v in range(g.num_vertices):
        o = np.flatnonzero(tail == v)
        o = o[np.argsort(head[o], kind="stable")]
        i = np.flatnonzero(head == v)
        i = i[np.argsort(tail[i], kind="stable")]
        outs.append(o)
        ins.append(i)
    return outs, ins


def assemble_system(g: GraphSpec, vs: Sequence[VertexMatrix]) -> ScatteringSystem:
    """Assemble the bond scattering matrix and the lead coupling."""
    vs = tuple(vs)
    if len(vs) != g.num_vertices:
        raise StructureError(f"need {g.num_vertices} vertex matrices, got {len(vs)}")
    n2 = g.num_directed
    sigma_b = np.zeros((n2, n2), dtype=complex)
    coupling = np.zeros((g.num_channels, n2), dtype=complex)
    rho = np.zeros(g.num_channels, dtype=complex)
    outs, ins = _vertex_lines(g)
    for v, vm in enumerate(vs):
        deg = g.degree(v)
        if vm.has_lead != g.has_lead(v):
            raise StructureError(f"vertex {v}: lead flag does not match the graph")
        if vm.degree != deg:
            raise StructureError(f"vertex {v}: matrix has {vm.degree} bond lines, graph has {deg}")
        if deg == 0:
            continue
        sigma_b[np.ix_(outs[v], ins[v])] = vm.sigma
        if vm.has_lead:
            a = g.leads.index(v)
            coupling[a, outs[v]] = vm.tau
            rho[a] = vm.rho

    fast = None
    if all(vm.low_rank is not None for vm in vs):
        total = sum(vm.rank for vm in vs)
        if total <= LOW_RANK_FRACTION * n2:
            fast = _low_rank_data(g, vs, outs, coupling)
    for arr in (sigma_b, coupling, rho):
        arr.setflags(write=False)
    ld = g.lengths_directed
    ld.setflags(write=False)
    return ScatteringSystem(g, vs, sigma_b, coupling, ld, rho, fast)


def _low_rank_data(g: GraphSpec, vs, outs, coupling) -> _LowRankData:
    """Sparse map from per-bond Woodbury scalars to the reduced system.

    With ``X = J (D^{-1} - C J)^{-1}`` (symmetric; ``X[i, i] = b_rev(i)`` and
    ``X[i, rev(i)] = a``) the S-matrix is
    ``rho + T X T^T + Left (I - M K)^{-1} M Left^T`` where ``K = L^T X L``
    and ``Left = T X L``.  All three are linear in ``(b_rev, a)``.
    """
    nb, n2, lam = g.num_bonds, g.num_directed, g.num_channels
    ranks = np.array([vm.rank for vm in vs])
    col0 = np.concatenate([[0], np.cumsum(ranks)])
    rtot = int(col0[-1])
    c = np.array([vm.low_rank[0] for vm in vs], dtype=complex)
    m = np.concatenate([vm.low_rank[1] for vm in vs]) if rtot else np.zeros(0, complex)
    urow = [None] * n2
    for v, vm in enumerate(vs):
        u = vm.low_rank[2]
        for pos, i in enumerate(outs[v]):
            urow[i] = u[pos]
    tail, head, rev = g.tail, g.head, g.reverse
    lead_of = {v: a for a, v in enumerate(g.leads)}
    n_k, n_left = rtot * rtot, lam * rtot
    rows, cols, vals = [], [], []

    def put(r, col, val):
        r = np.ravel(r)
        rows.append(r)
        cols.append(np.full(r.size, col))
        vals.append(np.broadcast_to(np.ravel(val), r.shape))

    for i in range(n2):
        v, w, b = tail[i], head[i], i % nb
        cv = col0[v] + np.arange(ranks[v])
        cw = col0[w] + np.arange(ranks[w])
        ui, ur = urow[i], urow[rev[i]]
        put(cv[:, None] * rtot + cv[None, :], i, np.outer(ui, ui))
        put(cv[:, None] * rtot + cw[None, :], n2 + b, np.outer(ui, ur))
        a = lead_of.get(v)
        if a is None:
            continue
        tau = coupling[a, i]
        put(n_k + a * rtot + cv, i, tau * ui)
        put(n_k + a * rtot + cw, n2 + b, tau * ur)
        put(n_k + n_left + a * lam + a, i, tau * tau)
        a2 = lead_of.get(w)
        if a2 is not None:
            put(n_k + n_left + a * lam + a2, n2 + b, tau * coupling[a2, rev[i]])

    op = sparse.coo_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_k + n_left + lam * lam, n2 + nb),
    ).tocsr()
    big = np.array([bd[0] for bd in g.bonds])
    small = np.array([bd[1] for bd in g.bonds])
    return _LowRankData(
        rank=rtot, m=m, c_big=c[big], c_small=c[small], c_head=c[head], operator=op
    )


# ---------------------------------------------------------------------------
# system construction helpers
# ---------------------------------------------------------------------------


def _vertex_seed(seed: int, vertex: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(vertex)]).generate_state(1)[0])


def make_vertices(
    g: GraphSpec,
    lead_family: str = "canonical",
    interior_family: str = "designed",
    t_coeff=1.0,
    phi1: float = 0.0,
    lead_phases: str = "binary",
    spectrum: str = "binary",
    seed: int = 0,
) -> list[VertexMatrix]:
    """One vertex matrix per vertex of ``g``.

    Parameters
    ----------
    lead_family : {"canonical", "kirchhoff"}
    interior_family : {"designed", "kirchhoff"}
    t_coeff : float or array_like
        Transmission coefficient, scalar or one per channel (canonical leads).
    phi1 : float
        Lead-coupling phase of canonical vertices.
    lead_phases : {"binary", "zero"}
        Bond phases of canonical vertices.  ``"zero"`` leaves the bond block
        close to a mirror, which scatters poorly at high valency; ``"binary"``
        draws seeded phases from ``{0, pi}``.
    spectrum : {"binary", "goe"}
        Spectrum of designed interior vertices.
    seed : int
        Root seed; vertex ``v`` uses a sub-seed derived from ``(seed, v)``.
    """
    t_arr = np.broadcast_to(np.asarray(t_coeff, dtype=float), (g.num_channels,))
    out = []
    for v in range(g.num_vertices):
        deg = g.degree(v)
        vseed = _vertex_seed(seed, v)
        if g.has_lead(v):
            if lead_family == "canonical":
                ph = np.zeros(deg)
                if lead_phases == "binary":
                    ph[1:] = binary_phases(deg - 1, np.random.default_rng([vseed, 1]))
                elif lead_phases != "zero":
                    raise ValueError(f"unknown lead phases {lead_phases!r}")
                ph[0] = phi1
                vm = build_canonical_vertex(deg + 1, t_arr[g.leads.index(v)], ph, vseed, vertex=v)
            elif lead_family == "kirchhoff":
                vm = build_kirchhoff_vertex(deg + 1, True, vertex=v)
            else:
                raise ValueError(f"unknown lead family {lead_family!r}")
        else:
            if interior_family == "kirchhoff":
                vm = build_kirchhoff_vertex(deg, False, vertex=v)
            elif interior_family == "designed":
                vm = build_designed_vertex(deg, vseed, vertex=v, spectrum=spectrum)
            else:
                raise ValueError(f"unknown interior family {interior_family!r}")
        out.append(vm)
    return out


def make_system(g: GraphSpec, **kwargs) -> ScatteringSystem:
    return assemble_system(g, make_vertices(g, **kwargs))


# ---------------------------------------------------------------------------
# S-matrix evaluation
# ---------------------------------------------------------------------------


def _theta(sys: ScatteringSystem, phases, offset) -> np.ndarray:
    phases = np.asarray(phases, dtype=float)
    if phases.shape[-1] != sys.graph.num_bonds:
        raise StructureError(f"expected {sys.graph.num_bonds} phases, got {phases.shape[-1]}")
    return phases + offset * sys.graph.lengths


def _dense_solve(sys: ScatteringSystem, theta: np.ndarray):
    """Return ``(S, rcond)`` for one phase vector."""
    d = np.exp(1j * np.concatenate([theta, theta]))
    n2 = d.size
    a = np.eye(n2, dtype=complex) - sys.sigma_b * d[None, :]
    getrf, gecon, getrs = lapack.get_lapack_funcs(("getrf", "gecon", "getrs"), (a,))
    anorm = np.linalg.norm(a, 1)
    lu, piv, info = getrf(a)
    if info > 0:
        return None, 0.0
    rcond, _ = gecon(lu, anorm, norm="1")
    x, info = getrs(lu, piv, sys.coupling.T.astype(complex))
    s = np.diag(sys.rho_diag) + (sys.coupling[:, sys.graph.reverse] * d[None, :]) @ x
    return s, float(rcond)


def evaluate_s(sys: ScatteringSystem, phases, offset: float = 0.0) -> SMatrixSample:
    """Exact S-matrix at bond phases ``phases`` shifted by ``offset * L_b``.

    Raises
    ------
    SolveError
        If ``I - Sigma D`` is singular or its condition number exceeds ``1/RCOND_MIN``.
    """
    theta = _theta(sys, phases, offset)
    s, rcond = _dense_solve(sys, theta)
    if s is None or rcond < RCOND_MIN:
        raise SolveError(f"ill-conditioned propagator (rcond={rcond:.3g})", rcond)
    return SMatrixSample(s=s, phases=np.asarray(phases, dtype=float), offset=offset, rcond=rcond)


def s_matrix_resolvent_form(sys: ScatteringSystem, phases, offset: float = 0.0) -> np.ndarray:
    """Same S-matrix written with ``W = D^{-1} - Sigma``; kept as an independent check."""
    theta = _theta(sys, phases, offset)
    dinv = np.exp(-1j * np.concatenate([theta, theta]))
    w = np.diag(dinv) - sys.sigma_b
    x = np.linalg.solve(w, sys.coupling.T)
    return np.diag(sys.rho_diag) + sys.coupling[:, sys.graph.reverse] @ x


def s_matrix_batch(
    sys: ScatteringSystem, phases, offset: float = 0.0, method: str = "auto"
) -> tuple[np.ndarray, np.ndarray]:
    """S-matrices for a batch of phase vectors.

    Parameters
    ----------
    phases : array_like, shape (n, B)
    offset : float
        Wave-number offset added as ``offset * L_b``.
    method : {"auto", "dense", "low_rank"}

    Returns
    -------
    s : ndarray, shape (n, Lambda, Lambda)
    ok : ndarray of bool, shape (n,)
        False where the sample was rejected for ill-conditioning.
    """
    theta = np.atleast_2d(_theta(sys, phases, offset))
    if method not in ("auto", "dense", "low_rank"):
        raise ValueError(f"unknown method {method!r}")
    if method == "low_rank" and not sys.has_fast_path:
        raise StructureError("system has no usable low-rank vertex structure")
    if method == "dense" or (method == "auto" and not sys.has_fast_path):
        return _dense_batch(sys, theta, np.arange(theta.shape[0]))
    r = sys._fast.rank
    step = max(1, _CHUNK_ENTRIES // max(r * r, 1))
    parts = [_low_rank_batch(sys, theta[i : i + step]) for i in range(0, theta.shape[0], step)]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _dense_batch(sys, theta, idx, out=None, ok=None):
    lam = sys.num_channels
    if out is None:
        out = np.zeros((theta.shape[0], lam, lam), dtype=complex)
        ok = np.ones(theta.shape[0], dtype=bool)
    for i in idx:
        s, rcond = _dense_solve(sys, theta[i])
        if s is None or rcond < RCOND_MIN:
            ok[i] = False
            out[i] = np.nan
        else:
            out[i] = s
            ok[i] = True
    return out, ok


def _low_rank_batch(sys: ScatteringSystem, theta: np.ndarray):
    f = sys._fast
    n, nb = theta.shape
    lam, r = sys.num_channels, f.rank
    e = np.exp(-1j * theta)  # D^{-1} per bond
    det = e * e - (f.c_big * f.c_small)[None, :]
    bad = (np.abs(det) < DET_MIN).any(axis=1)
    det[:, :] = np.where(np.abs(det) < DET_MIN, 1.0, det)
    b_rev = f.c_head[None, :] / np.concatenate([det, det], axis=1)
    z = np.concatenate([b_rev, e / det], axis=1)
    flat = (f.operator @ z.T).T
    kmat = flat[:, : r * r].reshape(n, r, r)
    left = flat[:, r * r : r * r + lam * r].reshape(n, lam, r)
    term1 = flat[:, r * r + lam * r :].reshape(n, lam, lam)

    s = term1 + np.diag(sys.rho_diag)[None, :, :]
    ok = np.ones(n, dtype=bool)
    if r > 0:
        getrf, gecon, getrs = lapack.get_lapack_funcs(("getrf", "gecon", "getrs"), (kmat,))
        eye = np.eye(r)
        for k in range(n):
            if bad[k]:
                continue
            cap = eye - f.m[:, None] * kmat[k]
            lu, piv, info = getrf(cap)
            if info > 0:
                bad[k] = True
                continue
            rcond, _ = gecon(lu, np.abs(cap).sum(axis=0).max(), norm="1")
            if rcond * CAP_COND_MAX < 1.0:
                bad[k] = True
                continue
            sol, _ = getrs(lu, piv, f.m[:, None] * left[k].T)
            s[k] += left[k] @ sol
    if np.any(bad):
        s, ok = _dense_batch(sys, theta, np.flatnonzero(bad), s, ok)
    return s, ok


# ---------------------------------------------------------------------------
# trajectory expansion and spectral diagnostics
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryResult:
    s: np.ndarray
    residual: float
    residuals: np.ndarray
    spectral_radius: float
    propagator_norms: np.ndarray | None = None


def propagation_matrix(sys: ScatteringSystem, phases, offset: float = 0.0) -> np.ndarray:
    theta = _theta(sys, phases, offset)
    d = np.exp(1j * np.concatenate([theta, theta]))
    return sys.sigma_b * d[None, :]


def spectral_radius(sys: ScatteringSystem, phases, offset: float = 0.0) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(propagation_matrix(sys, phases, offset)))))


def trajectory_sum(
    sys: ScatteringSystem,
    phases,
    offset: float = 0.0,
    n_max: int = 100,
    track_propagator: bool = False,
) -> TrajectoryResult:
    """Partial sum over trajectories with up to ``n_max`` vertex scatterings.

    Term ``n`` is ``(T J) D (Sigma D)^n T^T``: all paths from lead to lead through
    ``n + 1`` bonds.  ``residuals[n]`` is the max-abs distance of the partial
    sum through term ``n`` from the exact S-matrix.
    """
    theta = _theta(sys, phases, offset)
    d = np.exp(1j * np.concatenate([theta, theta]))
    m = sys.sigma_b * d[None, :]
    left = sys.coupling[:, sys.graph.reverse] * d[None, :]
    exact, _ = _dense_solve(sys, theta)
    if exact is None:
        raise SolveError("exact S-matrix undefined at these phases", 0.0)
    radius = float(np.max(np.abs(np.linalg.eigvals(m))))

    vec = sys.coupling.T.astype(complex)
    partial = np.diag(sys.rho_diag).astype(complex)
    residuals = np.empty(n_max + 1)
    pnorms = np.empty(n_max + 1) if track_propagator else None
    power = np.eye(m.shape[0], dtype=complex) if track_propagator else None
    scale = np.sqrt(m.shape[0])
    for n in range(n_max + 1):
        partial = partial + left @ vec
        residuals[n] = np.max(np.abs(partial - exact))
        vec = m @ vec
        if track_propagator:
            pnorms[n] = np.linalg.norm(power) / scale
            power = m @ power
    if radius >= 1.0 - 1e-12 and residuals[-1] > 1e3 * max(residuals[0], 1e-300):
        raise ConvergenceError(f"trajectory sum diverges; spectral radius {radius:.6g} >= 1")
    return TrajectoryResult(partial, float(residuals[-1]), residuals, radius, pnorms)


def decay_ratio(residuals: np.ndarray, start: int, stop: int) -> float:
    """Geometric decay rate of ``residuals`` fitted over ``[start, stop)``."""
    n = np.arange(start, stop)
    y = np.log(residuals[start:stop])
    slope = np.polyfit(n, y, 1)[0]
    return float(np.exp(slope))


def classical_map_gap(sys: ScatteringSystem) -> tuple[np.ndarray, float]:
    """Eigenvalue moduli of ``|Sigma_ij|^2`` sorted descending, and ``lambda_1 - lambda_2``."""
    cmap = np.abs(sys.sigma_b) ** 2
    mods = np.sort(np.abs(np.linalg.eigvals(cmap)))[::-1]
    gap = float(mods[0] - mods[1]) if mods.size > 1 else 0.0
    return mods, gap


# ---------------------------------------------------------------------------
# binary dump
# ---------------------------------------------------------------------------


def dump_system(sys: ScatteringSystem, prefix) -> list[Path]:
    """Write ``Sigma`` and ``T`` as row-major little-endian interleaved re/im float64.

    Produces ``<prefix>.json`` (header), ``<prefix>_sigma.bin`` and
    ``<prefix>_coupling.bin``.
    """
    prefix = Path(prefix)
    paths = []
    header = {
        "layout": "row-major, interleaved re/im, little-endian binary64",
        "graph": sys.graph.to_dict(),
        "arrays": {},
        "checksum": sys.checksum(),
    }
    for name, arr in (("sigma", sys.sigma_b), ("coupling", sys.coupling)):
        p = prefix.with_name(f"{prefix.name}_{name}.bin")
        np.ascontiguousarray(arr, dtype="<c16").tofile(p)
        header["arrays"][name] = {"file": p.name, "shape": list(arr.shape)}
        paths.append(p)
    header["rho"] = [[float(z.real).hex(), float(z.imag).hex()] for z in sys.rho_diag]
    hp = prefix.with_name(prefix.name + ".json")
    hp.write_text(json.dumps(header, indent=1, sort_keys=True))
    return [hp] + paths


def load_dump(header_path) -> dict:
    hp = Path(header_path)
    header = json.loads(hp.read_text())
    out = {"graph": GraphSpec.from_dict(header["graph"])}
    for name, meta in header["arrays"].items():
        arr = np.fromfile(hp.with_name(meta["file"]), dtype="<c16")
        out[name] = arr.reshape(meta["shape"])
    out["rho"] = np.array([complex(float.fromhex(r), float.fromhex(i)) for r, i in header["rho"]])
    return out
