"""Closed-form Ericson-regime predictions and the GOE resonance-model oracle.

Ericson regime (``sum(T) >> 1``), with ``x = 2 pi <d> (kappa + kappa~)``::

    <S^fl_ab(k+kappa) S^fl*_cd(k-kappa~)> = (d_ac d_bd + d_ad d_bc) T_a T_c / (sum T - i x)

An element ``S^fl_aa(kappa_p)`` left without a conjugated partner contributes

    F_a(kappa_p) = - sum_q T_a <S_aa> / (sum T - 2 pi i (kappa_p + kappa~_q) <d>)

and a general ``(P, Q)`` correlator is the sum over choices of the ``P - Q``
unpaired elements of the product of ``F`` factors, times the sum over
permutations pairing the rest with the conjugated elements.

The GOE oracle draws ``H`` from the Gaussian orthogonal ensemble and builds
``S(E) = (1 - iK)(1 + iK)^{-1}``, ``K = pi W^T (E - H)^{-1} W``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .correlators import (
    CorrelatorEstimate,
    CorrelatorSpec,
    _map_batches,
    batch_sizes,
    jackknife,
    stream_rng,
)

log = logging.getLogger(__name__)


class PredictionError(ValueError):
    pass


class CalibrationError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


# ---------------------------------------------------------------------------
# Ericson regime
# ---------------------------------------------------------------------------


@dataclass
class EricsonPrediction:
    value: complex
    transmissions: tuple
    d_mean: float
    entries_p: tuple = ()
    entries_q: tuple = ()
    s_means: tuple = ()


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise PredictionError("transmission coefficients must lie in [0, 1]")
    return t


def ericson_two_point(t, d_mean: float, kappa: float, kappa_t: float, channels) -> complex:
    """Asymptotic ``<S^fl_ab(k + kappa) S^fl*_cd(k - kappa_t)>``."""
    t = _check_t(t)
    if d_mean <= 0:
        raise PredictionError("mean level density must be positive")
    a, b, c, d = channels
    weight = (a == c and b == d) + (a == d and b == c)
    denom = t.sum() - 2j * np.pi * d_mean * (kappa + kappa_t)
    if denom == 0:
        raise PredictionError("sum of transmissions is zero at zero offset")
    if weight == 0:
        return 0j
    return complex(weight * t[a] * t[c] / denom)


def ericson_width(t, d_mean: float) -> float:
    """Lorentzian half-width in ``kappa + kappa_t``: ``sum(T) / (2 pi <d>)``."""
    t = _check_t(t)
    if t.sum() <= 0:
        raise PredictionError("sum of transmissions must be positive")
    return float(t.sum() / (2.0 * np.pi * d_mean))


def ericson_f_factor(t_alpha, s_mean_alpha, t, d_mean, kappa_p, kappa_t_list) -> complex:
    """Factor carried by an unpaired diagonal element."""
    if abs(s_mean_alpha) > 1 + 1e-12:
        raise PredictionError("|<S_aa>| must not exceed 1")
    t = _check_t(t)
    total = 0j
    for kt in kappa_t_list:
        total += t_alpha * s_mean_alpha / (t.sum() - 2j * np.pi * (kappa_p + kt) * d_mean)
    return complex(-total)


def ericson_pq(entries_p, entries_q, t, d_mean: float, s_means) -> complex:
    """Asymptotic ``(P, Q)`` correlator by selection and permutation sums.

    Parameters
    ----------
    entries_p, entries_q : sequence of ((alpha, beta), offset)
        As in :class:`~qgraph.correlators.CorrelatorSpec`.
    t : array_like
        Transmission coefficients per channel.
    s_means : array_like
        Mean diagonal elements ``<S_aa>`` per channel.
    """
    p_list = [((int(a), int(b)), float(k)) for (a, b), k in entries_p]
    q_list = [((int(a), int(b)), float(k)) for (a, b), k in entries_q]
    npp, nq = len(p_list), len(q_list)
    if npp < nq:
        raise PredictionError("need P >= Q")
    t = _check_t(t)
    s_means = np.asarray(s_means, dtype=complex)
    kt_list = [k for _, k in q_list]
    total = 0j
    for unpaired in itertools.combinations(range(npp), npp - nq):
        factor = 1.0 + 0j
        for p in unpaired:
            (a, b), kp = p_list[p]
            if a != b:
                factor = 0j
                break
            factor *= ericson_f_factor(t[a], s_means[a], t, d_mean, kp, kt_list)
        if factor == 0:
            continue
        rest = [p for p in range(npp) if p not in unpaired]
        perm_sum = 0j
        for perm in itertools.permutations(rest):
            term = 1.0 + 0j
            for p, q in zip(perm, range(nq)):
                (a, b), kp = p_list[p]
                (c, d), kq = q_list[q]
                term *= ericson_two_point(t, d_mean, kp, kq, (a, b, c, d))
                if term == 0:
                    break
            perm_sum += term
        total += factor * perm_sum
    return complex(total)


def ericson_spec_prediction(spec: CorrelatorSpec, t, d_mean, s_means) -> EricsonPrediction:
    val = ericson_pq(spec.entries_p, spec.entries_q, t, d_mean, s_means)
    return EricsonPrediction(
        value=val,
        transmissions=tuple(float(x) for x in t),
        d_mean=float(d_mean),
        entries_p=spec.entries_p,
        entries_q=spec.entries_q,
        s_means=tuple(complex(x) for x in s_means),
    )


# ---------------------------------------------------------------------------
# GOE resonance model
# ---------------------------------------------------------------------------


@dataclass
class GoeModel:
    """GOE Hamiltonian of dimension ``dim`` coupled to ``len(couplings)`` channels.

    ``H`` has off-diagonal variance ``1/dim`` and diagonal variance ``2/dim``,
    so the semicircle has radius 2 and the level density at the band centre
    is ``dim / pi``.  Channel ``a`` couples through column ``a`` of
    ``couplings[a] * basis`` where ``basis`` has orthonormal columns.
    """

    dim: int
    couplings: np.ndarray
    seed: int = 0
    energy: float = 0.0
    basis: np.ndarray | None = None
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        self.couplings = np.asarray(self.couplings, dtype=float)
        lam = self.couplings.size
        if self.dim < 50 * lam:
            raise ValueError(f"dim={self.dim} too small for {lam} channels (need >= 50 per channel)")
        if self.basis is None:
            self.basis = np.eye(self.dim)[:, :lam]

    @property
    def num_channels(self) -> int:
        return self.couplings.size

    @property
    def mean_spacing(self) -> float:
        """Local mean level spacing at the evaluation energy."""
        rho = self.dim / (2.0 * np.pi) * np.sqrt(max(4.0 - self.energy**2, 0.0))
        return 1.0 / rho

    @property
    def w(self) -> np.ndarray:
        return self.basis * self.couplings[None, :]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "couplings": [float(c) for c in self.couplings],
            "seed": self.seed,
            "energy": self.energy,
            "calibration": self.calibration,
        }


def goe_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) * np.sqrt(2.0 / dim)
    return 0.5 * (a + a.T)


def coupling_for_transmission(t: float) -> float:
    """Large-``N`` coupling norm giving transmission ``t`` at the band centre.

    With ``x = pi w^2`` the mean S-matrix is ``(1 - x) / (1 + x)``.
    """
    rho = np.sqrt(1.0 - t)
    return float(np.sqrt((1.0 - rho) / (1.0 + rho) / np.pi))


def _k_matrices(model: GoeModel, h: np.ndarray, offsets) -> np.ndarray:
    """``K(E) = pi W^T (E - H)^{-1} W`` at ``model.energy + offset * spacing``."""
    evals, evecs = np.linalg.eigh(h)
    proj = model.w.T @ evecs  # (Lambda, N)
    energies = model.energy + np.asarray(offsets, dtype=float) * model.mean_spacing
    g = 1.0 / (energies[:, None] - evals[None, :])  # (n_off, N)
    return np.pi * np.einsum("an,en,bn->eab", proj, g, proj)


def _s_from_k(k: np.ndarray) -> np.ndarray:
    eye = np.eye(k.shape[-1])
    # (1 - iK)(1 + iK)^{-1}; both factors are functions of K and commute
    return np.linalg.solve(eye + 1j * k, eye - 1j * k)


def goe_sample_s(model: GoeModel, energy_offsets, rng: np.random.Generator) -> np.ndarray:
    """S-matrices for one GOE draw at several energy offsets.

    Offsets are in units of the local mean level spacing.  Returns an array of
    shape ``(len(offsets), Lambda, Lambda)``.  A draw whose resolvent is
    singular is replaced by a fresh one.
    """
    offsets = np.atleast_1d(energy_offsets)
    for _ in range(100):
        h = goe_matrix(model.dim, rng)
        with np.errstate(all="raise"):
            try:
                s = _s_from_k(_k_matrices(model, h, offsets))
            except (FloatingPointError, np.linalg.LinAlgError):
                continue
        return s
    raise RuntimeError("repeated resolvent failures")


def goe_s_direct(model: GoeModel, h: np.ndarray, offset: float = 0.0) -> np.ndarray:
    """``I - 2 pi i W^T (E - H + i pi W W^T)^{-1} W`` by a direct solve."""
    w = model.w
    e = model.energy + offset * model.mean_spacing
    a = e * np.eye(model.dim) - h + 1j * np.pi * (w @ w.T)
    return np.eye(w.shape[1]) - 2j * np.pi * w.T @ np.linalg.solve(a, w.astype(complex))


def _goe_batch(model, specs, seed, stream, size, offsets, means):
    rng = stream_rng(seed, stream)
    idx = {o: i for i, o in enumerate(offsets)}
    sums = np.zeros(len(specs), dtype=complex)
    for _ in range(size):
        s = goe_sample_s(model, offsets, rng) - means[None]
        for i, sp in enumerate(specs):
            prod = 1.0 + 0j
            for (a, b), k in sp.entries_p:
                prod *= s[idx[k], a, b]
            for (a, b), k in sp.entries_q:
                prod *= np.conj(s[idx[-k], a, b])
            sums[i] += prod
    return sums, size


def goe_correlators(
    model: GoeModel,
    specs: Sequence[CorrelatorSpec],
    s_means=None,
    workers: int | None = None,
) -> list[CorrelatorEstimate]:
    """Monte Carlo correlators of the GOE model from shared draws.

    Offsets in the specs are in units of the mean level spacing.  ``s_means``
    (per channel) is subtracted from the diagonal; defaults to the
    calibrated means recorded on the model, or zero.
    """
    specs = list(specs)
    key = {(sp.n_samples, sp.seed, sp.n_batches) for sp in specs}
    if len(key) != 1:
        raise ValueError("specs sharing draws must agree on n_samples, seed and n_batches")
    n, seed, nb = key.pop()
    for sp in specs:
        sp.validate_channels(model.num_channels)
    if s_means is None:
        s_means = model.calibration.get("mean_re", np.zeros(model.num_channels))
    means = np.diag(np.asarray(s_means, dtype=complex))
    offsets = set()
    for sp in specs:
        offsets.update(k for _, k in sp.entries_p)
        offsets.update(-k for _, k in sp.entries_q)
    offsets = sorted(offsets)
    sizes = batch_sizes(n, nb)
    args = [(model, specs, seed, i, int(sizes[i]), offsets, means) for i in range(nb)]
    res = _map_batches(_goe_batch, args, workers)
    sums = np.array([r[0] for r in res])
    counts = np.array([r[1] for r in res])
    est, se_re, se_im = jackknife(sums, counts)
    return [
        CorrelatorEstimate(
            mean=complex(est[i]),
            stderr=float(np.hypot(se_re[i], se_im[i])),
            n_effective=int(counts.sum()),
            rejected_samples=0,
            stderr_re=float(se_re[i]),
            stderr_im=float(se_im[i]),
            batch_means=sums[:, i] / counts,
        )
        for i in range(len(specs))
    ]


def _goe_mean_batch(model, seed, stream, size):
    rng = stream_rng(seed, stream)
    w = model.w
    eye = np.eye(model.num_channels)
    acc = np.zeros(model.num_channels, dtype=complex)
    shift = model.energy * np.eye(model.dim)
    for _ in range(size):
        h = goe_matrix(model.dim, rng)
        k = np.pi * w.T @ np.linalg.solve(shift - h, w)
        acc += np.diag(np.linalg.solve(eye + 1j * k, eye - 1j * k))
    return acc, size


def goe_mean_s(model: GoeModel, n_draws: int, seed: int, n_batches: int = 50, workers=None):
    """Monte Carlo ``<S_aa>`` per channel at the model energy.

    Returns ``(mean, stderr_re, stderr_im)`` from a jackknife over batches.
    """
    sizes = batch_sizes(n_draws, n_batches)
    res = _map_batches(
        _goe_mean_batch, [(model, seed, i, int(sizes[i])) for i in range(n_batches)], workers
    )
    sums = np.array([r[0] for r in res])
    counts = np.array([r[1] for r in res])
    return jackknife(sums, counts)


def goe_calibrate(
    target_t,
    dim: int,
    seed: int = 0,
    n_draws: int = 10_000,
    tol: float = 0.01,
    max_iter: int = 50,
    workers: int | None = None,
) -> GoeModel:
    """Find channel couplings whose measured ``|<S_aa>|^2`` equals ``1 - T``.

    Starts from the large-``N`` coupling.  Each iteration measures the mean
    S-matrix on fresh draws; channels outside ``tol`` get a multiplicative
    correction of ``x = pi w^2`` computed from the measured mean, channels
    inside keep their coupling.

    Raises
    ------
    CalibrationError
        When ``max_iter`` iterations do not bring every channel within ``tol``.
    """
    target_t = np.atleast_1d(np.asarray(target_t, dtype=float))
    if np.any(target_t <= 0) or np.any(target_t > 1):
        raise ValueError("target transmissions must lie in (0, 1]")
    target_rho2 = 1.0 - target_t
    x_goal = (1.0 - np.sqrt(target_rho2)) / (1.0 + np.sqrt(target_rho2))
    x = x_goal.copy()
    trace = []
    for it in range(max_iter):
        model = GoeModel(dim=dim, couplings=np.sqrt(x / np.pi), seed=seed)
        stream_seed = int(np.random.SeedSequence([int(seed), it]).generate_state(1)[0])
        mean, se_re, se_im = goe_mean_s(model, n_draws, seed=stream_seed, workers=workers)
        rho2 = np.abs(mean) ** 2
        trace.append({"iter": it, "couplings": model.couplings.tolist(), "rho2": rho2.tolist()})
        log.info("GOE calibration iter %d: |<S>|^2 = %s", it, rho2)
        off = np.abs(rho2 - target_rho2) >= tol
        if not off.any():
            model.calibration = {
                "target_t": target_t.tolist(),
                "measured_rho2": rho2.tolist(),
                "mean_re": mean.real.tolist(),
                "mean_im": mean.imag.tolist(),
                "stderr_re": se_re.tolist(),
                "stderr_im": se_im.tolist(),
                "iterations": it + 1,
                "n_draws": n_draws,
                "trace": trace,
            }
            return model
        rho = np.clip(np.real(mean), -0.999, 0.999)
        x_meas = (1.0 - rho) / (1.0 + rho)
        x = np.where(off & (x_meas > 0), x * x_goal / np.where(x_meas > 0, x_meas, 1.0), x)
    raise CalibrationError(f"no convergence in {max_iter} iterations", trace)


def calibration_json(model: GoeModel) -> str:
    return json.dumps(model.to_dict(), indent=1, sort_keys=True)
