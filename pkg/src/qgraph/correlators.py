"""Monte Carlo estimation of S-matrix averages and correlation functions.

The average over wave number is replaced by independent uniform averages over
the bond phases.  A correlator request lists ``P`` elements of the
fluctuating S-matrix with offsets ``+kappa_p`` and ``Q`` conjugated elements
with offsets ``-kappa~_q``; every phase draw evaluates ``S`` once per distinct
offset and multiplies the requested elements.

Samples are split into batches; batch ``i`` draws from the stream
``default_rng([seed, i])`` so results do not depend on how batches are
distributed over worker processes.  Error bars come from a delete-one
jackknife over batches.

Uniform phases are invariant under ``phi -> phi + delta * L``, so a
correlator depends on its offsets only up to a common shift.  The phase
estimators shift all offsets so the first conjugated factor (or the first
factor when there is none) sits at zero, which lets specs that differ only
by such a shift share solves.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import GraphSpec
from .propagator import ScatteringSystem, s_matrix_batch

log = logging.getLogger(__name__)

DEFAULT_BATCHES = 50
CHUNK = 4096
REJECT_WARN_FRACTION = 0.01
MAX_REJECT_FACTOR = 10  # give up when rejections exceed this many times the batch size


class CorrelatorError(ValueError):
    pass


Entry = tuple  # ((alpha, beta), offset)


def _norm_entries(entries) -> tuple:
    out = []
    for pair, off in entries:
        a, b = pair
        out.append(((int(a), int(b)), float(off)))
    return tuple(out)


@dataclass(frozen=True)
class CorrelatorSpec:
    """A ``(P, Q)`` correlation-function request.

    ``entries_p`` are ``((alpha, beta), kappa)`` for the unconjugated factors,
    ``entries_q`` are ``((alpha, beta), kappa_tilde)`` for the conjugated ones,
    which are evaluated at ``-kappa_tilde``.
    """

    entries_p: tuple
    entries_q: tuple = ()
    n_samples: int = 10_000
    seed: int = 0
    n_batches: int = DEFAULT_BATCHES
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries_p", _norm_entries(self.entries_p))
        object.__setattr__(self, "entries_q", _norm_entries(self.entries_q))
        if self.p_count < 1 or self.p_count < self.q_count:
            raise CorrelatorError(f"need P >= Q >= 0 and P >= 1, got ({self.p_count}, {self.q_count})")
        if self.n_batches < 2:
            raise CorrelatorError("need at least two batches")
        if self.n_samples < self.n_batches:
            raise CorrelatorError(
                f"n_samples={self.n_samples} smaller than n_batches={self.n_batches}"
            )

    @property
    def p_count(self) -> int:
        return len(self.entries_p)

    @property
    def q_count(self) -> int:
        return len(self.entries_q)

    def validate_channels(self, num_channels: int):
        for (a, b), _ in self.entries_p + self.entries_q:
            if not (0 <= a < num_channels and 0 <= b < num_channels):
                raise CorrelatorError(f"channel pair ({a},{b}) outside 0..{num_channels - 1}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "p": [[list(p), k] for p, k in self.entries_p],
            "q": [[list(p), k] for p, k in self.entries_q],
            "n_samples": self.n_samples,
            "seed": self.seed,
            "n_batches": self.n_batches,
        }

    @classmethod
    def from_dict(cls, d: dict, **defaults) -> "CorrelatorSpec":
        kw = dict(defaults)
        kw.update({k: d[k] for k in ("n_samples", "seed", "n_batches", "name") if k in d})
        return cls(
            entries_p=[(tuple(p), k) for p, k in d["p"]],
            entries_q=[(tuple(p), k) for p, k in d.get("q", [])],
            **kw,
        )


@dataclass
class CorrelatorEstimate:
    mean: complex
    stderr: float
    n_effective: int
    rejected_samples: int
    stderr_re: float = 0.0
    stderr_im: float = 0.0
    warning: str = ""
    batch_means: np.ndarray = field(default=None, repr=False)

    def z_score(self, value: complex, other_stderr: complex | float = 0.0) -> float:
        """Largest of the real- and imaginary-part z-scores against ``value``.

        ``other_stderr`` is the error of ``value`` itself: a complex number
        ``re_err + 1j * im_err`` or a real number applied to both parts.
        """
        oe = complex(other_stderr)
        if oe.imag == 0.0:
            oe = complex(oe.real, oe.real)
        diff = self.mean - value
        zs = []
        for d, s1, s2 in ((diff.real, self.stderr_re, oe.real), (diff.imag, self.stderr_im, oe.imag)):
            s = np.hypot(s1, s2)
            if s > 0:
                zs.append(abs(d) / s)
            elif d != 0:
                zs.append(np.inf)
        return float(max(zs, default=0.0))

    def to_record(self, spec: CorrelatorSpec | None = None) -> dict:
        rec = {
            "mean_re": float(self.mean.real),
            "mean_im": float(self.mean.imag),
            "stderr": float(self.stderr),
            "stderr_re": float(self.stderr_re),
            "stderr_im": float(self.stderr_im),
            "n": int(self.n_effective),
            "rejects": int(self.rejected_samples),
        }
        if spec is not None:
            rec = {"spec": spec.to_dict(), **rec}
        if self.warning:
            rec["warning"] = self.warning
        return rec


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


def sample_phases(g: GraphSpec, seed: int, stream: int = 0, size: int | None = None) -> np.ndarray:
    """Uniform bond phases in ``[0, 2 pi)``, deterministic in ``(seed, stream)``."""
    rng = stream_rng(seed, stream)
    shape = (g.num_bonds,) if size is None else (size, g.num_bonds)
    return rng.uniform(0.0, 2.0 * np.pi, size=shape)


def batch_sizes(n_samples: int, n_batches: int) -> np.ndarray:
    base, extra = divmod(int(n_samples), int(n_batches))
    return np.array([base + (i < extra) for i in range(n_batches)])


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("QGRAPH_WORKERS", "1") or 1)
    return max(1, int(workers))


def _map_batches(func, args_list, workers):
    workers = resolve_workers(workers)
    if workers == 1 or len(args_list) == 1:
        return [func(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, *zip(*args_list)))


# ---------------------------------------------------------------------------
# analytic mean and jackknife
# ---------------------------------------------------------------------------


def mean_s_analytic(sys: ScatteringSystem) -> np.ndarray:
    """Phase-averaged S-matrix: ``diag(rho)``."""
    return np.diag(sys.rho_diag).astype(complex)


def jackknife(sums: np.ndarray, counts: np.ndarray, func=None):
    """Delete-one jackknife over batches.

    Parameters
    ----------
    sums : ndarray, shape (K, ...) of per-batch sums (complex or real)
    counts : ndarray, shape (K,)
    func : callable, optional
        Applied to the pooled mean of ``sums``; defaults to identity.

    Returns
    -------
    estimate, stderr_re, stderr_im
    """
    sums = np.asarray(sums)
    counts = np.asarray(counts, dtype=float)
    k = sums.shape[0]
    f = (lambda x: x) if func is None else func
    total = sums.sum(axis=0)
    n = counts.sum()
    full = f(total / n)
    loo = np.array([f((total - sums[i]) / (n - counts[i])) for i in range(k)])
    centred = loo - loo.mean(axis=0)
    var_re = (k - 1) / k * np.sum(np.real(centred) ** 2, axis=0)
    var_im = (k - 1) / k * np.sum(np.imag(centred) ** 2, axis=0)
    return full, np.sqrt(var_re), np.sqrt(var_im)


# ---------------------------------------------------------------------------
# sampling engine
# ---------------------------------------------------------------------------


def _eval_offsets(spec: CorrelatorSpec, shift: bool = True):
    """Evaluation offsets of the plain and the conjugated factors."""
    p = [k for _, k in spec.entries_p]
    q = [-k for _, k in spec.entries_q]
    if shift:
        delta = q[0] if q else p[0]
        p = [k - delta for k in p]
        q = [k - delta for k in q]
    return p, q


def _offsets_needed(specs, shift: bool = True) -> list[float]:
    offs = set()
    for sp in specs:
        p, q = _eval_offsets(sp, shift)
        offs.update(p)
        offs.update(q)
    return sorted(offs)


def _s_fl_at_offsets(sys, phases, offsets, method="auto"):
    """``S - <S>`` for every offset; returns dict and the joint acceptance mask."""
    n = phases.shape[0]
    ok = np.ones(n, dtype=bool)
    mean = mean_s_analytic(sys)
    out = {}
    for off in offsets:
        parts, oks = [], []
        for start in range(0, n, CHUNK):
            s, k = s_matrix_batch(sys, phases[start : start + CHUNK], off, method=method)
            parts.append(s)
            oks.append(k)
        s = np.concatenate(parts) if parts else np.zeros((0,) + mean.shape, complex)
        ok &= np.concatenate(oks) if oks else ok
        out[off] = s - mean[None]
    return out, ok


def _products(sfl, specs, shift: bool = True):
    vals = []
    for sp in specs:
        p_off, q_off = _eval_offsets(sp, shift)
        prod = None
        for ((a, b), _), k in zip(sp.entries_p, p_off):
            x = sfl[k][:, a, b]
            prod = x if prod is None else prod * x
        for ((a, b), _), k in zip(sp.entries_q, q_off):
            prod = prod * np.conj(sfl[k][:, a, b])
        vals.append(prod)
    return np.array(vals)  # (n_specs, n)


def _run_batch(sys, specs, seed, stream, size, method):
    """Sum of products over ``size`` accepted draws of one stream."""
    rng = stream_rng(seed, stream)
    offsets = _offsets_needed(specs)
    nb = sys.graph.num_bonds
    sums = np.zeros(len(specs), dtype=complex)
    got, rejected = 0, 0
    need = size
    while need > 0:
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(need, nb))
        sfl, ok = _s_fl_at_offsets(sys, phases, offsets, method)
        if not ok.all():
            rejected += int((~ok).sum())
            sfl = {k: v[ok] for k, v in sfl.items()}
        sums += _products(sfl, specs).sum(axis=1)
        got += int(ok.sum())
        need = size - got
        if rejected > MAX_REJECT_FACTOR * max(size, 10):
            raise CorrelatorError(f"stream {stream}: {rejected} rejected draws for {got} accepted")
    return sums, got, rejected


def estimate_correlators(
    sys: ScatteringSystem,
    specs: Sequence[CorrelatorSpec],
    workers: int | None = None,
    method: str = "auto",
) -> list[CorrelatorEstimate]:
    """Estimate several correlators from shared phase draws.

    All specs must agree on ``n_samples``, ``seed`` and ``n_batches``.
    """
    specs = list(specs)
    if not specs:
        return []
    key = {(sp.n_samples, sp.seed, sp.n_batches) for sp in specs}
    if len(key) != 1:
        raise CorrelatorError("specs sharing draws must agree on n_samples, seed and n_batches")
    for sp in specs:
        sp.validate_channels(sys.num_channels)
    n_samples, seed, n_batches = key.pop()
    sizes = batch_sizes(n_samples, n_batches)
    args = [(sys, specs, seed, i, int(sizes[i]), method) for i in range(n_batches)]
    results = _map_batches(_run_batch, args, workers)
    sums = np.array([r[0] for r in results])  # (K, n_specs)
    counts = np.array([r[1] for r in results])
    rejected = int(sum(r[2] for r in results))
    est, se_re, se_im = jackknife(sums, counts)
    warning = ""
    if rejected > REJECT_WARN_FRACTION * n_samples:
        warning = f"{rejected} ill-conditioned samples rejected (> 1%)"
        log.warning(warning)
    out = []
    for i in range(len(specs)):
        out.append(
            CorrelatorEstimate(
                mean=complex(est[i]),
                stderr=float(np.hypot(se_re[i], se_im[i])),
                n_effective=int(counts.sum()),
                rejected_samples=rejected,
                stderr_re=float(se_re[i]),
                stderr_im=float(se_im[i]),
                warning=warning,
                batch_means=sums[:, i] / counts,
            )
        )
    return out


def estimate_correlator(
    sys: ScatteringSystem, spec: CorrelatorSpec, workers: int | None = None, method: str = "auto"
) -> CorrelatorEstimate:
    """Monte Carlo estimate of one ``(P, Q)`` correlation function."""
    return estimate_correlators(sys, [spec], workers=workers, method=method)[0]


def _run_mean_batch(sys, seed, stream, size, method):
    rng = stream_rng(seed, stream)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(size, sys.graph.num_bonds))
    sfl, ok = _s_fl_at_offsets(sys, phases, [0.0], method)
    s = sfl[0.0][ok] + mean_s_analytic(sys)[None]
    return s.sum(axis=0), int(ok.sum()), int((~ok).sum())


def estimate_mean_s(
    sys: ScatteringSystem,
    n_samples: int,
    seed: int = 0,
    n_batches: int = DEFAULT_BATCHES,
    workers: int | None = None,
):
    """Entrywise Monte Carlo mean of the raw S-matrix.

    Returns ``(mean, stderr_re, stderr_im)``, each of shape ``(Lambda, Lambda)``.
    Rejected draws are dropped, not replaced.
    """
    sizes = batch_sizes(n_samples, n_batches)
    args = [(sys, seed, i, int(sizes[i]), "auto") for i in range(n_batches)]
    res = _map_batches(_run_mean_batch, args, workers)
    sums = np.array([r[0] for r in res])
    counts = np.array([r[1] for r in res])
    return jackknife(sums, counts)


# ---------------------------------------------------------------------------
# wave-number sweep (checks the phase-average replacement)
# ---------------------------------------------------------------------------


def estimate_correlator_ksweep(
    sys: ScatteringSystem,
    spec: CorrelatorSpec,
    k_start: float,
    k_span: float,
    n_points: int,
    n_batches: int = DEFAULT_BATCHES,
) -> CorrelatorEstimate:
    """Estimate a correlator by sweeping the wave number instead of drawing phases.

    Points are equally spaced on ``[k_start, k_start + k_span)``; the phase of
    bond ``b`` at wave number ``k`` is ``k L_b``.  Contiguous blocks of the
    sweep form the jackknife batches, which absorbs the short-range
    correlation between neighbouring points.
    """
    spec.validate_channels(sys.num_channels)
    ks = k_start + k_span * np.arange(n_points) / n_points
    phases = np.mod(ks[:, None] * sys.graph.lengths[None, :], 2.0 * np.pi)
    sfl, ok = _s_fl_at_offsets(sys, phases, _offsets_needed([spec], shift=False))
    vals = _products(sfl, [spec], shift=False)[0]
    vals = np.where(ok, vals, 0.0)
    blocks = np.array_split(np.arange(n_points), n_batches)
    sums = np.array([vals[b].sum() for b in blocks])
    counts = np.array([ok[b].sum() for b in blocks])
    est, se_re, se_im = jackknife(sums, counts)
    return CorrelatorEstimate(
        mean=complex(est),
        stderr=float(np.hypot(se_re, se_im)),
        n_effective=int(counts.sum()),
        rejected_samples=int((~ok).sum()),
        stderr_re=float(se_re),
        stderr_im=float(se_im),
        batch_means=sums / counts,
    )


# ---------------------------------------------------------------------------
# distribution of a single element
# ---------------------------------------------------------------------------


@dataclass
class DistributionReport:
    pair: tuple
    n_samples: int
    mean: complex
    second: float  # <|S^fl|^2>
    fourth: float  # <|S^fl|^4>
    ratio: float  # <|S|^4> / <|S|^2>^2, 2 for a circular complex Gaussian
    ratio_stderr: float
    second_stderr: float
    edges: np.ndarray
    hist_re: np.ndarray
    hist_im: np.ndarray

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count_re", "count_im"])
        for lo, hi, cr, ci in zip(self.edges[:-1], self.edges[1:], self.hist_re, self.hist_im):
            w.writerow([repr(float(lo)), repr(float(hi)), int(cr), int(ci)])
        return buf.getvalue()

    def to_record(self) -> dict:
        return {
            "pair": list(self.pair),
            "n": self.n_samples,
            "mean_re": float(self.mean.real),
            "mean_im": float(self.mean.imag),
            "second": self.second,
            "fourth": self.fourth,
            "ratio": self.ratio,
            "ratio_stderr": self.ratio_stderr,
        }


def _run_moment_batch(sys, pairs, seed, stream, size, edges):
    rng = stream_rng(seed, stream)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(size, sys.graph.num_bonds))
    sfl, ok = _s_fl_at_offsets(sys, phases, [0.0])
    x = np.stack([sfl[0.0][ok][:, a, b] for a, b in pairs], axis=0)  # (npairs, n)
    p2 = np.abs(x) ** 2
    sums = np.array([x.sum(), p2.sum(), (p2**2).sum()])
    hr = np.histogram(x.real.ravel(), bins=edges)[0]
    hi = np.histogram(x.imag.ravel(), bins=edges)[0]
    return sums, int(ok.sum()) * len(pairs), hr, hi


def distribution_report(
    sys: ScatteringSystem,
    pair,
    n_samples: int,
    seed: int = 0,
    n_batches: int = DEFAULT_BATCHES,
    bins: int = 40,
    workers: int | None = None,
) -> DistributionReport:
    """Moments and histogram of one fluctuating S-matrix element.

    ``pair`` is a channel pair ``(alpha, beta)`` or a list of pairs; with a
    list, the moments pool all listed elements (useful when the channels are
    statistically equivalent).
    """
    pairs = [tuple(pair)] if np.ndim(pair[0]) == 0 else [tuple(p) for p in pair]
    for a, b in pairs:
        if not (0 <= a < sys.num_channels and 0 <= b < sys.num_channels):
            raise CorrelatorError(f"channel pair ({a},{b}) out of range")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    sizes = batch_sizes(n_samples, n_batches)
    args = [(sys, pairs, seed, i, int(sizes[i]), edges) for i in range(n_batches)]
    res = _map_batches(_run_moment_batch, args, workers)
    sums = np.array([r[0] for r in res])
    counts = np.array([r[1] for r in res])
    hist_re = np.sum([r[2] for r in res], axis=0)
    hist_im = np.sum([r[3] for r in res], axis=0)

    def ratio(mom):
        m2 = mom[1].real
        return mom[2].real / m2**2 if m2 > 0 else 0.0

    moments, _, _ = jackknife(sums, counts)
    r, r_se, _ = jackknife(sums, counts, ratio)
    _, m2_se, _ = jackknife(sums[:, 1].real, counts)
    return DistributionReport(
        pair=tuple(pairs[0]) if len(pairs) == 1 else tuple(pairs),
        n_samples=int(counts.sum()),
        mean=complex(moments[0]),
        second=float(moments[1].real),
        fourth=float(moments[2].real),
        ratio=float(r),
        ratio_stderr=float(r_se),
        second_stderr=float(m2_se),
        edges=edges,
        hist_re=hist_re,
        hist_im=hist_im,
    )
