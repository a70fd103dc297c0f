"""Graph topology: vertices, bonds, lengths, leads and the directed-bond index space.

Bonds are undirected pairs ``(alpha, beta)`` stored with ``alpha > beta`` and
sorted lexicographically; the position in that list is the bond index ``b``.
Each bond carries two directed bonds.  Direction ``+1`` means propagation from
``alpha`` (the larger vertex) toward ``beta``; ``-1`` is the reverse.  The
linear directed index is ``b`` for ``+1`` and ``b + B`` for ``-1``.

Vertex and channel indices are zero-based.  Channel ``a`` is the lead attached
to vertex ``leads[a]``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_LENGTH_RANGE = (1.0, 2.0)
DEFAULT_MAX_LENGTH_RATIO = 2.0


class GraphError(ValueError):
    """Raised for invalid graph parameters."""


@dataclass(frozen=True)
class DirectedBond:
    bond_index: int
    direction: int  # +1 or -1

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise GraphError(f"direction must be +1 or -1, got {self.direction}")

    def flipped(self) -> "DirectedBond":
        return DirectedBond(self.bond_index, -self.direction)


@dataclass(frozen=True, eq=False)
class GraphSpec:
    """Immutable description of a metric graph with leads.

    Parameters
    ----------
    num_vertices : int
        Number of vertices ``V >= 2``.
    bonds : sequence of (int, int)
        Undirected bonds; normalized to ``(max, min)`` and sorted.
    lengths : array_like
        Positive bond lengths aligned with the normalized bond order.  When the
        caller passes bonds in a different order, ``lengths`` must follow the
        caller's order; they are permuted together.
    leads : sequence of int
        Distinct lead vertices; position in this list is the channel index.
        An empty list describes a closed graph (diagnostics only).
    rng_seed : int
        Seed the lengths were drawn from (bookkeeping only).
    max_length_ratio : float
        Upper bound on ``L_max / L_min``.
    distinct_lengths : bool
        Require pairwise distinct lengths (default).  Switching it off
        admits commensurate toy graphs, whose phase and wave-number averages
        need not agree.
    """

    num_vertices: int
    bonds: tuple
    lengths: np.ndarray
    leads: tuple
    rng_seed: int = 0
    max_length_ratio: float = DEFAULT_MAX_LENGTH_RATIO
    distinct_lengths: bool = True
    _tail: np.ndarray = field(init=False, repr=False, compare=False)
    _head: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = int(self.num_vertices)
        if v < 2:
            raise GraphError(f"need at least 2 vertices, got {v}")
        raw = [tuple(int(x) for x in bnd) for bnd in self.bonds]
        lengths = np.asarray(self.lengths, dtype=float).ravel()
        if len(raw) != lengths.size:
            raise GraphError("one length per bond required")
        norm = []
        for a, b in raw:
            if a == b:
                raise GraphError(f"self-loop ({a},{b}) not allowed")
            if not (0 <= a < v and 0 <= b < v):
                raise GraphError(f"bond ({a},{b}) references a missing vertex")
            norm.append((max(a, b), min(a, b)))
        if len(set(norm)) != len(norm):
            raise GraphError("duplicate bonds")
        if not norm:
            raise GraphError("graph has no bonds")
        order = sorted(range(len(norm)), key=lambda i: norm[i])
        bonds = tuple(norm[i] for i in order)
        lengths = lengths[order].copy()

        if np.any(~np.isfinite(lengths)) or np.any(lengths <= 0):
            raise GraphError("bond lengths must be positive and finite")
        if lengths.max() / lengths.min() > self.max_length_ratio * (1 + 1e-15):
            raise GraphError(
                f"length ratio {lengths.max() / lengths.min():.4g} exceeds "
                f"{self.max_length_ratio}"
            )
        if self.distinct_lengths and np.unique(lengths).size != lengths.size:
            raise GraphError("bond lengths must be pairwise distinct")

        leads = tuple(int(x) for x in self.leads)
        if len(set(leads)) != len(leads):
            raise GraphError("lead vertices must be distinct")
        if any(not 0 <= x < v for x in leads):
            raise GraphError("lead references a missing vertex")

        lengths.setflags(write=False)
        big = np.array([bnd[0] for bnd in bonds])
        small = np.array([bnd[1] for bnd in bonds])
        tail = np.concatenate([big, small])
        head = np.concatenate([small, big])
        tail.setflags(write=False)
        head.setflags(write=False)

        object.__setattr__(self, "num_vertices", v)
        object.__setattr__(self, "bonds", bonds)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "leads", leads)
        object.__setattr__(self, "rng_seed", int(self.rng_seed))
        object.__setattr__(self, "_tail", tail)
        object.__setattr__(self, "_head", head)

    # -- sizes -------------------------------------------------------------
    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    @property
    def num_directed(self) -> int:
        return 2 * len(self.bonds)

    @property
    def num_channels(self) -> int:
        return len(self.leads)

    # -- directed-bond index space ----------------------------------------
    def encode(self, db: DirectedBond) -> int:
        if not 0 <= db.bond_index < self.num_bonds:
            raise GraphError(f"bond index {db.bond_index} out of range")
        return db.bond_index if db.direction == 1 else db.bond_index + self.num_bonds

    def decode(self, index: int) -> DirectedBond:
        if not 0 <= index < self.num_directed:
            raise GraphError(f"directed index {index} out of range")
        nb = self.num_bonds
        return DirectedBond(index % nb, 1 if index < nb else -1)

    @property
    def tail(self) -> np.ndarray:
        """Vertex each directed bond departs from."""
        return self._tail

    @property
    def head(self) -> np.ndarray:
        """Vertex each directed bond arrives at."""
        return self._head

    @property
    def reverse(self) -> np.ndarray:
        """Permutation sending each directed bond to its reverse."""
        nb = self.num_bonds
        return np.concatenate([np.arange(nb, 2 * nb), np.arange(nb)])

    @property
    def lengths_directed(self) -> np.ndarray:
        return np.concatenate([self.lengths, self.lengths])

    def bond_of(self, d: np.ndarray | int):
        return np.asarray(d) % self.num_bonds

    def neighbors(self, vertex: int) -> list[int]:
        out = [b for (a, b) in self.bonds if a == vertex]
        out += [a for (a, b) in self.bonds if b == vertex]
        return sorted(out)

    def degree(self, vertex: int) -> int:
        return len(self.neighbors(vertex))

    def has_lead(self, vertex: int) -> bool:
        return vertex in self.leads

    def valency_total(self, vertex: int) -> int:
        return self.degree(vertex) + int(self.has_lead(vertex))

    def bond_between(self, a: int, b: int) -> int:
        key = (max(a, b), min(a, b))
        try:
            return self.bonds.index(key)
        except ValueError:
            raise GraphError(f"no bond between {a} and {b}") from None

    # -- equality / serialization -------------------------------------
    def __eq__(self, other):
        if not isinstance(other, GraphSpec):
            return NotImplemented
        return (
            self.num_vertices == other.num_vertices
            and self.bonds == other.bonds
            and self.leads == other.leads
            and self.rng_seed == other.rng_seed
            and self.max_length_ratio == other.max_length_ratio
            and self.distinct_lengths == other.distinct_lengths
            and np.array_equal(self.lengths, other.lengths)
        )

    def __hash__(self):
        return hash((self.num_vertices, self.bonds, self.leads, self.lengths.tobytes()))

    def to_dict(self) -> dict:
        return {
            "num_vertices": self.num_vertices,
            "bonds": [list(b) for b in self.bonds],
            "lengths_hex": [float(x).hex() for x in self.lengths],
            "leads": list(self.leads),
            "rng_seed": self.rng_seed,
            "max_length_ratio": float(self.max_length_ratio).hex(),
            "distinct_lengths": self.distinct_lengths,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GraphSpec":
        ratio = data.get("max_length_ratio", DEFAULT_MAX_LENGTH_RATIO)
        if isinstance(ratio, str):
            ratio = float.fromhex(ratio)
        return cls(
            num_vertices=data["num_vertices"],
            bonds=[tuple(b) for b in data["bonds"]],
            lengths=[float.fromhex(x) for x in data["lengths_hex"]],
            leads=data["leads"],
            rng_seed=data.get("rng_seed", 0),
            max_length_ratio=ratio,
            distinct_lengths=data.get("distinct_lengths", True),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GraphSpec":
        return cls.from_dict(json.loads(text))


def complete_bonds(v: int) -> list[tuple[int, int]]:
    return [(a, b) for a, b in itertools.combinations(range(v), 2)]


def build_graph(
    v: int,
    lam: int,
    length_range: Sequence[float] = DEFAULT_LENGTH_RANGE,
    seed: int = 0,
    bonds: Iterable[tuple[int, int]] | None = None,
    max_length_ratio: float = DEFAULT_MAX_LENGTH_RATIO,
) -> GraphSpec:
    """Build a graph with uniformly drawn bond lengths.

    The default topology is the complete graph on ``v`` vertices.  Leads sit on
    vertices ``0 .. lam-1``.  ``lam = 0`` gives a closed graph, which is only
    useful for the spectral diagnostics.
    """
    if v < 2:
        raise GraphError(f"need v >= 2, got {v}")
    if not 0 <= lam <= v:
        raise GraphError(f"need 0 <= lambda <= v, got lambda={lam}, v={v}")
    lo, hi = (float(x) for x in length_range)
    if not (0 < lo <= hi):
        raise GraphError(f"invalid length range ({lo}, {hi})")
    if hi / lo > max_length_ratio:
        raise GraphError(f"length range ratio {hi / lo:.4g} exceeds {max_length_ratio}")
    bond_list = complete_bonds(v) if bonds is None else [tuple(b) for b in bonds]
    rng = np.random.default_rng(seed)
    if lo == hi:
        if len(bond_list) > 1:
            raise GraphError("a degenerate length range cannot give distinct lengths")
        lengths = np.full(len(bond_list), lo)
    else:
        lengths = rng.uniform(lo, hi, size=len(bond_list))
    return GraphSpec(
        num_vertices=v,
        bonds=bond_list,
        lengths=lengths,
        leads=tuple(range(lam)),
        rng_seed=seed,
        max_length_ratio=max_length_ratio,
    )


def mean_level_density(g: GraphSpec) -> float:
    """Mean density of wave-number levels, ``sum(L_b) / pi``."""
    return float(np.sum(g.lengths) / np.pi)
