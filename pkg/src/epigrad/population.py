"""Synthetic populations and contact networks.

Agents are stored struct-of-arrays (age bin, disease stage, last exposure
step) so the simulator can stay fully vectorized. Contact structure is an
undirected small-world graph expanded to a directed edge list; directed edges
are kept sorted by (dst, src) so that scatter-add accumulation order, and
with it the whole simulated trajectory, does not depend on how the input
edges happened to be ordered.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

# disease stages
S, E, I, R, M = 0, 1, 2, 3, 4
STAGE_NAMES = ("S", "E", "I", "R", "M")
NEVER_EXPOSED = -1
N_AGE_BINS = 9

# uniform default over the nine 10-year bins (0-9 ... 80+)
DEFAULT_AGE_DISTRIBUTION = tuple([1.0 / N_AGE_BINS] * N_AGE_BINS)


@dataclass
class Population:
    """Per-agent state vectors; stage and exposure evolve during simulation."""

    age: np.ndarray        # int, 0..8
    stage: np.ndarray      # int, S/E/I/R/M
    exposure: np.ndarray   # int step of last exposure, NEVER_EXPOSED if none

    @property
    def n(self) -> int:
        return self.age.shape[0]

    def copy(self) -> "Population":
        return Population(self.age.copy(), self.stage.copy(), self.exposure.copy())

    def validate(self):
        if not ((self.age >= 0) & (self.age < N_AGE_BINS)).all():
            raise ValueError("age bins must be in 0..8")
        if not ((self.stage >= S) & (self.stage <= M)).all():
            raise ValueError("invalid disease stage")
        never = self.exposure == NEVER_EXPOSED
        if not (self.stage[never] == S).all():
            raise ValueError("agents without an exposure time must be susceptible")


@dataclass
class ContactNetwork:
    """Directed expansion of an undirected contact graph.

    src/dst hold both orientations of every undirected edge, sorted by
    (dst, src); undirected_edges keeps one canonical (min, max) row per edge.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    undirected_edges: np.ndarray = field(repr=False)  # (m, 2)

    @property
    def directed_count(self) -> int:
        return self.src.shape[0]

    @property
    def undirected_count(self) -> int:
        return self.undirected_edges.shape[0]

    @property
    def mean_degree(self) -> float:
        return 2.0 * self.undirected_count / self.n


def generate_population(n: int, age_distribution=DEFAULT_AGE_DISTRIBUTION,
                        seed: int = 0) -> Population:
    """All-susceptible population with ages drawn from the bin distribution."""
    dist = np.asarray(age_distribution, dtype=np.float64)
    if dist.shape != (N_AGE_BINS,):
        raise ValueError(f"age distribution needs {N_AGE_BINS} entries, got {dist.shape}")
    if (dist < 0).any() or abs(dist.sum() - 1.0) > 1e-9:
        raise ValueError("age distribution must be non-negative and sum to 1")
    rng = stream(seed, "population")
    age = rng.choice(N_AGE_BINS, size=n, p=dist).astype(np.int64)
    return Population(
        age=age,
        stage=np.full(n, S, dtype=np.int64),
        exposure=np.full(n, NEVER_EXPOSED, dtype=np.int64),
    )


def _edges_to_network(n: int, edges: np.ndarray) -> ContactNetwork:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((src, dst))  # canonical (dst, src) ordering
    canonical = np.sort(edges, axis=1)
    canonical = canonical[np.lexsort((canonical[:, 1], canonical[:, 0]))]
    return ContactNetwork(n=n, src=src[order], dst=dst[order], undirected_edges=canonical)


def build_contact_network(n: int, k: int = 10, p: float = 0.01,
                          seed: int = 0) -> ContactNetwork:
    """Watts-Strogatz small world: ring lattice of degree k, rewiring prob p.

    Exactly n*k/2 undirected edges regardless of p; rewiring never creates
    self loops or parallel edges (a rewire with no valid target is skipped).
    """
    if k % 2 != 0:
        raise ValueError("k must be even")
    if not 0.0 <= p <= 1.0:
        raise ValueError("rewiring probability must be in [0, 1]")
    if n <= k:
        raise ValueError("need n > k for a ring lattice")
    rng = stream(seed, "network")

    neighbors = [set() for _ in range(n)]
    for j in range(1, k // 2 + 1):
        for i in range(n):
            t = (i + j) % n
            neighbors[i].add(t)
            neighbors[t].add(i)

    # classic sweep order: ring distance first, then node index
    for j in range(1, k // 2 + 1):
        for i in range(n):
            old = (i + j) % n
            if old not in neighbors[i]:
                continue  # already rewired away by an earlier step
            if rng.random() >= p:
                continue
            new = int(rng.integers(n))
            attempts = 0
            while new == i or new in neighbors[i]:
                new = int(rng.integers(n))
                attempts += 1
                if attempts > 8 * n:
                    new = None
                    break
            if new is None:
                continue
            neighbors[i].remove(old)
            neighbors[old].remove(i)
            neighbors[i].add(new)
            neighbors[new].add(i)

    edges = [(i, t) for i in range(n) for t in neighbors[i] if i < t]
    net = _edges_to_network(n, np.array(edges, dtype=np.int64))
    expected = n * k // 2
    if net.undirected_count != expected:
        raise AssertionError(f"edge count invariant broken: {net.undirected_count} != {expected}")
    return net


def network_from_edges(n: int, edges) -> ContactNetwork:
    """Build a network from (a, b) undirected pairs with full validation."""
    seen = set()
    rows = []
    for idx, (a, b) in enumerate(edges):
        a, b = int(a), int(b)
        if a == b:
            raise ValueError(f"edge {idx}: self loop {a}->{b}")
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"edge {idx}: agent id out of range 0..{n - 1}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"edge {idx}: duplicate edge {a}-{b}")
        seen.add(key)
        rows.append(key)
    if not rows:
        raise ValueError("edge list is empty")
    return _edges_to_network(n, np.array(rows, dtype=np.int64))


def load_edge_csv(path, n: int) -> ContactNetwork:
    """Read an undirected edge list CSV with header src,dst (0-based ids)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["src", "dst"]:
            raise ValueError(f"{path}: expected header 'src,dst'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValueError(f"{path} line {lineno}: expected two columns")
            try:
                a, b = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: non-integer agent id") from exc
            if a == b:
                raise ValueError(f"{path} line {lineno}: self loop {a}->{b}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"{path} line {lineno}: agent id out of range 0..{n - 1}")
            rows.append((a, b))
    try:
        return network_from_edges(n, rows)
    except ValueError as exc:
        # map duplicate-edge index back to a file line for the error message
        raise ValueError(f"{path}: {exc}") from exc


def rounded_seed_count(i0: float, n: int) -> int:
    """Number of initially exposed agents for an i0 fraction (round half even)."""
    return int(np.rint(i0 * n))


def seed_infections(pop: Population, i0: float, seed: int = 0) -> np.ndarray:
    """Expose round(i0*n) uniformly chosen agents at step 0; returns their ids."""
    if not 0.0 <= i0 <= 1.0:
        raise ValueError("i0 must be a fraction in [0, 1]")
    count = rounded_seed_count(i0, pop.n)
    rng = stream(seed, "seeding")
    chosen = rng.choice(pop.n, size=count, replace=False) if count else np.empty(0, dtype=np.int64)
    chosen = np.sort(chosen.astype(np.int64))
    pop.stage[chosen] = E
    pop.exposure[chosen] = 0
    return chosen
