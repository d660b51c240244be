"""Exact expected outcomes for tiny instances by exhaustive enumeration.

Independent of the tensorized engine on purpose: plain Python floats, an
adjacency list, and a distribution over full agent states advanced step by
step, branching over every transmission outcome. Used to cross-check the
engine's Monte Carlo means. Tractable only for a handful of agents and steps;
the CLI guards n <= 10, K <= 3.

Mortality routing is not enumerated, so the resolved-set expectation requires
tau_ir == tau_im (membership in {R, M} is then routing-independent).
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

_S, _E, _I, _R = 0, 1, 2, 3


@dataclass
class OracleReport:
    ever_infected: float      # E[count of agents ever exposed] at step K
    resolved: float           # E[count of agents past the infectious stage]
    yhat_ever: float          # m * ever_infected
    yhat_resolved: float      # m * resolved
    outcome_states: int       # distinct terminal states enumerated


def exact_expectations(
    n: int,
    edges: Sequence,
    ages: Sequence[int],
    seeded: Sequence[int],
    steps: int,
    r,
    susceptibility: Sequence[float],
    t_e: float,
    t_i: float,
    tau_ei: float,
    tau_ir: float,
    tau_im: float,
    m: float,
    infectiousness: Sequence[float],
    max_candidates: int = 16,
) -> OracleReport:
    """Enumerate all transmission outcomes of the hard dynamics.

    r may be a float or a per-step sequence of length `steps`. infectiousness
    is indexed by whole days since exposure (entry 0 is day 0).
    """
    if tau_ir != tau_im:
        raise ValueError("enumeration requires tau_ir == tau_im (routing-free resolution)")
    r_seq = [float(r)] * steps if isinstance(r, (int, float)) else [float(x) for x in r]
    if len(r_seq) != steps:
        raise ValueError("per-step r must have one entry per step")
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[int(a)].append(int(b))
        adj[int(b)].append(int(a))
    mean_degree = 2.0 * len(edges) / n
    if mean_degree == 0:
        raise ValueError("network has no edges")

    stages = [_S] * n
    exposures = [-10**9] * n
    for j in seeded:
        stages[int(j)] = _E
        exposures[int(j)] = 0
    dist = {(tuple(stages), tuple(exposures)): 1.0}

    for t in range(steps):
        nxt: dict = defaultdict(float)
        for (st, ex), prob in dist.items():
            lam = {}
            for j in range(n):
                if st[j] != _S:
                    continue
                total = 0.0
                for s in adj[j]:
                    if st[s] not in (_E, _I):
                        continue
                    d = t - ex[s]
                    if d < 0 or d >= len(infectiousness):
                        f = 0.0
                    else:
                        f = infectiousness[d]
                    trans = t_e if st[s] == _E else t_i
                    total += (r_seq[t] / mean_degree) * susceptibility[ages[j]] * trans * f
                if total > 0.0:
                    lam[j] = total
            cand = sorted(lam)
            if len(cand) > max_candidates:
                raise ValueError(f"too many simultaneous candidates ({len(cand)}) to enumerate")

            prog = list(st)
            for j in range(n):
                if st[j] == _E and t - ex[j] >= tau_ei:
                    prog[j] = _I
                elif st[j] == _I and t - ex[j] >= tau_ei + tau_ir:
                    prog[j] = _R

            qs = {j: 1.0 - math.exp(-lam[j]) for j in cand}
            for bits in itertools.product((0, 1), repeat=len(cand)):
                p = prob
                st2 = list(prog)
                ex2 = list(ex)
                for j, b in zip(cand, bits):
                    if b:
                        p *= qs[j]
                        st2[j] = _E
                        ex2[j] = t
                    else:
                        p *= 1.0 - qs[j]
                if p > 0.0:
                    nxt[(tuple(st2), tuple(ex2))] += p
        dist = dict(nxt)

    ever = 0.0
    resolved = 0.0
    total_prob = 0.0
    for (st, ex), prob in dist.items():
        total_prob += prob
        ever += prob * sum(1 for s in st if s != _S)
        resolved += prob * sum(1 for s in st if s == _R)
    if abs(total_prob - 1.0) > 1e-9:
        raise AssertionError(f"outcome probabilities sum to {total_prob}, not 1")
    return OracleReport(
        ever_infected=ever,
        resolved=resolved,
        yhat_ever=m * ever,
        yhat_resolved=m * resolved,
        outcome_states=len(dist),
    )
