"""Bayesian adversary: posteriors, optimal point estimates, and the two
partition-level objectives (expected service distortion vs inference error).

The adversary knows the prior and the full reporting law.  For a reported
pseudo-location it forms the posterior over true locations and answers with
the point minimizing posterior-expected distance; the privacy objective is
that distance averaged over reports, the service objective is the expected
reported-vs-true distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .domain import Domain, Location
from .errors import UnreachableOutputError
from .mechanism import ObfuscationMatrix


@dataclass(frozen=True)
class ObjectivePair:
    """Both reported in km and non-negative; larger exp_err is better."""

    qloss: float
    exp_err: float


@dataclass(frozen=True)
class Posterior:
    """Distribution over true locations given one observed pseudo-location."""

    observed: int
    probs: np.ndarray


def _joint(domain: Domain, matrix: ObfuscationMatrix) -> sparse.csc_matrix:
    """Sparse J[x, x'] = prior(x) * f(x' | x), indices in domain order."""
    n = len(domain)
    data = []
    rows = []
    cols = []
    col_cache: dict[int, np.ndarray] = {}
    for rid in matrix.row_ids:
        i = domain.index_of(rid)
        support, p = matrix.row(rid)
        key = id(support)
        if key not in col_cache:
            col_cache[key] = np.array([domain.index_of(int(s)) for s in support], dtype=int)
        cidx = col_cache[key]
        rows.append(np.full(len(cidx), i, dtype=int))
        cols.append(cidx)
        data.append(domain.prior[i] * p)
    return sparse.csc_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _attack_costs(domain: Domain, matrix: ObfuscationMatrix) -> tuple[np.ndarray, sparse.csc_matrix]:
    """A[g, x'] = expected distance of guess g against the joint column x'."""
    joint = _joint(domain, matrix)
    dm = domain.distance_matrix
    costs = (joint.T.tocsr() @ dm).T
    return np.asarray(costs), joint


def posterior(domain: Domain, matrix: ObfuscationMatrix, x_prime: Location) -> Posterior:
    xi = domain.index_of(x_prime.id)
    joint = _joint(domain, matrix)
    col = np.asarray(joint[:, xi].todense()).ravel()
    total = col.sum()
    if total <= 0.0:
        raise UnreachableOutputError(f"pseudo-location {x_prime.id} has zero probability")
    return Posterior(observed=x_prime.id, probs=col / total)


def optimal_attack(post: Posterior, domain: Domain) -> tuple[Location, float]:
    """Best point estimate and its expected distance; ties go to the lowest id."""
    vals = domain.distance_matrix @ post.probs
    best = vals.min()
    ties = np.flatnonzero(vals == best)
    loc = min((domain.locations[i] for i in ties), key=lambda l: l.id)
    return loc, float(best)


def expected_inference_error(domain: Domain, matrix: ObfuscationMatrix) -> float:
    """Adversary's expected distance over reports under optimal attacks."""
    costs, _ = _attack_costs(domain, matrix)
    return float(costs.min(axis=0).sum())


def quality_loss(domain: Domain, matrix: ObfuscationMatrix) -> float:
    """Expected distance between true and reported locations."""
    dm = domain.distance_matrix
    total = 0.0
    col_cache: dict[int, np.ndarray] = {}
    for rid in matrix.row_ids:
        i = domain.index_of(rid)
        support, p = matrix.row(rid)
        key = id(support)
        if key not in col_cache:
            col_cache[key] = np.array([domain.index_of(int(s)) for s in support], dtype=int)
        total += domain.prior[i] * float(p @ dm[i, col_cache[key]])
    return float(total)


def min_conditional_error(domain: Domain, matrix: ObfuscationMatrix) -> float:
    """Worst-case (over reachable reports) posterior-expected attack distance."""
    costs, joint = _attack_costs(domain, matrix)
    mass = np.asarray(joint.sum(axis=0)).ravel()
    reachable = mass > 0.0
    per_report = costs.min(axis=0)[reachable] / mass[reachable]
    return float(per_report.min())


def evaluate_objectives(domain: Domain, matrix: ObfuscationMatrix) -> ObjectivePair:
    """Both objectives from one pass over the joint distribution."""
    return ObjectivePair(
        qloss=quality_loss(domain, matrix),
        exp_err=expected_inference_error(domain, matrix),
    )
