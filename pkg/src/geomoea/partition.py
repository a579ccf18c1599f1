"""Median binary partition of the domain into balanced rectangular cells.

A cell splits while it still holds at least twice the minimum population,
cutting the longer rectangle edge at the member median.  Every leaf then
carries between n0 and 2*n0 - 1 locations, which is what the downstream
protection-set construction assumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import Domain
from .errors import DomainTooSmallError, InvalidConfigError


@dataclass(frozen=True)
class Cell:
    id: int
    bounds: tuple[float, float, float, float]  # min_x, min_y, max_x, max_y
    member_ids: tuple[int, ...]


@dataclass(frozen=True)
class PartitionTree:
    levels: int
    cells: tuple[Cell, ...]


def binary_partition(domain: Domain, n0: int) -> PartitionTree:
    """Split the domain until every leaf holds n0 <= count < 2*n0 members."""
    if n0 < 2:
        raise InvalidConfigError(f"n0 must be >= 2, got {n0}")
    if len(domain) < n0:
        raise DomainTooSmallError(f"domain has {len(domain)} locations, needs >= n0 = {n0}")
    coords = domain.coords
    root_bounds = (
        float(coords[:, 0].min()),
        float(coords[:, 1].min()),
        float(coords[:, 0].max()),
        float(coords[:, 1].max()),
    )
    leaves: list[tuple[tuple[float, float, float, float], np.ndarray]] = []
    max_depth = 0

    def recurse(bounds: tuple[float, float, float, float], members: np.ndarray, depth: int) -> None:
        nonlocal max_depth
        max_depth = max(max_depth, depth)
        if len(members) < 2 * n0:
            leaves.append((bounds, members))
            return
        min_x, min_y, max_x, max_y = bounds
        axis = 0 if (max_x - min_x) >= (max_y - min_y) else 1
        vals = coords[members, axis]
        order = np.lexsort((members, vals))  # stable: coordinate, then index
        members = members[order]
        vals = vals[order]
        n_left = math.ceil(len(members) / 2)
        plane = (vals[n_left - 1] + vals[n_left]) / 2.0
        if axis == 0:
            left_bounds = (min_x, min_y, float(plane), max_y)
            right_bounds = (float(plane), min_y, max_x, max_y)
        else:
            left_bounds = (min_x, min_y, max_x, float(plane))
            right_bounds = (min_x, float(plane), max_x, max_y)
        recurse(left_bounds, members[:n_left], depth + 1)
        recurse(right_bounds, members[n_left:], depth + 1)

    recurse(root_bounds, np.arange(len(domain)), 0)
    cells = []
    for cell_id, (bounds, members) in enumerate(leaves):
        ids = tuple(sorted(domain.locations[i].id for i in members))
        cells.append(Cell(cell_id, bounds, ids))
    return PartitionTree(levels=max_depth, cells=tuple(cells))


def cells_payload(tree: PartitionTree) -> dict:
    return {
        "levels": tree.levels,
        "cells": [
            {"id": c.id, "bounds": list(c.bounds), "member_ids": list(c.member_ids)}
            for c in tree.cells
        ],
    }


def tree_from_payload(payload: dict) -> PartitionTree:
    cells = tuple(
        Cell(int(c["id"]), tuple(float(b) for b in c["bounds"]), tuple(int(m) for m in c["member_ids"]))
        for c in payload["cells"]
    )
    return PartitionTree(levels=int(payload["levels"]), cells=cells)
