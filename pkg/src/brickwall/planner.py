"""Build-order optimization for a mobile robot placing bricks along a wall.

A plan is an ordered list of robot x-positions.  At each position the robot
places every brick that becomes buildable from there (reach, support and
left-to-right rules, iterated to a fixpoint).  Plans are compared
lexicographically on (number of positions, travelled distance).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import Infeasible
from .world import Blueprint

_TOL = 1e-9


@dataclass(frozen=True)
class PlannerConfig:
    arm_shift: float = 0.675
    reach_radius: float = 0.675
    adjacency_eps: float = 0.01

    def __post_init__(self):
        if self.arm_shift <= 0 or self.reach_radius <= 0:
            raise ValueError("arm_shift and reach_radius must be positive")


@dataclass
class BuildPlan:
    positions: List[float]
    placed: List[List[int]]
    travel: float = field(default=None)

    def __post_init__(self):
        recomputed = float(np.sum(np.abs(np.diff(self.positions)))) if len(self.positions) > 1 else 0.0
        if self.travel is None:
            self.travel = recomputed
        elif abs(self.travel - recomputed) > 1e-9:
            raise ValueError("stored travel does not match positions")

    @property
    def n_positions(self) -> int:
        return len(self.positions)

    @property
    def key(self) -> Tuple[int, float]:
        return (self.n_positions, self.travel)

    def to_dict(self) -> dict:
        return {
            "positions": [float(p) for p in self.positions],
            "placed": [list(map(int, ids)) for ids in self.placed],
            "n_positions": self.n_positions,
            "travel": self.travel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BuildPlan":
        return cls([float(p) for p in d["positions"]], [list(map(int, x)) for x in d["placed"]], float(d["travel"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------------------
# literal feasibility rules


def _centers(bp: Blueprint) -> List[float]:
    return [b.center_x for _, _, b in bp.bricks()]


def place_positions(bp: Blueprint, cfg: PlannerConfig = PlannerConfig()) -> List[float]:
    """Sorted candidate robot positions ``x_i + t_x``, deduplicated within 1e-9."""
    if bp.brick_count == 0:
        raise ValueError("empty blueprint")
    out: List[float] = []
    for x in sorted(c + cfg.arm_shift for c in _centers(bp)):
        if not out or x - out[-1] > _TOL:
            out.append(x)
    return out


def _in_reach(center: float, p: float, cfg: PlannerConfig) -> bool:
    return abs(center + cfg.arm_shift - p) <= cfg.reach_radius + _TOL


def _covered(lo: float, hi: float, intervals: Iterable[Tuple[float, float]]) -> bool:
    """Whether ``[lo, hi]`` is covered by the union of ``intervals``."""
    x = lo
    for a, b in sorted(intervals):
        if a > x + _TOL:
            break
        x = max(x, b)
        if x >= hi - _TOL:
            return True
    return x >= hi - _TOL


def buildable_set(bp: Blueprint, built: Iterable[int], p: float, cfg: PlannerConfig = PlannerConfig()) -> List[int]:
    """Bricks placeable from position ``p`` given the ``built`` ids.

    Iterates to a fixpoint so that a brick may enable its right neighbor or the
    brick above it within the same visit.  Output is in (layer, left_x) order.
    """
    info = bp.bricks()
    done = set(built)
    added: List[int] = []
    changed = True
    while changed:
        changed = False
        for i, k, b in info:
            if i in done or not _in_reach(b.center_x, p, cfg):
                continue
            if k > 0:
                below = [(o.left_x, o.right_x) for j, kk, o in info if kk == k - 1 and j in done]
                if not _covered(b.left_x, b.right_x, below):
                    continue
            left = [j for j, kk, o in info if kk == k and j != i and abs(o.right_x - b.left_x) <= cfg.adjacency_eps]
            if any(j not in done for j in left):
                continue
            done.add(i)
            added.append(i)
            changed = True
    order = {i: n for n, (i, _, _) in enumerate(info)}
    return sorted(added, key=order.__getitem__)


# ---------------------------------------------------------------------------
# bitmask model used by the searches


class _Model:
    """Per-blueprint bitmask tables equivalent to ``buildable_set``."""

    def __init__(self, bp: Blueprint, cfg: PlannerConfig):
        self.bp = bp
        self.cfg = cfg
        info = bp.bricks()
        self.n = len(info)
        self.full = (1 << self.n) - 1
        self.positions = place_positions(bp, cfg)
        self.reach = []
        for p in self.positions:
            m = 0
            for i, _, b in info:
                if _in_reach(b.center_x, p, cfg):
                    m |= 1 << i
            self.reach.append(m)
        self.need = []  # bricks that must be built first
        self.supportable = []
        for i, k, b in info:
            m = 0
            ok = True
            if k > 0:
                lower = [(j, o) for j, kk, o in info if kk == k - 1]
                over = [(j, o) for j, o in lower if min(o.right_x, b.right_x) - max(o.left_x, b.left_x) > _TOL]
                for j, _ in over:
                    m |= 1 << j
                ok = _covered(b.left_x, b.right_x, [(o.left_x, o.right_x) for _, o in over])
            for j, kk, o in info:
                if kk == k and j != i and abs(o.right_x - b.left_x) <= cfg.adjacency_eps:
                    m |= 1 << j
            self.need.append(m)
            self.supportable.append(ok)
        self._cache: Dict[Tuple[int, int], int] = {}

    def step(self, built: int, pos_index: int) -> int:
        """New built mask after visiting position ``pos_index``."""
        key = (built, pos_index)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        reach = self.reach[pos_index]
        cur = built
        changed = True
        while changed:
            changed = False
            for i in range(self.n):
                bit = 1 << i
                if cur & bit or not reach & bit or not self.supportable[i]:
                    continue
                if self.need[i] & ~cur:
                    continue
                cur |= bit
                changed = True
        self._cache[key] = cur
        return cur

    def check_feasible(self) -> None:
        cur = 0
        while True:
            nxt = cur
            for k in range(len(self.positions)):
                nxt = self.step(nxt, k)
            if nxt == cur:
                break
            cur = nxt
        if cur != self.full:
            missing = [i for i in range(self.n) if not cur >> i & 1]
            raise Infeasible(f"bricks {missing} can never be placed")

    def ids(self, before: int, after: int) -> List[int]:
        diff = after & ~before
        return [i for i in range(self.n) if diff >> i & 1]

    def plan(self, seq: Sequence[int]) -> BuildPlan:
        built = 0
        placed = []
        for k in seq:
            nxt = self.step(built, k)
            placed.append(self.ids(built, nxt))
            built = nxt
        return BuildPlan([self.positions[k] for k in seq], placed)


def _lex_less(a: Tuple[int, float], b: Tuple[int, float]) -> bool:
    return a[0] < b[0] or (a[0] == b[0] and a[1] < b[1])


def greedy_plan(bp: Blueprint, cfg: PlannerConfig = PlannerConfig()) -> BuildPlan:
    """Local rule: most new bricks, then least travel, then smallest x."""
    m = _Model(bp, cfg)
    return m.plan(_greedy_sequence(m))


def _greedy_sequence(m: _Model) -> List[int]:
    built, seq, cur = 0, [], None
    while built != m.full:
        best = None
        for k, p in enumerate(m.positions):
            gain = bin(m.step(built, k) & ~built).count("1")
            if gain == 0:
                continue
            travel = 0.0 if cur is None else abs(p - cur)
            cand = (-gain, travel, p, k)
            if best is None or cand < best:
                best = cand
        if best is None:
            raise Infeasible("no position adds a brick")
        k = best[3]
        built = m.step(built, k)
        seq.append(k)
        cur = m.positions[k]
    return seq


def optimal_plan(bp: Blueprint, cfg: PlannerConfig = PlannerConfig(), on_prune=None) -> BuildPlan:
    """Lexicographically optimal plan by depth-first branch and bound.

    The greedy plan seeds the incumbent.  A node is cut when even one more
    position cannot beat the incumbent, and when the same (built set, last
    position) state was already reached with a prefix that is no worse.
    ``on_prune(built_ids, last_x, count, dist)`` is called for every cut node.
    """
    m = _Model(bp, cfg)
    m.check_feasible()
    seq0 = _greedy_sequence(m)
    best_seq = list(seq0)
    best_key = m.plan(seq0).key
    seen: Dict[Tuple[int, int], Tuple[int, float]] = {}
    P = m.positions

    def dfs(built: int, last: int, count: int, dist: float, seq: List[int]):
        nonlocal best_seq, best_key
        if built == m.full:
            if _lex_less((count, dist), best_key):
                best_key, best_seq = (count, dist), list(seq)
            return
        key = (built, last)
        prev = seen.get(key)
        if not _lex_less((count + 1, dist), best_key) or (prev is not None and not _lex_less((count, dist), prev)):
            if on_prune is not None:
                on_prune(m.ids(0, built), None if last < 0 else P[last], count, dist)
            return
        seen[key] = (count, dist)
        children = []
        for k in range(len(P)):
            nxt = m.step(built, k)
            if nxt == built:
                continue
            step = 0.0 if last < 0 else abs(P[k] - P[last])
            children.append((-bin(nxt & ~built).count("1"), step, k, nxt))
        children.sort()
        for _, step, k, nxt in children:
            seq.append(k)
            dfs(nxt, k, count + 1, dist + step, seq)
            seq.pop()

    dfs(0, -1, 0, 0.0, [])
    return m.plan(best_seq)


def _exhaustive(bp: Blueprint, cfg: PlannerConfig):
    P = place_positions(bp, cfg)
    everything = frozenset(range(bp.brick_count))

    @lru_cache(maxsize=None)
    def best(built: FrozenSet[int], last: int):
        if built == everything:
            return (0, 0.0, ())
        out = None
        for k, p in enumerate(P):
            add = buildable_set(bp, built, p, cfg)
            if not add:
                continue
            sub = best(built | frozenset(add), k)
            if sub is None:
                continue
            cand = (sub[0] + 1, sub[1] + (0.0 if last < 0 else abs(p - P[last])), (k,) + sub[2])
            if out is None or cand[:2] < out[:2]:
                out = cand
        return out

    return P, best


def exhaustive_plan(bp: Blueprint, cfg: PlannerConfig = PlannerConfig()) -> BuildPlan:
    """Reference optimum over every sequence whose visits each add a brick.

    Uses the literal interval rules of ``buildable_set`` and no bounds;
    completions of a (built set, last position) state are evaluated once and
    reused, which covers the same sequence space as plain enumeration.
    """
    P, best = _exhaustive(bp, cfg)
    res = best(frozenset(), -1)
    if res is None:
        raise Infeasible("blueprint cannot be completed")
    built: set = set()
    placed = []
    for k in res[2]:
        add = buildable_set(bp, built, P[k], cfg)
        placed.append(add)
        built.update(add)
    return BuildPlan([P[k] for k in res[2]], placed)


def exhaustive_completion(bp: Blueprint, built: Iterable[int], last_x: Optional[float],
                          cfg: PlannerConfig = PlannerConfig()) -> Optional[Tuple[int, float]]:
    """Best (extra positions, extra travel) to finish from a partial state, or None."""
    P, best = _exhaustive(bp, cfg)
    last = -1 if last_x is None else int(np.argmin(np.abs(np.asarray(P) - last_x)))
    res = best(frozenset(built), last)
    return None if res is None else res[:2]


def replay(bp: Blueprint, plan: BuildPlan, cfg: PlannerConfig = PlannerConfig()) -> bool:
    """Re-simulate a plan with the literal rules; True if it rebuilds the blueprint exactly."""
    built: set = set()
    for p, ids in zip(plan.positions, plan.placed):
        got = buildable_set(bp, built, p, cfg)
        if sorted(got) != sorted(ids):
            return False
        built.update(got)
    return built == set(range(bp.brick_count))
