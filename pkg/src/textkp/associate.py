"""Grouping decoded keypoints into ordered text instances.

Each keypoint looks for its right (and left) neighbour with the distance
ratio ``|e - m| / |p - m|``, where ``p`` is the keypoint, ``e = p + link`` the
link endpoint and ``m`` a candidate. Accepted neighbours become rightward
edges of a graph whose components are the instances.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .decode import DetectedKeypoint
from .geometry import KeypointKind

DEFAULT_RATIO = 0.5


@dataclass(frozen=True)
class InstanceChain:
    keypoints: tuple[DetectedKeypoint, ...]
    score: float


def _best_candidate(
    kp: DetectedKeypoint,
    others: Sequence[DetectedKeypoint],
    direction: str,
    ratio_threshold: float,
    self_index: Optional[int] = None,
) -> Optional[tuple[int, float]]:
    link = kp.links.get("right" if direction == "rightward" else "left")
    if link is None:
        return None
    px, py = kp.position
    ex, ey = px + link[0], py + link[1]
    best: Optional[tuple[int, float]] = None
    for idx, m in enumerate(others):
        if idx == self_index or m is kp:
            continue
        mx, my = m.position
        # candidate must lie on the link's side of the keypoint
        if (mx - px) * link[0] + (my - py) * link[1] <= 0:
            continue
        base = math.hypot(mx - px, my - py)
        ratio = math.hypot(ex - mx, ey - my) / base
        if best is None or ratio < best[1]:
            best = (idx, ratio)
    if best is None or best[1] >= ratio_threshold:
        return None
    return best


def link_candidates(
    kp: DetectedKeypoint,
    all_keypoints: Sequence[DetectedKeypoint],
    direction: str,
    ratio_threshold: float = DEFAULT_RATIO,
) -> Optional[int]:
    """Index of the accepted neighbour of ``kp`` in ``direction``, or None.

    ``direction`` is ``"leftward"`` or ``"rightward"``.
    """
    if direction not in ("leftward", "rightward"):
        raise ValueError(f"unknown direction {direction!r}")
    hit = _best_candidate(kp, all_keypoints, direction, ratio_threshold)
    return None if hit is None else hit[0]


def _canonical_key(kp: DetectedKeypoint):
    return (kp.position[1], kp.position[0], int(kp.kind), -kp.score)


def build_instances(
    keypoints: Sequence[DetectedKeypoint],
    ratio_threshold: float = DEFAULT_RATIO,
    mutual: bool = False,
    stats: Optional[Counter] = None,
) -> list[InstanceChain]:
    """Chains of keypoints ordered left to right.

    An edge survives when accepted from either side (both sides with
    ``mutual=True``). Competing claims on one neighbour keep the smallest
    ratio. Components that are cycles, have fewer than two keypoints, or hold
    a Left/Right keypoint away from the chain end are dropped and counted in
    ``stats`` when given.
    """
    stats = stats if stats is not None else Counter()
    kps = sorted(keypoints, key=_canonical_key)
    n = len(kps)

    # claims keyed by the contested node: right-claims onto their target,
    # left-claims onto the neighbour they name
    right_claims: dict[int, tuple[float, int]] = {}
    left_claims: dict[int, tuple[float, int]] = {}
    for i, kp in enumerate(kps):
        for direction, claims in (("rightward", right_claims), ("leftward", left_claims)):
            hit = _best_candidate(kp, kps, direction, ratio_threshold, i)
            if hit is None:
                continue
            j, r = hit
            if j in claims:
                stats["conflicting_edge"] += 1
                if (r, i) >= claims[j]:
                    continue
            claims[j] = (r, i)

    edges: dict[tuple[int, int], list] = {}
    for j, (r, i) in right_claims.items():
        edges.setdefault((i, j), [math.inf, 0])
        edges[(i, j)][0] = min(edges[(i, j)][0], r)
        edges[(i, j)][1] += 1
    for j, (r, i) in left_claims.items():
        edges.setdefault((j, i), [math.inf, 0])
        edges[(j, i)][0] = min(edges[(j, i)][0], r)
        edges[(j, i)][1] += 1
    if mutual:
        edges = {e: v for e, v in edges.items() if v[1] == 2}

    succ: dict[int, int] = {}
    pred: dict[int, int] = {}
    for (u, v), (r, _) in sorted(edges.items(), key=lambda item: (item[1][0], item[0])):
        if u == v or u in succ or v in pred:
            stats["conflicting_edge"] += 1
            continue
        succ[u] = v
        pred[v] = u

    chains: list[InstanceChain] = []
    seen = [False] * n
    for start in range(n):
        if seen[start] or start in pred:
            continue
        path = [start]
        seen[start] = True
        while path[-1] in succ:
            nxt = succ[path[-1]]
            path.append(nxt)
            seen[nxt] = True
        if len(path) < 2:
            stats["singleton"] += 1
            continue
        kinds = [kps[k].kind for k in path]
        if any(k is KeypointKind.LEFT for k in kinds[1:]) or any(
            k is KeypointKind.RIGHT for k in kinds[:-1]
        ):
            stats["misplaced_end"] += 1
            continue
        members = tuple(kps[k] for k in path)
        chains.append(InstanceChain(members, sum(m.score for m in members) / len(members)))
    # whatever is left unvisited sits on a cycle
    cycles = set()
    for k in range(n):
        if not seen[k]:
            node, loop = k, []
            while not seen[node]:
                seen[node] = True
                loop.append(node)
                node = succ[node]
            cycles.add(min(loop))
    stats["cycle"] += len(cycles)
    chains.sort(key=lambda c: (c.keypoints[0].position[1], c.keypoints[0].position[0]))
    return chains
