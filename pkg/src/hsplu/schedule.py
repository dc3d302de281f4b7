"""Task graph for the dissected blocks and a deterministic schedule simulator.

Every task carries a key ``(slevel, window, treelevel, node)``; each
worker runs its tasks in increasing key order and every dependency is
published by a task with a strictly smaller key, so a worker never waits
on work queued behind it.  Progress is tracked per 2D block
``(row node, column node)`` by a counter of finished column windows.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import InputError
from .ordering.nd import NdTree

LEAF_KEY = -1


@dataclass(frozen=True)
class Task:
    kind: str                 # "leaf", "upper" or "diag"
    node: int                 # row node of the produced block
    target: int               # column node
    window: int
    key: tuple
    owner: int                # virtual worker (leaf position)
    deps: tuple               # ((row node, col node), windows required)
    publishes: tuple          # ((row node, col node), value after completion)


@dataclass(frozen=True)
class DepNode:
    index: int
    treelevel: int
    workers: frozenset
    parent: int
    owned_blocks: tuple


@dataclass
class DependencyTree:
    nodes: list[DepNode]
    schedule: dict = field(default_factory=dict)   # slevel -> [(node, nwindows)]

    @property
    def nlevels(self) -> int:
        return len(self.schedule)


def treelevel(tree: NdTree, k: int) -> int:
    return tree.nodes[k].height - 1


def physical_worker(owner: int, p: int, nleaves: int) -> int:
    """Virtual leaf worker to thread, keeping subtree locality."""
    return owner * p // nleaves


def _leaf_windows(tree: NdTree) -> dict:
    return {nd.index: ([(nd.lo, nd.hi)] if nd.size else []) for nd in tree.nodes}


def default_windows(tree: NdTree, width: int) -> dict:
    out = {}
    for nd in tree.nodes:
        if nd.is_leaf:
            out[nd.index] = [(nd.lo, nd.hi)] if nd.size else []
        else:
            out[nd.index] = [(c, min(c + width, nd.hi)) for c in range(nd.lo, nd.hi, width)]
    return out


def _lowest_leaf(tree: NdTree, k: int) -> int:
    return tree.leaves.index(tree.subtree_leaves(k)[0])


def build_schedule(tree: NdTree, windows: dict) -> list[Task]:
    """All tasks of one dissected block, sorted by key."""
    tasks = []
    leaf_pos = {k: i for i, k in enumerate(tree.leaves)}
    nonempty = [nd.size > 0 for nd in tree.nodes]
    for nd in tree.nodes:
        k = nd.index
        if not nonempty[k]:
            continue
        if nd.is_leaf:
            tasks.append(Task("leaf", k, k, 0, (LEAF_KEY, 0, LEAF_KEY, k), leaf_pos[k],
                              (), ((k, k), 1)))
            continue
        slev = treelevel(tree, k)
        desc = [l for l in tree.descendants(k) if nonempty[l]]
        for w in range(len(windows[k])):
            for l in desc:
                deps = [((l, l), len(windows[l]))]
                deps += [((m, k), w + 1) for m in tree.descendants(l) if nonempty[m]]
                tasks.append(Task("upper", l, k, w, (slev, w, treelevel(tree, l), l),
                                  _lowest_leaf(tree, l), tuple(deps), ((l, k), w + 1)))
            deps = [((l, k), w + 1) for l in desc]
            if w > 0:
                deps.append(((k, k), w))
            tasks.append(Task("diag", k, k, w, (slev, w, treelevel(tree, k), k),
                              _lowest_leaf(tree, k), tuple(deps), ((k, k), w + 1)))
    tasks.sort(key=lambda t: t.key)
    return tasks


def worker_sets(tree: NdTree, p: int) -> list[frozenset]:
    """Threads that own some leaf below each node."""
    pos = {k: i for i, k in enumerate(tree.leaves)}
    return [frozenset(physical_worker(pos[v], p, tree.nleaves) for v in tree.subtree_leaves(nd.index))
            for nd in tree.nodes]


def build_dependency_tree(tree: NdTree, p: int, windows: dict | None = None) -> DependencyTree:
    """Per node: owned 2D blocks, tree level, the workers that may touch it.

    One worker per leaf, so ``p`` must equal the number of leaves.
    """
    if p != tree.nleaves:
        raise InputError(f"dependency tree needs one worker per leaf ({tree.nleaves}), got {p}")
    if windows is None:
        windows = _leaf_windows(tree)
    sets = worker_sets(tree, p)
    nodes = []
    sched: dict = {}
    for nd in tree.nodes:
        k = nd.index
        workers = sets[k]
        owned = [(k, k)] + [(l, k) for l in tree.descendants(k)] \
            + [(r, k) for r in tree.ancestors(k)]
        lev = treelevel(tree, k)
        nodes.append(DepNode(k, lev, workers, nd.parent, tuple(owned)))
        sched.setdefault(lev, []).append((k, len(windows.get(k, []))))
    return DependencyTree(nodes, dict(sorted(sched.items())))


def worker_queues(tasks: list[Task], p: int, nleaves: int) -> list[list[Task]]:
    queues: list[list[Task]] = [[] for _ in range(p)]
    for t in sorted(tasks, key=lambda t: t.key):
        queues[physical_worker(t.owner, p, nleaves)].append(t)
    return queues


def expected_dependencies(tree: NdTree, task: Task) -> set:
    """The 2D blocks a task is allowed to wait on."""
    if task.kind == "leaf":
        return set()
    k = task.target
    if task.kind == "upper":
        l = task.node
        return {(l, l)} | {(m, k) for m in tree.descendants(l)}
    return {(l, k) for l in tree.descendants(k)} | {(k, k)}


@dataclass
class SimulationResult:
    deadlock_free: bool
    completed: int
    total: int
    order: list
    violations: list

    @property
    def ok(self) -> bool:
        return self.deadlock_free and not self.violations


def simulate(tree: NdTree, tasks: list[Task], p: int, seed: int | None = None) -> SimulationResult:
    """Run the worker queues against counting cells without threads.

    At every step one worker whose next task has all dependencies met
    runs it (chosen at random when ``seed`` is given, else the lowest
    index).  Reports deadlock if no worker can move, and records any
    wait outside the task's allowed dependency set, any dependency not
    published by a smaller key and any worker that is outside the node's
    worker set.
    """
    rng = random.Random(seed) if seed is not None else None
    queues = worker_queues(tasks, p, tree.nleaves)
    sets = worker_sets(tree, p)
    producers: dict = {}
    for t in tasks:
        producers.setdefault(t.publishes[0], []).append(t)
    violations = []
    for t in tasks:
        allowed = expected_dependencies(tree, t)
        for cell, need in t.deps:
            if cell not in allowed:
                violations.append(f"{t.kind}{t.key} waits on {cell} outside its dependency set")
            prods = [q for q in producers.get(cell, []) if q.publishes[1] <= need]
            if not any(q.publishes[1] == need for q in prods):
                violations.append(f"{t.kind}{t.key} needs {cell}>={need} which is never published")
            elif any(q.key >= t.key for q in prods):
                violations.append(f"{t.kind}{t.key} depends on a task with a larger key")
        w = physical_worker(t.owner, p, tree.nleaves)
        if w not in sets[t.target]:
            violations.append(f"{t.kind}{t.key} runs on worker {w} outside node {t.target}")
    cells: dict = {}
    heads = [0] * p
    order = []
    done = 0
    while done < len(tasks):
        ready = []
        for w in range(p):
            if heads[w] < len(queues[w]):
                t = queues[w][heads[w]]
                if all(cells.get(c, 0) >= need for c, need in t.deps):
                    ready.append(w)
        if not ready:
            return SimulationResult(False, done, len(tasks), order, violations)
        w = rng.choice(ready) if rng else ready[0]
        t = queues[w][heads[w]]
        cell, value = t.publishes
        if cells.get(cell, 0) + 1 != value:
            violations.append(f"{t.kind}{t.key} publishes {cell}={value} out of order")
        cells[cell] = value
        heads[w] += 1
        order.append((w, t.key))
        done += 1
    return SimulationResult(True, done, len(tasks), order, violations)
