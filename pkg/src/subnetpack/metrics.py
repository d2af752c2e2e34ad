"""Accuracy bookkeeping and per-task storage cost.

The accuracy matrix records R[e][t], task t's accuracy after episode e.
Committed components never change, so past-task entries must stay bit-equal
down the column; forget_check verifies exactly that. Capacity counts the bits
a task occupies: coded weights, codebook tables, and one mask bit per used
slot.
"""

from __future__ import annotations

from dataclasses import dataclass

from .store import SLOT_BITS, WeightSlotStore


class AccuracyMatrix:
    """Lower-triangular accuracy record; row e holds tasks 0..e."""

    def __init__(self, rows=None):
        self.rows: list[tuple[float, ...]] = []
        for row in rows or []:
            self.append_row(row)

    def append_row(self, row) -> None:
        row = tuple(float(v) for v in row)
        if len(row) != len(self.rows) + 1:
            raise ValueError(
                f"episode {len(self.rows)} row must cover {len(self.rows) + 1} tasks, got {len(row)}"
            )
        if any(not (0.0 <= v <= 1.0) for v in row):
            raise ValueError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    @property
    def n_episodes(self) -> int:
        return len(self.rows)

    def value(self, episode: int, task: int) -> float:
        if task > episode:
            raise IndexError(f"task {task} not yet seen at episode {episode}")
        return self.rows[episode][task]

    def final_row(self) -> tuple[float, ...]:
        if not self.rows:
            raise ValueError("empty accuracy matrix")
        return self.rows[-1]


def lifelong_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean accuracy over all tasks after the final episode."""
    row = matrix.final_row()
    if len(row) != matrix.n_episodes:
        raise ValueError("final row does not cover every task")
    return sum(row) / len(row)


def forget_check(matrix: AccuracyMatrix) -> list[tuple[int, int]]:
    """Every (episode, task) where a past task's accuracy moved at all.

    The comparison is exact: re-evaluating an immutable component is
    deterministic, so even a one-ulp drift counts as forgetting.
    """
    violations = []
    for e in range(matrix.n_episodes):
        for t in range(e):
            if matrix.rows[e][t] != matrix.rows[t][t]:
                violations.append((e, t))
    return violations


def capacity(store: WeightSlotStore, task_id: int, psi: int | None = None,
             n_layers: int | None = None) -> int:
    """Bits occupied by one task: coded weights + codebook + mask.

    The codebook term charges the worst case, full 2^psi tables of one 32-bit
    value and one psi-bit code each. 32-bit tasks store raw bit patterns and
    need no codebook at all.
    """
    if task_id not in store.tasks:
        raise KeyError(f"task {task_id} not committed")
    alloc = store.tasks[task_id]
    b = alloc.psi if psi is None else psi
    layers = store.layer_count if n_layers is None else n_layers
    used = alloc.mask.active_counts()
    coded = sum(used) * b
    codebook = 0 if b >= SLOT_BITS else layers * (1 << b) * (SLOT_BITS + b)
    mask_bits = sum(used)
    return coded + codebook + mask_bits


def capacity_actual(store: WeightSlotStore, task_id: int, codebook) -> int:
    """Like capacity, but charges the codebook tables at their real lengths."""
    if task_id not in store.tasks:
        raise KeyError(f"task {task_id} not committed")
    alloc = store.tasks[task_id]
    b = alloc.psi
    used = alloc.mask.active_counts()
    table_bits = sum(len(t) * (SLOT_BITS + b) for t in codebook.centroids)
    return sum(used) * b + table_bits + sum(used)


@dataclass(frozen=True)
class CapacityEntry:
    task_id: int
    psi: int
    bits: int
    bits_actual: int
    percent: float
    percent_actual: float
    cumulative_bits: int


@dataclass(frozen=True)
class CapacityReport:
    """Per-task storage costs against the dense 32-bit weight footprint."""

    entries: tuple[CapacityEntry, ...]
    dense_bits: int

    @property
    def total_bits(self) -> int:
        return sum(e.bits for e in self.entries)

    @property
    def total_percent(self) -> float:
        return 100.0 * self.total_bits / self.dense_bits


def capacity_report(store: WeightSlotStore, codebooks: dict) -> CapacityReport:
    """Capacity entries for every committed task, in task order.

    codebooks maps task_id to that task's Codebook; tasks without one are
    charged the worst-case table size in both columns.
    """
    dense = store.total_slots * SLOT_BITS
    entries = []
    running = 0
    for task_id in sorted(store.tasks):
        bits = capacity(store, task_id)
        book = codebooks.get(task_id)
        actual = bits if book is None else capacity_actual(store, task_id, book)
        running += bits
        entries.append(CapacityEntry(
            task_id,
            store.tasks[task_id].psi,
            bits,
            actual,
            100.0 * bits / dense,
            100.0 * actual / dense,
            running,
        ))
    return CapacityReport(tuple(entries), dense)
