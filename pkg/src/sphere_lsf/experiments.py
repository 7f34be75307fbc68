"""Planted instances, trial runners and CSV reporting.

Every trial owns a seed derived from ``(spec.seed, experiment, trial)``, so
trials can run on any number of threads and rows are still written in trial
order with identical bytes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, TextIO

import numpy as np

from .config import SANDWICH_CLOSE_FRACTION, SANDWICH_PROBABILITY, ExperimentSpec
from .errors import DomainError
from .filters import assign_band_batch, build_bank
from .index import (
    TENSOR,
    TOP1,
    LSFIndex,
    SphereDataset,
    bank_seed,
    build_index,
    inspected_point_ids,
    query_ann,
    query_count,
    to_count_table,
)
from .oracle import brute_force, drop_probability
from .params import band_limits, derive_ann_params, derive_privacy_params, derive_tensor_params
from .privacy import CompositionPlan, PrivateCountTable, privatize, query_private_count
from .rng import derive_seed, stream

CSV_VERSION_LINE = "# sphere-lsf v1"


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    dataset: SphereDataset
    query: np.ndarray
    planted_ids: np.ndarray


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def gen_planted(n: int, d: int, alpha: float, k: int, seed: int) -> PlantedInstance:
    """``k`` points at similarity exactly ``alpha`` to a random query, the rest uniform.

    Planted points take ids ``0..k-1`` and are ``alpha q + sqrt(1 - alpha^2) u``
    with ``u`` a uniform unit vector orthogonal to ``q``.
    """
    if d < 2:
        raise DomainError(f"need d >= 2, got {d}")
    if not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not -1.0 <= alpha <= 1.0:
        raise DomainError(f"need -1 <= alpha <= 1, got {alpha}")
    rng = stream(seed, "planted")
    q = _unit_rows(rng, 1, d)[0]
    u = rng.standard_normal((k, d))
    u -= np.outer(u @ q, q)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    planted = alpha * q + math.sqrt(1.0 - alpha * alpha) * u
    background = _unit_rows(rng, n - k, d)
    points = np.concatenate([planted, background]) if n else np.empty((0, d))
    return PlantedInstance(SphereDataset(points), q, np.arange(k))


def controlled_pairs(d: int, distance: float, count: int, seed: int, radius: float = 0.5):
    """Pairs at exact Euclidean ``distance`` with both ends inside the ``radius`` ball.

    Each pair is a random centre plus and minus ``distance / 2`` along a random
    direction, which is how the embedding audit draws its inputs.
    """
    if distance > 2.0 * radius:
        raise DomainError(f"distance {distance} does not fit in a ball of radius {radius}")
    rng = stream(seed, "pairs")
    centre = _unit_rows(rng, count, d) * rng.uniform(0.0, radius - distance / 2.0, (count, 1))
    v = _unit_rows(rng, count, d)
    return centre - distance / 2.0 * v, centre + distance / 2.0 * v


# -- plumbing ---------------------------------------------------------------


def run_trials(fn: Callable[[int], list], trials: int, threads: int = 1) -> list:
    """Map ``fn`` over trial numbers; results come back in trial order."""
    if threads <= 1:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class Report:
    columns: tuple[str, ...]
    rows: list[tuple]
    footer: list[tuple]

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def write(self, out: TextIO) -> None:
        out.write(CSV_VERSION_LINE + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows + self.footer:
            w.writerow([_fmt(v) for v in row])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _summary(columns: Sequence[str], rows: list[tuple], skip: int = 2) -> list[tuple]:
    """Mean and standard-error footer rows over every numeric column after ``skip``."""
    means, ses = ["mean"], ["se"]
    for _ in range(1, skip):
        means.append("")
        ses.append("")
    for j in range(skip, len(columns)):
        vals = [r[j] for r in rows if r[j] != "" and r[j] is not None]
        if not vals:
            means.append("")
            ses.append("")
            continue
        arr = np.asarray(vals, dtype=np.float64)
        means.append(float(arr.mean()))
        ses.append(float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0)
    return [tuple(means), tuple(ses)]


def _build(spec: ExperimentSpec, dataset: SphereDataset, seed: int) -> LSFIndex:
    ann = derive_ann_params(spec.n, spec.alpha, spec.beta)
    tensor = derive_tensor_params(spec.n, spec.alpha, spec.beta, spec.t) if spec.structure == TENSOR else None
    return build_index(spec.structure, dataset, ann, seed, tensor, spec.eta_override)


def _trial_seeds(spec: ExperimentSpec, experiment: str, i: int) -> tuple[int, int]:
    return derive_seed(spec.seed, experiment, i, 0), derive_seed(spec.seed, experiment, i, 1)


def reference_buckets(spec: ExperimentSpec) -> float:
    """``m^(1 - alpha^2)``, the bucket count a query should inspect up to lower-order factors."""
    ann = derive_ann_params(spec.n, spec.alpha, spec.beta)
    if spec.structure == TENSOR:
        tp = derive_tensor_params(spec.n, spec.alpha, spec.beta, spec.t)
        return float(tp.m_tilde ** ((1.0 - spec.alpha**2) * tp.t))
    return float(ann.m ** (1.0 - spec.alpha**2))


# -- recall -----------------------------------------------------------------

RECALL_COLUMNS = (
    "trial",
    "seed",
    "found",
    "answered",
    "planted_stored",
    "buckets",
    "far_points",
    "inner_products",
    "reference_buckets",
)


def recall_trial(spec: ExperimentSpec, i: int) -> tuple:
    """One planted instance, one index, one query.

    ``found`` means a planted point sits in a bucket the query inspects;
    ``answered`` means query_ann returned some point with similarity at least
    beta.
    """
    data_seed, index_seed = _trial_seeds(spec, "recall", i)
    inst = gen_planted(spec.n, spec.d, spec.alpha, spec.planted, data_seed)
    index = _build(spec, inst.dataset, index_seed)
    res = query_ann(index, inst.query)
    inspected = inspected_point_ids(index, inst.query)
    found = bool(np.isin(inst.planted_ids, inspected).any())
    stored = bool(np.isin(inst.planted_ids, index.table.ids).any())
    return (
        i,
        data_seed,
        found,
        res.point_id is not None,
        stored,
        res.cost.buckets_inspected,
        res.cost.far_points_inspected,
        res.cost.inner_products,
        reference_buckets(spec),
    )


def run_recall(spec: ExperimentSpec, threads: int = 1) -> Report:
    rows = run_trials(lambda i: recall_trial(spec, i), spec.trials, threads)
    return Report(RECALL_COLUMNS, rows, _summary(RECALL_COLUMNS, rows))


# -- counting ---------------------------------------------------------------

COUNT_COLUMNS = (
    "trial",
    "seed",
    "raw",
    "private",
    "close",
    "mid",
    "beta_count",
    "far_inspected",
    "buckets",
    "A",
    "envelope",
    "lower",
    "upper",
    "sandwich",
    "envelope_ok",
)
RELEASED_COLUMNS = ("trial", "seed", "private", "buckets", "A", "envelope")


def count_trial(spec: ExperimentSpec, i: int) -> tuple:
    if not spec.private:
        raise DomainError("count experiment needs epsilon and delta")
    data_seed, index_seed = _trial_seeds(spec, "count", i)
    noise_seed = derive_seed(spec.seed, "count-noise", i)
    params = derive_privacy_params(spec.epsilon, spec.delta)
    inst = gen_planted(spec.n, spec.d, spec.alpha, spec.planted, data_seed)
    index = _build(spec, inst.dataset, index_seed)
    counts = to_count_table(index)
    ptable = privatize(counts, params, noise_seed)
    private, cost = query_private_count(ptable, index.structure, inst.query)
    raw, raw_cost = query_count(counts, index, inst.query, beta=spec.beta)
    truth = brute_force(inst.dataset, inst.query, spec.alpha, spec.beta)
    envelope = params.A * cost.buckets_inspected
    lower = SANDWICH_CLOSE_FRACTION * truth.close_count - envelope
    upper = truth.beta_count + envelope
    return (
        i,
        data_seed,
        raw,
        private,
        truth.close_count,
        truth.mid_count,
        truth.beta_count,
        raw_cost.far_points_inspected,
        cost.buckets_inspected,
        params.A,
        envelope,
        lower,
        upper,
        lower <= private <= upper,
        abs(private - raw) <= envelope,
    )


def run_count_experiment(spec: ExperimentSpec, threads: int = 1, released_only: bool = False) -> Report:
    """Per-trial raw and private counts against the oracle sandwich.

    With ``released_only`` every column derived from raw counts or the oracle
    is dropped, leaving only what the released table reveals.
    """
    rows = run_trials(lambda i: count_trial(spec, i), spec.trials, threads)
    if released_only:
        keep = [COUNT_COLUMNS.index(c) for c in RELEASED_COLUMNS]
        rows = [tuple(r[j] for j in keep) for r in rows]
        return Report(RELEASED_COLUMNS, rows, _summary(RELEASED_COLUMNS, rows))
    footer = _summary(COUNT_COLUMNS, rows)
    rate = float(np.mean([r[COUNT_COLUMNS.index("sandwich")] for r in rows]))
    verdict = ("sandwich_rate", "", rate, "pass" if rate >= SANDWICH_PROBABILITY else "fail")
    return Report(COUNT_COLUMNS, rows, footer + [verdict + ("",) * (len(COUNT_COLUMNS) - len(verdict))])


# -- store probability ------------------------------------------------------

STORE_COLUMNS = (
    "structure",
    "m",
    "t",
    "points",
    "dropped",
    "drop_rate",
    "se",
    "exact_drop",
    "union_bound",
    "tree_bound",
)


def tree_bound(n: int) -> float:
    """``K^-9`` with ``K = sqrt(ln n)``."""
    return math.log(n) ** -4.5


def _drop_count(spec: ExperimentSpec, m: int, t: int, i: int) -> int:
    seed = derive_seed(spec.seed, "store", m, i)
    pts = _unit_rows(stream(seed, "store-points"), spec.n, spec.d)
    lo, hi = band_limits(m)
    dropped = np.zeros(spec.n, dtype=bool)
    for j in range(t):
        idx, _ = assign_band_batch(build_bank(spec.d, m, bank_seed(seed, j)), pts, lo, hi)
        dropped |= idx < 0
    return int(dropped.sum())


def run_store_probability(spec: ExperimentSpec, threads: int = 1) -> Report:
    """Measured drop rates over ``spec.m_sweep`` against the exact and bound curves.

    Each sweep point uses ``spec.trials`` independent banks of ``m`` filters
    over ``spec.n`` fresh uniform points. The tensor structure stores a point
    only if all ``t`` sub-banks do. A Top-1 row is included as the zero
    baseline.
    """
    t = 1
    if spec.structure == TENSOR:
        t = spec.t or derive_tensor_params(spec.n, spec.alpha, spec.beta).t
    kind = "tensor" if spec.structure == TENSOR else "closetop1"
    rows = [(TOP1, spec.m_sweep[0], 1, spec.n * spec.trials, 0, 0.0, 0.0, 0.0, 0.0, tree_bound(spec.n))]
    for m in spec.m_sweep:
        drops = run_trials(lambda i, m=m: _drop_count(spec, m, t, i), spec.trials, threads)
        points = spec.n * spec.trials
        rate = sum(drops) / points
        one = drop_probability(m)
        exact = 1.0 - (1.0 - one) ** t
        rows.append(
            (kind, m, t, points, sum(drops), rate, math.sqrt(rate * (1.0 - rate) / points), exact, min(1.0, t * one),
             tree_bound(spec.n))
        )
    return Report(STORE_COLUMNS, rows, [])


# -- median trick -----------------------------------------------------------


def build_replicas(
    spec: ExperimentSpec, dataset: SphereDataset, plan: CompositionPlan
) -> list[tuple[object, PrivateCountTable]]:
    """``plan.k`` independent indexes, each released at the per-replica budget."""
    params = plan.replica_params()
    out = []
    for r in range(plan.k):
        index = _build(spec, dataset, derive_seed(spec.seed, "replica", r))
        out.append((index.structure, privatize(to_count_table(index), params, derive_seed(spec.seed, "replica-noise", r))))
    return out
