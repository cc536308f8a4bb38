"""Per-channel patch-size planning under a global DReLU budget.

Pipeline: candidate patch sizes per channel, distortion of each candidate
measured with a single-channel change, then a multiple-choice knapsack that
picks one candidate per channel minimising the summed distortion.
"""
from __future__ import annotations

import bisect
import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .nn import ChannelRef, ModelGraph, PatchPlan, apply_plan, brelu_float, forward, run_layers
from .protocols import IDENTITY, PatchSpec

BASE_SIZES = (1, 2, 3, 4, 5, 6, 8, 10, 12)
TABLE_VERSION = 1


def candidate_sizes(limit: int) -> list[int]:
    """Canonical side lengths up to ``limit``: small sizes, then 16*2^k and 24*2^k."""
    out = [s for s in BASE_SIZES if s <= limit]
    s = 16
    while s <= limit:
        out.append(s)
        if s * 3 // 2 <= limit:
            out.append(s * 3 // 2)
        s *= 2
    return sorted(set(out))


def candidate_patches(h: int, w: int) -> list[PatchSpec]:
    """All rectangles from the canonical side lengths that fit, then the identity item."""
    if h < 1 or w < 1:
        raise ValueError(f"channel dims must be positive, got {h}x{w}")
    return [PatchSpec(ph, pw) for ph in candidate_sizes(h) for pw in candidate_sizes(w)] + [IDENTITY]


# --------------------------------------------------------------------------
# distortion table


@dataclass
class DistortionTable:
    """Per channel: candidates, their DReLU weights and measured distortions."""

    channels: list  # ChannelRef
    candidates: list  # list[list[PatchSpec]]
    distortion: list  # list[np.ndarray]
    samples: int = 0

    def __post_init__(self):
        if not (len(self.channels) == len(self.candidates) == len(self.distortion)):
            raise ValueError("channels, candidates and distortions must have equal length")
        self.distortion = [np.asarray(d, dtype=np.float64) for d in self.distortion]
        self.weights = [np.array([s.weight(c.h, c.w) for s in cands], dtype=np.int64)
                        for c, cands in zip(self.channels, self.candidates)]

    @property
    def m(self) -> int:
        return len(self.channels)

    def full_weight(self) -> int:
        return int(sum(c.h * c.w for c in self.channels))

    def plan(self, selection) -> PatchPlan:
        return PatchPlan([self.candidates[i][j] for i, j in enumerate(selection)])

    def additive(self, selection) -> float:
        return float(sum(self.distortion[i][j] for i, j in enumerate(selection)))

    def weight_of(self, selection) -> int:
        return int(sum(self.weights[i][j] for i, j in enumerate(selection)))

    def index_of(self, i: int, spec: PatchSpec) -> int:
        return self.candidates[i].index(spec)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# distortion table v{TABLE_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["channel_id", "layer", "channel", "h", "w", "ph", "pw", "weight", "distortion", "samples"])
        for c, cands, ws, ds in zip(self.channels, self.candidates, self.weights, self.distortion):
            for s, wt, d in zip(cands, ws, ds):
                w.writerow([c.gid, c.layer, c.channel, c.h, c.w, s.ph, s.pw, int(wt), repr(float(d)), self.samples])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DistortionTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# distortion table v"):
            raise ValueError("missing distortion table header")
        if int(lines[0].rsplit("v", 1)[1]) != TABLE_VERSION:
            raise ValueError(f"unsupported table version in {lines[0]!r}")
        rows = list(csv.DictReader(lines[1:]))
        by_ch: dict[int, list] = {}
        for r in rows:
            by_ch.setdefault(int(r["channel_id"]), []).append(r)
        chans, cands, dists, samples = [], [], [], 0
        for gid in sorted(by_ch):
            rs = by_ch[gid]
            r0 = rs[0]
            chans.append(ChannelRef(gid, int(r0["layer"]), int(r0["channel"]), int(r0["h"]), int(r0["w"])))
            cands.append([PatchSpec.from_json([int(r["ph"]), int(r["pw"])]) for r in rs])
            dists.append([float(r["distortion"]) for r in rs])
            samples = int(r0["samples"])
        table = cls(chans, cands, dists, samples)
        for ws, rs in zip(table.weights, by_ch.values()):
            if [int(r["weight"]) for r in rs] != ws.tolist():
                raise ValueError("stored weights disagree with patch sizes")
        return table


class DistortionEstimator:
    """Measures single-channel distortions at the last activation layer.

    The unmodified forward pass is cached once; a candidate for a channel in
    layer ``l`` only recomputes layers ``l .. last activation``.
    """

    def __init__(self, model: ModelGraph, samples):
        if any(l.kind in ("relu6", "maxpool") for l in model.layers):
            raise ValueError("transform the model before planning")
        self.model = model
        self.samples = np.asarray(samples, dtype=np.float64)
        if self.samples.shape[0] == 0:
            raise ValueError("no samples")
        self.last = model.last_activation()
        self.base = forward(model, self.samples, "float", return_all=True)
        self.target = self.base[self.last]

    def layer_input(self, idx: int):
        return self.samples if idx == 0 else self.base[idx - 1]

    def modified_output(self, ref: ChannelRef, spec: PatchSpec) -> np.ndarray:
        """Last-activation output with channel ``ref`` using ``spec``."""
        pre = self.layer_input(ref.layer)
        out = self.base[ref.layer].copy()
        x4 = pre.reshape(pre.shape[0], pre.shape[1], 1, 1) if pre.ndim == 2 else pre
        o4 = out.reshape(x4.shape)
        o4[:, ref.channel] = brelu_float(x4[:, ref.channel:ref.channel + 1], [spec])[:, 0]
        hist = list(self.base[:ref.layer]) + [out]
        run_layers(self.model, out, ref.layer + 1, hist, "float", model_input=self.samples, stop=self.last + 1)
        return hist[self.last]

    def distortion(self, ref: ChannelRef, spec: PatchSpec) -> float:
        if spec.is_unit:
            return 0.0
        diff = self.modified_output(ref, spec) - self.target
        return float(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))

    def real_distortion(self, plan: PatchPlan) -> float:
        """Distortion with every replacement of ``plan`` applied at once."""
        out = forward(apply_plan(self.model, plan), self.samples, "float", return_all=True)[self.last]
        diff = out - self.target
        return float(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))


def estimate_distortion(model: ModelGraph, samples, ref: ChannelRef, spec: PatchSpec) -> float:
    return DistortionEstimator(model, samples).distortion(ref, spec)


def build_distortion_table(model: ModelGraph, samples, n_jobs: int = 1, candidates=None) -> DistortionTable:
    """Distortion of every candidate of every channel; deterministic for any ``n_jobs``."""
    est = DistortionEstimator(model, samples)
    chans = model.channels()
    cands = candidates or [candidate_patches(c.h, c.w) for c in chans]
    jobs = [(i, j) for i, cs in enumerate(cands) for j in range(len(cs))]

    def run(job):
        i, j = job
        return est.distortion(chans[i], cands[i][j])

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            vals = list(pool.map(run, jobs))
    else:
        vals = [run(jb) for jb in jobs]
    dists, k = [], 0
    for cs in cands:
        dists.append(vals[k:k + len(cs)])
        k += len(cs)
    return DistortionTable(chans, cands, dists, est.samples.shape[0])


# --------------------------------------------------------------------------
# multiple-choice knapsack


@dataclass
class KnapsackSolution:
    selection: list
    weight: int
    distortion: float
    budget: int
    bucket: int = 1
    meta: dict = field(default_factory=dict)


def solve_mckp_arrays(weights, values, budget: int, bucket: int = 1) -> tuple[list[int], float]:
    """Pick one item per group minimising total value with total weight <= budget.

    ``weights``/``values`` are lists of per-group arrays. With ``bucket > 1``
    weights are rounded up and the budget down to bucket units, so the answer
    stays feasible. Ties go to the smaller weight, then the smaller index.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if bucket < 1:
        raise ValueError("bucket must be >= 1")
    cols = budget // bucket + 1
    dp = np.zeros(cols)  # "at most b" semantics: empty prefix costs 0 at every budget
    choices = []
    for w, v in zip(weights, values):
        w = -(-np.asarray(w, dtype=np.int64) // bucket)
        v = np.asarray(v, dtype=np.float64)
        if len(w) == 0:
            raise ValueError("every group needs at least one item")
        order = np.lexsort((np.arange(len(w)), w))
        best = np.full(cols, np.inf)
        arg = np.full(cols, -1, dtype=np.int32)
        for j in order:
            wj = int(w[j])
            if wj >= cols:
                continue
            cand = np.full(cols, np.inf)
            cand[wj:] = dp[:cols - wj] + v[j]
            better = cand < best
            best[better] = cand[better]
            arg[better] = j
        if not np.isfinite(best[-1]):
            raise ValueError("no feasible selection for this budget (add identity items)")
        dp = best
        choices.append(arg)
    sel, b = [], cols - 1
    for g in range(len(choices) - 1, -1, -1):
        j = int(choices[g][b])
        sel.append(j)
        b -= int(-(-int(weights[g][j]) // bucket))
    sel.reverse()
    return sel, float(dp[-1])


def solve_mckp(table: DistortionTable, budget: int, bucket: int = 1) -> KnapsackSolution:
    sel, _ = solve_mckp_arrays(table.weights, table.distortion, budget, bucket)
    return KnapsackSolution(sel, table.weight_of(sel), table.additive(sel), budget, bucket)


def exhaustive_mckp(weights, values, budget: int) -> float:
    """Optimum by meet-in-the-middle enumeration (oracle for small instances)."""
    m = len(weights)
    half = m // 2

    def enum(groups):
        out = []
        for combo in itertools.product(*[range(len(weights[g])) for g in groups]):
            out.append((sum(int(weights[g][j]) for g, j in zip(groups, combo)),
                        sum(float(values[g][j]) for g, j in zip(groups, combo))))
        return out

    left = enum(range(half))
    right = sorted(enum(range(half, m)))
    rw = [w for w, _ in right]
    prefix_min = np.minimum.accumulate([v for _, v in right])
    best = np.inf
    for w, v in left:
        k = bisect.bisect_right(rw, budget - w)
        if k:
            best = min(best, v + prefix_min[k - 1])
    return float(best)


# --------------------------------------------------------------------------
# experiments and alternative plans


def random_selection(table: DistortionTable, rng: np.random.Generator) -> list[int]:
    """Each channel keeps 1x1 or, with a per-plan random probability, takes a random candidate."""
    p = rng.random()
    sel = []
    for i, cands in enumerate(table.candidates):
        unit = table.index_of(i, PatchSpec(1, 1))
        sel.append(int(rng.integers(len(cands))) if rng.random() < p else unit)
    return sel


def additive_vs_real(model: ModelGraph, samples, table: DistortionTable, trials: int = 200,
                     seed: int = 0) -> dict:
    """Random plans scored by summed single-channel distortion and by a joint forward pass."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    est = DistortionEstimator(model, samples)
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        sel = random_selection(table, rng)
        rows.append({"trial": t, "additive": table.additive(sel), "real": est.real_distortion(table.plan(sel)),
                     "weight": table.weight_of(sel)})
    a = np.array([r["additive"] for r in rows])
    r = np.array([r["real"] for r in rows])
    rho = float(spearmanr(a, r).statistic) if trials > 2 and np.ptp(a) > 0 and np.ptp(r) > 0 else float("nan")
    return {"rows": rows, "spearman": rho}


def scatter_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["trial", "additive", "real", "weight"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def alternative_plans(table: DistortionTable, budget: int, mode: str = "optimal", seed: int = 0,
                      constant: tuple = (4, 4), bucket: int = 1) -> PatchPlan:
    """``optimal`` (knapsack), ``shuffled`` (optimal sizes permuted within each layer) or ``constant``."""
    if mode == "optimal":
        sol = solve_mckp(table, budget, bucket)
        plan = table.plan(sol.selection)
        plan.budget = budget
        return plan
    if mode == "constant":
        ph, pw = constant
        return PatchPlan([PatchSpec(min(ph, c.h), min(pw, c.w)) for c in table.channels], budget,
                         {"mode": "constant"})
    if mode == "shuffled":
        base = alternative_plans(table, budget, "optimal", bucket=bucket)
        rng = np.random.default_rng(seed)
        specs = list(base.specs)
        layers: dict[int, list[int]] = {}
        for i, c in enumerate(table.channels):
            layers.setdefault(c.layer, []).append(i)
        for idx in layers.values():
            perm = rng.permutation(len(idx))
            picked = [base.specs[idx[p]] for p in perm]
            for i, s in zip(idx, picked):
                specs[i] = s
        return PatchPlan(specs, budget, {"mode": "shuffled", "seed": seed})
    raise ValueError(f"unknown plan mode {mode!r}")


def budget_curve(table: DistortionTable, fractions, bucket: int = 1) -> list[dict]:
    """Optimal additive distortion for a range of budget fractions."""
    full = table.full_weight()
    rows = []
    for frac in fractions:
        sol = solve_mckp(table, int(frac * full), bucket)
        rows.append({"budget_frac": frac, "budget": int(frac * full), "weight": sol.weight,
                     "additive_distortion": sol.distortion})
    return rows
