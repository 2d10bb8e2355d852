"""Parameter sweeps, branch ablation and the teacher/student trend trial.

These are the only functions that look at reference maps.  Independent
trainings can fan out over worker processes with ``jobs > 1``; results do
not depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple

from .classical_di import cva
from .metrics import f1_score
from .network import BRANCH_MODES
from .selftrain import TrainConfig, pseudo_label_2, run_usta, stage_rngs, train_teacher
from .threshold import otsu

SWEEP_PARAMS = ("beta", "w", "alpha")


class Row(NamedTuple):
    setting: object
    seed: int
    f1: float


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _run_f1(x1, x2, ref, cfg):
    return f1_score(run_usta(x1, x2, cfg).change_map, ref)


def _beta_seed(x1, x2, ref, cfg, values):
    # the teacher ignores beta, so one teacher serves every student of this seed
    teacher = train_teacher(x1, x2, cfg, stage_rngs(cfg.seed)[0])
    return [f1_score(run_usta(x1, x2, cfg.replace(beta=v), teacher=teacher).change_map, ref) for v in values]


def sweep(x1, x2, ref, cfg: TrainConfig, param: str, values, seeds, jobs: int = 1):
    """F1 of the final map for every (value, seed) pair, value-major."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"param must be one of {SWEEP_PARAMS}, got {param!r}")
    values, seeds = list(values), list(seeds)
    if param == "beta":
        for v in values:
            cfg.replace(beta=v)                                  # validate before training anything
        per_seed = _map(_beta_seed, [(x1, x2, ref, cfg.replace(seed=s), values) for s in seeds], jobs)
        return [Row(v, s, per_seed[j][i]) for i, v in enumerate(values) for j, s in enumerate(seeds)]
    cfgs = [(v, s, cfg.replace(**{param: v, "seed": s})) for v in values for s in seeds]
    scores = _map(_run_f1, [(x1, x2, ref, c) for _, _, c in cfgs], jobs)
    return [Row(v, s, f) for (v, s, _), f in zip(cfgs, scores)]


def ablate_branch(x1, x2, ref, cfg: TrainConfig, modes=BRANCH_MODES, seeds=(0,), jobs: int = 1):
    """F1 of the final map for every (branch mode, seed) pair."""
    cfgs = [(m, s, cfg.replace(branch_mode=m, seed=s)) for m in modes for s in seeds]
    scores = _map(_run_f1, [(x1, x2, ref, c) for _, _, c in cfgs], jobs)
    return [Row(m, s, f) for (m, s, _), f in zip(cfgs, scores)]


def format_rows(rows, name="setting"):
    return "".join([f"{name},seed,f1\n"] + [f"{r.setting},{r.seed},{r.f1:.6f}\n" for r in rows])


def trend_trial(x1, x2, ref, cfg: TrainConfig, betas=(0.0, 1.0)):
    """F1 of CVA+Otsu, the teacher, the student, extra-beta students and a filter-off teacher.

    Keys: ``cva``, ``teacher``, ``student``, ``beta=<v>`` and ``teacher_nofilter``.
    """
    result = run_usta(x1, x2, cfg)
    scores = {
        "cva": f1_score(otsu(cva(x1, x2))[0], ref),
        "teacher": f1_score(result.cm2, ref),
        "student": f1_score(result.change_map, ref),
    }
    for b in betas:
        other = run_usta(x1, x2, cfg.replace(beta=b), teacher=result.teacher)
        scores[f"beta={b:g}"] = f1_score(other.change_map, ref)
    plain = cfg.replace(use_filter=False)
    teacher = train_teacher(x1, x2, plain, stage_rngs(cfg.seed)[0])
    scores["teacher_nofilter"] = f1_score(pseudo_label_2(teacher, x1, x2, plain)[0], ref)
    return scores
