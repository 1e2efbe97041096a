"""Synthetic fixtures: a miniature raw course-log directory in the standard
layout, plus quick labeled datasets for unit tests."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from cfbench.dataset import FAIL, PASS, LabeledDataset


def make_blobs(n=120, p=6, seed=0, fail_frac=0.3, separation=2.0) -> LabeledDataset:
    """Two Gaussian blobs with partial overlap; fail is the minority class."""
    rng = np.random.default_rng(seed)
    n_fail = max(2, int(round(n * fail_frac)))
    n_pass = n - n_fail
    X_pass = rng.normal(loc=separation, scale=1.0, size=(n_pass, p))
    X_fail = rng.normal(loc=0.0, scale=1.0, size=(n_fail, p))
    X = np.vstack([X_pass, X_fail])
    y = np.array([PASS] * n_pass + [FAIL] * n_fail)
    order = rng.permutation(n)
    return LabeledDataset.from_arrays(X[order], y[order])


def make_week_frame(n=60, seed=0, fail_frac=0.3) -> LabeledDataset:
    """A click-count frame in the ingested layout (42 weekly columns)."""
    from cfbench.dataset import WEEK_COLUMNS

    rng = np.random.default_rng(seed)
    n_fail = max(4, int(round(n * fail_frac)))
    n_pass = n - n_fail
    weeks = np.arange(-4, 38)
    ramp = np.clip(1.0 - np.abs(weeks - 10) / 40.0, 0.2, 1.0)
    lam_pass = 14.0 * ramp
    lam_fail = 5.0 * ramp * (weeks < 12)
    X_pass = rng.poisson(lam_pass, size=(n_pass, 42)).astype(float)
    X_fail = rng.poisson(np.maximum(lam_fail, 0.2), size=(n_fail, 42)).astype(float)
    X = np.vstack([X_pass, X_fail])
    y = np.array([PASS] * n_pass + [FAIL] * n_fail)
    order = rng.permutation(n)
    return LabeledDataset.from_arrays(X[order], y[order], WEEK_COLUMNS)


def write_oulad_raw(dest, n_students=80, seed=0, course="DDD",
                    presentations=("2013J", "2014J")) -> Path:
    """Write a synthetic raw-log directory in the standard seven-file layout.

    Pass students click more and stay active longer than fail students, with
    enough overlap that a classifier is good but not perfect. Includes
    withdrawn students, an off-course student, a student with no clicks, and
    one orphan interaction row (a student missing from the info file).
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    info_rows = []
    vle_rows = []
    next_id = 1000

    def emit_clicks(pres, sid, outcome):
        # weekly activity: level and persistence depend on the outcome, with
        # heavy overlap and a share of atypical students so a classifier lands
        # around 0.8 accuracy instead of separating the classes perfectly
        if rng.random() < 0.05:
            outcome = "fail" if outcome == "pass" else "pass"
        if outcome == "pass":
            base = rng.uniform(5.0, 22.0)
            last_week = int(rng.integers(20, 38))
        else:
            base = rng.uniform(1.5, 13.0)
            last_week = int(rng.integers(4, 30))
        for week in range(-4, 38):
            if week > last_week:
                break
            level = base * (0.35 if week < 0 else 1.0)
            total = int(rng.poisson(level))
            if total <= 0:
                continue
            days = rng.integers(0, 7, size=int(rng.integers(1, 4)))
            share = np.bincount(days % 7, minlength=7)
            share = share / share.sum()
            for d, frac in enumerate(share):
                clicks = int(round(total * frac))
                if clicks > 0:
                    vle_rows.append(
                        (course, pres, sid, int(rng.integers(1, 6)), 7 * week + d, clicks)
                    )

    per_pres = n_students // len(presentations)
    for pres in presentations:
        for _ in range(per_pres):
            sid = str(next_id)
            next_id += 1
            u = rng.random()
            if u < 0.12:
                result = "Withdrawn"
            elif u < 0.40:
                result = "Fail"
            elif u < 0.52:
                result = "Distinction"
            else:
                result = "Pass"
            info_rows.append((course, pres, sid, result))
            if result == "Withdrawn":
                if rng.random() < 0.5:
                    emit_clicks(pres, sid, "fail")
                continue
            emit_clicks(pres, sid, "pass" if result in ("Pass", "Distinction") else "fail")

    # one enrolled student with zero interactions
    silent_id = str(next_id)
    next_id += 1
    info_rows.append((course, presentations[0], silent_id, "Fail"))
    # one orphan interaction row: a student with clicks but no final result
    orphan_id = str(next_id)
    next_id += 1
    vle_rows.append((course, presentations[0], orphan_id, 1, 10, 4))
    # one student of another course, to be filtered out
    info_rows.append(("AAA", presentations[0], str(next_id), "Pass"))
    vle_rows.append(("AAA", presentations[0], str(next_id), 2, 3, 9))

    with (dest / "studentInfo.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["code_module", "code_presentation", "id_student", "gender", "final_result"])
        for module, pres, sid, result in info_rows:
            w.writerow([module, pres, sid, "M", result])
    with (dest / "studentVle.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["code_module", "code_presentation", "id_student", "id_site", "date", "sum_click"])
        for row in vle_rows:
            w.writerow(row)
    with (dest / "vle.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id_site", "code_module", "code_presentation", "activity_type"])
        for site in range(1, 6):
            w.writerow([site, course, presentations[0], "resource"])
    with (dest / "courses.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["code_module", "code_presentation", "module_presentation_length"])
        for pres in presentations:
            w.writerow([course, pres, 268])
    return dest
