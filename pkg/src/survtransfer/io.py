"""File formats: subjects CSV (wide and long), prediction tables, model JSON.

All numbers serialize with shortest round-trip decimals, writes are atomic
(temp file + rename), and output bytes depend only on the data, so identical
inputs give identical files.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import CovariatePath, StepIntensity, Subject, TargetModel, TransformationSpec


def fmt(x) -> str:
    """Shortest round-trip decimal for floats; plain str otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [(i + 1, row) for i, row in enumerate(reader) if row and any(row)]
    if not rows:
        raise DataError(f"{path}: empty input file")
    return rows


def _parse_float(value, lineno, what):
    try:
        return float(value)
    except ValueError as exc:
        raise DataError(f"line {lineno}: bad {what} value {value!r}") from exc


def parse_subjects_csv(path):
    """Subjects from CSV.

    Wide format: header ``id,time,status,<covariates...>``, one row per
    subject.  Long format: header ``id,start,stop,status,<covariates...>``,
    one row per covariate segment; segments must tile [0, follow-up)
    contiguously, the last row's status is the event indicator and earlier
    rows must have status 0.

    Returns (subjects, ids) with ids in file order.
    """
    rows = _read_rows(path)
    lineno0, header = rows[0]
    header = [h.strip() for h in header]
    if header[:3] == ["id", "time", "status"]:
        return _parse_wide(rows[1:], header)
    if header[:4] == ["id", "start", "stop", "status"]:
        return _parse_long(rows[1:], header)
    raise DataError(f"line {lineno0}: header must start with id,time,status "
                    "or id,start,stop,status")


def _parse_wide(rows, header):
    names = tuple(header[3:])
    if not names:
        raise DataError("no covariate columns in header")
    if not rows:
        raise DataError("no subject rows after the header")
    subjects, ids = [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        time = _parse_float(row[1], lineno, "time")
        if time <= 0:
            raise DataError(f"line {lineno}: time must be positive")
        status = row[2].strip()
        if status not in ("0", "1"):
            raise DataError(f"line {lineno}: status must be 0 or 1")
        covs = [_parse_float(v, lineno, "covariate") for v in row[3:]]
        subjects.append(Subject(time=time, event=status == "1",
                                covariates=CovariatePath.fixed(covs, names)))
        ids.append(sid)
    return subjects, ids


def _parse_long(rows, header):
    names = tuple(header[4:])
    if not names:
        raise DataError("no covariate columns in header")
    if not rows:
        raise DataError("no subject rows after the header")
    per_id: dict[str, list] = {}
    order: list[str] = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        start = _parse_float(row[1], lineno, "start")
        stop = _parse_float(row[2], lineno, "stop")
        status = row[3].strip()
        if status not in ("0", "1"):
            raise DataError(f"line {lineno}: status must be 0 or 1")
        covs = [_parse_float(v, lineno, "covariate") for v in row[4:]]
        if sid not in per_id:
            per_id[sid] = []
            order.append(sid)
        per_id[sid].append((lineno, start, stop, status == "1", covs))
    subjects, ids = [], []
    for sid in order:
        segs = per_id[sid]
        lineno = segs[0][0]
        if segs[0][1] != 0.0:
            raise DataError(f"line {lineno}: first segment of {sid!r} must start at 0")
        for k in range(1, len(segs)):
            if segs[k][1] != segs[k - 1][2]:
                raise DataError(f"line {segs[k][0]}: segments of {sid!r} are not contiguous")
        for k in range(len(segs) - 1):
            if segs[k][3]:
                raise DataError(f"line {segs[k][0]}: only the last segment of {sid!r} "
                                "may carry status 1")
        stop = segs[-1][2]
        if stop <= 0:
            raise DataError(f"line {segs[-1][0]}: follow-up time must be positive")
        path = CovariatePath(breakpoints=[s[1] for s in segs],
                             values=[s[4] for s in segs], names=names)
        subjects.append(Subject(time=stop, event=segs[-1][3], covariates=path))
        ids.append(sid)
    return subjects, ids


def parse_query_csv(path):
    """Prediction queries: header ``id,time,<covariates...>``.

    Returns (ids, times, X, names).
    """
    rows = _read_rows(path)
    lineno0, header = rows[0]
    header = [h.strip() for h in header]
    if header[:2] != ["id", "time"]:
        raise DataError(f"line {lineno0}: query header must start with id,time")
    names = tuple(header[2:])
    if not names:
        raise DataError("no covariate columns in query header")
    ids, times, X = [], [], []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0].strip())
        t = _parse_float(row[1], lineno, "time")
        if t < 0:
            raise DataError(f"line {lineno}: time must be nonnegative")
        times.append(t)
        X.append([_parse_float(v, lineno, "covariate") for v in row[2:]])
    if not ids:
        raise DataError("no query rows after the header")
    return ids, np.array(times), np.array(X), names


def parse_predictions_csv(path):
    """Source prediction table: header ``id,time,surv`` plus optional ``var``."""
    rows = _read_rows(path)
    lineno0, header = rows[0]
    header = [h.strip() for h in header]
    if header[:3] != ["id", "time", "surv"] or len(header) > 4 or \
            (len(header) == 4 and header[3] != "var"):
        raise DataError(f"line {lineno0}: prediction header must be id,time,surv[,var]")
    table = {}
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        t = _parse_float(row[1], lineno, "time")
        s = _parse_float(row[2], lineno, "surv")
        if not 0.0 <= s <= 1.0:
            raise DataError(f"line {lineno}: surv must lie in [0, 1]")
        table[(row[0].strip(), t)] = s
    if not table:
        raise DataError("no prediction rows after the header")
    return table


def model_to_dict(model: TargetModel, names, n: int) -> dict:
    beta = {nm: float(b) for nm, b in zip(names, model.beta)}
    jumps = [{"t": float(t), "jump": float(j)}
             for t, j in zip(model.intensity.times, model.intensity.jumps)]
    return {"r": float(model.transform.r), "beta": beta, "lambda": jumps, "n": int(n)}


def write_model_json(path, model: TargetModel, names, n: int):
    atomic_write_text(path, json.dumps(model_to_dict(model, names, n), indent=2) + "\n")


def read_model_json(path):
    """Model export -> (TargetModel, covariate names, source sample size)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    try:
        names = tuple(data["beta"].keys())
        beta = np.array([float(data["beta"][nm]) for nm in names])
        times = np.array([float(e["t"]) for e in data["lambda"]])
        jumps = np.array([float(e["jump"]) for e in data["lambda"]])
        r = float(data["r"])
        n = int(data["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model export: {exc}") from exc
    model = TargetModel(beta=beta, intensity=StepIntensity(times, jumps),
                        transform=TransformationSpec(r))
    return model, names, n


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")
