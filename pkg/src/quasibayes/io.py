"""File formats: dataset CSV, posterior draws, JSON records. All writes are atomic."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .moments import Dataset
from .sampler import PosteriorSample


def fmt(value) -> str:
    """Shortest round-trip decimal for floats; empty string for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return ""
    return repr(v)


@contextlib.contextmanager
def atomic_open(path, mode: str = "w"):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_open(path) as fh:
        fh.write(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def dataset_header(dx: int, d: int) -> list[str]:
    return ["y"] + [f"x{i + 1}" for i in range(dx)] + [f"w{i + 1}" for i in range(d)]


def write_dataset_csv(data: Dataset, path) -> None:
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_header(data.dx, data.d))
        for i in range(data.n):
            writer.writerow([fmt(data.y[i]), *map(fmt, data.x[i]), *map(fmt, data.w[i])])


def read_dataset_csv(path, probit: bool = False) -> Dataset:
    """Read ``y,x1..,w1..``; ``probit`` maps raw instrument columns through the normal CDF."""
    from .moments import probit_transform

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [[float(v) for v in row] for row in reader if row]
    if not header or header[0] != "y":
        raise ValueError(f"{path}: header must start with 'y'")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    wcols = [i for i, h in enumerate(header) if h.startswith("w")]
    expected = dataset_header(len(xcols), len(wcols))
    if header != expected:
        raise ValueError(f"{path}: header must be {','.join(expected)}")
    if not xcols or not wcols:
        raise ValueError(f"{path}: need at least one x and one w column")
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{path}: no data rows")
    w = arr[:, wcols]
    if probit:
        w = probit_transform(w)
    return Dataset(y=arr[:, 0], x=arr[:, xcols], w=w)


def draws_to_csv_text(sample: PosteriorSample) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "q"] + [f"b_{j + 1}" for j in range(sample.q_max)])
    for i in range(sample.n_draws):
        q = int(sample.qs[i])
        writer.writerow(
            [int(sample.steps[i]), q]
            + [fmt(v) for v in sample.coeffs[i, :q]]
            + [""] * (sample.q_max - q)
        )
    return buf.getvalue()


def write_draws_csv(sample: PosteriorSample, path) -> None:
    atomic_write_text(path, draws_to_csv_text(sample))


def write_draws_jsonl(sample: PosteriorSample, path) -> None:
    with atomic_open(path) as fh:
        for i in range(sample.n_draws):
            q = int(sample.qs[i])
            rec = {
                "step": int(sample.steps[i]),
                "q": q,
                "b": [float(v) for v in sample.coeffs[i, :q]],
                "log_post": float(sample.log_posts[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def read_draws_csv(path) -> PosteriorSample:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        q_max = len(header) - 2
        steps, qs, coeffs = [], [], []
        for row in reader:
            steps.append(int(row[0]))
            q = int(row[1])
            qs.append(q)
            vals = np.full(q_max, np.nan)
            vals[:q] = [float(v) for v in row[2 : 2 + q]]
            coeffs.append(vals)
    return PosteriorSample(
        steps=np.asarray(steps, dtype=np.int64),
        qs=np.asarray(qs, dtype=np.int64),
        coeffs=np.asarray(coeffs).reshape(len(qs), q_max),
        log_posts=np.full(len(qs), np.nan),
    )
