"""Per-round metrics files (CSV or JSONL) and JSON checkpoints."""

import csv
import io
import json

import numpy as np

FIELDS = ("round", "stage", "epoch_equiv", "comms", "time_ms", "primal", "dual", "gap", "gap_normalized", "kappa", "note")
HEADER = ",".join(FIELDS)
CHECKPOINT_VERSION = 1


class SchemaError(ValueError):
    pass


def rows_from_trace(trace, n, original=False):
    """Metrics rows from a list of round records.

    With ``original`` the objective columns report the unshifted problem,
    which is what accelerated runs are judged on.
    """
    out = []
    for rec in trace:
        if original:
            P, D, gap = rec.orig_primal, rec.orig_dual, rec.orig_gap
        else:
            P, D, gap = rec.primal, rec.dual, rec.gap
        out.append({
            "round": rec.round,
            "stage": rec.stage,
            "epoch_equiv": rec.epoch_equiv,
            "comms": rec.comms,
            "time_ms": rec.time_ms,
            "primal": P,
            "dual": D,
            "gap": gap,
            "gap_normalized": gap / n,
            "kappa": rec.kappa,
            "note": rec.note,
        })
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(rows):
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[k]) for k in FIELDS) + "\n")
    return buf.getvalue()


def format_jsonl(rows):
    return "".join(json.dumps({k: row[k] for k in FIELDS}) + "\n" for row in rows)


def write_metrics(rows, path, fmt="csv"):
    text = format_csv(rows) if fmt == "csv" else format_jsonl(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


_INT = {"round", "stage", "comms"}
_STR = {"note"}


def _coerce(row):
    return {k: (int(v) if k in _INT else v if k in _STR else float(v)) for k, v in row.items()}


def read_metrics(path):
    """Rows of a CSV or JSONL metrics file; raises :class:`SchemaError` on a foreign layout."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.startswith("{"):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        for row in rows:
            if tuple(row) != FIELDS:
                raise SchemaError(f"{path}: unexpected keys {sorted(row)}")
        return [_coerce(r) for r in rows]
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise SchemaError(f"{path}: header is not {HEADER!r}")
    reader = csv.DictReader(io.StringIO(text))
    return [_coerce(r) for r in reader]


def _floats(a):
    return [float(x) for x in np.asarray(a, dtype=np.float64)]


def save_checkpoint(path, *, n, d, m, lam, mu, kappa, loss, seed, round_, alpha, u, w, y=None):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "n": n, "d": d, "m": m, "lambda": lam, "mu": mu, "kappa": kappa,
        "loss": loss, "seed": seed, "round": round_,
        "alpha": _floats(alpha), "u": _floats(u), "w": _floats(w),
        "y": _floats(np.zeros(d) if y is None else y),
    }
    # json writes floats with repr, the shortest string that round-trips
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    for key in ("alpha", "u", "w", "y"):
        doc[key] = np.array(doc[key], dtype=np.float64)
    if doc["alpha"].size != doc["n"] or doc["u"].size != doc["d"]:
        raise SchemaError(f"{path}: array lengths disagree with n/d")
    return doc
