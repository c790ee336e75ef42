"""Report records and their serialized forms.

One experiment run (a single trial or one aggregated Monte Carlo cell)
becomes one :class:`RunRecord`. Records travel in two formats:

* JSON lines, the lossless form: one object per line, every field present
  with its native type.
* CSV, the tabular convenience: a versioned comment line, a header row,
  then one row per record. Floats are written with ``repr`` so parsing
  returns the identical value.

``parse_csv`` and ``parse_jsonl`` invert the writers exactly; tests hold
the round-trip property for arbitrary records.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

SCHEMA_VERSION = 1

_COMMENT = f"# snowsim report schema v{SCHEMA_VERSION}"

_COLUMNS = (
    "config_hash",
    "n",
    "c",
    "b",
    "k",
    "a",
    "beta",
    "adversary",
    "rounds",
    "per_node_iters",
    "violations",
    "messages",
)

_CONVERT: dict[str, type] = {
    "config_hash": str,
    "n": int,
    "c": int,
    "b": int,
    "k": int,
    "a": int,
    "beta": int,
    "adversary": str,
    "rounds": float,
    "per_node_iters": float,
    "violations": int,
    "messages": int,
}


class ReportError(ValueError):
    """Raised when serialized report data does not match the schema."""


@dataclass(frozen=True, slots=True)
class RunRecord:
    """One row of experiment output.

    ``rounds`` and ``per_node_iters`` are means when the record aggregates
    several trials; ``violations`` counts trials in which two correct
    nodes decided differently; ``messages`` sums protocol messages.
    """

    config_hash: str
    n: int
    c: int
    b: int
    k: int
    a: int
    beta: int
    adversary: str
    rounds: float
    per_node_iters: float
    violations: int
    messages: int

    def __post_init__(self) -> None:
        if self.c + self.b != self.n:
            raise ReportError(f"c + b must equal n, got {self.c}+{self.b} != {self.n}")
        if self.violations < 0 or self.messages < 0:
            raise ReportError("counts must be nonnegative")


def config_digest(values: Mapping[str, object]) -> str:
    """Short stable hash of a configuration mapping.

    Keys are sorted and the mapping is rendered as canonical JSON before
    hashing, so insertion order never changes the digest.
    """
    blob = json.dumps(
        {k: values[k] for k in sorted(values)}, separators=(",", ":"), sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# CSV


def format_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    buf.write(_COMMENT + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_COLUMNS)
    for rec in records:
        row = []
        for name in _COLUMNS:
            value = getattr(rec, name)
            row.append(repr(value) if isinstance(value, float) else value)
        writer.writerow(row)
    return buf.getvalue()


def parse_csv(text: str) -> list[RunRecord]:
    """Parse report CSV back into records.

    Comment lines (leading ``#``) may appear anywhere before the header;
    the first of them must carry a schema version we understand.
    """
    lines = text.splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    if not comments or comments[0] != _COMMENT:
        raise ReportError(
            f"missing or unsupported schema comment, expected {_COMMENT!r}"
        )
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    rows = list(csv.reader(body))
    if not rows or tuple(rows[0]) != _COLUMNS:
        raise ReportError(f"bad header row, expected {','.join(_COLUMNS)}")
    out = []
    for idx, row in enumerate(rows[1:], start=2):
        if len(row) != len(_COLUMNS):
            raise ReportError(f"row {idx}: expected {len(_COLUMNS)} fields, got {len(row)}")
        values: dict[str, object] = {}
        for name, cell in zip(_COLUMNS, row):
            try:
                values[name] = _CONVERT[name](cell)
            except ValueError as exc:
                raise ReportError(f"row {idx}, column {name}: {exc}") from exc
        out.append(RunRecord(**values))  # type: ignore[arg-type]
    return out


# ---------------------------------------------------------------------------
# JSON lines


def format_jsonl(records: Iterable[RunRecord]) -> str:
    return "".join(
        json.dumps(asdict(rec), separators=(",", ":"), sort_keys=True) + "\n"
        for rec in records
    )


def parse_jsonl(text: str) -> list[RunRecord]:
    out = []
    for idx, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReportError(f"line {idx}: {exc}") from exc
        unknown = set(obj) - set(_COLUMNS)
        if unknown:
            raise ReportError(f"line {idx}: unknown fields {sorted(unknown)}")
        missing = set(_COLUMNS) - set(obj)
        if missing:
            raise ReportError(f"line {idx}: missing fields {sorted(missing)}")
        try:
            out.append(RunRecord(**obj))
        except TypeError as exc:
            raise ReportError(f"line {idx}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Summaries


def summarize(records: Sequence[RunRecord]) -> dict[str, float]:
    """Aggregate statistics recomputable from the per-trial records."""
    if not records:
        raise ReportError("no records to summarize")
    iters = [rec.per_node_iters for rec in records]
    mean = sum(iters) / len(iters)
    if len(iters) > 1:
        var = sum((x - mean) ** 2 for x in iters) / (len(iters) - 1)
        stddev = math.sqrt(var)
    else:
        stddev = 0.0
    return {
        "records": float(len(records)),
        "mean_rounds": sum(rec.rounds for rec in records) / len(records),
        "mean_per_node_iters": mean,
        "stddev_per_node_iters": stddev,
        "violations": float(sum(rec.violations for rec in records)),
        "messages": float(sum(rec.messages for rec in records)),
    }
