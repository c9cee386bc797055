"""Batches of result-table rows and their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .steps import PipelineState, VariantOutcome, train_variant
from .variants import parse_variant

CSV_HEADER = ("name", "params", "error_rate", "data_fraction", "seed")

TABLE1_ROWS = (
    "Pretrain", "Pretrain-Adpt", "Source-Adpt-avg", "Target-Adpt",
    "Fusion-W", "Fusion-W_UV", "Fusion-W_Sigma",
    "Fusion-P_C", "Fusion-W_C",
)
C_SWEEP = (1, 2, 8, 64, 128)


@dataclass
class ResultRow:
    name: str
    params: Optional[int]
    error_rate: float
    data_fraction: float
    seed: int
    valid_error: float = float("nan")
    valid_loss: float = float("nan")

    def csv_fields(self) -> Tuple[str, ...]:
        params = "" if self.params is None else str(self.params)
        return (self.name, params, repr(float(self.error_rate)), repr(float(self.data_fraction)), str(self.seed))


class ResultTable:
    def __init__(self, rows: Iterable[ResultRow] = ()):
        self.rows: List[ResultRow] = list(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def append(self, row: ResultRow) -> None:
        self.rows.append(row)

    def sorted(self) -> "ResultTable":
        return ResultTable(sorted(self.rows, key=lambda r: (r.name, r.data_fraction, r.seed)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "ResultTable":
        reader = csv.DictReader(io.StringIO(text))
        rows = []
        for rec in reader:
            rows.append(ResultRow(rec["name"], int(rec["params"]) if rec["params"] else None,
                                  float(rec["error_rate"]), float(rec["data_fraction"]), int(rec["seed"])))
        return ResultTable(rows)

    def lookup(self, name: str, data_fraction: Optional[float] = None) -> List[ResultRow]:
        return [r for r in self.rows if r.name == name and (data_fraction is None or r.data_fraction == data_fraction)]


def row_from_outcome(out: VariantOutcome, seed: int) -> ResultRow:
    return ResultRow(out.name, out.params, out.test_error, out.data_fraction, seed, out.valid_error, out.valid_loss)


Experiment = Union[str, Tuple[str, float], Tuple[str, float, Optional[int]]]


def run_matrix(state: PipelineState, experiments: Sequence[Experiment]) -> ResultTable:
    """Run each named row (``name`` or ``(name, data_fraction[, c_couples])``)."""
    table = ResultTable()
    for exp in experiments:
        if isinstance(exp, str):
            name, fraction, c = exp, None, None
        else:
            name, fraction, c = (tuple(exp) + (None, None))[:3]
        parse_variant(name, c if c is not None else state.config.fusion.c_couples)
        out = train_variant(state, name, fraction, c)
        table.append(row_from_outcome(out, state.seed))
    return table


def c_sweep(base: str = "Fusion-W", couples: Sequence[int] = C_SWEEP, fractions=(0.05, 0.6)) -> List[Experiment]:
    """Rows of the couple-count sweep: the dense baseline plus ``<base>_<C>`` per C."""
    rows: List[Experiment] = []
    for frac in fractions:
        rows.append((base, frac))
        rows.extend((f"{base}_{c}", frac) for c in couples)
    return rows
