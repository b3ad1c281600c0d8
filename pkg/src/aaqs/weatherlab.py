"""Daily weather classification experiment on DWD climate records.

Records are read from the DWD daily climate ("KL") product, labeled into four
weather classes, split chronologically and used as outcomes of a four-outcome
log-loss game played by the aggregating algorithm for quasi-sums.
"""

from __future__ import annotations

import csv
import math
import zipfile
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import Generator, WeightingProfile, get_generator
from .bounds import BoundReport, nonmixable_bound
from .engine import run_game
from .game import DecisionSpace, GameTrace, OutcomeSpace, PredictionGame, _fmt, get_loss
from .substitution import estimate_c

MISSING = -999.0
FIELDS = {
    "pressure": "PM",
    "temp_mean": "TMK",
    "humidity": "UPM",
    "temp_max": "TXK",
    "temp_min": "TNK",
    "precipitation": "RSK",
    "sunshine": "SDK",
}
DEFAULT_START = date(2000, 1, 1)
DEFAULT_CONFIGS: tuple[tuple[str, float], ...] = (
    ("sum", 1.0), ("focal", 1.0), ("sqrt", 2.0), ("pow10", 0.001), ("square", 0.5),
)
HIST_BINS = 50
HIST_MAX = 3.4


class IngestionError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class DailyRecord:
    date: date
    pressure: float
    temp_mean: float
    temp_max: float
    temp_min: float
    humidity: float
    precipitation: float
    sunshine: float


class WeatherClass(Enum):
    SUNNY = "sunny"
    UNSETTLED = "unsettled"
    CLOUDY = "cloudy"
    RAINY_SNOWY = "rainy_snowy"

    @property
    def index(self) -> int:
        return CLASS_ORDER.index(self)


CLASS_ORDER = (WeatherClass.SUNNY, WeatherClass.UNSETTLED, WeatherClass.CLOUDY, WeatherClass.RAINY_SNOWY)
WEATHER_OUTCOMES = OutcomeSpace(tuple(c.value for c in CLASS_ORDER))


# -- ingestion ----------------------------------------------------------------

def _read_text(path: Path) -> str:
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            members = sorted(n for n in zf.namelist()
                             if Path(n).name.startswith("produkt") and n.endswith(".txt"))
            if not members:
                raise IngestionError(f"{path}: no produkt*.txt member in archive")
            return zf.read(members[0]).decode("latin-1")
    return path.read_text(encoding="latin-1")


def _parse_date(text: str, line: int) -> date:
    s = text.strip()
    if len(s) != 8 or not s.isdigit():
        raise IngestionError(f"bad MESS_DATUM {text!r}", line)
    try:
        return date(int(s[:4]), int(s[4:6]), int(s[6:]))
    except ValueError:
        raise IngestionError(f"bad MESS_DATUM {text!r}", line) from None


def ingest_dwd(path, start: date | None = DEFAULT_START, end: date | None = None
               ) -> tuple[list[DailyRecord], int]:
    """Cleaned, date-sorted records and the number of days dropped for missing values.

    Only days in ``[start, end]`` are considered; pass ``start=None`` for the
    whole file.  Days outside the window count neither as records nor drops.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    text = _read_text(path)
    lines = text.splitlines()
    if not any(ln.strip() for ln in lines):
        return [], 0
    header = [h.strip() for h in lines[0].split(";")]
    needed = ["MESS_DATUM", *FIELDS.values()]
    missing = [h for h in needed if h not in header]
    if missing:
        raise IngestionError(f"header lacks columns {missing}", 1)
    col = {h: k for k, h in enumerate(header)}

    records: list[DailyRecord] = []
    drops = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = [p.strip() for p in raw.split(";")]
        if len(parts) < len(header) - (1 if header[-1] == "eor" else 0):
            raise IngestionError(f"expected {len(header)} fields, got {len(parts)}", lineno)
        day = _parse_date(parts[col["MESS_DATUM"]], lineno)
        if (start is not None and day < start) or (end is not None and day > end):
            continue
        values = {}
        for name, key in FIELDS.items():
            cell = parts[col[key]]
            try:
                values[name] = float(cell) if cell else MISSING
            except ValueError:
                raise IngestionError(f"unparseable {key} value {cell!r}", lineno) from None
        if any(v == MISSING for v in values.values()):
            drops += 1
            continue
        records.append(DailyRecord(day, **values))
    records.sort(key=lambda r: r.date)
    for a, b in zip(records, records[1:]):
        if a.date == b.date:
            raise IngestionError(f"duplicate date {a.date.isoformat()}")
    return records, drops


# -- labels and split -----------------------------------------------------------

def label_values(precipitation: float, sunshine: float) -> WeatherClass:
    if sunshine > 4:
        return WeatherClass.SUNNY if precipitation <= 2 else WeatherClass.UNSETTLED
    return WeatherClass.CLOUDY if precipitation <= 2 else WeatherClass.RAINY_SNOWY


def label(record: DailyRecord) -> WeatherClass:
    return label_values(record.precipitation, record.sunshine)


def chrono_split(records: Sequence, train_fraction: float = 0.8) -> tuple[list, list]:
    k = math.floor(train_fraction * len(records))
    return list(records[:k]), list(records[k:])


# -- experts ------------------------------------------------------------------

@dataclass
class ExpertPredictions:
    """Probability vectors of shape ``(T, n, 4)`` over the weather classes."""

    names: list[str]
    probs: np.ndarray

    @property
    def T(self) -> int:
        return self.probs.shape[0]


def builtin_experts(train: Sequence[DailyRecord], n_rounds: int) -> ExpertPredictions:
    """A uniform expert and, given training data, a Laplace-smoothed frequency expert."""
    m = len(CLASS_ORDER)
    vecs = [np.full(m, 1.0 / m)]
    names = ["uniform"]
    if train:
        counts = np.ones(m)
        for r in train:
            counts[label(r).index] += 1
        vecs.append(counts / counts.sum())
        names.append("frequency")
    probs = np.broadcast_to(np.stack(vecs), (n_rounds, len(vecs), m)).copy()
    return ExpertPredictions(names, probs)


EXPERT_COLUMNS = ["t", "expert", "p_sunny", "p_unsettled", "p_cloudy", "p_rainy"]


def load_expert_file(path, expected_rounds: int | None = None) -> ExpertPredictions:
    """Read ``t,expert,p_sunny,p_unsettled,p_cloudy,p_rainy`` rows.

    Rounds are taken in ascending order of ``t``; every expert must appear
    exactly once per round.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != EXPERT_COLUMNS:
            raise IngestionError(f"expert file header must be {','.join(EXPERT_COLUMNS)}", 1)
        table: dict[int, dict[str, np.ndarray]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = int(row[0])
                vec = np.array([float(x) for x in row[2:6]])
            except (ValueError, IndexError):
                raise IngestionError("malformed row", lineno) from None
            if len(row) != 6 or (vec < 0).any() or abs(vec.sum() - 1.0) > 1e-6:
                raise IngestionError("expected a probability vector over four classes", lineno)
            name = row[1].strip()
            if name in table.setdefault(t, {}):
                raise IngestionError(f"duplicate prediction for expert {name!r} at t={t}", lineno)
            table[t][name] = vec
    rounds = sorted(table)
    if not rounds:
        raise IngestionError("expert file has no predictions")
    names = sorted(table[rounds[0]])
    for t in rounds:
        if sorted(table[t]) != names:
            raise IngestionError(f"round t={t} does not list every expert")
    if expected_rounds is not None and len(rounds) != expected_rounds:
        raise IngestionError(f"expert file has {len(rounds)} rounds but the test split has {expected_rounds}")
    probs = np.array([[table[t][nm] for nm in names] for t in rounds])
    return ExpertPredictions(names, probs)


# -- histogram ----------------------------------------------------------------

@dataclass
class LossHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    inf_count: int
    mean_finite_loss: float

    @classmethod
    def from_losses(cls, losses, bins: int = HIST_BINS, upper: float = HIST_MAX) -> "LossHistogram":
        x = np.asarray(losses, dtype=float)
        finite = x[np.isfinite(x)]
        # rounded so that decimal edges such as 1.7 are exact; a loss on an edge opens its bin
        edges = np.round(np.arange(bins + 1) * upper / bins, 12)
        idx = np.clip(np.searchsorted(edges, finite, side="right") - 1, 0, bins - 1)
        counts = np.bincount(idx, minlength=bins)
        mean = math.fsum(finite.tolist()) / finite.size if finite.size else math.nan
        return cls(edges, counts, int(np.isinf(x).sum()), mean)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.inf_count

    def tail_fraction(self, threshold: float) -> float:
        """Share of predictions with loss at or above ``threshold`` (the inf-bar included)."""
        first = int(np.searchsorted(self.bin_edges, threshold, side="left"))
        return (int(self.counts[first:].sum()) + self.inf_count) / max(self.total, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([_fmt(lo), _fmt(hi), int(c)])
            w.writerow(["inf", self.inf_count])
            w.writerow(["mean", _fmt(self.mean_finite_loss)])


# -- experiment ---------------------------------------------------------------

@dataclass
class ExperimentResult:
    generator: str
    eta: float
    trace: GameTrace
    histogram: LossHistogram
    bound: BoundReport
    c_hat: float
    expert_names: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "generator": self.generator,
            "eta": self.eta,
            "rounds": self.trace.T,
            "c_hat": self.c_hat,
            "mean_finite_loss": self.histogram.mean_finite_loss,
            "inf_count": self.histogram.inf_count,
            "bound_satisfied": self.bound.satisfied,
            "bound_min_slack": self.bound.min_slack,
            "experts": self.expert_names,
        }


def weather_game(gen: Generator | str, eta: float, n_experts: int, loss: str = "log",
                 resolution: int = 20) -> PredictionGame:
    space = DecisionSpace.simplex_grid(len(CLASS_ORDER), resolution)
    return PredictionGame(WEATHER_OUTCOMES, space, get_loss(loss),
                          _profile(gen, eta), n_experts)


def _profile(gen, eta):
    g = get_generator(gen) if isinstance(gen, str) else gen
    return WeightingProfile(g, eta)


def outcome_indices(records: Sequence[DailyRecord]) -> np.ndarray:
    return np.array([label(r).index for r in records], dtype=int)


def run_experiment(records: Sequence[DailyRecord], gen: Generator | str, eta: float,
                   loss: str = "log", experts: ExpertPredictions | None = None,
                   resolution: int = 20, c_hat: float | None = None,
                   train_fraction: float = 0.8) -> ExperimentResult:
    """Play AA-QS over the test split and evaluate the non-mixable bound.

    Without ``experts`` the built-in experts trained on the training split are used.
    """
    train, test = chrono_split(records, train_fraction)
    if experts is None:
        experts = builtin_experts(train, len(test))
    if experts.T != len(test):
        raise IngestionError(f"expert predictions cover {experts.T} rounds but the test split has {len(test)}")
    spec = weather_game(gen, eta, len(experts.names), loss, resolution)
    if c_hat is None:
        c_hat = estimate_c(spec).c_hat
    trace = run_game(spec, experts.probs, outcome_indices(test))
    hist = LossHistogram.from_losses(trace.learner_losses)
    bound = nonmixable_bound(trace, spec.generator, eta, c_hat)
    return ExperimentResult(spec.generator.name, eta, trace, hist, bound, c_hat, list(experts.names))


def tail_comparison(results: Sequence[ExperimentResult], threshold: float = 1.7) -> dict:
    """High-loss tail shares per aggregation, with convex and concave generators grouped.

    Reported only; the expected ordering (convex generators thin the tail
    relative to concave ones) is not enforced.
    """
    shares = {r.generator: r.histogram.tail_fraction(threshold) for r in results}
    convex = [shares[g] for g in ("square", "pow10", "focal") if g in shares]
    concave = [shares[g] for g in ("sqrt",) if g in shares]
    out = {"threshold": threshold, "tail_share": shares}
    if convex and concave:
        out["convex_mean"] = float(np.mean(convex))
        out["concave_mean"] = float(np.mean(concave))
        out["convex_thinner"] = out["convex_mean"] <= out["concave_mean"]
    return out
