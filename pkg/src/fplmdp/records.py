"""Per-step run traces and their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation

RUN_COLUMNS = ("t", "state", "action", "loss", "leader", "transit", "switch")
SUMMARY_COLUMNS = ("algo", "T", "seed", "total_loss", "lstar", "regret", "switches")


def fmt(x: float) -> str:
    """Shortest round-tripping decimal; keeps CSV output byte-stable."""
    return repr(float(x))


@dataclass
class RunRecord:
    """Trace of one interaction.

    ``transit`` marks steps spent re-synchronising (deterministic learner) or
    catching (stochastic learners); ``switch[t]`` is set when the expert
    algorithm changed its leader after seeing ``l_t``.
    """

    algo: str
    seed: int | None
    states: np.ndarray
    actions: np.ndarray
    losses: np.ndarray
    leaders: list
    transit: np.ndarray
    switch: np.ndarray
    lstar: float = float("nan")
    wall_time: float = 0.0
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def total_loss(self) -> float:
        return float(self.losses.sum())

    @property
    def switches(self) -> int:
        return int(self.switch.sum())

    @property
    def regret(self) -> float:
        return self.total_loss - self.lstar

    def check(self) -> None:
        n = self.horizon
        for name in ("actions", "losses", "transit", "switch"):
            if len(getattr(self, name)) != n:
                raise InvariantViolation(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if len(self.leaders) != n:
            raise InvariantViolation("leader column length mismatch")
        if np.any(self.losses < 0) or np.any(self.losses > 1):
            raise InvariantViolation("incurred loss outside [0, 1]")

    def summary_row(self) -> dict:
        return {
            "algo": self.algo,
            "T": self.horizon,
            "seed": self.seed,
            "total_loss": self.total_loss,
            "lstar": self.lstar,
            "regret": self.regret,
            "switches": self.switches,
        }

    def write_rows(self, stream) -> None:
        out = csv.writer(stream, lineterminator="\n")
        out.writerow(RUN_COLUMNS)
        for i in range(self.horizon):
            out.writerow(
                (
                    i + 1,
                    int(self.states[i]),
                    int(self.actions[i]),
                    fmt(self.losses[i]),
                    self.leaders[i],
                    int(self.transit[i]),
                    int(self.switch[i]),
                )
            )

    def rows_csv(self) -> str:
        buf = io.StringIO()
        self.write_rows(buf)
        return buf.getvalue()


def write_summary(records, stream) -> None:
    out = csv.writer(stream, lineterminator="\n")
    out.writerow(SUMMARY_COLUMNS)
    for rec in records:
        row = rec.summary_row()
        out.writerow(
            (
                row["algo"],
                row["T"],
                row["seed"],
                fmt(row["total_loss"]),
                fmt(row["lstar"]),
                fmt(row["regret"]),
                row["switches"],
            )
        )


def read_rows(stream) -> dict[str, np.ndarray]:
    """Parse a runs.csv back into columns (used to recompute accounting identities)."""
    reader = csv.DictReader(stream)
    cols: dict[str, list] = {c: [] for c in RUN_COLUMNS}
    for row in reader:
        for c in RUN_COLUMNS:
            cols[c].append(row[c])
    return {
        "t": np.array(cols["t"], dtype=int),
        "state": np.array(cols["state"], dtype=int),
        "action": np.array(cols["action"], dtype=int),
        "loss": np.array(cols["loss"], dtype=float),
        "leader": np.array(cols["leader"], dtype=object),
        "transit": np.array(cols["transit"], dtype=int),
        "switch": np.array(cols["switch"], dtype=int),
    }
