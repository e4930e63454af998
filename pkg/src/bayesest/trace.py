"""Per-step record of a filter run and its CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

TRACE_SCHEMA = "bayesest-trace v1"


@dataclass
class RunTrace:
    """Truth, estimate, covariance diagonal and innovation for steps ``1..K``.

    Row ``j`` corresponds to time index ``k = j + 1``.  ``diverged_at`` is the
    time index at which the filter failed; rows from there on are NaN.
    """

    truth: np.ndarray  # (K, n_x)
    estimate: np.ndarray  # (K, n_x)
    cov_diag: np.ndarray  # (K, n_x), NaN when the filter keeps no covariance
    innovation: np.ndarray  # (K, n_y), NaN when the filter reports none
    filter_name: str = ""
    seed: int | None = None
    dt: float = 1.0
    params: dict = field(default_factory=dict)
    diverged_at: int | None = None
    failure: str = ""
    notes: list = field(default_factory=list)

    @property
    def K(self):
        return len(self.truth)

    @property
    def diverged(self):
        return self.diverged_at is not None

    def errors(self):
        """Euclidean estimation error at every step."""
        return np.linalg.norm(self.truth - self.estimate, axis=1)

    def to_csv(self, path=None):
        """Write (or return, when ``path`` is None) the trace as CSV."""
        buf = io.StringIO()
        n_x, n_y = self.truth.shape[1], self.innovation.shape[1]
        buf.write(f"# {TRACE_SCHEMA}\n")
        buf.write(f"# filter={self.filter_name} seed={self.seed} dt={self.dt!r}")
        if self.diverged:
            buf.write(f" diverged_at={self.diverged_at}")
        buf.write("\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["k", "t"]
            + [f"x_truth_{i}" for i in range(n_x)]
            + [f"x_hat_{i}" for i in range(n_x)]
            + [f"P_diag_{i}" for i in range(n_x)]
            + [f"innovation_{i}" for i in range(n_y)]
        )
        for j in range(self.K):
            k = j + 1
            row = [k, repr(k * self.dt)]
            for block in (self.truth[j], self.estimate[j], self.cov_diag[j], self.innovation[j]):
                row.extend(repr(float(v)) for v in block)
            w.writerow(row)
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return path


def read_trace_csv(path):
    """Load a trace written by :meth:`RunTrace.to_csv` (header comments skipped)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    data = np.array([[float(v) for v in row] for row in reader])
    cols = {name: i for i, name in enumerate(header)}

    def block(prefix):
        idx = [cols[c] for c in header if c.startswith(prefix)]
        return data[:, idx]

    return RunTrace(block("x_truth_"), block("x_hat_"), block("P_diag_"), block("innovation_"))
