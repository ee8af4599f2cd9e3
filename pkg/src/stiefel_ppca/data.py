"""Dataset ingestion and synthetic data generation."""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConstantColumn, ParseError
from .householder import HouseholderChain, apply_chain

SD_FLOOR = 1e-12


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_csv_matrix(path, drop_columns=()):
    """Read a rectangular numeric CSV, skipping a non-numeric header row.

    ``drop_columns`` holds column names (requires a header) or zero-based
    indices to discard, e.g. a label column. Returns ``(matrix, header)``
    where ``header`` is ``None`` if the file had none.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    header = None
    if not all(_is_number(cell) for cell in rows[0]):
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: no data rows")

    width = len(rows[0]) if header is None else len(header)
    drop = set()
    for col in drop_columns:
        if isinstance(col, str) and not col.lstrip("-").isdigit():
            if header is None or col not in header:
                raise ParseError(f"{path}: unknown column {col!r}")
            drop.add(header.index(col))
        else:
            drop.add(int(col) % width)
    keep = [j for j in range(width) if j not in drop]

    out = np.empty((len(rows), len(keep)))
    offset = 2 if header is not None else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"{path}: expected {width} fields, found {len(row)}", row=i + offset
            )
        for k, j in enumerate(keep):
            try:
                out[i, k] = float(row[j])
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric value {row[j]!r}", row=i + offset, column=j + 1
                ) from None
    if header is not None:
        header = [header[j] for j in keep]
    return out, header


def standardize(Y):
    """Zero mean, unit population standard deviation per column."""
    sd = Y.std(axis=0)
    bad = np.nonzero(sd < SD_FLOOR)[0]
    if bad.size:
        raise ConstantColumn(f"column {int(bad[0])} has standard deviation below {SD_FLOOR}")
    return (Y - Y.mean(axis=0)) / sd


def ingest_csv(path, standardize_columns=False, transpose=False, drop_columns=()):
    """Load a data matrix, optionally standardizing columns then transposing.

    Standardization always applies to the columns of the file as written, so
    ``transpose=True`` yields a matrix whose rows are standardized features.
    """
    Y, _ = read_csv_matrix(path, drop_columns)
    if standardize_columns:
        Y = standardize(Y)
    if transpose:
        Y = np.ascontiguousarray(Y.T)
    return Y


@dataclass
class SyntheticTruth:
    U: np.ndarray
    sigma: np.ndarray
    noise_sd: float
    seed: int

    @property
    def W(self):
        return self.U * self.sigma

    def to_json(self):
        return {
            "U": self.U.tolist(),
            "sigma": self.sigma.tolist(),
            "W": self.W.tolist(),
            "noise_sd": self.noise_sd,
            "seed": self.seed,
        }


def generate_synthetic(N=150, D=5, Q=2, sigma=(3.0, 1.0), noise_sd=0.01, seed=0):
    """Draw ``Y = X W^T + eps`` with ``W = U diag(sigma)`` and Haar ``U``.

    Draw order from ``numpy.random.default_rng(seed)``: the Householder
    vectors of ``U``, then ``X`` (N x Q), then the noise (N x D).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (Q,):
        raise ValueError(f"need {Q} singular values, got {sigma.shape[0]}")
    if np.any(sigma <= 0) or np.any(np.diff(sigma) > 0):
        raise ValueError("sigma must be positive and descending")
    rng = np.random.default_rng(seed)
    U = apply_chain(HouseholderChain.random(D, Q, rng))
    X = rng.standard_normal((N, Q))
    Y = X @ (U * sigma).T + noise_sd * rng.standard_normal((N, D))
    return Y, SyntheticTruth(U, sigma, float(noise_sd), seed)


def write_matrix_csv(path, Y, header=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in Y:
            writer.writerow([repr(float(x)) for x in row])
