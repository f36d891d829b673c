"""Plain-text problem files.

Layout::

    # stss-mmv v1 N D T noise_var
    [A]
    <N rows of D comma-separated values>
    [Y]
    <N rows of T values>
    [X]        (optional ground truth, D x T)
    [Z]        (optional, D x T, 0/1)
    [GAMMA]    (optional, D x T)

Values are written row-major with 17 significant digits, which round-trips
IEEE doubles exactly.
"""

import numpy as np

from .errors import ConfigurationError
from .prior import GroundTruth, MmvProblem

MAGIC = "stss-mmv"
VERSION = "v1"
BLOCKS = ("A", "Y", "X", "Z", "GAMMA")


def _write_block(fh, name, M, fmt):
    fh.write(f"[{name}]\n")
    for row in np.atleast_2d(M):
        fh.write(",".join(fmt % v for v in row))
        fh.write("\n")


def write_problem(path, problem, truth=None):
    with open(path, "w") as fh:
        fh.write(f"# {MAGIC} {VERSION} {problem.N} {problem.D} {problem.T} "
                 f"{problem.noise_var:.17g}\n")
        _write_block(fh, "A", problem.A, "%.17g")
        _write_block(fh, "Y", problem.Y, "%.17g")
        if truth is not None:
            _write_block(fh, "X", truth.X, "%.17g")
            _write_block(fh, "Z", truth.Z, "%d")
            _write_block(fh, "GAMMA", truth.Gamma, "%.17g")


def read_problem(path):
    """Read a problem file.

    Returns
    -------
    problem : MmvProblem
    truth : GroundTruth or None
        Present when the file carries ``[X]`` and ``[Z]`` blocks. The noise
        matrix is reconstructed as ``Y - A X``.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ConfigurationError(f"{path}: missing header line")
    head = lines[0].lstrip("#").split()
    if len(head) != 6 or head[0] != MAGIC or head[1] != VERSION:
        raise ConfigurationError(f"{path}: bad header {lines[0]!r}")
    N, D, T = (int(v) for v in head[2:5])
    noise_var = float(head[5])

    blocks, current = {}, None
    for ln in lines[1:]:
        if ln.startswith("[") and ln.endswith("]"):
            current = ln[1:-1]
            if current not in BLOCKS:
                raise ConfigurationError(f"{path}: unknown block [{current}]")
            blocks[current] = []
        elif current is None:
            raise ConfigurationError(f"{path}: data before first block")
        else:
            blocks[current].append([float(v) for v in ln.split(",")])
    shapes = {"A": (N, D), "Y": (N, T), "X": (D, T), "Z": (D, T), "GAMMA": (D, T)}
    arrays = {}
    for name, rows in blocks.items():
        M = np.array(rows, dtype=float).reshape(len(rows), -1)
        if M.shape != shapes[name]:
            raise ConfigurationError(
                f"{path}: block [{name}] has shape {M.shape}, expected {shapes[name]}")
        arrays[name] = M
    for name in ("A", "Y"):
        if name not in arrays:
            raise ConfigurationError(f"{path}: missing [{name}] block")
    problem = MmvProblem(arrays["A"], arrays["Y"], noise_var)
    truth = None
    if "X" in arrays and "Z" in arrays:
        X = arrays["X"]
        truth = GroundTruth(arrays.get("GAMMA"), arrays["Z"].astype(np.int8), X,
                            problem.Y - problem.A @ X)
    return problem, truth
