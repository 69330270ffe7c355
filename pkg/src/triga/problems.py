"""Objective functions, dataset readers and minimum-norm oracles.

Three problem families are provided:

* :class:`QuadraticCoupling` -- ``1/2 sum_i (x_{2i-1} + x_{2i} - 1)^2``, whose
  solution set is an affine subspace with minimum-norm element ``(1/2, ...)``;
* :class:`LeastSquares` -- ``1/2 ||Ax - b||^2`` with dense or sparse ``A``;
* :class:`LogisticRegression` -- mean logistic loss over labelled samples.

Problems are immutable after construction and safe to evaluate from several
threads at once.
"""

from __future__ import annotations

import re
import warnings
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

__all__ = [
    "ObjectiveProblem",
    "QuadraticCoupling",
    "LeastSquares",
    "LogisticRegression",
    "UnsupportedProblemError",
    "ParseError",
    "DegenerateProblemWarning",
    "evaluate",
    "finite_difference_gradient",
    "min_norm_solution",
    "load_matrix_market",
    "load_libsvm",
    "dump_libsvm",
    "estimate_lipschitz",
    "power_iteration",
    "synthetic_least_squares",
    "rank_deficient_least_squares",
    "problem_from_uri",
]

PINV_RCOND = 1e-10
LIPSCHITZ_SLACK = 1e-3


class UnsupportedProblemError(NotImplementedError):
    """The requested quantity has no closed form for this problem family."""


class ParseError(ValueError):
    """Malformed input file; ``lineno`` is 1-based."""

    def __init__(self, message, path=None, lineno=None):
        where = f"{path}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


class DegenerateProblemWarning(RuntimeWarning):
    pass


class ObjectiveProblem:
    """Convex, differentiable objective with Lipschitz gradient.

    Subclasses implement :meth:`value` and :meth:`gradient` and set
    ``dimension`` and ``lipschitz``.  ``optimum_value`` and
    ``min_norm_solution`` are ``None`` when unknown.
    """

    name = "problem"
    dimension: int
    lipschitz: float

    @property
    def optimum_value(self) -> Optional[float]:
        return None

    @property
    def min_norm_solution(self) -> Optional[np.ndarray]:
        return None

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.value(x), self.gradient(x)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected a vector of length {self.dimension}, got shape {x.shape}")
        return x


def evaluate(problem: ObjectiveProblem, x) -> Tuple[float, np.ndarray]:
    """Return ``(f(x), grad f(x))`` after validating ``x``."""
    x = problem._check(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("x has non-finite entries")
    return problem.evaluate(x)


class LeastSquares(ObjectiveProblem):
    """``f(x) = 1/2 ||Ax - b||^2``.

    ``lipschitz`` defaults to a power-iteration upper bound on
    ``sigma_max(A)**2``.
    """

    name = "least_squares"

    def __init__(self, matrix, rhs, lipschitz: Optional[float] = None, name=None):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
        else:
            matrix = np.array(matrix, dtype=float, ndmin=2)
        rhs = np.asarray(rhs, dtype=float).ravel()
        if matrix.shape[0] != rhs.shape[0]:
            raise ValueError(f"matrix has {matrix.shape[0]} rows but rhs has length {rhs.shape[0]}")
        self.matrix = matrix
        self.rhs = rhs
        self.dimension = matrix.shape[1]
        if lipschitz is None:
            lipschitz = estimate_lipschitz(matrix)
        self.lipschitz = float(lipschitz)
        if name:
            self.name = name
        self._xstar = None
        self._fstar = None

    def residual(self, x):
        return self.matrix @ x - self.rhs

    def value(self, x):
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def gradient(self, x):
        return self.matrix.T @ self.residual(x)

    def evaluate(self, x):
        r = self.residual(x)
        return 0.5 * float(r @ r), self.matrix.T @ r

    def dense_matrix(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix

    def _solve_min_norm(self):
        if self._xstar is None:
            xstar = np.linalg.pinv(self.dense_matrix(), rcond=PINV_RCOND) @ self.rhs
            self._xstar = xstar
            self._fstar = self.value(xstar)
        return self._xstar

    @property
    def min_norm_solution(self):
        return self._solve_min_norm()

    @property
    def optimum_value(self):
        self._solve_min_norm()
        return self._fstar


class QuadraticCoupling(LeastSquares):
    """``1/2 sum_{i=1..n} (x_{2i-1} + x_{2i} - 1)^2`` on ``R^{2n}``."""

    name = "quadratic"

    def __init__(self, pair_count: int):
        if pair_count < 1:
            raise ValueError("pair_count must be a positive integer")
        self.pair_count = int(pair_count)
        n = self.pair_count
        a = np.zeros((n, 2 * n))
        a[np.arange(n), 2 * np.arange(n)] = 1.0
        a[np.arange(n), 2 * np.arange(n) + 1] = 1.0
        super().__init__(a, np.ones(n), lipschitz=2.0, name=f"quadratic:n={n}")
        self._xstar = np.full(2 * n, 0.5)
        self._fstar = 0.0

    def residual(self, x):
        return x[0::2] + x[1::2] - 1.0

    def gradient(self, x):
        return np.repeat(self.residual(x), 2)

    def evaluate(self, x):
        r = self.residual(x)
        return 0.5 * float(r @ r), np.repeat(r, 2)


class LogisticRegression(ObjectiveProblem):
    """``f(x) = (1/m) sum_i log(1 + exp(-y_i <a_i, x>))`` with labels in ``{-1, +1}``.

    The loss is evaluated as ``logaddexp(0, -u)``, which never overflows for
    finite margins.  The optimum is not known in closed form.
    """

    name = "logistic"

    def __init__(self, features, labels, lipschitz: Optional[float] = None, name=None):
        if sp.issparse(features):
            features = sp.csr_matrix(features, dtype=float)
        else:
            features = np.array(features, dtype=float, ndmin=2)
        labels = np.asarray(labels, dtype=float).ravel()
        if features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree on the number of samples")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.features = features
        self.labels = labels
        self.samples = features.shape[0]
        self.dimension = features.shape[1]
        if lipschitz is None:
            lipschitz = estimate_lipschitz(features) / (4.0 * self.samples)
        self.lipschitz = float(lipschitz)
        if name:
            self.name = name

    def margins(self, x):
        return self.labels * (self.features @ x)

    def value(self, x):
        return float(np.mean(np.logaddexp(0.0, -self.margins(x))))

    def gradient(self, x):
        w = -self.labels * expit(-self.margins(x))
        return (self.features.T @ w) / self.samples

    def evaluate(self, x):
        u = self.margins(x)
        w = -self.labels * expit(-u)
        return float(np.mean(np.logaddexp(0.0, -u))), (self.features.T @ w) / self.samples


def finite_difference_gradient(problem: ObjectiveProblem, x, step: float = 1e-6) -> np.ndarray:
    """Central differences with per-coordinate step ``step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (problem.value(x + e) - problem.value(x - e)) / (2.0 * h)
    return g


def min_norm_solution(problem: ObjectiveProblem) -> np.ndarray:
    """Least-norm minimizer for the closed-form families."""
    if isinstance(problem, LeastSquares):
        return problem.min_norm_solution.copy()
    raise UnsupportedProblemError(f"no closed-form minimum-norm solution for {problem.name}")


# ---------------------------------------------------------------------------
# Lipschitz constants
# ---------------------------------------------------------------------------


def power_iteration(matrix, tolerance: float = 1e-12, max_iter: int = 100_000):
    """Largest eigenvalue of ``A^T A`` by power iteration.

    Starts from ``(1, 1/2, ..., 1/n)`` normalized and stops once the relative
    Rayleigh-quotient increment drops below ``tolerance``.  Returns
    ``(estimate, iterations)``.
    """
    n = matrix.shape[1]
    v = 1.0 / np.arange(1, n + 1, dtype=float)
    v /= np.linalg.norm(v)
    rq = 0.0
    for it in range(1, max_iter + 1):
        w = matrix.T @ (matrix @ v)
        new_rq = float(v @ w) / float(v @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, it
        v = w / norm
        if abs(new_rq - rq) <= tolerance * abs(new_rq):
            return new_rq, it
        rq = new_rq
    return rq, max_iter


def estimate_lipschitz(problem_or_matrix, tolerance: float = 1e-12) -> float:
    """Upper bound on the gradient Lipschitz constant.

    For a matrix ``A`` (or a least-squares problem) this is
    ``sigma_max(A)**2 * (1 + 1e-3)``; for a logistic problem the same bound on
    the feature matrix is divided by ``4m``.  A zero matrix returns ``0`` and
    emits :class:`DegenerateProblemWarning`.
    """
    scale = 1.0
    if isinstance(problem_or_matrix, LogisticRegression):
        matrix = problem_or_matrix.features
        scale = 1.0 / (4.0 * problem_or_matrix.samples)
    elif isinstance(problem_or_matrix, LeastSquares):
        matrix = problem_or_matrix.matrix
    elif isinstance(problem_or_matrix, ObjectiveProblem):
        raise UnsupportedProblemError(f"cannot estimate the Lipschitz constant of {problem_or_matrix.name}")
    else:
        matrix = problem_or_matrix
        if not sp.issparse(matrix):
            matrix = np.asarray(matrix, dtype=float)
    estimate, _ = power_iteration(matrix, tolerance)
    if estimate == 0.0:
        warnings.warn("zero matrix: Lipschitz constant is 0", DegenerateProblemWarning, stacklevel=2)
        return 0.0
    return estimate * (1.0 + LIPSCHITZ_SLACK) * scale


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_MM_HEADER = re.compile(r"^%%MatrixMarket\s+(\S+)\s+(\S+)\s+(\S+)\s+(\S+)\s*$", re.IGNORECASE)


def load_matrix_market(path):
    """Read a real MatrixMarket file (coordinate or array format).

    Coordinate files yield a CSR matrix, array files a dense ndarray.
    Symmetric and skew-symmetric storage is expanded.
    """
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    m = _MM_HEADER.match(lines[0])
    if not m:
        raise ParseError("missing or malformed %%MatrixMarket header", path, 1)
    obj, fmt, field, symmetry = (g.lower() for g in m.groups())
    if obj != "matrix":
        raise ParseError(f"unsupported object {obj!r}", path, 1)
    if fmt not in ("coordinate", "array"):
        raise ParseError(f"unsupported format {fmt!r}", path, 1)
    if field not in ("real", "integer", "double"):
        raise ParseError(f"non-real field {field!r}", path, 1)
    if symmetry not in ("general", "symmetric", "skew-symmetric"):
        raise ParseError(f"unsupported symmetry {symmetry!r}", path, 1)

    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines[1:], start=1)]
    body = [(n, ln) for n, ln in body if ln and not ln.startswith("%")]
    if not body:
        raise ParseError("missing size line", path, len(lines))
    size_no, size_line = body[0]
    try:
        dims = [int(t) for t in size_line.split()]
    except ValueError:
        raise ParseError(f"malformed size line {size_line!r}", path, size_no) from None
    entries = body[1:]

    if fmt == "coordinate":
        if len(dims) != 3:
            raise ParseError("coordinate size line needs 'rows cols nnz'", path, size_no)
        nrows, ncols, nnz = dims
        if len(entries) != nnz:
            lineno = entries[nnz][0] if len(entries) > nnz else len(lines)
            raise ParseError(f"header declares {nnz} entries, found {len(entries)}", path, lineno)
        rows, cols, vals = [], [], []
        for lineno, ln in entries:
            toks = ln.split()
            if len(toks) != 3:
                raise ParseError(f"expected 'row col value', got {ln!r}", path, lineno)
            try:
                i, j, v = int(toks[0]), int(toks[1]), float(toks[2])
            except ValueError:
                raise ParseError(f"non-numeric entry {ln!r}", path, lineno) from None
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                raise ParseError(f"index ({i},{j}) outside {nrows}x{ncols}", path, lineno)
            if symmetry != "general" and i < j:
                raise ParseError(f"upper-triangle entry ({i},{j}) in {symmetry} file", path, lineno)
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
            if symmetry != "general" and i != j:
                rows.append(j - 1)
                cols.append(i - 1)
                vals.append(-v if symmetry == "skew-symmetric" else v)
        return sp.csr_matrix((vals, (rows, cols)), shape=(nrows, ncols))

    if len(dims) != 2:
        raise ParseError("array size line needs 'rows cols'", path, size_no)
    nrows, ncols = dims
    out = np.zeros((nrows, ncols))
    if symmetry == "general":
        slots = [(i, j) for j in range(ncols) for i in range(nrows)]
    elif symmetry == "symmetric":
        slots = [(i, j) for j in range(ncols) for i in range(j, nrows)]
    else:
        slots = [(i, j) for j in range(ncols) for i in range(j + 1, nrows)]
    if len(entries) != len(slots):
        raise ParseError(f"expected {len(slots)} array values, found {len(entries)}", path, size_no)
    for (lineno, ln), (i, j) in zip(entries, slots):
        try:
            v = float(ln)
        except ValueError:
            raise ParseError(f"non-numeric value {ln!r}", path, lineno) from None
        out[i, j] = v
        if symmetry == "symmetric":
            out[j, i] = v
        elif symmetry == "skew-symmetric":
            out[j, i] = -v
    return out


def load_libsvm(path, dimension_hint: Optional[int] = None) -> LogisticRegression:
    """Read a LIBSVM text file into a :class:`LogisticRegression` problem.

    Labels ``{0, 1}`` are remapped to ``{-1, +1}``; any other label set is an
    error.  Feature indices are 1-based and must increase within a line.
    """
    path = Path(path)
    labels, rows, cols, vals, linenos = [], [], [], [], []
    width = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            ln = raw.split("#", 1)[0].strip()
            if not ln:
                continue
            toks = ln.split()
            try:
                label = float(toks[0])
            except ValueError:
                raise ParseError(f"non-numeric label {toks[0]!r}", path, lineno) from None
            row = len(labels)
            last = 0
            for tok in toks[1:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise ParseError(f"malformed feature {tok!r}", path, lineno) from None
                if not sep or idx < 1:
                    raise ParseError(f"malformed feature {tok!r}", path, lineno)
                if idx <= last:
                    raise ParseError(f"feature indices not increasing at {tok!r}", path, lineno)
                last = idx
                rows.append(row)
                cols.append(idx - 1)
                vals.append(val)
            width = max(width, last)
            labels.append(label)
            linenos.append(lineno)
    if not labels:
        raise ParseError("no samples", path, None)
    labels = np.asarray(labels)
    distinct = set(np.unique(labels).tolist())
    if distinct <= {0.0, 1.0} and 0.0 in distinct:
        labels = np.where(labels == 0.0, -1.0, 1.0)
    elif not distinct <= {-1.0, 1.0}:
        allowed = (0.0, 1.0) if 0.0 in distinct else (-1.0, 1.0)
        bad = next(i for i, v in enumerate(labels) if v not in allowed)
        raise ParseError(f"unmappable label {labels[bad]:g}; expected {{-1,+1}} or {{0,1}}",
                         path, linenos[bad])
    if dimension_hint is not None:
        width = max(width, int(dimension_hint))
    features = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), width))
    return LogisticRegression(features, labels, name=f"libsvm:{path.name}")


def dump_libsvm(problem: LogisticRegression, path) -> None:
    """Write ``problem`` in LIBSVM format with round-trip exact values."""
    features = sp.csr_matrix(problem.features)
    with open(path, "w") as fh:
        for i in range(features.shape[0]):
            lo, hi = features.indptr[i], features.indptr[i + 1]
            items = sorted(zip(features.indices[lo:hi], features.data[lo:hi]))
            body = " ".join(f"{j + 1}:{float(v)!r}" for j, v in items if v != 0)
            label = "+1" if problem.labels[i] > 0 else "-1"
            fh.write(f"{label} {body}".rstrip() + "\n")


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def synthetic_least_squares(n: int, seed: int, m: Optional[int] = None) -> LeastSquares:
    """Least-squares instance with standard Gaussian ``A`` (``m x n``) and ``b``.

    Uses ``numpy.random.default_rng(seed)``; ``m`` defaults to ``n``.
    """
    rng = np.random.default_rng(seed)
    m = n if m is None else m
    a = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    return LeastSquares(a, b, name=f"synthetic:m={m},n={n},seed={seed}")


def rank_deficient_least_squares(m: int, n: int, rank: int, seed: int) -> LeastSquares:
    """Least squares with ``A = B C`` (``B`` is ``m x rank``, ``C`` is ``rank x n``),
    all Gaussian, and a Gaussian ``b``; ``A`` has rank ``rank`` almost surely."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    b = rng.standard_normal(m)
    return LeastSquares(a, b, name=f"lowrank:m={m},n={n},rank={rank},seed={seed}")


def _uri_args(text: str) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"expected key=value in {part!r}")
        out[key.strip()] = value.strip()
    return out


def problem_from_uri(uri: str, seed: int = 0) -> ObjectiveProblem:
    """Build a problem from a config string.

    Recognized forms::

        quadratic:n=10
        synthetic:n=8[,m=8][,seed=3]
        lowrank:m=20,n=30,rank=10[,seed=3]
        mm:path/to/A.mtx        (rhs drawn standard Gaussian from ``seed``)
        libsvm:path/to/data[,dim=N]
        bundled:mini_logistic   (small logistic dataset shipped with the package)
    """
    scheme, sep, rest = uri.partition(":")
    if not sep:
        raise ValueError(f"problem URI {uri!r} lacks a scheme")
    if scheme == "quadratic":
        args = _uri_args(rest)
        return QuadraticCoupling(int(args.get("n", 1)))
    if scheme == "synthetic":
        args = _uri_args(rest)
        n = int(args["n"])
        return synthetic_least_squares(n, int(args.get("seed", seed)), int(args.get("m", n)))
    if scheme == "lowrank":
        args = _uri_args(rest)
        return rank_deficient_least_squares(int(args["m"]), int(args["n"]), int(args["rank"]),
                                            int(args.get("seed", seed)))
    if scheme == "mm":
        path = Path(rest)
        if not path.is_file():
            raise FileNotFoundError(f"matrix file not found: {path}")
        a = load_matrix_market(path)
        rng = np.random.default_rng(seed)
        return LeastSquares(a, rng.standard_normal(a.shape[0]), name=f"mm:{path.name}")
    if scheme == "bundled":
        name = rest.strip()
        res = resources.files("triga.data").joinpath(f"{name}.libsvm")
        if not res.is_file():
            raise FileNotFoundError(f"no bundled dataset named {name!r}")
        with resources.as_file(res) as path:
            prob = load_libsvm(path)
        prob.name = f"bundled:{name}"
        return prob
    if scheme == "libsvm":
        path_s, _, extra = rest.partition(",")
        path = Path(path_s)
        if not path.is_file():
            raise FileNotFoundError(f"dataset file not found: {path}")
        args = _uri_args(extra)
        dim = int(args["dim"]) if "dim" in args else None
        return load_libsvm(path, dim)
    raise ValueError(f"unknown problem scheme {scheme!r}")


def is_closed_form(problem: ObjectiveProblem) -> bool:
    return isinstance(problem, LeastSquares)


def relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))

