"""Linear readout: delay embedding, temporal splits, PCA, ridge regression, metrics.

Everything here is a pure function of its array inputs.  Rows are time-ordered;
``states[n]`` is the reservoir state at the end of window ``n`` and ``u[n]`` is
the input that drove that window.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, MetricError

DEFAULT_LAMBDAS = tuple(np.logspace(-8, 2, 11))
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    n_offsets: int = 6
    offset_index: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) <= 0:
            raise ConfigurationError("split ratios must be three positives summing to 1")
        if not 0 <= self.offset_index < self.n_offsets:
            raise ConfigurationError("offset_index out of range")


@dataclass
class PCAProjection:
    mean: np.ndarray
    basis: np.ndarray  # (n_features, n_components), orthonormal columns
    explained: np.ndarray  # explained-variance ratio per retained component
    degenerate: bool = False

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) @ self.basis


@dataclass
class RidgeFit:
    W: np.ndarray  # last entry is the bias
    lam: float
    rank_deficient: bool = False

    def predict(self, z: np.ndarray) -> np.ndarray:
        return add_bias(z) @ self.W


@dataclass
class ReadoutModel:
    pca: PCAProjection
    ridge: RidgeFit
    k: int
    H: int

    @property
    def lam(self) -> float:
        return self.ridge.lam


@dataclass
class MemoryCurve:
    r2: np.ndarray
    mc: float = field(init=False)

    def __post_init__(self):
        self.r2 = np.clip(np.asarray(self.r2, dtype=float), 0.0, 1.0)
        self.mc = float(self.r2.sum())

    @property
    def delays(self) -> np.ndarray:
        return np.arange(1, len(self.r2) + 1)


# -- features and targets ------------------------------------------------------

def embed(states: np.ndarray, k: int) -> np.ndarray:
    """Rows ``[r[n], r[n-1], ..., r[n-k]]`` for ``n = k .. T-1``."""
    states = np.asarray(states, dtype=float)
    T = len(states)
    if k < 0:
        raise ConfigurationError("embedding depth must be >= 0")
    if k >= T:
        raise InsufficientDataError(f"embedding depth {k} needs more than {T} states")
    return np.hstack([states[k - j:T - j] for j in range(k + 1)])


def make_targets(u: np.ndarray, H: int) -> np.ndarray:
    """``y[n] = u[n + H]`` for ``n = 0 .. len(u)-1-H``.

    ``H = 0`` reproduces the current input and is only useful as a plumbing check.
    """
    u = np.asarray(u, dtype=float)
    if H < 0:
        raise ConfigurationError("horizon must be >= 0")
    if H >= len(u):
        raise InsufficientDataError(f"horizon {H} leaves no targets in {len(u)} samples")
    return u[H:]


def supervised_rows(states, u, k: int, H: int):
    """Aligned ``(features, targets, times)`` for usable ``n in [k, T-1-H]``."""
    states = np.asarray(states, dtype=float)
    T = len(states)
    if len(u) != T:
        raise ConfigurationError("states and inputs must be aligned")
    if T - k - H < 1:
        raise InsufficientDataError(f"no usable rows for k={k}, H={H}, T={T}")
    phi = embed(states, k)[:T - k - H]
    y = make_targets(u, H)[k:]
    return phi, y, np.arange(k, T - H)


def split(n_rows: int, spec: SplitSpec, k: int = 0):
    """Index arrays ``(train, val, test)`` into a time-ordered row sequence.

    The sequence is rotated left by ``offset_index * n_rows // n_offsets``.  Rows
    that follow the rotation seam and whose ``k``-deep feature window reaches back
    across it are dropped.  The remaining rows are cut contiguously: floor for
    train, floor for validation, the rest for test.
    """
    shift = spec.offset_index * n_rows // spec.n_offsets
    order = np.roll(np.arange(n_rows), -shift)
    if shift > 0 and k > 0:
        order = order[k:]
    m = len(order)
    n_train = int(np.floor(spec.ratios[0] * m + 1e-9))
    n_val = int(np.floor(spec.ratios[1] * m + 1e-9))
    if n_train < 2 or n_val < 1 or m - n_train - n_val < 2:
        raise InsufficientDataError(f"{n_rows} rows are too few for a {spec.ratios} split")
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


# -- PCA and ridge -------------------------------------------------------------

def fit_pca(train: np.ndarray, var_frac: float = 0.95, rel_tol: float = 1e-10) -> PCAProjection:
    """Principal axes of the training rows.

    Keeps the fewest leading components whose cumulative explained variance
    reaches ``var_frac``; ``var_frac >= 1`` keeps every component above the
    numerical rank tolerance.  Each axis is signed so its largest-magnitude
    loading is positive.
    """
    x = np.asarray(train, dtype=float)
    if x.ndim != 2 or len(x) < 2:
        raise InsufficientDataError("PCA needs at least two training rows")
    mean = x.mean(axis=0)
    xc = x - mean
    s, vt = _gram_axes(xc, var_frac)
    if vt is None:
        _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s ** 2
    total = var.sum()
    if total <= 0 or s[0] <= rel_tol * max(1.0, np.abs(x).max()):
        return PCAProjection(mean, np.zeros((x.shape[1], 0)), np.zeros(0), degenerate=True)
    ratio = var / total
    n = _n_components(s, ratio, var_frac, rel_tol)
    basis = vt[:n].T.copy()
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    basis *= signs
    return PCAProjection(mean, basis, ratio[:n])


def _n_components(s, ratio, var_frac, rel_tol) -> int:
    rank = int(np.sum(s > rel_tol * s[0]))
    if var_frac >= 1.0:
        return rank
    return min(int(np.searchsorted(np.cumsum(ratio), var_frac - 1e-12) + 1), rank)


def _gram_axes(xc: np.ndarray, var_frac: float, resolved: float = 1e-4):
    """Leading axes of a wide matrix from its row Gram matrix.

    Much cheaper than a full SVD when columns far outnumber rows.  Axes whose
    singular value is below ``resolved * s_max`` lose too much precision this
    way, so ``(s, None)`` is returned when any required axis falls there and
    the caller uses the SVD instead.
    """
    n, p = xc.shape
    if p < 4 * n:
        return None, None
    w, U = np.linalg.eigh(xc @ xc.T)
    w, U = np.maximum(w[::-1], 0.0), np.ascontiguousarray(U[:, ::-1])
    s = np.sqrt(w)
    if s[0] == 0:
        return None, None
    need = _n_components(s, w / w.sum(), var_frac, 1e-10)
    if s[need - 1] < resolved * s[0]:
        return None, None
    vt = (np.ascontiguousarray(U[:, :need].T) @ xc) / s[:need, None]
    return s, vt


def add_bias(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.hstack([z, np.ones((len(z), 1))])


def fit_ridge(Phi: np.ndarray, Y: np.ndarray, lam: float) -> RidgeFit:
    """Minimize ``|Y - Phi W|^2 + lam |W_nonbias|^2``; the last column of ``Phi`` is the bias.

    Solved as an augmented least-squares problem (SVD based), which avoids
    forming the normal equations.
    """
    if lam < 0:
        raise ConfigurationError("lambda must be >= 0")
    Phi = np.asarray(Phi, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(Phi) != len(Y):
        raise ConfigurationError("Phi and Y must be row-aligned")
    p = Phi.shape[1]
    if lam > 0 and p > 1:
        reg = np.sqrt(lam) * np.eye(p)[:-1]
        A = np.vstack([Phi, reg])
        B = np.concatenate([Y, np.zeros((p - 1,) + Y.shape[1:])])
    else:
        A, B = Phi, Y
    W, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    return RidgeFit(W, float(lam), rank_deficient=rank < p)


def nrmse(pred, target) -> float:
    """RMSE divided by the population standard deviation of ``target``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or len(target) < 2:
        raise MetricError("nrmse needs equal-length inputs of length >= 2")
    sd = target.std()
    if sd == 0:
        raise MetricError("target has zero variance")
    return float(np.sqrt(np.mean((pred - target) ** 2)) / sd)


def pearson(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or len(target) < 2:
        raise MetricError("pearson needs equal-length inputs of length >= 2")
    a = pred - pred.mean()
    b = target - target.mean()
    den = np.sqrt((a @ a) * (b @ b))
    if den == 0:
        raise MetricError("correlation undefined for constant input")
    return float(np.clip((a @ b) / den, -1.0, 1.0))


def r_squared(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    sst = np.sum((target - target.mean()) ** 2)
    if sst == 0:
        raise MetricError("target has zero variance")
    return float(1.0 - np.sum((target - pred) ** 2) / sst)


def select_lambda(candidates, Z_train, y_train, Z_val, y_val) -> float:
    """Candidate with the lowest validation NRMSE; ties go to the larger lambda."""
    cands = sorted(float(c) for c in candidates)
    if not cands:
        raise ConfigurationError("no lambda candidates")
    if len(cands) == 1:
        return cands[0]
    Phi = add_bias(Z_train)
    best, best_err = cands[-1], np.inf
    for lam in reversed(cands):
        pred = fit_ridge(Phi, y_train, lam).predict(Z_val)
        try:
            err = nrmse(pred, y_val)
        except MetricError:
            err = float(np.sqrt(np.mean((pred - y_val) ** 2)))
        if err < best_err * (1 - 1e-12):
            best, best_err = lam, err
    return best


def train_readout(phi, y, tr, va, lambdas=DEFAULT_LAMBDAS, var_frac: float = 0.95,
                  k: int = 0, H: int = 0) -> ReadoutModel:
    pca = fit_pca(phi[tr], var_frac)
    Ztr, Zva = pca.transform(phi[tr]), pca.transform(phi[va])
    lam = select_lambda(lambdas, Ztr, y[tr], Zva, y[va])
    return ReadoutModel(pca, fit_ridge(add_bias(Ztr), y[tr], lam), k, H)


def predict(model: ReadoutModel, phi) -> np.ndarray:
    return model.ridge.predict(model.pca.transform(phi))


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class OffsetResult:
    H: int
    k: int
    offset: int
    lam: float
    n_components: int
    nrmse: float
    correlation: float


def evaluate_offset(states, u, H: int, k: int, offset: int, n_offsets: int = 6,
                    ratios=DEFAULT_RATIOS, lambdas=DEFAULT_LAMBDAS,
                    var_frac: float = 0.95) -> OffsetResult:
    phi, y, _ = supervised_rows(states, u, k, H)
    tr, va, te = split(len(y), SplitSpec(tuple(ratios), n_offsets, offset), k)
    model = train_readout(phi, y, tr, va, lambdas, var_frac, k, H)
    pred = predict(model, phi[te])
    try:
        e = nrmse(pred, y[te])
    except MetricError:
        e = float("nan")
    try:
        c = pearson(pred, y[te])
    except MetricError:
        c = float("nan")
    return OffsetResult(H, k, offset, model.lam, model.pca.n_components, e, c)


def median_even(values) -> float:
    """Median; for an even count, the mean of the two middle order statistics."""
    v = np.sort(np.asarray(values, dtype=float))
    v = v[~np.isnan(v)]
    if v.size == 0:
        return float("nan")
    mid = v.size // 2
    return float(v[mid]) if v.size % 2 else float(0.5 * (v[mid - 1] + v[mid]))


@dataclass
class Evaluation:
    per_offset: list[OffsetResult]
    median_nrmse: float
    median_correlation: float


def evaluate(states, u, H: int, k: int, n_offsets: int = 6, **kw) -> Evaluation:
    res = [evaluate_offset(states, u, H, k, o, n_offsets, **kw) for o in range(n_offsets)]
    return Evaluation(res, median_even([r.nrmse for r in res]),
                      median_even([r.correlation for r in res]))


_POOL_DATA: dict = {}


def _pool_init(states, u, kw):
    _POOL_DATA.update(states=states, u=u, kw=kw)


def _pool_task(args):
    H, k, o, n_offsets = args
    return evaluate_offset(_POOL_DATA["states"], _POOL_DATA["u"], H, k, o, n_offsets,
                           **_POOL_DATA["kw"])


def sweep(states, u, H_list, k_list, n_offsets: int = 6, workers: int = 1,
          **kw) -> dict[tuple[int, int], Evaluation]:
    """Evaluate every ``(H, k)`` pair; results keyed and ordered canonically."""
    tasks = [(H, k, o, n_offsets) for H in sorted(H_list) for k in sorted(k_list)
             for o in range(n_offsets)]
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_pool_init,
                                 initargs=(np.asarray(states), np.asarray(u), kw)) as ex:
            flat = list(ex.map(_pool_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        flat = [evaluate_offset(states, u, H, k, o, n, **kw) for H, k, o, n in tasks]
    out = {}
    for i in range(0, len(flat), n_offsets):
        chunk = flat[i:i + n_offsets]
        out[(chunk[0].H, chunk[0].k)] = Evaluation(
            chunk, median_even([r.nrmse for r in chunk]),
            median_even([r.correlation for r in chunk]))
    return out


def memory_curve(states, u, d_max: int = 50, ratios=DEFAULT_RATIOS,
                 lambdas=DEFAULT_LAMBDAS, var_frac: float = 1.0,
                 offsets=None, n_offsets: int = 6) -> MemoryCurve:
    """Test-set R^2 of reconstructing ``u[n-d]`` from ``r[n]`` for ``d = 1..d_max``.

    One PCA + ridge readout per delay and split offset; the per-delay R^2 is
    the median across ``offsets`` (all ``n_offsets`` rotations by default, the
    same protocol as :func:`evaluate`).  The PCA here keeps every non-null
    direction by default so that no delay is lost to truncation.
    """
    states = np.asarray(states, dtype=float)
    u = np.asarray(u, dtype=float)
    T = len(states)
    if d_max < 0:
        raise ConfigurationError("d_max must be >= 0")
    if d_max == 0:
        return MemoryCurve(np.zeros(0))
    if T - d_max < 10:
        raise InsufficientDataError(f"{T} states are too few for d_max={d_max}")
    r2 = []
    for d in range(1, d_max + 1):
        x, y = states[d:], u[:T - d]
        vals = []
        for o in (range(n_offsets) if offsets is None else offsets):
            tr, va, te = split(len(y), SplitSpec(tuple(ratios), n_offsets, o))
            model = train_readout(x, y, tr, va, lambdas, var_frac, 0, -d)
            try:
                vals.append(r_squared(predict(model, x[te]), y[te]))
            except MetricError:
                vals.append(0.0)
        r2.append(median_even(vals))
    return MemoryCurve(np.array(r2))
