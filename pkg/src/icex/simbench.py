r"""Synthetic trials and the Monte-Carlo robustness benchmark.

One trial builds K parallel mixtures x^k = A^k u^k with u^k = [s^k; z^k]:
the target rows s^1..s^K are mutually dependent circular Laplace signals
(independent rows mixed by a random unitary, which keeps them uncorrelated
while their envelopes stay positively correlated), and each background z^k
has d - 1 independent rows drawn from the chosen distribution.  Per
mixture, the target row is scaled so its empirical power equals a signal
ratio drawn from ``sr_choices_db`` while the background rows have exactly
unit empirical power, so the "weak target / strong target" regimes of the
study are hit exactly rather than on average.

Every algorithm is initialized from the same perturbed steering vector
a_ini = a_true + e with e drawn uniformly on the orthocomplement of a_true
and ||e||^2 = epsilon_sq exactly; the perturbation direction is shared
across the epsilon grid of a trial, so success curves are directly
comparable point to point.  Mixtures, signals and perturbation directions
are all derived from per-trial seed streams, and all algorithms consume
identical trials (paired comparison).

Success is defined as a positive output signal-to-interference ratio
(:func:`sir_db`) of the final weights against the ground-truth mixing
columns.  :func:`run_experiment` sweeps algorithms x backgrounds x
epsilon_sq cells, optionally across processes, and returns per-cell
summary rows plus the raw per-extraction SIR values.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, ice, ive
from .ice import SolverConfig
from .linalg import Rng, random_unitary
from .mixing import background_basis
from .scores import ScoreModel

__all__ = [
    "TrialConfig",
    "Trial",
    "ExperimentConfig",
    "CellResult",
    "ALGORITHMS",
    "gen_circular_laplace",
    "gen_circular_gaussian",
    "gen_dependent_sois",
    "gen_mixing_matrix",
    "build_trial",
    "perturb_init",
    "sir_db",
    "histogram_counts",
    "trial_seed",
    "run_cell",
    "run_experiment",
]

BACKGROUNDS = ("circular-laplace", "circular-gaussian")

ALGORITHMS = ("mpdr_oracle", "mpdr_ini", "ogice_w", "ogice_a", "ogice_s",
              "ogive_w", "ogive_a", "ogive_s", "ogive_s_pilot", "fica",
              "ng", "scng")

# |s| of the circular Laplace law has density c^2 r exp(-c r); c = sqrt(6)
# gives E|s|^2 = 6 / c^2 = 1.
LAPLACE_RATE = np.sqrt(6.0)

MIXING_COND_LIMIT = 1e6

SIR_CAP_DB = 150.0

OGICE_SETTINGS = SolverConfig(step_mu=0.1, tol=1e-3, max_iter=5000)
OGIVE_SETTINGS = SolverConfig(step_mu=0.1, tol=1e-3, max_iter=4000)
ICA_SETTINGS = {"mu": 0.02, "tol": 1e-3, "max_iter": 5000}
FICA_SETTINGS = {"tol": 1e-6, "max_iter": 1000}


def gen_circular_laplace(rows: int, N: int, rng: Rng) -> np.ndarray:
    """(rows, N) i.i.d. circular Laplace samples with E|s|^2 = 1.

    The modulus is Gamma(2, 1/c)-distributed (c = sqrt(6)), drawn as the
    sum of two exponentials; the phase is uniform.
    """
    u1 = rng.uniform((rows, N))
    u2 = rng.uniform((rows, N))
    r = -(np.log1p(-u1) + np.log1p(-u2)) / LAPLACE_RATE
    phase = np.exp(2j * np.pi * rng.uniform((rows, N)))
    return r * phase


def gen_circular_gaussian(rows: int, N: int, rng: Rng) -> np.ndarray:
    """(rows, N) i.i.d. circular complex Gaussian samples with E|s|^2 = 1."""
    return rng.complex_normal((rows, N))


def gen_dependent_sois(K: int, N: int, rng: Rng) -> np.ndarray:
    """K mutually dependent, mutually uncorrelated unit-power target rows.

    Independent circular Laplace rows are mixed by a Haar-random unitary:
    second moments stay white (E s s^H = I) while the squared envelopes
    |s_k|^2 remain positively correlated across rows, the regime the
    jointly coupled solvers exploit.
    """
    L = gen_circular_laplace(K, N, rng.split(0))
    if K == 1:
        return L
    U = random_unitary(K, rng.split(1))
    return U @ L


def gen_mixing_matrix(d: int, rng: Rng) -> np.ndarray:
    """d x d mixing matrix with entries Re ~ U[1, 2), Im ~ U[0, 1).

    Redrawn until the condition number is below 1e6 (the positive-mean
    entries keep the columns far from orthogonal but almost never
    degenerate; the guard removes the rare pathological draw).
    """
    for attempt in range(100):
        sub = rng.split(attempt)
        A = ((1.0 + sub.uniform((d, d)))
             + 1j * sub.split(1).uniform((d, d)))
        if np.linalg.cond(A) <= MIXING_COND_LIMIT:
            return A
    raise RuntimeError("could not draw a well-conditioned mixing matrix")


@dataclass(frozen=True)
class TrialConfig:
    """Everything that determines one trial's data (independent of eps)."""

    d: int = 6
    K: int = 4
    N: int = 1000
    background: str = "circular-laplace"
    sr_choices_db: tuple[float, ...] = (-10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")
        if self.d < 2 or self.K < 1 or self.N < self.d:
            raise ValueError("need d >= 2, K >= 1 and N >= d")


@dataclass
class Trial:
    """One realized trial: mixtures plus the ground truth that scored them.

    Attributes:
        X_blocks: (K, d, N) observed mixtures.
        A_blocks: (K, d, d) mixing matrices; column 0 is the target column.
        variances: (K, d) exact empirical source powers per mixture.
        sr_db: (K,) target-to-background ratio drawn for each mixture.
        soi: (K, N) scaled target rows.
        pilot: (N,) unit-norm random combination of the target rows.
    """

    config: TrialConfig
    X_blocks: np.ndarray
    A_blocks: np.ndarray
    variances: np.ndarray
    sr_db: np.ndarray
    soi: np.ndarray
    pilot: np.ndarray

    @property
    def a_true(self) -> np.ndarray:
        return self.A_blocks[:, :, 0]


def build_trial(cfg: TrialConfig) -> Trial:
    """Deterministically realize one trial from its config.

    The target rows are rescaled so that each row's empirical power equals
    its drawn signal ratio exactly, and each background row has exactly
    unit empirical power.
    """
    root = Rng(cfg.seed)
    d, K, N = cfg.d, cfg.K, cfg.N

    A_blocks = np.stack([gen_mixing_matrix(d, root.split(0).split(k))
                         for k in range(K)])
    soi = gen_dependent_sois(K, N, root.split(1))
    if cfg.background == "circular-laplace":
        bg = gen_circular_laplace(K * (d - 1), N, root.split(2))
    else:
        bg = gen_circular_gaussian(K * (d - 1), N, root.split(2))
    bg = bg.reshape(K, d - 1, N)
    sr_db = np.asarray(root.split(3).choice(cfg.sr_choices_db, size=K),
                       dtype=float)

    sr_lin = 10.0 ** (sr_db / 10.0)
    soi_power = np.mean(np.abs(soi) ** 2, axis=1)
    soi = soi * np.sqrt(sr_lin / soi_power)[:, None]
    bg_power = np.mean(np.abs(bg) ** 2, axis=2)
    bg = bg / np.sqrt(bg_power)[:, :, None]

    X_blocks = np.empty((K, d, N), dtype=np.complex128)
    for k in range(K):
        u = np.vstack([soi[k][None, :], bg[k]])
        X_blocks[k] = A_blocks[k] @ u

    variances = np.ones((K, d))
    variances[:, 0] = sr_lin

    coef = root.split(4).complex_normal(K)
    coef = coef / np.linalg.norm(coef)
    pilot = coef @ soi

    return Trial(config=cfg, X_blocks=X_blocks, A_blocks=A_blocks,
                 variances=variances, sr_db=sr_db, soi=soi, pilot=pilot)


def perturb_init(a_true, epsilon_sq: float, rng: Rng) -> np.ndarray:
    """a_true + e with e uniform on the orthocomplement, ||e||^2 exact.

    The direction is an isotropic complex Gaussian projected onto the
    orthocomplement of a_true and rescaled to length sqrt(epsilon_sq), so
    both the orthogonality and the perturbation size hold exactly.
    """
    a = np.asarray(a_true, dtype=np.complex128).reshape(-1)
    if epsilon_sq < 0.0:
        raise ValueError("epsilon_sq must be non-negative")
    if epsilon_sq == 0.0:
        return a.copy()
    na2 = np.real(np.vdot(a, a))
    for attempt in range(100):
        v = rng.split(attempt).complex_normal(a.size)
        e = v - a * (np.vdot(a, v) / na2)
        ne = np.linalg.norm(e)
        if ne > 1e-12:
            return a + e * (np.sqrt(epsilon_sq) / ne)
    raise RuntimeError("could not draw a perturbation direction")


def trial_inits(trial: Trial, epsilon_sq: float) -> np.ndarray:
    """(K, d) perturbed steering vectors for one trial.

    Derived from the trial's own seed, with the direction stream
    independent of epsilon_sq: across the epsilon grid, each mixture keeps
    the same perturbation direction at growing length.
    """
    root = Rng(trial.config.seed)
    return np.stack([perturb_init(trial.a_true[k], epsilon_sq,
                                  root.split(5).split(k))
                     for k in range(trial.config.K)])


def sir_db(w, A, variances, cap_db: float = SIR_CAP_DB) -> float:
    """Output signal-to-interference ratio of weights w in dB.

    10 log10(|w^H a_1|^2 v_1 / sum_{i>=2} |w^H a_i|^2 v_i) for mixing
    columns a_i with source powers v_i, clipped to +-cap_db so that exact
    recoveries stay finite.
    """
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    A = np.asarray(A, dtype=np.complex128)
    v = np.asarray(variances, dtype=float).reshape(-1)
    g2 = np.abs(np.conj(w) @ A) ** 2 * v
    num = float(g2[0])
    den = float(np.sum(g2[1:]))
    if den <= 0.0:
        return cap_db if num > 0.0 else -cap_db
    if num <= 0.0:
        return -cap_db
    return float(np.clip(10.0 * np.log10(num / den), -cap_db, cap_db))


def _sir_batch(W: np.ndarray, A: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sir_db` for (m, d) weights against (m, d, d) truths."""
    g = np.einsum("bi,bij->bj", np.conj(W), A)
    g2 = np.abs(g) ** 2 * V
    num = g2[:, 0]
    den = np.sum(g2[:, 1:], axis=1)
    out = np.full(num.shape, -SIR_CAP_DB)
    with np.errstate(all="ignore"):
        val = 10.0 * np.log10(num / den)
    pos_num = num > 0.0
    out[pos_num & (den <= 0.0)] = SIR_CAP_DB
    good = pos_num & (den > 0.0) & np.isfinite(val)
    out[good] = np.clip(val[good], -SIR_CAP_DB, SIR_CAP_DB)
    return out


def histogram_counts(values, lo: float = -50.0, hi: float = 50.0,
                     width: float = 2.0):
    """Histogram with fixed-width bins; values are clipped into [lo, hi].

    Returns (edges, counts) with len(edges) = len(counts) + 1.
    """
    values = np.clip(np.asarray(values, dtype=float), lo, hi)
    nbins = int(round((hi - lo) / width))
    counts, edges = np.histogram(values, bins=nbins, range=(lo, hi))
    return edges, counts


@dataclass(frozen=True)
class ExperimentConfig:
    """The full benchmark grid and its execution settings."""

    d: int = 6
    K: int = 4
    N: int = 1000
    trials: int = 200
    epsilon_sq: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0)
    backgrounds: tuple[str, ...] = BACKGROUNDS
    sr_choices_db: tuple[float, ...] = (-10.0, 10.0)
    algorithms: tuple[str, ...] = ALGORITHMS
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        for b in self.backgrounds:
            if b not in BACKGROUNDS:
                raise ValueError(f"unknown background {b!r}")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}")
        if self.trials < 1 or self.jobs < 1:
            raise ValueError("trials and jobs must be at least 1")
        if len(set(self.epsilon_sq)) != len(self.epsilon_sq):
            raise ValueError("epsilon_sq values must be distinct")


@dataclass
class CellResult:
    """Raw outcome of one (algorithm, background, epsilon_sq) cell."""

    algorithm: str
    background: str
    epsilon_sq: float
    sir: np.ndarray        # per extraction (trials * K)
    iters: np.ndarray      # per extraction
    converged: np.ndarray  # per extraction
    row: dict = field(default_factory=dict)


def trial_seed(master: int, background_index: int, trial_index: int) -> int:
    """Collision-free per-trial seed, independent of execution order."""
    ss = np.random.SeedSequence(master,
                                spawn_key=(background_index, trial_index))
    return int(ss.generate_state(1, np.uint64)[0])


def _gather_cell_data(cfg: ExperimentConfig, background: str,
                      epsilon_sq: float):
    bg_idx = BACKGROUNDS.index(background)
    trials = []
    for t in range(cfg.trials):
        tc = TrialConfig(d=cfg.d, K=cfg.K, N=cfg.N, background=background,
                         sr_choices_db=cfg.sr_choices_db,
                         seed=trial_seed(cfg.seed, bg_idx, t))
        trials.append(build_trial(tc))
    X = np.stack([tr.X_blocks for tr in trials])          # (B, K, d, N)
    A = np.stack([tr.A_blocks for tr in trials])          # (B, K, d, d)
    V = np.stack([tr.variances for tr in trials])         # (B, K, d)
    a_true = np.stack([tr.a_true for tr in trials])       # (B, K, d)
    a_ini = np.stack([trial_inits(tr, epsilon_sq) for tr in trials])
    pilots = np.stack([tr.pilot for tr in trials])        # (B, N)
    return X, A, V, a_true, a_ini, pilots


def _mpdr_weights_flat(Xf: np.ndarray, steer: np.ndarray) -> np.ndarray:
    """Batched minimum-power weights w = Cx^{-1} a / (a^H Cx^{-1} a)."""
    N = Xf.shape[-1]
    Cx = np.matmul(Xf, np.conj(np.swapaxes(Xf, 1, 2))) / N
    Cx = 0.5 * (Cx + np.conj(np.swapaxes(Cx, 1, 2)))
    u = np.linalg.solve(Cx, steer[:, :, None])[:, :, 0]
    t = np.real(np.einsum("bi,bi->b", np.conj(steer), u))
    return u / t[:, None]


def run_cell(cfg: ExperimentConfig, algorithm: str, background: str,
             epsilon_sq: float) -> CellResult:
    """Run every trial of one (algorithm, background, epsilon_sq) cell.

    All algorithms see identical trial data and identical perturbed
    initializations; outcomes are scored per extraction (K per trial).
    """
    X, A, V, a_true, a_ini, pilots = _gather_cell_data(cfg, background,
                                                       epsilon_sq)
    B, K, d, N = X.shape
    Xf = X.reshape(B * K, d, N)
    af_ini = a_ini.reshape(B * K, d)

    if algorithm in ("mpdr_oracle", "mpdr_ini"):
        steer = a_true.reshape(B * K, d) if algorithm == "mpdr_oracle" \
            else af_ini
        Wf = _mpdr_weights_flat(Xf, steer)
        iters = np.zeros(B * K, dtype=np.int64)
        conv = np.ones(B * K, dtype=bool)
    elif algorithm in ("ogice_w", "ogice_a", "ogice_s"):
        mode = algorithm[-1]
        start = _mpdr_weights_flat(Xf, af_ini) if mode == "w" else af_ini
        out = ice.run_batch(Xf, start, mode, config=OGICE_SETTINGS)
        Wf = out["w"]
        iters = out["iters"]
        conv = out["converged"]
    elif algorithm.startswith("ogive"):
        mode = "s" if algorithm.endswith("pilot") else algorithm[-1]
        if mode == "w":
            start = _mpdr_weights_flat(Xf, af_ini).reshape(B, K, d)
        else:
            start = a_ini
        if algorithm == "ogive_s_pilot":
            model = ScoreModel("piloted-vector", K=K)
            out = ive.run_joint_batch(X, start, mode, config=OGIVE_SETTINGS,
                                      model=model, pilot=pilots)
        else:
            out = ive.run_joint_batch(X, start, mode, config=OGIVE_SETTINGS)
        Wf = out["w"].reshape(B * K, d)
        iters = np.repeat(out["iters"], K)
        conv = np.repeat(out["converged"], K)
    elif algorithm == "fica":
        start = _mpdr_weights_flat(Xf, af_ini)
        out = baselines.fica_batch(Xf, start, **FICA_SETTINGS)
        Wf = out["w"]
        iters = out["iters"]
        conv = out["converged"]
    elif algorithm in ("ng", "scng"):
        w0 = _mpdr_weights_flat(Xf, af_ini)
        W0 = np.empty((B * K, d, d), dtype=np.complex128)
        W0[:, 0, :] = np.conj(w0)
        for i in range(B * K):
            W0[i, 1:, :] = background_basis(af_ini[i])
        out = baselines.ica_batch(Xf, W0, algorithm, **ICA_SETTINGS)
        Wf = np.conj(out["W"][:, 0, :])
        iters = out["iters"]
        conv = out["converged"]
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    sir = _sir_batch(Wf, A.reshape(B * K, d, d), V.reshape(B * K, d))
    row = {
        "algorithm": algorithm,
        "background": background,
        "epsilon_sq": epsilon_sq,
        "trials": int(sir.size),
        "success_rate": float(np.mean(sir > 0.0)),
        "sir_mean_db": float(np.mean(sir)),
        "sir_median_db": float(np.median(sir)),
        "mean_iters": float(np.mean(iters)),
    }
    return CellResult(algorithm=algorithm, background=background,
                      epsilon_sq=epsilon_sq, sir=sir, iters=iters,
                      converged=np.asarray(conv, dtype=bool), row=row)


def _cell_worker(args):
    cfg_kwargs, algorithm, background, epsilon_sq = args
    cfg = ExperimentConfig(**cfg_kwargs)
    return run_cell(cfg, algorithm, background, epsilon_sq)


def run_experiment(cfg: ExperimentConfig) -> list[CellResult]:
    """Run the whole benchmark grid, optionally across processes.

    Cells are independent work units; the returned list is ordered by
    (algorithm, background, epsilon_sq) as given in the config regardless
    of the execution schedule, so repeated runs produce identical output.
    """
    units = [(alg, bg, eps) for alg in cfg.algorithms
             for bg in cfg.backgrounds for eps in cfg.epsilon_sq]
    if cfg.jobs <= 1 or len(units) <= 1:
        return [run_cell(cfg, *u) for u in units]
    cfg_kwargs = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    args = [(cfg_kwargs, alg, bg, eps) for alg, bg, eps in units]
    with multiprocessing.get_context("fork").Pool(cfg.jobs) as pool:
        results = pool.map(_cell_worker, args, chunksize=1)
    return results


def serial_matches_batch(cfg: ExperimentConfig) -> bool:
    """True when a jobs=1 rerun reproduces a parallel run cell for cell."""
    one = run_experiment(replace(cfg, jobs=1))
    par = run_experiment(replace(cfg, jobs=max(2, cfg.jobs)))
    return all(np.array_equal(a.sir, b.sir) for a, b in zip(one, par))
