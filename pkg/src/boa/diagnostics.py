"""Ledgers, offline comparators and evaluators of the regret and risk bounds.

Bound evaluators return a :class:`Bound` pairing the quantity the guarantee
controls (``lhs``) with the evaluated right-hand side (``rhs``).  Infima over
comparators are taken over point masses only, so the entropy term reduces to
``log(1 / prior_j)``.

Which left-hand side is compared depends on the excess-loss mode:

* centered: the weights-averaged cumulative loss of the experts;
* linearized: the cumulative loss of the aggregate prediction (sub-gradient
  trick);
* mixture: the mean of the two, against half of the second-order penalty.
  This follows from convexity exactly as the linearized case does.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_probability_vector
from .engine import ExcessLossMode
from .errors import EmptyHistory, EmptyLedger, EmptySample, FlaggedRun, NoAnalyticRisk
from .losses import LossKind, LossSpec, eval_loss, subgradient
from .rates import DEFAULT_C, RangeInfo


@dataclass
class Bound:
    lhs: np.ndarray | float
    rhs: np.ndarray | float

    @property
    def holds(self):
        out = np.asarray(self.lhs) <= np.asarray(self.rhs)
        return bool(out) if out.ndim == 0 else out

    @property
    def slack(self):
        return np.asarray(self.rhs) - np.asarray(self.lhs)


@dataclass
class RiskLedger:
    """Running totals of one run (or of a batch of runs in lockstep).

    Per-round histories are kept only with ``keep_history=True``; every
    bound evaluator works from the running totals.
    """

    prior: np.ndarray
    mode: ExcessLossMode = ExcessLossMode.CENTERED
    batch_shape: tuple = ()
    keep_history: bool = False
    loss_spec: LossSpec | None = None
    n: int = 0
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prior = as_probability_vector(self.prior)
        self.mode = ExcessLossMode(self.mode)
        b = tuple(self.batch_shape)
        bm = b + self.prior.shape
        self.cum_loss_agg = np.zeros(b)
        self.cum_expected_loss = np.zeros(b)
        self.cum_loss_experts = np.zeros(bm)
        self.sum_sq = np.zeros(bm)
        self.sum_eta_sq = np.zeros(bm)
        self.max_abs = np.zeros(bm)
        self.eta_first = np.zeros(bm)
        self.eta_last = np.zeros(bm)
        self.weight_sum = np.broadcast_to(self.prior, bm).copy()
        self.cum_risk_agg = None
        self.cum_expected_risk = None
        self.cum_risk_experts = None
        self.eta_flags = np.zeros(b, dtype=np.int64)
        self.range_doublings = np.zeros(b, dtype=np.int64)
        if self.keep_history:
            self.history = {key: [] for key in ("y", "fhat", "loss_agg", "preds", "losses",
                                                "ell", "eta", "weights")}
            self.history["weights"].append(np.broadcast_to(self.prior, bm).copy())

    def __len__(self):
        return self.n

    def record(self, w_prev, preds, y, losses, ell, eta_prev, eta_new, w_new,
               violation=None, doubled=None, risk_experts=None, risk_agg=None):
        """Add one round.  ``losses`` are the raw expert losses, ``risk_*``
        the conditional risks of the experts and of the aggregate when the
        environment provides them."""
        fhat = (w_prev * preds).sum(axis=-1)
        self.n += 1
        la = self._loss_agg(y, fhat)
        self.cum_loss_agg = self.cum_loss_agg + la
        self.cum_expected_loss = self.cum_expected_loss + (w_prev * losses).sum(axis=-1)
        self.cum_loss_experts = self.cum_loss_experts + losses
        self.sum_sq = self.sum_sq + ell**2
        self.sum_eta_sq = self.sum_eta_sq + eta_prev * ell**2
        self.max_abs = np.maximum(self.max_abs, np.abs(ell))
        if self.n == 1:
            self.eta_first = np.array(eta_new, dtype=float)
        self.eta_last = np.array(eta_new, dtype=float)
        self.weight_sum = self.weight_sum + w_new
        if violation is not None:
            self.eta_flags = self.eta_flags + np.asarray(violation).any(axis=-1)
        if doubled is not None:
            self.range_doublings = self.range_doublings + np.asarray(doubled).sum(axis=-1)
        if risk_experts is not None:
            if self.cum_risk_experts is None:
                if self.n != 1:
                    raise NoAnalyticRisk("risks must be supplied from the first round on")
                self.cum_risk_experts = np.zeros_like(self.cum_loss_experts)
                self.cum_expected_risk = np.zeros_like(self.cum_loss_agg)
                self.cum_risk_agg = np.zeros_like(self.cum_loss_agg)
            self.cum_risk_experts = self.cum_risk_experts + risk_experts
            self.cum_expected_risk = self.cum_expected_risk + (w_prev * risk_experts).sum(axis=-1)
            self.cum_risk_agg = self.cum_risk_agg + risk_agg
        if self.keep_history:
            h = self.history
            for key, val in (("y", y), ("fhat", fhat), ("loss_agg", la), ("preds", preds),
                             ("losses", losses), ("ell", ell), ("eta", eta_new), ("weights", w_new)):
                h[key].append(np.array(val, dtype=float))

    def _loss_agg(self, y, fhat):
        if self.loss_spec is None:
            raise ValueError("ledger needs a loss_spec to score the aggregate")
        return np.asarray(eval_loss(self.loss_spec, y, fhat), dtype=float)

    def batch_weights(self) -> np.ndarray:
        """Mean of pi_0..pi_n, the weights of the batch predictor."""
        return self.weight_sum / (self.n + 1)

    @property
    def has_risks(self) -> bool:
        return self.cum_risk_experts is not None


def _nonempty(ledger):
    if ledger.n == 0:
        raise EmptyLedger("no rounds recorded")


def regret_vs_best_expert(ledger: RiskLedger):
    """Cumulative loss of the aggregate minus that of the best expert."""
    _nonempty(ledger)
    out = ledger.cum_loss_agg - ledger.cum_loss_experts.min(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def best_expert(ledger: RiskLedger):
    _nonempty(ledger)
    # argmin resolves ties to the lowest index
    return np.argmin(ledger.cum_loss_experts, axis=-1)


def _check_flags(ledger, allow_flagged):
    if not allow_flagged and np.any(ledger.eta_flags > 0):
        raise FlaggedRun("the learning-rate condition was violated during the run")


def _mode_bound(mode, comparator, extra, agg, expected):
    """Combine per-expert penalties ``extra`` into a point-mass-inf bound."""
    if mode is ExcessLossMode.CENTERED:
        return Bound(expected, (comparator + extra).min(axis=-1))
    if mode is ExcessLossMode.LINEARIZED:
        return Bound(agg, (comparator + extra).min(axis=-1))
    return Bound(0.5 * (agg + expected), (comparator + 0.5 * extra).min(axis=-1))


def _loss_bound(ledger, extra):
    return _mode_bound(ledger.mode, ledger.cum_loss_experts, extra,
                       ledger.cum_loss_agg, ledger.cum_expected_loss)


def _risk_bound(ledger, extra):
    if not ledger.has_risks:
        raise NoAnalyticRisk("the ledger carries no conditional risks")
    return _mode_bound(ledger.mode, ledger.cum_risk_experts, extra,
                       ledger.cum_risk_agg, ledger.cum_expected_risk)


def _log_inv(prior):
    return np.log(1.0 / np.asarray(prior, dtype=float))


def bound_fixed_ms(ledger: RiskLedger, eta: float, prior=None, allow_flagged=False) -> Bound:
    """Fixed-rate second-order regret bound:
    min_j { R(f_j) + eta sum_t ell_{j,t}^2 + log(1/pi_{j,0}) / eta }."""
    _nonempty(ledger)
    _check_flags(ledger, allow_flagged)
    prior = ledger.prior if prior is None else prior
    extra = eta * ledger.sum_sq + _log_inv(prior) / eta
    return _loss_bound(ledger, extra)


def bound_multi(ledger: RiskLedger, etas, prior=None, allow_flagged=False) -> Bound:
    """Per-expert constant rates; the prior is reweighted by 1/eta_j."""
    _nonempty(ledger)
    _check_flags(ledger, allow_flagged)
    prior = ledger.prior if prior is None else np.asarray(prior, dtype=float)
    etas = np.asarray(etas, dtype=float)
    mean_inv = (prior / etas).sum(axis=-1, keepdims=True)
    extra = etas * ledger.sum_sq + (_log_inv(prior) + np.log(etas * mean_inv)) / etas
    return _loss_bound(ledger, extra)


def bound_time_varying(ledger: RiskLedger, prior=None, allow_flagged=False) -> Bound:
    """Bound for nonincreasing rates eta_{j,t} with eta_{j,t-1} ell_{j,t} <= 1/2:
    sum_t eta_{j,t-1} ell^2 + (log(1/pi_j0) + log(1 + E_pi0[log(eta_j1/eta_jn)])) / eta_jn."""
    _nonempty(ledger)
    _check_flags(ledger, allow_flagged)
    prior = ledger.prior if prior is None else np.asarray(prior, dtype=float)
    ratio = (prior * np.log(ledger.eta_first / ledger.eta_last)).sum(axis=-1, keepdims=True)
    extra = ledger.sum_eta_sq + (_log_inv(prior) + np.log1p(ratio)) / ledger.eta_last
    return _loss_bound(ledger, extra)


def b_known(n: int) -> float:
    return float(np.log(1.0 + 0.5 * np.log(n)))


def b_unknown(n: int, E, c: int = DEFAULT_C):
    """B_{n,E}; ``E`` may be an array of per-stream caps."""
    out = np.log(1.0 + 0.5 * np.log(n) + np.log(np.asarray(E, dtype=float)) + c * np.log(2.0))
    return float(out) if np.ndim(out) == 0 else out


def bound_adaptive(ledger: RiskLedger, prior, ranges: RangeInfo, n: int, known_range: bool,
                   allow_flagged=False) -> Bound:
    """Adaptive-rate regret bounds, with B_n for known ranges and B_{n,E} otherwise."""
    _nonempty(ledger)
    if known_range:
        _check_flags(ledger, allow_flagged)
    prior = np.asarray(ledger.prior if prior is None else prior, dtype=float)
    L = _log_inv(prior)
    S = np.sqrt(ledger.sum_sq)
    E = np.asarray(ranges.E, dtype=float)
    lead = np.sqrt(2.0 * L) / (np.sqrt(2.0) - 1.0)
    if known_range:
        B = b_known(n)
        extra = S * (lead + B / np.sqrt(L)) + E * (2.0 * L + 2.0 * B + 1.0)
    else:
        B = b_unknown(n, ranges.cap, ranges.c)
        extra = S * (lead + (B + 8.0 * E) / np.sqrt(L)) + 4.0 * E * (L + B + 3.0)
    return _loss_bound(ledger, extra)


def realized_ranges(ledger: RiskLedger, c: int = DEFAULT_C) -> RangeInfo:
    """Smallest admissible ranges: max(2^-c, max_t |ell_{j,t}|) per expert."""
    E = np.maximum(ledger.max_abs, 2.0 ** (-c))
    return RangeInfo(E=E, cap=E.max(axis=-1, keepdims=True), c=c)


def risk_bound_stochastic(ledger: RiskLedger, eta: float, prior, x: float, allow_flagged=False) -> Bound:
    """High-probability bound on the cumulative predictive risk:
    min_j { n R(f_j) + 2 eta sum_t ell_{j,t}^2 + (log(1/pi_{j,0}) + x) / eta }."""
    _nonempty(ledger)
    _check_flags(ledger, allow_flagged)
    if not x > 0:
        raise ValueError("x must be positive")
    prior = ledger.prior if prior is None else prior
    extra = 2.0 * eta * ledger.sum_sq + (_log_inv(prior) + x) / eta
    return _risk_bound(ledger, extra)


def risk_bound_adaptive(ledger: RiskLedger, prior, ranges: RangeInfo, n: int, x: float) -> Bound:
    """High-probability counterpart of the unknown-range regret bound."""
    _nonempty(ledger)
    prior = np.asarray(ledger.prior if prior is None else prior, dtype=float)
    L = _log_inv(prior)
    S = np.sqrt(ledger.sum_sq)
    E = np.asarray(ranges.E, dtype=float)
    B = b_unknown(n, ranges.cap, ranges.c)
    M = prior.shape[-1]
    extra = (S * ((np.sqrt(2.0) + 1.0) ** 2 * np.sqrt(L) + (2.0 * B + 16.0 * E + x) / np.sqrt(L))
             + 4.0 * E * (np.log(M) + 2.0 * B + 6.0 + x))
    return _risk_bound(ledger, extra)


def conversion_bound(ledger: RiskLedger, x: float) -> Bound:
    """Per-expert online-to-batch conversion, evaluated along the realized path.

    lhs[j] = E_pihat[R(f_j)] - R(f_j); rhs[j] adds the empirical second-order
    term and (log(1 + log(eta_j1/eta_jn)) + x)/eta_jn to the realized regret.
    The log-ratio is taken pathwise rather than in expectation.
    """
    _nonempty(ledger)
    if not ledger.has_risks:
        raise NoAnalyticRisk("the ledger carries no conditional risks")
    lhs = ledger.cum_expected_risk[..., None] - ledger.cum_risk_experts
    regret = ledger.cum_expected_loss[..., None] - ledger.cum_loss_experts
    ratio = np.log(ledger.eta_first / ledger.eta_last)
    rhs = regret + ledger.sum_eta_sq + (np.log1p(ratio) + x) / ledger.eta_last
    return Bound(lhs, rhs)


def fast_rate_bound(risks, eta: float, n_weights: int, x: float) -> float:
    """min_j R(f_j) + (log M + 2x) / (eta (n+1)) for the batch predictor.

    ``n_weights`` is n + 1, the number of averaged weight vectors.
    """
    risks = np.asarray(risks, dtype=float)
    return float(risks.min() + (np.log(risks.size) + 2.0 * x) / (eta * n_weights))


def fast_rate_bound_adaptive(risks, eta_star: float, range_CbD: float, n_weights: int, x: float,
                             c: int = DEFAULT_C) -> float:
    """Fast-rate bound for the adaptive procedure (uniform prior, M >= 3)."""
    risks = np.asarray(risks, dtype=float)
    M = risks.size
    B = b_unknown(n_weights, range_CbD, c)
    return float(risks.min()
                 + (34.0 * np.log(M) + 2.0 * B + 16.0 * range_CbD + 2.0 * x) / (eta_star * n_weights)
                 + range_CbD * (np.log(M) + 2.0 * B + 6.0 + x) / n_weights)


def batch_average(weight_history) -> np.ndarray:
    """Entrywise mean of pi_0..pi_n."""
    hist = [np.asarray(w, dtype=float) for w in weight_history]
    if not hist:
        raise EmptyHistory("no weights to average")
    return as_probability_vector(np.mean(np.stack(hist), axis=0))


def excess_risk_quantile(samples, q: float) -> float:
    """Empirical q-quantile with linear interpolation between order statistics."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise EmptySample("no samples")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    return float(np.quantile(samples, q, method="linear"))


@dataclass
class OracleResult:
    weights: np.ndarray
    value: float | np.ndarray
    converged: bool | np.ndarray


def _objective(preds, ys, spec):
    """Value and gradient over simplex points P of shape (B, K, M).

    ``preds`` is (B, n, M) and ``ys`` is (B, n).  The square loss works from
    Gram sufficient statistics, so the cost per evaluation is free of n.
    """
    if spec.kind is LossKind.SQUARE:
        G = np.einsum("bti,btj->bij", preds, preds)
        b = np.einsum("bti,bt->bi", preds, ys)
        s = np.einsum("bt,bt->b", ys, ys)

        def f(P):
            return s[:, None] - 2.0 * np.einsum("bki,bi->bk", P, b) + np.einsum("bki,bij,bkj->bk", P, G, P)

        def grad(P):
            return 2.0 * (np.einsum("bki,bij->bkj", P, G) - b[:, None, :])
        return f, grad

    def f(P):
        fhat = np.einsum("bki,bti->bkt", P, preds)
        return np.asarray(eval_loss(spec, ys[:, None, :], fhat)).sum(axis=-1)

    def grad(P):
        fhat = np.einsum("bki,bti->bkt", P, preds)
        return np.einsum("bkt,bti->bki", np.asarray(subgradient(spec, ys[:, None, :], fhat)), preds)
    return f, grad


def _golden_section(f1, B, iters=100):
    """Vectorized golden-section minimization of f1(s) over s in [0, 1]^B."""
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = np.zeros(B), np.ones(B)
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f1(c), f1(d)
    for _ in range(iters):
        left = fc <= fd
        a_n = np.where(left, a, c)
        b_n = np.where(left, d, b)
        c_n = np.where(left, b_n - inv * (b_n - a_n), d)
        d_n = np.where(left, c, a_n + inv * (b_n - a_n))
        fp = f1(np.where(left, c_n, d_n))
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        a, b, c, d = a_n, b_n, c_n, d_n
    keep_c = fc <= fd
    return np.where(keep_c, c, d), np.where(keep_c, fc, fd)


def best_convex_oracle(expert_preds, ys, spec: LossSpec, restarts: int = 20, iterations: int = 5000,
                       seed: int = 0, tol: float = 1e-6) -> OracleResult:
    """Best fixed convex combination of the experts in hindsight.

    Exponentiated gradient with step 1/(|g_0|_inf sqrt(k+1)) from ``restarts``
    Dirichlet starting points; vertices are kept as candidates and two experts
    are refined by golden-section search on the segment.  ``converged`` is
    False when the restarts end more than ``tol`` (relative) apart.

    ``expert_preds`` of shape (n, M) with ``ys`` of shape (n,) solves one
    problem; a leading batch axis solves independent problems at once, each
    with the same starting points.
    """
    preds = np.asarray(expert_preds, dtype=float)
    ys = np.asarray(ys, dtype=float)
    single = preds.ndim == 2
    if single:
        preds, ys = preds[None], ys[None]
    if preds.ndim != 3 or preds.shape[:2] != ys.shape or ys.shape[1] == 0:
        raise ValueError("need an (n, M) prediction matrix matching a nonempty outcome vector")
    B, _, M = preds.shape
    f, grad = _objective(preds, ys, spec)

    if M == 1:
        vals = f(np.ones((B, 1, 1)))[:, 0]
        return _pack(np.ones((B, 1)), vals, np.ones(B, dtype=bool), single)

    rng = np.random.default_rng(seed)
    P = np.broadcast_to(rng.dirichlet(np.ones(M), size=restarts), (B, restarts, M)).copy()
    logP = np.log(P)
    best_val = f(P)
    best_P = P.copy()
    g = grad(P)
    scale = np.abs(g).max(axis=-1, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    for k in range(iterations):
        logP = logP - g / (scale * np.sqrt(k + 1.0))
        logP -= logP.max(axis=-1, keepdims=True)
        P = np.exp(logP)
        P /= P.sum(axis=-1, keepdims=True)
        vals = f(P)
        better = vals < best_val
        best_val = np.where(better, vals, best_val)
        best_P = np.where(better[..., None], P, best_P)
        g = grad(P)
    lowest = best_val.min(axis=-1)
    spread = best_val.max(axis=-1) - lowest
    converged = spread <= tol * np.maximum(1.0, np.abs(lowest))

    candidates = [best_P, np.broadcast_to(np.eye(M), (B, M, M))]
    if M == 2:
        def seg(s):
            return f(np.stack([1.0 - s, s], axis=-1)[:, None, :])[:, 0]
        s, _ = _golden_section(seg, B)
        candidates.append(np.stack([1.0 - s, s], axis=-1)[:, None, :])
    cand = np.concatenate(candidates, axis=1)
    vals = f(cand)
    i = np.argmin(vals, axis=-1)
    rows = np.arange(B)
    return _pack(cand[rows, i], vals[rows, i], converged, single)


def _pack(weights, vals, converged, single):
    if single:
        return OracleResult(weights[0], float(vals[0]), bool(converged[0]))
    return OracleResult(weights, vals, converged)
