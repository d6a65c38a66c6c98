"""Benchmark decision problems: Markowitz portfolio and movie broadcast.

Both ship synthetic generators plus CSV ingestion through the same
featurization, objective/gradient oracles, oracle decisions under the true
parameters, and the regret metric.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BadDimensions, DimensionMismatch
from .optlayer import solve_box_budget_qp, solve_qp
from .surrogate import simplex_base, box_budget_base

RETURN_LAGS = 5
ROLLING_SHORT = 5
ROLLING_LONG = 10
FORWARD_WINDOW = 10
N_FEATURES = RETURN_LAGS + 2
COSINE_NORM_FLOOR = 1e-12
COV_RIDGE = 1e-6


@dataclass
class PortfolioInstance:
    features: np.ndarray  # (n_securities, N_FEATURES)
    true_returns: np.ndarray
    true_covariance: np.ndarray
    risk_aversion: float = 2.0


@dataclass
class MovieRecInstance:
    preferences: np.ndarray  # (n_movies, n_users), entries in [0, 1]
    user_features: np.ndarray  # (n_users, n_feature_movies)
    budget_k: int = 10
    picks_per_user: int = 3


@dataclass
class Dataset:
    domain: str
    instances: list
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    meta: dict = field(default_factory=dict)


def split_indices(count: int):
    """70/10/20 split; portfolio uses it chronologically, movie-rec by group."""
    n_train = int(np.floor(0.7 * count))
    n_val = int(np.floor(0.1 * count))
    idx = np.arange(count)
    return idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :]


def cosine_similarity_matrix(rows) -> np.ndarray:
    """Pairwise cosine of the rows; zero rows use the convention of 0
    off-diagonal and 1 on the diagonal."""
    rows = np.asarray(rows, dtype=float)
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms < COSINE_NORM_FLOOR, 1.0, norms)
    U = rows / safe[:, None]
    Q = U @ U.T
    np.fill_diagonal(Q, 1.0)
    return Q


# ---------------------------------------------------------------------------
# portfolio


def _portfolio_instances(prices: np.ndarray, risk_aversion: float):
    """Featurize a price matrix (n_securities x n_price_days).

    Day t yields features from the trailing ten returns, the next-day return
    as the ground-truth p, and the cosine of the next ten returns (plus a
    small ridge) as the ground-truth covariance.
    """
    n, n_prices = prices.shape
    if n_prices < ROLLING_LONG + FORWARD_WINDOW + 1:
        raise BadDimensions("price history too short for the feature windows")
    returns = prices[:, 1:] / prices[:, :-1] - 1.0  # returns[:, t-1] is r_t
    last_r = returns.shape[1]

    def r(t):
        return returns[:, t - 1]

    instances = []
    for t in range(ROLLING_LONG, last_r - FORWARD_WINDOW + 1):
        lags = np.stack([r(t - i) for i in range(RETURN_LAGS - 1, -1, -1)], axis=1)
        short = np.stack([r(t - i) for i in range(ROLLING_SHORT)], axis=1).mean(axis=1)
        long = np.stack([r(t - i) for i in range(ROLLING_LONG)], axis=1).mean(axis=1)
        feats = np.column_stack([lags, short, long])
        fwd = np.stack([r(t + 1 + i) for i in range(FORWARD_WINDOW)], axis=1)
        Q = cosine_similarity_matrix(fwd) + COV_RIDGE * np.eye(n)
        instances.append(
            PortfolioInstance(
                features=feats,
                true_returns=r(t + 1).copy(),
                true_covariance=Q,
                risk_aversion=risk_aversion,
            )
        )
    return instances


def gen_portfolio_data(
    n_securities: int,
    n_days: int,
    seed: int,
    risk_aversion: float = 2.0,
    n_factors: int = 3,
) -> Dataset:
    """Synthetic daily prices from a mean-reverting multiplicative process
    with factor-correlated noise; yields exactly n_days instances split
    chronologically 70/10/20."""
    if n_days <= 20:
        raise BadDimensions("n_days must exceed 20")
    if n_securities < 1:
        raise BadDimensions("need at least one security")
    rng = np.random.default_rng(seed)
    n_prices = n_days + ROLLING_LONG + FORWARD_WINDOW
    mu = np.log(100.0) + rng.normal(0.0, 0.2, n_securities)
    loadings = rng.normal(0.0, 0.01, size=(n_securities, n_factors))
    kappa = 0.1
    idio = 0.005
    s = mu + rng.normal(0.0, 0.05, n_securities)
    log_prices = [s.copy()]
    for _ in range(n_prices - 1):
        shock = loadings @ rng.normal(size=n_factors) + idio * rng.normal(size=n_securities)
        s = s + kappa * (mu - s) + shock
        log_prices.append(s.copy())
    prices = np.exp(np.array(log_prices).T)
    instances = _portfolio_instances(prices, risk_aversion)
    train, val, test = split_indices(len(instances))
    return Dataset(
        domain="portfolio",
        instances=instances,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        meta={"prices": prices, "risk_aversion": risk_aversion},
    )


def export_portfolio_csv(dataset: Dataset, path) -> None:
    """Write the underlying prices as `day,security,price` rows."""
    prices = dataset.meta["prices"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "security", "price"])
        for day in range(prices.shape[1]):
            for sec in range(prices.shape[0]):
                w.writerow([day, sec, format(prices[sec, day], ".12g")])


def ingest_portfolio_csv(path, risk_aversion: float = 2.0) -> Dataset:
    """Rebuild a portfolio Dataset from `day,security,price` rows through the
    same featurization as the generator."""
    days, secs, vals = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            days.append(int(row["day"]))
            secs.append(int(row["security"]))
            vals.append(float(row["price"]))
    day_ids = sorted(set(days))
    sec_ids = sorted(set(secs))
    day_pos = {d: i for i, d in enumerate(day_ids)}
    sec_pos = {s: i for i, s in enumerate(sec_ids)}
    prices = np.full((len(sec_ids), len(day_ids)), np.nan)
    for d, s, v in zip(days, secs, vals):
        prices[sec_pos[s], day_pos[d]] = v
    if np.any(np.isnan(prices)):
        raise BadDimensions("price table has missing (day, security) cells")
    instances = _portfolio_instances(prices, risk_aversion)
    train, val, test = split_indices(len(instances))
    return Dataset(
        domain="portfolio",
        instances=instances,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        meta={"prices": prices, "risk_aversion": risk_aversion},
    )


def portfolio_objective(x, p, Q, risk_aversion: float) -> float:
    """Penalized immediate return p.x - lambda x^T Q x (maximization form)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if x.shape != p.shape or Q.shape != (x.shape[0], x.shape[0]):
        raise DimensionMismatch("objective pieces do not chain")
    if risk_aversion < 0:
        raise ValueError("risk aversion must be nonnegative")
    return float(p @ x - risk_aversion * x @ Q @ x)


def portfolio_grad(x, p, Q, risk_aversion: float) -> np.ndarray:
    return np.asarray(p, dtype=float) - 2.0 * risk_aversion * np.asarray(Q) @ np.asarray(x)


def portfolio_qp(p, Q, risk_aversion: float):
    """The simplex-constrained minimization QP whose solution maximizes the
    penalized return under (p, Q)."""
    from .optlayer import QuadraticProgram

    n = len(p)
    return QuadraticProgram(
        H=2.0 * risk_aversion * np.asarray(Q, dtype=float),
        c=-np.asarray(p, dtype=float),
        Aeq=np.ones((1, n)),
        beq=np.array([1.0]),
        Gineq=-np.eye(n),
        hineq=np.zeros(n),
    )


def portfolio_oracle_decision(p, Q, risk_aversion: float, max_iter: int = 200) -> np.ndarray:
    return solve_qp(portfolio_qp(p, Q, risk_aversion), max_iter=max_iter).y


def portfolio_base(n: int):
    return simplex_base(n)


# ---------------------------------------------------------------------------
# movie broadcast


def gen_movierec_data(
    n_movies: int,
    users_per_group: int,
    n_groups: int,
    n_feature_movies: int,
    seed: int,
    budget_k: int = 10,
    picks_per_user: int = 3,
    latent_dim: int = 6,
    latent_scale: float = 1.0,
    noise_scale: float = 0.1,
    feature_noise: float = 0.05,
    popularity_scale: float = 0.0,
    spread_max: float = 0.0,
) -> Dataset:
    """Low-rank latent factors generate preferences in [0, 1]; user features
    are noisy ratings on held-out movies from the same factors; groups split
    70/10/20.

    popularity_scale adds a per-movie logit bias shared across users, giving
    the preference matrix a global quality axis.  spread_max draws a
    per-movie noise scale in [0.1 * spread_max, spread_max]: high-spread
    movies are loved by some users and ignored by others, which matters for
    top-picks selection but is invisible to a conditional-mean predictor."""
    for name, v in [
        ("n_movies", n_movies),
        ("users_per_group", users_per_group),
        ("n_groups", n_groups),
        ("n_feature_movies", n_feature_movies),
    ]:
        if v < 1:
            raise BadDimensions(f"{name} must be >= 1")
    if picks_per_user > n_movies or budget_k > n_movies:
        raise BadDimensions("picks_per_user and budget_k cannot exceed n_movies")
    rng = np.random.default_rng(seed)
    n_users = users_per_group * n_groups
    U = latent_scale * rng.normal(size=(n_users, latent_dim))
    V = latent_scale * rng.normal(size=(n_movies, latent_dim))
    V_feat = latent_scale * rng.normal(size=(n_feature_movies, latent_dim))
    popularity = popularity_scale * rng.normal(size=(n_movies, 1))
    spread = (
        rng.uniform(0.1 * spread_max, spread_max, size=(n_movies, 1))
        if spread_max > 0
        else np.zeros((n_movies, 1))
    )
    noise = noise_scale * rng.normal(size=(n_movies, n_users))
    idio = spread * rng.normal(size=(n_movies, n_users))
    theta = np.clip(_sigmoid(V @ U.T + popularity + idio + noise), 0.0, 1.0)
    features = _sigmoid(U @ V_feat.T) + feature_noise * rng.normal(
        size=(n_users, n_feature_movies)
    )
    instances = []
    for g in range(n_groups):
        cols = slice(g * users_per_group, (g + 1) * users_per_group)
        instances.append(
            MovieRecInstance(
                preferences=theta[:, cols].copy(),
                user_features=features[cols].copy(),
                budget_k=budget_k,
                picks_per_user=picks_per_user,
            )
        )
    train, val, test = split_indices(n_groups)
    return Dataset(
        domain="movierec",
        instances=instances,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        meta={"n_movies": n_movies, "budget_k": budget_k, "picks_per_user": picks_per_user},
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def export_movierec_csv(dataset: Dataset, path) -> None:
    """`user,movie,rating` rows; movie ids below n_movies carry the true
    preferences, ids above carry the feature-movie ratings."""
    n_movies = dataset.meta["n_movies"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "movie", "rating"])
        user_base = 0
        for inst in dataset.instances:
            n_users = inst.preferences.shape[1]
            for j in range(n_users):
                uid = user_base + j
                for i in range(n_movies):
                    w.writerow([uid, i, format(inst.preferences[i, j], ".12g")])
                for hidx in range(inst.user_features.shape[1]):
                    w.writerow(
                        [uid, n_movies + hidx, format(inst.user_features[j, hidx], ".12g")]
                    )
            user_base += n_users


def ingest_movierec_csv(
    path,
    n_movies: int,
    users_per_group: int,
    budget_k: int = 10,
    picks_per_user: int = 3,
) -> Dataset:
    """Rebuild a movie-rec Dataset from `user,movie,rating` rows; users are
    grouped in consecutive blocks of users_per_group."""
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            entries.append((int(row["user"]), int(row["movie"]), float(row["rating"])))
    user_ids = sorted({u for u, _, _ in entries})
    movie_ids = sorted({m for _, m, _ in entries})
    n_feature_movies = len([m for m in movie_ids if m >= n_movies])
    user_pos = {u: i for i, u in enumerate(user_ids)}
    n_users = len(user_ids)
    if n_users % users_per_group:
        raise BadDimensions("user count is not a multiple of users_per_group")
    theta = np.zeros((n_movies, n_users))
    features = np.zeros((n_users, n_feature_movies))
    for u, m, r in entries:
        if m < n_movies:
            theta[m, user_pos[u]] = np.clip(r, 0.0, 1.0)
        else:
            features[user_pos[u], m - n_movies] = r
    n_groups = n_users // users_per_group
    instances = []
    for g in range(n_groups):
        cols = slice(g * users_per_group, (g + 1) * users_per_group)
        instances.append(
            MovieRecInstance(
                preferences=theta[:, cols].copy(),
                user_features=features[cols].copy(),
                budget_k=budget_k,
                picks_per_user=picks_per_user,
            )
        )
    train, val, test = split_indices(n_groups)
    return Dataset(
        domain="movierec",
        instances=instances,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        meta={"n_movies": n_movies, "budget_k": budget_k, "picks_per_user": picks_per_user},
    )


def movierec_objective(x, theta, picks: int) -> float:
    """Each user gets the sum of their picks largest x_i * theta_ij values."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = x.shape[0]
    if theta.shape[0] != n:
        raise DimensionMismatch("theta rows must match len(x)")
    if picks > n:
        raise DimensionMismatch("picks cannot exceed the number of movies")
    vals = x[:, None] * theta
    if picks == n:
        return float(vals.sum())
    top = np.partition(vals, n - picks, axis=0)[n - picks :, :]
    return float(top.sum())


def movierec_selection(x, theta, picks: int) -> np.ndarray:
    """0/1 matrix of each user's top-`picks` movies by x_i * theta_ij.

    Ties break toward the lowest movie index (stable sort on descending
    value)."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    vals = x[:, None] * theta
    order = np.argsort(-vals, axis=0, kind="stable")
    sel = np.zeros_like(theta)
    cols = np.arange(theta.shape[1])
    for r in range(picks):
        sel[order[r], cols] = 1.0
    return sel


def movierec_supergradient(x, theta, picks: int) -> np.ndarray:
    """g_i = sum_j theta_ij over users whose top-picks set contains movie i."""
    theta = np.asarray(theta, dtype=float)
    sel = movierec_selection(x, theta, picks)
    return (sel * theta).sum(axis=1)


def movierec_base(n_movies: int, budget_k: int):
    return box_budget_base(n_movies, budget_k)


def movierec_solve_relaxed(
    theta, budget_k: int, picks: int, gamma: float = 0.1, max_rounds: int = 10,
    x0=None,
):
    """Continuous broadcast decision by alternating selection freezes with
    exact solves of the resulting strictly concave box-budget QP.

    Freezing each user's top picks turns the objective into c^T x with
    c_i = sum_j sel_ij theta_ij; the -gamma ||x||^2 regularizer makes the
    frozen problem strictly concave, and each alternation cannot decrease the
    regularized objective.  x0 seeds the first selection (uniform budget
    spread when omitted).  Returns (x, sol, c_frozen, sel).
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    x = np.full(n, min(1.0, budget_k / n)) if x0 is None else np.asarray(x0, dtype=float)
    sel = movierec_selection(x, theta, picks)
    sol = None
    c = None
    for _ in range(max_rounds):
        c = (sel * theta).sum(axis=1)
        sol = solve_box_budget_qp(c, gamma, budget_k)
        new_sel = movierec_selection(sol.y, theta, picks)
        x = sol.y
        if np.array_equal(new_sel, sel):
            break
        sel = new_sel
    return x, sol, c, sel


def movierec_greedy_set(theta, budget_k: int, picks: int) -> np.ndarray:
    """Standard greedy for the binary broadcast problem: repeatedly add the
    movie with the largest objective gain."""
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    chosen = np.zeros(n)
    current = 0.0
    for _ in range(min(budget_k, n)):
        best_gain, best_i = 0.0, -1
        for i in range(n):
            if chosen[i]:
                continue
            trial = chosen.copy()
            trial[i] = 1.0
            gain = movierec_objective(trial, theta, picks) - current
            if gain > best_gain + 1e-15:
                best_gain, best_i = gain, i
        if best_i < 0:
            break
        chosen[best_i] = 1.0
        current += best_gain
    return chosen


def round_top_k(x, k: int) -> np.ndarray:
    """Greedy rounding of a relaxed decision to its k largest coordinates."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[np.argsort(-x, kind="stable")[:k]] = 1.0
    return out


def movierec_oracle_decision(
    theta, budget_k: int, picks: int, gamma: float = 0.1, rounded: bool = True
) -> np.ndarray:
    """Best decision under the true preferences with the same solver family:
    the relaxed alternation solve (optionally rounded) or the greedy set,
    whichever scores higher."""
    x_relaxed, _, _, _ = movierec_solve_relaxed(theta, budget_k, picks, gamma=gamma)
    if not rounded:
        return x_relaxed
    candidates = [round_top_k(x_relaxed, budget_k), movierec_greedy_set(theta, budget_k, picks)]
    scores = [movierec_objective(c, theta, picks) for c in candidates]
    return candidates[int(np.argmax(scores))]


# ---------------------------------------------------------------------------
# regret


def regret(x_decided, theta_true, oracle, objective) -> float:
    """Oracle solution quality minus achieved quality under the true
    parameters; nonnegative up to solver tolerance."""
    x_star = oracle(theta_true)
    return float(objective(x_star, theta_true) - objective(x_decided, theta_true))


def project_box_budget(v, k: float) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= 1, sum x <= k}."""
    return solve_box_budget_qp(np.asarray(v, dtype=float), 0.5, k).y
