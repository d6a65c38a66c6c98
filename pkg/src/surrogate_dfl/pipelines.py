"""Training regimes (two-stage, decision-focused, surrogate), evaluation with
regret and wall-clock metrics, and the multi-seed experiment runner.

Decision-focused training solves the full problem per instance and chains
df/dw = df/dx . dx*/dtheta . dtheta/dw through the frozen KKT system; the
surrogate regime solves only the m-dimensional reparameterized problem and
additionally chains df/dP through dy*/dP.  Validation uses prediction loss
for two-stage and regret for the end-to-end methods, which is the quantity
they optimize.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import domains
from .diff import (
    adam_step,
    embedding_cosine_backward,
    embedding_cosine_matrix,
    init_adam,
    init_embeddings,
    init_mlp,
    mlp_backward_batch,
    mlp_forward_batch,
)
from .errors import EmptySplit, Infeasible, SingularKKT
from .optlayer import box_budget_qp, kkt_adjoint, kkt_jacobian_P, solve_qp
from .surrogate import (
    Reparameterization,
    SurrogateQp,
    default_m,
    export_reparam_csv,
    grad_wrt_P,
    init_reparam,
    lift,
    materialize,
    transform_problem,
)

METHODS = ("two-stage", "decision-focused", "surrogate")


def subseed(seed, tag: int):
    """Composite rng seed; keeps entropy flat for numpy's SeedSequence."""
    if isinstance(seed, (tuple, list)):
        return tuple(seed) + (tag,)
    return (seed, tag)


@dataclass
class TrainConfig:
    domain: str = "portfolio"
    methods: tuple = METHODS
    learning_rate: float = 0.01
    p_learning_rate: float = 0.01
    max_epochs: int = 100
    patience: int = 3
    n_seeds: int = 30
    surrogate_m: int = 0  # 0 -> ceil(0.1 n)
    surrogate_mode: str = "auto"  # per-domain default (column-simplex); see adapters
    # portfolio sizes
    n_securities: int = 50
    n_days: int = 100
    risk_aversion: float = 2.0
    # movie-rec sizes
    n_movies: int = 100
    users_per_group: int = 30
    n_groups: int = 10
    n_feature_movies: int = 20
    budget_k: int = 10
    picks_per_user: int = 3
    movie_latent_dim: int = 6
    movie_latent_scale: float = 0.4
    movie_noise: float = 0.1
    movie_feature_noise: float = 0.2
    movie_popularity: float = 0.3
    movie_spread: float = 3.5
    # predictive models
    hidden_size: int = 100
    embedding_dim: int = 32
    # solver knobs
    qp_max_iter: int = 200
    gamma: float = 0.1
    # run control
    timing_repeats: int = 1
    max_workers: int = 0  # 0 -> min(n_seeds, cpu count)
    out_dir: str = "runs"
    data_in: str = ""
    verbose: bool = False
    export_p: bool = False

    def seeds(self):
        return list(range(self.n_seeds))


@dataclass
class ReportRow:
    method: str
    seed: int
    mean_regret: float
    train_sec_per_epoch: float
    inference_sec: float
    epochs_run: int
    status: str = "ok"


@dataclass
class RegretReport:
    rows: list
    aggregates: dict = field(default_factory=dict)

    def aggregate(self):
        self.aggregates = {}
        by_method = {}
        for row in self.rows:
            if row.status == "ok":
                by_method.setdefault(row.method, []).append(row)
        for method, rows in by_method.items():
            regrets = np.array([r.mean_regret for r in rows])
            stderr = (
                float(np.std(regrets, ddof=1) / np.sqrt(len(regrets)))
                if len(regrets) > 1
                else 0.0
            )
            self.aggregates[method] = {
                "mean_regret": float(np.mean(regrets)),
                "stderr_regret": stderr,
                "mean_train_sec": float(np.mean([r.train_sec_per_epoch for r in rows])),
                "mean_inference_sec": float(np.mean([r.inference_sec for r in rows])),
            }
        return self.aggregates


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad = 0

    def update(self, value: float, epoch: int) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


# ---------------------------------------------------------------------------
# domain adapters


class PortfolioAdapter:
    """Markowitz portfolio: MLP predicts per-security returns, a learned
    embedding table predicts the covariance as cosine similarities."""

    name = "portfolio"

    def __init__(self, config: TrainConfig):
        self.config = config
        self.lam = config.risk_aversion
        self.n = config.n_securities
        self.base = domains.portfolio_base(self.n)
        self._oracle_cache = {}

    def generate(self, seed):
        return domains.gen_portfolio_data(
            self.n, self.config.n_days, seed, risk_aversion=self.lam
        )

    def init_models(self, seed):
        h = self.config.hidden_size
        return {
            "mlp": init_mlp([domains.N_FEATURES, h, h, 1], seed),
            "emb": init_embeddings(self.n, self.config.embedding_dim, subseed(seed, 1)),
        }

    def params(self, models):
        return models["mlp"].parameters() + models["emb"].parameters()

    def set_params(self, models, params):
        k = len(models["mlp"].parameters())
        models["mlp"].set_parameters(params[:k])
        models["emb"].set_parameters(params[k:])

    def predict(self, models, inst):
        p_hat, mlp_cache = mlp_forward_batch(models["mlp"], inst.features)
        Q_cos, emb_cache = embedding_cosine_matrix(models["emb"])
        Q_hat = Q_cos + domains.COV_RIDGE * np.eye(self.n)
        return {"p": p_hat[:, 0], "Q": Q_hat}, (mlp_cache, emb_cache)

    def two_stage_loss_grad(self, models, inst):
        theta, (mlp_cache, emb_cache) = self.predict(models, inst)
        dp = theta["p"] - inst.true_returns
        dQ = theta["Q"] - inst.true_covariance
        loss = float(dp @ dp + np.sum(dQ * dQ))
        mlp_grads, _ = mlp_backward_batch(models["mlp"], mlp_cache, (2.0 * dp)[:, None])
        emb_grad = embedding_cosine_backward(emb_cache, 2.0 * dQ)
        return loss, mlp_grads + [emb_grad]

    def full_qp(self, theta):
        return domains.portfolio_qp(theta["p"], theta["Q"], self.lam)

    def decision_full(self, theta, warm_key=None):
        qp = self.full_qp(theta)
        sol = solve_qp(qp, max_iter=self.config.qp_max_iter)
        return sol.y, sol, qp

    def surrogate_qp(self, theta, sp):
        return SurrogateQp(H_x=2.0 * self.lam * theta["Q"], c_x=-theta["p"], sp=sp)

    def decision_surrogate(self, theta, sp, warm_key=None):
        sqp = self.surrogate_qp(theta, sp)
        qp = sqp.qp()
        sol = solve_qp(qp, max_iter=self.config.qp_max_iter)
        return sol.y, lift(sp.P, sol.y), sol, sqp, qp

    def objective(self, x, inst):
        return domains.portfolio_objective(
            x, inst.true_returns, inst.true_covariance, self.lam
        )

    def loss_grad_x(self, x, inst):
        # decision loss is the negated achieved quality
        g = domains.portfolio_grad(x, inst.true_returns, inst.true_covariance, self.lam)
        return -self.objective(x, inst), -g

    def theta_grads_full(self, ctx, z_y, y_star):
        # c = -p and H = 2 lam Q give dL/dp = z_y, dL/dQ = -2 lam z_y y*^T
        return {"p": z_y.copy(), "Q": -2.0 * self.lam * np.outer(z_y, y_star)}

    def theta_grads_surrogate(self, sqp, z_y, y_star, ctx=None):
        P = sqp.P
        Pz = P @ z_y
        Py = P @ y_star
        return {"p": Pz, "Q": -2.0 * self.lam * np.outer(Pz, Py)}

    def backprop_models(self, models, caches, dtheta, grads_out):
        mlp_cache, emb_cache = caches
        mlp_grads, _ = mlp_backward_batch(models["mlp"], mlp_cache, dtheta["p"][:, None])
        emb_grad = embedding_cosine_backward(emb_cache, dtheta["Q"])
        for g_acc, g in zip(grads_out, mlp_grads + [emb_grad]):
            g_acc += g

    def oracle(self, inst, rounded=False):
        key = id(inst)
        if key not in self._oracle_cache:
            x = domains.portfolio_oracle_decision(
                inst.true_returns, inst.true_covariance, self.lam,
                max_iter=self.config.qp_max_iter,
            )
            self._oracle_cache[key] = (x, self.objective(x, inst))
        return self._oracle_cache[key]

    def test_decision(self, x):
        return x

    def surrogate_default_mode(self):
        return "column-simplex"


class MovieRecAdapter:
    """Movie broadcast: an MLP maps user feature ratings to per-movie
    preference scores; decisions come from the selection-frozen concave QP."""

    name = "movierec"

    def __init__(self, config: TrainConfig):
        self.config = config
        self.n = config.n_movies
        self.k = config.budget_k
        self.picks = config.picks_per_user
        self.gamma = config.gamma
        self.base = domains.movierec_base(self.n, self.k)
        self._oracle_cache = {}
        self._warm = {}

    def generate(self, seed):
        return domains.gen_movierec_data(
            self.n,
            self.config.users_per_group,
            self.config.n_groups,
            self.config.n_feature_movies,
            seed,
            budget_k=self.k,
            picks_per_user=self.picks,
            latent_dim=self.config.movie_latent_dim,
            latent_scale=self.config.movie_latent_scale,
            noise_scale=self.config.movie_noise,
            feature_noise=self.config.movie_feature_noise,
            popularity_scale=self.config.movie_popularity,
            spread_max=self.config.movie_spread,
        )

    def init_models(self, seed):
        h = self.config.hidden_size
        return {"mlp": init_mlp([self.config.n_feature_movies, h, h, self.n], seed)}

    def params(self, models):
        return models["mlp"].parameters()

    def set_params(self, models, params):
        models["mlp"].set_parameters(params)

    def predict(self, models, inst):
        scores, cache = mlp_forward_batch(models["mlp"], inst.user_features)
        return scores.T, cache  # (n_movies, n_users)

    def two_stage_loss_grad(self, models, inst):
        theta, cache = self.predict(models, inst)
        d = theta - inst.preferences
        loss = float(np.sum(d * d))
        grads, _ = mlp_backward_batch(models["mlp"], cache, (2.0 * d).T)
        return loss, grads

    def decision_full(self, theta, warm_key=None):
        x, sol, c_frozen, sel = domains.movierec_solve_relaxed(
            theta, self.k, self.picks, gamma=self.gamma,
            x0=self._warm.get(("full", warm_key)),
        )
        if warm_key is not None:
            self._warm[("full", warm_key)] = x
        qp = box_budget_qp(c_frozen, self.gamma, self.k)
        return x, sol, (qp, sel)

    def decision_surrogate(self, theta, sp, warm_key=None):
        # alternate selection freezes with exact y-space solves, mirroring
        # the full-problem path under x = P y; warm keys reuse the previous
        # epoch's solution on the same instance so selections evolve smoothly
        P = sp.P
        m = P.shape[1]
        x = self._warm.get(("sur", warm_key))
        if x is None:
            x = np.full(self.n, min(1.0, self.k / self.n))
        sel = domains.movierec_selection(x, theta, self.picks)
        sqp = sol = qp = None
        for _ in range(10):
            c_frozen = (sel * theta).sum(axis=1)
            sqp = SurrogateQp(
                H_x=np.zeros((self.n, self.n)),
                c_x=-c_frozen,
                sp=sp,
                H_extra=2.0 * self.gamma * np.eye(m),
            )
            qp = sqp.qp()
            sol = solve_qp(qp, max_iter=self.config.qp_max_iter)
            x = lift(P, sol.y)
            new_sel = domains.movierec_selection(x, theta, self.picks)
            if np.array_equal(new_sel, sel):
                break
            sel = new_sel
        if warm_key is not None:
            self._warm[("sur", warm_key)] = x
        return sol.y, x, sol, sqp, (qp, sel)

    def objective(self, x, inst):
        return domains.movierec_objective(x, inst.preferences, self.picks)

    def loss_grad_x(self, x, inst):
        g = domains.movierec_supergradient(x, inst.preferences, self.picks)
        return -self.objective(x, inst), -g

    def theta_grads_full(self, ctx, z_y, y_star):
        _, sel = ctx
        return z_y[:, None] * sel

    def theta_grads_surrogate(self, sqp, z_y, y_star, ctx):
        _, sel = ctx
        return (sqp.P @ z_y)[:, None] * sel

    def backprop_models(self, models, cache, dtheta, grads_out):
        grads, _ = mlp_backward_batch(models["mlp"], cache, dtheta.T)
        for g_acc, g in zip(grads_out, grads):
            g_acc += g

    def oracle(self, inst, rounded=False):
        key = (id(inst), rounded)
        if key not in self._oracle_cache:
            x = domains.movierec_oracle_decision(
                inst.preferences, self.k, self.picks, gamma=self.gamma, rounded=rounded
            )
            self._oracle_cache[key] = (x, self.objective(x, inst))
        return self._oracle_cache[key]

    def test_decision(self, x):
        return domains.round_top_k(x, self.k)

    def surrogate_default_mode(self):
        # softmax columns keep P >= 0 (the DR-submodularity hypothesis) and
        # concentrate much faster than the softplus floor during training
        return "column-simplex"


def get_adapter(config: TrainConfig):
    if config.domain == "portfolio":
        return PortfolioAdapter(config)
    if config.domain == "movierec":
        return MovieRecAdapter(config)
    raise ValueError(f"unknown domain {config.domain!r}")


# ---------------------------------------------------------------------------
# training regimes


@dataclass
class TrainResult:
    models: dict
    rep: Reparameterization
    epochs_run: int
    train_sec_per_epoch: float
    history: list


def _split(dataset, idx):
    return [dataset.instances[i] for i in idx]


def train_two_stage(models, dataset, config: TrainConfig, adapter=None) -> TrainResult:
    """Full-batch Adam on the squared prediction error; early stopping on the
    validation loss; returns the best-validation checkpoint."""
    adapter = adapter or get_adapter(config)
    train_set = _split(dataset, dataset.train_idx)
    val_set = _split(dataset, dataset.val_idx)
    if not train_set or not val_set:
        raise EmptySplit("two-stage training needs nonempty train and validation splits")
    params = adapter.params(models)
    state = init_adam(params, config.learning_rate)
    stopper = EarlyStopper(config.patience)
    best = [p.copy() for p in params]
    history = []
    train_time = 0.0
    epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        grads = [np.zeros_like(p) for p in params]
        train_loss = 0.0
        for inst in train_set:
            loss, g = adapter.two_stage_loss_grad(models, inst)
            train_loss += loss
            for acc, gi in zip(grads, g):
                acc += gi
        scale = 1.0 / len(train_set)
        grads = [g * scale for g in grads]
        params, state = adam_step(params, grads, state)
        adapter.set_params(models, params)
        train_time += time.perf_counter() - t0
        epochs = epoch
        val_loss = np.mean(
            [adapter.two_stage_loss_grad(models, inst)[0] for inst in val_set]
        )
        history.append((epoch, train_loss * scale, float(val_loss)))
        if stopper.update(float(val_loss), epoch):
            best = [p.copy() for p in params]
        if stopper.should_stop:
            break
    adapter.set_params(models, best)
    per_epoch = train_time / epochs if epochs else 0.0
    return TrainResult(models, None, epochs, per_epoch, history)


def _decision_and_grads(adapter, models, rep, sp, inst, train_P, idx):
    """One end-to-end forward/backward: returns (loss, caches, dtheta, dP_raw, x)."""
    theta, caches = adapter.predict(models, inst)
    try:
        if sp is None:
            x, sol, ctx = adapter.decision_full(theta, warm_key=idx)
            loss, dL_dx = adapter.loss_grad_x(x, inst)
            qp = ctx[0] if isinstance(ctx, tuple) else ctx
            z_y, _, _, _ = kkt_adjoint(qp, sol, dL_dx)
            dtheta = adapter.theta_grads_full(ctx, z_y, sol.y)
            dP_raw = None
        else:
            y_star, x, sol, sqp, ctx = adapter.decision_surrogate(theta, sp, warm_key=idx)
            loss, dL_dx = adapter.loss_grad_x(x, inst)
            dL_dy = sp.P.T @ dL_dx
            qp = ctx[0] if isinstance(ctx, tuple) else ctx
            z_y, _, _, _ = kkt_adjoint(qp, sol, dL_dy)
            dtheta = adapter.theta_grads_surrogate(sqp, z_y, y_star, ctx=ctx)
            dP_raw = None
            if train_P:
                dy_dP = kkt_jacobian_P(sqp, sol)
                dP_raw = grad_wrt_P(dL_dx, y_star, dy_dP, dL_dy, rep)
    except (Infeasible, SingularKKT) as exc:
        raise type(exc)(f"instance {idx}: {exc}") from exc
    return loss, caches, dtheta, dP_raw, x


def _regret_on(adapter, models, sp, instances, rounded=None):
    if rounded is None:
        rounded = adapter.name == "movierec"
    regrets = []
    for inst in instances:
        theta, _ = adapter.predict(models, inst)
        if sp is None:
            x, _, _ = adapter.decision_full(theta)
        else:
            _, x, _, _, _ = adapter.decision_surrogate(theta, sp)
        if rounded:
            x = adapter.test_decision(x)
        oracle_x, oracle_val = adapter.oracle(inst, rounded=rounded)
        regrets.append(oracle_val - adapter.objective(x, inst))
    return float(np.mean(regrets))


def _train_end_to_end(models, rep, dataset, config, adapter, train_P):
    train_set = _split(dataset, dataset.train_idx)
    val_set = _split(dataset, dataset.val_idx)
    if not train_set or not val_set:
        raise EmptySplit("training needs nonempty train and validation splits")
    params = adapter.params(models)
    state = init_adam(params, config.learning_rate)
    p_state = init_adam([rep.P_raw], config.p_learning_rate) if train_P else None
    stopper = EarlyStopper(config.patience)
    best_params = [p.copy() for p in params]
    best_raw = rep.P_raw.copy() if rep is not None else None
    history = []
    train_time = 0.0
    epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        sp = None
        if rep is not None:
            P = materialize(rep)
            sp = transform_problem(adapter.base, P, check_feasible=(epoch == 1))
        grads = [np.zeros_like(p) for p in params]
        p_grad = np.zeros_like(rep.P_raw) if train_P else None
        epoch_loss = 0.0
        for idx, inst in zip(dataset.train_idx, train_set):
            loss, caches, dtheta, dP_raw, _ = _decision_and_grads(
                adapter, models, rep, sp, inst, train_P, idx
            )
            epoch_loss += loss
            adapter.backprop_models(models, caches, _scale_theta(dtheta, 1.0 / len(train_set)), grads)
            if train_P and dP_raw is not None:
                p_grad += dP_raw / len(train_set)
        params, state = adam_step(params, grads, state)
        adapter.set_params(models, params)
        if train_P:
            new_raw, p_state = adam_step([rep.P_raw], [p_grad], p_state)
            rep.P_raw = new_raw[0]
        train_time += time.perf_counter() - t0
        epochs = epoch
        if rep is not None and config.export_p and config.verbose:
            os.makedirs(config.out_dir, exist_ok=True)
            export_reparam_csv(
                rep, os.path.join(config.out_dir, f"reparam_epoch_{epoch:03d}.csv")
            )
        val_sp = None
        if rep is not None:
            val_sp = transform_problem(adapter.base, materialize(rep), check_feasible=False)
        val_regret = _regret_on(adapter, models, val_sp, val_set)
        history.append((epoch, epoch_loss / len(train_set), val_regret))
        if stopper.update(val_regret, epoch):
            best_params = [p.copy() for p in params]
            if rep is not None:
                best_raw = rep.P_raw.copy()
        if stopper.should_stop:
            break
    adapter.set_params(models, best_params)
    if rep is not None:
        rep.P_raw = best_raw
    per_epoch = train_time / epochs if epochs else 0.0
    return TrainResult(models, rep, epochs, per_epoch, history)


def _scale_theta(dtheta, scale):
    if isinstance(dtheta, dict):
        return {k: v * scale for k, v in dtheta.items()}
    return dtheta * scale


def train_decision_focused(models, dataset, config: TrainConfig, adapter=None) -> TrainResult:
    """End-to-end training through the full optimization layer (x-space)."""
    adapter = adapter or get_adapter(config)
    return _train_end_to_end(models, None, dataset, config, adapter, train_P=False)


def train_surrogate(models, rep, dataset, config: TrainConfig, adapter=None,
                    train_P: bool = True) -> TrainResult:
    """Joint training of the predictive model and the reparameterization by
    solving only the m-dimensional surrogate problem."""
    adapter = adapter or get_adapter(config)
    return _train_end_to_end(models, rep, dataset, config, adapter, train_P=train_P)


def make_reparam(config: TrainConfig, adapter, seed) -> Reparameterization:
    n = adapter.base.n
    m = config.surrogate_m or default_m(n)
    mode = config.surrogate_mode
    if mode == "auto":
        mode = adapter.surrogate_default_mode()
    return init_reparam(n, m, mode, seed)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    regrets: np.ndarray
    inference_sec: float
    max_violation: float
    decisions: list


def evaluate(models, rep, dataset, config: TrainConfig, adapter=None,
             theta_override=None, timing_repeats: int = None) -> EvalResult:
    """Timed decisions plus regret for every test instance.

    The surrogate path (rep given) solves only the m-dimensional problem and
    lifts; the other paths solve the full problem.  Inference seconds are the
    median over timing repeats of the whole test pass.
    """
    adapter = adapter or get_adapter(config)
    test_set = _split(dataset, dataset.test_idx)
    if not test_set:
        raise EmptySplit("test split is empty")
    repeats = max(1, timing_repeats or config.timing_repeats)
    sp = None
    if rep is not None:
        sp = transform_problem(adapter.base, materialize(rep), check_feasible=False)

    def predict(inst):
        if theta_override is not None:
            return theta_override(inst)
        return adapter.predict(models, inst)[0]

    times = []
    decisions = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        decided = []
        for inst in test_set:
            theta = predict(inst)
            if sp is None:
                x, _, _ = adapter.decision_full(theta)
            else:
                _, x, _, _, _ = adapter.decision_surrogate(theta, sp)
            decided.append(x)
        times.append(time.perf_counter() - t0)
        decisions = decided
    regrets = []
    max_violation = 0.0
    final_decisions = []
    for inst, x in zip(test_set, decisions):
        x_final = adapter.test_decision(x)
        final_decisions.append(x_final)
        max_violation = max(max_violation, adapter.base.violation(x_final))
        oracle_x, oracle_val = adapter.oracle(inst, rounded=True)
        regrets.append(oracle_val - adapter.objective(x_final, inst))
    return EvalResult(
        regrets=np.array(regrets),
        inference_sec=float(np.median(times)),
        max_violation=max_violation,
        decisions=final_decisions,
    )


# ---------------------------------------------------------------------------
# experiment runner


def run_single(config: TrainConfig, method: str, seed: int):
    """Train one method on one seed and evaluate it; returns (row, extras)."""
    adapter = get_adapter(config)
    dataset = adapter.generate(subseed(seed, 0))
    models = adapter.init_models(subseed(seed, 1))
    rep = None
    if method == "two-stage":
        result = train_two_stage(models, dataset, config, adapter)
    elif method == "decision-focused":
        result = train_decision_focused(models, dataset, config, adapter)
    elif method == "surrogate":
        rep = make_reparam(config, adapter, subseed(seed, 2))
        result = train_surrogate(models, rep, dataset, config, adapter)
    else:
        raise ValueError(f"unknown method {method!r}")
    ev = evaluate(result.models, rep, dataset, config, adapter)
    row = ReportRow(
        method=method,
        seed=seed,
        mean_regret=float(np.mean(ev.regrets)),
        train_sec_per_epoch=result.train_sec_per_epoch,
        inference_sec=ev.inference_sec,
        epochs_run=result.epochs_run,
    )
    extras = {
        "max_violation": ev.max_violation,
        "min_regret": float(np.min(ev.regrets)),
        "rep": rep,
        "models": result.models,
        "history": result.history,
    }
    return row, extras


def _run_single_safe(args):
    config, method, seed = args
    try:
        row, extras = run_single(config, method, seed)
        return row, {"max_violation": extras["max_violation"], "min_regret": extras["min_regret"]}
    except Exception as exc:  # record and continue; seed failures must not abort the run
        return (
            ReportRow(method, seed, float("nan"), 0.0, 0.0, 0, f"error: {exc}"),
            {"max_violation": float("nan"), "min_regret": float("nan")},
        )


def run_experiment(config: TrainConfig) -> RegretReport:
    """Train and evaluate every configured method over every seed.

    Seed-level failures are recorded in their report row and do not abort the
    remaining runs.  Rows come back sorted by (method, seed) so reports are
    byte-stable across executions.
    """
    jobs = [(config, method, seed) for method in config.methods for seed in config.seeds()]
    workers = config.max_workers
    if workers <= 0:
        import os

        workers = min(len(config.seeds()), os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_single_safe, jobs))
    else:
        results = [_run_single_safe(job) for job in jobs]
    rows = [r for r, _ in results]
    rows.sort(key=lambda r: (r.method, r.seed))
    report = RegretReport(rows=rows)
    report.aggregate()
    return report


REPORT_HEADER = "method,seed,mean_regret,train_sec_per_epoch,inference_sec,epochs_run,status"
AGGREGATE_HEADER = "method,mean_regret,stderr_regret,mean_train_sec,mean_inference_sec"
TIMING_COLUMNS = ("train_sec_per_epoch", "inference_sec")


def write_report_csv(report: RegretReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("# timing columns (train_sec_per_epoch, inference_sec) are nondeterministic\n")
        fh.write(REPORT_HEADER + "\n")
        for r in report.rows:
            fh.write(
                f"{r.method},{r.seed},{_fmt(r.mean_regret)},{_fmt(r.train_sec_per_epoch)},"
                f"{_fmt(r.inference_sec)},{r.epochs_run},{r.status}\n"
            )


def write_aggregate_csv(report: RegretReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("# timing columns (mean_train_sec, mean_inference_sec) are nondeterministic\n")
        fh.write(AGGREGATE_HEADER + "\n")
        for method in sorted(report.aggregates):
            a = report.aggregates[method]
            fh.write(
                f"{method},{_fmt(a['mean_regret'])},{_fmt(a['stderr_regret'])},"
                f"{_fmt(a['mean_train_sec'])},{_fmt(a['mean_inference_sec'])}\n"
            )


def _fmt(v: float) -> str:
    return format(float(v), ".12g")
