"""Fully-connected feedforward regression surrogate, written on numpy.

Hidden layers use ReLU, the output head is linear.  Training is minibatch
Adam on the mean squared error in standardized space, with early stopping
on the test-set MSE (the held-out rows double as the monitoring set) and
restoration of the best epoch's parameters.
"""

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .dataset import PreparedData, ScalerParams
from .errors import ParseError, TrainingError
from .rng import derive_int, derive_rng

log = logging.getLogger(__name__)

MODEL_SCHEMA = "tallyopt.surrogate"
MODEL_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetConfig:
    n_hidden_layers: int
    neurons_per_layer: int
    learning_rate: float
    batch_size: int
    max_epochs: int = 200
    patience: int = 20

    def __post_init__(self):
        if self.n_hidden_layers < 1 or self.neurons_per_layer < 1:
            raise ValueError("need at least one hidden layer with one neuron")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning rate must be positive and batch size >= 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")

    def layer_sizes(self, input_dim, output_dim=2):
        return [input_dim] + [self.neurons_per_layer] * self.n_hidden_layers + [output_dim]

    def n_params(self, input_dim, output_dim=2):
        sizes = self.layer_sizes(input_dim, output_dim)
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def make_grid(layers, neurons, learning_rates, batch_sizes, **kw):
    return [NetConfig(l, n, lr, b, **kw)
            for l, n, lr, b in itertools.product(layers, neurons, learning_rates, batch_sizes)]


# Hyperparameter grid of the original tuning study (144 configurations).
TABLE3_GRID = make_grid((1, 4, 7, 10), (100, 400, 700, 1000), (1e-3, 4e-4, 1e-4), (1, 2, 4))
# CI-sized subset of TABLE3_GRID.
REDUCED_GRID = make_grid((1, 4), (100, 400), (1e-3, 1e-4), (4,))


@dataclass
class SurrogateNet:
    weights: list
    biases: list
    config: NetConfig
    input_scaler: ScalerParams = None
    output_scaler: ScalerParams = None
    seed: int = 0
    dataset_hash: str = ""

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def predict(self, x):
        """Objectives in physical units for raw (unscaled) inputs."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.input_scaler is not None:
            x = self.input_scaler.transform(x)
        out = forward(self, x)
        if self.output_scaler is not None:
            out = self.output_scaler.inverse(out)
        return out


def init_net(config: NetConfig, input_dim, seed, output_dim=2) -> SurrogateNet:
    """Fan-in scaled uniform weights, zero biases.

    ReLU layers use limit sqrt(6 / fan_in), the linear head sqrt(3 / fan_in).
    """
    rng = derive_rng(seed, "init")
    sizes = config.layer_sizes(input_dim, output_dim)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 3.0 if i == len(sizes) - 2 else 6.0
        limit = np.sqrt(gain / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return SurrogateNet(weights, biases, config, seed=int(seed))


def _forward_params(weights, biases, x):
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = h @ w
        h += b
        np.maximum(h, 0.0, out=h)
    return h @ weights[-1] + biases[-1]


def forward(net: SurrogateNet, x):
    """Network output in scaled space for scaled inputs (vector or batch)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.input_dim:
        raise ValueError(f"expected inputs of dimension {net.input_dim}, got shape {x.shape}")
    out = _forward_params(net.weights, net.biases, x2)
    return out[0] if single else out


def loss_and_gradients(weights, biases, x, y):
    """MSE over all output elements and its gradients by backpropagation."""
    acts = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    out = h @ weights[-1] + biases[-1]
    diff = out - y
    loss = float(np.mean(diff * diff))
    g = diff * (2.0 / diff.size)
    grads_w = [None] * len(weights)
    grads_b = [None] * len(biases)
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i:
            g = (g @ weights[i].T) * (acts[i] > 0)
    return loss, grads_w, grads_b


def mse(y, yhat):
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError(f"shape mismatch or empty input: {y.shape} vs {yhat.shape}")
    return float(np.mean((y - yhat) ** 2))


def r2_per_output(y, yhat):
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError(f"shape mismatch or empty input: {y.shape} vs {yhat.shape}")
    if y.ndim == 1:
        y, yhat = y[:, None], yhat[:, None]
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot == 0):
        raise ValueError("R^2 is undefined for a target with zero variance")
    ss_res = np.sum((y - yhat) ** 2, axis=0)
    return 1.0 - ss_res / ss_tot


def r2(y, yhat):
    """Coefficient of determination, uniformly averaged over output columns."""
    return float(np.mean(r2_per_output(y, yhat)))


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _adam_kernel(p, g, m, v, lr_t, b1, b2, eps):
    # Flat views of one parameter array and its moment buffers.
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr_t * mi / (np.sqrt(vi) + eps)


class _Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros(p.size) for p in params]
        self.v = [np.zeros(p.size) for p in params]

    def begin_step(self):
        self.t += 1
        return self.lr * np.sqrt(1.0 - ADAM_BETA2**self.t) / (1.0 - ADAM_BETA1**self.t)

    def update(self, k, p, g, lr_t):
        _adam_kernel(p.reshape(-1), np.ascontiguousarray(g).reshape(-1), self.m[k], self.v[k],
                     lr_t, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)


@dataclass
class TrainReport:
    config: NetConfig
    epochs_run: int
    train_mse_curve: list
    test_mse_curve: list
    best_epoch: int
    test_r2: list = field(default_factory=list)
    test_r2_aggregate: float = float("nan")
    # Unscaled test-set predictions of the restored (best-epoch) network.
    test_predictions: np.ndarray = None
    n_params: int = 0

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "train_mse_curve": list(self.train_mse_curve),
            "test_mse_curve": list(self.test_mse_curve),
            "test_r2": list(self.test_r2),
            "test_r2_aggregate": self.test_r2_aggregate,
            "n_params": self.n_params,
        }


def train(net: SurrogateNet, x_train, y_train, x_test, y_test, seed) -> TrainReport:
    """Train ``net`` in place and return the training report.

    Inputs and targets are in scaled space.  Each epoch reshuffles the
    training rows, takes minibatch Adam steps, then records train and test
    MSE.  Training stops after ``config.max_epochs`` or ``config.patience``
    epochs without a strict test-MSE improvement, and the parameters of the
    best epoch are restored.  R^2 is reported in unscaled target space when
    the net carries an output scaler.
    """
    cfg = net.config
    x_train = np.ascontiguousarray(x_train, dtype=float)
    y_train = np.ascontiguousarray(y_train, dtype=float)
    x_test = np.ascontiguousarray(x_test, dtype=float)
    y_test = np.ascontiguousarray(y_test, dtype=float)
    weights, biases = net.weights, net.biases
    n_layers = len(weights)
    opt = _Adam(weights + biases, cfg.learning_rate)
    rng = derive_rng(seed, "shuffle")
    n = len(x_train)
    bs = cfg.batch_size

    train_curve, test_curve = [], []
    best = (np.inf, -1, None)
    since_best = 0
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            xb, yb = x_train[idx], y_train[idx]
            acts = [xb]
            h = xb
            for w, b in zip(weights[:-1], biases[:-1]):
                h = h @ w
                h += b
                np.maximum(h, 0.0, out=h)
                acts.append(h)
            g = h @ weights[-1]
            g += biases[-1]
            g -= yb
            g *= 2.0 / g.size
            lr_t = opt.begin_step()
            for i in range(n_layers - 1, -1, -1):
                gw = acts[i].T @ g
                gb = g.sum(axis=0)
                if i:
                    g = g @ weights[i].T
                    g *= acts[i] > 0
                opt.update(i, weights[i], gw, lr_t)
                opt.update(n_layers + i, biases[i], gb, lr_t)
        train_mse = mse(y_train, _forward_params(weights, biases, x_train))
        test_mse = mse(y_test, _forward_params(weights, biases, x_test))
        if not (np.isfinite(train_mse) and np.isfinite(test_mse)):
            raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        train_curve.append(train_mse)
        test_curve.append(test_mse)
        if test_mse < best[0]:
            best = (test_mse, epoch, ([w.copy() for w in weights], [b.copy() for b in biases]))
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    best_w, best_b = best[2]
    for w, bw in zip(weights, best_w):
        w[...] = bw
    for b, bb in zip(biases, best_b):
        b[...] = bb

    pred = _forward_params(weights, biases, x_test)
    y_true = y_test
    if net.output_scaler is not None:
        pred = net.output_scaler.inverse(pred)
        y_true = net.output_scaler.inverse(y_test)
    per_output = r2_per_output(y_true, pred)
    return TrainReport(
        config=cfg,
        epochs_run=len(test_curve),
        train_mse_curve=train_curve,
        test_mse_curve=test_curve,
        best_epoch=best[1],
        test_r2=per_output.tolist(),
        test_r2_aggregate=float(per_output.mean()),
        test_predictions=pred,
        n_params=net.n_params,
    )


def fit_surrogate(prep: PreparedData, config: NetConfig, seed):
    """Initialize and train one network on prepared data; returns (net, report)."""
    x_tr, y_tr, x_te, y_te = prep.scaled()
    net = init_net(config, x_tr.shape[1], seed, y_tr.shape[1])
    net.input_scaler = prep.input_scaler
    net.output_scaler = prep.output_scaler
    net.dataset_hash = prep.dataset_hash
    report = train(net, x_tr, y_tr, x_te, y_te, seed)
    return net, report


@dataclass
class GridSearchResult:
    best_net: SurrogateNet
    best_index: int
    reports: list  # TrainReport, or None for a diverged config

    @property
    def best_config(self):
        return self.best_net.config


def _run_one(args):
    trainer, prep, config, seed = args
    try:
        return trainer(prep, config, seed)
    except TrainingError as exc:
        log.warning("config %s diverged: %s", config, exc)
        return None


def grid_search(prep: PreparedData, grid, seed, jobs=1, trainer=fit_surrogate) -> GridSearchResult:
    """Train one network per config and keep the one with the best test R^2.

    Ties go to the network with fewer parameters, then to the lower index.
    Config ``i`` trains with a seed derived from ``(seed, i)``, so results do
    not depend on ``jobs``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    tasks = [(trainer, prep, cfg, derive_int(seed, "config", i)) for i, cfg in enumerate(grid)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    scored = [
        (-res[1].test_r2_aggregate, res[1].n_params, i)
        for i, res in enumerate(results)
        if res is not None and np.isfinite(res[1].test_r2_aggregate)
    ]
    if not scored:
        raise TrainingError("every configuration in the grid diverged")
    best_index = min(scored)[2]
    return GridSearchResult(results[best_index][0], best_index,
                            [None if r is None else r[1] for r in results])


def save_net(net: SurrogateNet, path):
    doc = {
        "schema": MODEL_SCHEMA,
        "version": MODEL_VERSION,
        "config": net.config.to_dict(),
        "seed": net.seed,
        "dataset_hash": net.dataset_hash,
        "input_scaler": None if net.input_scaler is None else net.input_scaler.to_dict(),
        "output_scaler": None if net.output_scaler is None else net.output_scaler.to_dict(),
        "layers": [{"weights": w.tolist(), "bias": b.tolist()} for w, b in zip(net.weights, net.biases)],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_net(path) -> SurrogateNet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("schema") != MODEL_SCHEMA:
        raise ParseError("not a surrogate model file")
    if doc.get("version") != MODEL_VERSION:
        raise ParseError(f"unsupported model version {doc.get('version')!r}")
    try:
        config = NetConfig.from_dict(doc["config"])
        weights = [np.array(layer["weights"], dtype=float) for layer in doc["layers"]]
        biases = [np.array(layer["bias"], dtype=float) for layer in doc["layers"]]
        sizes = config.layer_sizes(weights[0].shape[0], weights[-1].shape[1])
        for w, b, a, c in zip(weights, biases, sizes[:-1], sizes[1:]):
            if w.shape != (a, c) or b.shape != (c,):
                raise ParseError("layer shapes do not match the stored config")
        if len(weights) != len(sizes) - 1:
            raise ParseError("layer count does not match the stored config")
        scalers = [None if doc[k] is None else ScalerParams.from_dict(doc[k])
                   for k in ("input_scaler", "output_scaler")]
        return SurrogateNet(weights, biases, config, scalers[0], scalers[1],
                            int(doc["seed"]), doc.get("dataset_hash", ""))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed model file: {exc}") from None
