"""Energy-diversity training of the generator.

Each iteration draws M prior inputs, decodes them into circuit angles,
prepares the states and evaluates

    L = lambda1 * mean_m E_m + lambda2 * sum_k D_k,

where ``D_k`` is the batch-mean cosine similarity of feature family k. The
gradient reaches the circuit angles either exactly (adjoint simulation) or
through the +/- pi/2 shift rule on finite-shot estimates, and is then pulled
back through the generator.
"""
import csv
import json
import logging
import time
from dataclasses import MISSING, asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import generator as gen
from ._rng import substream
from .ansatz import build_mg_ansatz, build_spin1_ansatz
from .exceptions import ConfigError, TrainingDiverged
from .features import FeatureSpec, KINDS, diversity_loss_and_grad
from .models import MAX_ED_QUBITS, SpinModelSpec, model_ground_space
from .qsim import PauliTable, ShotEstimator

log = logging.getLogger(__name__)

EXACT = "EXACT"
SHIFT_FULL = "SHIFT_FULL"
SHIFT_STOCHASTIC = "SHIFT_STOCHASTIC"
GRADIENT_MODES = (EXACT, SHIFT_FULL, SHIFT_STOCHASTIC)

SCHEMA_VERSION = 1
CERTIFY_KEYS = ("energy_rel", "overlap", "variant", "rank_eps", "subset_cap")
LOG_COLUMNS = ("iter", "mean_E", "max_E", "l1_sim", "l2_sim", "fidelity", "lambda2", "shots", "eta")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    model: str
    n_sites: int
    depth: int
    encoder: list
    latent_dim: int
    decoder: list
    batch_size: int
    eta: float
    lambda2_start: float
    lambda2_end: float
    features: list
    anisotropy: float = -1.0
    lambda1: float = 1.0
    output_scale: float = 0.01
    anneal_iters: int = 500
    lr_decay: float = 0.995
    lr_decay_every: int = 10
    lr_floor: float = 0.1
    gradient_mode: str = EXACT
    active_params: int = 0
    shot_schedule: list = field(default_factory=lambda: [[0, 1000], [300, 8000], [1000, 12000]])
    mean_tol: float = 0.02
    max_tol: float = 0.08
    required_hits: int = 5
    max_iters: int = 20000
    seed: int = 0
    checkpoint_every: int = 500
    divergence_factor: float = 10.0
    divergence_patience: int = 100
    reference_energy: float = None
    stall_patience: int = 2000
    generate_count: int = 1500
    certification: dict = None
    name: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, fld, msg):
            if not cond:
                raise ConfigError(fld, msg)

        try:
            spec = SpinModelSpec(self.model, self.n_sites, self.anisotropy)
        except (TypeError, ValueError) as exc:
            raise ConfigError("model", str(exc)) from exc
        self.model = spec.model
        for name in ("depth", "latent_dim", "batch_size", "anneal_iters", "lr_decay_every", "required_hits",
                     "max_iters", "checkpoint_every", "divergence_patience", "stall_patience"):
            value = getattr(self, name)
            need(isinstance(value, int) and not isinstance(value, bool) and value > 0, name,
                 f"must be a positive integer, got {value!r}")
        need(self.batch_size >= 2, "batch_size", "the diversity loss needs at least 2 samples")
        for name in ("encoder", "decoder"):
            widths = getattr(self, name)
            need(isinstance(widths, (list, tuple)) and all(isinstance(w, int) and w > 0 for w in widths),
                 name, "must be a list of positive integers")
        for name in ("eta", "lambda1", "output_scale", "lambda2_start", "lambda2_end", "mean_tol", "max_tol",
                     "divergence_factor"):
            value = getattr(self, name)
            need(isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0, name,
                 f"must be > 0, got {value!r}")
        need(0 < self.lr_decay <= 1, "lr_decay", "must lie in (0, 1]")
        need(0 < self.lr_floor <= 1, "lr_floor", "must lie in (0, 1]")
        need(isinstance(self.features, (list, tuple)) and len(self.features) > 0, "features",
             "must list at least one feature kind")
        for i, kind in enumerate(self.features):
            need(kind in KINDS, f"features[{i}]", f"must be one of {KINDS}")
        need(isinstance(self.generate_count, int) and self.generate_count >= 0, "generate_count",
             "must be a non-negative integer")
        cert = self.certification or {}
        need(isinstance(cert, dict), "certification", "must be an object")
        for key, value in cert.items():
            need(key in CERTIFY_KEYS, f"certification.{key}", "unknown field")
            if key == "variant":
                need(value in ("AMP_SUM", "PROB_SUM"), "certification.variant", "must be AMP_SUM or PROB_SUM")
            elif value is not None or key != "subset_cap":
                need(isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0,
                     f"certification.{key}", "must be > 0")
        need(self.gradient_mode in GRADIENT_MODES, "gradient_mode", f"must be one of {GRADIENT_MODES}")
        n_params = self.n_params
        if self.gradient_mode == SHIFT_STOCHASTIC:
            need(isinstance(self.active_params, int) and 0 < self.active_params <= n_params, "active_params",
                 f"K must satisfy 0 < K <= n_p = {n_params}")
        if self.gradient_mode != EXACT:
            sched = self.shot_schedule
            need(isinstance(sched, (list, tuple)) and len(sched) > 0, "shot_schedule", "must be non-empty")
            last = -1
            for i, entry in enumerate(sched):
                need(isinstance(entry, (list, tuple)) and len(entry) == 2, f"shot_schedule[{i}]",
                     "must be an [iteration, shots] pair")
                it, shots = entry
                need(isinstance(it, int) and it > last, f"shot_schedule[{i}]",
                     "iteration thresholds must be increasing integers")
                need(isinstance(shots, int) and shots > 0, f"shot_schedule[{i}]", "shots must be positive")
                last = it
            need(sched[0][0] == 0, "shot_schedule[0]", "the first threshold must be 0")

    @property
    def spec(self):
        return SpinModelSpec(self.model, self.n_sites, self.anisotropy)

    @property
    def template(self):
        if self.model == "MG":
            return build_mg_ansatz(self.n_sites, self.depth)
        return build_spin1_ansatz(self.n_sites, self.depth)

    @property
    def n_params(self):
        return self.template.n_params

    @property
    def network(self):
        return gen.NetworkShape(self.n_params, tuple(self.encoder), self.latent_dim, tuple(self.decoder))

    def feature_specs(self):
        return [FeatureSpec(kind, self.spec.n_qubits) for kind in self.features]

    def shots_at(self, iteration):
        if self.gradient_mode == EXACT:
            return 0
        shots = self.shot_schedule[0][1]
        for threshold, value in self.shot_schedule:
            if iteration >= threshold:
                shots = value
        return shots

    def to_dict(self):
        out = {"schema_version": SCHEMA_VERSION}
        out.update(asdict(self))
        out["encoder"] = list(self.encoder)
        out["decoder"] = list(self.decoder)
        out["shot_schedule"] = [list(e) for e in self.shot_schedule]
        return out

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        required = [n for n, f in cls.__dataclass_fields__.items()
                    if f.default is MISSING and f.default_factory is MISSING]
        for name in required:
            if name not in data:
                raise ConfigError(name, "missing required field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from exc

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return TrainConfig.from_dict(data)


# ---------------------------------------------------------------------------
# schedules and optimizer


def anneal_lambda2(iteration, start, end, horizon):
    """Linear interpolation from ``start`` to ``end`` over ``horizon`` iterations, then constant."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    frac = min(iteration / horizon, 1.0) if horizon > 0 else 1.0
    return start + (end - start) * frac


def learning_rate(iteration, eta, decay=0.995, every=10, floor=0.1):
    """Step decay ``eta * decay**(iteration // every)``, never below ``floor * eta``."""
    return eta * max(decay ** (iteration // every), floor)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(params, grads, state, eta, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns (new param list, new state) without touching the inputs."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("params and grads must have matching shapes")
    t = state.t + 1
    m = [beta1 * mi + (1 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1 - beta2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    new = [p - eta * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# convergence


class ConvergenceTracker:
    """Counts iterations (cumulatively) where both energy conditions hold."""

    def __init__(self, reference, mean_tol, max_tol, required):
        self.reference = reference
        self.mean_tol = mean_tol
        self.max_tol = max_tol
        self.required = int(required)
        self.hits = 0
        self.history = []

    def update(self, mean_e, max_e, l1=np.nan, l2=np.nan, fidelity=np.nan):
        self.history.append((mean_e, max_e, l1, l2, fidelity))
        if abs(mean_e - self.reference) < self.mean_tol and abs(max_e - self.reference) < self.max_tol:
            self.hits += 1
        return self.converged

    @property
    def converged(self):
        return self.hits >= self.required


# ---------------------------------------------------------------------------
# loss over a batch


def batch_loss(energies, feature_batches, lambda1, lambda2):
    """Energy-diversity objective and its components.

    ``feature_batches`` holds one (M, T_k) array per feature family.
    """
    energies = np.asarray(energies, dtype=float)
    if energies.ndim != 1 or energies.size < 2:
        raise ValueError("need the energies of at least two samples")
    if not feature_batches:
        raise ValueError("need at least one feature family")
    divs = []
    for fb in feature_batches:
        fb = np.asarray(fb, dtype=float)
        if fb.shape[0] != energies.size:
            raise ValueError("every feature batch needs one row per sample")
        divs.append(diversity_loss_and_grad(fb)[0])
    mean_e = float(energies.mean())
    loss = lambda1 * mean_e + lambda2 * sum(divs)
    return loss, {"mean_E": mean_e, "max_E": float(energies.max()), "diversity": divs}


class LossModel:
    """Maps a batch of Pauli expectations to the loss and back.

    The Hamiltonian strings and all feature strings are merged into one
    deduplicated list, so one simulation (or one set of measurements) yields
    everything the loss needs.
    """

    def __init__(self, hamiltonian, feature_specs):
        self.n_qubits = hamiltonian.n_qubits
        index = {}
        strings = []

        def intern(ops):
            if ops not in index:
                index[ops] = len(strings)
                strings.append(ops)
            return index[ops]

        self.h_idx = np.array([intern(ops) for ops in hamiltonian.strings], dtype=int)
        self.h_coef = np.asarray(hamiltonian.coefficients, dtype=float)
        self.f_idx = [np.array([intern(ops) for ops in spec.strings], dtype=int) for spec in feature_specs]
        self.strings = strings
        self.table = PauliTable(strings, self.n_qubits)
        self._estimator = None

    @property
    def estimator(self):
        if self._estimator is None:
            self._estimator = ShotEstimator(self.strings, self.n_qubits)
        return self._estimator

    def energies(self, ev):
        return ev[:, self.h_idx] @ self.h_coef

    def loss_and_grad(self, ev, lambda1, lambda2):
        """Loss, components and dL/d(expectations) of shape ev.shape."""
        m = ev.shape[0]
        energies = self.energies(ev)
        grad = np.zeros_like(ev)
        np.add.at(grad, (slice(None), self.h_idx), lambda1 / m * self.h_coef)
        divs = []
        for idx in self.f_idx:
            d, g, _ = diversity_loss_and_grad(ev[:, idx])
            divs.append(d)
            np.add.at(grad, (slice(None), idx), lambda2 * g)
        loss = lambda1 * float(energies.mean()) + lambda2 * sum(divs)
        comps = {"mean_E": float(energies.mean()), "max_E": float(energies.max()), "diversity": divs,
                 "energies": energies}
        return loss, comps, grad

    def loss_row_variants(self, ev, row, variants, lambda1, lambda2):
        """Loss with ``ev[row]`` replaced by each row of ``variants`` (the rest unchanged)."""
        m = ev.shape[0]
        energies = self.energies(ev)
        e_new = self.energies(variants)
        total = lambda1 * (energies.sum() - energies[row] + e_new) / m
        scale = 2.0 / (m * (m - 1))
        others = np.arange(m) != row
        for idx in self.f_idx:
            feats = ev[:, idx]
            norms = np.linalg.norm(feats, axis=1)
            unit = np.where(norms[:, None] > 1e-12, feats / np.maximum(norms, 1e-300)[:, None], 0.0)
            sim = unit @ unit.T
            np.fill_diagonal(sim, 0.0)
            rest = np.triu(sim, 1).sum() - sim[row].sum()
            vnew = variants[:, idx]
            vnorm = np.linalg.norm(vnew, axis=1)
            vunit = np.where(vnorm[:, None] > 1e-12, vnew / np.maximum(vnorm, 1e-300)[:, None], 0.0)
            cross = vunit @ unit[others].T
            total = total + lambda2 * np.clip(scale * (rest + cross.sum(axis=1)), -1.0, 1.0)
        return total


def grad_circuit_params_exact(template, thetas, loss_model, lambda1, lambda2, psi=None):
    """Exact (loss, components, dL/dtheta) for a batch of circuit parameters."""
    if psi is None:
        psi = template.prepare_batch(thetas)
    ev = loss_model.table.expectations(psi)
    loss, comps, dev = loss_model.loss_and_grad(ev, lambda1, lambda2)
    _, grads = template.expectation_gradient(thetas, loss_model.table, dev, psi=psi)
    return loss, comps, grads


def grad_stochastic_shift(loss_fn, theta, active, delta=np.pi / 2):
    """Shift-rule gradient on the coordinates in ``active``, zero elsewhere.

    ``loss_fn`` maps an array of parameter vectors (rows) to their losses; it
    is called once with all 2K shifted vectors.
    """
    theta = np.asarray(theta, dtype=float)
    active = np.asarray(active, dtype=int)
    if theta.ndim != 1:
        raise ValueError("theta must be a single parameter vector")
    if active.size > theta.size or len(set(active.tolist())) != active.size:
        raise ValueError(f"active set must hold at most {theta.size} distinct indices")
    if active.size and (active.min() < 0 or active.max() >= theta.size):
        raise ValueError("active index out of range")
    shifted = np.repeat(theta[None, :], 2 * active.size, axis=0)
    rows = np.arange(active.size)
    shifted[2 * rows, active] += delta
    shifted[2 * rows + 1, active] -= delta
    values = np.asarray(loss_fn(shifted), dtype=float)
    grad = np.zeros_like(theta)
    grad[active] = 0.5 * (values[0::2] - values[1::2])
    return grad


def shift_gradient_batch(template, thetas, loss_model, lambda1, lambda2, active, shots, rng,
                         delta=np.pi / 2):
    """Shift-rule gradients for every sample with finite-shot loss evaluations.

    Returns (loss, components, dL/dtheta, exact base states). The loss at a
    shifted point of sample m uses the shifted estimate for row m and the
    unshifted estimates for every other sample.
    """
    active = np.asarray(active, dtype=int)
    batch = thetas.shape[0]
    base, shifted = template.prepare_shifted(thetas, active, delta)
    k = active.size
    rows = np.concatenate([base, shifted.reshape(batch * k * 2, -1)])
    if shots:
        ev_all = loss_model.estimator.estimate(rows, shots, rng)
    else:
        ev_all = loss_model.table.expectations(rows)
    ev = ev_all[:batch]
    ev_shift = ev_all[batch:].reshape(batch, k * 2, -1)
    loss, comps, _ = loss_model.loss_and_grad(ev, lambda1, lambda2)
    grads = np.zeros_like(thetas)
    for m in range(batch):
        values = loss_model.loss_row_variants(ev, m, ev_shift[m], lambda1, lambda2)
        grads[m, active] = 0.5 * (values[0::2] - values[1::2])
    return loss, comps, grads, base


def mean_pairwise_fidelity(psi):
    gram = np.abs(psi.conj() @ psi.T) ** 2
    m = psi.shape[0]
    return float((gram.sum() - np.trace(gram)) / (m * (m - 1)))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: gen.GeneratorParams
    converged: bool
    iterations: int
    reference_energy: float
    history: list
    elapsed: float
    reason: str


def reference_energy(config):
    if config.reference_energy is not None:
        return float(config.reference_energy)
    if config.spec.n_qubits > MAX_ED_QUBITS:
        return None
    return model_ground_space(config.spec).energy


def _checkpoint_files(run_dir):
    return sorted((Path(run_dir) / "checkpoints").glob("ckpt_*.npz"))


def _save_training_state(path, params, adam, iteration, tracker, config, best):
    extra = {"iteration": np.array(iteration), "hits": np.array(tracker.hits),
             "adam_t": np.array(adam.t), "best": np.array(best)}
    for i, (m, v) in enumerate(zip(adam.m, adam.v)):
        extra[f"m{i}"] = m
        extra[f"v{i}"] = v
    gen.save_checkpoint(path, params, config.seed, extra, meta={"config": config.to_dict()})


def _load_training_state(path, config):
    params, seed, extra, _ = gen.load_checkpoint(path)
    if seed != config.seed or params.shape != config.network:
        raise ConfigError("seed", "checkpoint does not belong to this configuration")
    n = len(params.arrays())
    adam = AdamState([extra[f"m{i}"] for i in range(n)], [extra[f"v{i}"] for i in range(n)],
                     int(extra["adam_t"]))
    return params, adam, int(extra["iteration"]), int(extra["hits"]), float(extra["best"])


def _format(value):
    return "" if value is None or (isinstance(value, float) and np.isnan(value)) else repr(float(value))


def train(config, run_dir=None, resume=False, progress_every=0):
    """Train a generator for ``config``; writes log/checkpoints into ``run_dir`` when given."""
    start = time.perf_counter()
    template = config.template
    hamiltonian = config.spec.hamiltonian()
    loss_model = LossModel(hamiltonian, config.feature_specs())
    e0 = reference_energy(config)
    shape = config.network

    params = gen.init_params(shape, config.seed, config.output_scale)
    adam = AdamState.zeros(params.arrays())
    first = 0
    hits = 0
    best = np.inf
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        if resume:
            ckpts = _checkpoint_files(run_dir)
            if ckpts:
                params, adam, first, hits, best = _load_training_state(ckpts[-1], config)
                log.info("resuming from %s at iteration %d", ckpts[-1].name, first)
        _prepare_log(run_dir / "log.csv", first if resume else 0)

    tracker = ConvergenceTracker(e0 if e0 is not None else np.nan, config.mean_tol, config.max_tol,
                                 config.required_hits)
    tracker.hits = hits
    initial_dev = None
    diverged_for = 0
    since_best = 0
    reason = "max_iters"
    t = first
    while t < config.max_iters:
        rng = substream(config.seed, "train", t)
        lam2 = anneal_lambda2(t, config.lambda2_start, config.lambda2_end, config.anneal_iters)
        eta = learning_rate(t, config.eta, config.lr_decay, config.lr_decay_every, config.lr_floor)
        shots = config.shots_at(t)
        theta0, eps = gen.sample_inputs(shape, config.batch_size, rng)
        thetas, cache = gen.forward(params, theta0, eps)
        if config.gradient_mode == EXACT:
            psi = template.prepare_batch(thetas)
            loss, comps, dtheta = grad_circuit_params_exact(template, thetas, loss_model, config.lambda1, lam2,
                                                            psi=psi)
        else:
            if config.gradient_mode == SHIFT_FULL:
                active = np.arange(template.n_params)
            else:
                active = np.sort(rng.choice(template.n_params, config.active_params, replace=False))
            loss, comps, dtheta, psi = shift_gradient_batch(template, thetas, loss_model, config.lambda1, lam2,
                                                            active, shots, rng)
        # monitoring uses exact energies of the simulated batch
        energies = hamiltonian.table.expectations(psi) @ hamiltonian.coefficients
        mean_e, max_e = float(energies.mean()), float(energies.max())
        divs = comps["diversity"] + [np.nan] * (2 - len(comps["diversity"]))
        fid = mean_pairwise_fidelity(psi)
        tracker.update(mean_e, max_e, divs[0], divs[1], fid)
        row = (t, mean_e, max_e, divs[0], divs[1], fid, lam2, shots, eta)
        if run_dir is not None:
            with open(run_dir / "log.csv", "a", newline="") as fh:
                csv.writer(fh).writerow([t] + [_format(v) for v in row[1:7]] + [shots, _format(eta)])
        if progress_every and t % progress_every == 0:
            log.info("iter %d mean_E %.5f max_E %.5f div %s fid %.4f", t, mean_e, max_e,
                     [round(d, 4) for d in comps["diversity"]], fid)

        grads = gen.backward(params, cache, dtheta)
        new, adam = adam_step(params.arrays(), grads.arrays(), adam, eta)
        k = len(params.weights)
        params = gen.GeneratorParams(shape, new[:k], new[k:])
        t += 1

        if e0 is not None:
            dev = abs(mean_e - e0)
            if initial_dev is None:
                initial_dev = max(dev, 1e-12)
            diverged_for = diverged_for + 1 if dev > config.divergence_factor * initial_dev else 0
            if diverged_for >= config.divergence_patience:
                raise TrainingDiverged(
                    f"mean energy stayed {config.divergence_factor}x further from E0 than at the start "
                    f"for {config.divergence_patience} iterations (iteration {t})"
                )
            if tracker.converged:
                reason = "converged"
                break
        else:
            if mean_e < best - config.mean_tol:
                best, since_best = mean_e, 0
            else:
                since_best += 1
            if since_best >= config.stall_patience:
                reason = "stalled"
                break
        if run_dir is not None and t % config.checkpoint_every == 0:
            _save_training_state(run_dir / "checkpoints" / f"ckpt_{t:07d}.npz", params, adam, t, tracker,
                                 config, best)
            for old in _checkpoint_files(run_dir)[:-3]:
                old.unlink()

    if run_dir is not None:
        _save_training_state(run_dir / "final.npz", params, adam, t, tracker, config, best)
    return TrainResult(params, tracker.converged, t, e0, tracker.history, time.perf_counter() - start, reason)


def _prepare_log(path, keep_before):
    """Create the log with its header, or drop rows at/after ``keep_before`` when resuming."""
    rows = []
    if keep_before and path.exists():
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            rows = [r for r in reader if r and int(r[0]) < keep_before]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(rows)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return TrainConfig.from_dict(data)
