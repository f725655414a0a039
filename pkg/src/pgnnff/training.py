"""Fitting the physical parameters and the network, with output-space regularization.

The physical model output over a dataset is ``X(zeta_n) @ zeta_l``; its column
space is spanned by the orthonormal ``u1`` of :class:`ProjectionBasis`. The
regularized criterion is ::

    J_OP = ||u_hat - f_M - f_C||^2 + lam * ||u1.T @ f_C||^2

so the network is discouraged from producing anything the physical model
could produce itself.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .neural_net import (DEFAULT_LAYER_SIZES, MLPParams, Normalization, backward, forward_batch,
                         forward_cache, init_params, transform)
from .physical_model import (PhysicalConstants, PhysicalParams, basis_matrix, f_M, f_M_jacobian)
from .signals import IODataset, SignalError, Trajectory, differentiate_reference, split_dataset

log = logging.getLogger(__name__)

RIDGE_FLOOR = 1e-12
RANK_TOL = 1e-10
LEAST_SQUARES = "least_squares"
ORTHOGONAL_PROJECTION = "orthogonal_projection"
_MODE_ALIASES = {"ls": LEAST_SQUARES, "op": ORTHOGONAL_PROJECTION,
                 LEAST_SQUARES: LEAST_SQUARES, ORTHOGONAL_PROJECTION: ORTHOGONAL_PROJECTION}


class TrainingError(RuntimeError):
    pass


class DegenerateFitError(TrainingError):
    """The regressor is rank deficient; zeta_l is not unique."""


# ---------------------------------------------------------------- physical only

@dataclass(frozen=True)
class ZetaGrid:
    y_range: tuple = (-0.1, 0.1)
    z_range: tuple = (-0.1, 0.1)
    n_y: int = 41
    n_z: int = 41

    def points(self):
        ys = np.linspace(self.y_range[0], self.y_range[1], self.n_y)
        zs = np.linspace(self.z_range[0], self.z_range[1], self.n_z)
        return ys, zs


@dataclass(frozen=True)
class PhysicalFit:
    params: PhysicalParams
    residual_ss: float
    degenerate: bool
    rank: int


def solve_zeta_l(X: np.ndarray, u: np.ndarray):
    """Ridge-floored normal equations; minimum-norm solution when X is rank deficient.

    Returns ``(zeta_l, rank)``.
    """
    s = np.linalg.svd(X, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    if rank < X.shape[1]:
        return np.linalg.lstsq(X, u, rcond=RANK_TOL)[0], rank
    gram = X.T @ X
    ridge = RIDGE_FLOOR * np.trace(gram) / X.shape[1]
    return np.linalg.solve(gram + ridge * np.eye(X.shape[1]), X.T @ u), rank


def solve_zeta_l_nonneg(X: np.ndarray, u: np.ndarray):
    """Least squares with ``zeta_l >= 0`` by enumerating active sets (3 unknowns).

    Returns ``(zeta_l, rank, residual_ss)``.
    """
    zl, rank = solve_zeta_l(X, u)
    if rank < X.shape[1] or np.all(zl >= 0):
        r = u - X @ zl
        return zl, rank, float(r @ r)
    best = (np.inf, np.zeros(X.shape[1]))
    n = X.shape[1]
    for mask in range(1, 2 ** n - 1):
        cols = [j for j in range(n) if mask >> j & 1]
        sub, _ = solve_zeta_l(X[:, cols], u)
        if np.any(sub < 0):
            continue
        cand = np.zeros(n)
        cand[cols] = sub
        r = u - X @ cand
        ss = float(r @ r)
        if ss < best[0]:
            best = (ss, cand)
    if not np.isfinite(best[0]):
        best = (float(u @ u), np.zeros(n))
    return best[1], rank, best[0]


def dataset_trajectory(ds: IODataset) -> Trajectory:
    """Realized angle of a dataset with finite-difference derivatives."""
    if len(ds) < 4:
        raise SignalError(f"dataset needs at least 4 samples, has {len(ds)}")
    return differentiate_reference(ds.theta, ds.ts)


def fit_physical_only(ds: IODataset, c: PhysicalConstants = PhysicalConstants(),
                      grid: ZetaGrid = ZetaGrid(), refine_steps: int = 0,
                      refine_lr: float = 1e-3, traj: Optional[Trajectory] = None) -> PhysicalFit:
    """Grid over (y, z), closed-form (m, jxx, d) at each node, keep the best.

    ``refine_steps > 0`` continues with ADAM on all five parameters.
    A rank-deficient regressor yields the minimum-norm solution and
    ``degenerate=True``.
    """
    traj = dataset_trajectory(ds) if traj is None else traj
    u = np.asarray(ds.u_hat)
    best = None
    ys, zs = grid.points()
    for y in ys:
        for z in zs:
            X = basis_matrix(traj, (y, z), c)
            zl, rank, ss = solve_zeta_l_nonneg(X, u)
            if best is None or ss < best[0]:
                best = (ss, zl, y, z, rank)
    ss, zl, y, z, rank = best
    params = PhysicalParams.from_vector(np.r_[np.maximum(zl, 0.0), y, z])
    if refine_steps > 0 and rank == 3:
        params = _refine_physical(traj, u, params, c, refine_steps, refine_lr)
        r = u - f_M(traj, params, c)
        ss = float(r @ r)
    return PhysicalFit(params, ss, rank < 3, rank)


def _refine_physical(traj, u, params, c, steps, lr):
    scale = _zeta_scale(params)
    w = params.to_vector() / scale
    state = AdamState.zeros(w.size)
    for _ in range(steps):
        p = PhysicalParams.from_vector(np.r_[np.maximum((w * scale)[:3], 0.0), (w * scale)[3:]])
        r = u - f_M(traj, p, c)
        grad = -2.0 * f_M_jacobian(traj, p, c).T @ r * scale
        w, state = adam_step(w, state, grad, lr)
    v = w * scale
    return PhysicalParams.from_vector(np.r_[np.maximum(v[:3], 0.0), v[3:]])


# ------------------------------------------------------------------- projection

@dataclass(frozen=True)
class ProjectionBasis:
    u1: np.ndarray
    r: int
    zeta_n0: tuple = (0.0, 0.0)

    def project(self, s: np.ndarray) -> np.ndarray:
        """Coordinates ``u1.T @ s``."""
        return self.u1.T @ s

    def in_span(self, s: np.ndarray) -> np.ndarray:
        return self.u1 @ (self.u1.T @ s)


def compute_basis(X: np.ndarray, zeta_n0=(0.0, 0.0)) -> ProjectionBasis:
    """Orthonormal basis of the column space of ``X`` from its thin SVD."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < X.shape[1]:
        raise ValueError(f"basis needs a tall matrix, got {X.shape}")
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    r = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
    return ProjectionBasis(u[:, :r].copy(), r, tuple(float(v) for v in zeta_n0))


# ------------------------------------------------------------------- criteria

@dataclass(frozen=True)
class LossReport:
    j_ls: float
    r_op: float
    lam: float
    in_span: float = float("nan")     # ||u1.T rho||^2
    complement: float = float("nan")  # ||rho||^2 - ||u1.T rho||^2

    @property
    def j_op(self) -> float:
        return self.j_ls + self.lam * self.r_op


def r_op(phi: MLPParams, features: np.ndarray, basis: ProjectionBasis) -> float:
    if features.shape[0] != basis.u1.shape[0]:
        raise ValueError(f"basis has {basis.u1.shape[0]} rows, features {features.shape[0]}")
    p = basis.project(forward_batch(phi, features))
    return float(p @ p)


def decomposed_ss(residual: np.ndarray, basis: ProjectionBasis):
    """Split ``||residual||^2`` into the in-span and complement parts."""
    p = basis.project(residual)
    inside = float(p @ p)
    outside_vec = residual - basis.u1 @ p
    return inside, float(outside_vec @ outside_vec)


def j_ls(u_hat, traj: Trajectory, features: np.ndarray, zeta: PhysicalParams, phi: MLPParams,
         c: PhysicalConstants = PhysicalConstants(), basis: Optional[ProjectionBasis] = None,
         lam: float = 0.0) -> LossReport:
    f_c = forward_batch(phi, features)
    rho = np.asarray(u_hat) - f_M(traj, zeta, c) - f_c
    total = float(rho @ rho)
    if basis is None:
        return LossReport(total, float("nan") if lam == 0 else 0.0, lam)
    inside, outside = decomposed_ss(rho, basis)
    p = basis.project(f_c)
    return LossReport(total, float(p @ p), lam, inside, outside)


def total_gradient(u_hat, traj: Trajectory, features: np.ndarray, zeta: PhysicalParams,
                   phi: MLPParams, basis: Optional[ProjectionBasis], lam: float,
                   c: PhysicalConstants = PhysicalConstants()):
    """Exact ``(dJ_OP/dzeta, dJ_OP/dphi)``; the basis is held fixed."""
    f_c = forward_batch(phi, features)
    rho = np.asarray(u_hat) - f_M(traj, zeta, c) - f_c
    grad_zeta = -2.0 * f_M_jacobian(traj, zeta, c).T @ rho
    cot = -2.0 * rho
    if lam != 0.0 and basis is not None:
        cot = cot + 2.0 * lam * basis.in_span(f_c)
    return grad_zeta, backward(phi, features, cot)


# ------------------------------------------------------------------------ ADAM

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, state: AdamState, grads: np.ndarray, lr: float):
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


# --------------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    learning_rate: float = 1e-3
    zeta_learning_rate: Optional[float] = None  # defaults to learning_rate
    batch_size: int = 64
    max_epochs: int = 500
    patience: int = 5
    seed: int = 0
    mode: str = ORTHOGONAL_PROJECTION
    val_every: str = "minibatch"  # or "epoch"
    r_mode: str = "exact"         # or "batch"
    basis_refresh: int = 0        # steps between basis rebuilds; 0 keeps it frozen
    layer_sizes: tuple = DEFAULT_LAYER_SIZES
    activation: str = "tanh"
    fractions: tuple = (0.8, 0.1, 0.1)
    relay_deadband: float = 0.0
    train_zeta: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if self.mode not in _MODE_ALIASES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "mode", _MODE_ALIASES[self.mode])
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        object.__setattr__(self, "fractions", tuple(self.fractions))
        if self.val_every not in ("minibatch", "epoch"):
            raise ValueError(f"val_every must be 'minibatch' or 'epoch', got {self.val_every!r}")
        if self.r_mode not in ("exact", "batch"):
            raise ValueError(f"r_mode must be 'exact' or 'batch', got {self.r_mode!r}")

    @property
    def effective_lambda(self) -> float:
        return self.lam if self.mode == ORTHOGONAL_PROJECTION else 0.0

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HistoryRow:
    step: int
    j_ls: float
    r_op: float
    j_op: float
    val_loss: float


@dataclass
class FitResult:
    zeta: PhysicalParams
    phi: MLPParams
    history: list
    basis: ProjectionBasis
    baseline: PhysicalParams
    config: TrainConfig
    constants: PhysicalConstants
    ts: float
    stopped_at: int = 0
    best_step: int = 0

    def model(self) -> "PGNNModel":
        return PGNNModel(self.zeta, self.phi, self.constants, self.ts, self.config.relay_deadband)

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "j_ls", "r_op", "j_op", "val_loss"])
            for h in self.history:
                w.writerow([h.step, repr(h.j_ls), repr(h.r_op), repr(h.j_op), repr(h.val_loss)])


@dataclass
class PGNNModel:
    """Deployable feedforward: physical model plus network."""

    zeta: PhysicalParams
    phi: Optional[MLPParams]
    constants: PhysicalConstants = PhysicalConstants()
    ts: float = 1.0 / 500.0
    relay_deadband: float = 0.0

    def components(self, traj: Trajectory):
        fm = f_M(traj, self.zeta, self.constants)
        if self.phi is None:
            return fm, np.zeros_like(fm)
        return fm, forward_batch(self.phi, transform(traj, self.relay_deadband))

    def __call__(self, traj: Trajectory) -> np.ndarray:
        fm, fc = self.components(traj)
        return fm + fc

    def save(self, stem) -> None:
        """Write ``<stem>.model.json`` (network) and ``<stem>.zeta.json`` (physics + metadata)."""
        stem = Path(stem)
        meta = {"format_version": 1, "zeta": self.zeta.as_dict(),
                "constants": asdict(self.constants), "ts": self.ts,
                "relay_deadband": self.relay_deadband, "has_network": self.phi is not None}
        Path(f"{stem}.zeta.json").write_text(json.dumps(meta, indent=1))
        if self.phi is not None:
            self.phi.save(f"{stem}.model.json")

    @classmethod
    def load(cls, stem) -> "PGNNModel":
        meta = json.loads(Path(f"{stem}.zeta.json").read_text())
        phi = MLPParams.load(f"{stem}.model.json") if meta["has_network"] else None
        return cls(PhysicalParams(**meta["zeta"]), phi, PhysicalConstants(**meta["constants"]),
                   float(meta["ts"]), float(meta["relay_deadband"]))


def _zeta_scale(p: PhysicalParams) -> np.ndarray:
    """Per-parameter step scale so ADAM moves every physical parameter relatively."""
    v = np.abs(p.to_vector())
    floor = np.array([1e-3, 1e-3, 1e-3, 1e-4, 1e-4])
    return np.maximum(v, floor)


@dataclass
class TrainingData:
    """Everything the loop needs, precomputed once per dataset."""

    u_hat: np.ndarray
    traj: Trajectory
    features: np.ndarray
    split: object

    @classmethod
    def build(cls, ds: IODataset, config: TrainConfig) -> "TrainingData":
        traj = dataset_trajectory(ds)
        feats = transform(traj, config.relay_deadband)
        return cls(np.asarray(ds.u_hat), traj, feats, split_dataset(ds, config.fractions))

    def block(self, r: range):
        sl = slice(r.start, r.stop)
        return self.u_hat[sl], self.traj.slice(r.start, r.stop), self.features[sl]


def train(ds: IODataset, config: TrainConfig = TrainConfig(),
          c: PhysicalConstants = PhysicalConstants(), baseline: Optional[PhysicalParams] = None,
          grid: ZetaGrid = ZetaGrid(), data: Optional[TrainingData] = None,
          callback=None) -> FitResult:
    """Joint ADAM fit of (zeta, phi) with minibatches and early stopping.

    ``baseline`` is the physical-only fit used to initialize zeta and to build
    the frozen basis; it is computed on the train block when omitted.
    ``callback(step, zeta, phi)`` is invoked at every validation event.
    """
    data = TrainingData.build(ds, config) if data is None else data
    u_tr, traj_tr, x_tr = data.block(data.split.train)
    u_va, traj_va, x_va = data.block(data.split.validation)
    n_tr = u_tr.size
    if baseline is None:
        baseline = fit_physical_only(IODataset(traj_tr.theta_d, u_tr, ds.ts), c, grid, traj=traj_tr).params
    lam = config.effective_lambda
    rng = np.random.default_rng(config.seed)

    phi = init_params(config.layer_sizes, int(rng.integers(2 ** 31)), config.activation)
    phi.norm = Normalization.fit(x_tr)
    zeta = baseline
    basis = compute_basis(basis_matrix(traj_tr, (baseline.y, baseline.z), c), (baseline.y, baseline.z))

    scale = _zeta_scale(baseline)
    n_z = 5
    w = np.r_[baseline.to_vector() / scale, phi.flat()]
    state = AdamState.zeros(w.size)
    lr_vec = np.full(w.size, config.learning_rate)
    lz = config.zeta_learning_rate if config.zeta_learning_rate is not None else config.learning_rate
    lr_vec[:n_z] = lz if config.train_zeta else 0.0

    def unpack(wv):
        zv = wv[:n_z] * scale
        zv[:3] = np.maximum(zv[:3], 0.0)
        return PhysicalParams.from_vector(zv), phi.with_flat(wv[n_z:])

    def val_loss(z, ph):
        r = u_va - f_M(traj_va, z, c) - forward_batch(ph, x_va)
        return float(r @ r) / r.size

    def diverged(step, detail):
        return TrainingError(f"non-finite loss at step {step} ({detail}); "
                             f"learning rate {config.learning_rate} probably too large")

    def record(step, z, ph):
        try:
            rep = j_ls(u_tr, traj_tr, x_tr, z, ph, c, basis, lam)
            vl = val_loss(z, ph)
        except OverflowError as exc:
            raise diverged(step, str(exc)) from exc
        history.append(HistoryRow(step, rep.j_ls, rep.r_op, rep.j_op, vl))
        if callback is not None:
            callback(step, z, ph)
        if not np.isfinite(rep.j_op) or not np.isfinite(vl):
            raise diverged(step, f"j_op={rep.j_op}, val={vl}")
        return vl

    history: list = []
    best_val = record(0, zeta, phi)
    best = (w.copy(), 0)
    bad = 0
    step = 0
    stop = False
    bsz = min(config.batch_size, n_tr)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr - bsz + 1, bsz):
            idx = np.sort(order[start:start + bsz])
            try:
                zeta, phi_cur = unpack(w)
                tb = Trajectory(traj_tr.theta_d[idx], traj_tr.theta_d_dot[idx],
                                traj_tr.theta_d_ddot[idx], traj_tr.ts)
                xb = x_tr[idx]
                k = n_tr / bsz
                exact_r = lam != 0.0 and config.r_mode == "exact"
                if exact_r:
                    f_full, cache = forward_cache(phi_cur, x_tr)
                    f_cb = f_full[idx]
                else:
                    f_cb, cache = forward_cache(phi_cur, xb)
                rho = u_tr[idx] - f_M(tb, zeta, c) - f_cb
                g_zeta = (-2.0 * k) * (f_M_jacobian(tb, zeta, c).T @ rho)
                if exact_r:
                    cot = (2.0 * lam) * basis.in_span(f_full)
                    cot[idx] += (-2.0 * k) * rho
                    g_phi = backward(phi_cur, x_tr, cot, cache).flat()
                else:
                    cot = (-2.0 * k) * rho
                    if lam != 0.0:
                        ub = basis.u1[idx]
                        cot = cot + (2.0 * lam * k * k) * (ub @ (ub.T @ f_cb))
                    g_phi = backward(phi_cur, xb, cot, cache).flat()
                grad = np.r_[g_zeta * scale, g_phi]
            except OverflowError as exc:
                raise diverged(step, str(exc)) from exc
            w, state = adam_step(w, state, grad, lr_vec)
            step += 1
            if config.basis_refresh and step % config.basis_refresh == 0:
                z_now, _ = unpack(w)
                basis = compute_basis(basis_matrix(traj_tr, (z_now.y, z_now.z), c), (z_now.y, z_now.z))
            if config.val_every == "minibatch":
                stop, best_val, best, bad = _check(step, w, unpack, record, best_val, best, bad,
                                                   config.patience)
                if stop:
                    break
        if stop:
            break
        if config.val_every == "epoch":
            stop, best_val, best, bad = _check(step, w, unpack, record, best_val, best, bad,
                                               config.patience)
            if stop:
                break
    zeta, phi = unpack(best[0])
    log.info("training stopped at step %d, best step %d, val %.6g", step, best[1], best_val)
    return FitResult(zeta, phi, history, basis, baseline, config, c, ds.ts, step, best[1])


def _check(step, w, unpack, record, best_val, best, bad, patience):
    z, ph = unpack(w)
    vl = record(step, z, ph)
    if vl < best_val:
        return False, vl, (w.copy(), step), 0
    bad += 1
    return bad >= patience, best_val, best, bad


def complementarity_ratio(f_c: np.ndarray, basis: ProjectionBasis) -> float:
    """``||u1.T f_c|| / ||f_c||`` (0 for a vanishing network output)."""
    nrm = float(np.linalg.norm(f_c))
    if nrm == 0.0:
        return 0.0
    return float(np.linalg.norm(basis.project(f_c))) / nrm
