"""Command-line pipeline: trajectories, data generation, fits, training, evaluation, comparison.

Every command reads and writes a run directory (``--out``). Typical sequence::

    pgnnff gen-traj --out run
    pgnnff gen-data --out run
    pgnnff fit-physical --out run
    pgnnff train --mode op --out run
    pgnnff train --mode ls --out run
    pgnnff evaluate --out run
    pgnnff compare run other_run --out report

Exit codes: 0 success, 1 invalid input or failed run, 2 usage error,
3 degenerate physical fit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .neural_net import forward_batch, transform
from .physical_model import PhysicalConstants, PhysicalParams, basis_matrix, f_M
from .plant_sim import (PDGains, PlantParams, SimulationError, load_plant_config,
                        run_closed_loop, trajectory_from_spec)
from .signals import (IODataset, SignalError, Trajectory, error_norms,
                      read_dataset_csv, read_trajectory_csv, write_columns_csv,
                      write_dataset_csv, write_trajectory_csv)
from .training import (PGNNModel, TrainConfig, TrainingError, ZetaGrid, complementarity_ratio,
                       compute_basis, dataset_trajectory, fit_physical_only, train)

log = logging.getLogger("pgnnff")

CONFIG_DIR = Path(__file__).parent / "configs"
DEFAULT_EXPERIMENT = CONFIG_DIR / "experiment.json"
CONTROLLERS = ("none", "physical", "pgnn_ls", "pgnn_op")
NORMS_HEADER = ("controller", "rms", "ma", "inf")
SERIES_HEADER = ("theta_d", "theta", "e", "u_ff", "f_M", "f_C", "u_fb", "u_applied")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2, 3


class CommandError(RuntimeError):
    """A command could not produce its artifacts."""


class DegenerateError(CommandError):
    pass


# ----------------------------------------------------------------- configuration

@dataclass(frozen=True)
class ExperimentConfig:
    plant: Path
    training: Path
    trajectory: Path
    eval_trajectory: Optional[Path]
    out: Path
    seed: int = 0
    grid: ZetaGrid = ZetaGrid()

    @classmethod
    def load(cls, path=None, **overrides) -> "ExperimentConfig":
        """Read an experiment JSON; relative paths resolve against its directory.

        Non-None ``overrides`` win over the file. The output directory is created.
        """
        path = Path(path) if path is not None else DEFAULT_EXPERIMENT
        if not path.is_file():
            raise CommandError(f"config file {path} not found")
        raw = json.loads(path.read_text())
        base = path.parent

        def resolve(key):
            v = overrides.get(key)
            if v is not None:
                return Path(v)
            v = raw.get(key)
            return None if v is None else (base / v if not Path(v).is_absolute() else Path(v))

        paths = {k: resolve(k) for k in ("plant", "training", "trajectory", "eval_trajectory")}
        for k in ("plant", "training", "trajectory"):
            if paths[k] is None:
                raise CommandError(f"experiment config lacks {k!r}")
        for k, p in paths.items():
            if p is not None and not p.is_file():
                raise CommandError(f"{k} config {p} not found")
        out = overrides.get("out")
        out = Path(out) if out is not None else Path(raw.get("out", "run"))
        seed = overrides.get("seed")
        seed = int(raw.get("seed", 0)) if seed is None else int(seed)
        if seed < 0:
            raise CommandError("seed must be a non-negative integer")
        g = raw.get("grid", {})
        grid = ZetaGrid(tuple(g.get("y_range", ZetaGrid.y_range)),
                        tuple(g.get("z_range", ZetaGrid.z_range)),
                        int(g.get("n_y", ZetaGrid.n_y)), int(g.get("n_z", ZetaGrid.n_z)))
        out.mkdir(parents=True, exist_ok=True)
        return cls(paths["plant"], paths["training"], paths["trajectory"],
                   paths["eval_trajectory"], out, seed, grid)

    def plant_config(self) -> tuple[PlantParams, PDGains]:
        return load_plant_config(self.plant)

    def train_config(self, **overrides) -> TrainConfig:
        raw = json.loads(self.training.read_text())
        raw["seed"] = self.seed
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**raw)


# ---------------------------------------------------------------------- helpers

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path: Path):
    if not path.is_file():
        raise CommandError(f"{path} not found; run the producing command first")
    return json.loads(path.read_text())


def _write_norms(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NORMS_HEADER)
        for name, n in rows:
            w.writerow([name, repr(n.rms), repr(n.ma), repr(n.inf)])


def _load_trajectory(path: Path, ts: float) -> Trajectory:
    if not path.is_file():
        raise CommandError(f"{path} not found; run gen-traj first")
    return read_trajectory_csv(path, ts)


def _physical_model(out: Path) -> tuple[PGNNModel, dict]:
    meta = _read_json(out / "physical.json")
    zeta = PhysicalParams(**meta["zeta"])
    return PGNNModel(zeta, None, PhysicalConstants(**meta["constants"]), float(meta["ts"])), meta


def _available_models(out: Path) -> list[tuple[str, PGNNModel]]:
    models = []
    if (out / "physical.json").is_file():
        models.append(("physical", _physical_model(out)[0]))
    for tag in _controller_order(p.name[: -len(".zeta.json")] for p in out.glob("*.zeta.json")):
        models.append((tag, PGNNModel.load(out / tag)))
    return models


def _controller_order(names) -> list:
    order = {name: i for i, name in enumerate(CONTROLLERS)}
    return sorted(names, key=lambda t: (order.get(t, len(order)), t))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------- commands

def cmd_gen_traj(cfg: ExperimentConfig, spec: Optional[Path] = None) -> list[Path]:
    """Sample the training (and evaluation, if configured) reference to CSV."""
    plant, _ = cfg.plant_config()
    jobs = [(spec, "trajectory.csv")] if spec is not None else \
        [(cfg.trajectory, "trajectory.csv")] + \
        ([(cfg.eval_trajectory, "eval_trajectory.csv")] if cfg.eval_trajectory else [])
    written = []
    for src, name in jobs:
        traj = trajectory_from_spec(json.loads(Path(src).read_text()), cfg.seed)
        if abs(traj.ts - plant.ts) > 1e-12 * plant.ts:
            raise CommandError(f"{src}: trajectory ts={traj.ts} differs from plant ts={plant.ts}")
        write_trajectory_csv(traj, cfg.out / name)
        written.append(cfg.out / name)
    return written


def cmd_gen_data(cfg: ExperimentConfig) -> IODataset:
    """Feedback-only closed loop along the training reference; writes dataset and sim CSVs."""
    plant, gains = cfg.plant_config()
    path = cfg.out / "trajectory.csv"
    if not path.is_file():
        cmd_gen_traj(cfg)
    traj = _load_trajectory(path, plant.ts)
    if traj.n < 4:
        raise CommandError(f"trajectory has {traj.n} samples; need at least 4")
    res = run_closed_loop(traj, gains, plant)
    ds = res.to_dataset()
    write_dataset_csv(ds, cfg.out / "dataset.csv")
    res.write_csv(cfg.out / "sim.csv")
    return ds


def _load_dataset(cfg: ExperimentConfig) -> IODataset:
    plant, _ = cfg.plant_config()
    path = cfg.out / "dataset.csv"
    if not path.is_file():
        raise CommandError(f"{path} not found; run gen-data first")
    return read_dataset_csv(path, plant.ts)


def cmd_fit_physical(cfg: ExperimentConfig) -> dict:
    """Physical-only fit and its dataset residual norms, written to ``physical.json``."""
    ds = _load_dataset(cfg)
    c = cfg.plant_config()[0].constants
    traj = dataset_trajectory(ds)
    fit = fit_physical_only(ds, c, cfg.grid, traj=traj)
    if fit.degenerate:
        raise DegenerateError(f"physical fit is degenerate (regressor rank {fit.rank} < 3); "
                              "the dataset does not excite all parameters")
    res = error_norms(ds.u_hat - f_M(traj, fit.params, c))
    report = {"zeta": fit.params.as_dict(), "residual": res.as_dict(),
              "residual_ss": fit.residual_ss, "rank": fit.rank, "degenerate": fit.degenerate,
              "constants": {"g": c.g, "tilt": c.tilt}, "ts": ds.ts, "n": len(ds)}
    _write_json(cfg.out / "physical.json", report)
    return report


def cmd_train(cfg: ExperimentConfig, mode: str = "op", lam: float = 0.1,
              tag: Optional[str] = None, **overrides) -> Path:
    """Joint training; writes ``<tag>.model.json``, ``<tag>.zeta.json``, history and summary."""
    ds = _load_dataset(cfg)
    phys, _ = _physical_model(cfg.out)
    tc = cfg.train_config(mode=mode, lam=lam, **overrides)
    tag = tag or ("pgnn_op" if tc.mode == "orthogonal_projection" else "pgnn_ls")
    fit = train(ds, tc, phys.constants, baseline=phys.zeta, grid=cfg.grid)
    model = fit.model()
    model.save(cfg.out / tag)
    fit.write_history_csv(cfg.out / f"{tag}.history.csv")
    last = fit.history[-1]
    _write_json(cfg.out / f"{tag}.fit.json", {
        "config": tc.to_dict(), "baseline": fit.baseline.as_dict(), "zeta": fit.zeta.as_dict(),
        "stopped_at": fit.stopped_at, "best_step": fit.best_step,
        "final": {"j_ls": last.j_ls, "r_op": last.r_op, "j_op": last.j_op,
                  "val_loss": last.val_loss}})
    return cfg.out / tag


def _complementarity(model: PGNNModel, traj: Trajectory, baseline: PhysicalParams) -> float:
    """Share of the network output inside the baseline physical model's output space."""
    if model.phi is None:
        return 0.0
    basis = compute_basis(basis_matrix(traj, (baseline.y, baseline.z), model.constants),
                          (baseline.y, baseline.z))
    return complementarity_ratio(forward_batch(model.phi, transform(traj, model.relay_deadband)),
                                 basis)


def cmd_evaluate(cfg: ExperimentConfig, trajectory: Optional[Path] = None) -> dict:
    """Closed-loop tracking on the evaluation reference plus dataset residuals per controller.

    Writes ``norms.csv`` (tracking), ``residual.csv`` (dataset input residual),
    ``complementarity.csv``, ``series_<controller>.csv`` and ``residual_series.csv``.
    """
    plant, gains = cfg.plant_config()
    out = cfg.out
    if trajectory is None:
        trajectory = out / "eval_trajectory.csv"
        if not trajectory.is_file():
            trajectory = out / "trajectory.csv"
    traj = _load_trajectory(Path(trajectory), plant.ts)
    models = _available_models(out)
    for name, m in models:
        if abs(m.ts - plant.ts) > 1e-12 * plant.ts:
            raise CommandError(f"model {name} has ts={m.ts} but plant runs at ts={plant.ts}")

    tracking = []
    for name, m in [("none", None)] + models:
        if m is None:
            f_m = f_c = np.zeros(traj.n)
        else:
            f_m, f_c = m.components(traj)
        sim = run_closed_loop(traj, gains, plant, feedforward=f_m + f_c)
        tracking.append((name, error_norms(sim.tracking_error)))
        write_columns_csv(out / f"series_{name}.csv", SERIES_HEADER,
                          [sim.theta_d, sim.theta, sim.tracking_error, sim.u_ff, f_m, f_c,
                           sim.u_fb, sim.u_applied])
    _write_norms(out / "norms.csv", tracking)

    summary = {"trajectory_sha256": _sha256(Path(trajectory)),
               "tracking": {n: v.as_dict() for n, v in tracking}}
    if (out / "dataset.csv").is_file() and models:
        ds = read_dataset_csv(out / "dataset.csv", plant.ts)
        dtraj = dataset_trajectory(ds)
        baseline = _physical_model(out)[0].zeta
        residual, compl, cols = [], [], [ds.u_hat]
        for name, m in models:
            r = ds.u_hat - m(dtraj)
            residual.append((name, error_norms(r)))
            compl.append((name, _complementarity(m, dtraj, baseline)))
            cols.append(r)
        _write_norms(out / "residual.csv", residual)
        write_columns_csv(out / "residual_series.csv",
                          ("u_hat",) + tuple(f"r_{n}" for n, _ in models), cols)
        with open(out / "complementarity.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["controller", "ratio"])
            for name, v in compl:
                w.writerow([name, repr(v)])
        summary["residual"] = {n: v.as_dict() for n, v in residual}
        summary["complementarity"] = dict(compl)
    _write_json(out / "evaluation.json", summary)
    return summary


def cmd_compare(runs: list, out: Path) -> list[dict]:
    """Merge evaluation outputs of several run directories into ``compare.csv``.

    ``factor`` is physical rms over the controller's rms within a run;
    ``relative`` is the controller's rms over the same controller in the first run.
    """
    if len(runs) < 2:
        raise CommandError("compare needs at least two run directories")
    evals = []
    for r in runs:
        r = Path(r)
        if not r.is_dir():
            raise CommandError(f"run directory {r} not found")
        evals.append((r, _read_json(r / "evaluation.json")))
    digests = {e["trajectory_sha256"] for _, e in evals}
    if len(digests) != 1:
        raise CommandError("runs were evaluated on different trajectories")

    first = evals[0][1]
    rows = []
    for r, e in evals:
        track, resid = e["tracking"], e.get("residual", {})
        compl = e.get("complementarity", {})
        for name in _controller_order(track):
            n = track[name]
            row = {"run": str(r), "controller": name, "tracking_rms": n["rms"]}
            phys = track.get("physical")
            row["factor"] = phys["rms"] / n["rms"] if phys and n["rms"] > 0 else float("nan")
            ref = first["tracking"].get(name)
            row["relative"] = n["rms"] / ref["rms"] if ref and ref["rms"] > 0 else float("nan")
            if name in resid:
                row["residual_rms"] = resid[name]["rms"]
                pr = resid.get("physical")
                row["residual_factor"] = pr["rms"] / resid[name]["rms"] \
                    if pr and resid[name]["rms"] > 0 else float("nan")
                fr = first.get("residual", {}).get(name)
                row["residual_relative"] = resid[name]["rms"] / fr["rms"] \
                    if fr and fr["rms"] > 0 else float("nan")
            if name in compl:
                row["complementarity"] = compl[name]
            rows.append(row)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["run", "controller", "tracking_rms", "factor", "relative", "residual_rms",
              "residual_factor", "residual_relative", "complementarity"]
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(row[f]) if isinstance(row.get(f), float) else row.get(f, "")
                        for f in fields])
    return rows


# -------------------------------------------------------------------------- main

def _common(defaults: bool) -> argparse.ArgumentParser:
    # subparsers share these flags; SUPPRESS keeps a value given before the subcommand
    d = None if defaults else argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=d, help="experiment JSON")
    p.add_argument("--seed", type=int, default=d, help="run seed (non-negative)")
    p.add_argument("--out", type=Path, default=d, help="run directory")
    p.add_argument("--plant", type=Path, default=d, help="plant config JSON")
    p.add_argument("--training", type=Path, default=d, help="training config JSON")
    p.add_argument("--trajectory", type=Path, default=d, help="training trajectory spec JSON")
    p.add_argument("--eval-trajectory", type=Path, default=d, help="evaluation trajectory spec JSON")
    p.add_argument("-v", "--verbose", action="store_true", default=False if defaults else d)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgnnff", parents=[_common(True)],
                                     description="Physics-guided neural network feedforward pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(False)
    g = sub.add_parser("gen-traj", parents=[common], help="sample reference trajectories to CSV")
    g.add_argument("--spec", type=Path, default=None,
                   help="write only this spec to trajectory.csv")
    sub.add_parser("gen-data", parents=[common], help="feedback-only closed loop -> dataset.csv")
    sub.add_parser("fit-physical", parents=[common], help="physical-only fit -> physical.json")
    t = sub.add_parser("train", parents=[common], help="train the physics-guided network")
    t.add_argument("--mode", choices=("ls", "op"), default="op")
    t.add_argument("--lambda", dest="lam", type=float, default=0.1)
    t.add_argument("--tag", default=None, help="artifact name (default pgnn_<mode>)")
    t.add_argument("--max-epochs", type=int, default=None)
    t.add_argument("--learning-rate", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--patience", type=int, default=None)
    e = sub.add_parser("evaluate", parents=[common], help="closed-loop and residual norms")
    e.add_argument("--eval-csv", type=Path, default=None,
                   help="trajectory CSV to evaluate on (default eval_trajectory.csv)")
    c = sub.add_parser("compare", parents=[common], help="merge evaluations of several runs")
    c.add_argument("runs", nargs="+", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "compare":
            out = args.out if args.out is not None else Path("compare")
            rows = cmd_compare(args.runs, out)
            print(f"wrote {Path(out) / 'compare.csv'} ({len(rows)} rows)")
            return EXIT_OK
        cfg = ExperimentConfig.load(args.config, plant=args.plant, training=args.training,
                                    trajectory=args.trajectory,
                                    eval_trajectory=args.eval_trajectory,
                                    out=args.out, seed=args.seed)
        if args.command == "gen-traj":
            for p in cmd_gen_traj(cfg, args.spec):
                print(f"wrote {p}")
        elif args.command == "gen-data":
            ds = cmd_gen_data(cfg)
            print(f"wrote {cfg.out / 'dataset.csv'} ({len(ds)} samples)")
        elif args.command == "fit-physical":
            rep = cmd_fit_physical(cfg)
            r = rep["residual"]
            print(f"physical fit: rms={r['rms']:.6g} ma={r['ma']:.6g} inf={r['inf']:.6g}")
        elif args.command == "train":
            stem = cmd_train(cfg, args.mode, args.lam, args.tag, max_epochs=args.max_epochs,
                             learning_rate=args.learning_rate, batch_size=args.batch_size,
                             patience=args.patience)
            print(f"wrote {stem}.model.json, {stem}.zeta.json, {stem}.history.csv")
        elif args.command == "evaluate":
            summary = cmd_evaluate(cfg, args.eval_csv)
            for name, n in summary["tracking"].items():
                print(f"{name:>10s} tracking rms={n['rms']:.6g}")
    except DegenerateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (CommandError, SignalError, SimulationError, TrainingError, ValueError,
            KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
