"""Command-line driver and benchmark harness.

Every subcommand reads one flat ``key = value`` configuration, writes a CSV
file with a header row and a sidecar ``<output>.config`` that records the
effective configuration and the seed derivation.  Feeding the sidecar back
through ``--config`` replays the run.

Precedence, lowest first: built-in defaults, config file, ``MLMCPIMD_<KEY>``
environment variables, command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
import traceback
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dynamics import ConfigError, HopConfig, LangevinConfig, TrajectoryError, run_pimdsh
from .estimators import (EstimateReport, mlmc_pimd, mse_estimate, pimdsh_estimate,
                         run_channel, run_replicates, trajectory_seed)
from .model import MODELS, OBSERVABLES, ModelDomainError, TestCase
from .oracle import (BudgetError, GridError, QuadratureGrid, SpectralGrid, TransferGrid,
                     quadrature_full_average, quadrature_reference_expectations,
                     quadrature_truncated_average, reference_with_convergence,
                     transfer_level_integrals)

log = logging.getLogger("mlmcpimd")

ENV_PREFIX = "MLMCPIMD_"
SUBCOMMANDS = ("reference", "oracle-quad", "rm-pimd", "mlmc-pimd", "pimd-sh",
               "bench-table1", "bench-table2", "bench-fig6", "trace-fig7")
_BENCH_REPLICATES = 20


@dataclass
class RunConfig:
    """Everything a run depends on.  Keys double as config-file keys."""

    test: str = "benchmark-1d"
    observable: str = "benchmark-1d"
    n_beads: int = 16
    beta: float = 1.0
    mass: float = 1.0
    gamma: float = 1.0
    dt: float = 0.005
    n_burn: int = 100_000
    eta: float = 1.0
    hop_scheme: str = "capped"
    k0: int = 5
    n_total: int = 1_200_000
    replicates: int = 0  # 0: one for single estimates, 20 for benchmarks
    seed: int = 0
    workers: int = 1
    output: str = "mlmcpimd.csv"
    # pimd-sh: seconds per trajectory, 0 to use n_total samples instead
    time_budget: float = 0.0
    # reference
    grid_points: int = 512
    grid_half_width: float = 8.0
    grid_tol: float = 1e-6
    # oracle-quad
    quad_beads: int = 3
    quad_points: int = 81
    quad_half_width: float = 4.0
    # benchmark references: "transfer", "spectral" or a number
    reference: str = "transfer"
    transfer_points: int = 201
    transfer_half_width: float = 5.0
    # bench-table1
    table1_levels: int = 3
    table1_samples: int = 200_000
    # bench-table2 and bench-fig6
    table2_totals: str = "200000,400000,600000,800000,1000000,1200000"
    fig6_totals: str = "200000,400000,800000"
    # trace-fig7
    trace_samples: int = 10_000
    trace_levels: int = 2

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, _coerce(f, getattr(self, f.name)))
        if self.test not in MODELS:
            raise ConfigError(f"unknown test {self.test!r}; choose from {sorted(MODELS)}")
        if self.observable not in OBSERVABLES:
            raise ConfigError(f"unknown observable {self.observable!r}; choose from {sorted(OBSERVABLES)}")
        if self.n_beads < 1 or self.replicates < 0 or self.workers < 1:
            raise ConfigError("n_beads and workers must be >= 1, replicates >= 0")
        if not (self.beta > 0 and self.mass > 0):
            raise ConfigError("beta and mass must be positive")
        if self.time_budget < 0:
            raise ConfigError("time_budget must be >= 0")
        _parse_list(self.table2_totals, "table2_totals")
        _parse_list(self.fig6_totals, "fig6_totals")
        self.reference_spec()

    # derived objects
    def test_case(self) -> TestCase:
        return TestCase(MODELS[self.test](self.mass), OBSERVABLES[self.observable](), self.beta)

    def langevin(self) -> LangevinConfig:
        return LangevinConfig(gamma=self.gamma, dt=self.dt, n_burn=self.n_burn, seed=self.seed)

    def hop(self) -> HopConfig:
        return HopConfig(eta=self.eta, base=self.langevin(), scheme=self.hop_scheme)

    def reps(self, bench: bool) -> int:
        if self.replicates:
            return self.replicates
        return _BENCH_REPLICATES if bench else 1

    def reference_spec(self):
        if self.reference in ("transfer", "spectral"):
            return self.reference
        try:
            return float(self.reference)
        except ValueError:
            raise ConfigError("reference must be 'transfer', 'spectral' or a number") from None

    def as_items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


_KEYS = {f.name: f for f in fields(RunConfig)}


def _coerce(f, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "int":
            if isinstance(value, str):
                x = float(value.replace("_", ""))
                if x != int(x):
                    raise ValueError
                return int(x)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {f.name}: {value!r} (expected {kind})") from None


def _parse_list(text: str, key: str) -> list:
    try:
        out = [int(float(t)) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of integers") from None
    if not out or min(out) < 1:
        raise ConfigError(f"{key} needs at least one positive entry")
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        out[key] = value
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key not in _KEYS:
                raise ConfigError(f"unknown key {key!r} in environment variable {name}")
            out[key] = value
    return out


def build_config(config_path: Optional[str] = None, flags: Optional[dict] = None,
                 environ=None) -> RunConfig:
    """Merge defaults, file, environment and flags (later wins)."""
    merged = {}
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        merged.update(parse_config_text(text, config_path))
    merged.update(env_overrides(environ))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})
    return RunConfig(**merged)


def config_text(cfg: RunConfig, subcommand: str, notes=()) -> str:
    lines = [f"# mlmcpimd {__version__} {subcommand}",
             f"# replay: mlmcpimd {subcommand} --config <this file>"]
    lines += [f"# {n}" for n in notes]
    lines += [f"{k} = {v}" for k, v in cfg.as_items()]
    return "\n".join(lines) + "\n"


# --- CSV ----------------------------------------------------------------------

def write_csv(path, rows: list, columns: Optional[list] = None):
    """Write dict rows with a header; columns default to first-seen key order."""
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k, "")) for k in columns})
    return columns


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _parse_cell(text: str):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def read_report(path) -> list:
    """Rows of an emitted CSV as dicts, with numbers parsed back to int/float."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def sidecar_path(output) -> Path:
    return Path(str(output) + ".config")


# --- references ---------------------------------------------------------------

def resolve_reference(cfg: RunConfig, test: TestCase, k0: Optional[int]) -> float:
    """Target value for MSE: transfer-matrix ``I_2k0`` (k0=None: untruncated) or grid value."""
    spec = cfg.reference_spec()
    if isinstance(spec, float):
        return spec
    if spec == "spectral":
        grid = SpectralGrid(cfg.grid_points, cfg.grid_half_width)
        return reference_with_convergence(test, grid, cfg.grid_tol)[0]
    num, den, _ = transfer_level_integrals(test, cfg.n_beads,
                                           TransferGrid(cfg.transfer_points, cfg.transfer_half_width))
    top = len(num) if k0 is None else k0 + 1
    return float(num[:top].sum() / den[:top].sum())


# --- subcommand bodies (each returns rows, notes, console text) ---------------

def cmd_reference(cfg: RunConfig):
    test = cfg.test_case()
    grid = SpectralGrid(cfg.grid_points, cfg.grid_half_width)
    t0 = time.perf_counter()
    value, delta = reference_with_convergence(test, grid, cfg.grid_tol)
    secs = time.perf_counter() - t0
    row = {"test": cfg.test, "observable": cfg.observable, "beta": cfg.beta, "mass": cfg.mass,
           "n_points": grid.n_points, "half_width": grid.half_width, "value": value,
           "refinement_delta": delta}
    text = f"reference value {value:.10f}\nrefinement delta {delta:.3e}\n({secs:.2f} s)"
    return [row], [], text


def cmd_oracle_quad(cfg: RunConfig):
    test = cfg.test_case()
    n = cfg.quad_beads
    grid = QuadratureGrid(cfg.quad_points, cfg.quad_half_width)
    full = quadrature_full_average(test, n, grid)
    rows = []
    for k0 in range(n // 2 + 1):
        ea, eb = quadrature_reference_expectations(test, n, k0, grid)
        val = quadrature_truncated_average(test, n, k0, grid)
        rows.append({"N": n, "k0": k0, "E_A_k": ea, "E_B_k": eb, "I_2k0": val,
                     "I_full": full, "gap": full - val})
    text = "\n".join(f"N={r['N']} k0={r['k0']}  I_2k0={r['I_2k0']:.12f}  gap={r['gap']:.3e}"
                     for r in rows)
    return rows, [], text


def _estimate_row(rep: EstimateReport) -> dict:
    row = rep.to_row()
    row.pop("wall_clock")  # kept out of the CSV so reruns are byte-identical
    return row


def _seed_notes(master: int, keys) -> list:
    notes = ["trajectory seed = SeedSequence(seed, spawn_key=(replicate, level, channel)),"
             " channel A=0 B=1 SH=2"]
    notes += [f"spawn_key {k}" for k in keys]
    return notes


def cmd_estimate(cfg: RunConfig, method: str):
    test = cfg.test_case()
    reps = run_replicates(method, test, cfg.n_beads, cfg.k0, cfg.n_total, cfg.langevin(),
                          cfg.seed, cfg.reps(False), workers=cfg.workers)
    keys = [v for r in reps for v in r.seeds.values()]
    text = "\n\n".join(r.to_text() for r in reps)
    return [_estimate_row(r) for r in reps], _seed_notes(cfg.seed, keys), text


def cmd_pimdsh(cfg: RunConfig):
    test = cfg.test_case()
    budget = cfg.time_budget or None
    out = []
    for r in range(cfg.reps(False)):
        rep = pimdsh_estimate(test, cfg.n_beads, cfg.hop(), cfg.seed,
                              n_samples=None if budget else cfg.n_total,
                              time_budget=budget, replicate=r)
        out.append(rep)
    keys = [v for r in out for v in r.seeds.values()]
    rows = [_estimate_row(r) for r in out]
    if budget:
        for row, rep in zip(rows, out):
            row["wall_clock"] = rep.wall_clock
    return rows, _seed_notes(cfg.seed, keys), "\n\n".join(r.to_text() for r in out)


def table1_rows(test: TestCase, n_beads: int, levels: int, n_samples: int,
                cfg: LangevinConfig, seed: int, replicates: int) -> list:
    """Replicate variance of the A-channel sub-estimators, levels ``0..levels``.

    One trajectory per replicate yields all levels at once.
    """
    if replicates < 2:
        raise ConfigError("bench-table1 needs at least two replicates")
    means, naive, batch = [], [], []
    for r in range(replicates):
        run = run_channel(test, n_beads, cfg, trajectory_seed(seed, r, levels, "A"),
                          n_samples, levels, "A")
        means.append(run.means)
        naive.append(run.variances)
        batch.append(run.batch_variances)
    means = np.array(means)
    rows = []
    for k in range(levels + 1):
        rows.append({"k": k, "N_k": n_samples, "replicates": replicates,
                     "mean_A": float(means[:, k].mean()),
                     "estimator_variance": float(means[:, k].var(ddof=1)),
                     "summand_variance": float(np.mean([v[k] for v in naive])),
                     "longrun_variance": float(np.mean([v[k] for v in batch]))})
    return rows


def cmd_table1(cfg: RunConfig):
    rows = table1_rows(cfg.test_case(), cfg.n_beads, cfg.table1_levels, cfg.table1_samples,
                       cfg.langevin(), cfg.seed, cfg.reps(True))
    text = "\n".join(f"k={r['k']}  var(estimator)={r['estimator_variance']:.4e}" for r in rows)
    return rows, _seed_notes(cfg.seed, [f"(r, {cfg.table1_levels}, 0) for r < {cfg.reps(True)}"]), text


def table2_rows(test: TestCase, n_beads: int, k0: int, totals: list, cfg: LangevinConfig,
                seed: int, replicates: int, reference: float, workers: int = 1) -> list:
    """MSE and mean seconds of MLMC at each total, then RM at the largest.

    Each row draws its own block of replicate indices, so rows are independent.
    """
    plan = [("MLMC", t) for t in totals] + [("RM", max(totals))]
    rows = []
    for i, (method, nt) in enumerate(plan):
        reps = run_replicates(method, test, n_beads, k0, nt, cfg, seed, replicates,
                              workers=workers, first_replicate=i * replicates)
        est = [r.estimate for r in reps]
        rows.append({"method": method, "n_total": nt, "k0": k0, "replicates": replicates,
                     "first_replicate": i * replicates, "mse": mse_estimate(est, reference),
                     "mean_estimate": float(np.mean(est)), "reference": reference,
                     "mean_seconds": float(np.mean([r.wall_clock for r in reps]))})
    return rows


def cmd_table2(cfg: RunConfig):
    test = cfg.test_case()
    ref = resolve_reference(cfg, test, cfg.k0)
    reps = cfg.reps(True)
    rows = table2_rows(test, cfg.n_beads, cfg.k0, _parse_list(cfg.table2_totals, "table2_totals"),
                       cfg.langevin(), cfg.seed, reps, ref, cfg.workers)
    text = "\n".join(f"{r['method']:<5} N_T={r['n_total']:>8}  MSE={r['mse']:.4e}  "
                     f"t={r['mean_seconds']:.2f} s" for r in rows)
    return rows, _seed_notes(cfg.seed, ["row i uses replicates i*R .. i*R+R-1"]), text


def fig6_rows(test: TestCase, n_beads: int, k0: int, totals: list, hop: HopConfig,
              seed: int, replicates: int, reference: float) -> list:
    """MLMC at each total, then PIMD-SH given the mean MLMC wall clock as its budget."""
    rows = []
    for i, nt in enumerate(totals):
        first = 2 * i * replicates
        reps = [mlmc_pimd(test, n_beads, k0, nt, hop.base, seed, first + r)
                for r in range(replicates)]
        budget = float(np.mean([r.wall_clock for r in reps]))
        rows.append({"method": "MLMC", "budget_seconds": budget, "n_total": nt,
                     "replicates": replicates, "first_replicate": first,
                     "mse": mse_estimate([r.estimate for r in reps], reference),
                     "mean_seconds": budget, "reference": reference})
        sh = [pimdsh_estimate(test, n_beads, hop, seed, time_budget=budget,
                              replicate=first + replicates + r) for r in range(replicates)]
        rows.append({"method": "PIMD-SH", "budget_seconds": budget,
                     "n_total": int(np.mean([r.n_total for r in sh])),
                     "replicates": replicates, "first_replicate": first + replicates,
                     "mse": mse_estimate([r.estimate for r in sh], reference),
                     "mean_seconds": float(np.mean([r.wall_clock for r in sh])),
                     "reference": reference})
    return rows


def cmd_fig6(cfg: RunConfig):
    test = cfg.test_case()
    ref = resolve_reference(cfg, test, None)
    rows = fig6_rows(test, cfg.n_beads, cfg.k0, _parse_list(cfg.fig6_totals, "fig6_totals"),
                     cfg.hop(), cfg.seed, cfg.reps(True), ref)
    text = "\n".join(f"{r['method']:<8} budget={r['budget_seconds']:.2f} s  MSE={r['mse']:.4e}"
                     for r in rows)
    notes = ["budget i: MLMC replicates 2iR .. 2iR+R-1, PIMD-SH the next R",
             "PIMD-SH sample counts depend on timing; only MLMC rows replay exactly"]
    return rows, _seed_notes(cfg.seed, notes), text


def trace_rows(test: TestCase, n_beads: int, levels: int, n_samples: int, hop: HopConfig,
               seed: int) -> list:
    """``W_N[A]`` along PIMD-SH and ``A_k`` along level-k reference trajectories."""
    cols = {}
    ws = []
    run_pimdsh(test.model, test.observable, n_beads, test.beta, hop,
               trajectory_seed(seed, 0, 0, "SH"), n_samples=n_samples,
               trace=lambda w, block: ws.append(w))
    cols["W"] = np.concatenate(ws)
    for k in range(levels + 1):
        vals = []
        run_channel(test, n_beads, hop.base, trajectory_seed(seed, 0, k, "A"), n_samples, k, "A",
                    trace=lambda v: vals.append(v[:, -1].copy()))
        cols[f"A_{k}"] = np.concatenate(vals)
    dt = hop.base.dt
    return [{"step": i + 1, "time": (i + 1) * dt, **{c: float(v[i]) for c, v in cols.items()}}
            for i in range(n_samples)]


def cmd_trace(cfg: RunConfig):
    rows = trace_rows(cfg.test_case(), cfg.n_beads, cfg.trace_levels, cfg.trace_samples,
                      cfg.hop(), cfg.seed)
    keys = ["(0, 0, 2)"] + [f"(0, {k}, 0)" for k in range(cfg.trace_levels + 1)]
    text = f"{len(rows)} samples after {cfg.n_burn} burn-in steps"
    return rows, _seed_notes(cfg.seed, keys), text


COMMANDS = {
    "reference": cmd_reference,
    "oracle-quad": cmd_oracle_quad,
    "rm-pimd": lambda c: cmd_estimate(c, "RM"),
    "mlmc-pimd": lambda c: cmd_estimate(c, "MLMC"),
    "pimd-sh": cmd_pimdsh,
    "bench-table1": cmd_table1,
    "bench-table2": cmd_table2,
    "bench-fig6": cmd_fig6,
    "trace-fig7": cmd_trace,
}


# --- entry point --------------------------------------------------------------

_EXIT = ((ConfigError, 2), (ModelDomainError, 3), (TrajectoryError, 3),
         (GridError, 4), (BudgetError, 4))


def _failing_module(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    for fr in reversed(frames):
        p = Path(fr.filename)
        if p.parent.name == "mlmcpimd":
            return p.stem.lstrip("_")
    return "cli"


def run(subcommand: str, config_path: Optional[str] = None, flags: Optional[dict] = None,
        environ=None, stream=None) -> int:
    """Execute one subcommand; returns the process exit status."""
    stream = sys.stdout if stream is None else stream
    try:
        if subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        cfg = build_config(config_path, flags, environ)
        log.info("effective config for %s: %s", subcommand,
                 ", ".join(f"{k}={v}" for k, v in cfg.as_items()))
        rows, notes, text = COMMANDS[subcommand](cfg)
        out = Path(cfg.output)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True)
        write_csv(out, rows)
        sidecar_path(out).write_text(config_text(cfg, subcommand, notes), encoding="utf-8")
        print(text, file=stream)
        print(f"wrote {out} and {sidecar_path(out)}", file=stream)
        return 0
    except Exception as exc:  # map library errors to exit codes
        for kind, code in _EXIT:
            if isinstance(exc, kind):
                print(f"mlmcpimd: error in {_failing_module(exc)}: {exc}", file=sys.stderr)
                return code
        raise


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlmcpimd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("-q", "--quiet", action="store_true", help="do not log the effective config")
        for f in fields(RunConfig):
            sp.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                            metavar=str(f.type).upper())
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    flags = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return run(args.subcommand, args.config, flags)


if __name__ == "__main__":
    sys.exit(main())
