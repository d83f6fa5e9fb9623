"""Command-line entry point: ``vectoradam <command> [--config cfg.json] [flags]``.

Exit codes: 0 success, 1 usage/config error, 2 assertion failure,
3 numeric failure during a run.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import click
import numpy as np

from . import diagnostics as diag
from .energy import ENERGIES, DegenerateTriangleError, initial_params, make_energy
from .mesh import _atomic_write_text, resolve_mesh, save_obj
from .optim import OPTIMIZERS, EnergyEvaluationError, Hyper, NonFiniteGradientError, run
from .tensor import Rotation

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_NUMERIC = 0, 1, 2, 3

# Per-command fallbacks used when neither the config file nor a flag sets a value.
COMMAND_DEFAULTS = {
    "run": {"energy": "laplacian", "mesh": "circle:64", "steps": 100},
    "equivariance": {"energy": "laplacian", "mesh": "circle:64", "steps": 100},
    # small steps keep Adam in its early, sign-like regime
    "histogram": {"optimizer": "adam", "energy": "arap", "mesh": "disk:7", "steps": 100, "alpha": 1e-5},
    "spread": {"energy": "symdir", "mesh": "disk:7", "steps": 200},
    "anisotropy": {"mesh": "circle:256", "steps": 15000, "alpha": 5e-5},
    "gradcheck": {},
}

GRADCHECK_MESHES = {"quad": "circle:64", "laplacian": "circle:64", "symdir": "disk:7", "arap": "disk:7",
                    "umbrella": "circle:64"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    optimizer: str = "vectoradam"
    alpha: float | None = None
    alpha_list: tuple | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    energy: str | None = None
    mesh: str | None = None
    steps: int | None = None
    seed: int = 0
    out: str = "out"
    expect: str | None = None
    tolerance: float | None = None
    witness_angle_deg: float = 30.0
    angle_deg: float | None = None
    identity_rotation: bool = False
    rotations: int = 16
    trials: int = 100
    bins: int = 36
    spike_halfwidth_deg: float = 5.0
    spike_threshold: float = 0.5
    uniformity_threshold: float = 0.1
    cone_deg: float = 10.0
    isotropy_tolerance: float = 0.03
    anisotropy_threshold: float = 0.10
    points: int = 20
    h: float | None = None

    def hyper(self, alpha=None) -> Hyper:
        return Hyper(alpha if alpha is not None else self.alpha, self.beta1, self.beta2, self.epsilon)

    def to_json(self) -> dict:
        d = asdict(self)
        if d["alpha_list"] is not None:
            d["alpha_list"] = list(d["alpha_list"])
        return d


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")
    return data


def resolve_config(command: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Merge command defaults < config file < flags, then validate."""
    merged = dict(COMMAND_DEFAULTS.get(command, {}))
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    if merged.get("alpha") is None:
        merged["alpha"] = Hyper().alpha
    if merged.get("alpha_list") is not None:
        merged["alpha_list"] = tuple(float(a) for a in merged["alpha_list"])
    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    validate(cfg, command)
    return cfg


def validate(cfg: ExperimentConfig, command: str) -> None:
    if cfg.optimizer not in OPTIMIZERS:
        raise ConfigError("optimizer", f"{cfg.optimizer!r} is not one of {OPTIMIZERS}")
    if cfg.energy is not None and cfg.energy not in ENERGIES:
        raise ConfigError("energy", f"{cfg.energy!r} is not one of {ENERGIES}")
    if cfg.steps is not None and (not isinstance(cfg.steps, int) or cfg.steps < 1):
        raise ConfigError("steps", "must be an integer >= 1")
    for name, value in [("alpha", cfg.alpha)] + [("alpha_list", a) for a in cfg.alpha_list or ()]:
        if not (isinstance(value, (int, float)) and value > 0):
            raise ConfigError(name, "must be > 0")
    try:
        cfg.hyper()
    except ValueError as exc:
        raise ConfigError("hyper", str(exc)) from exc
    if cfg.rotations < 1:
        raise ConfigError("rotations", "must be >= 1")
    if cfg.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    if cfg.bins < 1:
        raise ConfigError("bins", "must be >= 1")
    if cfg.points < 1:
        raise ConfigError("points", "must be >= 1")
    if cfg.h is not None and not cfg.h > 0:
        raise ConfigError("h", "must be > 0")
    allowed = {
        "equivariance": (None, "equivariant", "nonequivariant"),
        "spread": (None, "equivariant", "nonequivariant"),
        "histogram": (None, "uniform", "biased"),
        "anisotropy": (None, "isotropic", "anisotropic"),
    }
    if command in allowed and cfg.expect not in allowed[command]:
        raise ConfigError("expect", f"{cfg.expect!r} not in {allowed[command][1:]}")


def _mesh(cfg: ExperimentConfig, source=None):
    try:
        return resolve_mesh(source or cfg.mesh)
    except (OSError, ValueError) as exc:
        raise ConfigError("mesh", str(exc)) from exc


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _write_csv(path: Path, rows) -> None:
    _atomic_write_text(path, _csv_text(rows))


def _write_json(path: Path, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    energy = _energy(cfg.energy, mesh)
    p0 = initial_params(cfg.energy, mesh)
    out = _outdir(cfg)
    alphas = cfg.alpha_list or (cfg.alpha,)
    sweep = []
    for k, alpha in enumerate(alphas):
        target = out if cfg.alpha_list is None else out / f"alpha_{k:02d}"
        target.mkdir(parents=True, exist_ok=True)
        traj = run(cfg.optimizer, cfg.hyper(alpha), energy, p0, cfg.steps)
        _write_csv(target / "loss.csv",
                   [("step", "loss")] + [(t, repr(float(l))) for t, l in enumerate(traj.losses[1:], 1)])
        save_obj(mesh, target / "final.obj", vertices=traj.final)
        _write_json(target / "config.json", {
            "config": replace(cfg, alpha=alpha, alpha_list=None).to_json(),
            "initial_loss": traj.losses[0],
            "final_loss": traj.losses[-1],
        })
        sweep.append((repr(alpha), repr(float(traj.losses[-1]))))
    if cfg.alpha_list is not None:
        _write_csv(out / "sweep.csv", [("alpha", "final_loss")] + sweep)
        _write_json(out / "config.json", {"config": cfg.to_json()})
    return EXIT_OK


def _energy(energy_id, mesh):
    try:
        return make_energy(energy_id, mesh)
    except ValueError as exc:
        raise ConfigError("energy", str(exc)) from exc


def _fixed_rotation(n: int, degrees: float) -> Rotation:
    phi = np.radians(degrees)
    if n == 2:
        return Rotation.from_angle(phi)
    if n == 3:
        return Rotation.from_quaternion([np.cos(phi / 2), 0.0, 0.0, np.sin(phi / 2)])
    raise ConfigError("mesh", f"unsupported dimension {n}")


def cmd_equivariance(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    _energy(cfg.energy, mesh)
    expect = cfg.expect or "equivariant"
    tol = cfg.tolerance if cfg.tolerance is not None else (1e-6 if expect == "equivariant" else 1e-3)
    n = mesh.dim
    if cfg.identity_rotation:
        rot = Rotation.identity(n)
    elif cfg.angle_deg is not None:
        rot = _fixed_rotation(n, cfg.angle_deg)
    elif expect == "nonequivariant":
        # multiples of 90 degrees permute axes and can leave Adam equivariant
        rot = _fixed_rotation(n, cfg.witness_angle_deg)
    else:
        rot = None
    report = diag.check_equivariance(cfg.optimizer, cfg.energy, mesh, cfg.steps, cfg.seed, cfg.hyper(),
                                     rotation=rot, tolerance=tol, expect=expect)
    out = _outdir(cfg)
    _write_csv(out / "deviation.csv", report.csv_rows())
    _write_json(out / "equivariance.json", {"config": cfg.to_json(), "report": report.to_dict()})
    return EXIT_OK if report.passed else EXIT_ASSERT


def cmd_histogram(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    _energy(cfg.energy, mesh)
    hist = diag.first_step_histogram(cfg.optimizer, cfg.energy, mesh, cfg.trials, cfg.steps, cfg.seed,
                                     cfg.hyper(), cfg.bins, cfg.spike_halfwidth_deg)
    expect = cfg.expect or "uniform"
    if expect == "biased":
        passed = hist.spike > cfg.spike_threshold
    else:
        passed = hist.uniformity < cfg.uniformity_threshold
    out = _outdir(cfg)
    _write_csv(out / "histogram.csv", hist.csv_rows())
    metrics = hist.to_dict()
    metrics.update(expect=expect, spike_threshold=cfg.spike_threshold,
                   uniformity_threshold=cfg.uniformity_threshold, passed=passed)
    _write_json(out / "histogram.json", {"config": cfg.to_json(), "metrics": metrics})
    return EXIT_OK if passed else EXIT_ASSERT


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    energies = [cfg.energy] if cfg.energy else ["quad", "laplacian", "symdir", "arap"]
    table = {}
    passed = True
    for name in energies:
        mesh = _mesh(cfg, cfg.mesh or GRADCHECK_MESHES[name])
        _energy(name, mesh)
        res = diag.gradcheck(name, mesh, cfg.points, cfg.h, cfg.seed)
        tol = cfg.tolerance if cfg.tolerance is not None else diag.GRADCHECK_TOL[name]
        ok = res.max_error < tol and not res.failed_probes
        passed &= ok
        entry = res.to_dict()
        entry.update(mesh=cfg.mesh or GRADCHECK_MESHES[name], tolerance=tol, passed=ok)
        table[name] = entry
    out = _outdir(cfg)
    _write_json(out / "gradcheck.json", {"config": cfg.to_json(), "results": table, "passed": passed})
    return EXIT_OK if passed else EXIT_ASSERT


def cmd_spread(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    _energy(cfg.energy, mesh)
    rep = diag.rotated_loss_spread(cfg.optimizer, cfg.energy, mesh, cfg.rotations, cfg.steps, cfg.hyper())
    expect = cfg.expect or "equivariant"
    worst = float(rep.normalized.max())
    if expect == "equivariant":
        tol = cfg.tolerance if cfg.tolerance is not None else 1e-6
        passed = worst < tol
    else:
        tol = cfg.tolerance if cfg.tolerance is not None else 1e-3
        passed = worst > tol
    out = _outdir(cfg)
    _write_csv(out / "spread.csv", rep.csv_rows())
    _write_csv(out / "curves.csv", rep.curve_rows())
    metrics = rep.to_dict()
    metrics.update(expect=expect, tolerance=tol, passed=passed)
    _write_json(out / "spread.json", {"config": cfg.to_json(), "metrics": metrics})
    return EXIT_OK if passed else EXIT_ASSERT


def cmd_anisotropy(cfg: ExperimentConfig) -> int:
    mesh = _mesh(cfg)
    rep = diag.anisotropy_track(cfg.optimizer, mesh, cfg.steps, cfg.hyper(), cfg.cone_deg)
    step, ratio = rep.milestone()
    expect = cfg.expect or "isotropic"
    if step is None:
        passed = False
    elif expect == "isotropic":
        passed = abs(ratio - 1.0) <= cfg.isotropy_tolerance
    else:
        passed = abs(ratio - 1.0) > cfg.anisotropy_threshold
    out = _outdir(cfg)
    _write_csv(out / "anisotropy.csv", rep.csv_rows())
    metrics = rep.to_dict()
    metrics.update(expect=expect, passed=passed)
    _write_json(out / "anisotropy.json", {"config": cfg.to_json(), "metrics": metrics})
    return EXIT_OK if passed else EXIT_ASSERT


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file."),
        click.option("--optimizer", type=click.Choice(OPTIMIZERS)),
        click.option("--alpha", type=float),
        click.option("--beta1", type=float),
        click.option("--beta2", type=float),
        click.option("--epsilon", type=float),
        click.option("--energy", type=click.Choice(ENERGIES)),
        click.option("--mesh", help="circle:k, icosphere:s, disk:r or an OBJ path."),
        click.option("--steps", type=int),
        click.option("--seed", type=int),
        click.option("--out", type=click.Path(file_okay=False)),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _dispatch(command, handler, config_path, flags) -> int:
    file_values = load_config(config_path) if config_path else {}
    cfg = resolve_config(command, file_values, flags)
    return handler(cfg)


@click.group()
def cli():
    """Adam vs VectorAdam experiments on rotation-invariant geometric energies."""


@cli.command("run")
@_common
@click.option("--alpha-list", help="Comma-separated learning rates; one sub-run per value.")
def run_cmd(config_path, alpha_list, **flags):
    """Optimize one energy; write loss.csv, final.obj and config.json."""
    if alpha_list:
        try:
            flags["alpha_list"] = [float(a) for a in alpha_list.split(",")]
        except ValueError:
            raise ConfigError("alpha_list", "expected comma-separated numbers") from None
    return _dispatch("run", cmd_run, config_path, flags)


@cli.command("equivariance")
@_common
@click.option("--expect", type=click.Choice(["equivariant", "nonequivariant"]))
@click.option("--tolerance", type=float)
@click.option("--angle-deg", type=float, help="Fixed rotation angle instead of a seeded random one.")
@click.option("--witness-angle-deg", type=float)
@click.option("--identity-rotation", is_flag=True, default=None)
def equivariance_cmd(config_path, **flags):
    """Compare a run with its rotated twin; exit 2 if the expectation fails."""
    return _dispatch("equivariance", cmd_equivariance, config_path, flags)


@cli.command("histogram")
@_common
@click.option("--expect", type=click.Choice(["uniform", "biased"]))
@click.option("--trials", type=int)
@click.option("--bins", type=int)
@click.option("--spike-threshold", type=float)
@click.option("--uniformity-threshold", type=float)
@click.option("--spike-halfwidth-deg", type=float)
def histogram_cmd(config_path, **flags):
    """Angular histogram of update directions over rotated starts."""
    return _dispatch("histogram", cmd_histogram, config_path, flags)


@cli.command("gradcheck")
@_common
@click.option("--points", type=int)
@click.option("-h", "--h", "h", type=float, help="Finite-difference step (default per energy).")
@click.option("--tolerance", type=float)
def gradcheck_cmd(config_path, **flags):
    """Analytic vs central-difference gradients for each energy."""
    return _dispatch("gradcheck", cmd_gradcheck, config_path, flags)


@cli.command("spread")
@_common
@click.option("--expect", type=click.Choice(["equivariant", "nonequivariant"]))
@click.option("--rotations", type=int)
@click.option("--tolerance", type=float)
def spread_cmd(config_path, **flags):
    """Loss curves of evenly rotated inputs and their max-min spread."""
    return _dispatch("spread", cmd_spread, config_path, flags)


@cli.command("anisotropy")
@_common
@click.option("--expect", type=click.Choice(["isotropic", "anisotropic"]))
@click.option("--cone-deg", type=float)
@click.option("--isotropy-tolerance", type=float)
@click.option("--anisotropy-threshold", type=float)
def anisotropy_cmd(config_path, **flags):
    """Diagonal/axis radius ratio while the Laplacian shrinks a circle or sphere."""
    return _dispatch("anisotropy", cmd_anisotropy, config_path, flags)


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="vectoradam", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    except (EnergyEvaluationError, NonFiniteGradientError, DegenerateTriangleError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
