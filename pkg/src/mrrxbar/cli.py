"""
Command-line entry point.

Every subcommand writes CSV data plus a ``<command>.json`` sidecar holding
the fully resolved run configuration and a results summary. Passing the
sidecar back through ``--config`` reproduces the run byte for byte.

Exit codes: 0 success, 1 configuration error, 2 simulation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, benchmark
from .calibration import (
    FeedbackParams,
    apply_correction,
    pd_operating_point,
    fit_backward_correction,
    measure_backward_matrix,
    measure_forward_matrix,
    program_weights,
    readout_scale,
)
from .crossbar import CrossbarConfig, spectrum_csv, spectrum_scan
from .errors import ConfigError, MrrError
from .onn import (
    MaxNormalizer,
    MlpSpec,
    TrainConfig,
    infer_dataset,
    load_iris,
    stratified_split,
    train,
    train_ex_situ,
)
from .signed_mvm import make_backend, mvm_signed_full, mvm_signed_weights, split_weights

# Representative binary 4×4 weight patterns for the programming and transpose demos.
NAMED_MATRICES = {
    "identity4": np.eye(4),
    "cross4": np.array([[1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 1, 0], [1, 0, 0, 1]], float),
    "upper4": np.triu(np.ones((4, 4))),
    "shift4": np.roll(np.eye(4), 1, axis=1),
    "ones4": np.ones((4, 4)),
    "half4": np.full((4, 4), 0.5),
}


@dataclass(frozen=True)
class SpectraOptions:
    port: int = 1
    steps: int = 2001
    matrix: str = "identity4"


@dataclass(frozen=True)
class ProgramOptions:
    matrix: str = "cross4"
    operating_point: str = "microamp"


@dataclass(frozen=True)
class TransposeOptions:
    matrices: tuple = ("cross4", "upper4", "shift4")
    operating_point: str = "microamp"


@dataclass(frozen=True)
class MvmOptions:
    matrix: str = "identity4"
    input: str = "1,0,0,0"
    backend: str = "ideal"
    scheme: str = "full"


@dataclass(frozen=True)
class TrainOptions:
    learning_rate: float = 0.01
    epochs: int = 500
    backend: str = "crossbar"
    update_mode: str = "weight_domain"
    scale1: float = 1.0
    scale2: float = 4.0


@dataclass(frozen=True)
class InferOptions:
    backend: str = "crossbar"
    n_train: int = 50
    restarts: int = 5


@dataclass(frozen=True)
class BenchOptions:
    n: int = 100
    bits: int = 8
    f_clk: float = 3e9
    n_min: int = 10
    n_max: int = 1000
    points: int = 31


# section name -> options dataclass; "crossbar" is handled by CrossbarConfig itself
SECTIONS = {
    "feedback": FeedbackParams,
    "power": benchmark.PowerParams,
    "spectra": SpectraOptions,
    "program": ProgramOptions,
    "transpose": TransposeOptions,
    "mvm": MvmOptions,
    "train": TrainOptions,
    "infer": InferOptions,
    "bench": BenchOptions,
}


@dataclass(frozen=True)
class RunConfig:
    """All parameters of a run; every field has a default."""

    seed: int = 42
    dataset: Optional[str] = None
    crossbar: CrossbarConfig = field(default_factory=CrossbarConfig)
    feedback: FeedbackParams = field(default_factory=FeedbackParams)
    power: benchmark.PowerParams = field(default_factory=benchmark.PowerParams)
    spectra: SpectraOptions = field(default_factory=SpectraOptions)
    program: ProgramOptions = field(default_factory=ProgramOptions)
    transpose: TransposeOptions = field(default_factory=TransposeOptions)
    mvm: MvmOptions = field(default_factory=MvmOptions)
    train: TrainOptions = field(default_factory=TrainOptions)
    infer: InferOptions = field(default_factory=InferOptions)
    bench: BenchOptions = field(default_factory=BenchOptions)

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "dataset": self.dataset, "crossbar": self.crossbar.to_dict()}
        for name in SECTIONS:
            d[name] = {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in asdict(getattr(self, name)).items()}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        # a sidecar embeds the config next to its results
        if "config" in data and "command" in data:
            data = data["config"]
        kw = {}
        for key, value in data.items():
            if key in ("seed", "dataset"):
                kw[key] = value
            elif key == "crossbar":
                _need_dict(key, value)
                kw[key] = CrossbarConfig.from_dict(value)
            elif key in SECTIONS:
                _need_dict(key, value)
                kw[key] = _section(SECTIONS[key], key, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**kw)


def _need_dict(key, value):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be an object")


def _section(cls, name: str, values: dict, base=None):
    allowed = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key!r}")
    values = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in section {name!r}: {exc}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON run config or a previous sidecar")
    parser.add_argument("--seed", type=int, default=d)
    parser.add_argument("--out", default=d, help="output directory (fallback: $MRRXBAR_OUT, then .)")
    parser.add_argument("--dataset", default=d, help="Iris CSV path (default: bundled copy)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrrxbar", description="Microring crossbar simulator.")
    p.add_argument("--version", action="version", version=__version__)
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help):
        s = sub.add_parser(name, help=help)
        _globals(s, suppress=True)
        return s

    s = cmd("spectra", help="drop spectra at the PDs for a single-port sweep")
    s.add_argument("--port", type=int, dest="spectra.port")
    s.add_argument("--steps", type=int, dest="spectra.steps")
    s.add_argument("--matrix", dest="spectra.matrix")

    s = cmd("program", help="feedback-program a weight matrix")
    s.add_argument("--matrix", dest="program.matrix")
    s.add_argument("--operating-point", choices=("microamp", "unit"), dest="program.operating_point")
    s.add_argument("--tolerance", type=float, dest="feedback.tolerance")
    s.add_argument("--kappa", type=float, dest="crossbar.thermal_coupling_kappa")

    s = cmd("transpose", help="backward readout and scale-correction fit")
    s.add_argument("--matrices", dest="transpose.matrices")
    s.add_argument("--operating-point", choices=("microamp", "unit"), dest="transpose.operating_point")
    s.add_argument("--kappa", type=float, dest="crossbar.thermal_coupling_kappa")

    s = cmd("mvm", help="signed matrix-vector product")
    s.add_argument("--matrix", dest="mvm.matrix")
    s.add_argument("--input", dest="mvm.input")
    s.add_argument("--backend", choices=("ideal", "crossbar"), dest="mvm.backend")
    s.add_argument("--scheme", choices=("full", "weights"), dest="mvm.scheme")

    s = cmd("train", help="on-chip backpropagation training on Iris")
    s.add_argument("--backend", choices=("ideal", "crossbar"), dest="train.backend")
    s.add_argument("--epochs", type=int, dest="train.epochs")
    s.add_argument("--lr", type=float, dest="train.learning_rate")
    s.add_argument("--update-mode", choices=("weight_domain", "phase_domain"),
                   dest="train.update_mode")

    s = cmd("infer", help="ex-situ training, then inference on held-out Iris samples")
    s.add_argument("--backend", choices=("ideal", "crossbar"), dest="infer.backend")
    s.add_argument("--restarts", type=int, dest="infer.restarts")

    s = cmd("bench", help="design-rule, efficiency and training-time tables")
    s.add_argument("--n", type=int, dest="bench.n")
    s.add_argument("--bits", type=int, dest="bench.bits")
    s.add_argument("--f-clk", type=float, dest="bench.f_clk")
    s.add_argument("--n-min", type=int, dest="bench.n_min")
    s.add_argument("--n-max", type=int, dest="bench.n_max")
    s.add_argument("--points", type=int, dest="bench.points")
    return p


def resolve(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the ``--config`` file, then command-line flags."""
    run = RunConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        run = RunConfig.from_dict(data)
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.dataset is not None:
        run = replace(run, dataset=args.dataset)
    overrides: dict = {}
    for key, value in vars(args).items():
        if "." in key and value is not None:
            section, name = key.split(".", 1)
            if name == "matrices":
                value = tuple(v.strip() for v in value.split(",") if v.strip())
            overrides.setdefault(section, {})[name] = value
    for section, values in overrides.items():
        if section == "crossbar":
            try:
                run = replace(run, crossbar=run.crossbar.replace(**values))
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        else:
            run = replace(run, **{section: _section(SECTIONS[section], section, values,
                                                     getattr(run, section))})
    return run


def parse_matrix(text: str, rng=None) -> np.ndarray:
    """A named matrix, ``random<N>`` (uniform [0, 0.9]), or rows like ``1,0;0,1``."""
    if text in NAMED_MATRICES:
        return NAMED_MATRICES[text].copy()
    if text.startswith("random"):
        try:
            n = int(text[6:] or 4)
        except ValueError as exc:
            raise ConfigError(f"bad matrix name {text!r}") from exc
        rng = rng if rng is not None else np.random.default_rng(0)
        return rng.uniform(0.0, 0.9, (n, n))
    try:
        rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
        m = np.array(rows, float)
    except ValueError as exc:
        raise ConfigError(f"bad matrix {text!r}") from exc
    if m.ndim != 2:
        raise ConfigError(f"ragged matrix {text!r}")
    return m


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], float)
    except ValueError as exc:
        raise ConfigError(f"bad input vector {text!r}") from exc


def _fmt(v: float) -> str:
    v = round(float(v), 12)
    return "0" if v == 0 else f"{v:.12g}"


def _matrix_rows(m) -> list:
    return [[_fmt(v) for v in row] for row in np.atleast_2d(m)]


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


class Output:
    """Collects files for one command and writes them together with the sidecar."""

    def __init__(self, directory: Path, command: str, run: RunConfig):
        self.directory = directory
        self.command = command
        self.run = run
        self.files: dict = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def finish(self, results: dict) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.directory / name).write_text(text)
        sidecar = {"command": self.command, "version": __version__,
                   "config": self.run.to_dict(), "files": sorted(self.files),
                   "results": _to_jsonable(results)}
        (self.directory / f"{self.command}.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def _operating(config: CrossbarConfig, point: str) -> CrossbarConfig:
    if point == "microamp":
        return pd_operating_point(config)
    if point == "unit":
        return config
    raise ConfigError(f"unknown operating_point {point!r}")


def _load(run: RunConfig):
    try:
        return load_iris(run.dataset)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {run.dataset}: {exc}") from exc


def cmd_spectra(run: RunConfig, out: Output) -> dict:
    o = run.spectra
    cfg = run.crossbar
    if not 1 <= o.port <= cfg.size_N:
        raise ConfigError(f"port must be in 1..{cfg.size_N}")
    target = parse_matrix(o.matrix, np.random.default_rng(run.seed))
    phases, report = program_weights(cfg, target, run.feedback, rng=np.random.default_rng(run.seed))
    lam, cur = spectrum_scan(cfg, phases, o.port - 1, steps=o.steps)
    out.add(f"spectra_port{o.port}.csv", spectrum_csv(lam, cur))
    return {"channels_nm": (np.asarray(cfg.plan.wavelengths) * 1e9).round(6), "rounds": report.rounds_used}


def cmd_program(run: RunConfig, out: Output) -> dict:
    o = run.program
    cfg = _operating(run.crossbar, o.operating_point)
    rng = np.random.default_rng(run.seed)
    target = parse_matrix(o.matrix, rng)
    phases, report = program_weights(cfg, target, run.feedback, rng=rng)
    raw = measure_forward_matrix(cfg, phases)
    sc = readout_scale(cfg)
    current = cfg.pd_floor_current + cfg.pd_responsivity * cfg.input_power_w * raw
    out.add("program_rounds.csv", _csv(["round", "max_error"],
                                       [[k, _fmt(e)] for k, e in enumerate(report.round_errors)]))
    rows = [[i + 1, j + 1, _fmt(target[i, j]), _fmt(sc.to_weight(raw[i, j])),
             _fmt(current[i, j] * 1e6)]
            for i in range(target.shape[0]) for j in range(target.shape[1])]
    out.add("program_weights.csv", _csv(["pd", "port", "target", "weight", "current_uA"], rows))
    return {"report": report.to_dict(), "phases": phases.phases}


def cmd_transpose(run: RunConfig, out: Output) -> dict:
    o = run.transpose
    cfg = _operating(run.crossbar, o.operating_point)
    rng = np.random.default_rng(run.seed)
    targets, fwd, bwd = [], [], []
    for name in o.matrices:
        t = parse_matrix(name, rng)
        phases, _ = program_weights(cfg, t, run.feedback, rng=rng)
        targets.append(t)
        fwd.append(measure_forward_matrix(cfg, phases))
        bwd.append(measure_backward_matrix(cfg, phases))
    # the fit aims each backward readout at the transpose of its forward readout
    params = fit_backward_correction(bwd, [f.T for f in fwd])
    unit = cfg.pd_responsivity * cfg.input_power_w * 1e6
    rows, errors = [], {}
    for name, f, b in zip(o.matrices, fwd, bwd):
        c = apply_correction(b, params)
        errors[name] = float(np.max(np.abs(c - f.T) / np.max(np.abs(f))))
        for kind, m in (("forward", f), ("backward_raw", b), ("backward_corrected", c)):
            for i in range(m.shape[0]):
                for j in range(m.shape[1]):
                    rows.append([name, kind, i + 1, j + 1,
                                 _fmt(cfg.pd_floor_current * 1e6 + unit * m[i, j])])
    out.add("transpose.csv", _csv(["matrix", "pass", "row", "col", "current_uA"], rows))
    return {"correction": params.to_dict(), "max_relative_error": errors}


def cmd_mvm(run: RunConfig, out: Output) -> dict:
    o = run.mvm
    W = parse_matrix(o.matrix, np.random.default_rng(run.seed))
    x = parse_vector(o.input)
    backend = make_backend(o.backend, run.crossbar, run.feedback, seed=run.seed)
    sw = split_weights(W)
    if o.scheme == "full":
        y = mvm_signed_full(sw, x, backend)
    elif o.scheme == "weights":
        y = mvm_signed_weights(sw, x, backend)
    else:
        raise ConfigError(f"unknown scheme {o.scheme!r}")
    line = ",".join(_fmt(v) for v in y)
    print(line)
    out.add("mvm.csv", line + "\n")
    return {"output": [float(_fmt(v)) for v in y], "exact": W @ x,
            "passes": backend.mvm_calls}


def cmd_train(run: RunConfig, out: Output) -> dict:
    o = run.train
    # every instance is a training instance here
    data = _load(run)
    data = MaxNormalizer.fit(data)(data)
    tc = TrainConfig(learning_rate=o.learning_rate, epochs=o.epochs, seed=run.seed,
                     backend=o.backend, update_mode=o.update_mode, scale1=o.scale1,
                     scale2=o.scale2, crossbar=run.crossbar)
    res = train(MlpSpec(), data, tc)
    out.add("train_curve.csv", res.curve_csv())
    return {"final_correct_rate": res.final_correct_rate,
            "best_correct_rate": res.best_correct_rate,
            "mvm_groups": res.mvm_groups, "backend_calls": res.backend_calls,
            "weights": res.weights.to_dict()}


def cmd_infer(run: RunConfig, out: Output) -> dict:
    o = run.infer
    spec = MlpSpec()
    train_set, test_set = stratified_split(_load(run), o.n_train, run.seed)
    norm = MaxNormalizer.fit(train_set)
    train_set, test_set = norm(train_set), norm(test_set)
    weights = train_ex_situ(spec, train_set, run.seed, o.restarts)
    backend = make_backend(o.backend, run.crossbar, run.feedback, seed=run.seed)
    res = infer_dataset(spec, weights, test_set, backend)
    out.add("infer_confusion.csv", _csv(["true"] + [f"pred_{k}" for k in range(3)],
                                        [[k] + list(r) for k, r in enumerate(res.confusion)]))
    print(f"{res.correct}/{res.total}")
    return {**res.to_dict(), "weights": weights.to_dict()}


def cmd_bench(run: RunConfig, out: Output) -> dict:
    o = run.bench
    if o.n_min < 2 or o.n_max < o.n_min or o.points < 1:
        raise ConfigError("need 2 <= n_min <= n_max and points >= 1")
    ns = benchmark.log_range(o.n_min, o.n_max, o.points)
    geometry = run.crossbar.device_template.geometry
    out.add("bench_required_q.csv", _csv(
        ["N", "required_Q"],
        [[n, _fmt(benchmark.required_q(n, o.bits, geometry))] for n in ns]))
    out.add("bench_efficiency.csv", benchmark.efficiency_csv(ns, o.f_clk, run.power))
    out.add("bench_training_time.csv", benchmark.training_time_csv(ns, o.f_clk))
    q = benchmark.required_q(o.n, o.bits, geometry)
    t = benchmark.tops(o.n, o.f_clk)
    pto = benchmark.power_mvm(o.n, o.f_clk, run.power, "thermo_optic")
    pmos = benchmark.power_mvm(o.n, o.f_clk, run.power, "hybrid_mos")
    header = ["N", "bits", "required_Q", "tops", "power_to_W", "power_mos_W", "eff_to", "eff_mos"]
    row = [o.n, o.bits, _fmt(q), _fmt(t), _fmt(pto), _fmt(pmos), _fmt(t / pto), _fmt(t / pmos)]
    text = _csv(header, [row])
    sys.stdout.write(text)
    out.add("bench_point.csv", text)
    return {"point": dict(zip(header, row)),
            "training_time": benchmark.training_time_metadata(o.n)}


COMMANDS = {
    "spectra": cmd_spectra,
    "program": cmd_program,
    "transpose": cmd_transpose,
    "mvm": cmd_mvm,
    "train": cmd_train,
    "infer": cmd_infer,
    "bench": cmd_bench,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        directory = Path(args.out or os.environ.get("MRRXBAR_OUT") or ".")
        out = Output(directory, args.command, cfg)
        results = COMMANDS[args.command](cfg, out)
        out.finish(results)
    except ConfigError as exc:
        print(f"mrrxbar: config error: {exc}", file=sys.stderr)
        return 1
    except MrrError as exc:
        print(f"mrrxbar: simulation error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
