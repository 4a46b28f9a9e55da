"""Experiment presets: config parsing, deterministic grids, CSV emission.

A config is a small INI file with [experiment], [model], and [output]
sections; command-line flags override file values key by key.  Unknown
sections or keys are hard errors so silent typos cannot skew a sweep.
Identical (config, master seed) pairs produce byte-identical CSVs.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EigenfedError
from .estimators import central_estimator, solve_local
from .federation import Topology, run_one_shot, run_parallel_align
from .linalg import top_eigenspace
from .metrics import bound_simplified, subspace_dist2
from .models import (
    SpectralModel,
    discrete_node_datasets,
    gaussian_node_datasets,
    model_m1,
    model_m2,
    realize_matrix,
    sensing_instance,
    sensing_surrogate,
    NodeDataset,
)
from .seeding import derive_seed

logger = logging.getLogger("eigenfed.experiments")

EXPERIMENTS = (
    "synth-pca",
    "vary-m",
    "intdim-sweep",
    "fixed-rank-sweep",
    "nongauss",
    "bound-check",
    "quadsense",
)

# Estimator tags: erm = pooled central solve, one and fix = one-shot
# aligned average, itr = iteratively refined aligned average, rot =
# projector average, nve = unaligned average kept as a control.
ESTIMATOR_TAGS = ("erm", "one", "fix", "itr", "rot", "nve")

DEFAULT_ESTIMATORS = {
    "synth-pca": ("erm", "fix"),
    "vary-m": ("erm", "fix", "itr"),
    "intdim-sweep": ("erm", "fix", "itr", "rot"),
    "fixed-rank-sweep": ("erm", "fix", "itr", "rot"),
    "nongauss": ("erm", "fix", "itr", "rot"),
    "bound-check": ("fix",),
    "quadsense": ("erm", "itr", "nve"),
}

# Which presets report squared spectral distance (the rest report it unsquared).
SQUARED_DISTANCE = {
    "synth-pca": True,
    "vary-m": True,
    "intdim-sweep": True,
    "fixed-rank-sweep": True,
    "nongauss": True,
    "bound-check": False,
    "quadsense": False,
}

SWEEP_COLUMN = {
    "synth-pca": "n",
    "vary-m": "m",
    "intdim-sweep": "r_star",
    "fixed-rank-sweep": "r",
    "nongauss": "n",
    "bound-check": "n",
    "quadsense": "i",
}

_EXPERIMENT_KEYS = {
    "d", "r", "m", "n", "k", "i_mult", "total_samples", "r_list",
    "r_star_list", "n_iter", "repetitions", "estimators", "seed",
    "reference_node", "tau_mult", "noise_sd", "timeout_s",
}
_MODEL_KEYS = {"kind", "lambda_lo", "lambda_hi", "delta", "r_star"}
_OUTPUT_KEYS = {"path"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved parameters of one experiment run."""

    experiment: str
    d: int
    r: int | None
    m_list: tuple[int, ...]
    n_list: tuple[int, ...] | None = None
    total_samples: int | None = None
    r_list: tuple[int, ...] | None = None
    r_star_list: tuple[float, ...] | None = None
    k: int | None = None
    i_mult_list: tuple[int, ...] | None = None
    model_kind: str | None = None
    lambda_lo: float = 0.5
    lambda_hi: float = 1.0
    delta: float | None = None
    r_star: float | None = None
    estimators: tuple[str, ...] = ()
    n_iter: int = 2
    repetitions: int = 5
    master_seed: int = 0
    reference_node: int = 0
    tau_mult: float = 9.0
    noise_sd: float = 0.0
    timeout_s: float = 30.0
    out_path: str = ""


@dataclass
class ExperimentResult:
    """Rows ready for CSV emission."""

    experiment: str
    comment: str
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(key, f"not an integer: {raw!r}") from None


def _parse_float(raw: str, key: str) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise ConfigError(key, f"not a number: {raw!r}") from None


def _parse_int_list(raw: str, key: str) -> tuple[int, ...]:
    parts = [p for p in (s.strip() for s in raw.split(",")) if p]
    if not parts:
        raise ConfigError(key, "empty list")
    return tuple(_parse_int(p, key) for p in parts)


def _parse_float_list(raw: str, key: str) -> tuple[float, ...]:
    parts = [p for p in (s.strip() for s in raw.split(",")) if p]
    if not parts:
        raise ConfigError(key, "empty list")
    return tuple(_parse_float(p, key) for p in parts)


def _read_file(path: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    sections: dict[str, dict[str, str]] = {}
    if parser.defaults():
        raise ConfigError("config", "top-level keys must live in a section")
    for name in parser.sections():
        if name not in ("experiment", "model", "output"):
            raise ConfigError(name, "unknown section")
        sections[name] = dict(parser.items(name))
    return sections


_ALLOWED = {"experiment": _EXPERIMENT_KEYS, "model": _MODEL_KEYS, "output": _OUTPUT_KEYS}


def parse_config(
    experiment: str,
    config_path: str | None = None,
    overrides: dict[str, str] | None = None,
) -> ExperimentConfig:
    """Resolve an ExperimentConfig from a file plus override flags.

    overrides use flat keys (d, r, m, n, model, estimators, n_iter,
    repetitions, seed, out, timeout_s) and win over file values.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {experiment!r}")
    sections = _read_file(config_path) if config_path else {}
    exp = dict(sections.get("experiment", {}))
    model = dict(sections.get("model", {}))
    output = dict(sections.get("output", {}))
    for section_name, found in (("experiment", exp), ("model", model), ("output", output)):
        unknown = set(found) - _ALLOWED[section_name]
        if unknown:
            raise ConfigError(sorted(unknown)[0], f"unknown key in [{section_name}]")

    over = dict(overrides or {})
    for key in ("d", "r", "m", "n", "n_iter", "repetitions", "estimators",
                "seed", "timeout_s"):
        if over.get(key) is not None:
            exp[key] = over[key]
    if over.get("model") is not None:
        model["kind"] = over["model"]
    if over.get("out") is not None:
        output["path"] = over["out"]
    leftover = set(over) - {"d", "r", "m", "n", "model", "estimators", "n_iter",
                            "repetitions", "seed", "out", "timeout_s"}
    leftover = {k for k in leftover if over.get(k) is not None}
    if leftover:
        raise ConfigError(sorted(leftover)[0], "unknown override")

    return _resolve(experiment, exp, model, output)


def _require(exp: dict, key: str) -> str:
    if key not in exp:
        raise ConfigError(key, "required")
    return exp[key]


def _forbid(found: dict, keys: tuple[str, ...], where: str):
    for key in keys:
        if key in found:
            raise ConfigError(key, f"not a valid key for {where}")


def _resolve(experiment: str, exp: dict, model: dict, output: dict) -> ExperimentConfig:
    d = _parse_int(_require(exp, "d"), "d")
    if d < 2:
        raise ConfigError("d", f"need d >= 2, got {d}")

    needs_model = experiment in (
        "synth-pca", "vary-m", "intdim-sweep", "fixed-rank-sweep", "bound-check"
    )
    if needs_model:
        kind = model.get("kind")
        if kind is None:
            raise ConfigError("kind", "required in [model]")
        if kind not in ("m1", "m2"):
            raise ConfigError("kind", f"unknown model kind {kind!r}")
        if experiment in ("intdim-sweep", "fixed-rank-sweep") and kind != "m2":
            raise ConfigError("kind", f"{experiment} requires the m2 model")
        if experiment == "bound-check" and kind != "m1":
            raise ConfigError("kind", "bound-check requires the m1 model")
    else:
        if model:
            raise ConfigError("kind", f"{experiment} takes no [model] section")
        kind = None

    lambda_lo = _parse_float(model.get("lambda_lo", "0.5"), "lambda_lo")
    lambda_hi = _parse_float(model.get("lambda_hi", "1.0"), "lambda_hi")
    if kind == "m2":
        delta = _parse_float(model.get("delta", "0.1"), "delta")
    else:
        delta = _parse_float(model.get("delta", "0.2"), "delta")
    r_star = _parse_float(model["r_star"], "r_star") if "r_star" in model else None

    estimators_raw = exp.get("estimators")
    if estimators_raw is None:
        estimators = DEFAULT_ESTIMATORS[experiment]
    else:
        estimators = tuple(
            p for p in (s.strip() for s in estimators_raw.split(",")) if p
        )
        if not estimators:
            raise ConfigError("estimators", "empty list")
        for tag in estimators:
            if tag not in ESTIMATOR_TAGS:
                raise ConfigError("estimators", f"unknown estimator tag {tag!r}")
        if len(set(estimators)) != len(estimators):
            raise ConfigError("estimators", "duplicate estimator tag")

    n_iter = _parse_int(exp.get("n_iter", "2"), "n_iter")
    if n_iter < 1:
        raise ConfigError("n_iter", f"need n_iter >= 1, got {n_iter}")
    default_reps = "10" if experiment == "bound-check" else "5"
    repetitions = _parse_int(exp.get("repetitions", default_reps), "repetitions")
    if repetitions < 1:
        raise ConfigError("repetitions", f"need repetitions >= 1, got {repetitions}")
    master_seed = _parse_int(exp.get("seed", "0"), "seed")
    reference_node = _parse_int(exp.get("reference_node", "0"), "reference_node")
    tau_mult = _parse_float(exp.get("tau_mult", "9.0"), "tau_mult")
    noise_sd = _parse_float(exp.get("noise_sd", "0.0"), "noise_sd")
    timeout_s = _parse_float(exp.get("timeout_s", "30.0"), "timeout_s")
    if timeout_s <= 0.0:
        raise ConfigError("timeout_s", f"need a positive timeout, got {timeout_s}")
    out_path = output.get("path", f"{experiment}.csv")

    r = _parse_int(exp["r"], "r") if "r" in exp else None
    m_list: tuple[int, ...]
    n_list = None
    total_samples = None
    r_list = None
    r_star_list = None
    k = None
    i_mult_list = None

    def single_m() -> tuple[int, ...]:
        values = _parse_int_list(_require(exp, "m"), "m")
        if len(values) != 1:
            raise ConfigError("m", f"{experiment} takes a single m, got {len(values)}")
        return values

    if experiment == "synth-pca":
        _forbid(exp, ("k", "i_mult", "total_samples", "r_list", "r_star_list"), experiment)
        m_list = single_m()
        n_list = _parse_int_list(_require(exp, "n"), "n")
        if r is None:
            raise ConfigError("r", "required")
    elif experiment == "vary-m":
        _forbid(exp, ("k", "i_mult", "n", "r_list", "r_star_list"), experiment)
        m_list = _parse_int_list(_require(exp, "m"), "m")
        total_samples = _parse_int(_require(exp, "total_samples"), "total_samples")
        for m in m_list:
            if total_samples % m != 0:
                raise ConfigError(
                    "total_samples", f"{total_samples} not divisible by m={m}"
                )
        if r is None:
            raise ConfigError("r", "required")
    elif experiment == "intdim-sweep":
        _forbid(exp, ("k", "i_mult", "total_samples", "r_list"), experiment)
        if "r_star" in model:
            raise ConfigError("r_star", "intdim-sweep sweeps r_star_list instead")
        m_list = single_m()
        n_list = _parse_int_list(_require(exp, "n"), "n")
        if len(n_list) != 1:
            raise ConfigError("n", "intdim-sweep takes a single n")
        r_star_list = _parse_float_list(_require(exp, "r_star_list"), "r_star_list")
        if r is None:
            raise ConfigError("r", "required")
    elif experiment == "fixed-rank-sweep":
        _forbid(exp, ("k", "i_mult", "total_samples", "r_star_list", "r"), experiment)
        m_list = single_m()
        n_list = _parse_int_list(_require(exp, "n"), "n")
        if len(n_list) != 1:
            raise ConfigError("n", "fixed-rank-sweep takes a single n")
        r_list = _parse_int_list(_require(exp, "r_list"), "r_list")
        if r_star is None:
            raise ConfigError("r_star", "required in [model] for fixed-rank-sweep")
    elif experiment == "nongauss":
        _forbid(exp, ("i_mult", "total_samples", "r_list", "r_star_list"), experiment)
        m_list = single_m()
        n_list = _parse_int_list(_require(exp, "n"), "n")
        k = _parse_int(_require(exp, "k"), "k")
        if k < 2:
            raise ConfigError("k", f"need k >= 2 atoms, got {k}")
        if r is None:
            r = max(k // 2, 1)
    elif experiment == "bound-check":
        _forbid(exp, ("k", "i_mult", "total_samples", "r_list", "r_star_list"), experiment)
        m_list = single_m()
        n_list = _parse_int_list(_require(exp, "n"), "n")
        if r is None:
            raise ConfigError("r", "required")
    else:  # quadsense
        _forbid(exp, ("k", "n", "total_samples", "r_list", "r_star_list"), experiment)
        m_list = single_m()
        i_mult_list = _parse_int_list(_require(exp, "i_mult"), "i_mult")
        if r is None:
            raise ConfigError("r", "required")

    if r is not None and not (1 <= r < d):
        raise ConfigError("r", f"need 1 <= r < d, got r={r}, d={d}")

    return ExperimentConfig(
        experiment=experiment,
        d=d,
        r=r,
        m_list=m_list,
        n_list=n_list,
        total_samples=total_samples,
        r_list=r_list,
        r_star_list=r_star_list,
        k=k,
        i_mult_list=i_mult_list,
        model_kind=kind,
        lambda_lo=lambda_lo,
        lambda_hi=lambda_hi,
        delta=delta,
        r_star=r_star,
        estimators=estimators,
        n_iter=n_iter,
        repetitions=repetitions,
        master_seed=master_seed,
        reference_node=reference_node,
        tau_mult=tau_mult,
        noise_sd=noise_sd,
        timeout_s=timeout_s,
        out_path=out_path,
    )


def _grid(config: ExperimentConfig) -> list[tuple[str, float]]:
    name = SWEEP_COLUMN[config.experiment]
    if config.experiment == "vary-m":
        return [(name, m) for m in config.m_list]
    if config.experiment == "intdim-sweep":
        return [(name, rs) for rs in config.r_star_list]
    if config.experiment == "fixed-rank-sweep":
        return [(name, r) for r in config.r_list]
    if config.experiment == "quadsense":
        return [(name, i) for i in config.i_mult_list]
    return [(name, n) for n in config.n_list]


def _build_model(config: ExperimentConfig, r: int, r_star, basis_seed: int) -> SpectralModel:
    if config.model_kind == "m1":
        return model_m1(
            config.d, r, config.lambda_lo, config.lambda_hi, config.delta,
            basis_seed=basis_seed,
        )
    return model_m2(config.d, r, config.delta, r_star, basis_seed=basis_seed)


def _estimate_errors(
    config: ExperimentConfig,
    datasets: list[NodeDataset],
    truth,
    r: int,
) -> dict[str, float]:
    """Run every requested estimator over one instance; distances to truth."""
    topology = Topology(m=len(datasets), transport="inprocess", timeout=config.timeout_s)

    def work(node_id: int):
        return solve_local(datasets[node_id].local_matrix, r, node_id=node_id)

    out: dict[str, float] = {}
    for tag in config.estimators:
        if tag == "erm":
            result = central_estimator(datasets, r)
        elif tag in ("one", "fix"):
            result, _ = run_one_shot(
                topology, work, aggregator="procrustes",
                reference_index=config.reference_node,
            )
        elif tag == "itr":
            result, _ = run_parallel_align(topology, work, n_iter=config.n_iter)
        elif tag == "rot":
            result, _ = run_one_shot(topology, work, aggregator="projector_avg")
        else:  # nve
            result, _ = run_one_shot(topology, work, aggregator="naive")
        if result.degenerate:
            out[tag] = math.nan
        else:
            dist = subspace_dist2(result.estimate, truth)
            out[tag] = dist**2 if SQUARED_DISTANCE[config.experiment] else dist
    return out


def _run_point(
    config: ExperimentConfig, sweep_name: str, sweep_value, rep: int
) -> tuple[dict[str, float], float | None, float]:
    """One repetition at one grid point.

    Returns (per-estimator errors, theoretical-rate value or None,
    sweep column value to report).
    """
    seed = derive_seed(config.master_seed, config.experiment, sweep_name, sweep_value, rep)
    theo = None
    report_value = float(sweep_value)

    if config.experiment == "quadsense":
        n_per_node = int(sweep_value) * config.r * config.d
        m = config.m_list[0]
        instance = sensing_instance(
            config.d, config.r, m * n_per_node, seed,
            tau_mult=config.tau_mult, noise_sd=config.noise_sd,
        )
        datasets = [
            NodeDataset(
                node_id=i,
                local_matrix=sensing_surrogate(
                    instance, slice(i * n_per_node, (i + 1) * n_per_node)
                ),
                n=n_per_node,
            )
            for i in range(m)
        ]
        errors = _estimate_errors(config, datasets, instance.x_sharp, config.r)
        return errors, theo, report_value

    if config.experiment == "nongauss":
        m = config.m_list[0]
        datasets, population = discrete_node_datasets(
            config.k, config.d, m, int(sweep_value), seed
        )
        truth, _ = top_eigenspace(population, config.r)
        errors = _estimate_errors(config, datasets, truth, config.r)
        return errors, theo, report_value

    if config.experiment == "vary-m":
        m = int(sweep_value)
        n = config.total_samples // m
        r = config.r
        r_star = config.r_star
    elif config.experiment == "intdim-sweep":
        m = config.m_list[0]
        n = config.n_list[0]
        r = config.r
        r_star = float(sweep_value)
    elif config.experiment == "fixed-rank-sweep":
        m = config.m_list[0]
        n = config.n_list[0]
        r = int(sweep_value)
        r_star = config.r_star
    else:  # synth-pca, bound-check
        m = config.m_list[0]
        n = int(sweep_value)
        r = config.r
        r_star = config.r_star

    model = _build_model(config, r, r_star, basis_seed=derive_seed(seed, "basis"))
    x, v1 = realize_matrix(model)
    datasets = gaussian_node_datasets(x, m, n, seed)
    errors = _estimate_errors(config, datasets, v1, r)
    if config.experiment == "intdim-sweep":
        report_value = model.intdim
    if config.experiment == "bound-check":
        theo = bound_simplified(model.intdim, n, m, model.delta)
    return errors, theo, report_value


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Full sweep: every grid point, every repetition, medians per cell.

    A grid point that fails outright still emits its row, with NaN in
    every estimator cell and the failure logged; the row count always
    equals the grid size.
    """
    distance = "dist2_squared" if SQUARED_DISTANCE[config.experiment] else "dist2"
    columns = [SWEEP_COLUMN[config.experiment], *config.estimators]
    if config.experiment == "bound-check":
        columns.append("theo")
    result = ExperimentResult(
        experiment=config.experiment,
        comment=f"experiment={config.experiment} distance={distance} "
        f"seed={config.master_seed} repetitions={config.repetitions}",
        columns=columns,
    )
    for sweep_name, sweep_value in _grid(config):
        per_tag: dict[str, list[float]] = {tag: [] for tag in config.estimators}
        theo = None
        report_value = float(sweep_value)
        try:
            for rep in range(config.repetitions):
                errors, theo, report_value = _run_point(
                    config, sweep_name, sweep_value, rep
                )
                for tag in config.estimators:
                    per_tag[tag].append(errors[tag])
            row = [report_value]
            row += [float(np.median(per_tag[tag])) for tag in config.estimators]
        except EigenfedError as exc:
            logger.warning(
                "grid point %s=%s failed: %s", sweep_name, sweep_value, exc
            )
            row = [report_value] + [math.nan] * len(config.estimators)
        if config.experiment == "bound-check":
            row.append(math.nan if theo is None else theo)
        result.rows.append(row)
    return result


def format_value(x: float) -> str:
    """CSV cell format: round-trip-exact decimal for binary64."""
    if math.isnan(x):
        return "nan"
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return format(x, ".17g")


def emit_csv(result: ExperimentResult, path: str):
    """Write rows with a leading comment line, LF endings, deterministic bytes."""
    lines = [f"# {result.comment}", ",".join(result.columns)]
    for row in result.rows:
        lines.append(",".join(format_value(v) for v in row))
    data = "\n".join(lines) + "\n"
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(data)
