"""Run configuration files: parsing, canonical form, content hashing.

A run is described by a flat key-value text file (``key = value`` per
line, ``#`` comments). Every key has a default, so an empty file is a
valid configuration. :func:`config_hash` digests the canonical
serialization, which names the artifact directories of the pipeline;
per-stage scopes keep a hash stable when only downstream settings
change, so reruns reuse upstream artifacts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .hyperfem import MaterialModel, SolveOptions
from .loadcase import LoadSpec
from .meshgen import PhantomSpec, REGION_CANCER, REGION_NORMAL
from .sagenet import ModelConfig, TrainConfig


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration input."""


def _default_phantom() -> PhantomSpec:
    return PhantomSpec(
        breast_radius=0.06,
        tumor_center=(0.0, 0.025, 0.0),
        tumor_radius=0.015,
        target_edge_length=0.0035,
        rng_seed=0,
    )


def _default_normal() -> MaterialModel:
    return MaterialModel(c10=2000.0, c01=1333.0, bulk_kappa=1e6)


def _default_cancer() -> MaterialModel:
    return MaterialModel(c10=10000.0, c01=6667.0, bulk_kappa=5e6)


@dataclass(frozen=True)
class RunConfig:
    """Complete description of one pipeline run.

    Attributes
    ----------
    phantom : PhantomSpec
        Geometry of the procedural phantom.
    material_normal, material_cancer : MaterialModel
        Constitutive parameters per tissue group.
    load : LoadSpec
        Load-case distribution for dataset generation.
    solver : SolveOptions
        Newton-Raphson controls for the forward solves.
    model : ModelConfig
        Surrogate architecture.
    train : TrainConfig
        Optimization schedule.
    graph_threshold : float
        Distance-edge radius in meters.
    graph_structured_edges : int
        Long-range skin-to-tumor edge count.
    graph_rng_seed : int
        Seed for the farthest-point start of the long-range sampler.
    workdir : str
        Root directory for pipeline artifacts; never hashed.
    """

    phantom: PhantomSpec = field(default_factory=_default_phantom)
    material_normal: MaterialModel = field(default_factory=_default_normal)
    material_cancer: MaterialModel = field(default_factory=_default_cancer)
    load: LoadSpec = field(default_factory=LoadSpec)
    solver: SolveOptions = field(default_factory=SolveOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    graph_threshold: float = 0.003
    graph_structured_edges: int = 100
    graph_rng_seed: int = 0
    workdir: str = "runs"

    def __post_init__(self) -> None:
        if self.graph_threshold <= 0.0:
            raise ConfigError("graph.threshold must be positive")
        if self.graph_structured_edges < 0:
            raise ConfigError("graph.structured_edges must be non-negative")
        if self.graph_rng_seed < 0:
            raise ConfigError("graph.rng_seed must be non-negative")

    def materials(self) -> dict[int, MaterialModel]:
        """Region-indexed material map for the FE solver."""
        return {
            REGION_NORMAL: self.material_normal,
            REGION_CANCER: self.material_cancer,
        }


def default_config() -> RunConfig:
    return RunConfig()


# ---------------------------------------------------------------------------
# key schema

_BOOL_WORDS = {"true": True, "false": False, "on": True, "off": False}


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _fmt_floats(vs) -> str:
    return " ".join(_fmt_float(v) for v in vs)


def _parse_float(s: str) -> float:
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _parse_int(s: str) -> int:
    try:
        return int(s, 10)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {s!r}") from exc


def _parse_bool(s: str) -> bool:
    word = s.lower()
    if word not in _BOOL_WORDS:
        raise ConfigError(f"expected true or false, got {s!r}")
    return _BOOL_WORDS[word]


def _parse_floats(s: str, n: int) -> tuple[float, ...]:
    parts = s.split()
    if len(parts) != n:
        raise ConfigError(f"expected {n} numbers, got {s!r}")
    return tuple(_parse_float(p) for p in parts)


# key -> (extract canonical string from RunConfig, parse raw string)
_SCHEMA: dict[str, tuple] = {
    "phantom.breast_radius": (
        lambda c: _fmt_float(c.phantom.breast_radius),
        _parse_float,
    ),
    "phantom.tumor_center": (
        lambda c: _fmt_floats(c.phantom.tumor_center),
        lambda s: _parse_floats(s, 3),
    ),
    "phantom.tumor_radius": (
        lambda c: _fmt_float(c.phantom.tumor_radius),
        _parse_float,
    ),
    "phantom.target_edge_length": (
        lambda c: _fmt_float(c.phantom.target_edge_length),
        _parse_float,
    ),
    "phantom.rng_seed": (lambda c: str(c.phantom.rng_seed), _parse_int),
    "material.normal.c10": (
        lambda c: _fmt_float(c.material_normal.c10),
        _parse_float,
    ),
    "material.normal.c01": (
        lambda c: _fmt_float(c.material_normal.c01),
        _parse_float,
    ),
    "material.normal.bulk_kappa": (
        lambda c: _fmt_float(c.material_normal.bulk_kappa),
        _parse_float,
    ),
    "material.cancer.c10": (
        lambda c: _fmt_float(c.material_cancer.c10),
        _parse_float,
    ),
    "material.cancer.c01": (
        lambda c: _fmt_float(c.material_cancer.c01),
        _parse_float,
    ),
    "material.cancer.bulk_kappa": (
        lambda c: _fmt_float(c.material_cancer.bulk_kappa),
        _parse_float,
    ),
    "load.n_locations": (lambda c: str(c.load.n_locations), _parse_int),
    "load.n_samples_per_location": (
        lambda c: str(c.load.n_samples_per_location),
        _parse_int,
    ),
    "load.radius_range": (
        lambda c: _fmt_floats(c.load.radius_range),
        lambda s: _parse_floats(s, 2),
    ),
    "load.magnitude_range": (
        lambda c: _fmt_floats(c.load.magnitude_range),
        lambda s: _parse_floats(s, 2),
    ),
    "load.rng_seed": (lambda c: str(c.load.rng_seed), _parse_int),
    "solver.max_iterations": (
        lambda c: str(c.solver.max_iterations),
        _parse_int,
    ),
    "solver.residual_tol_abs": (
        lambda c: _fmt_float(c.solver.residual_tol_abs),
        _parse_float,
    ),
    "solver.residual_tol_rel": (
        lambda c: _fmt_float(c.solver.residual_tol_rel),
        _parse_float,
    ),
    "solver.n_load_increments": (
        lambda c: str(c.solver.n_load_increments),
        _parse_int,
    ),
    "model.hidden_dim": (lambda c: str(c.model.hidden_dim), _parse_int),
    "model.n_layers": (lambda c: str(c.model.n_layers), _parse_int),
    "model.use_jumping_knowledge": (
        lambda c: "true" if c.model.use_jumping_knowledge else "false",
        _parse_bool,
    ),
    "model.layer_kind": (lambda c: c.model.layer_kind, lambda s: s),
    "model.rng_seed": (lambda c: str(c.model.rng_seed), _parse_int),
    "train.epochs": (lambda c: str(c.train.epochs), _parse_int),
    "train.learning_rate": (
        lambda c: _fmt_float(c.train.learning_rate),
        _parse_float,
    ),
    "train.standardize": (
        lambda c: "true" if c.train.standardize else "false",
        _parse_bool,
    ),
    "train.weight_decay": (
        lambda c: _fmt_float(c.train.weight_decay),
        _parse_float,
    ),
    "train.rng_seed": (lambda c: str(c.train.rng_seed), _parse_int),
    "graph.threshold": (lambda c: _fmt_float(c.graph_threshold), _parse_float),
    "graph.structured_edges": (
        lambda c: str(c.graph_structured_edges),
        _parse_int,
    ),
    "graph.rng_seed": (lambda c: str(c.graph_rng_seed), _parse_int),
    "workdir": (lambda c: c.workdir, lambda s: s),
}


def _build(values: dict[str, object]) -> RunConfig:
    v = values
    try:
        return RunConfig(
            phantom=PhantomSpec(
                breast_radius=v["phantom.breast_radius"],
                tumor_center=v["phantom.tumor_center"],
                tumor_radius=v["phantom.tumor_radius"],
                target_edge_length=v["phantom.target_edge_length"],
                rng_seed=v["phantom.rng_seed"],
            ),
            material_normal=MaterialModel(
                c10=v["material.normal.c10"],
                c01=v["material.normal.c01"],
                bulk_kappa=v["material.normal.bulk_kappa"],
            ),
            material_cancer=MaterialModel(
                c10=v["material.cancer.c10"],
                c01=v["material.cancer.c01"],
                bulk_kappa=v["material.cancer.bulk_kappa"],
            ),
            load=LoadSpec(
                n_locations=v["load.n_locations"],
                n_samples_per_location=v["load.n_samples_per_location"],
                radius_range=v["load.radius_range"],
                magnitude_range=v["load.magnitude_range"],
                rng_seed=v["load.rng_seed"],
            ),
            solver=SolveOptions(
                max_iterations=v["solver.max_iterations"],
                residual_tol_abs=v["solver.residual_tol_abs"],
                residual_tol_rel=v["solver.residual_tol_rel"],
                n_load_increments=v["solver.n_load_increments"],
            ),
            model=ModelConfig(
                hidden_dim=v["model.hidden_dim"],
                n_layers=v["model.n_layers"],
                use_jumping_knowledge=v["model.use_jumping_knowledge"],
                layer_kind=v["model.layer_kind"],
                rng_seed=v["model.rng_seed"],
            ),
            train=TrainConfig(
                epochs=v["train.epochs"],
                learning_rate=v["train.learning_rate"],
                weight_decay=v["train.weight_decay"],
                standardize=v["train.standardize"],
                rng_seed=v["train.rng_seed"],
            ),
            graph_threshold=v["graph.threshold"],
            graph_structured_edges=v["graph.structured_edges"],
            graph_rng_seed=v["graph.rng_seed"],
            workdir=v["workdir"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> RunConfig:
    """Parse a key-value configuration, filling defaults for absent keys.

    Raises
    ------
    ConfigError
        On syntax errors, unknown or duplicate keys, or values the
        run invariants reject.
    """
    defaults = default_config()
    parsed: dict[str, object] = {
        key: parse(extract(defaults))
        for key, (extract, parse) in _SCHEMA.items()
    }
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        if not raw:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        seen.add(key)
        parsed[key] = _SCHEMA[key][1](raw)
    return _build(parsed)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(config: RunConfig) -> str:
    """Canonical text form: sorted keys, shortest round-trip floats.

    ``parse_config(serialize_config(c))`` reproduces ``c`` exactly.
    """
    lines = [f"{key} = {_SCHEMA[key][0](config)}" for key in sorted(_SCHEMA)]
    return "\n".join(lines) + "\n"


# stage -> dotted prefixes of the keys its artifacts depend on; eval,
# bench, and ablate reuse the train scope since they read its outputs
_STAGE_PREFIXES: dict[str, tuple[str, ...]] = {
    "mesh": ("phantom.",),
    "dataset": ("phantom.", "material.", "load.", "solver."),
    "graph": ("phantom.", "graph."),
    "train": (
        "phantom.",
        "material.",
        "load.",
        "solver.",
        "graph.",
        "model.",
        "train.",
    ),
}


def config_hash(config: RunConfig, stage: str | None = None) -> str:
    """12-hex digest of the canonical form, optionally stage-scoped.

    The scope of a stage covers exactly the keys its artifacts depend
    on, so changing only downstream settings leaves upstream hashes (and
    their cached artifacts) untouched. ``workdir`` never participates.
    """
    if stage is None:
        prefixes: tuple[str, ...] | None = None
    else:
        try:
            prefixes = _STAGE_PREFIXES[stage]
        except KeyError as exc:
            raise ValueError(f"unknown stage {stage!r}") from exc
    lines = []
    for key in sorted(_SCHEMA):
        if key == "workdir":
            continue
        if prefixes is not None and not key.startswith(prefixes):
            continue
        lines.append(f"{key} = {_SCHEMA[key][0](config)}")
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:12]


def override_seed(config: RunConfig, seed: int) -> RunConfig:
    """Copy with every rng seed replaced by one value."""
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return replace(
        config,
        phantom=replace(config.phantom, rng_seed=seed),
        load=replace(config.load, rng_seed=seed),
        model=replace(config.model, rng_seed=seed),
        train=replace(config.train, rng_seed=seed),
        graph_rng_seed=seed,
    )


def override_cases(config: RunConfig, n_cases: int) -> RunConfig:
    """Copy with the total load-case count replaced.

    The count must divide evenly across the configured anchor
    locations.
    """
    n_loc = config.load.n_locations
    if n_cases < 1:
        raise ConfigError("cases must be positive")
    if n_cases % n_loc != 0:
        raise ConfigError(
            f"cases must be a multiple of load.n_locations ({n_loc})"
        )
    new_load = replace(config.load, n_samples_per_location=n_cases // n_loc)
    return replace(config, load=new_load)
