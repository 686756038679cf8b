# /superlab/data_manager.py

import os
import io
import json
import hashlib
from typing import Any, Literal, Optional

import pandas as pd
from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedMap
from ruamel.yaml.error import MarkedYAMLError, YAMLError
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import logger, CODE_VERSION, TOOL_NAME, MANIFEST_FILE_NAME, SEED_ENV_VAR, WORKERS_ENV_VAR
from utils.errors import ConfigError
from utils.helpers import file_sha256, gnuplot_script, utc_timestamp, truncate_detail

_yaml = YAML()
_yaml.preserve_quotes = True
_yaml.indent(mapping=2, sequence=4, offset=2)
_yaml.width = 120

CSV_FLOAT_FORMAT = "%.10g"


# --- YAML + VALIDATION MODELS ---
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelModel(_Section):
    family: Literal["zero", "gaussian_bump", "tabulated"] = "gaussian_bump"
    amplitude: float = 0.5
    sigma: float = Field(default=0.5, gt=0)
    table_path: Optional[str] = None


class GridModel(_Section):
    t_max: float = Field(default=1.0, gt=0)
    n_t: int = Field(default=64, ge=1)
    x_min: float = -12.0
    x_max: float = 12.0
    n_x: int = Field(default=96, ge=1)


class MuModel(_Section):
    family: Literal["gaussian_bump", "indicator", "tabulated"] = "gaussian_bump"
    params: dict[str, Any] = {"mass": 1.0, "mean": 0.0, "sd": 0.5}


class McModel(_Section):
    n_paths: int = Field(default=2000, ge=2)
    n_env_replicas: int = Field(default=20, ge=1)
    antithetic: bool = True
    derivative_scheme: Literal["exponential", "euler"] = "euler"


class SchemeModel(_Section):
    nu_override: Optional[float] = Field(default=None, gt=0)
    density_budget: int = Field(default=10_000, ge=1)
    total_path_budget: int = Field(default=200_000_000, ge=1)
    branching: bool = True


class ExperimentModel(_Section):
    r: float = Field(default=0.0, ge=0)
    x: float = 0.0
    t: float = Field(default=1.0, gt=0)
    ys: Optional[list[float]] = None
    moment_orders: list[int] = [2, 4]
    n_lags: int = Field(default=4, ge=3)
    base_time_fraction: float = 0.5
    ladder_points: int = Field(default=9, ge=2)
    replicas: int = Field(default=100, ge=2)
    density_envs: int = Field(default=1, ge=1)
    split_paths: int = Field(default=200, ge=2)
    holder_nodes: int = Field(default=1, ge=1)


class RngModel(_Section):
    seed: int = Field(default=20240601, ge=0)


class ExperimentConfig(_Section):
    kernel: KernelModel = KernelModel()
    grid: GridModel = GridModel()
    mu: MuModel = MuModel()
    mc: McModel = McModel()
    scheme: SchemeModel = SchemeModel()
    experiment: ExperimentModel = ExperimentModel()
    rng: RngModel = RngModel()
    workers: int = Field(default=1, ge=1)
    out_dir: str = "runs"


class ErrorRecord(BaseModel):
    module: str
    code: str
    message: str


class RunManifest(BaseModel):
    tool: str = TOOL_NAME
    code_version: str = CODE_VERSION
    subcommand: str = ""
    config_hash: Optional[str] = None
    seed: Optional[int] = None
    workers: Optional[int] = None
    started_at: str = ""
    finished_at: Optional[str] = None
    exit_code: Optional[int] = None
    files: dict[str, str] = {}
    summary: dict[str, Any] = {}
    error: Optional[ErrorRecord] = None


# --- YAML HELPERS ---
def _plain(data):
    if isinstance(data, dict):
        return {str(k): _plain(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_plain(v) for v in data]
    return data


def _read_yaml(path: str) -> CommentedMap:
    if not os.path.exists(path):
        raise ConfigError("parse-error", f"{path}: no such file")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = _yaml.load(f)
        except MarkedYAMLError as e:
            line = e.problem_mark.line + 1 if e.problem_mark is not None else 0
            raise ConfigError("parse-error", f"{path}: line {line}: {e.problem}") from e
        except YAMLError as e:
            raise ConfigError("parse-error", f"{path}: {e}") from e
    if data is None:
        return CommentedMap()
    if not isinstance(data, dict):
        raise ConfigError("parse-error", f"{path}: line 1: the top level must be a mapping of sections")
    return data


def _write_yaml(path: str, data) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        _yaml.dump(data, f)


def _model_validate(model_cls, data):
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "<root>"
        logger.error(f"Validation error in {model_cls.__name__}: {e}")
        raise ConfigError("invalid-config", f"{where}: {first['msg']}") from e


def _apply_env_overrides(data: dict) -> dict:
    for var, section, key in ((SEED_ENV_VAR, "rng", "seed"), (WORKERS_ENV_VAR, None, "workers")):
        raw = os.getenv(var)
        if raw is None or raw == "":
            continue
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigError("invalid-config", f"{var}={raw!r} is not an integer") from e
        if section is None:
            data[key] = value
        else:
            data.setdefault(section, {})[key] = value
    return data


def _resolve_paths(cfg: ExperimentConfig, base_dir: str) -> ExperimentConfig:
    """Table paths in a config file are relative to that file."""
    if cfg.kernel.table_path and not os.path.isabs(cfg.kernel.table_path):
        cfg.kernel.table_path = os.path.normpath(os.path.join(base_dir, cfg.kernel.table_path))
    path = cfg.mu.params.get("path")
    if isinstance(path, str) and not os.path.isabs(path):
        cfg.mu.params["path"] = os.path.normpath(os.path.join(base_dir, path))
    return cfg


# --- CONFIG ---
def parse_config(data: dict, base_dir: Optional[str] = None, env: bool = True) -> ExperimentConfig:
    from utils.checks import check_config

    data = _plain(data)
    if env:
        data = _apply_env_overrides(data)
    cfg = _model_validate(ExperimentConfig, data)
    if base_dir:
        cfg = _resolve_paths(cfg, base_dir)
    check_config(cfg)
    return cfg


def load_config(path: str, env: bool = True) -> ExperimentConfig:
    """Read, validate and cross-check a sectioned YAML config; SUPERLAB_SEED / SUPERLAB_WORKERS override it."""
    raw = _read_yaml(path)
    cfg = parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)), env=env)
    logger.debug(f"CONFIG: loaded {path} (hash {config_hash(cfg)[:12]}).")
    return cfg


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, workers: Optional[int] = None,
                   out_dir: Optional[str] = None) -> ExperimentConfig:
    """Command-line overrides, applied after the file and the environment."""
    from utils.checks import check_config

    data = cfg.model_dump(mode="json")
    if seed is not None:
        data["rng"]["seed"] = seed
    if workers is not None:
        data["workers"] = workers
    if out_dir is not None:
        data["out_dir"] = out_dir
    updated = _model_validate(ExperimentConfig, data)
    check_config(updated)
    return updated


def dump_config(cfg: ExperimentConfig, path: Optional[str] = None) -> str:
    data = cfg.model_dump(mode="json")
    if path:
        _write_yaml(path, data)
    buffer = io.StringIO()
    _yaml.dump(data, buffer)
    return buffer.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --- RUN OUTPUTS ---
def ensure_out_dir(out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.abspath(out_dir)


def _inside(out_dir: str, name: str) -> str:
    root = os.path.abspath(out_dir)
    path = os.path.abspath(os.path.join(root, name))
    if os.path.commonpath([root, path]) != root:
        raise ConfigError("invalid-config", f"output {name!r} would land outside {root}")
    return path


def new_manifest(subcommand: str, cfg: Optional[ExperimentConfig] = None) -> RunManifest:
    manifest = RunManifest(subcommand=subcommand, started_at=utc_timestamp())
    if cfg is not None:
        manifest.config_hash = config_hash(cfg)
        manifest.seed = cfg.rng.seed
        manifest.workers = cfg.workers
    return manifest


def record_error(manifest: RunManifest, module: str, code: str, message: str) -> None:
    manifest.error = ErrorRecord(module=module, code=code, message=truncate_detail(message))


def write_manifest(out_dir: str, manifest: RunManifest) -> str:
    manifest.finished_at = manifest.finished_at or utc_timestamp()
    path = _inside(ensure_out_dir(out_dir), MANIFEST_FILE_NAME)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest.model_dump(mode="json"), f, indent=4)
    return path


def write_csv(out_dir: str, name: str, frame: pd.DataFrame, manifest: Optional[RunManifest] = None,
              plot: Optional[dict] = None) -> str:
    """
    Write a CSV with a fixed float format so reruns are byte-identical, plus a gnuplot script when
    plot = {"x": column, "y": [columns], "title": str, "logscale": bool} is given.
    """
    path = _inside(ensure_out_dir(out_dir), name)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    if manifest is not None:
        manifest.files[name] = file_sha256(path)
    if plot:
        columns = list(frame.columns)
        script_name = os.path.splitext(name)[0] + ".gp"
        script = gnuplot_script(name, columns.index(plot["x"]) + 1, [columns.index(c) + 1 for c in plot["y"]],
                                plot.get("title", name), plot["x"], plot.get("logscale", False), plot["y"])
        script_path = _inside(out_dir, script_name)
        with open(script_path, 'w', encoding='utf-8') as f:
            f.write(script)
        if manifest is not None:
            manifest.files[script_name] = file_sha256(script_path)
    logger.info(f"OUTPUT: wrote {path} ({len(frame)} rows).")
    return path
