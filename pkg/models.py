"""
Data models for experiment runs: the JSON run configuration, the run report,
and the event log helper.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from typing import Optional, Tuple

import config
from baselines import LEARNERS, MLP_DIRECT, TOC
from errors import ConfigError, MissingFile, MissingReport
from metrics import METRICS
from tabular_data import ShiftSpec

ABLATIONS = ("none", "no_replay", "no_concept_loss", "refresh_tree", "capacity_sweep")

# Keys that only say where outputs go; they never change results
OUTPUT_KEYS = ("output_dir", "write_artifacts")


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 4
    min_leaf: int = 50
    # leading slices whose train splits are pooled to fit the scaffold
    fit_slices: int = 1


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    decoupled_decay: bool = True
    batch_size: int = 256
    max_epochs: int = 80
    patience: int = 8


@dataclass(frozen=True)
class ReplayConfig:
    enabled: bool = True
    capacity: int = 2048
    mix_ratio: float = 1.0
    balanced: bool = True
    balance_key: str = "label"
    quota: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    """One experiment: dataset, learner, hyperparameters and seeds"""
    name: str = "toc"
    dataset: str = "heart"
    prepared_dir: Optional[str] = None
    learner: str = "toc"
    metric: str = "auroc"
    lam: float = 1.0
    concept_weight: float = 1.0
    concept_mode: str = "soft"
    hidden: Tuple[int, ...] = (128, 64)
    dropout: float = 0.1
    tree: TreeConfig = field(default_factory=TreeConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    shift: Optional[ShiftSpec] = None
    synth_seed: int = 0
    seed_list: Tuple[int, ...] = (0, 1, 2, 3, 4)
    ablation: str = "none"
    tau: float = config.CONFIDENCE_TAU
    capacity_sweep: Tuple[int, ...] = (0, 512, 2048, 8192)
    sweep_shift: ShiftSpec = field(default_factory=lambda: ShiftSpec(mean_drift=(1.5, -1.0), prior_shift=0.2))
    output_dir: str = os.path.join(config.OUTPUT_DIR, "run")
    write_artifacts: bool = True

    def validate(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"unknown learner '{self.learner}'", field="learner")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric '{self.metric}'", field="metric")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation tag '{self.ablation}'", field="ablation")
        if self.ablation in ("refresh_tree", "no_concept_loss") and self.learner != TOC:
            raise ConfigError(f"ablation '{self.ablation}' only applies to the toc learner", field="ablation")
        if not self.seed_list:
            raise ConfigError("seed_list must not be empty", field="seed_list")
        if self.dataset == "synthetic":
            if self.shift is None:
                raise ConfigError("synthetic dataset needs a 'shift' block", field="shift")
            self.shift.validate()
        elif not self.prepared_dir:
            raise ConfigError("prepared_dir is required for non-synthetic datasets", field="prepared_dir")
        if self.replay.capacity < 0 or self.replay.mix_ratio < 0:
            raise ConfigError("replay capacity and mix ratio must be non-negative", field="replay")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)", field="tau")
        if self.tree.fit_slices < 1:
            raise ConfigError("tree.fit_slices must be >= 1", field="tree.fit_slices")
        if self.replay.balance_key == "concept" and self.learner == MLP_DIRECT:
            raise ConfigError("concept-balanced replay needs a tree-based learner", field="replay.balance_key")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "")

    def fingerprint(self):
        return config_fingerprint(self)


NESTED = {"tree": TreeConfig, "optim": OptimConfig, "replay": ReplayConfig,
          "shift": ShiftSpec, "sweep_shift": ShiftSpec}


def _check_type(current, value, key):
    """value must match the type of the field's current value (ints are fine for floats)."""
    if current is None or value is None:
        return value
    if isinstance(current, bool):
        ok = isinstance(value, bool)
    elif isinstance(current, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(current, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(current, (tuple, list)):
        ok = isinstance(value, (tuple, list))
        value = tuple(value) if ok else value
    elif isinstance(current, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"'{key}' expects {type(current).__name__}, got {type(value).__name__}",
                          field=key)
    return value


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"'{prefix.rstrip('.')}' must be an object", field=prefix.rstrip("."))
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key '{prefix}{unknown[0]}'", field=prefix + unknown[0])
    values = {}
    for name, value in data.items():
        key = prefix + name
        if cls is RunConfig and name in NESTED:
            values[name] = None if value is None else _build(NESTED[name], value, key + ".")
            continue
        values[name] = _check_type(getattr(defaults, name), value, key)
    return cls(**values)


def parse_override(text):
    """'key.sub=value' -> (['key', 'sub'], value). Values are JSON, else plain strings."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data, overrides):
    """Apply dotted overrides to a resolved config dict (in a copy)."""
    data = json.loads(json.dumps(data))
    for text in overrides or ():
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            if not isinstance(node, dict) or not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key '{'.'.join(path)}'", field=".".join(path))
            node = node[part]
        if path[-1] not in node:
            raise ConfigError(f"unknown config key '{'.'.join(path)}'", field=".".join(path))
        node[path[-1]] = value
    return data


def load_run_config(path, overrides=()):
    """Parse a JSON run config, apply overrides and validate; nothing runs before this passes."""
    if not os.path.exists(path):
        raise MissingFile(f"config file not found: {path}", file=path)
    with open(path, "r") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}", file=path)
    resolved = RunConfig.from_dict(raw).to_dict()
    return RunConfig.from_dict(apply_overrides(resolved, overrides)).validate()


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_fingerprint(run_config):
    data = {k: v for k, v in run_config.to_dict().items() if k not in OUTPUT_KEYS}
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


# ============================================================================
# Run reports
# ============================================================================

@dataclass
class RunReport:
    """Everything one protocol run produced, per seed and aggregated"""
    name: str
    learner: str
    replay: bool
    ablation: str
    metric: str
    dataset: str
    dataset_fingerprint: str
    config_fingerprint: str
    config: dict
    seeds: list
    aggregates: dict
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def save_report(report, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(report.to_json())
    return path


def load_report(path):
    if not os.path.exists(path):
        raise MissingReport(f"report not found: {path}", file=path)
    with open(path, "r") as f:
        return RunReport.from_dict(json.load(f))


# ============================================================================
# Event log
# ============================================================================

def log_event(event_type, data, path=None):
    """
    Append an event to the JSON event log.

    Args:
        event_type: Type of event (e.g., 'run_started', 'buffer_updated')
        data: Dictionary with event-specific data
        path: Log file, defaults to TOC_EVENT_LOG
    """
    path = path or config.EVENT_LOG
    try:
        entry = {
            'timestamp': datetime.now().isoformat(),
            'event_type': event_type,
            **data
        }

        # Read existing events
        events = []
        if os.path.exists(path):
            try:
                with open(path, 'r') as f:
                    events = json.load(f)
            except (json.JSONDecodeError, ValueError):
                events = []

        events.append(entry)

        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, 'w') as f:
            json.dump(events, f, indent=2, default=str)

    except Exception as e:
        config.status(f"Error logging event: {str(e)}", level="warn")
        # Don't fail the run if logging fails
