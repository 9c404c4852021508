"""Experiment configuration: flat key=value files with [section] headers.

Unknown sections or keys are rejected outright; every run's manifest
embeds the fully resolved configuration so outputs can be reproduced
bit-exactly.  Command-line flags override file values, which override the
defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import model
from .errors import ConfigError

# section -> key -> (type tag, default); model-parameter keys are handled
# separately so presets and inline coefficient sets can coexist.
SCHEMA = {
    "model": {"regime": ("str", "hlf")},
    "integration": {
        "spinup_days": ("float", 100.0),
        "record_days": ("float", 800.0),
        "dt_days": ("float", None),  # default: the preset's model step
        "stride": ("int", 20),
    },
    "filter": {
        "t_gw_days": ("str", "0.25"),  # number, or 'auto' to estimate
    },
    "train": {
        "arch": ("str", "1x5"),
        "split": ("str", "random"),
        "seed": ("int", 0),
        "span_days": ("float", 700.0),
        "epochs": ("int", 2000),
        "learning_rate": ("float", 1e-3),
        "lr_decay": ("float", 1.0),
    },
    "closure": {
        "days": ("float", 500.0),
        "dt_days": ("float", None),
        "stride": ("int", 20),
        "y0": ("str", "attractor"),
        "with_x": ("bool", False),
    },
    "lobes": {
        "y_b": ("float", 0.2),
        "component": ("int", 3),  # 1-based y-component index
        "bin_width_days": ("float", 5.0),
        "min_count": ("int", 5),
        "fit_t_min": ("float", 10.0),
    },
    "output": {
        "dir": ("str", "out"),
        "csv": ("bool", False),
    },
}

_MODEL_KEYS = set(model._PRESET_KEYS)


def _convert(section, key, raw, kind):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text: str) -> dict:
    """Parse sectioned key=value text into {section: {key: value}}.

    ``#`` starts a comment; inline model coefficients are accepted in
    [model] as an alternative to a regime name.
    """
    values = {}
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {ln}: unknown section [{section}]")
            values.setdefault(section, {})
            continue
        if section is None:
            raise ConfigError(f"line {ln}: key outside any section")
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value")
        key, raw_val = (part.strip() for part in line.split("=", 1))
        if section == "model" and key in _MODEL_KEYS:
            values[section][key] = _convert(section, key, raw_val, "float")
            continue
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {ln}: unknown key {key!r} in "
                              f"[{section}]")
        if key in values[section]:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        kind, _ = SCHEMA[section][key]
        values[section][key] = _convert(section, key, raw_val, kind)
    return values


@dataclass
class ExperimentConfig:
    """Fully resolved settings for one command invocation."""

    sections: dict = field(default_factory=dict)
    params: model.ModelParams = None

    @classmethod
    def load(cls, path: str = None, overrides: dict = None) -> "ExperimentConfig":
        """Defaults <- optional config file <- CLI overrides."""
        resolved = {sec: {k: d for k, (_, d) in keys.items()}
                    for sec, keys in SCHEMA.items()}
        if path is not None:
            try:
                with open(path, "r") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            file_vals = parse_config_text(text)
            for sec, kv in file_vals.items():
                resolved[sec].update(kv)
        for dotted, val in (overrides or {}).items():
            if val is None:
                continue
            sec, key = dotted.split(".", 1)
            resolved[sec][key] = val

        cfg = cls(sections=resolved)
        cfg._resolve_model()
        cfg._validate()
        return cfg

    def _resolve_model(self):
        mdl = self.sections["model"]
        inline = {k: v for k, v in mdl.items() if k in _MODEL_KEYS}
        if inline:
            missing = _MODEL_KEYS - set(inline)
            if missing:
                raise ConfigError("inline model parameters are incomplete; "
                                  f"missing {sorted(missing)}")
            text = "\n".join(f"{k} = {v!r}" for k, v in inline.items())
            self.params = model.parse_params(text)
        else:
            self.params = model.load_preset(mdl["regime"])
        for sec in ("integration", "closure"):
            if self.sections[sec]["dt_days"] is None:
                self.sections[sec]["dt_days"] = self.params.dt_model_days

    def _validate(self):
        integ = self.sections["integration"]
        if integ["spinup_days"] < 0 or integ["record_days"] < 0:
            raise ConfigError("spinup_days and record_days must be >= 0")
        for sec in ("integration", "closure"):
            if self.sections[sec]["dt_days"] <= 0:
                raise ConfigError(f"[{sec}] dt_days must be positive")
            if self.sections[sec]["stride"] < 1:
                raise ConfigError(f"[{sec}] stride must be >= 1")
        tr = self.sections["train"]
        if tr["split"] not in ("random", "predefined"):
            raise ConfigError("split must be 'random' or 'predefined'")
        self.arch()  # validates the format
        filt = self.sections["filter"]["t_gw_days"]
        if filt != "auto":
            try:
                if float(filt) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("t_gw_days must be a positive number or "
                                  "'auto'") from None
        lob = self.sections["lobes"]
        if lob["y_b"] <= 0:
            raise ConfigError("y_b must be positive")
        if lob["component"] not in (1, 2, 3):
            raise ConfigError("lobes component must be 1, 2 or 3")

    # convenience accessors -------------------------------------------------

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.sections[sec][key]

    def arch(self) -> tuple:
        raw = self.sections["train"]["arch"]
        parts = raw.lower().split("x")
        if len(parts) != 2:
            raise ConfigError(f"arch must look like 'LxP', got {raw!r}")
        try:
            n_hidden, width = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"arch must look like 'LxP', got {raw!r}") \
                from None
        if n_hidden < 1 or width < 1:
            raise ConfigError("arch dimensions must be >= 1")
        return n_hidden, width

    def manifest_dict(self) -> dict:
        out = {sec: dict(kv) for sec, kv in self.sections.items()}
        out["model"]["resolved_params"] = {
            k: v.tolist() if hasattr(v, "tolist") else v
            for k, v in self.params.asdict().items()}
        return out
