"""Flat key-value configuration files with sections.

Format::

    # comment
    [rates]
    gamma_plus = 2.664e7
    ...

Keys are fixed per section and unknown keys (or sections) are a hard error
naming the offending line, so typos cannot silently fall back to defaults.
Command-line overrides (``key=value`` or ``section.key=value``) apply after
the file loads; key names are unique across sections so the bare form is
unambiguous.
"""

from dataclasses import dataclass, field

from .langevin import SimConfig
from .params import CavityGeometry, DetectionChain, OpoParams

__all__ = ["ConfigError", "Config", "load_config", "parse_config", "apply_overrides"]


class ConfigError(ValueError):
    """Malformed configuration input; message carries key and line number."""


SCHEMA = {
    "rates": {
        "gamma_plus": float,
        "gamma_minus": float,
        "kappa_plus": float,
        "kappa_minus": float,
        "epsilon": float,
        "chi": float,
    },
    "cavity": {
        "fsr_hz": float,
        "coupler_T": float,
        "residual_L": float,
        "pump_loss_Lp": float,
        "e_nl_per_watt": float,
    },
    "detection": {
        "escape": float,
        "prop": float,
        "lo_overlap": float,
        "qe": float,
    },
    "simulation": {
        "dt": float,
        "n_steps": int,
        "burn_in": int,
        "seed": int,
        "n_realizations": int,
        "segment_len": int,
        "overlap": float,
    },
}

_KEY_TO_SECTION = {}
for _section, _keys in SCHEMA.items():
    for _key in _keys:
        assert _key not in _KEY_TO_SECTION, f"duplicate config key {_key}"
        _KEY_TO_SECTION[_key] = _section

SIMULATION_DEFAULTS = {
    "seed": 12345,
    "n_realizations": 1,
    "overlap": 0.5,
}


@dataclass
class Config:
    """Parsed configuration: ``values[section][key]`` with typed values."""

    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def has_section(self, section: str) -> bool:
        return section in self.values

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def _require(self, section: str, keys):
        block = self.values.get(section)
        if block is None:
            raise ConfigError(f"{self.source}: missing [{section}] section")
        missing = [k for k in keys if k not in block]
        if missing:
            raise ConfigError(
                f"{self.source}: [{section}] is missing keys: {', '.join(missing)}"
            )
        return block

    def opo_params(self) -> OpoParams:
        block = self._require(
            "rates", ("gamma_plus", "gamma_minus", "kappa_plus", "kappa_minus", "epsilon")
        )
        return OpoParams(
            gamma_plus=block["gamma_plus"],
            gamma_minus=block["gamma_minus"],
            kappa_plus=block["kappa_plus"],
            kappa_minus=block["kappa_minus"],
            epsilon=block["epsilon"],
            chi=block.get("chi", 0.0),
        )

    def cavity(self) -> CavityGeometry:
        block = self._require("cavity", ("fsr_hz", "coupler_T", "residual_L"))
        return CavityGeometry(
            fsr_hz=block["fsr_hz"],
            coupler_T=block["coupler_T"],
            residual_L=block["residual_L"],
            pump_loss_Lp=block.get("pump_loss_Lp", 0.0),
            e_nl_per_watt=block.get("e_nl_per_watt", 0.0),
        )

    def detection(self) -> DetectionChain:
        block = self._require("detection", ("escape", "prop", "lo_overlap", "qe"))
        return DetectionChain(
            escape=block["escape"],
            prop=block["prop"],
            lo_overlap=block["lo_overlap"],
            qe=block["qe"],
        )

    def sim_config(self, seed_override: int | None = None) -> SimConfig:
        block = self._require("simulation", ("dt", "n_steps", "burn_in"))
        merged = dict(SIMULATION_DEFAULTS)
        merged.update(block)
        seed = seed_override if seed_override is not None else merged["seed"]
        return SimConfig(
            dt=merged["dt"],
            n_steps=merged["n_steps"],
            burn_in=merged["burn_in"],
            seed=seed,
            n_realizations=merged["n_realizations"],
        )

    def segment_settings(self):
        block = self.values.get("simulation", {})
        return (
            block.get("segment_len", 4096),
            block.get("overlap", SIMULATION_DEFAULTS["overlap"]),
        )


def _convert(section: str, key: str, raw: str, where: str):
    caster = SCHEMA[section][key]
    try:
        if caster is int:
            value = int(raw, 0)
        else:
            value = float(raw)
    except ValueError:
        raise ConfigError(
            f"{where}: key '{key}' expects {caster.__name__}, got {raw!r}"
        ) from None
    return value


def parse_config(text: str, source: str = "<string>") -> Config:
    values: dict = {}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(
                    f"{where}: unknown section [{section}]; expected one of "
                    f"{sorted(SCHEMA)}"
                )
            values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if section is None:
            raise ConfigError(f"{where}: key '{key}' appears before any [section]")
        if key not in SCHEMA[section]:
            raise ConfigError(
                f"{where}: unknown key '{key}' in [{section}]; allowed: "
                f"{sorted(SCHEMA[section])}"
            )
        if key in values[section]:
            raise ConfigError(f"{where}: duplicate key '{key}' in [{section}]")
        values[section][key] = _convert(section, key, raw, where)
    return Config(values=values, source=source)


def load_config(path: str) -> Config:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=path)


def apply_overrides(cfg: Config, overrides) -> Config:
    """Apply ``key=value`` (or ``section.key=value``) pairs on top of a config."""
    values = {section: dict(block) for section, block in cfg.values.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        raw = raw.strip()
        if "." in key:
            section, _, key = key.partition(".")
            if section not in SCHEMA:
                raise ConfigError(f"override {item!r}: unknown section '{section}'")
            if key not in SCHEMA[section]:
                raise ConfigError(f"override {item!r}: unknown key '{key}' in [{section}]")
        else:
            section = _KEY_TO_SECTION.get(key)
            if section is None:
                raise ConfigError(f"override {item!r}: unknown key '{key}'")
        values.setdefault(section, {})[key] = _convert(section, key, raw, f"--set {item}")
    return Config(values=values, source=cfg.source)
