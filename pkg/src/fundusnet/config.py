"""Run configuration: defaults, flat key=value files, CLI overrides."""

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import InvalidInputError


@dataclass
class RunConfig:
    eta: float = 0.01
    lam: float = 0.1
    kappa: int = 10
    epochs: int = 40
    seed: int = 0
    workers: int = 1
    norm_window: int = 69
    small_window: int = 7
    mid_window: int = 33
    large_window: int = 165
    lrelu_slope: float = 0.01
    eval_stride: int = 4
    target_background: int = 300_000
    target_optic_disc: int = 150_000
    target_fovea: int = 150_000
    target_vessel: int = 150_000

    # config-file keys; "lambda" is spelled out for the reader
    _ALIASES = {"lambda": "lam"}

    def targets(self):
        return {
            0: self.target_background,
            1: self.target_optic_disc,
            2: self.target_fovea,
            3: self.target_vessel,
        }

    def apply(self, key, value):
        key = self._ALIASES.get(key, key)
        for f in fields(self):
            if f.name == key:
                try:
                    setattr(self, key, f.type(value) if isinstance(f.type, type) else type(getattr(self, key))(value))
                except ValueError as exc:
                    raise InvalidInputError(f"bad value for {key}: {value!r}") from exc
                return
        raise InvalidInputError(f"unknown config key: {key}")

    def digest(self):
        text = "\n".join(f"{k}={v}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional key=value file plus CLI overrides
    (each "key=value")."""
    cfg = RunConfig()
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.apply(key, value)
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override must be key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg.apply(key, value)
    return cfg
