"""Flat ``key = value`` run configuration.

File format: one ``key = value`` per line, ``#`` starts a comment, blank
lines ignored. Unknown keys are rejected. Values given on the command line
override the file, which overrides the built-in defaults.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _opt_str(text: str) -> str | None:
    text = text.strip()
    return text or None


def _opt_int(text: str) -> int | None:
    text = text.strip()
    return int(text) if text else None


def _opt_float(text: str) -> float | None:
    text = text.strip()
    return float(text) if text else None


# key -> (parser, default, help)
KEYS: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "net": (str, "auto", "siren | cnn | auto (siren for represent and plain init/ntk, cnn otherwise)"),
    "seed": (int, 0, "master seed; init/noise/net-input/corruption seeds derive from it"),
    "task": (_opt_str, None, "represent | superres | denoise | inpaint"),
    "image": (_opt_str, None, "input image (PGM/PPM); 'builtin:camera' is a bundled 64×64 photo"),
    "reference": (_opt_str, None, "clean / high-resolution reference image for PSNR"),
    "mask": (_opt_str, None, "binary mask image for inpainting (nonzero = observed)"),
    "size": (_opt_int, None, "image side length when no image is given (default 64)"),
    "factor": (int, 4, "super-resolution down-sampling factor"),
    "noise_sigma": (float, 25.0 / 255.0, "std of synthetic Gaussian corruption for compare/denoise"),
    "iters": (_opt_int, None, "downstream training iterations"),
    "lr": (_opt_float, None, "downstream Adam learning rate"),
    "pretrain_iters": (_opt_int, None, "noise pretraining iterations"),
    "pretrain_lr": (_opt_float, None, "noise pretraining Adam learning rate"),
    "noise": (_opt_str, None, "pretraining target: gaussian:MEAN,STD or uniform:LO,HI"),
    "resample_each_iter": (_bool, False, "draw a fresh noise target every pretraining step"),
    "hidden_dim": (int, 64, "SIREN width"),
    "num_hidden_layers": (int, 3, "number of SIREN sine layers"),
    "omega0": (float, 30.0, "SIREN frequency scale"),
    "input_channels": (int, 8, "CNN input noise channels"),
    "encoder_channels": (_ints, (16, 32), "CNN encoder widths, comma separated"),
    "decoder_channels": (_ints, (32, 16), "CNN decoder widths, comma separated"),
    "skip_channels": (int, 4, "CNN skip-branch width"),
    "params": (_opt_str, None, "parameter file to start from / analyse"),
    "probe_size": (int, 32, "NTK probe grid side"),
    "probe_cap": (int, 4096, "maximum number of NTK probes"),
    "eig_method": (str, "lapack", "lapack | jacobi"),
    "top_modes": (int, 8, "eigenvector power images to write"),
    "centroid_modes": (int, 64, "modes whose frequency centroid is reported"),
    "log_every": (int, 1, "trace logging stride"),
    "out": (str, "run", "output directory"),
}


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Resolved key/value settings for one command."""

    def __init__(self, values: dict[str, Any] | None = None, command: str | None = None):
        self.command = command
        self.values = {k: spec[1] for k, spec in KEYS.items()}
        if values:
            self.update(values)

    def update(self, values: dict[str, Any]) -> None:
        for k, v in values.items():
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = v

    def __getitem__(self, key: str):
        return self.values[key]

    def require(self, *keys: str) -> None:
        for k in keys:
            if self.values.get(k) is None:
                raise ConfigError(f"missing required key {k!r}")

    def dumps(self) -> str:
        lines = ["# resolved configuration"]
        lines += [f"{k} = {_format(self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())


def parse_value(key: str, text: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key][0](text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = parse_value(key, value.strip())
    return out


def load(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, str(path))


def resolve(file_values: dict[str, Any] | None, flag_values: dict[str, Any]) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = RunConfig(file_values)
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    return cfg
