"""Flat key=value run configuration.

Keys are section-dotted (flow.steps, guidance.rho, codec.lambda_mask, ...).
Lines are `key = value`; blank lines and #-comments are ignored. Unknown keys
are rejected with their line number. Every run writes its fully resolved
config next to its outputs.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default, allowed values or None)
SCHEMA = {
    "run.seed": (int, 0, None),
    "run.out": (str, "out", None),
    "flow.steps": (int, 1, None),
    "flow.start": (str, "visible", ("visible", "noise")),
    "flow.hidden": (str, "128,128", None),
    "flow.train_steps": (int, 2000, None),
    "flow.lr": (float, 1e-3, None),
    "flow.batch": (int, 64, None),
    "flow.data": (str, "latents", ("latents", "toy2d")),
    "flow.time_eps": (float, 1e-3, None),
    "guidance.rho": (float, 0.5, None),
    "guidance.schedule": (str, "constant", ("constant", "linear-decay")),
    "guidance.measurement": (str, "weighted-target", ("weighted-target", "em-prior")),
    "guidance.em_iters": (int, 3, None),
    "guidance.grad_mode": (str, "full-vjp", ("full-vjp", "stop-grad")),
    "codec.hidden": (str, "32,64", None),
    "codec.lambda_fre": (float, 0.1, None),
    "codec.lambda_int": (float, 1.0, None),
    "codec.lambda_ssim": (float, 1.0, None),
    "codec.lambda_grad": (float, 1.0, None),
    "codec.lambda_color": (float, 0.5, None),
    "codec.lambda_mask": (float, 1.0, None),
    "codec.train_steps": (int, 500, None),
    "codec.lr": (float, 1e-3, None),
    "codec.batch": (int, 8, None),
    "codec.resume": (str, "", None),
    "data.dir": (str, "", None),
    "data.kind": (str, "ivif", ("ivif", "mef", "mff")),
    "data.count": (int, 16, None),
    "data.size": (int, 32, None),
}


class Config:
    """Resolved configuration with attribute-free dotted-key access."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str):
        return self.values[key]

    def hidden_pair(self, key: str):
        parts = [int(p) for p in str(self.values[key]).split(",") if p.strip()]
        if len(parts) != 2:
            raise ConfigError(f"{key} must be two comma-separated widths")
        return tuple(parts)

    def dump(self) -> str:
        lines = [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def write_resolved(self, path) -> None:
        Path(path).write_text(self.dump())


def parse_config(text: str | None = None, path=None, overrides: dict | None = None) -> Config:
    """Parse config text or a file, apply overrides, fill defaults."""
    values = {k: d for k, (_, d, _) in SCHEMA.items()}
    if path is not None:
        text = Path(path).read_text()
    if text:
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            parser, _, allowed = SCHEMA[key]
            try:
                parsed = parser(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
            if allowed is not None and parsed not in allowed:
                raise ConfigError(
                    f"line {lineno}: {key} must be one of {allowed}, got {parsed!r}"
                )
            values[key] = parsed
    for key, val in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"override: unknown key {key!r}")
        values[key] = SCHEMA[key][0](val)
    return Config(values)
