"""Run configuration: sectioned key=value files with CLI overrides.

A run is described by an INI-style file; every key can be overridden on the
command line (``--set section.key=value``), and overrides win.  Parsing keeps
the raw strings so a parse -> serialize -> parse round trip is the identity;
typed accessors validate ranges and report precise key paths on failure.
"""

from __future__ import annotations

import configparser
import io as _io
from dataclasses import dataclass, field
from pathlib import Path

from .equilibria import EquilibriumParams, NuSpec
from .errors import ConfigError
from .ibm import IbmParams, KernelSpec
from .pde import SohbCoeffs, SohbParams

MODES = ("coeffs", "sample", "ibm", "pde", "validate")

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {
        "mode": "coeffs",
        "seed": "0",
        "out": "out",
        "format": "csv",
        "threads": "1",
        "plots": "true",
    },
    "equilibrium": {
        "nu": "1.0",
        "d": "0.5",
        "n_profile": "1024",
    },
    "coeffs": {
        "d_grid": "",
    },
    "sample": {
        "n_samples": "100000",
        "bins": "50",
    },
    "ibm": {
        "n_agents": "1000",
        "box_length": "1.0",
        "v0": "0.0",
        "D": "0.2",
        "dt": "0.01",
        "t_end": "10.0",
        "kernel": "global",
        "init": "haar",
        "det_fallback": "skip_drift",
        "target": "polar",
        "sample_every": "10",
        "snapshot_every": "0",
    },
    "pde": {
        "cells": "64",
        "dx": "0.015625",
        "dt": "",
        "cfl": "0.4",
        "t_end": "0.5",
        "init": "uniform",
        "rho0": "1.0",
        "amplitude": "0.2",
        "reorthonormalize": "polar",
        "snapshot_every": "0",
    },
    "validate": {
        "checks": "",
        "quick": "false",
        "psi0_cache": "",
    },
}


@dataclass
class RunConfig:
    """Parsed configuration: raw section/key strings plus typed accessors."""

    values: dict[str, dict[str, str]] = field(default_factory=dict)

    # -- parsing ---------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case-sensitive (e.g. ibm.D)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        values = {name: dict(DEFAULTS[name]) for name in DEFAULTS}
        for section in parser.sections():
            if section not in values:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in values[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                values[section][key] = value
        return cls(values)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({name: dict(section) for name, section in DEFAULTS.items()})

    def apply_overrides(self, overrides: dict[str, str]) -> None:
        """Apply ``section.key -> value`` pairs (command line wins)."""
        for dotted, value in overrides.items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            section, key = dotted.split(".", 1)
            if section not in self.values or key not in self.values[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            self.values[section][key] = value

    def serialize(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section in self.values:
            parser[section] = dict(self.values[section])
        buf = _io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    # -- typed access ----------------------------------------------------

    def raw(self, section: str, key: str) -> str:
        return self.values[section][key]

    def _float(self, section: str, key: str) -> float:
        raw = self.raw(section, key)
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from exc

    def _int(self, section: str, key: str) -> int:
        raw = self.raw(section, key)
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from exc

    def _bool(self, section: str, key: str) -> bool:
        raw = self.raw(section, key).strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key} must be a boolean, got {raw!r}")

    @property
    def mode(self) -> str:
        mode = self.raw("run", "mode")
        if mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {mode!r}")
        return mode

    @property
    def seed(self) -> int:
        seed = self._int("run", "seed")
        if seed < 0:
            raise ConfigError(f"run.seed must be non-negative, got {seed}")
        return seed

    @property
    def out_dir(self) -> Path:
        return Path(self.raw("run", "out"))

    @property
    def output_format(self) -> str:
        fmt = self.raw("run", "format")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"run.format must be csv or json, got {fmt!r}")
        return fmt

    @property
    def threads(self) -> int:
        threads = self._int("run", "threads")
        if threads < 1:
            raise ConfigError(f"run.threads must be at least 1, got {threads}")
        return threads

    @property
    def plots(self) -> bool:
        return self._bool("run", "plots")

    # equilibrium / coeffs ------------------------------------------------

    def nu_spec(self) -> NuSpec:
        raw = self.raw("equilibrium", "nu")
        try:
            coeffs = tuple(float(tok) for tok in raw.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(
                f"equilibrium.nu must be comma-separated numbers, got {raw!r}"
            ) from exc
        if not coeffs:
            raise ConfigError("equilibrium.nu must not be empty")
        if all(c == 0.0 for c in coeffs):
            return NuSpec.uniform()
        try:
            return NuSpec.polynomial(coeffs)
        except ValueError as exc:
            raise ConfigError(f"equilibrium.nu: {exc}") from exc

    def equilibrium_params(self, d: float | None = None) -> EquilibriumParams:
        d_value = self._float("equilibrium", "d") if d is None else d
        if d_value <= 0.0:
            raise ConfigError(f"equilibrium.d must be positive, got {d_value}")
        return EquilibriumParams(self.nu_spec(), d_value)

    def profile_nodes(self) -> int:
        n = self._int("equilibrium", "n_profile")
        if n < 64:
            raise ConfigError(f"equilibrium.n_profile must be at least 64, got {n}")
        return n

    def d_grid(self) -> list[float]:
        raw = self.raw("coeffs", "d_grid").strip()
        if not raw:
            return [self._float("equilibrium", "d")]
        try:
            grid = [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(
                f"coeffs.d_grid must be comma-separated numbers, got {raw!r}"
            ) from exc
        if any(d <= 0.0 for d in grid):
            raise ConfigError("coeffs.d_grid values must be positive")
        return grid

    # sample ---------------------------------------------------------------

    def sample_options(self) -> dict:
        n = self._int("sample", "n_samples")
        bins = self._int("sample", "bins")
        if n < 1:
            raise ConfigError(f"sample.n_samples must be positive, got {n}")
        if bins < 2:
            raise ConfigError(f"sample.bins must be at least 2, got {bins}")
        return {"n_samples": n, "bins": bins}

    # ibm --------------------------------------------------------------------

    def kernel_spec(self) -> KernelSpec:
        raw = self.raw("ibm", "kernel").strip()
        if raw == "global":
            return KernelSpec.global_()
        kind, _, arg = raw.partition(":")
        try:
            if kind == "tophat":
                return KernelSpec.tophat(float(arg))
            if kind == "gaussian":
                return KernelSpec.gaussian(float(arg))
        except ValueError as exc:
            raise ConfigError(f"ibm.kernel: {exc}") from exc
        raise ConfigError(
            f"ibm.kernel must be global, tophat:R, or gaussian:S, got {raw!r}"
        )

    def ibm_params(self) -> IbmParams:
        n_agents = self._int("ibm", "n_agents")
        if n_agents < 1:
            raise ConfigError(f"ibm.n_agents must be positive, got {n_agents}")
        for key in ("box_length", "dt"):
            if self._float("ibm", key) <= 0.0:
                raise ConfigError(f"ibm.{key} must be positive")
        if self._float("ibm", "D") < 0.0:
            raise ConfigError("ibm.D must be non-negative")
        if self._float("ibm", "t_end") < 0.0:
            raise ConfigError("ibm.t_end must be non-negative")
        try:
            return IbmParams(
                n_agents=n_agents,
                box_length=self._float("ibm", "box_length"),
                v0=self._float("ibm", "v0"),
                nu=self.nu_spec(),
                noise=self._float("ibm", "D"),
                dt=self._float("ibm", "dt"),
                seed=self.seed,
                kernel=self.kernel_spec(),
                det_fallback=self.raw("ibm", "det_fallback"),
                target=self.raw("ibm", "target"),
            )
        except ValueError as exc:
            raise ConfigError(f"ibm: {exc}") from exc

    def ibm_init(self) -> tuple[str, str | None]:
        raw = self.raw("ibm", "init").strip()
        if raw in ("aligned", "haar"):
            return raw, None
        kind, _, path = raw.partition(":")
        if kind == "custom" and path:
            if not Path(path).is_file():
                raise ConfigError(f"ibm.init snapshot not found: {path}")
            return "custom", path
        raise ConfigError(
            f"ibm.init must be aligned, haar, or custom:PATH, got {raw!r}"
        )

    def ibm_run_options(self) -> dict:
        t_end = self._float("ibm", "t_end")
        sample_every = max(1, self._int("ibm", "sample_every"))
        snap = self._int("ibm", "snapshot_every")
        return {
            "t_end": t_end,
            "sample_every": sample_every,
            "snapshot_every": snap if snap > 0 else None,
        }

    # pde ---------------------------------------------------------------------

    def pde_shape(self) -> tuple[int, ...]:
        raw = self.raw("pde", "cells").strip()
        try:
            shape = tuple(int(tok) for tok in raw.split("x"))
        except ValueError as exc:
            raise ConfigError(f"pde.cells must look like 64 or 64x32, got {raw!r}") from exc
        if not shape or len(shape) > 3 or any(n < 1 for n in shape):
            raise ConfigError(f"pde.cells must give 1 to 3 positive sizes, got {raw!r}")
        return shape

    def pde_params(self, coeffs: SohbCoeffs) -> SohbParams:
        dx = self._float("pde", "dx")
        if dx <= 0.0:
            raise ConfigError(f"pde.dx must be positive, got {dx}")
        dt_raw = self.raw("pde", "dt").strip()
        dt = None
        if dt_raw:
            dt = self._float("pde", "dt")
            if dt <= 0.0:
                raise ConfigError(f"pde.dt must be positive, got {dt}")
        try:
            return SohbParams(
                coeffs=coeffs,
                dx=dx,
                dt=dt,
                cfl=self._float("pde", "cfl"),
                reorthonormalize=self.raw("pde", "reorthonormalize"),
            )
        except ValueError as exc:
            raise ConfigError(f"pde: {exc}") from exc

    def pde_run_options(self) -> dict:
        t_end = self._float("pde", "t_end")
        if t_end < 0.0:
            raise ConfigError(f"pde.t_end must be non-negative, got {t_end}")
        snap = self._int("pde", "snapshot_every")
        return {"t_end": t_end, "snapshot_every": snap if snap > 0 else None}

    # validate -------------------------------------------------------------

    def validate_options(self) -> dict:
        raw = self.raw("validate", "checks").strip()
        checks = [tok.strip() for tok in raw.split(",") if tok.strip()] or None
        cache = self.raw("validate", "psi0_cache").strip() or None
        if cache is not None and not Path(cache).is_file():
            raise ConfigError(f"validate.psi0_cache not found: {cache}")
        return {
            "checks": checks,
            "quick": self._bool("validate", "quick"),
            "psi0_cache": cache,
        }
