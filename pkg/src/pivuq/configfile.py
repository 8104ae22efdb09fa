"""Flat `key = value` config files (UTF-8 text) plus converters for the
serializable dataclasses."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .pivcc import EstimatorConfig
from .synthgen import AnalyticFlow, SceneSpec


def loads_kv(text: str) -> dict[str, str]:
    """Parse `key = value` lines; blank lines and '#' comments are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key in {raw!r}")
        out[key] = value.strip()
    return out


def dumps_kv(mapping: dict) -> str:
    return "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping))


def load_kv(path) -> dict[str, str]:
    return loads_kv(Path(path).read_text(encoding="utf-8"))


def dump_kv(mapping: dict, path) -> None:
    Path(path).write_text(dumps_kv(mapping), encoding="utf-8")


def _pop(kv: dict, key: str, cast, default=None):
    if key not in kv:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = kv.pop(key)
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r}") from None


def scene_spec_to_kv(scene: SceneSpec) -> dict:
    return {
        "width": scene.width,
        "height": scene.height,
        "particle_density": repr(scene.particle_density),
        "particle_diameter": repr(scene.particle_diameter),
        "peak_intensity": repr(scene.peak_intensity),
        "seed": scene.seed,
    }


def scene_spec_from_kv(kv: dict[str, str]) -> SceneSpec:
    kv = dict(kv)
    return SceneSpec(
        width=_pop(kv, "width", int),
        height=_pop(kv, "height", int),
        particle_density=_pop(kv, "particle_density", float, 0.03),
        particle_diameter=_pop(kv, "particle_diameter", float, 2.5),
        peak_intensity=_pop(kv, "peak_intensity", float, 220.0),
        seed=_pop(kv, "seed", int, 0),
    )


def analytic_flow_to_kv(flow: AnalyticFlow) -> dict:
    return {
        "kind": flow.kind,
        "u0": repr(flow.u0),
        "v0": repr(flow.v0),
        "omega": repr(flow.omega),
        "rate": repr(flow.rate),
        "circulation": repr(flow.circulation),
        "core_radius": repr(flow.core_radius),
        "center_x": repr(flow.center[0]),
        "center_y": repr(flow.center[1]),
        "max_displacement": repr(flow.max_displacement),
    }


def analytic_flow_from_kv(kv: dict[str, str]) -> AnalyticFlow:
    kv = dict(kv)
    return AnalyticFlow(
        kind=_pop(kv, "kind", str),
        u0=_pop(kv, "u0", float, 0.0),
        v0=_pop(kv, "v0", float, 0.0),
        omega=_pop(kv, "omega", float, 0.0),
        rate=_pop(kv, "rate", float, 0.0),
        circulation=_pop(kv, "circulation", float, 0.0),
        core_radius=_pop(kv, "core_radius", float, 4.0),
        center=(_pop(kv, "center_x", float, 0.0), _pop(kv, "center_y", float, 0.0)),
        max_displacement=_pop(kv, "max_displacement", float, 10.0),
    )


def estimator_config_to_kv(cfg: EstimatorConfig) -> dict:
    return {
        "window_size": cfg.window_size,
        "overlap": repr(cfg.overlap),
        "peak_fit": cfg.peak_fit,
        "correlation": cfg.correlation,
        "instance_id": cfg.instance_id,
    }


def estimator_config_from_kv(kv: dict[str, str]) -> EstimatorConfig:
    kv = dict(kv)
    return EstimatorConfig(
        window_size=_pop(kv, "window_size", int, 32),
        overlap=_pop(kv, "overlap", float, 0.5),
        peak_fit=_pop(kv, "peak_fit", str, "gaussian3"),
        correlation=_pop(kv, "correlation", str, "fft"),
        instance_id=_pop(kv, "instance_id", int, 0),
    )
