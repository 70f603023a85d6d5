"""Run manifests: the single configuration record driving every command.

One INI-style config file (sections [model], [sim], [fit], [output]) fully
determines a run; CLI flags override individual fields and the effective
merged manifest is echoed into the output directory next to every report.
The manifest hash covers the scientific content (model, sim, fit, seed,
tool version) and deliberately excludes the output directory, so relocating
a run does not change its identity.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from . import __version__
from .kernel import KernelReport
from .model import ModelParams, StabilityMode
from .sim import PAIRS, SimConfig, default_ccdf_grids
from .tails import quantile_thresholds

__all__ = [
    "ConfigError",
    "SimSettings",
    "FitSettings",
    "RunManifest",
    "parse_manifest",
    "manifest_to_ini",
    "manifest_hash",
    "apply_overrides",
    "plan_sim_config",
]

ENV_OUTPUT_DIR = "TANDEMTAIL_OUT"


class ConfigError(ValueError):
    """Configuration could not be parsed; the message names the offending field."""


@dataclass(frozen=True)
class SimSettings:
    """Raw [sim] section; level sets are derived later by the planner."""

    dt: float = 1e-3
    horizon: float = 1e5
    burn_in: float = 1e3
    seed: int = 42
    replicas: int = 4
    workers: int = 1


@dataclass(frozen=True)
class FitSettings:
    """Raw [fit] section: fit windows, dependence levels and diagnostics sizes.

    The first buffer's stationary law is exactly exponential, so its fit
    window can sit shallow where counts are plentiful.  The downstream
    buffers' transforms carry nearby secondary singularities whose
    corrections decay slowly, so those nodes default to a much deeper
    window.
    """

    window_lo_q: float = 0.90
    window_hi_q: float = 0.999
    deep_window_lo_q: float = 0.999
    deep_window_hi_q: float = 0.99999
    pair_quantiles: tuple[float, ...] = (0.5, 0.9, 0.99, 0.999)
    triple_quantiles: tuple[float, ...] = (0.0, 0.5, 0.9, 0.99)
    gumbel_blocks: int = 50
    gumbel_block_length: float = 1e3
    ccdf_points: int = 241
    ccdf_depth: float = 13.0


@dataclass(frozen=True)
class RunManifest:
    model: ModelParams
    stability: StabilityMode = StabilityMode.REFINED
    sim: SimSettings = field(default_factory=SimSettings)
    fit: FitSettings = field(default_factory=FitSettings)
    out_dir: str = "out"
    version: str = __version__


def _format_number(x: float) -> str:
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def _vector(raw: str, section: str, key: str, n: int | None = None) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.replace(",", " ").split()]
    try:
        values = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: could not parse {raw!r} as numbers") from exc
    if n is not None and len(values) != n:
        raise ConfigError(f"[{section}] {key}: expected {n} values, got {len(values)}")
    return values


def _scalar(parser, section: str, key: str, convert, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return convert(raw)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"[{section}] {key}: could not parse {raw!r}") from exc


def parse_manifest(text: str, out_dir_override: str | None = None) -> RunManifest:
    """Parse an INI manifest; raises :class:`ConfigError` with field diagnostics."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if not parser.has_section("model"):
        raise ConfigError("missing required [model] section")
    for key in ("lambda", "c", "sigma"):
        if not parser.has_option("model", key):
            raise ConfigError(f"[model] {key}: required")
    try:
        model = ModelParams(
            lam=_vector(parser.get("model", "lambda"), "model", "lambda", 3),
            c=_vector(parser.get("model", "c"), "model", "c", 3),
            sigma=_vector(parser.get("model", "sigma"), "model", "sigma", 3),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[model]: {exc}") from exc
    stability = _scalar(parser, "model", "stability", StabilityMode, StabilityMode.REFINED)

    sim = SimSettings(
        dt=_scalar(parser, "sim", "dt", float, SimSettings.dt),
        horizon=_scalar(parser, "sim", "horizon", float, SimSettings.horizon),
        burn_in=_scalar(parser, "sim", "burn_in", float, SimSettings.burn_in),
        seed=_scalar(parser, "sim", "seed", int, SimSettings.seed),
        replicas=_scalar(parser, "sim", "replicas", int, SimSettings.replicas),
        workers=_scalar(parser, "sim", "workers", int, SimSettings.workers),
    )
    defaults = FitSettings()
    fit = FitSettings(
        window_lo_q=_scalar(parser, "fit", "window_lo_q", float, defaults.window_lo_q),
        window_hi_q=_scalar(parser, "fit", "window_hi_q", float, defaults.window_hi_q),
        deep_window_lo_q=_scalar(
            parser, "fit", "deep_window_lo_q", float, defaults.deep_window_lo_q
        ),
        deep_window_hi_q=_scalar(
            parser, "fit", "deep_window_hi_q", float, defaults.deep_window_hi_q
        ),
        pair_quantiles=(
            _vector(parser.get("fit", "pair_quantiles"), "fit", "pair_quantiles")
            if parser.has_option("fit", "pair_quantiles")
            else defaults.pair_quantiles
        ),
        triple_quantiles=(
            _vector(parser.get("fit", "triple_quantiles"), "fit", "triple_quantiles")
            if parser.has_option("fit", "triple_quantiles")
            else defaults.triple_quantiles
        ),
        gumbel_blocks=_scalar(parser, "fit", "gumbel_blocks", int, defaults.gumbel_blocks),
        gumbel_block_length=_scalar(
            parser, "fit", "gumbel_block_length", float, defaults.gumbel_block_length
        ),
        ccdf_points=_scalar(parser, "fit", "ccdf_points", int, defaults.ccdf_points),
        ccdf_depth=_scalar(parser, "fit", "ccdf_depth", float, defaults.ccdf_depth),
    )
    out_dir = _scalar(parser, "output", "dir", str, "out")
    if out_dir_override:
        out_dir = out_dir_override
    return RunManifest(model=model, stability=stability, sim=sim, fit=fit, out_dir=out_dir)


def manifest_to_ini(manifest: RunManifest) -> str:
    """Serialize losslessly (floats via repr) so parse(serialize(m)) == m."""
    m = manifest
    buf = io.StringIO()
    buf.write("[model]\n")
    buf.write("lambda = " + ", ".join(_format_number(v) for v in m.model.lam) + "\n")
    buf.write("c = " + ", ".join(_format_number(v) for v in m.model.c) + "\n")
    buf.write("sigma = " + ", ".join(_format_number(v) for v in m.model.sigma) + "\n")
    buf.write(f"stability = {m.stability.value}\n\n")
    buf.write("[sim]\n")
    for f in fields(SimSettings):
        buf.write(f"{f.name} = {_format_number(getattr(m.sim, f.name))}\n")
    buf.write("\n[fit]\n")
    for f in fields(FitSettings):
        value = getattr(m.fit, f.name)
        if isinstance(value, tuple):
            buf.write(f"{f.name} = " + ", ".join(_format_number(v) for v in value) + "\n")
        else:
            buf.write(f"{f.name} = {_format_number(value)}\n")
    buf.write("\n[output]\n")
    buf.write(f"dir = {m.out_dir}\n")
    buf.write(f"\n; tool version {m.version}\n")
    return buf.getvalue()


def manifest_hash(manifest: RunManifest) -> str:
    """SHA-256 over the scientific content; excludes the output directory."""
    m = replace(manifest, out_dir="")
    canon = manifest_to_ini(m)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def apply_overrides(manifest: RunManifest, overrides: list[str]) -> RunManifest:
    """Apply ``section.key=value`` strings on top of a parsed manifest."""
    text = manifest_to_ini(manifest)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(text)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        section, key, value = section.strip(), key.strip(), value.strip()
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
    rebuilt = io.StringIO()
    parser.write(rebuilt)
    return parse_manifest(rebuilt.getvalue())


def _fallback_alphas(model: ModelParams) -> tuple[float, float, float]:
    # crude positive decay scales for grid sizing when kernel analytics are
    # unavailable (weak-stability-only models)
    lam, c, sigma = model.lam, model.c, model.sigma
    out = []
    cum_lam, cum_var = 0.0, 0.0
    for k in range(3):
        cum_lam += lam[k]
        cum_var += sigma[k] ** 2
        out.append(2.0 * (c[k] - cum_lam) / cum_var)
    return tuple(out)


def plan_sim_config(manifest: RunManifest, report: KernelReport | None) -> SimConfig:
    """Materialize the level sets the simulation must count, from the predictions.

    Pair levels sit at predicted quantiles of the pair's lighter-tailed
    member (largest alpha), so the conservative denominator keeps roughly
    (1-q) of the window's mass at every level.  Triple thresholds are
    per-node predicted quantiles.  All of these are spliced into the node
    ccdf grids so their marginal masses stay recoverable.
    """
    if report is None:
        alphas = _fallback_alphas(manifest.model)
    else:
        alphas = tuple(p.alpha for p in report.predictions)
    pair_levels = []
    for i, j in PAIRS:
        light = max((i, j), key=lambda n: alphas[n - 1])
        levels = tuple(
            quantile_thresholds((alphas[light - 1],), q)[0]
            for q in manifest.fit.pair_quantiles
            if q > 0.0
        )
        pair_levels.append(levels)
    triple_rows = tuple(
        quantile_thresholds(alphas, q) for q in manifest.fit.triple_quantiles
    )
    extra = [set(), set(), set()]
    for (i, j), levels in zip(PAIRS, pair_levels):
        extra[i - 1].update(levels)
        extra[j - 1].update(levels)
    for row in triple_rows:
        for n in range(3):
            extra[n].add(row[n])
    grids = default_ccdf_grids(
        alphas,
        points=manifest.fit.ccdf_points,
        depth=manifest.fit.ccdf_depth,
        extra_levels=tuple(tuple(sorted(s)) for s in extra),
    )
    if report is None:
        weights = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    else:
        z0, _ = report.boundary_point
        weights = ((0.0, 0.0, 0.0), (0.0, 0.0, z0), (0.0, 0.0, 0.0))
    return SimConfig(
        ccdf_grid=grids,
        dt=manifest.sim.dt,
        horizon=manifest.sim.horizon,
        burn_in=manifest.sim.burn_in,
        seed=manifest.sim.seed,
        replicas=manifest.sim.replicas,
        pair_levels=tuple(pair_levels),
        triple_thresholds=triple_rows,
        boundary_weights=weights,
        workers=manifest.sim.workers,
    )
