"""Run configuration, command line, persistence and reports.

Configuration files are INI text with four sections::

    [domain]
    lengths = pi            ; comma separated, one per axis; "pi" and "2*pi" allowed
    modes = 32

    [parameters]
    d1 = 1.0                ; ... d2 d3 D1 D2 D3 a b k lam N

    [integrator]
    dt = 0.01
    scheme = if_rk2
    t_end = 50
    sample_every = 10
    adaptive = true

    [analysis]
    seed = 0
    ensemble = 1
    initial = random        ; random | modes | checkpoint
    rho = 10
    init_modes = u 1 0.5; w 2 -0.1
    checkpoint =
    tail_fraction = 0.4
    m_max = 24
    qstar = 1.0
    out = out

Missing keys take the defaults of :class:`RunConfig`.
"""
from __future__ import annotations

import argparse
import configparser
import difflib
import hashlib
import json
import logging
import math
import os
import struct
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import mpmath
import numpy as np

from . import bounds as bd
from . import tangent as tg
from .integrate import OBSERVABLES, IntegratorConfig, Trajectory, random_initial_state, simulate
from .model import COMPONENTS, PRIMARY_FIELDS, Parameters
from .spectral import DomainSpec, ModalState, SineBasis, build_basis, embedding_constants

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0.0"
CSV_HEADER = "t," + ",".join(OBSERVABLES)
COMMANDS = ("simulate", "verify-bounds", "residuals", "lyapunov", "dim-bound", "sweep",
            "constants")
INITIAL_KINDS = ("random", "modes", "checkpoint")

SECTIONS = {
    "domain": ("lengths", "modes"),
    "parameters": PRIMARY_FIELDS,
    "integrator": ("dt", "scheme", "t_end", "sample_every", "adaptive", "tol", "max_halvings"),
    "analysis": ("seed", "ensemble", "initial", "rho", "init_modes", "checkpoint",
                 "tail_fraction", "m_max", "qstar", "out", "store_every", "renorm_every",
                 "discard", "sample_budget", "sweep_param", "sweep_values"),
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class RunConfig:
    domain: DomainSpec = field(default_factory=lambda: DomainSpec((math.pi,)))
    parameters: Parameters = field(default_factory=Parameters)
    modes: int = 32
    integrator: IntegratorConfig = field(
        default_factory=lambda: IntegratorConfig(dt=0.01, t_end=50.0, sample_every=10,
                                                 adaptive=True))
    seed: int = 0
    ensemble: int = 1
    initial: str = "random"
    rho: float = 10.0
    init_modes: tuple = ()
    checkpoint: str = ""
    tail_fraction: float = 0.4
    m_max: int = 24
    qstar: float = 1.0
    out: str = "out"
    store_every: int = 1
    renorm_every: int = 10
    discard: float = 0.2
    sample_budget: int = 1000
    sweep_param: str = "b"
    sweep_values: tuple = (1.0, 2.0, 3.0)

    def replace(self, **changes) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return RunConfig(**values)


# ---------------------------------------------------------------------------
# parsing


def _parse_length(token: str) -> float:
    t = token.strip().replace(" ", "")
    if t.endswith("pi"):
        head = t[:-2].rstrip("*")
        return (float(head) if head else 1.0) * math.pi
    return float(t)


def _format_length(x: float) -> str:
    k = round(x / math.pi)
    if k >= 1 and k * math.pi == x:
        return "pi" if k == 1 else f"{k}*pi"
    return repr(x)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_modes(text: str) -> tuple:
    entries = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if not parts:
            continue
        if len(parts) < 3 or parts[0] not in COMPONENTS:
            raise ValueError(f"mode entry {chunk.strip()!r} is not 'component j1 [j2 j3] value'")
        entries.append((parts[0], tuple(int(p) for p in parts[1:-1]), float(parts[-1])))
    return tuple(entries)


def _format_modes(entries) -> str:
    return "; ".join(f"{c} {' '.join(map(str, j))} {v!r}" for c, j, v in entries)


def parse_config(text: str) -> RunConfig:
    """Parse and validate INI text; raises ConfigError listing all problems."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    errors = []
    for sec in cp.sections():
        if sec not in SECTIONS:
            near = difflib.get_close_matches(sec, SECTIONS, n=1)
            hint = f" (did you mean [{near[0]}]?)" if near else ""
            errors.append(f"unknown section [{sec}]{hint}")
            continue
        keys = SECTIONS[sec] + (("lambda",) if sec == "parameters" else ())
        for key in cp[sec]:
            if key not in keys:
                near = difflib.get_close_matches(key, keys, n=1, cutoff=0.4)
                hint = f"; nearest valid key is '{near[0]}'" if near else ""
                errors.append(f"unknown key '{key}' in [{sec}]{hint}")

    def get(sec, key, conv, default):
        if not cp.has_section(sec) or key not in cp[sec]:
            return default
        raw = cp[sec][key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            errors.append(f"[{sec}] {key} = {raw!r}: {exc}")
            return default

    d = RunConfig()
    lengths = get("domain", "lengths",
                  lambda s: tuple(_parse_length(t) for t in s.split(",") if t.strip()),
                  d.domain.lengths)
    modes = get("domain", "modes", int, d.modes)
    if modes < 1:
        errors.append(f"[domain] modes must be >= 1, got {modes}")
    try:
        domain = DomainSpec(lengths)
    except ValueError as exc:
        errors.append(f"[domain] lengths: {exc}")
        domain = d.domain

    prm_values = {}
    for name in PRIMARY_FIELDS:
        alias = "lambda" if name == "lam" else name
        val = get("parameters", name, float, getattr(d.parameters, name))
        val = get("parameters", alias, float, val) if alias != name else val
        if not (math.isfinite(val) and val > 0):
            errors.append(f"[parameters] {name} = {val!r}: every coefficient of the model "
                          f"must be a strictly positive number")
        prm_values[name] = val
    try:
        prm = Parameters(**prm_values)
    except ValueError:
        prm = d.parameters

    di = d.integrator
    integ = {
        "dt": get("integrator", "dt", float, di.dt),
        "scheme": get("integrator", "scheme", str.strip, di.scheme),
        "t_end": get("integrator", "t_end", float, di.t_end),
        "sample_every": get("integrator", "sample_every", int, di.sample_every),
        "adaptive": get("integrator", "adaptive", _parse_bool, di.adaptive),
        "tol": get("integrator", "tol", float, di.tol),
        "max_halvings": get("integrator", "max_halvings", int, di.max_halvings),
    }
    try:
        integrator = IntegratorConfig(**integ)
    except ValueError as exc:
        errors.extend(f"[integrator] {e}" for e in str(exc).split("; "))
        integrator = di

    a = {
        "seed": get("analysis", "seed", int, d.seed),
        "ensemble": get("analysis", "ensemble", int, d.ensemble),
        "initial": get("analysis", "initial", str.strip, d.initial),
        "rho": get("analysis", "rho", float, d.rho),
        "init_modes": get("analysis", "init_modes", _parse_modes, d.init_modes),
        "checkpoint": get("analysis", "checkpoint", str.strip, d.checkpoint),
        "tail_fraction": get("analysis", "tail_fraction", float, d.tail_fraction),
        "m_max": get("analysis", "m_max", int, d.m_max),
        "qstar": get("analysis", "qstar", float, d.qstar),
        "out": get("analysis", "out", str.strip, d.out),
        "store_every": get("analysis", "store_every", int, d.store_every),
        "renorm_every": get("analysis", "renorm_every", int, d.renorm_every),
        "discard": get("analysis", "discard", float, d.discard),
        "sample_budget": get("analysis", "sample_budget", int, d.sample_budget),
        "sweep_param": get("analysis", "sweep_param", str.strip, d.sweep_param),
        "sweep_values": get("analysis", "sweep_values",
                            lambda s: tuple(float(t) for t in s.split(",") if t.strip()),
                            d.sweep_values),
    }
    errors.extend(_check_analysis(a))
    if errors:
        raise ConfigError(errors)
    return RunConfig(domain=domain, parameters=prm, modes=modes, integrator=integrator, **a)


def _check_analysis(a: dict) -> list:
    errors = []
    if not 0 <= a["seed"] < 2**64:
        errors.append(f"[analysis] seed must be an unsigned 64-bit integer, got {a['seed']}")
    for key in ("ensemble", "m_max", "store_every", "renorm_every"):
        if a[key] < 1:
            errors.append(f"[analysis] {key} must be >= 1, got {a[key]}")
    if a["initial"] not in INITIAL_KINDS:
        errors.append(f"[analysis] initial must be one of {INITIAL_KINDS}, got {a['initial']!r}")
    if a["initial"] == "modes" and not a["init_modes"]:
        errors.append("[analysis] initial = modes needs a nonempty init_modes list")
    if a["initial"] == "checkpoint" and not a["checkpoint"]:
        errors.append("[analysis] initial = checkpoint needs a checkpoint path")
    if not a["rho"] > 0:
        errors.append(f"[analysis] rho must be positive, got {a['rho']}")
    if not 0 < a["tail_fraction"] <= 1:
        errors.append(f"[analysis] tail_fraction must lie in (0, 1], got {a['tail_fraction']}")
    if not a["qstar"] > 0:
        errors.append(f"[analysis] qstar must be positive, got {a['qstar']}")
    if not 0 <= a["discard"] < 1:
        errors.append(f"[analysis] discard must lie in [0, 1), got {a['discard']}")
    if a["sample_budget"] < 1000:
        errors.append(f"[analysis] sample_budget must be >= 1000, got {a['sample_budget']}")
    if a["sweep_param"] not in PRIMARY_FIELDS:
        near = difflib.get_close_matches(a["sweep_param"], PRIMARY_FIELDS, n=1)
        hint = f" (nearest: '{near[0]}')" if near else ""
        errors.append(f"[analysis] sweep_param {a['sweep_param']!r} is not a parameter{hint}")
    return errors


def emit_config(cfg: RunConfig) -> str:
    """INI text that parses back to an equal RunConfig."""
    ic = cfg.integrator
    lines = ["[domain]",
             "lengths = " + ", ".join(_format_length(x) for x in cfg.domain.lengths),
             f"modes = {cfg.modes}", "", "[parameters]"]
    lines += [f"{name} = {getattr(cfg.parameters, name)!r}" for name in PRIMARY_FIELDS]
    lines += ["", "[integrator]", f"dt = {ic.dt!r}", f"scheme = {ic.scheme}",
              f"t_end = {ic.t_end!r}", f"sample_every = {ic.sample_every}",
              f"adaptive = {str(ic.adaptive).lower()}", f"tol = {ic.tol!r}",
              f"max_halvings = {ic.max_halvings}", "", "[analysis]"]
    for key in SECTIONS["analysis"]:
        val = getattr(cfg, key)
        if key == "init_modes":
            text = _format_modes(val)
        elif key == "sweep_values":
            text = ", ".join(repr(float(v)) for v in val)
        else:
            text = repr(val) if isinstance(val, float) else str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Hash of everything that affects results (the output directory does not)."""
    return hashlib.sha256(emit_config(cfg.replace(out="")).encode()).hexdigest()[:16]


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# checkpoints
#
# little-endian layout:
#   8s  magic b"BRSLCKPT"
#   u32 version, u32 n, u32 M
#   n * f64 lengths
#   f64 t
#   u64 count (= 6 * M**n)
#   count * f64 coefficients, component-major

MAGIC = b"BRSLCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_save(ms: ModalState, basis: SineBasis, path) -> None:
    """Write ``ms`` atomically (temporary file, then rename)."""
    coeffs = np.ascontiguousarray(ms.coeffs, dtype="<f8")
    if coeffs.shape != (6, basis.size):
        raise CheckpointError(f"state shape {coeffs.shape} does not match basis {basis!r}")
    if not np.all(np.isfinite(coeffs)):
        raise CheckpointError("refusing to save a non-finite state")
    n = basis.n
    head = struct.pack(f"<8sIII{n}dd Q".replace(" ", ""), MAGIC, CHECKPOINT_VERSION, n,
                       basis.M, *basis.domain.lengths, float(ms.t), coeffs.size)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(head)
            fh.write(coeffs.tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def checkpoint_read(path):
    """Return ``(descriptor, ModalState)`` from a checkpoint file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    fixed = struct.calcsize("<8sIII")
    if len(data) < fixed:
        raise CheckpointError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, n, M = struct.unpack_from("<8sIII", data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    if not 1 <= n <= 3:
        raise CheckpointError(f"{path}: invalid dimension {n}")
    rest = f"<{n}ddQ"
    if len(data) < fixed + struct.calcsize(rest):
        raise CheckpointError(f"{path}: truncated header")
    *lengths, t, count = struct.unpack_from(rest, data, fixed)
    offset = fixed + struct.calcsize(rest)
    if count != 6 * M**n:
        raise CheckpointError(f"{path}: coefficient count {count} inconsistent with n={n}, M={M}")
    if len(data) != offset + 8 * count:
        raise CheckpointError(f"{path}: truncated or oversized payload "
                              f"({len(data) - offset} bytes, expected {8 * count})")
    coeffs = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(float)
    desc = {"n": n, "M": M, "lengths": [float(x) for x in lengths]}
    return desc, ModalState(coeffs.reshape(6, M**n), t)


def checkpoint_load(path, basis: SineBasis | None = None) -> ModalState:
    """Load a checkpoint; with ``basis`` the stored descriptor must match it."""
    desc, ms = checkpoint_read(path)
    if basis is not None and desc != basis.descriptor():
        raise CheckpointError(f"{path}: checkpoint basis {desc} does not match requested "
                              f"basis {basis.descriptor()}")
    return ms


# ---------------------------------------------------------------------------
# CSV, JSON, SVG


def write_csv(path, traj: Trajectory | None, comment: str | None = None) -> None:
    """Trajectory observables, one row per sample, full double precision."""
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append(CSV_HEADER)
    if traj is not None and len(traj):
        for row in traj.table():
            lines.append(",".join(repr(float(x)) for x in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    """``(table, comment)``; ``table`` has shape ``(rows, 10)``."""
    comment = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comment = line[1:].strip()
        elif line == CSV_HEADER:
            continue
        elif line:
            rows.append([float(x) for x in line.split(",")])
    return np.array(rows).reshape(-1, len(OBSERVABLES) + 1), comment


@dataclass
class Report:
    """Everything a command produced, serializable to JSON and back."""

    command: str
    config: str
    config_hash: str
    seed: int
    bounds: bd.BoundSet | None = None
    embedding: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    lyapunov: dict = field(default_factory=dict)
    dimension: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(v.passed for run in self.verdicts for v in run)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "command": self.command,
                "config": self.config, "config_hash": self.config_hash, "seed": self.seed,
                "bounds": None if self.bounds is None else self.bounds.to_dict(),
                "embedding": self.embedding,
                "verdicts": [[v.to_dict() for v in run] for run in self.verdicts],
                "residuals": self.residuals, "lyapunov": self.lyapunov,
                "dimension": self.dimension, "sweep": self.sweep, "runtime": self.runtime}

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(command=d["command"], config=d["config"], config_hash=d["config_hash"],
                   seed=d["seed"],
                   bounds=None if d["bounds"] is None else bd.BoundSet.from_dict(d["bounds"]),
                   embedding=d["embedding"],
                   verdicts=[[bd.BoundVerdict.from_dict(v) for v in run]
                             for run in d["verdicts"]],
                   residuals=d["residuals"], lyapunov=d["lyapunov"], dimension=d["dimension"],
                   sweep=d["sweep"], runtime=d["runtime"], schema_version=d["schema_version"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def write_json(path, report: Report) -> None:
    try:
        Path(path).write_text(report.to_json() + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def svg_plot(traj: Trajectory, verdicts=(), width: int = 640, panel: int = 110) -> str:
    """Stacked log-scale panels: one polyline per observable, one line per verdict.

    Bounds above the plotted range (or infinite) are drawn at the panel top
    and labelled with their log10 value.
    """
    by_obs = {}
    for v in verdicts:
        by_obs.setdefault(v.observable, []).append(v)
    names = list(OBSERVABLES)
    height = panel * len(names) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="monospace" font-size="10">']
    t = traj.times
    t_span = max(t[-1] - t[0], 1e-300)
    left, right = 70, width - 10
    for i, name in enumerate(names):
        y0 = 10 + i * panel
        top, bottom = y0 + 12, y0 + panel - 12
        y = np.maximum(traj.observable(name), 1e-300)
        lo = math.log10(max(float(np.min(y)), 1e-12))
        hi = math.log10(max(float(np.max(y)), 1e-12))
        finite_bounds = [v.bound for v in by_obs.get(name, [])
                         if math.isfinite(v.bound) and v.bound > 0]
        if finite_bounds:
            hi = max(hi, min(math.log10(b) for b in finite_bounds))
        if hi - lo < 1e-6:
            lo, hi = lo - 0.5, hi + 0.5

        def ypix(val):
            ly = math.log10(max(val, 1e-300))
            ly = min(max(ly, lo), hi)
            return bottom - (ly - lo) / (hi - lo) * (bottom - top)

        out.append(f'<rect x="{left}" y="{top}" width="{right - left}" '
                   f'height="{bottom - top}" fill="none" stroke="#999"/>')
        out.append(f'<text x="2" y="{top + 10}">{name}</text>')
        out.append(f'<text x="2" y="{bottom}">1e{lo:.2f}</text>')
        pts = " ".join(f"{left + (tt - t[0]) / t_span * (right - left):.2f},{ypix(v):.2f}"
                       for tt, v in zip(t, y))
        out.append(f'<polyline class="observable" data-name="{name}" fill="none" '
                   f'stroke="#1f77b4" points="{pts}"/>')
        for v in by_obs.get(name, []):
            if math.isfinite(v.bound) and v.bound > 0:
                yy, label = ypix(v.bound), f"{v.name} = {v.bound:.4g}"
            else:
                yy, label = top, f"{v.name}: log10 = {v.log_bound}"
            colour = "#2ca02c" if v.passed else "#d62728"
            out.append(f'<line class="bound" data-name="{v.name}" x1="{left}" y1="{yy:.2f}" '
                       f'x2="{right}" y2="{yy:.2f}" stroke="{colour}" stroke-dasharray="4 2"/>')
            out.append(f'<text x="{left + 4}" y="{yy - 2:.2f}" fill="{colour}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# orchestration


def initial_states(cfg: RunConfig, basis: SineBasis) -> list:
    """Initial data for each ensemble member."""
    if cfg.initial == "checkpoint":
        ms = checkpoint_load(cfg.checkpoint, basis)
        return [ms] * cfg.ensemble
    if cfg.initial == "modes":
        q = np.zeros((6, basis.size))
        index = {tuple(int(x) for x in w): i for i, w in enumerate(basis.wavenumbers)}
        for comp, j, val in cfg.init_modes:
            if j not in index:
                raise ConfigError([f"[analysis] init_modes: mode {j} is not in the basis "
                                   f"(n={basis.n}, M={basis.M})"])
            q[COMPONENTS.index(comp), index[j]] += val
        return [ModalState(q)] * cfg.ensemble
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.ensemble)
    return [random_initial_state(basis, cfg.rho, np.random.default_rng(s)) for s in seeds]


def _threads() -> int:
    raw = os.environ.get("BRUSSELATOR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring BRUSSELATOR_THREADS=%r (not an integer)", raw)
        return 1


def _member(args):
    g0, domain, M, prm, integ, store_every = args
    basis = build_basis(domain, M)
    return simulate(g0, basis, prm, integ, store_every)


def run_ensemble(cfg: RunConfig, basis: SineBasis, prm: Parameters | None = None,
                 store_every: int | None = None) -> list:
    """Simulate every ensemble member, in a process pool when allowed."""
    prm = prm or cfg.parameters
    jobs = [(g0, cfg.domain, cfg.modes, prm, cfg.integrator, store_every)
            for g0 in initial_states(cfg, basis)]
    workers = min(_threads(), len(jobs))
    if workers <= 1:
        return [simulate(g0, basis, prm, cfg.integrator, store_every) for g0, *_ in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_member, jobs))


def _bound_set(cfg: RunConfig, basis: SineBasis, prm: Parameters | None = None):
    emb = embedding_constants(basis, cfg.sample_budget, cfg.seed % 2**32)
    bs = bd.bound_set_for_basis(prm or cfg.parameters, basis, emb)
    info = {"delta": emb.delta, "eta": emb.eta, "C_gn": emb.C_gn,
            "sample_budget": emb.sample_budget, "seed": emb.seed,
            "note": "suprema over the Galerkin space; lower witnesses of the true constants"}
    return bs, emb, info


def _parse_scale(specs) -> dict:
    out = {}
    for spec in specs or ():
        name, _, factor = spec.partition("=")
        try:
            out[name.strip()] = float(factor)
        except ValueError:
            raise ConfigError([f"--scale-bound expects NAME=FACTOR, got {spec!r}"]) from None
    return out


def run(cmd: str, cfg: RunConfig, scale_bounds: dict | None = None, plot: bool = False,
        echo=print) -> tuple:
    """Execute one command; returns ``(exit_status, Report)``.

    Artifacts are written to ``cfg.out``.
    """
    if cmd not in COMMANDS:
        raise ValueError(f"unknown command {cmd!r}; choose from {COMMANDS}")
    started = time.time()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    stamp = f"seed={cfg.seed} config_hash={chash}"
    report = Report(cmd, emit_config(cfg), chash, cfg.seed)
    basis = build_basis(cfg.domain, cfg.modes)
    status = 0

    if cmd == "constants":
        bs, _, report.embedding = _bound_set(cfg, basis)
        report.bounds = bs
        for name, c in bs.constants.items():
            value = f"{c.value!r}" if math.isfinite(c.value) else f"exp({mpmath.nstr(c.log, 8)})"
            echo(f"{name:>4} = {value}")

    elif cmd == "simulate":
        trajs = run_ensemble(cfg, basis)
        for i, tr in enumerate(trajs):
            write_csv(out / f"trajectory_{i:03d}.csv", tr, stamp)
            checkpoint_save(tr.final, basis, out / f"final_{i:03d}.ckpt")
        echo(f"wrote {len(trajs)} trajectories to {out}")

    elif cmd == "verify-bounds":
        bs, _, report.embedding = _bound_set(cfg, basis)
        for name, factor in (scale_bounds or {}).items():
            if name not in bs.constants:
                near = difflib.get_close_matches(name, bs.constants, n=1)
                raise ConfigError([f"--scale-bound: unknown bound {name!r}"
                                   + (f" (nearest: {near[0]})" if near else "")])
            bs = bs.scaled(name, factor)
        report.bounds = bs
        trajs = run_ensemble(cfg, basis)
        rows = ["run,name,observable,t_tail,t_end,observed,bound,margin,passed"]
        for i, tr in enumerate(trajs):
            verdicts = bd.verify_absorption(tr, bs, cfg.tail_fraction)
            verdicts.append(bd.envelope_verdict(tr, cfg.parameters, basis.gamma, basis.volume))
            report.verdicts.append(verdicts)
            for v in verdicts:
                rows.append(f"{i},{v.name},{v.observable},{v.window[0]!r},{v.window[1]!r},"
                            f"{v.observed!r},{v.bound!r},{v.margin!r},{v.passed}")
            if plot and i == 0:
                (out / "verify_000.svg").write_text(svg_plot(tr, verdicts))
        (out / "verdicts.csv").write_text(f"# {stamp}\n" + "\n".join(rows) + "\n")
        failed = [(i, v.name) for i, run_v in enumerate(report.verdicts) for v in run_v
                  if not v.passed]
        status = 1 if failed else 0
        echo(f"{sum(len(r) for r in report.verdicts) - len(failed)} verdicts passed, "
             f"{len(failed)} failed" + (f": {failed[:10]}" if failed else ""))

    elif cmd == "residuals":
        bs, _, report.embedding = _bound_set(cfg, basis)
        trajs = run_ensemble(cfg, basis, store_every=cfg.store_every)
        for i, tr in enumerate(trajs):
            rr = bd.inequality_residuals(tr, basis, cfg.parameters, bs)
            report.residuals.append(rr.summary())
            if not rr.all_passed:
                status = 1
            echo(f"run {i}: " + ", ".join(f"{k} {'ok' if v['passed'] else 'FAIL'} "
                                          f"({v['max_excess']:.3g})"
                                          for k, v in rr.summary().items()))

    elif cmd == "lyapunov":
        trajs = run_ensemble(cfg, basis)
        res = tg.qm_average([tr.final for tr in trajs], basis, cfg.parameters, cfg.integrator,
                            cfg.m_max, cfg.renorm_every, cfg.discard, cfg.seed % 2**32)
        report.lyapunov = res.to_dict()
        lines = ["m," + ",".join(f"run_{i}" for i in range(len(trajs))) + ",qm"]
        for m in range(cfg.m_max):
            lines.append(f"{m + 1}," + ",".join(repr(float(x)) for x in res.per_run[:, m])
                         + f",{float(res.qm[m])!r}")
        (out / "qm.csv").write_text(f"# {stamp}\n" + "\n".join(lines) + "\n")
        echo(f"leading exponents {np.round(res.reports[0].exponents[:4], 6).tolist()}, "
             f"m* = {res.m_star}")

    elif cmd == "dim-bound":
        bs, emb, report.embedding = _bound_set(cfg, basis)
        report.bounds = bs
        db = tg.analytic_dimension_bound(cfg.parameters, bs, cfg.qstar, C_gn=emb.C_gn)
        report.dimension = db.to_dict()
        if db.m is not None:
            echo(f"m = {db.m}: d_H <= {db.d_H}, d_F <= {db.d_F} (Q* = {cfg.qstar})")
        else:
            echo(f"m exceeds float range: log10 B = {report.dimension['log10_B']} "
                 f"(Q* = {cfg.qstar}); d_H <= m, d_F <= 2m")

    elif cmd == "sweep":
        rows = ["value," + ",".join(f"max_{o}" for o in OBSERVABLES) + ",verdicts_failed"]
        for value in cfg.sweep_values:
            prm = cfg.parameters.replace(**{cfg.sweep_param: value})
            bs, _, _ = _bound_set(cfg, basis, prm)
            trajs = run_ensemble(cfg, basis, prm)
            maxima = {}
            failed = 0
            for tr in trajs:
                _, _, mask = bd._tail(tr, cfg.tail_fraction)
                for o in OBSERVABLES:
                    maxima[o] = max(maxima.get(o, -math.inf), float(np.max(tr.observable(o)[mask])))
                failed += sum(not v.passed for v in bd.verify_absorption(tr, bs, cfg.tail_fraction))
            report.sweep.append({"param": cfg.sweep_param, "value": value,
                                 "tail_max": maxima, "verdicts_failed": failed})
            rows.append(f"{value!r}," + ",".join(repr(maxima[o]) for o in OBSERVABLES)
                        + f",{failed}")
            echo(f"{cfg.sweep_param} = {value!r}: {failed} failing verdicts")
        (out / "sweep.csv").write_text(f"# {stamp}\n" + "\n".join(rows) + "\n")

    report.runtime = {"seconds": time.time() - started, "threads": _threads(),
                      "command": cmd}
    write_json(out / f"{cmd}.json", report)
    return status, report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brusselator",
                                 description="Six-component Brusselator: simulation, "
                                             "absorbing-set bounds and dimension estimates.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--modes", type=int, help="sine modes per axis")
    ap.add_argument("--t-end", type=float, help="integration time")
    ap.add_argument("--ensemble", type=int, help="number of initial states")
    ap.add_argument("--qstar", type=float, help="Sobolev-Lieb-Thirring constant Q*")
    ap.add_argument("--scale-bound", action="append", metavar="NAME=FACTOR",
                    help="multiply one bound (negative control); repeatable")
    ap.add_argument("--plot", action="store_true", help="write an SVG of the first run")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        changes = {k: v for k, v in (("seed", args.seed), ("out", args.out),
                                     ("modes", args.modes), ("ensemble", args.ensemble),
                                     ("qstar", args.qstar)) if v is not None}
        if args.t_end is not None:
            ic = cfg.integrator
            changes["integrator"] = IntegratorConfig(ic.dt, ic.scheme, args.t_end,
                                                     ic.sample_every, ic.adaptive, ic.tol,
                                                     ic.max_halvings)
        if changes:
            cfg = parse_config(emit_config(cfg.replace(**changes)))
        status, _ = run(args.command, cfg, _parse_scale(args.scale_bound), args.plot)
        return status
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error [{type(exc).__module__}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
