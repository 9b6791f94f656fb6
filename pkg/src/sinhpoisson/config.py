"""Experiment configuration: a TOML file parsed into plain dataclasses.

Grammar (all tables optional unless noted)::

    seed = 0                        # recorded in every report
    eps = [1e-2, 3.1622776601683795e-3, 1e-3]   # required
    resolution = [64, 128]          # n_r, n_theta
    grading = 3.0                   # radial clustering toward the centre
    out = "runs/demo"

    [domain]                        # required
    kind = "disk"                   # disk | unit-disk | ellipse | star
    params = [5.0]
    center = [0.0, 0.0]

    [anisotropy]
    kind = "gaussian"               # constant | gaussian | cosine
    amplitude = 1.0
    width = 1.0

    [spikes]                        # required
    alpha = 0.5
    m = 1
    l = 1                           # interior spikes; the other m - l sit on the boundary
    signs = [1, -1]                 # b_0 (the q spike) then b_1 .. b_m
    mode = "sinh"                   # sinh | exp
    q = [0.0, 0.0]
    q_location = "interior"
    d = 1.0
    points = [[0.2, 0.0]]           # optional; default is the starting configuration per eps

    [norm]                          # overrides of alpha_hat, sigma, p, beta

    [optimizer]                     # max_iter, xatol, frtol, sigma_tilde

    [newton]                        # max_iter, rtol
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .geometry import DomainSpec, GeometryError, parse_domain
from .green import AnisotropyField
from .profiles import NormParams, SpikeConfig, excluded_p
from .reduction import initial_configuration


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> int | None:
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith(key) and s[len(key):].lstrip().startswith("="):
            return n
        if s == f"[{key}]":
            return n
    return None


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    anisotropy: AnisotropyField
    alpha: float
    m: int
    l: int
    signs: tuple
    mode: str
    q: tuple
    q_location: str
    d: float
    eps: list
    resolution: tuple = (64, 128)
    grading: float = 3.0
    points: np.ndarray | None = None
    norm: NormParams | None = None
    optimizer: dict = field(default_factory=dict)
    newton: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0
    source_text: str = ""

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]

    def norm_params(self) -> NormParams:
        return self.norm or NormParams.default(self.alpha)

    def spike_config(self, eps: float, points=None) -> SpikeConfig:
        if points is None:
            points = self.points if self.points is not None else initial_configuration(
                self.domain, self.q, self.q_location, eps, self.m, self.l,
                self.optimizer.get("sigma_tilde", 0.5))
        return SpikeConfig(eps, self.alpha, np.asarray(points, dtype=float).reshape(-1, 2), self.signs, l=self.l,
                           mode=self.mode, q=self.q, q_location=self.q_location, d=self.d)


def _get(tbl: dict, key: str, kind, default=..., where=""):
    if key not in tbl:
        if default is ...:
            raise ConfigError(f"{where}{key}: missing required field")
        return default
    v = tbl[key]
    try:
        if kind is float:
            if isinstance(v, bool):
                raise TypeError
            return float(v)
        if kind is int:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        if kind is str:
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind is list:
            if not isinstance(v, list):
                raise TypeError
            return v
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key}: expected {kind.__name__}, got {v!r}") from None
    return v


def parse_config(text: str, resolution: tuple | None = None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}") from None

    def fail(msg, key):
        n = _line_of(text, key)
        raise ConfigError(f"line {n}: {msg}" if n else msg)

    known = {"seed", "eps", "resolution", "grading", "out", "domain", "anisotropy", "spikes", "norm",
             "optimizer", "newton"}
    for k in raw:
        if k not in known:
            fail(f"unknown field {k!r}", k)

    dom = raw.get("domain")
    if not isinstance(dom, dict):
        raise ConfigError("[domain]: missing required table")
    try:
        domain = parse_domain(_get(dom, "kind", str, where="domain."),
                              [float(v) for v in _get(dom, "params", list, [], "domain.")],
                              tuple(_get(dom, "center", list, [0.0, 0.0], "domain.")))
    except (GeometryError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        fail(f"domain: {exc}", "kind")

    sp = raw.get("spikes")
    if not isinstance(sp, dict):
        raise ConfigError("[spikes]: missing required table")
    alpha = _get(sp, "alpha", float, where="spikes.")
    if alpha <= -1:
        fail("spikes.alpha: alpha must exceed -1", "alpha")
    if float(alpha).is_integer():
        fail("spikes.alpha: alpha must be non-integer", "alpha")
    m = _get(sp, "m", int, 0, "spikes.")
    l = _get(sp, "l", int, m, "spikes.")
    if m < 0 or not 0 <= l <= m:
        fail("spikes: need m >= 0 and 0 <= l <= m", "m")
    signs = tuple(int(s) for s in _get(sp, "signs", list, [1], "spikes."))
    if len(signs) == 1:
        signs = signs * (m + 1)
    if len(signs) != m + 1 or any(s not in (-1, 1) for s in signs):
        fail("spikes.signs: need m+1 entries in {-1, 1}", "signs")
    mode = _get(sp, "mode", str, "sinh", "spikes.")
    if mode not in ("sinh", "exp"):
        fail(f"spikes.mode: unknown mode {mode!r}", "mode")
    if mode == "exp" and any(s != 1 for s in signs):
        fail("spikes.signs: exp mode needs all signs +1", "signs")
    q = tuple(float(v) for v in _get(sp, "q", list, [0.0, 0.0], "spikes."))
    q_location = _get(sp, "q_location", str, "interior", "spikes.")
    if q_location not in ("interior", "boundary"):
        fail("spikes.q_location: interior or boundary", "q_location")
    d = _get(sp, "d", float, 0.05, "spikes.")
    if d <= 0:
        fail("spikes.d: must be positive", "d")
    points = None
    if "points" in sp:
        points = np.asarray(sp["points"], dtype=float).reshape(-1, 2)
        if len(points) != m:
            fail("spikes.points: need m points", "points")

    an = raw.get("anisotropy", {})
    try:
        aniso = AnisotropyField(_get(an, "kind", str, "constant", "anisotropy."),
                                _get(an, "amplitude", float, 1.0, "anisotropy."),
                                _get(an, "width", float, 1.0, "anisotropy."), q=q, location=q_location)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail(f"anisotropy: {exc}", "anisotropy")

    eps = [float(e) for e in _get(raw, "eps", list)]
    if not eps or any(not (0 < e < 1) for e in eps):
        fail("eps: need values in (0, 1)", "eps")

    norm = None
    if "norm" in raw:
        base = NormParams.default(alpha)
        nt = raw["norm"]
        norm = NormParams(alpha_hat=_get(nt, "alpha_hat", float, base.alpha_hat, "norm."),
                          sigma=_get(nt, "sigma", float, base.sigma, "norm."),
                          p=_get(nt, "p", float, base.p, "norm."),
                          beta=_get(nt, "beta", float, base.beta, "norm."))
        if any(abs(norm.p - e) < 1e-9 for e in excluded_p(alpha)):
            fail(f"norm.p: p = {norm.p} is excluded for alpha = {alpha}", "p")
        try:
            norm.validate(alpha)
        except ValueError as exc:
            fail(f"norm: {exc}", "norm")

    res = resolution or tuple(_get(raw, "resolution", list, [64, 128]))
    if len(res) != 2:
        fail("resolution: need [n_r, n_theta]", "resolution")
    res = (int(res[0]), int(res[1]))
    if res[0] < 16 or res[1] < 32 or res[1] % 2:
        fail("resolution: need n_r >= 16 and an even n_theta >= 32", "resolution")
    grading = _get(raw, "grading", float, 3.0)
    if not math.isfinite(grading) or grading < 0:
        fail("grading: must be >= 0", "grading")

    return ExperimentConfig(
        domain=domain, anisotropy=aniso, alpha=alpha, m=m, l=l, signs=signs, mode=mode, q=q,
        q_location=q_location, d=d, eps=eps, resolution=res, grading=grading, points=points, norm=norm,
        optimizer=dict(raw.get("optimizer", {})), newton=dict(raw.get("newton", {})),
        out=_get(raw, "out", str, "out"), seed=_get(raw, "seed", int, 0), source_text=text,
    )


def load_config(path, resolution: tuple | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, resolution)
