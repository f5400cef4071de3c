"""INI-style run configuration.

Every section and key is optional; missing values fall back to the
built-in defaults. Example::

    [model]
    n_tokens = 64
    channels = 32
    context_tokens = 8
    n_blocks = 4
    timesteps = 20
    weight_seed = 0
    noise_seed = 0
    prompt_seed = 0

    [noise]
    kind = cosine            ; cosine | ddpm_cosine
    sigma_scale = 0.0

    [selection]
    w_alpha = 1.0
    w_beta = 1.0
    delta_metric = abs       ; abs | squared

    [run]
    mode = astraea           ; full | astraea | timestep | fixed
    theta = 0.5              ; uniform budget, or
    schedule = best.txt      ; a schedule file, relative to this config

    [search]
    population_size = 50
    elite_count = 10
    offspring_per_gen = 50
    max_generations = 10
    p0 = 0.1
    p_final = 0.01
    budget = 0.5             ; mean theta over searchable steps
    prompt_seeds = 0, 1, 2, 3
    seed = 0

    [sweep]
    prompt_seeds = 0, 1

    [output]
    dir = out
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .diffusion import ModelConfig, NoiseSchedule, RunMode, Schedule
from .errors import ConfigError, DomainError
from .formats import read_schedule
from .search import SearchConfig
from .selection import SelectionConfig

_KNOWN = {
    "model": {"n_tokens", "channels", "context_tokens", "n_blocks", "timesteps",
              "weight_seed", "noise_seed", "prompt_seed"},
    "noise": {"kind", "sigma_scale"},
    "selection": {"w_alpha", "w_beta", "delta_metric"},
    "run": {"mode", "theta", "schedule"},
    "search": {"population_size", "elite_count", "offspring_per_gen", "max_generations",
               "p0", "p_final", "budget", "prompt_seeds", "seed"},
    "sweep": {"prompt_seeds"},
    "output": {"dir"},
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    noise_kind: str = "cosine"
    sigma_scale: float = 0.0
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    mode: RunMode = RunMode.ASTRAEA
    theta: float = 0.5
    schedule: Schedule | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    search_budget_fraction: float = 0.5
    sweep_prompts: tuple[int, ...] = (0, 1)
    out_dir: Path = Path("out")

    def noise(self) -> NoiseSchedule:
        return NoiseSchedule.from_kind(self.noise_kind, self.model.timesteps, self.sigma_scale)

    def run_schedule(self) -> Schedule:
        T = self.model.timesteps
        if self.schedule is not None:
            if len(self.schedule) != T:
                raise ConfigError(f"[run] schedule: length {len(self.schedule)} != timesteps {T}")
            return self.schedule
        try:
            return Schedule.uniform(T, self.theta)
        except DomainError as exc:
            raise ConfigError(f"[run] theta: {exc}") from None


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _build(section: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (ConfigError, DomainError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def load_config(path: str | Path | None) -> RunConfig:
    """Parse a config file; ``None`` gives the defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        base = path.parent
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")

    d = ModelConfig()
    model = _build("model", ModelConfig, **{
        k: _get(parser, "model", k, int, getattr(d, k)) for k in _KNOWN["model"]
    })
    cfg = RunConfig(model=model)
    cfg.noise_kind = _get(parser, "noise", "kind", str, cfg.noise_kind)
    cfg.sigma_scale = _get(parser, "noise", "sigma_scale", float, cfg.sigma_scale)
    if cfg.noise_kind not in ("cosine", "ddpm_cosine"):
        raise ConfigError(f"[noise] kind: unknown schedule {cfg.noise_kind!r}")
    if cfg.sigma_scale < 0:
        raise ConfigError("[noise] sigma_scale: must be >= 0")

    sd = SelectionConfig()
    cfg.selection = _build("selection", SelectionConfig,
                           w_alpha=_get(parser, "selection", "w_alpha", float, sd.w_alpha),
                           w_beta=_get(parser, "selection", "w_beta", float, sd.w_beta),
                           delta_metric=_get(parser, "selection", "delta_metric", str, sd.delta_metric))

    try:
        cfg.mode = RunMode.parse(_get(parser, "run", "mode", str, cfg.mode.value))
    except ConfigError as exc:
        raise ConfigError(f"[run] mode: {exc}") from None
    cfg.theta = _get(parser, "run", "theta", float, cfg.theta)
    if parser.has_option("run", "schedule"):
        sched_path = base / parser.get("run", "schedule")
        if not sched_path.is_file():
            raise ConfigError(f"[run] schedule: file {sched_path} does not exist")
        try:
            cfg.schedule = read_schedule(sched_path)
        except ConfigError as exc:
            raise ConfigError(f"[run] schedule: {exc}") from None
    cfg.run_schedule()

    sc = SearchConfig()
    cfg.search_budget_fraction = _get(parser, "search", "budget", float, cfg.search_budget_fraction)
    cfg.search = _build("search", SearchConfig,
                        population_size=_get(parser, "search", "population_size", int, sc.population_size),
                        elite_count=_get(parser, "search", "elite_count", int, sc.elite_count),
                        offspring_per_gen=_get(parser, "search", "offspring_per_gen", int, sc.offspring_per_gen),
                        max_generations=_get(parser, "search", "max_generations", int, sc.max_generations),
                        p0=_get(parser, "search", "p0", float, sc.p0),
                        p_final=_get(parser, "search", "p_final", float, sc.p_final),
                        budget=cfg.search_budget_fraction * (model.timesteps - 1),
                        prompt_seeds=_get(parser, "search", "prompt_seeds", _int_list, sc.prompt_seeds),
                        seed=_get(parser, "search", "seed", int, sc.seed))
    cfg.sweep_prompts = _get(parser, "sweep", "prompt_seeds", _int_list, cfg.sweep_prompts)
    if not cfg.sweep_prompts:
        raise ConfigError("[sweep] prompt_seeds: need at least one seed")
    cfg.out_dir = Path(_get(parser, "output", "dir", str, str(cfg.out_dir)))
    return cfg


def with_search_budget(cfg: RunConfig, fraction: float) -> RunConfig:
    """Set the search budget as a mean theta over the searchable steps."""
    budget = fraction * (cfg.model.timesteps - 1)
    return replace(cfg, search_budget_fraction=fraction, search=replace(cfg.search, budget=budget))
