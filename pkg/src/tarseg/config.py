"""Run configuration: every tunable in one flat record.

Files hold ``key = value`` lines; ``#`` starts a comment and blank lines are
ignored.  Keys use the field names below (dashes are accepted in place of
underscores).  Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .contrastive import DEFAULT_TAU, LAMBDA_C, LAMBDA_REC
from .glyphs import SYMBOLS
from .pyramid import ConfigError
from .synth import EvalConfig, SceneConfig
from .tar import MeanFieldConfig, RefineConfig

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # input geometry and model widths
    height: int = 48
    width: int = 160
    channels: int = 16
    hidden: int = 32
    att: int = 32
    embed: int = 16
    num_classes: int = len(SYMBOLS)
    seg_channels: int = 16
    proj_dim: int = 16
    max_steps: int = 8
    # refinement
    kernel_radius: int = 1
    iters1: int = 2
    iters2: int = 8
    sigma_floor: float = 1e-4
    include_center: bool = False
    sigma_mode: str = "window"
    threshold: float = 0.5
    guidance_level: int = 0
    rgb_only_iters: int = 10
    ensemble: str = "vote"
    # losses
    tau: float = DEFAULT_TAU
    lambda_rec: float = LAMBDA_REC
    lambda_c: float = LAMBDA_C
    include_positive: bool = False
    batch_size: int = 32
    # synthetic corpus
    scenes: int = 200
    min_glyphs: int = 1
    max_glyphs: int = 8
    contrast_floor: float = 0.3
    seed_coverage: float = 0.25
    seed_anchor: str = "ink"
    # benchmark
    repeats: int = 20
    meanfield_iters: int = 5
    meanfield_repeats: int = 5
    pos_sigma: float = 6.0
    rgb_sigma: float = 0.1
    # gradient check
    batches: int = 50
    grad_tolerance: float = 1e-4
    # reproducibility
    rng_seed: int = 0
    threads: int = 1

    def refine_config(self) -> RefineConfig:
        return RefineConfig(kernel_radius=self.kernel_radius, iters_stage1=self.iters1,
                            iters_stage2=self.iters2, sigma_floor=self.sigma_floor,
                            include_center=self.include_center, binarize_threshold=self.threshold,
                            sigma_mode=self.sigma_mode)

    def scene_config(self) -> SceneConfig:
        return SceneConfig(height=self.height, width=self.width, min_glyphs=self.min_glyphs,
                           max_glyphs=self.max_glyphs, contrast_floor=self.contrast_floor,
                           seed_coverage=self.seed_coverage, seed_anchor=self.seed_anchor)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(refine=self.refine_config(), channels=self.channels, weight_seed=self.rng_seed,
                          guidance_level=self.guidance_level, rgb_only_iters=self.rgb_only_iters)

    def meanfield_config(self) -> MeanFieldConfig:
        return MeanFieldConfig(pos_sigma=self.pos_sigma, rgb_sigma=self.rgb_sigma)

    def validate(self) -> "RunConfig":
        """Check every module precondition up front; raises ConfigError."""
        positive = ("height", "width", "channels", "hidden", "att", "embed", "seg_channels", "proj_dim",
                    "max_steps", "batch_size", "scenes", "repeats", "meanfield_repeats", "batches", "threads")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("iters1", "iters2", "rgb_only_iters", "meanfield_iters", "rng_seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.hidden % 2:
            raise ConfigError(f"hidden must be even (split across two directions), got {self.hidden}")
        if self.num_classes < 4:
            raise ConfigError("num_classes must cover the three reserved ids plus at least one symbol")
        if self.repeats < 5:
            raise ConfigError("repeats must be >= 5 for median reporting")
        if self.rng_seed >= 2 ** 64:
            raise ConfigError("rng_seed must fit in 64 bits")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.lambda_rec < 0 or self.lambda_c < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.ensemble not in ("vote", "mean"):
            raise ConfigError(f"ensemble must be 'vote' or 'mean', got {self.ensemble!r}")
        if self.grad_tolerance <= 0:
            raise ConfigError("grad_tolerance must be positive")
        if self.pos_sigma <= 0 or self.rgb_sigma <= 0:
            raise ConfigError("mean-field bandwidths must be positive")
        try:
            self.eval_config().validate()
            self.scene_config().validate()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def report_dict(self) -> dict:
        """Configuration echo for reports; execution-only keys would break cross-thread equality."""
        return {k: v for k, v in asdict(self).items() if k not in EXECUTION_ONLY}


EXECUTION_ONLY = frozenset({"threads"})
FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(name: str, raw: str):
    kind = FIELD_TYPES[name]
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text, 0)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return text


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (``None`` values skipped)."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = coerce(key, value) if isinstance(value, str) else value
    return replace(RunConfig(), **values).validate()


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
