"""Run configuration: a single JSON document with dotted-path overrides.

Every CLI invocation resolves a RunConfig, echoes it beside its outputs, and
derives all randomness from its seed, so a run is reproducible from the
echoed file alone.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Any

from .priors import SEVEN_CLASSES, EIGHT_CLASSES

SEED_ENV_VAR = "POI_SEED"

KL_SIGNS = ("positive", "negative")
SUBREGIONS = ("left_eye", "right_eye", "left_mouth", "right_mouth")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class HyperParams:
    t: float = 3.0              # distillation temperature
    epsilon: float = 0.1        # AU pseudolabel smoothing
    lambda1: float = 0.5        # AU loss weight
    lambda2: float = 0.5        # subregion CE weight
    lambda3: float = 1.0        # target CE weight
    l_sub: int | None = None    # subregion window side; None -> scaled from the feature map
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    lr_drop_epoch: int = 20
    lr_drop_factor: float = 0.1
    batch_size: int = 32
    noise_ratio: float = 0.0

    def validate(self) -> None:
        if self.t <= 0:
            raise ConfigError(f"hp.t must be positive, got {self.t}")
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigError(f"hp.epsilon must be in [0, 0.5), got {self.epsilon}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"hp.{name} must be nonnegative")
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ConfigError(f"hp.noise_ratio must be in [0, 1), got {self.noise_ratio}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("hp.batch_size must be >= 1 and hp.epochs >= 0")


@dataclass
class DataSpec:
    classes: tuple[str, ...] = SEVEN_CLASSES
    train_per_class: int = 200
    test_per_class: int = 50
    image_size: int = 56
    ambiguity: float = 0.15     # fraction of samples with conflicting upper/lower halves
    noise_sigma: float = 0.08   # additive pixel noise
    cache_dir: str | None = None

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ConfigError("data.classes needs at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("data.classes contains duplicates")
        # the glyph generator needs >= 24; synthetic-free paths allow 12
        if self.image_size < 12 or self.image_size % 4 != 0:
            raise ConfigError(f"data.image_size must be a multiple of 4 and >= 12, got {self.image_size}")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ConfigError(f"data.ambiguity must be in [0, 1], got {self.ambiguity}")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("data.*_per_class out of range")
        if self.noise_sigma < 0:
            raise ConfigError("data.noise_sigma must be nonnegative")


@dataclass
class ModelSpec:
    # shallow stem: subregion crops must stay local to their image quadrant,
    # so the receptive field ahead of the crop is kept small
    stem_channels: tuple[int, ...] = (16, 32)
    stem_pool: tuple[bool, ...] = (True, True)
    in_channels: int = 1
    shallow_dim: int = 128      # prior-branch conv output channels
    au_latent_dim: int = 64
    au_reduced_dim: int = 32
    trn_feature_dim: int = 128  # target-branch conv output channels
    subregions: tuple[str, ...] = SUBREGIONS
    per_dim_attention: bool = False

    def validate(self) -> None:
        if len(self.stem_channels) != len(self.stem_pool) or not self.stem_channels:
            raise ConfigError("model.stem_channels and model.stem_pool must be equal-length, nonempty")
        unknown = [s for s in self.subregions if s not in SUBREGIONS]
        if unknown:
            raise ConfigError(f"model.subregions has unknown entries {unknown}")
        if len(set(self.subregions)) != len(self.subregions) or not self.subregions:
            raise ConfigError("model.subregions must be a nonempty set of distinct regions")

    @property
    def feature_channels(self) -> int:
        return self.stem_channels[-1]

    def feature_side(self, image_size: int) -> int:
        side = image_size
        for pool in self.stem_pool:
            if pool:
                if side % 2 != 0:
                    raise ConfigError(f"model stem pools an odd side {side}")
                side //= 2
        return side


@dataclass
class AblationFlags:
    baseline_only: bool = False     # target branch + hard-label CE only
    disable_pb: bool = False        # no AU pseudolabel supervision
    disable_oim: bool = False       # no gate / intermediate prediction / mutual-learning KL
    disable_uem: bool = False       # distillation weight fixed at 1
    kl_sign: str = "positive"       # "negative" reproduces the degenerate sign choice
    temper_q: bool = True           # distill against the tempered target distribution
    detach_teachers: bool = True    # stop-gradient on distillation targets
    gate_aux_ce: bool = True        # train the gate through an auxiliary CE

    def validate(self) -> None:
        if self.kl_sign not in KL_SIGNS:
            raise ConfigError(f"flags.kl_sign must be one of {KL_SIGNS}, got {self.kl_sign!r}")

    def normalized(self) -> "AblationFlags":
        """baseline_only implies every PIN-side ablation."""
        if self.baseline_only:
            return replace(self, disable_pb=True, disable_oim=True, disable_uem=True)
        return self


@dataclass
class RunConfig:
    seed: int = 0
    hp: HyperParams = field(default_factory=HyperParams)
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    flags: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> "RunConfig":
        self.hp.validate()
        self.data.validate()
        self.model.validate()
        self.flags.validate()
        side = self.model.feature_side(self.data.image_size)
        l_sub = self.resolved_l_sub()
        if not 0 < l_sub <= side:
            raise ConfigError(f"hp.l_sub={l_sub} exceeds the {side}x{side} feature map")
        return self

    def resolved_l_sub(self) -> int:
        """Default window is 9 on a 14x14 map, scaled proportionally otherwise."""
        if self.hp.l_sub is not None:
            return self.hp.l_sub
        side = self.model.feature_side(self.data.image_size)
        return max(1, min(side, int(9.0 * side / 14.0 + 0.5)))

    def resolved(self) -> "RunConfig":
        """Copy with derived defaults (l_sub) and flag implications made explicit."""
        out = replace(
            self,
            hp=replace(self.hp, l_sub=self.resolved_l_sub()),
            flags=self.flags.normalized(),
        )
        out.validate()
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_SECTIONS = {
    "hp": HyperParams,
    "data": DataSpec,
    "model": ModelSpec,
    "flags": AblationFlags,
}


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    if target_type is None:
        return value
    origin = getattr(target_type, "__origin__", None)
    if origin is tuple or target_type is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return tuple(value)
    if target_type is bool or target_type == (bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    return value


def _field_types(cls) -> dict[str, Any]:
    out = {}
    for f in fields(cls):
        t = f.type
        if isinstance(t, str):
            # evaluated lazily because of `from __future__ import annotations`
            t = {"float": float, "int": int, "bool": bool, "str": str,
                 "int | None": int, "str | None": str,
                 "tuple[str, ...]": tuple, "tuple[int, ...]": tuple,
                 "tuple[bool, ...]": tuple}.get(t)
        out[f.name] = t
    return out


def _build_section(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix}: expected an object")
    types = _field_types(cls)
    kwargs = {}
    for key, value in raw.items():
        if key not in types:
            raise ConfigError(f"unknown config key {prefix}.{key}")
        if value is None:
            kwargs[key] = None
        else:
            kwargs[key] = _coerce(value, types[key], f"{prefix}.{key}")
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key == "seed":
            kwargs["seed"] = _coerce(value, int, "seed")
        elif key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown config key {key}")
    return RunConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def apply_override(cfg: RunConfig, assignment: str) -> RunConfig:
    """Apply one dotted key=value override, e.g. ``hp.t=3`` or ``flags.temper_q=false``.

    Values parse as JSON first (numbers, booleans, lists), falling back to a
    bare string. Unknown keys are rejected.
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, _, text = assignment.partition("=")
    key = key.strip()
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text

    raw = cfg.to_dict()
    parts = key.split(".")
    if parts[0] == "seed" and len(parts) == 1:
        raw["seed"] = value
    elif len(parts) == 2 and parts[0] in _SECTIONS:
        if parts[1] not in raw[parts[0]]:
            raise ConfigError(f"unknown config key {key}")
        raw[parts[0]][parts[1]] = value
    else:
        raise ConfigError(f"unknown config key {key}")
    return config_from_dict(raw)


def default_seed() -> int:
    """Seed fallback: the POI_SEED environment variable, else 0."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


# ---------------------------------------------------------------------------
# named profiles
# ---------------------------------------------------------------------------


def profile(name: str) -> RunConfig:
    """Named starting points; every field remains overridable."""
    if name == "desk":
        return RunConfig()
    if name == "paper":
        return RunConfig(
            hp=HyperParams(lr=0.1, epochs=60, lr_drop_epoch=20, batch_size=256, l_sub=9),
            data=DataSpec(classes=EIGHT_CLASSES, train_per_class=2000, test_per_class=500,
                          image_size=224, ambiguity=0.15),
            model=ModelSpec(stem_channels=(64, 128, 256, 512), stem_pool=(True, True, True, True),
                            in_channels=3, shallow_dim=512, au_latent_dim=128, au_reduced_dim=64,
                            trn_feature_dim=512),
        )
    if name == "tiny":
        # Smallest config with every moving part; used by the gradient oracle.
        return RunConfig(
            hp=HyperParams(l_sub=4, batch_size=2, epochs=2, lr=0.05, lr_drop_epoch=1),
            data=DataSpec(classes=("Happy", "Anger", "Surprise"), train_per_class=4,
                          test_per_class=2, image_size=24, ambiguity=0.25, noise_sigma=0.05),
            model=ModelSpec(stem_channels=(4, 4), stem_pool=(True, True), shallow_dim=16,
                            au_latent_dim=8, au_reduced_dim=4, trn_feature_dim=16),
        )
    if name == "trend":
        # Scaled-down training profile for the directional comparisons; small
        # enough that a five-seed, three-noise-level grid stays within a
        # laptop-scale time budget. Single-stage stem keeps each subregion
        # crop local to its own image quadrant.
        return RunConfig(
            hp=HyperParams(lr=0.05, epochs=16, lr_drop_epoch=11, batch_size=32),
            data=DataSpec(train_per_class=120, test_per_class=40, image_size=28,
                          ambiguity=0.15, noise_sigma=0.08),
            model=ModelSpec(stem_channels=(16,), stem_pool=(True,),
                            shallow_dim=48, au_latent_dim=24, au_reduced_dim=12,
                            trn_feature_dim=48),
        )
    raise ConfigError(f"unknown profile {name!r}; expected desk, paper, tiny, or trend")
