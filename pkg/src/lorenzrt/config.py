"""Run configuration: flat ``section.key = value`` text that round-trips exactly."""

import dataclasses
import typing
from dataclasses import dataclass, field

from .cells import PartitionConfig
from .errors import ConfigError
from .maps import FamilyRange, parse_key_values
from .measures import observable
from .returns import FullReturnConfig

AUTO = "auto"


@dataclass(frozen=True)
class FamilySection:
    lambda_lo: float = 0.55
    lambda_hi: float = 0.95
    a_rule: str = "full"
    alpha: float = 0.6


@dataclass(frozen=True)
class PartitionSection:
    r0: int = 3
    r_star: int = 6
    alpha: float = 0.6


@dataclass(frozen=True)
class ReturnSection:
    bar_delta: typing.Optional[float] = None  # None: delta/10
    t_star: typing.Optional[int] = None  # None: smallest depth with bar_delta-dense preimages
    t_star_cap: int = 40
    residual_threshold: float = 1e-4


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    ensemble: int = 1
    n_cap_escape: int = 60
    n_cap_return: int = 200
    n_cap_explicit: int = 18
    n_samples: int = 20000
    height_cap: int = 20
    distortion_depth: int = 5


@dataclass(frozen=True)
class MeasureSection:
    bins: int = 4096
    burn_in: int = 60
    n_max: int = 40
    phi: str = "x"
    psi: str = "x"


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


SECTIONS = {
    "family": FamilySection,
    "partition": PartitionSection,
    "returns": ReturnSection,
    "run": RunSection,
    "measure": MeasureSection,
    "output": OutputSection,
}


def _format(value):
    if value is None:
        return AUTO
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, hint):
    args = typing.get_args(hint)
    if args and type(None) in args:
        if text == AUTO:
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {hint.__name__}") from None
    return text


@dataclass(frozen=True)
class RunConfig:
    family: FamilySection = field(default_factory=FamilySection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    returns: ReturnSection = field(default_factory=ReturnSection)
    run: RunSection = field(default_factory=RunSection)
    measure: MeasureSection = field(default_factory=MeasureSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_text(self):
        lines = []
        for name in SECTIONS:
            sec = getattr(self, name)
            for f in dataclasses.fields(sec):
                lines.append(f"{name}.{f.name} = {_format(getattr(sec, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = parse_key_values(text)
        parts = {name: {} for name in SECTIONS}
        for key, value in kv.items():
            sec, _, name = key.partition(".")
            if sec not in SECTIONS or not name:
                raise ConfigError(f"unknown key {key!r}")
            hints = typing.get_type_hints(SECTIONS[sec])
            if name not in hints:
                raise ConfigError(f"unknown key {key!r}")
            parts[sec][name] = _parse(value, hints[name])
        cfg = cls(**{name: SECTIONS[name](**vals) for name, vals in parts.items()})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def replace(self, section, **changes):
        return dataclasses.replace(self, **{
            section: dataclasses.replace(getattr(self, section), **changes)})

    # derived objects -------------------------------------------------------
    def family_range(self):
        f = self.family
        return FamilyRange(f.lambda_lo, f.lambda_hi, a_rule=f.a_rule, alpha=f.alpha)

    def partition_config(self):
        p = self.partition
        return PartitionConfig(r0=p.r0, r_star=p.r_star, alpha=p.alpha)

    def bar_delta(self):
        r = self.returns
        return r.bar_delta if r.bar_delta is not None else self.partition_config().delta / 10

    def return_config(self, t_star):
        return FullReturnConfig(self.partition_config().delta_star, t_star,
                                self.bar_delta()).validate(self.partition_config())

    def validate(self):
        self.family_range()
        cfg = self.partition_config()
        if self.returns.t_star is not None:
            self.return_config(self.returns.t_star)
        elif not cfg.delta_star < self.bar_delta() < cfg.delta / 5:
            raise ConfigError("need delta* < bar_delta < delta/5")
        run = self.run
        for name in ("ensemble", "n_cap_escape", "n_cap_return", "n_cap_explicit",
                     "n_samples", "height_cap", "distortion_depth"):
            if getattr(run, name) < 1:
                raise ConfigError(f"run.{name} must be >= 1")
        m = self.measure
        if m.bins < 1 or m.n_max < 1 or m.burn_in < 0:
            raise ConfigError("measure.bins and measure.n_max must be >= 1, burn_in >= 0")
        observable(m.phi)
        observable(m.psi)
        return self
