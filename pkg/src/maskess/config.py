"""Flat ``key = value`` run configuration with namespaced keys."""

from __future__ import annotations

from pathlib import Path

from .tokens import UsageError


class ConfigError(UsageError):
    pass


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


# key -> (parser, default)
KEYS = {
    "seed": (int, 0),
    "schedule.T": (int, 10),
    "schedule.noise_base": (float, 1.0),
    "sampler.T_star": (_optional_int, None),
    "sampler.tau": (_optional_float, None),
    "sampler.use_ratio_stop": (_bool, True),
    "sampler.ratio_window": (int, 2),
    "sampler.stage3_confidence": (str, "self-critic"),
    "prior.epsilon": (float, 0.0),
    "vq.K": (int, 16),
    "vq.window": (int, 8),
    "vq.iters": (int, 50),
}


class Config(dict):
    @classmethod
    def defaults(cls) -> "Config":
        return cls({k: default for k, (_, default) in KEYS.items()})

    def set(self, key: str, text: str) -> None:
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        parser = KEYS[key][0]
        try:
            self[key] = parser(text.strip())
        except ValueError:
            raise ConfigError(f"bad value {text.strip()!r} for config key {key!r}") from None

    def update_from_lines(self, lines, source: str = "<config>") -> None:
        for lineno, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            self.set(key, value)

    @classmethod
    def load(cls, path=None, overrides=()) -> "Config":
        cfg = cls.defaults()
        if path is not None:
            cfg.update_from_lines(Path(path).read_text().splitlines(), str(path))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            cfg.set(key, value)
        return cfg

    def sampler_config(self):
        from .sampler import SamplerConfig

        tau = self["sampler.tau"]
        return SamplerConfig(
            T=self["schedule.T"],
            T_star=self["sampler.T_star"],
            tau=tau,
            use_ratio_stop=self["sampler.use_ratio_stop"] if tau is None else False,
            ratio_window=self["sampler.ratio_window"],
            noise_base=self["schedule.noise_base"],
            seed=self["seed"],
            stage3_confidence=self["sampler.stage3_confidence"],
        )

    def vq_spec(self):
        from .quantizer import VQSpec

        return VQSpec(self["vq.window"], self["vq.K"], self["vq.iters"], self["seed"])

    def as_text(self) -> str:
        return "".join(f"{k} = {self[k]}\n" for k in KEYS)
