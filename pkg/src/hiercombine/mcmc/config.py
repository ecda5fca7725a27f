from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from ..errors import ValidationError

#: Seed used whenever the caller does not supply one.
DEFAULT_SEED = 20201018

#: Default prior settings shared by the hierarchical models.  Keys name the
#: parameter whose prior they configure; half-Cauchy entries are scales.
DEFAULT_PRIORS = {
    "tau": 2.5,
    "r_theta": 2.5,
    "r_sigma": 2.5,
    "sigma_s": 2.5,
    "lkj_eta": 4.0,
    "beta_sd": 1e6,
}


@dataclass(frozen=True)
class FitConfig:
    """Chain, iteration and prior settings for a fit.

    The defaults (3 chains of 5000 iterations, 2000 of them warm-up, keeping
    every 10th draw) retain 900 draws per parameter.

    ``priors`` overrides entries of :data:`DEFAULT_PRIORS`.  ``mu_sd`` may be
    added to replace the improper flat prior on population means with a
    ``Normal(0, mu_sd)``.
    """

    chains: int = 3
    iterations: int = 5000
    warmup: int = 2000
    thin: int = 10
    seed: int = DEFAULT_SEED
    target_accept: float = 0.8
    max_tree_depth: int = 10
    priors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.chains < 1:
            raise ValidationError("chains must be positive")
        if self.iterations < 1 or self.thin < 1 or self.max_tree_depth < 1:
            raise ValidationError("iterations, thin and max_tree_depth must be positive")
        if not 0 <= self.warmup < self.iterations:
            raise ValidationError("warmup must satisfy 0 <= warmup < iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        unknown = set(self.priors) - set(DEFAULT_PRIORS) - {"mu_sd"}
        if unknown:
            raise ValidationError(f"unknown prior settings: {sorted(unknown)}")
        if self.retained_per_chain < 30:
            raise ValidationError(
                f"config keeps {self.retained_per_chain} draws per chain; at least 30 are required"
            )

    @property
    def retained_per_chain(self) -> int:
        return (self.iterations - self.warmup) // self.thin

    @property
    def retained(self) -> int:
        return self.chains * self.retained_per_chain

    def prior(self, name: str):
        if name == "mu_sd":
            return self.priors.get("mu_sd")
        return float(self.priors.get(name, DEFAULT_PRIORS[name]))

    def with_(self, **changes) -> "FitConfig":
        return replace(self, **changes)

    @classmethod
    def fast(cls, **changes) -> "FitConfig":
        """Short profile for pipelines: 2 chains x 1500 iterations, 500 warm-up, no thinning."""
        base = dict(chains=2, iterations=1500, warmup=500, thin=1)
        base.update(changes)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["priors"] = {k: self.prior(k) for k in DEFAULT_PRIORS}
        if "mu_sd" in self.priors:
            d["priors"]["mu_sd"] = self.priors["mu_sd"]
        return d
