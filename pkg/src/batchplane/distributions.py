"""Small latency/interarrival distributions used by fault injection and the simulator."""

from __future__ import annotations

import random
from dataclasses import dataclass


@dataclass(frozen=True)
class Distribution:
    """A one-parameter-family sampler: constant, uniform or exponential.

    kind: "const" (a), "uniform" (a..b) or "exp" (mean a).
    """

    kind: str = "const"
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "uniform", "exp"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.a < 0 or (self.kind == "uniform" and self.b < self.a):
            raise ValueError(f"bad distribution parameters a={self.a} b={self.b}")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "const":
            return self.a
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b)
        return rng.expovariate(1.0 / self.a) if self.a > 0 else 0.0

    def mean(self) -> float:
        if self.kind == "uniform":
            return (self.a + self.b) / 2.0
        return self.a

    @staticmethod
    def parse(text: str) -> "Distribution":
        """Parse "const:0.5", "uniform:0.1,0.2" or "exp:0.5". A bare number is constant."""
        text = text.strip()
        if ":" not in text:
            return Distribution("const", float(text))
        kind, _, args = text.partition(":")
        parts = [float(p) for p in args.split(",") if p != ""]
        if kind == "uniform":
            if len(parts) != 2:
                raise ValueError("uniform takes two parameters: uniform:lo,hi")
            return Distribution("uniform", parts[0], parts[1])
        if kind in ("const", "exp"):
            if len(parts) != 1:
                raise ValueError(f"{kind} takes one parameter")
            return Distribution(kind, parts[0])
        raise ValueError(f"unknown distribution kind {kind!r}")


ZERO = Distribution("const", 0.0)
