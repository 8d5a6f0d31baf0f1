from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class RunContext:
    """Oracle and communication meters of a single solver run."""

    gradient_calls: int = 0
    dual_calls: int = 0
    comm_rounds: int = 0
    b_mults: int = 0

    def reset(self) -> None:
        self.gradient_calls = self.dual_calls = self.comm_rounds = self.b_mults = 0

    def as_dict(self) -> dict:
        return asdict(self)
