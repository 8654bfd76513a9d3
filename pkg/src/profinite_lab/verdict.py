"""Three-valued, depth-certified verdicts shared by every check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

HOLDS = "holds-to-depth"
FAILS = "fails-with-witness"
UNDECIDED = "undecided"


@dataclass(frozen=True)
class Verdict:
    status: str
    depth: int
    witness: Any = None
    detail: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def holds(self) -> bool:
        return self.status == HOLDS

    @property
    def fails(self) -> bool:
        return self.status == FAILS

    @classmethod
    def ok(cls, depth: int, detail: str = "", **extra) -> "Verdict":
        return cls(HOLDS, depth, None, detail, extra)

    @classmethod
    def failure(cls, depth: int, witness: Any, detail: str = "", **extra) -> "Verdict":
        return cls(FAILS, depth, witness, detail, extra)

    @classmethod
    def undecided(cls, depth: int, detail: str = "", **extra) -> "Verdict":
        return cls(UNDECIDED, depth, None, detail, extra)

    def to_json(self) -> dict:
        from .finset import label_to_json

        out = {"status": self.status, "depth": self.depth}
        if self.witness is not None:
            out["witness"] = _jsonable(self.witness, label_to_json)
        if self.detail:
            out["detail"] = self.detail
        if self.extra:
            out["extra"] = _jsonable(self.extra, label_to_json)
        return out


def _jsonable(value: Any, label_to_json) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v, label_to_json) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v, label_to_json) for v in value]
    if isinstance(value, (frozenset, set)):
        from .finset import sort_labels

        return [_jsonable(v, label_to_json) for v in sort_labels(value)]
    if hasattr(value, "to_json"):
        return value.to_json()
    return value
