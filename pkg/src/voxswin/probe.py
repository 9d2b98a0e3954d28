"""Instrumentation counter for attention intermediates.

When a probe is active, every attention invocation reports the element count
of each intermediate it allocates (q, k, v, scores, attended, out). The cost
model compares these against its closed-form counts (exact equality on score
elements).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

_ACTIVE: "AllocationProbe | None" = None


@dataclass
class AttentionCallRecord:
    kind: str  # spatial | temporal | joint4d
    elements: dict[str, int]

    def total_elements(self) -> int:
        return sum(self.elements.values())


@dataclass
class AllocationProbe:
    calls: list[AttentionCallRecord] = field(default_factory=list)

    def record_call(self, kind: str, elements: dict[str, int]) -> None:
        self.calls.append(AttentionCallRecord(kind, dict(elements)))

    def total_elements(self) -> int:
        return sum(c.total_elements() for c in self.calls)

    def peak_call_elements(self) -> int:
        return max((c.total_elements() for c in self.calls), default=0)

    def score_elements(self) -> list[int]:
        return [c.elements["scores"] for c in self.calls]

    def total_bytes(self, precision_bytes: int) -> int:
        return self.total_elements() * precision_bytes

    def peak_call_bytes(self, precision_bytes: int) -> int:
        return self.peak_call_elements() * precision_bytes


@contextlib.contextmanager
def activate(p: AllocationProbe):
    global _ACTIVE
    prev, _ACTIVE = _ACTIVE, p
    try:
        yield p
    finally:
        _ACTIVE = prev


def record_attention(kind: str, elements: dict[str, int]) -> None:
    if _ACTIVE is not None:
        _ACTIVE.record_call(kind, elements)
