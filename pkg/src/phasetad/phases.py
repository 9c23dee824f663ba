"""Temporal phase tags and the named phase sets used throughout the pipeline.

An action is described at up to six temporal stages plus one holistic
("global") description.  The canonical configuration uses four phases:
start, middle, end and global.  Smaller and larger sets exist for
ablations; each is an ordered list of distinct tags.
"""

from __future__ import annotations

import enum
import functools


@functools.total_ordering
class Phase(enum.Enum):
    """One temporal stage of an action, ordered start -> ... -> end -> global."""

    START = "start"
    MIDDLE = "middle"
    MID1 = "mid1"
    MID2 = "mid2"
    MID3 = "mid3"
    END = "end"
    GLOBAL = "global"

    @property
    def rank(self) -> int:
        return _PHASE_RANK[self]

    @property
    def is_temporal(self) -> bool:
        """True for stages that occupy a sub-interval of the action (not global)."""
        return self is not Phase.GLOBAL

    def __lt__(self, other: "Phase") -> bool:
        if not isinstance(other, Phase):
            return NotImplemented
        return self.rank < other.rank

    def __str__(self) -> str:
        return self.value


_PHASE_RANK = {
    Phase.START: 0,
    Phase.MIDDLE: 1,
    Phase.MID1: 1,
    Phase.MID2: 2,
    Phase.MID3: 3,
    Phase.END: 4,
    Phase.GLOBAL: 5,
}

CANONICAL_PHASES: tuple[Phase, ...] = (Phase.START, Phase.MIDDLE, Phase.END, Phase.GLOBAL)

# Named sets by total size, including the global slot where present.
_PHASE_SETS: dict[int, tuple[Phase, ...]] = {
    1: (Phase.GLOBAL,),
    2: (Phase.START, Phase.END),
    3: (Phase.START, Phase.MIDDLE, Phase.END),
    4: CANONICAL_PHASES,
    5: (Phase.START, Phase.MID1, Phase.MID2, Phase.END, Phase.GLOBAL),
    6: (Phase.START, Phase.MID1, Phase.MID2, Phase.MID3, Phase.END, Phase.GLOBAL),
}


def phase_set(size: int) -> tuple[Phase, ...]:
    """Return the named phase set of the given total size (1..6)."""
    try:
        return _PHASE_SETS[size]
    except KeyError:
        raise ValueError(f"no phase set of size {size}; supported sizes are 1..6") from None


def temporal_phases(phases: tuple[Phase, ...]) -> tuple[Phase, ...]:
    """The sub-interval stages of a set, in order, excluding the global slot."""
    return tuple(p for p in phases if p.is_temporal)


def parse_phase(tag: str) -> Phase:
    """Parse a phase tag string (as used in description files)."""
    try:
        return Phase(tag)
    except ValueError:
        raise ValueError(f"unknown phase tag {tag!r}") from None
