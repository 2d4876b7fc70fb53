from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass
class OpCounters:
    """Tally of secure operations performed at the center.

    Kernel counters (choleskys, back_substitutions, inversions) count calls;
    the elementary counters include the work those kernels do internally.
    """

    encryptions: int = 0
    adds: int = 0
    subs: int = 0
    scalar_muls: int = 0
    sec_muls: int = 0
    truncates: int = 0
    divs: int = 0
    sqrts: int = 0
    signs: int = 0
    reveals: int = 0
    choleskys: int = 0
    back_substitutions: int = 0
    inversions: int = 0
    decryptions_at_b: int = 0
    encryptions_at_b: int = 0
    rounds: int = 0
    bytes_exchanged: int = 0

    def copy(self) -> "OpCounters":
        return OpCounters(**asdict(self))

    def __sub__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(**{f.name: getattr(self, f.name) - getattr(other, f.name) for f in fields(self)})

    def __add__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def as_dict(self) -> dict:
        return asdict(self)

    def op_counts(self) -> dict:
        """Operation-kind counts only, without transport figures."""
        d = asdict(self)
        for key in ("decryptions_at_b", "encryptions_at_b", "rounds", "bytes_exchanged"):
            d.pop(key)
        return d
