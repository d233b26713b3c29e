"""Per-level bookkeeping shared by the runtime and the driver."""
from __future__ import annotations

from dataclasses import dataclass, field

from .moments import FieldAccumulator, ScalarAccumulator


@dataclass
class LevelState:
    """Sample count, cost estimates and accumulators of one level.

    ``field_acc_u``/``field_acc_v`` hold the final-time field and drive the
    error control; ``snap_acc_*`` keep every output time for reporting.
    Field accumulators are ``None`` when field statistics are switched off.
    """

    level: int
    samples: int = 0
    cost_ct: float = 0.0
    cost_records: int = 0
    cost_mem: float = 0.0
    field_acc_u: FieldAccumulator | None = None
    field_acc_v: FieldAccumulator | None = None
    snap_acc_u: FieldAccumulator | None = None
    snap_acc_v: FieldAccumulator | None = None
    scalar_acc_Q: ScalarAccumulator = field(default_factory=ScalarAccumulator)
    scalar_acc_Y: ScalarAccumulator = field(default_factory=ScalarAccumulator)
    splits: list = field(default_factory=list)
    next_index: int = 0

    @property
    def mean_v_norm(self) -> float | None:
        if self.field_acc_v is None or self.field_acc_v.count == 0:
            return None
        return self.field_acc_v.mean_norm()

    @property
    def z2(self) -> float | None:
        return None if self.field_acc_v is None else self.field_acc_v.z2

    def accumulators(self) -> list[FieldAccumulator]:
        accs = (self.field_acc_u, self.field_acc_v, self.snap_acc_u, self.snap_acc_v)
        return [a for a in accs if a is not None]

    @property
    def field_nbytes(self) -> int:
        return sum(a.mean_field.nbytes + a.s2_field.nbytes for a in self.accumulators())

    def check_counts(self) -> None:
        counts = {a.count for a in self.accumulators()} | {self.scalar_acc_Q.count, self.scalar_acc_Y.count}
        if counts != {self.samples}:
            raise AssertionError(f"level {self.level}: accumulator counts {counts} != samples {self.samples}")

    def to_dict(self) -> dict:
        y = self.scalar_acc_Y
        return {
            "level": self.level,
            "M": self.samples,
            "s_history": list(self.splits),
            "z2": self.z2,
            "cost_ct": self.cost_ct,
            "cost_mem": self.cost_mem,
            "mean_v_norm": self.mean_v_norm,
            "mean_Q": self.scalar_acc_Q.mean,
            "mean_Y": y.mean,
            "s2_Y": y.second_order_sum,
        }
