"""AQI scale intervals and class partitions shared by the CNN, graph and wake-up stages."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputError

AQI_MAX = 500.0


@dataclass(frozen=True)
class AqiScale:
    """An interval of plausible AQI values for a region."""

    x_min: float
    x_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min <= self.x_max <= AQI_MAX):
            raise InputError(
                f"invalid AQI scale [{self.x_min}, {self.x_max}]: "
                f"need 0 <= x_min <= x_max <= {AQI_MAX}"
            )

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    def contains(self, value: float) -> bool:
        return self.x_min <= value <= self.x_max


class ClassPartition:
    """A partition of [0, AQI_MAX] into contiguous AQI scale classes.

    Class i covers [bounds[i], bounds[i+1]); the last class is closed on the
    right so every label in [0, AQI_MAX] belongs to exactly one class.
    """

    def __init__(self, bounds):
        bounds = [float(b) for b in bounds]
        if len(bounds) < 3:
            raise InputError("a partition needs at least 2 classes")
        if bounds[0] != 0.0 or bounds[-1] != AQI_MAX:
            raise InputError(f"partition must span [0, {AQI_MAX}], got {bounds}")
        if any(b1 >= b2 for b1, b2 in zip(bounds, bounds[1:])):
            raise InputError(f"partition bounds must be strictly increasing: {bounds}")
        self.bounds = tuple(bounds)

    @property
    def num_classes(self) -> int:
        return len(self.bounds) - 1

    def interval(self, index: int) -> AqiScale:
        return AqiScale(self.bounds[index], self.bounds[index + 1])

    def class_of(self, label: float) -> int:
        """Index of the class containing `label`."""
        if not (0.0 <= label <= AQI_MAX):
            raise InputError(f"AQI label {label} outside [0, {AQI_MAX}]")
        if label == AQI_MAX:
            return self.num_classes - 1
        lo, hi = 0, self.num_classes - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if label < self.bounds[mid + 1]:
                hi = mid
            else:
                lo = mid + 1
        return lo

    @classmethod
    def uniform(cls, num_classes: int = 10) -> "ClassPartition":
        step = AQI_MAX / num_classes
        return cls([i * step for i in range(num_classes)] + [AQI_MAX])


# Unequal class widths loosely following how often each pollution band occurs in
# practice (finer where readings are common); keeps the degree-of-variance prior
# informative across regions.
OBSERVED_CLASS_BOUNDS = (0, 25, 50, 75, 105, 145, 195, 260, 340, 420, 500)
