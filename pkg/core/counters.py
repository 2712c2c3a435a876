"""2-bit saturating counter helpers used by the BTB, LSST and read confidence table."""

COUNTER_MIN = 0
COUNTER_MAX = 3


def saturating_increment(value: int, maximum: int = COUNTER_MAX) -> int:
    return min(value + 1, maximum)


def saturating_decrement(value: int, minimum: int = COUNTER_MIN) -> int:
    return max(value - 1, minimum)
