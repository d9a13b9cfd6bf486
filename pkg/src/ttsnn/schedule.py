"""Per-timestep execution schedules for half-mode TT layers."""

from __future__ import annotations

FULL = "F"
HALF_VERTICAL = "HV"
HALF_HORIZONTAL = "HH"
MODES = (FULL, HALF_VERTICAL, HALF_HORIZONTAL)

PLACEMENTS = ("early-full", "late-full", "alternate-fh", "alternate-hf")


def build_htt_schedule(
    t_steps: int,
    n_half: int,
    placement: str = "early-full",
    half_branch: str = "vertical",
) -> list[str]:
    """Arrange full and half timesteps over a window of `t_steps`.

    "early-full" keeps the full sub-convolutions in the early timesteps
    (the default and best-performing arrangement); the other placements
    cover the remaining tested orderings. `half_branch` selects which
    middle branch the half timesteps retain: "vertical", "horizontal",
    or "alternate".
    """
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    if not 0 <= n_half < t_steps:
        raise ValueError("n_half must satisfy 0 <= n_half < t_steps")
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}")
    if half_branch not in ("vertical", "horizontal", "alternate"):
        raise ValueError("half_branch must be vertical, horizontal, or alternate")

    if placement == "early-full":
        pattern = [False] * (t_steps - n_half) + [True] * n_half
    elif placement == "late-full":
        pattern = [True] * n_half + [False] * (t_steps - n_half)
    else:
        # Alternate, starting with half ("alternate-hf") or full
        # ("alternate-fh"), until n_half halves are placed.
        start_half = placement == "alternate-hf"
        pattern = []
        remaining = n_half
        for t in range(t_steps):
            take_half = remaining > 0 and (t % 2 == (0 if start_half else 1))
            pattern.append(take_half)
            remaining -= take_half
        # If alternation ran out of slots, fill halves from the back.
        for t in reversed(range(t_steps)):
            if remaining <= 0:
                break
            if not pattern[t]:
                pattern[t] = True
                remaining -= 1

    schedule = []
    half_count = 0
    for is_half in pattern:
        if not is_half:
            schedule.append(FULL)
            continue
        if half_branch == "vertical":
            schedule.append(HALF_VERTICAL)
        elif half_branch == "horizontal":
            schedule.append(HALF_HORIZONTAL)
        else:
            schedule.append(HALF_VERTICAL if half_count % 2 == 0 else HALF_HORIZONTAL)
        half_count += 1
    return schedule


def validate_schedule(schedule: list[str], t_steps: int) -> None:
    if len(schedule) != t_steps:
        raise ValueError(
            f"schedule length {len(schedule)} does not match t_steps {t_steps}"
        )
    bad = [m for m in schedule if m not in MODES]
    if bad:
        raise ValueError(f"unknown schedule entries: {bad}")
    if FULL not in schedule:
        raise ValueError("schedule needs at least one full timestep")
