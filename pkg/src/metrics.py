from typing import List, Optional, Union

import numpy as np
import pandas as pd
from colorama import Fore, Style

from utils.asthetics import format_table, format_value, print_section
from utils.constants import NEVER, OS_MAX_DEFAULT, SETTLING_BAND
from utils.states import ClosedLoopRecord, ControlMode

ESTIMATE_TOL = 0.05


def _frame(record: Union[ClosedLoopRecord, pd.DataFrame]) -> pd.DataFrame:
    return record.to_frame() if isinstance(record, ClosedLoopRecord) else record.reset_index(drop=True)


def segments(frame: pd.DataFrame) -> List[tuple]:
    """(start, stop) row ranges over which y_set stays constant."""
    changes = np.flatnonzero(np.diff(frame["y_set"].to_numpy()) != 0) + 1
    bounds = [0, *changes.tolist(), len(frame)]
    return list(zip(bounds[:-1], bounds[1:]))


def settling_time(frame: pd.DataFrame, start: int, stop: int, band: float = SETTLING_BAND) -> float:
    """
    Time from the segment start to the first entry into the band without a later exit.

    Returns NEVER when the last row of the segment is still outside the band.
    """
    seg = frame.iloc[start:stop]
    y_set = seg["y_set"].to_numpy()
    inside = np.abs(seg["y_m"].to_numpy() - y_set) <= band * y_set
    if not inside[-1]:
        return NEVER
    outside = np.flatnonzero(~inside)
    first = 0 if not len(outside) else outside[-1] + 1
    return float(seg["t"].iloc[first] - seg["t"].iloc[0])


def decay_exempt(frame: pd.DataFrame, os_max: float = OS_MAX_DEFAULT) -> np.ndarray:
    """
    Mask of the rows excluded from overshoot accounting: the decay from above the bound
    that follows a set-point decrease, for as long as y keeps falling.
    """
    y = frame["y_m"].to_numpy()
    y_set = frame["y_set"].to_numpy()
    above = y / y_set - 1.0 > os_max
    exempt = np.zeros(len(frame), dtype=bool)
    for start, stop in segments(frame):
        decaying = start > 0 and y_set[start] < y_set[start - 1]
        for i in range(start, stop):
            if decaying and above[i] and (i == start or y[i] <= y[i - 1]):
                exempt[i] = True
                continue
            decaying = False
    return exempt


def overshoot_violations(frame: pd.DataFrame, os_max: float = OS_MAX_DEFAULT) -> int:
    """Rows with overshoot above os_max, outside the post-decrease decay."""
    overshoot = frame["y_m"].to_numpy() / frame["y_set"].to_numpy() - 1.0
    return int(np.sum((overshoot > os_max) & ~decay_exempt(frame, os_max)))


def max_overshoot(frame: pd.DataFrame, os_max: float = OS_MAX_DEFAULT) -> float:
    """Largest overshoot over the rows that overshoot_violations counts, floored at 0."""
    overshoot = frame["y_m"].to_numpy() / frame["y_set"].to_numpy() - 1.0
    counted = overshoot[~decay_exempt(frame, os_max)]
    return float(max(counted.max(), 0.0)) if len(counted) else 0.0


def estimation_delays(frame: pd.DataFrame, tol: float = ESTIMATE_TOL) -> List[float]:
    """
    Control periods from each step in the true disturbance until |q_hat - q| < tol * q.
    """
    q = frame["q_true"].to_numpy()
    q_hat = frame["q_hat"].to_numpy()
    steps = np.flatnonzero(np.diff(q) != 0) + 1
    delays = []
    for s in steps:
        close = np.flatnonzero(np.abs(q_hat[s:] - q[s:]) < tol * np.abs(q[s:]))
        delays.append(float(close[0]) if len(close) else NEVER)
    return delays


def compute_metrics(
    record: Union[ClosedLoopRecord, pd.DataFrame],
    scenario: Optional[str] = None,
    band: float = SETTLING_BAND,
    os_max: float = OS_MAX_DEFAULT,
) -> dict:
    """
    Summary of one closed-loop record.

    Args:
        record (ClosedLoopRecord | pd.DataFrame): The record or its frame.
        scenario (str, optional): Name stored with the metrics.
        band (float): Relative settling band.
        os_max (float): Overshoot bound.

    Returns:
        dict: Settling times per set-point segment (NEVER when not settled), the largest
        overshoot, violation counts per constraint, integral absolute error and the
        estimation delay after every disturbance step.
    """
    frame = _frame(record)
    if scenario is None and isinstance(record, ClosedLoopRecord):
        scenario = record.scenario
    t = frame["t"].to_numpy()
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    error = np.abs(frame["y_m"].to_numpy() - frame["y_set"].to_numpy())
    settling = [settling_time(frame, a, b, band) for a, b in segments(frame)]
    delays = estimation_delays(frame)
    hold = np.flatnonzero(frame["mode"].to_numpy() == ControlMode.STEADY_HOLD.value)

    return {
        "scenario": scenario or "custom",
        "steps": int(len(frame)),
        "settling_time": settling[0],
        "settling_times": settling,
        "max_overshoot": max_overshoot(frame, os_max),
        "violations": {
            "raffinate": int(frame["z_violation"].sum()),
            "overshoot": overshoot_violations(frame, os_max),
            "bounds": int(frame["bound_violation"].sum()),
            "rate": int(frame["rate_violation"].sum()),
        },
        "rate_relaxed": int(frame["rate_relaxed"].sum()),
        "alarms": int(frame["alarm"].sum()),
        "mhe_clamped": int(frame["mhe_clamped"].sum()),
        "iae": float(np.sum(error) * dt),
        "estimation_delays": delays,
        "max_estimation_delay": max(delays) if delays else 0.0,
        "steady_hold_since": float(t[hold[0]]) if len(hold) else NEVER,
    }


def settling_ratio(open_loop: dict, closed_loop: dict) -> float:
    """Open-loop over closed-loop settling time of the first set-point segment."""
    closed = closed_loop["settling_time"]
    if closed == 0:
        return NEVER
    return open_loop["settling_time"] / closed


def print_metrics(metrics: dict) -> None:
    """
    Displays the run summary: settling, overshoot, constraint violations and estimation.
    """
    print(Fore.YELLOW + f"=== Closed-loop summary: {metrics['scenario']} ===\n" + Style.RESET_ALL)

    rows = [(i + 1, ts) for i, ts in enumerate(metrics["settling_times"])]
    print_section("⏱  Settling per set-point segment:", format_table(["segment", "settling [h]"], rows))

    v = metrics["violations"]
    body = format_table(
        ["constraint", "violations"],
        [
            ("raffinate", v["raffinate"]),
            ("overshoot", v["overshoot"]),
            ("input bounds", v["bounds"]),
            ("input rate", v["rate"]),
        ],
    )
    body += f"\n\nMax overshoot: {metrics['max_overshoot']:.1%}"
    body += f"\nRate relaxations: {metrics['rate_relaxed']}   Alarms: {metrics['alarms']}"
    print_section("🚧 Constraints:", body)

    delays = ", ".join(format_value(d) for d in metrics["estimation_delays"]) or "no disturbance steps"
    body = f"IAE: {metrics['iae']:.4g}\nEstimation delay [periods]: {delays}"
    body += f"\nSteady hold since: {format_value(metrics['steady_hold_since'])} h"
    if "settling_ratio" in metrics:
        body += f"\nOpen/closed-loop settling ratio: {format_value(metrics['settling_ratio'])}"
    print_section("📊 Tracking and estimation:", body)

    clean = all(count == 0 for count in v.values()) and metrics["alarms"] == 0
    if clean and metrics["settling_time"] != NEVER:
        print(Fore.GREEN + "Settled with no constraint violations." + Style.RESET_ALL)
    else:
        print(Fore.RED + "Run ended unsettled or with constraint violations." + Style.RESET_ALL)
