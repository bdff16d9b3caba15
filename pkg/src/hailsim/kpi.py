"""Passenger waiting time, deadheading mileage and deadheading energy KPIs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

B1_KWH_PER_KM = 0.132
B2_KWH = 5e-6
METRICS = ("service_rate", "apwt", "adm", "adec")


def dec(md: float, td: float, b1: float = B1_KWH_PER_KM, b2: float = B2_KWH) -> float:
    """Energy (kWh) of one deadhead leg of ``md`` km driven in ``td`` minutes."""
    if md < 0:
        raise ValueError("deadhead distance must be non-negative")
    if md == 0:
        return 0.0
    if td <= 0:
        raise ValueError("deadhead time must be positive when distance is positive")
    speed = 60.0 * md / td
    return b1 * md + b2 * speed * speed * md


def _mean(values) -> Optional[float]:
    values = list(values)
    if not values:
        return None
    return math.fsum(values) / len(values)


def apwt(served) -> Optional[float]:
    """Mean of queuing + pickup delay over ``(queue, pickup)`` pairs; ``None`` if empty."""
    return _mean(q + p for q, p in served)


def adm(deadheads, network=None) -> Optional[float]:
    """Mean deadhead km.

    ``deadheads`` holds either distances or, when ``network`` is given,
    ``(previous drop-off node, pickup node)`` pairs measured in Manhattan km.
    """
    if network is None:
        return _mean(deadheads)
    from .network import manhattan_km

    return _mean(manhattan_km(a, b, network) for a, b in deadheads)


def adec(legs) -> Optional[float]:
    """Mean :func:`dec` over ``(md, td)`` pairs."""
    return _mean(dec(md, td) for md, td in legs)


@dataclass(frozen=True)
class ServedRecord:
    """Per-trip KPI inputs for a served trip."""

    trip: int
    queue: float
    pickup: float
    md: float
    td: float
    hour: int
    zone: str = ""

    @property
    def energy(self) -> float:
        return dec(self.md, self.td)


@dataclass
class KpiSlice:
    n_total: int = 0
    n_served: int = 0
    apwt: Optional[float] = None
    adm: Optional[float] = None
    adec: Optional[float] = None
    queue: Optional[float] = None
    pickup: Optional[float] = None

    @property
    def service_rate(self) -> Optional[float]:
        return self.n_served / self.n_total if self.n_total else None

    def value(self, metric: str) -> Optional[float]:
        return self.service_rate if metric == "service_rate" else getattr(self, metric)


@dataclass
class KpiReport:
    """Overall KPIs plus per-hour (request hour) and per-zone (origin zone) slices.

    KPIs over an empty served set are ``None`` (not applicable).
    """

    overall: KpiSlice
    by_hour: dict = field(default_factory=dict)
    by_zone: dict = field(default_factory=dict)
    n_cancelled: int = 0

    @property
    def service_rate(self):
        return self.overall.service_rate

    @property
    def apwt(self):
        return self.overall.apwt

    @property
    def adm(self):
        return self.overall.adm

    @property
    def adec(self):
        return self.overall.adec

    def rows(self):
        """``(slice, metric, value, n)`` rows, overall first."""
        out = []
        for name, sl in [("all", self.overall)] + [(f"hour={h}", s) for h, s in sorted(self.by_hour.items())] \
                + [(f"zone={z}", s) for z, s in sorted(self.by_zone.items())]:
            for metric in METRICS:
                n = sl.n_total if metric == "service_rate" else sl.n_served
                out.append((name, metric, sl.value(metric), n))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["slice", "metric", "value", "n"])
            for name, metric, value, n in self.rows():
                w.writerow([name, metric, "" if value is None else repr(value), n])

    def to_json(self, path) -> None:
        data = [{"slice": s, "metric": m, "value": v, "n": n} for s, m, v, n in self.rows()]
        with open(path, "w") as f:
            json.dump(data, f, indent=1)
            f.write("\n")


def kpi_slice(records, n_total: int) -> KpiSlice:
    """KPIs over served records out of ``n_total`` requested trips."""
    records = list(records)
    return KpiSlice(
        n_total=n_total,
        n_served=len(records),
        apwt=apwt((r.queue, r.pickup) for r in records),
        adm=_mean(r.md for r in records),
        adec=_mean(r.energy for r in records),
        queue=_mean(r.queue for r in records),
        pickup=_mean(r.pickup for r in records),
    )


def build_report(served: Iterable[ServedRecord], request_hours, origin_zones=None, n_cancelled: int = 0) -> KpiReport:
    """Aggregate served-trip records into a :class:`KpiReport`.

    ``request_hours`` (and optionally ``origin_zones``) cover every trip of the
    day, served or not, so slice service rates have the right denominators.
    """
    served = sorted(served, key=lambda r: r.trip)
    request_hours = list(request_hours)
    report = KpiReport(overall=kpi_slice(served, len(request_hours)), n_cancelled=n_cancelled)
    totals = {}
    for h in request_hours:
        totals[h] = totals.get(h, 0) + 1
    for h in sorted(totals):
        report.by_hour[h] = kpi_slice((r for r in served if r.hour == h), totals[h])
    if origin_zones is not None:
        ztot = {}
        for z in origin_zones:
            ztot[z] = ztot.get(z, 0) + 1
        for z in sorted(ztot):
            report.by_zone[z] = kpi_slice((r for r in served if r.zone == z), ztot[z])
    return report


def recompose(slices: Iterable[KpiSlice], metric: str) -> Optional[float]:
    """Served-count weighted mean of a per-slice metric."""
    num, den = [], 0
    for s in slices:
        val = s.value(metric)
        if val is None:
            continue
        w = s.n_total if metric == "service_rate" else s.n_served
        num.append(w * val)
        den += w
    return math.fsum(num) / den if den else None
