"""Per-packet timing decomposition and run-level aggregates.

All durations are integer nanoseconds. Averages are kept as exact
``Fraction`` values so paired-run differences compare without rounding.
"""

import copy
import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence


class MetricsError(ValueError):
    pass


class CorruptedRecord(MetricsError):
    pass


class UndefinedAverage(MetricsError):
    pass


class IncomparableRuns(MetricsError):
    pass


@dataclass
class DelayDecomposition:
    """Delay components charged to one delivered frame copy.

    ``bus_d`` is only used by the broadcast-bus baseline (arbitration wait
    plus frame occupancy); it is zero on the switched backbone.
    """

    t_pd: int = 0
    e_d: int = 0
    d_d: int = 0
    f_d_total: int = 0
    hops: int = 0
    c_d_total: int = 0
    df_d: int = 0
    rn_d: int = 0
    rp_d: int = 0
    bus_d: int = 0

    @property
    def ed_d(self) -> int:
        return self.e_d + self.d_d

    @property
    def fo_d(self) -> int:
        return self.df_d + self.rn_d + self.rp_d

    def total(self) -> int:
        return self.t_pd + self.ed_d + self.f_d_total + self.c_d_total + self.fo_d + self.bus_d

    def copy(self) -> "DelayDecomposition":
        return copy.copy(self)


@dataclass
class ArrivalRecord:
    flow_id: str
    seq: int
    t_send: int
    t_recv: int
    decomposition: DelayDecomposition = field(default_factory=DelayDecomposition)
    path_id: str = ""
    retransmitted: bool = False
    duplicate: bool = False


def transfer_time(record: ArrivalRecord) -> int:
    """Receive time minus send time of one record."""
    if record.t_recv < record.t_send:
        raise CorruptedRecord(
            f"flow {record.flow_id} seq {record.seq}: received at {record.t_recv} before sent at {record.t_send}"
        )
    return record.t_recv - record.t_send


def closure_violations(records: Iterable[ArrivalRecord]) -> list[ArrivalRecord]:
    """Records whose transfer time differs from the sum of their delay components."""
    return [r for r in records if transfer_time(r) != r.decomposition.total()]


@dataclass(frozen=True)
class Aggregate:
    k: int
    tt_d: int
    att: Fraction


def aggregate(records: Iterable[ArrivalRecord], flow: Optional[str] = None) -> Aggregate:
    """Count, summed transfer time and mean transfer time over first arrivals.

    Duplicate deliveries are excluded; ``flow`` restricts to one flow id.
    """
    k = 0
    total = 0
    for r in records:
        if r.duplicate or (flow is not None and r.flow_id != flow):
            continue
        k += 1
        total += transfer_time(r)
    if k == 0:
        raise UndefinedAverage(f"no delivered packets for flow {flow!r}")
    return Aggregate(k, total, Fraction(total, k))


def afcp(attf_p, attn_p, failure_key=None, normal_key=None) -> Fraction:
    """Average failover cost per packet: failure-run mean minus normal-run mean.

    The keys identify each run's configuration with the failure schedule
    stripped; when both are given they must match. Negative results are
    returned as-is.
    """
    if failure_key is not None and normal_key is not None and failure_key != normal_key:
        raise IncomparableRuns(f"runs differ beyond their failure schedule ({failure_key} != {normal_key})")
    return Fraction(attf_p) - Fraction(attn_p)


@dataclass
class IntegrityReport:
    fraction: float
    gaps: int
    violations: list[tuple[int, int, int]]  # (t_prev, t_next, gap)
    truncated: bool = False
    last_arrival: Optional[int] = None


def frequency_integrity(arrivals: Sequence[int], period: int, tolerance: float,
                        horizon: Optional[int] = None) -> IntegrityReport:
    """Share of inter-arrival gaps within ``period * (1 +/- tolerance)``.

    With ``horizon`` set, the report is flagged truncated when the stream
    stops more than one tolerated period before the horizon.
    """
    times = sorted(arrivals)
    limit = Fraction(period) * Fraction(tolerance).limit_denominator(10**9)
    violations = []
    for prev, nxt in zip(times, times[1:]):
        gap = nxt - prev
        if abs(gap - period) > limit:
            violations.append((prev, nxt, gap))
    n = max(len(times) - 1, 0)
    fraction = 1.0 if n == 0 else (n - len(violations)) / n
    truncated = False
    last = times[-1] if times else None
    if horizon is not None:
        truncated = last is None or horizon - last > period + limit
    return IntegrityReport(fraction, n, violations, truncated, last)


# --- export -----------------------------------------------------------------

PACKET_COLUMNS = ["flow_id", "seq", "t_send_ns", "t_recv_ns", "t_p_ns", "path_id", "retransmitted", "duplicate"]

SUMMARY_COLUMNS = [
    "flow_id", "leg", "K", "TT_d_ns", "ATT_ns", "ATTN_p_ns", "ATTF_p_ns", "AFCP_p_ns", "AFCP_pct",
    "generated", "lost", "duplicates", "retransmissions", "freq_integrity", "truncated", "config_hash",
]


def fmt_fraction(value: Optional[Fraction], places: int = 6) -> str:
    """Fixed-point decimal rendering, correctly rounded, platform independent."""
    if value is None:
        return ""
    value = Fraction(value)
    scale = 10**places
    n = round(value * scale)
    sign = "-" if n < 0 else ""
    n = abs(n)
    return f"{sign}{n // scale}.{n % scale:0{places}d}"


def packets_csv(records: Iterable[ArrivalRecord], header_comment: str = "") -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PACKET_COLUMNS)
    for r in records:
        w.writerow([r.flow_id, r.seq, r.t_send, r.t_recv, transfer_time(r), r.path_id,
                    int(r.retransmitted), int(r.duplicate)])
    return buf.getvalue()


def read_packets_csv(text: str) -> list[ArrivalRecord]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append(ArrivalRecord(
            flow_id=row["flow_id"], seq=int(row["seq"]), t_send=int(row["t_send_ns"]),
            t_recv=int(row["t_recv_ns"]), path_id=row["path_id"],
            retransmitted=row["retransmitted"] == "1", duplicate=row["duplicate"] == "1",
        ))
    return out


def summary_csv(rows: Iterable[dict], header_comment: str = "") -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.DictWriter(buf, SUMMARY_COLUMNS, lineterminator="\n", restval="")
    w.writeheader()
    for row in rows:
        w.writerow({k: (fmt_fraction(v) if isinstance(v, Fraction) else v) for k, v in row.items()})
    return buf.getvalue()


def afcp_pct(afcp_value: Fraction, attn_p: Fraction) -> Fraction:
    return Fraction(afcp_value) * 100 / Fraction(attn_p)
