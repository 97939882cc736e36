"""Hand-derived expectations for the diamond, independent of the simulator."""

from dataclasses import dataclass
from fractions import Fraction


def diamond_transfer_time(timing, access_delay, path_delays, switches=3):
    """Loss-free end-to-end time over one diamond path."""
    return timing.e_d + 2 * access_delay + sum(path_delays) + switches * timing.f_d + timing.d_d


@dataclass
class FailoverExpectation:
    afcp: Fraction
    data_lost: int
    acks_lost: int

    @property
    def retransmissions(self) -> int:
        return self.data_lost + self.acks_lost


def diamond_failover(timing, flow, duration, fail_at, access_delay=1_000, path1=(1_000, 1_000),
                     path2=(1_000, 1_000)) -> FailoverExpectation:
    """Expected cost of failing the ingress-side link of path1.

    Data: a copy leaves the ingress switch ``e_d + access + f_d`` after
    generation. It is lost if it reaches the far end of the failed link at or
    after the failure while the ingress switch has not yet noticed (``df_d``).
    Lost copies go out again ``rto`` after first emission, over path2.

    Acks: the egress switch only moves to path2 when the controller
    reconfigures (``df_d + c_d + rn_d`` after the failure). An ack that
    leaves it on path1 before then and reaches the failed link at or after
    the failure is lost, which costs one benign retransmission and a
    duplicate delivery but no extra transfer time.
    """
    t1 = diamond_transfer_time(timing, access_delay, path1)
    t2 = diamond_transfer_time(timing, access_delay, path2)
    detect = fail_at + timing.df_d
    switched = fail_at + timing.df_d + timing.c_d + timing.rn_d
    extra = data_lost = acks_lost = k = 0
    g = flow.start
    while g < duration:
        k += 1
        leave = g + timing.e_d + access_delay + timing.f_d
        if leave + path1[0] >= fail_at and leave < detect:
            data_lost += 1
            extra += timing.rto + (t2 - t1)
        else:
            t_data = t1 if leave < detect else t2
            if leave >= detect:
                extra += t2 - t1
            ack_out = g + t_data - timing.d_d + timing.e_d + access_delay + timing.f_d
            ack_at_ingress = ack_out + path1[1] + timing.f_d + path1[0]
            if ack_out < switched and ack_at_ingress >= fail_at:
                acks_lost += 1
        g += flow.period
    return FailoverExpectation(Fraction(extra, k), data_lost, acks_lost)
