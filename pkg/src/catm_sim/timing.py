"""HARQ timing constants (all in TTIs = 1 ms subframes).

TTI arithmetic is inclusive: a channel with repetition length R starting at
subframe s occupies s .. s+R-1, and every cross-channel offset below is
counted from the *last* occupied subframe of the previous channel.  With
these offsets an UL process with all repetition lengths 1 cycles in 8 ms
(grant at n, PUSCH at n+4, next grant at n+8), which is what caps a
half-duplex device at 3 interleaved UL processes.
"""

# DCI decode to start of the granted channel.
MPDCCH_TO_PUSCH = 4
MPDCCH_TO_PDSCH = 2

# Last data subframe to feedback availability (UL: eNB may regrant;
# DL: UE sends the ACK on PUCCH).
DATA_TO_FEEDBACK = 4

# Last PUCCH subframe to the earliest retransmission grant (DL only).
FEEDBACK_TO_REGRANT = 4

# Half-duplex devices need one idle subframe to retune between TX and RX.
GUARD_TTIS = 1


def ul_cycle_ms(rl_mpdcch: int, rl_data: int) -> int:
    """Grant-to-grant time of one UL HARQ attempt."""
    return (rl_mpdcch - 1) + MPDCCH_TO_PUSCH + (rl_data - 1) + DATA_TO_FEEDBACK


def dl_cycle_ms(rl_mpdcch: int, rl_data: int, rl_ack: int) -> int:
    """Grant-to-grant time of one DL HARQ attempt (includes the PUCCH ACK)."""
    return ((rl_mpdcch - 1) + MPDCCH_TO_PDSCH + (rl_data - 1)
            + DATA_TO_FEEDBACK + (rl_ack - 1) + FEEDBACK_TO_REGRANT)
