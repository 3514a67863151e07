"""Call accounting for training-only paths.

Student inference must never run the positional encoding or the adapters;
these counters let callers assert that.
"""
from collections import Counter

CALL_COUNTS = Counter()


def reset():
    CALL_COUNTS.clear()
