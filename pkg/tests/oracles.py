"""Direct re-summation oracles, deliberately independent of the prefix-sum path."""

import math


def direct_two_sample(x, s, t):
    left = math.fsum(x[:s])
    right = math.fsum(x[s:t])
    return abs(math.sqrt((t - s) / (t * s)) * left - math.sqrt(s / (t * (t - s))) * right)


def direct_anchored(x, e, s, t):
    left = math.fsum(x[e:s])
    right = math.fsum(x[s:t])
    return abs(
        math.sqrt((t - s) / ((s - e) * (t - e))) * left
        - math.sqrt((s - e) / ((t - s) * (t - e))) * right
    )


def brute_full_alarm(x, threshold):
    """First t with max_s D_{s,t} > threshold(t), by direct summation."""
    for t in range(2, len(x) + 1):
        if max(direct_two_sample(x, s, t) for s in range(1, t)) > threshold(t):
            return t
    return None


def brute_multi(x, threshold):
    """Restarting anchored scan: declare t, then restart from e = t."""
    declared, e = [], 0
    for t in range(2, len(x) + 1):
        if t - e < 2:
            continue
        if max(direct_anchored(x, e, s, t) for s in range(e + 1, t)) > threshold(t):
            declared.append(t)
            e = t
    return declared
