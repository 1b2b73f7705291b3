"""Independent reference computations used as test oracles."""

from itertools import combinations


def brute_force_expansion(adjacency, t, degree):
    """(verdict, smallest neighbourhood) over every party set of size 2t+1,
    by plain set unions."""
    size = 2 * t + 1
    if size > len(adjacency):
        return True, None
    smallest = min(len(set().union(*(set(adjacency[p]) for p in s)))
                   for s in combinations(range(len(adjacency)), size))
    return smallest > t * degree, smallest


def fit_line(xs, ys):
    """Ordinary least squares slope and intercept from the normal equations."""
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    return slope, my - slope * mx
