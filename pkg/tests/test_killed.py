import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from latwalk.errors import RadiusTooSmall, StartOutsideWindow
from latwalk.harmonic import KilledSystem, green_singleton
from latwalk.kernels import Window, evolve
from latwalk.killed import (
    KilledFieldSlice,
    escape_probability,
    evolve_killed,
    first_hitting_law,
    sigma_law_singleton,
)
from latwalk.model import build_step_law

UNIT = [(1, 0), (-1, 0), (0, 1), (0, -1)]


def enumerate_first_hits(start, A, n_max):
    """P[sigma_A = n, S_n = xi] for the simple walk by listing all 4^n paths."""
    out = {xi: [Fraction(0)] * (n_max + 1) for xi in A}
    for n in range(1, n_max + 1):
        for path in itertools.product(UNIT, repeat=n):
            z = start
            for k, s in enumerate(path, 1):
                z = (z[0] + s[0], z[1] + s[1])
                if z in A:
                    if k == n:
                        out[z][n] += Fraction(1, 4 ** n)
                    break
    return out


def test_one_step_slice(sys_origin):
    sl = evolve_killed(sys_origin, (1, 0), 1, Window((0, 0), 10))
    assert isinstance(sl, KilledFieldSlice)
    for z in [(2, 0), (1, 1), (1, -1)]:
        assert sl[z] == 0.25
    assert sl[(0, 0)] == 0.0
    assert sl.killed_mass == 0.25
    assert sl.mass_defect() == 0.0


def test_two_step_return(sys_origin):
    sl = evolve_killed(sys_origin, (1, 0), 2, Window((0, 0), 10))
    assert sl[(1, 0)] == 3 / 16


def test_live_mass_vanishes_on_A(sys_ell):
    sl = evolve_killed(sys_ell, (3, -2), 200)
    for xi in sys_ell.A:
        assert sl[xi] == 0.0


def test_start_outside_window(sys_origin):
    with pytest.raises(StartOutsideWindow):
        evolve_killed(sys_origin, (12, 0), 5, Window((0, 0), 10))


@pytest.mark.parametrize("start", [(1, 0), (1, 1), (-2, 1)])
def test_first_hits_match_path_enumeration(sys_ell, start):
    want = enumerate_first_hits(start, set(sys_ell.A.points), 7)
    for xi in sys_ell.A:
        got = first_hitting_law(sys_ell, start, xi, 7, Window((0, 0), 12))
        assert got.tolist() == [float(v) for v in want[xi]]


def test_first_hits_of_origin(sys_origin):
    got = first_hitting_law(sys_origin, (1, 0), (0, 0), 3)
    assert got[1] == 0.25
    assert got[2] == 0.0
    want = enumerate_first_hits((1, 0), {(0, 0)}, 3)[(0, 0)][3]
    assert want == Fraction(5, 64)
    assert got[3] == 5 / 64


def test_first_hitting_law_needs_a_member(sys_origin):
    with pytest.raises(ValueError):
        first_hitting_law(sys_origin, (1, 0), (1, 1), 3)


@pytest.mark.parametrize("name", ["srw", "kings", "longstep"])
def test_mass_accounting(name):
    sys = KilledSystem(name, [(0, 0), (1, 0), (1, 1)])
    for n, R in [(50, 8), (400, 30)]:
        sl = evolve_killed(sys, (2, 3), n, Window((0, 0), R))
        assert sl.mass_defect() <= 1e-12 * n
        assert sl.mass.min() >= 0.0
        assert sl.absorption_log.sum() == pytest.approx(sl.killed_mass, abs=1e-15 * n)


def test_parity_is_exact(sys_pair):
    # SRW: from (3, 2) the live mass at time n sits only where x1 + x2 + n is odd
    for n in (40, 41):
        sl = evolve_killed(sys_pair, (3, 2), n)
        X1, X2 = sl.window.coords
        wrong = (X1 + X2 + 3 + 2 + n) % 2 == 1
        assert np.all(sl.mass[wrong] == 0.0)


def test_duality_for_symmetric_law(kings):
    # p_A^n(x, y) = p_{-A}^n(-y, -x); for a symmetric law and A = -A this
    # is the ordinary reversal p_A^n(x, y) = p_A^n(y, x)
    sys = KilledSystem(kings, [(-1, 0), (0, 0), (1, 0)])
    w = Window((0, 0), 40)
    x, y = (2, 3), (-4, 1)
    a = evolve_killed(sys, x, 60, w)[y]
    b = evolve_killed(sys, y, 60, w)[x]
    assert a > 0 and a == pytest.approx(b, rel=1e-13)


def test_duality_for_asymmetric_set(sys_ell):
    dual = sys_ell.dual
    w = Window((0, 0), 40)
    x, y = (2, -3), (-1, 4)
    a = evolve_killed(sys_ell, x, 60, w)[y]
    b = evolve_killed(dual, (-y[0], -y[1]), 60, w)[(-x[0], -x[1])]
    assert a > 0 and a == pytest.approx(b, rel=1e-13)


# -- escape solves --------------------------------------------------------------------


def dense_escape(R, A):
    """Escape probabilities for the simple walk on a tiny disc by a dense solve."""
    pts = [(i, j) for i in range(-R, R + 1) for j in range(-R, R + 1) if i * i + j * j < R * R and (i, j) not in A]
    idx = {p: k for k, p in enumerate(pts)}
    M = np.eye(len(pts))
    b = np.zeros(len(pts))
    for p, k in idx.items():
        for s in UNIT:
            z = (p[0] + s[0], p[1] + s[1])
            if z in idx:
                M[k, idx[z]] -= 0.25
            elif z not in A:
                b[k] += 0.25
    return dict(zip(pts, np.linalg.solve(M, b)))


def test_escape_radius_two(sys_origin):
    es = escape_probability(sys_origin, 2)
    want = dense_escape(2, {(0, 0)})
    assert len(want) == 8
    for p, v in want.items():
        assert es.values[p] == pytest.approx(v, abs=1e-14)
    assert es.values[(1, 1)] == pytest.approx(5 / 6, abs=1e-14)
    assert es.values[(1, 0)] == pytest.approx(2 / 3, abs=1e-14)
    # from the origin: one step to a neighbor, then escape
    assert es.values[(0, 0)] == pytest.approx(2 / 3, abs=1e-14)
    assert es.residual <= 1e-12


def test_escape_small_disc_with_pair(sys_pair):
    es = escape_probability(sys_pair, 4)
    for p, v in dense_escape(4, {(0, 0), (1, 0)}).items():
        assert es.values[p] == pytest.approx(v, abs=1e-13)


def test_forced_exit():
    # every step of this walk is at least 3 long, so from U(2) minus the
    # origin the first step always leaves the disc
    law = build_step_law([(s, 1) for s in [(3, 0), (-3, 0), (0, 3), (0, -3), (4, 0), (-4, 0), (0, 4), (0, -4)]])
    es = escape_probability(KilledSystem(law, [(0, 0)]), 2)
    for p in [(1, 0), (1, 1), (0, -1)]:
        assert es.values[p] == 1.0


def test_escape_monotone_in_radius(sys_ell):
    small, large = escape_probability(sys_ell, 64), escape_probability(sys_ell, 128)
    for x in [(2, 2), (-5, 0), (20, 30), (1, 1)]:
        assert small.values[x] > large.values[x]
    x1, x2, v = small.values.as_arrays()
    assert v.min() > 0 and v.max() <= 1


def test_escape_radius_checks(sys_pair):
    with pytest.raises(RadiusTooSmall):
        escape_probability(KilledSystem("srw", [(0, 0), (3, 0)]), 3)
    with pytest.raises(KeyError):
        escape_probability(sys_pair, 4).values[(10, 10)]


# -- Green function partial sums ---------------------------------------------------------


def test_green_partial_sums(sys_origin):
    x, y = (2, 1), (-1, 3)
    t = sys_origin.potential
    g, gyy = green_singleton(t, x, y), green_singleton(t, y, y)
    win = Window.around(x, 2 ** 12, extra=[y])
    run = evolve(sys_origin.law, x, 2 ** 12, win, kill=[(0, 0)], probes=[y], snapshots=())
    partial = np.cumsum(run.probe(y))
    assert np.all(np.diff(partial) >= 0)
    gaps = [g - partial[N] for N in (2 ** 10, 2 ** 11, 2 ** 12)]
    # mass that left the window could still have visited y: at most leak * g(y, y)
    assert partial[-1] <= g + run.leakage[-1] * gyy
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_green_recursion(sys_origin):
    t = sys_origin.potential
    t.fill(22)
    worst = 0.0
    rng = range(-20, 21)
    for y in [(0, 1), (3, -4), (-7, 11), (20, 0), (13, 13)]:
        for x1 in rng:
            for x2 in rng:
                x = (x1, x2)
                if x1 * x1 + x2 * x2 > 400:
                    continue
                rhs = (1.0 if x == y else 0.0) + sum(
                    0.25 * green_singleton(t, (x1 + s[0], x2 + s[1]), y) for s in UNIT if (x1 + s[0], x2 + s[1]) != (0, 0)
                )
                worst = max(worst, abs(green_singleton(t, x, y) - rhs))
    assert worst < 1e-8


# -- law of sigma for the origin -------------------------------------------------------


def test_sigma_law(srw):
    pmf, cdf = sigma_law_singleton(srw, (1, 0), 4096)
    assert pmf[0] == 0.0 and pmf[1] == 0.25
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[-1] < 1.0
    pmf2, cdf2 = sigma_law_singleton(srw, (1, 0), 8192)
    assert cdf2[-1] > cdf[-1]
    assert np.array_equal(pmf2[:4097], pmf)


def test_far_start_against_asymptotics(srw, exact_source):
    from latwalk.harness import LawId, exact_value, predicted_value

    sys = KilledSystem(srw, [(0, 0)])
    ratios = []
    for n in (256, 1024, 4096):
        params = {"x": (10, 0), "n": n}
        ex, _ = exact_value(LawId.LEM1_FAR, sys, params, exact_source)
        ratios.append(ex / predicted_value(LawId.LEM1_FAR, sys, params, exact_source))
    assert 0.5 <= ratios[2] <= 1.5
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1) < abs(ratios[0] - 1)
