import math
import os
import subprocess
import sys
from math import comb

import numpy as np
import pytest

from latwalk.errors import StartOutsideWindow, WindowTooSmall
from latwalk.kernels import FieldSlice, Window, evolve, evolve_free, gaussian_density, llt_deviation
from latwalk.model import builtin_law


def srw_closed_form(n, u, v):
    """p^n(u, v) for the simple walk via the rotated-coordinates product formula."""
    a, b = u + v, u - v
    if (n + a) % 2 or abs(a) > n or abs(b) > n:
        return 0.0
    return comb(n, (n + a) // 2) * comb(n, (n + b) // 2) / 4 ** n


def test_window_membership_is_strict():
    w = Window((0, 0), 3)
    assert w.contains((2, 2))
    assert not w.contains((3, 0))
    assert w.mask.sum() == sum(1 for i in range(-3, 4) for j in range(-3, 4) if i * i + j * j < 9)


def test_one_and_two_steps(srw):
    w = Window((0, 0), 10)
    s1 = evolve_free(srw, (0, 0), 1, w)
    for z in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        assert s1[z] == 0.25
    assert s1.leakage == 0.0
    assert s1.total() == 1.0
    s2 = evolve_free(srw, (0, 0), 2, w)
    assert s2[(0, 0)] == 0.25
    assert s2[(2, 0)] == 1 / 16


def test_zero_steps_is_a_point_mass(srw):
    s = evolve_free(srw, (3, -2), 0, Window((0, 0), 10))
    assert s[(3, -2)] == 1.0 and s.total() == 1.0


@pytest.mark.parametrize("n", [5, 40, 301])
def test_matches_binomial_formula(srw, n):
    # a window the walk cannot leave, so cells are plain p^n
    sl = evolve_free(srw, (0, 0), n, Window((0, 0), n + 2))
    assert sl.leakage == 0.0
    X1, X2 = sl.window.coords
    want = np.vectorize(lambda u, v: srw_closed_form(n, int(u), int(v)))(X1, X2)
    want[~sl.window.mask] = 0.0
    np.testing.assert_allclose(sl.mass, want, rtol=1e-12, atol=1e-300)


def test_start_outside_window(srw):
    with pytest.raises(StartOutsideWindow):
        evolve_free(srw, (10, 0), 3, Window((0, 0), 10))


@pytest.mark.parametrize("name", ["srw", "kings", "longstep"])
def test_mass_conservation_and_leakage(name):
    law = builtin_law(name)
    w = Window((0, 0), 12)
    run = evolve(law, (0, 0), 600, w, snapshots=[100, 300, 600])
    for t, cells in run.snapshots.items():
        assert cells.min() >= 0.0
        assert math.fsum(cells.ravel()) + run.leakage[t] == pytest.approx(1.0, abs=1e-12 * t)
    assert np.all(np.diff(run.leakage) >= 0)
    assert run.leakage[-1] > 0.5  # the small window really leaks


def test_default_window_leakage_is_negligible(srw):
    sl = evolve_free(srw, (0, 0), 4096)
    assert sl.leakage < 1e-8
    assert sl.total() + sl.leakage == pytest.approx(1.0, abs=1e-12 * 4096)


@pytest.mark.parametrize("name", ["srw", "kings", "longstep"])
def test_central_symmetry_is_bitwise(name):
    sl = evolve_free(builtin_law(name), (0, 0), 257)
    assert np.array_equal(sl.mass, sl.mass[::-1, ::-1])


def test_chapman_kolmogorov_on_windows(kings):
    w = Window((0, 0), 20)
    full = evolve_free(kings, (1, 2), 150, w)
    first = evolve_free(kings, (1, 2), 60, w)
    rest = evolve(kings, (0, 0), 90, initial=first)
    np.testing.assert_allclose(rest.final, full.mass, rtol=0, atol=1e-12 * 150)
    assert float(rest.leakage[-1]) == pytest.approx(full.leakage, abs=1e-12 * 150)


def test_gaussian_density_examples(srw):
    assert gaussian_density(srw, 1.0, (0, 0)) == pytest.approx(1 / (2 * math.pi), abs=1e-15)
    assert gaussian_density(srw, 1.0, (1, 1)) == pytest.approx(math.exp(-1) / (2 * math.pi), rel=1e-14)
    ts = np.linspace(1.0, 200.0, 50)  # beyond ||x||^2 / 2 = 1
    vals = [gaussian_density(srw, t, (1, 1)) for t in ts]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        gaussian_density(srw, 0.0, (0, 0))


def test_llt_deviation(srw):
    d2 = llt_deviation(srw, 2)
    assert d2 >= 2 * abs(0.25 - 2 / (2 * math.pi)) - 1e-15
    devs = [llt_deviation(srw, n) for n in (64, 256, 1024)]
    assert devs[0] > devs[1] > devs[2]
    with pytest.raises(WindowTooSmall):
        llt_deviation(srw, 100, Window((0, 0), 20))


def test_csv_and_binary_round_trip(tmp_path, kings):
    sl = evolve_free(kings, (1, -1), 30, Window((1, 0), 9))
    sl.to_binary(tmp_path / "s.lwf")
    back = FieldSlice.from_binary(tmp_path / "s.lwf")
    assert back.window == sl.window and back.n == 30 and back.leakage == sl.leakage
    assert np.array_equal(back.mass, sl.mass)
    raw = (tmp_path / "s.lwf").read_bytes()
    assert raw[:4] == b"LWF1"
    assert len(raw) == 4 + 8 * 5 + 8 * sl.mass.size

    sl.to_csv(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "x1,x2,value"
    assert len(rows) - 1 == int(sl.window.mask.sum())
    total = math.fsum(float(r.split(",")[2]) for r in rows[1:])
    assert total == pytest.approx(sl.total(), abs=1e-15)


_SCRIPT = """
import hashlib, sys
from latwalk.kernels import evolve_free
from latwalk.model import builtin_law
sl = evolve_free(builtin_law(sys.argv[1]), (2, 1), 900)
print(hashlib.sha256(sl.mass.tobytes()).hexdigest(), repr(sl.leakage))
"""


@pytest.mark.parametrize("name", ["srw", "kings"])
def test_output_independent_of_thread_count(name):
    digests = set()
    for threads in ("1", "3"):
        env = dict(os.environ, NUMBA_NUM_THREADS=threads, LATWALK_THREADS=threads)
        out = subprocess.run([sys.executable, "-c", _SCRIPT, name], env=env, capture_output=True, text=True, check=True)
        digests.add(out.stdout)
    assert len(digests) == 1
