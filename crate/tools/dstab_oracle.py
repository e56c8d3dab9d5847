"""High-precision reference values for the overshoot region geometry.

Evaluates the damping/overshoot relation, the spiral crossing at a = 0.95
and the ellipse/cone parameters with 50 significant digits.
"""
import sys
from mpmath import mp, mpf, log, sqrt, pi, acos, tan, exp, cos, sin, atan, findroot

mp.dps = 50


def region(os_bar, a=mpf("0.95")):
    r = mpf(os_bar) / 100
    xi = -log(r) / sqrt(pi**2 + log(r) ** 2)
    phi = acos(xi)
    a0 = -exp(-pi / tan(phi))
    a_se = (1 + a0) / 2
    a_e = (1 - a0) / 2
    c = 1 / tan(phi)
    w = findroot(lambda w: exp(-c * w) * cos(w) - a, mpf("0.05"))
    b = exp(-c * w) * sin(w)
    b_e = b * a_e / sqrt(a_e**2 - (a - a_se) ** 2)
    gamma = atan(b / (1 - a))
    # classical: OS = 100 exp(-pi xi / sqrt(1 - xi^2))
    return dict(xi=xi, phi=phi, a0=a0, a_se=a_se, a_e=a_e, omega=w, b=b, b_e=b_e, gamma=gamma)


if __name__ == "__main__":
    for os_bar in sys.argv[1:] or ["5"]:
        vals = region(os_bar)
        print(f"os_bar = {os_bar}")
        for k, v in vals.items():
            print(f"  {k:6s} = {mp.nstr(v, 20)}")
