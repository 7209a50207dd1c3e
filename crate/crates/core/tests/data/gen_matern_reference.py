"""Arbitrary-precision Matérn reference values (mpmath, 40 digits).

Regenerate with: python3 gen_matern_reference.py > matern_reference.csv
"""
import random
import mpmath as mp

mp.mp.dps = 40
rng = random.Random(20181)


def matern(r, nu):
    r = mp.mpf(r)
    nu = mp.mpf(nu)
    z = mp.sqrt(2 * nu) * r
    return mp.power(2, 1 - nu) / mp.gamma(nu) * mp.power(z, nu) * mp.besselk(nu, z)


print("r,nu,value")
pairs = [(0.7, 2.3)]
while len(pairs) < 50:
    nu = float(mp.nstr(mp.exp(rng.uniform(mp.log(0.05), mp.log(30.0))), 6))
    if abs(nu - round(nu - 0.5) - 0.5) < 1e-9:
        continue
    r = float(mp.nstr(mp.exp(rng.uniform(mp.log(1e-3), mp.log(6.0))), 6))
    pairs.append((r, nu))
for r, nu in pairs:
    print(f"{r!r},{nu!r},{mp.nstr(matern(r, nu), 25)}")
