"""
How large must n and B be before the stability budget says anything?
=====================================================================

Sweep the finite-B stability budget over training sizes and tree counts
for a few growth rates of E[max Y^2].
"""

from rfstab.theory import EXPECTED_MAX_SCALINGS, budget_sweep, eta, power_schedule

for n in (10, 100, 1000, 10_000):
    print(f"n={n:>6}  eta={eta(n):.4f}")

ns = [10**k for k in range(2, 8)]
Bs = [100, 1000, 10_000]
for scaling in ("bounded", "log", "harmonic", "power"):
    rows = budget_sweep(
        ns,
        Bs,
        expected_max_sq=EXPECTED_MAX_SCALINGS[scaling],
        eps2=lambda n: 0.1,
        lam=lambda n: 2.0,
    )
    first = next((r for r in rows if not r["vacuous"]), None)
    where = f"n={first['n']}, B={first['B']}" if first else "never on this grid"
    print(f"{scaling:<9} first informative cell: {where}")

# a lambda growing with n, for tails heavier than sub-gamma
rows = budget_sweep(ns, [10_000], EXPECTED_MAX_SCALINGS["log"], lambda n: 0.1, power_schedule(0.1, 1.5))
for r in rows:
    total = "vacuous" if r["vacuous"] else f"eps={r['eps_total']:.3f} nu={r['nu_total']:.3f}"
    print(f"n={r['n']:>9}  lambda={r['lambda']:.2f}  {total}")
