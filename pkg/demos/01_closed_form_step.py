"""How one model step is solved, and why long steps are split.

Run:  python3 demos/01_closed_form_step.py

A linear system dx/dt = A x + b with A, b frozen over the step has the
exact solution x(h) = e^{hA} x + (int_0^h e^{tA} dt) b.  Both factors come
from a single truncated Taylor series of the block matrix [[hA, I], [0, 0]].
The series stops after ten terms at most, which is plenty while the entries
of hA are small and hopeless when they are not.  The "auto" policy halves
the step until the balanced norm of hA is at most 0.5.
"""
import numpy as np

from diffgreenhouse import linalg

rng = np.random.default_rng(0)
n = 6
A0 = rng.normal(size=(n, n))
b = rng.normal(size=n)
x = rng.normal(size=n)


def exact(A):
    M = np.zeros((n + 1, n + 1))
    M[:n, :n], M[:n, n] = A, b
    E = linalg.expm_reference(M)
    return E[:n, :n] @ x + E[:n, n]


print(f"{'max |hA|':>9} {'literal error':>14} {'auto error':>11} {'substeps':>9}")
for scale in (0.05, 0.3, 1.0, 3.0, 10.0):
    A = A0 * scale / np.abs(A0).max()
    ref = exact(A)
    lit = linalg.ode_step(A, b, x, 1.0, policy="literal")
    auto = linalg.ode_step(A, b, x, 1.0, policy="auto")
    s = int(linalg.substeps_for(A))
    err = lambda v: np.abs(v - ref).max() / np.abs(ref).max()
    print(f"{scale:9.2f} {err(lit):14.2e} {err(auto):11.2e} {s:9d}")

# The gradient of a step is the gradient of the series actually evaluated.
from diffgreenhouse import autodiff as ad

A = A0 * 0.3 / np.abs(A0).max()


def first_channel(scale):
    return linalg.ode_step(A * scale[0], b, x, 1.0)[0]


_, g = ad.run_with_gradient(first_channel, np.array([1.0]))
fd = ad.finite_difference_gradient(lambda s: ad.value(first_channel(s)), np.array([1.0]), step=1e-6)
print(f"\nd x_0 / d scale: reverse mode {g[0]:.10f}, central difference {fd[0]:.10f}")
