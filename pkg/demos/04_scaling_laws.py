# %% [markdown]
# # Scaling laws of a fixed pulse
#
# We keep the stored CNOT fixed and change one thing at a time, with no
# reoptimisation.
#
# * Sample rate. Time shrinks by r and exchange, gradients and bandwidth grow
#   by r. Quasistatic charge noise is unaffected. Gradient noise falls like
#   r^-2. Fast noise grows like r^(1-α).
# * Noise strength. Every term is quadratic in its noise amplitude.
# * Residual middle exchange on an X90 pulse that was not designed for it.

# %%
import numpy as np

from stq.experiments import loglog_slope, stored_pulse, sweep_point
from stq.fidelity import average_gate_fidelity
from stq.propagator import evolve
from stq.pulses import render

program, config = stored_pulse("cnot_gaas")
config = config.merged(n_real=200)

rates = [0.5, 1.0, 2.0, 5.0]
rows = [sweep_point("samplerate", r, program, config, 0.7) for r in rates]
for r, row in zip(rates, rows):
    print(f"fs={r:4.1f}  I_s={row['i_s']:.2e}  I_b={row['i_b']:.2e}  I_f={row['i_f']:.2e}")
for key in ("i_s", "i_b", "i_f"):
    print(key, "slope", round(loglog_slope(rates, [row[key] for row in rows]), 2))

# %% [markdown]
# ## Noise strength

# %%
model, noise, grads, target = config.resolve()
scale = np.array([0.1, 0.3, 1.0])
rows = [sweep_point("sigma_eps", s * noise.sigma_eps[0], program, config, 0.7) for s in scale]
print("I_s vs sigma_eps slope", round(loglog_slope(scale, [r["i_s"] for r in rows]), 2))

# %% [markdown]
# ## Residual J23
#
# The uncompensated X90 was optimised with J23 = 0. Any constant residual
# coupling then adds a conditional phase, and the error grows as J23². The
# compensated pulse was optimised with J23 = 0.005 rad/ns and E_c = 350 μeV
# in the model.

# %%
x90, xconfig = stored_pulse("x90_uncompensated")
xmodel, _, xgrads, xtarget = xconfig.resolve()
tr = render(x90, xconfig.kernel(x90.fs))
j23 = np.logspace(np.log10(5e-4), np.log10(5e-3), 5)
err = [1 - average_gate_fidelity(xtarget.matrix,
                                 evolve(tr, xgrads, xmodel.replace(residual_j23=j), xtarget).v_c)
       for j in j23]
for j, e in zip(j23, err):
    print(f"J23={j:.1e}  systematic infidelity {e:.2e}")
print("slope", round(loglog_slope(j23, err), 3))

comp, cconfig = stored_pulse("x90_compensated")
cmodel, _, cgrads, ctarget = cconfig.resolve()
v = evolve(render(comp, cconfig.kernel(comp.fs)), cgrads, cmodel, ctarget).v_c
print("compensated pulse, systematic infidelity", 1 - average_gate_fidelity(ctarget.matrix, v))
