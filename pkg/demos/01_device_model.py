# %% [markdown]
# # Two exchange-coupled singlet-triplet qubits
#
# A walk through the device model. We go from detuning to exchange, then to the
# six-level Hamiltonian, then through the AWG filter to a propagator.

# %%
import numpy as np

from stq import (DeviceModel, MagneticGradients, PulseProgram, default_impulse_response, evolve,
                 exchange_from_detuning, hamiltonian_total, render, target_gate_matrix)
from stq.pulses import rise_time

model = DeviceModel()
grads = MagneticGradients()
print(model)
print(grads)

# %% [markdown]
# Exchange is exponential in detuning, so it can only be dialled down to
# J0·exp(ε_min/ε0), never switched off.

# %%
for eps in (model.eps_min, -0.5, 0.0, model.eps_max):
    print(f"eps = {eps:+.3f} mV  ->  J = {exchange_from_detuning(eps, model):.4f} rad/ns")

# %% [markdown]
# The Hamiltonian acts on the m_s = 0 states. The first four are the
# computational states |00>, |01>, |10>, |11>. The last two can only be
# reached through the middle exchange J23, which makes them leakage states.

# %%
np.set_printoptions(precision=3, suppress=True, linewidth=120)
print(hamiltonian_total(-0.2, model.eps_min, -0.2, grads, model))

# %% [markdown]
# ## Rendering
#
# Samples are held for 1/fs. The held trace is then convolved with the AWG
# impulse response on a 20x finer grid. The default response is critically
# damped, with a 1 ns rise time at 1 GS/s.

# %%
kernel = default_impulse_response(model.fs)
print("rise time", round(rise_time(kernel), 3), "ns;", kernel.kernel.size, "taps")

samples = np.full((3, 12), model.eps_min)
samples[0, 2:6] = 0.3        # a J12 pulse
samples[2, 5:8] = 0.1        # then J34
prog = PulseProgram(samples, model.fs)
tr = render(prog, kernel)
print("rendered steps", tr.n_steps, "duration", round(tr.duration, 2), "ns")
print("peak J12 after filtering", exchange_from_detuning(tr.eps[0].max(), model).round(3))

# %% [markdown]
# ## Propagation
#
# `evolve` returns the full 6x6 propagator. It also returns the computational
# block V_c and the closest unitary U_c, phase-aligned with the target. The
# coherent leakage 1 - tr(V_c^† V_c)/4 is tiny here. J23 sits at its minimum
# of a few mrad/ns, and ΔB23 = 7 rad/ns detunes the leakage states.

# %%
res = evolve(tr, grads, model, target_gate_matrix("cnot"))
print("L_c =", res.l_c)
print("|Delta| to CNOT =", round(res.delta_norm, 3))
