"""Shared frozen reference values.

The single-site steady-state constants below were computed from the
closed-form expressions at h0 = gamma = 1 (quartic in v_x solved exactly;
u = (sqrt(5) - 1)/4) and independently confirmed by long fixed-step
integration of the covariance flow from several initial conditions; they
are frozen here as literals so the tests do not depend on the package's
own implementation of the same formulas.
"""

# steady-state covariances at h0 = gamma = 1
VX_STEADY = 0.3930756888787117
VP_STEADY = 0.8789439606353574
U_STEADY = 0.3090169943749474  # (sqrt(5) - 1)/4

# memory time tau = 1/(2 gamma v_x) and the filter's decay/frequency
TAU_STEADY = 1.2720196495140688
DECAY_STEADY = 0.7861513777574234  # 1/tau = 2 gamma v_x
FREQ_STEADY = 1.2720196495140688  # gamma h0 tau

# record-averaged (unconditional) x variance at t = 10 from vacuum:
# (1 + t)/2 - sin(20)/4
UNCOND_VAR_T10 = 5.271763687318093
