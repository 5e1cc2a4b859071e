IVA_G = 0
FIXED = 1
PT = 2
AR = 3
TF = 4

ARGMIN = 0
ARGMAX = 1

OK = 0
STATUS_ILL_CONDITIONED = 1
STATUS_NONFINITE = 2

# projected-gradient norm below which a step is skipped
STEP_FLOOR = 1e-14
