"""Published reference design values for the four-tank benchmark.

These are the externally supplied numbers an operator may inject instead of
letting the pipeline compute its own: the prestabilizing gain and terminal
cost, the terminal level, the certified Lipschitz tables, the first tube
cross-section, and the batch-study disturbance grid and setpoint schedule.
"""
import numpy as np

K_REF = np.array([
    [-0.2117, -1.0663, 1.0632, -2.2400],
    [-2.9453, 0.3358, -2.9568, 1.5166],
])

P_REF = np.array([
    [23.7301, -4.6424, 10.2060, -8.5938],
    [-4.6425, 8.8324, -4.7139, 3.8709],
    [10.2060, -4.7139, 12.6887, -7.8934],
    [-8.5938, 3.8709, -7.8934, 9.4075],
])

RHO_REF = 0.1273

Q_REF = np.diag([5.0, 2.5, 1.0, 1.0])
R_REF = 0.01 * np.eye(2)
T_REF = 1.0e4 * np.eye(2)
N_P_REF = 4

LX_TABLE = np.array([
    [0.9388, 0.0250, 0.1375, 0.0500],
    [0.0850, 0.9388, 0.0795, 0.1600],
    [0.1225, 0.0145, 0.8375, 0.0750],
    [0.0125, 0.0600, 0.0600, 0.8500],
])

LV_TABLE = np.array([
    [0.0225, 0.0250],
    [0.0500, 0.0350],
    [0.0100, 0.1700],
    [0.1500, 0.0100],
])

LW_TABLE = np.array([
    [0.2400, 0.0125],
    [0.0088, 0.2638],
    [0.00006, 0.2675],
    [0.2450, 0.0125],
])

F0_TABLE = np.array([0.0019, 0.0020, 0.0020, 0.0019])

# tabulated tube half-widths for j = 0..4 (rows: state dimensions)
F_TABLE = np.array([
    [0.0019, 0.0022, 0.0025, 0.0028, 0.0032],
    [0.0020, 0.0025, 0.0031, 0.0036, 0.0041],
    [0.0020, 0.0021, 0.0022, 0.0023, 0.0025],
    [0.0019, 0.0019, 0.0020, 0.0020, 0.0021],
])

R_TABLE = np.array([
    [0.0, 0.0019, 0.0041, 0.0066, 0.0094],
    [0.0, 0.0020, 0.0046, 0.0076, 0.0112],
    [0.0, 0.0020, 0.0041, 0.0063, 0.0086],
    [0.0, 0.0019, 0.0038, 0.0058, 0.0078],
])

W_AXIS = [-0.00500, -0.00390, -0.00280, -0.00170, -0.00055,
          0.00055, 0.0017, 0.00280, 0.00390, 0.00500]

X0_REF = np.array([0.2837, 0.2943, 0.2168, 0.2864])

# four 25-minute segments; the last target is not reachable
SCHEDULE_REF = [
    (0.0, (0.65, 0.65)),
    (25.0, (0.35, 0.35)),
    (50.0, (0.60, 0.75)),
    (75.0, (0.90, 0.75)),
]
DURATION_REF_MIN = 100.0
