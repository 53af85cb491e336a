"""NumPy reference implementations of the hot kernels.

These are the import-time fallback when the compiled extension is missing
and the ground truth the extension is tested against.
"""

import numpy as np


def composite_kernel(t1, t2, theta2, l_p, period, l_e):
    """Composite covariance theta^2 * k_E * k_P between two time grids.

    Returns the len(t1) x len(t2) matrix without any noise term.
    """
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    d = t1[:, None] - t2[None, :]
    k_p = np.exp(-2.0 * np.sin(np.pi * d / period) ** 2 / (l_p * l_p))
    k_e = np.exp(-np.abs(d) / l_e)
    return theta2 * k_e * k_p


def rk4_path(a_hat, forcing, b_meal, rates, is_row, is_col, is_coeff,
             x_basal_col, kis, h, x0):
    """Integrate one control interval of the plant with classic RK4.

    dx/dt = A_hat x + forcing + b_meal * rate(t)
            + e_is_row * is_coeff * (k_IS(t) - 1) * (x[is_col] + x_basal_col)

    ``kis`` samples k_IS(t) on the half-step grid t0 + m*h/2, m = 0..2*nsub,
    so each RK4 stage reads an exact sample.  ``rates`` holds one meal rate
    per substep (midpoint sample); the rate is piecewise constant and its
    edges align with substep boundaries, so holding it fixed across the four
    stages keeps the integrator at full order through pulse edges.
    Returns the state after nsub = (len(kis) - 1) // 2 substeps.
    """
    x = np.array(x0, dtype=float)
    nsub = (len(kis) - 1) // 2

    def deriv(xv, k_is, rate):
        dx = a_hat @ xv + forcing + b_meal * rate
        dx[is_row] += is_coeff * (k_is - 1.0) * (xv[is_col] + x_basal_col)
        return dx

    for j in range(nsub):
        m = 2 * j
        k1 = deriv(x, kis[m], rates[j])
        k2 = deriv(x + 0.5 * h * k1, kis[m + 1], rates[j])
        k3 = deriv(x + 0.5 * h * k2, kis[m + 1], rates[j])
        k4 = deriv(x + h * k3, kis[m + 2], rates[j])
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x
