"""Pure-Python kernels. Operation order mirrors ``_core.pyx`` exactly."""

import math

import numpy as np


def quantize(theta, resolution):
    if resolution <= 0.0:
        return theta
    return math.floor(theta / resolution + 0.5) * resolution


def parasitic_torque(theta, omega, k_c, theta_c, c0, c1, rho_s, v_eps):
    dtheta = theta - theta_c
    cable = -k_c * dtheta if dtheta < 0.0 else 0.0
    mag = c0 + c1 * math.cos(theta)
    if v_eps > 0.0:
        s = math.tanh(omega / v_eps)
        if -v_eps < omega < v_eps:
            mag = mag * rho_s
    else:
        s = 1.0 if omega > 0.0 else (-1.0 if omega < 0.0 else 0.0)
    return cable - mag * s


def relay_scan(x, deadband=0.0, initial=0.0):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.size)
    last = initial
    for k in range(x.size):
        v = x[k]
        if v != v or v in (math.inf, -math.inf):
            raise ValueError(f"non-finite relay input at index {k}")
        if v > deadband:
            last = 1.0
        elif v < -deadband:
            last = -1.0
        out[k] = last
    return out


def simulate(theta_d, u_ff, theta0, omega0, plant, gains, substeps, bound):
    """Closed loop: quantized measurement, PD + feedforward, clip, semi-implicit Euler.

    ``plant`` = (m, jxx, d, y, z, g, tilt, k_c, theta_c, c0, c1, rho_s, v_eps,
    input_limit, resolution, ts); ``gains`` = (kp, kd).
    Returns (theta, theta_meas, u_fb, u_applied, fail_index) with fail_index -1 on success.
    """
    (m, jxx, d, y, z, g, tilt, k_c, theta_c, c0, c1, rho_s, v_eps,
     input_limit, resolution, ts) = plant
    kp, kd = gains
    n = len(theta_d)
    theta_out = np.zeros(n)
    meas_out = np.zeros(n)
    ufb_out = np.zeros(n)
    uapp_out = np.zeros(n)
    big_m = m * (y * y + z * z) + jxx
    grav_y = m * g * y * math.cos(tilt)
    grav_z = m * g * z * math.cos(tilt)
    h = ts / substeps
    th = theta0
    om = omega0
    e_prev = 0.0
    for k in range(n):
        meas = quantize(th, resolution)
        e = theta_d[k] - meas
        if k == 0:
            e_prev = e
        u_fb = kp * e + kd * (e - e_prev) / ts
        e_prev = e
        u = u_ff[k] + u_fb
        if u > input_limit:
            u = input_limit
        elif u < -input_limit:
            u = -input_limit
        theta_out[k] = th
        meas_out[k] = meas
        ufb_out[k] = u_fb
        uapp_out[k] = u
        for _ in range(substeps):
            tau = parasitic_torque(th, om, k_c, theta_c, c0, c1, rho_s, v_eps)
            acc = (u - (grav_y * math.cos(th) - grav_z * math.sin(th)) - d * om + tau) / big_m
            om = om + h * acc
            th = th + h * om
        if not (abs(th) <= bound and abs(om) < math.inf):
            return theta_out, meas_out, ufb_out, uapp_out, k
    return theta_out, meas_out, ufb_out, uapp_out, -1
