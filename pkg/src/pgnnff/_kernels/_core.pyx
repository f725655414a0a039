# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Keep operation order identical to ``_fallback.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, tanh, floor, fabs, isfinite, INFINITY

cnp.import_array()


cdef inline double _quantize(double theta, double resolution) noexcept nogil:
    if resolution <= 0.0:
        return theta
    return floor(theta / resolution + 0.5) * resolution


cdef inline double _parasitic(double theta, double omega, double k_c, double theta_c,
                              double c0, double c1, double rho_s, double v_eps) noexcept nogil:
    cdef double dtheta = theta - theta_c
    cdef double cable = 0.0
    cdef double mag, s
    if dtheta < 0.0:
        cable = -k_c * dtheta
    mag = c0 + c1 * cos(theta)
    if v_eps > 0.0:
        s = tanh(omega / v_eps)
        if -v_eps < omega < v_eps:
            mag = mag * rho_s
    else:
        if omega > 0.0:
            s = 1.0
        elif omega < 0.0:
            s = -1.0
        else:
            s = 0.0
    return cable - mag * s


def quantize(double theta, double resolution):
    return _quantize(theta, resolution)


def parasitic_torque(double theta, double omega, double k_c, double theta_c,
                     double c0, double c1, double rho_s, double v_eps):
    return _parasitic(theta, omega, k_c, theta_c, c0, c1, rho_s, v_eps)


def relay_scan(x, double deadband=0.0, double initial=0.0):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef double last = initial
    cdef double v
    cdef Py_ssize_t k
    for k in range(n):
        v = xv[k]
        if not isfinite(v):
            raise ValueError(f"non-finite relay input at index {k}")
        if v > deadband:
            last = 1.0
        elif v < -deadband:
            last = -1.0
        ov[k] = last
    return out


def simulate(theta_d, u_ff, double theta0, double omega0, tuple plant, tuple gains,
             int substeps, double bound):
    cdef const double[::1] td = np.ascontiguousarray(theta_d, dtype=np.float64)
    cdef const double[::1] ff = np.ascontiguousarray(u_ff, dtype=np.float64)
    cdef double m, jxx, d, y, z, g, tilt, k_c, theta_c, c0, c1, rho_s, v_eps
    cdef double input_limit, resolution, ts
    (m, jxx, d, y, z, g, tilt, k_c, theta_c, c0, c1, rho_s, v_eps,
     input_limit, resolution, ts) = plant
    cdef double kp = gains[0]
    cdef double kd = gains[1]
    cdef Py_ssize_t n = td.shape[0]
    theta_out = np.zeros(n)
    meas_out = np.zeros(n)
    ufb_out = np.zeros(n)
    uapp_out = np.zeros(n)
    cdef double[::1] tv = theta_out
    cdef double[::1] mv = meas_out
    cdef double[::1] fv = ufb_out
    cdef double[::1] av = uapp_out
    cdef double big_m = m * (y * y + z * z) + jxx
    cdef double grav_y = m * g * y * cos(tilt)
    cdef double grav_z = m * g * z * cos(tilt)
    cdef double h = ts / substeps
    cdef double th = theta0
    cdef double om = omega0
    cdef double e_prev = 0.0
    cdef double meas, e, u_fb, u, tau, acc
    cdef Py_ssize_t k
    cdef int j
    cdef Py_ssize_t fail = -1
    with nogil:
        for k in range(n):
            meas = _quantize(th, resolution)
            e = td[k] - meas
            if k == 0:
                e_prev = e
            u_fb = kp * e + kd * (e - e_prev) / ts
            e_prev = e
            u = ff[k] + u_fb
            if u > input_limit:
                u = input_limit
            elif u < -input_limit:
                u = -input_limit
            tv[k] = th
            mv[k] = meas
            fv[k] = u_fb
            av[k] = u
            for j in range(substeps):
                tau = _parasitic(th, om, k_c, theta_c, c0, c1, rho_s, v_eps)
                acc = (u - (grav_y * cos(th) - grav_z * sin(th)) - d * om + tau) / big_m
                om = om + h * acc
                th = th + h * om
            if not (fabs(th) <= bound and fabs(om) < INFINITY):
                fail = k
                break
    return theta_out, meas_out, ufb_out, uapp_out, fail
