"""Scratch: rough-Heston European put via fractional Riccati + Lewis transform."""
import math
import numpy as np

H, lam, nu, V0, theta = 0.1, 0.3, 0.3, 0.02, 0.02
r, s0, K, T, rho = 0.06, 100.0, 100.0, 1.0, -0.7
alpha = H + 0.5


def cf_exponent(z, n_steps, gamma_norm):
    """phi(z) = E exp(i z (X_T - X_0 - rT)); z complex array."""
    c = 1.0 / math.gamma(alpha) if gamma_norm else 1.0
    dt = T / n_steps
    z = np.asarray(z, dtype=complex)

    def F(w):
        return -0.5 * (z * z + 1j * z) + (1j * z * rho * nu - lam) * w + 0.5 * nu**2 * w * w

    # fractional Adams predictor-corrector on psi(t) = c * I^alpha-style conv of F(psi)
    psi = np.zeros((n_steps + 1,) + z.shape, dtype=complex)
    Fv = np.zeros_like(psi)
    Fv[0] = F(psi[0])
    # rectangle weights b[k] = ((k+1)^a - k^a) * dt^a / a  (lag k)
    kk = np.arange(n_steps + 1, dtype=float)
    b = np.diff((kk * dt) ** alpha) / alpha  # b[k] for lag k+1
    for n in range(n_steps):
        t_hist = b[n::-1]  # weight for node j: b[n-j]
        pred = c * np.tensordot(t_hist, Fv[: n + 1], axes=(0, 0))
        # corrector: trapezoidal fractional weights
        j = np.arange(1, n + 1, dtype=float)
        a0 = (n ** (alpha + 1) - (n - alpha) * (n + 1) ** alpha) * dt**alpha / (alpha * (alpha + 1))
        aj = ((n - j + 2) ** (alpha + 1) + (n - j) ** (alpha + 1) - 2 * (n - j + 1) ** (alpha + 1)) * dt**alpha / (alpha * (alpha + 1))
        an1 = dt**alpha / (alpha * (alpha + 1))
        acc = a0 * Fv[0]
        if n >= 1:
            acc = acc + np.tensordot(aj, Fv[1: n + 1], axes=(0, 0))
        acc = acc + an1 * F(pred)
        psi[n + 1] = c * acc
        Fv[n + 1] = F(psi[n + 1])
    # exponent = V0 * int F(psi) + lam*theta * int psi   (trapezoid)
    intF = np.trapz(Fv, dx=dt, axis=0)
    intPsi = np.trapz(psi, dx=dt, axis=0)
    return np.exp(V0 * intF + lam * theta * intPsi)


def lewis_put(n_steps=1500, gamma_norm=True, umax=120.0, nu_grid=1200):
    k = math.log(s0 * math.exp(r * T) / K)  # log forward moneyness
    u = np.linspace(1e-6, umax, nu_grid)
    phi = cf_exponent(u - 0.5j, n_steps, gamma_norm)
    integrand = np.real(np.exp(1j * u * k) * phi) / (u**2 + 0.25)
    call = s0 - math.sqrt(s0 * K) * math.exp(-r * T) / math.pi * np.trapz(integrand, u)
    put = call - s0 + K * math.exp(-r * T)
    return put


if __name__ == "__main__":
    for gn in (True, False):
        for n in (800, 1600):
            print(f"gamma_norm={gn} n={n}: put = {lewis_put(n_steps=n, gamma_norm=gn):.4f}")
