"""Hub-height turbulent wind from the Kaimal point spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from windfault.errors import InvalidArgument

# IEC 61400-1 longitudinal integral scale for hub heights above 60 m
KAIMAL_LENGTH = 8.1 * 42.0


def kaimal_psd(f, mean_speed, sigma, length_scale=KAIMAL_LENGTH):
    """One-sided Kaimal spectrum S(f) in (m/s)^2/Hz."""
    f = np.asarray(f, dtype=float)
    lv = length_scale / mean_speed
    return 4.0 * sigma**2 * lv / (1.0 + 6.0 * f * lv) ** (5.0 / 3.0)


@dataclass
class WindProfile:
    samples: np.ndarray
    dt: float
    seed: int
    target_mean: float
    turbulence_intensity: float

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt

    def at(self, t: float) -> float:
        """Zero-order-hold lookup."""
        i = min(int(t / self.dt + 1e-9), len(self.samples) - 1)
        return float(self.samples[i])


def generate_wind(seed, duration_s, dt, mean_speed, turbulence_intensity,
                  length_scale=KAIMAL_LENGTH) -> WindProfile:
    """Spectral synthesis: Kaimal amplitudes, uniform random phases, inverse FFT.

    The series is rescaled afterwards so its sample mean and standard deviation
    hit ``mean_speed`` and ``turbulence_intensity * mean_speed`` exactly.
    """
    if not duration_s > 0 or not dt > 0 or not mean_speed > 0:
        raise InvalidArgument("duration, dt and mean speed must be positive")
    if turbulence_intensity < 0:
        raise InvalidArgument("turbulence intensity must be non-negative")
    n = int(round(duration_s / dt))
    if n < 2:
        raise InvalidArgument("wind series needs at least two samples")
    if turbulence_intensity == 0:
        return WindProfile(np.full(n, float(mean_speed)), dt, seed, mean_speed, 0.0)

    rng = np.random.default_rng(seed)
    sigma = turbulence_intensity * mean_speed
    freqs = np.fft.rfftfreq(n, dt)
    df = freqs[1]
    amp = np.zeros_like(freqs)
    amp[1:] = np.sqrt(2.0 * kaimal_psd(freqs[1:], mean_speed, sigma, length_scale) * df)
    if n % 2 == 0:
        amp[-1] /= np.sqrt(2.0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=freqs.shape)
    spectrum = amp * np.exp(1j * phases) * (n / 2.0)
    spectrum[0] = 0.0
    fluct = np.fft.irfft(spectrum, n=n)
    fluct -= fluct.mean()
    fluct *= sigma / fluct.std()
    return WindProfile(mean_speed + fluct, dt, seed, mean_speed, turbulence_intensity)
