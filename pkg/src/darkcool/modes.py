"""Crystal mode spectra: file format, validation and synthetic generators.

File format (``#`` starts a comment, blank lines ignored)::

    N
    f_0 f_1 ... f_{M-1}        # mode frequencies omega/(2 pi) in MHz, COM first
    K_00 ... K_0(N-1)          # M rows of N profile amplitudes
    ...

or ``profiles: none`` instead of the profile rows. A spectrum may retain
fewer modes than ions (M <= N); column normalization is only enforced when
the profile matrix is square.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgument, MissingProfiles, ValidationError

TWO_PI = 2.0 * math.pi
TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ModeSpectrum:
    N: int
    freqs_mhz: tuple  # omega_nu / (2 pi), MHz
    profiles: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "freqs_mhz", tuple(float(f) for f in self.freqs_mhz))
        if self.profiles is not None:
            K = np.array(self.profiles, dtype=float)
            K.setflags(write=False)
            object.__setattr__(self, "profiles", K)

    @property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies in rad/us."""
        return TWO_PI * np.asarray(self.freqs_mhz)

    @property
    def M(self):
        return len(self.freqs_mhz)

    def require_profiles(self):
        if self.profiles is None:
            raise MissingProfiles("operation needs mode profile amplitudes K but the spectrum has none")
        return self.profiles

    def validate(self, omega_m: float | None = None):
        """Check every invariant; raises ValidationError naming the breach."""
        N, M = self.N, self.M
        if int(N) != N or N < 1:
            raise ValidationError(f"ion count must be a positive integer, got {N}")
        if M < 1 or M > N:
            raise ValidationError(f"number of modes {M} must lie in 1..N={N}")
        f = np.asarray(self.freqs_mhz)
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise ValidationError("mode frequencies must be finite and positive")
        if omega_m is not None:
            err = abs(self.frequencies[0] - omega_m) / omega_m
            if err > 1e-9:
                raise ValidationError(
                    f"COM frequency differs from omega_m: relative deviation {err:.3e}")
        if np.any(f[1:] > f[0] * (1 + 1e-12)):
            warnings.warn("a non-COM mode lies above the COM frequency", stacklevel=2)
        K = self.profiles
        if K is None:
            return self
        if K.shape != (M, N):
            raise ValidationError(f"profile matrix has shape {K.shape}, expected {(M, N)}")
        if not np.all(np.isfinite(K)):
            raise ValidationError("profile amplitudes must be finite")
        com = np.max(np.abs(K[0] - 1.0 / math.sqrt(N)))
        if com > TOL:
            raise ValidationError(f"COM row must equal 1/sqrt(N): max deviation {com:.3e}")
        rows = np.max(np.abs(K @ K.T - np.eye(M)))
        if rows > TOL:
            raise ValidationError(f"profile rows are not orthonormal: max |K K^T - I| = {rows:.3e}")
        if M == N:
            cols = np.max(np.abs(np.sum(K ** 2, axis=0) - 1.0))
            if cols > TOL:
                raise ValidationError(
                    f"column normalization sum_nu K^2 = 1 violated by {cols:.3e}")
        return self


def _cosine_basis(N, M):
    j = np.arange(N)
    K = np.empty((M, N))
    K[0] = 1.0 / math.sqrt(N)
    for nu in range(1, M):
        K[nu] = math.sqrt(2.0 / N) * np.cos(math.pi * nu * (j + 0.5) / N)
    return K


def synth_modes(kind: str, N: int, omega_m: float, bandwidth: float = 0.0) -> ModeSpectrum:
    """Synthetic spectra for tests and analytic sums.

    ``com_only`` keeps the COM mode alone; ``degenerate`` puts all N modes at
    omega_m; ``uniform_band`` spreads them down to omega_m - bandwidth.
    """
    if int(N) != N or N < 1:
        raise InvalidArgument(f"N must be a positive integer, got {N}")
    N = int(N)
    if omega_m <= 0:
        raise InvalidArgument("omega_m must be positive")
    if kind == "com_only":
        w = [omega_m]
    elif kind == "degenerate":
        w = [omega_m] * N
    elif kind == "uniform_band":
        if bandwidth < 0:
            raise InvalidArgument("bandwidth must be >= 0")
        if bandwidth >= omega_m:
            raise InvalidArgument("bandwidth >= omega_m would give non-positive frequencies")
        step = bandwidth / (N - 1) if N > 1 else 0.0
        w = [omega_m - nu * step for nu in range(N)]
    else:
        raise InvalidArgument(f"unknown synthetic spectrum {kind!r}")
    spec = ModeSpectrum(N, [x / TWO_PI for x in w], _cosine_basis(N, len(w)))
    return spec.validate()


def _parse_floats(text, lineno):
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise FormatError(str(exc), line=lineno) from None


def load_modes(path) -> ModeSpectrum:
    lines = []
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                lines.append((no, text))
    if len(lines) < 2:
        raise FormatError("mode file needs at least the ion count and frequency lines",
                          line=lines[-1][0] if lines else 1)
    no, text = lines[0]
    try:
        N = int(text)
    except ValueError:
        raise FormatError(f"ion count must be an integer, got {text!r}", line=no) from None
    no, text = lines[1]
    freqs = _parse_floats(text, no)
    rest = lines[2:]
    if len(rest) == 1 and rest[0][1].replace(" ", "").lower() == "profiles:none":
        K = None
    else:
        rows = []
        for no, text in rest:
            row = _parse_floats(text, no)
            if len(row) != N:
                raise FormatError(f"expected {N} profile entries, got {len(row)}", line=no)
            rows.append(row)
        if len(rows) != len(freqs):
            ln = rest[-1][0] if rest else lines[1][0]
            raise FormatError(f"{len(freqs)} frequencies but {len(rows)} profile rows",
                              line=ln)
        K = np.array(rows)
    return ModeSpectrum(N, freqs, K).validate()


def save_modes(spec: ModeSpectrum, path) -> None:
    out = [str(spec.N), " ".join(repr(f) for f in spec.freqs_mhz)]
    if spec.profiles is None:
        out.append("profiles: none")
    else:
        out += [" ".join(repr(float(x)) for x in row) for row in spec.profiles]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    os.replace(tmp, path)
