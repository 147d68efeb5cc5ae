import math

import numpy as np
import pytest

from darkcool.errors import FormatError, InvalidArgument, MissingProfiles, ValidationError
from darkcool.modes import ModeSpectrum, load_modes, save_modes, synth_modes

TP = 2 * math.pi
WM = TP * 1.59


def write(tmp_path, text, name="m.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_com_only_file(tmp_path):
    spec = load_modes(write(tmp_path, "# single ion\n1\n1.59\n1.0\n"))
    assert spec.N == 1
    assert spec.frequencies[0] == pytest.approx(WM, rel=1e-15)
    spec.validate(WM)


def test_row_normalized_to_point_nine_rejected(tmp_path):
    K = synth_modes("degenerate", 3, WM).profiles.copy()
    K[1] *= 0.9
    rows = "\n".join(" ".join(repr(float(x)) for x in r) for r in K)
    with pytest.raises(ValidationError) as exc:
        load_modes(write(tmp_path, f"3\n1.59 1.5 1.4\n{rows}\n"))
    assert "orthonormal" in str(exc.value)


def test_com_row_checked():
    K = np.eye(2)
    with pytest.raises(ValidationError) as exc:
        ModeSpectrum(2, (1.59, 1.5), K).validate()
    assert "1/sqrt(N)" in str(exc.value)


def test_com_frequency_checked():
    with pytest.raises(ValidationError):
        synth_modes("com_only", 1, WM).validate(WM * 1.001)


def test_round_trip_bit_identical(tmp_path):
    spec = synth_modes("uniform_band", 3, WM, TP * 0.18)
    p1 = tmp_path / "a.txt"
    save_modes(spec, p1)
    back = load_modes(p1)
    assert back.freqs_mhz == spec.freqs_mhz
    assert np.array_equal(back.profiles, spec.profiles)
    p2 = tmp_path / "b.txt"
    save_modes(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_frequencies_only_file(tmp_path):
    spec = load_modes(write(tmp_path, "4\n1.59 1.55 1.5 1.45\nprofiles: none\n"))
    assert spec.profiles is None
    with pytest.raises(MissingProfiles):
        spec.require_profiles()
    p = tmp_path / "c.txt"
    save_modes(spec, p)
    assert load_modes(p).freqs_mhz == spec.freqs_mhz


@pytest.mark.parametrize("text,line", [
    ("x\n1.59\n1\n", 1),
    ("1\n1.59 abc\n1\n", 2),
    ("2\n1.59 1.5\n0.7 0.7\n0.7\n", 4),
    ("# only a comment\n2\n", 2),
])
def test_format_errors_carry_line(tmp_path, text, line):
    with pytest.raises(FormatError) as exc:
        load_modes(write(tmp_path, text))
    assert exc.value.line == line


def test_uniform_band_spacing():
    spec = synth_modes("uniform_band", 4, WM, TP * 0.180)
    assert np.allclose(-np.diff(spec.frequencies), TP * 0.060, rtol=1e-12)
    assert spec.frequencies[0] == WM


@pytest.mark.parametrize("kind,N", [("com_only", 1), ("com_only", 5), ("degenerate", 1),
                                    ("degenerate", 6), ("uniform_band", 7)])
def test_generators_orthonormal(kind, N):
    spec = synth_modes(kind, N, WM, TP * 0.18)
    K = spec.profiles
    assert np.max(np.abs(K @ K.T - np.eye(spec.M))) < 1e-9
    assert np.allclose(K[0], 1 / math.sqrt(N), atol=1e-12)
    if spec.M == N:
        assert np.max(np.abs(K.T @ K - np.eye(N))) < 1e-9


def test_com_only_single_ion():
    assert list(synth_modes("com_only", 1, WM).frequencies) == [WM]


def test_generator_errors():
    with pytest.raises(InvalidArgument):
        synth_modes("uniform_band", 3, WM, WM)
    with pytest.raises(InvalidArgument):
        synth_modes("uniform_band", 3, WM, -1.0)
    with pytest.raises(InvalidArgument):
        synth_modes("chain", 3, WM)
    with pytest.raises(InvalidArgument):
        synth_modes("degenerate", 0, WM)


def test_mode_above_com_warns():
    K = synth_modes("degenerate", 2, WM).profiles
    with pytest.warns(UserWarning):
        ModeSpectrum(2, (1.59, 1.6), K).validate()
