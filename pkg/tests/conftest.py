import json
import math
import warnings
from pathlib import Path

import pytest

from darkcool.models import PhysParams, resonant_rabi

TP = 2 * math.pi
FROZEN = json.loads((Path(__file__).parent / "oracle" / "frozen.json").read_text())

warnings.filterwarnings("ignore", message="thermal state truncated")


def fig4_params(**kw):
    base = dict(Omega_g=TP * 40, Omega_e=TP * 40, Delta_g=TP * 503.1, Delta_e=TP * 503.1,
                gamma_g=TP * 6, gamma_e=TP * 12, omega_m=TP * 1.59)
    base.update(kw)
    return PhysParams(**base)


def fig6_params(**kw):
    Om = resonant_rabi(TP * 385, TP * 18, TP * 1.59)
    base = dict(Omega_g=Om, Omega_e=Om, Delta_g=TP * 385, Delta_e=TP * 385,
                gamma_g=TP * 6, gamma_e=TP * 12, omega_m=TP * 1.59, eta_z=0.13)
    base.update(kw)
    return PhysParams(**base)


def fig9_params(**kw):
    Om = resonant_rabi(TP * 512, TP * 18, TP * 1.59)
    base = dict(Omega_g=Om, Omega_e=Om, Delta_g=TP * 512, Delta_e=TP * 512,
                gamma_g=TP * 6, gamma_e=TP * 12, omega_m=TP * 1.59, n_th=4.6)
    base.update(kw)
    return PhysParams(**base)


@pytest.fixture
def frozen():
    return FROZEN


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record(crit, title, ok, detail):
    ACCEPTANCE.append((crit, title, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {crit:>2}. {title}: {detail}")
