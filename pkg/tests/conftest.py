import logging

import numpy as np
import pytest

from fiberspec import config as cfgmod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_run(**overrides):
    """RunConfig from defaults plus dotted overrides, ignoring the environment."""
    return cfgmod.build_run_config(cfgmod.load_config(environ={}, overrides=overrides))


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="fiberspec")
    yield


def table_bands(pumps=(774.7, 774.9, 775.1)):
    """Conjugate-clipped signal and idler bands of the four standard filter sets."""
    from fiberspec.dispersion import WavelengthBand
    from fiberspec.instrument import FILTER_BANDS
    from fiberspec.spdc import PumpSetting, SourceModel, conjugate_band

    src = SourceModel()
    out = []
    for label in ("alpha", "beta", "gamma", "delta"):
        s, i = (WavelengthBand(*b) for b in FILTER_BANDS[label])
        for lp in pumps:
            pump = PumpSetting.from_wavelength(lp, src)
            for a, b in ((s, i), (i, s)):
                band = conjugate_band(a, b, pump)
                if band is not None:
                    out.append(band)
    return out


ACCEPTANCE = {}


def report(number: int, ok: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
