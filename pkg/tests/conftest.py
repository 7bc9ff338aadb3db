import numpy as np
import pytest

from h2beats import molecule, optics, vmi

TABLE_GAPS = {(8, 9): 1130.1, (7, 8): 1262.5, (8, 10): 2127.8, (7, 9): 2392.6}


@pytest.fixture(scope="session")
def levels_7_10():
    return molecule.levels_from_morse(molecule.H2P_X_MORSE, 7, 10)


@pytest.fixture(scope="session")
def levels_8_9():
    return molecule.levels_from_morse(molecule.H2P_X_MORSE, 8, 9)


@pytest.fixture(scope="session")
def wide_pulse():
    # broad bandwidth: level-offset Gaussian overlaps approach 1
    return optics.PulsePair(center=110000.0, sigma=13000.0, tau_xx=0.0)


@pytest.fixture(scope="session")
def ev_pulse():
    # |F0|^2 FWHM of 1 eV
    return optics.PulsePair(center=201639.0, sigma=optics.default_sigma_cm1(1.0), tau_xx=0.0)


@pytest.fixture(scope="session")
def operator_small():
    return vmi.build_operator(60, 6)


@pytest.fixture(scope="session")
def operator_full():
    return vmi.build_operator(110, 6)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
