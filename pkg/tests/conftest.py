import pytest

from decoyqkd import ProtocolParams, fit_link
from decoyqkd.tables import bundled_reference_table

# Reference per-length bounds the bundled dataset must reproduce:
# (length_km, s1_lower, e1_upper, r_lower). The 83.7 km yield entry is
# the recomputed 1.69e-4; the printed 1.69e-5 contradicts the same
# row's e1_upper of 0.0409.
REFERENCE_BOUNDS = [
    (123.6, 3.78e-5, 0.0607, 9.59e-7),
    (108.0, 8.09e-5, 0.0426, 4.89e-6),
    (97.0, 1.41e-4, 0.0399, 9.29e-6),
    (83.7, 1.69e-4, 0.0409, 1.07e-5),
    (62.1, 4.46e-4, 0.0211, 4.77e-5),
    (49.2, 1.09e-3, 0.0247, 1.06e-4),
]


@pytest.fixture(scope="session")
def reference_table():
    return bundled_reference_table()


@pytest.fixture(scope="session")
def default_params():
    return ProtocolParams()


@pytest.fixture(scope="session")
def fitted_model(reference_table, default_params):
    return fit_link(reference_table, default_params)
