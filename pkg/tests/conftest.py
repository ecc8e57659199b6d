import pytest

from services.boundary import BvpSpec, uniaxial_plate_rules
from services.elasticity import ScaleSet, plane_strain_response
from services.material import ConstantMaterial, EngineeringConstants, lame_from_engineering
from utils.functions import configure_logging

from .helpers import E_PLATE, LENGTH, NU_PLATE, SIGMA_BAR


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch):
    monkeypatch.setenv("MICROELAST_LOG", "OFF")
    configure_logging("OFF")


@pytest.fixture
def plate_lame():
    return lame_from_engineering(EngineeringConstants(E_PLATE, NU_PLATE))


@pytest.fixture
def plate_material(plate_lame):
    return ConstantMaterial(*plate_lame, LENGTH)


@pytest.fixture
def plate_strains(plate_lame):
    return plane_strain_response(SIGMA_BAR, *plate_lame)


@pytest.fixture
def plate_scales(plate_lame):
    return ScaleSet.defaults(LENGTH, SIGMA_BAR, plate_lame[0], plate_lame[1], E_PLATE)


@pytest.fixture
def plate_bvp(plate_scales):
    return BvpSpec(LENGTH, SIGMA_BAR, uniaxial_plate_rules(LENGTH, SIGMA_BAR), plate_scales)
