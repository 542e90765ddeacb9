import pytest

from seqeffects import make_reference_fixture, make_small_fixture


@pytest.fixture
def d16():
    return make_small_fixture()


@pytest.fixture
def dref():
    return make_reference_fixture()
