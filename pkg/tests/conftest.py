from __future__ import annotations

import pytest

from coastnav.synthetic import DEFAULT_ORIGIN, archipelago


@pytest.fixture(scope="session")
def origin():
    return DEFAULT_ORIGIN


@pytest.fixture(scope="session")
def islands():
    return archipelago()
