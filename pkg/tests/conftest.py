"""
Shared pytest fixtures for the HVS ISP test suite
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.isp_config import IspConfig
from tests.fixtures.isp_data import create_checker_scene, create_row_fpn, load_reference


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test outputs"""
    with tempfile.TemporaryDirectory() as tmp:
        yield Path(tmp)


@pytest.fixture
def rng():
    """Seeded generator so random tests are repeatable"""
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def reference_patches():
    """Linear ColorChecker reference chart"""
    return load_reference()


@pytest.fixture(scope="session")
def checker_scene(reference_patches):
    """128x128 linear chart image and its annotation"""
    return create_checker_scene(128, 128, reference_patches)


@pytest.fixture
def scene_fpn(rng):
    """Row offsets for a 128-row capture"""
    return create_row_fpn(128, rng)


@pytest.fixture
def default_config():
    """Neutral pipeline: fixed unit gains, identity CCM, no denoise"""
    return IspConfig().validate()


@pytest.fixture
def calibrated_config():
    """Checker white balance and fitted CCM with dark correction"""
    return IspConfig().with_overrides(
        dark={"enabled": True},
        wb={"mode": "checker"},
        ccm={"mode": "fit"},
    )
