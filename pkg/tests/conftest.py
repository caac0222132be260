"""
Shared pytest configuration
Registers the marker for the reduced-scale ensemble checks
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: reduced-scale ensemble sweeps (deselect with -m 'not slow')")
