import pytest

from synthdata import (CONFIG, write_body, write_energy, write_fields,
                       write_rates)


@pytest.fixture
def run_dir(tmp_path):
    """A synthetic run directory matching the documented CSV schemas."""
    write_energy(tmp_path / "energy.csv")
    write_body(tmp_path / "body.csv")
    write_fields(tmp_path / "fields_final.csv")
    write_rates(tmp_path / "rates.csv")
    (tmp_path / "config.txt").write_text(CONFIG)
    return tmp_path
