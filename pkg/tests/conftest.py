import csv
import datetime as dt

import pytest


def write_wide_csv(path, columns, T, start=dt.date(2020, 3, 1)):
    """columns: mapping region -> list of T counts."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(columns))
        for i in range(T):
            day = (start + dt.timedelta(days=i)).isoformat()
            writer.writerow([day] + [columns[r][i] for r in columns])
    return path


@pytest.fixture(scope="session")
def two_group_csv(tmp_path_factory):
    """Four regions: two flat, two with a count jump a third of the way in."""
    T = 40
    flat = [5] * T
    jump = [0] * 20 + [400] * 20
    path = tmp_path_factory.mktemp("panel") / "panel.csv"
    columns = {"flat_a": flat, "flat_b": flat, "jump_a": jump, "jump_b": jump}
    return write_wide_csv(path, columns, T)
