from __future__ import annotations

import os

from lobworld.audit import IOAudit


def test_records_reads_and_restores_open(tmp_path):
    a, b = tmp_path / "a" / "x.txt", tmp_path / "b.txt"
    a.parent.mkdir()
    a.write_text("hello")
    b.write_text("0123456789")
    with IOAudit() as audit:
        b.read_text()
        with open(tmp_path / "c.txt", "w") as fh:
            fh.write("x")
    a.read_text()   # after exit: not recorded
    assert audit.bytes_read_under([tmp_path / "a"]) == 0
    assert audit.bytes_read_under([tmp_path]) == 10
    assert audit.touched([tmp_path / "a"]) == []
    assert [x.mode for x in audit.reads()] == ["r"]
    assert str(tmp_path / "c.txt") in audit.touched([tmp_path])


def test_low_level_and_numpy_reads_are_seen(tmp_path):
    import numpy as np
    f = tmp_path / "m.csv"
    np.savetxt(f, np.eye(2), delimiter=",")
    with IOAudit() as audit:
        np.loadtxt(f, delimiter=",")
        fd = os.open(f, os.O_RDONLY)
        os.close(fd)
    assert len(audit.reads()) >= 2
    assert audit.bytes_read_under([tmp_path]) >= 2 * f.stat().st_size
