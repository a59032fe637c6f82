import numpy as np
import pytest

from gamopt.config import parse_config
from gamopt.data import build_problem, load_csv, load_dataset, load_idx, read_idx, two_moons, write_idx
from gamopt.errors import DataError


def test_idx_images(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (10, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 10).astype(np.uint8)
    write_idx(tmp_path / "i.idx", imgs)
    write_idx(tmp_path / "l.idx", labels)
    raw = (tmp_path / "i.idx").read_bytes()
    assert raw[:4] == bytes.fromhex("00000803")
    x, y = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    assert x.shape == (10, 784) and x.min() >= 0 and x.max() <= 1
    assert np.array_equal(x, imgs.reshape(10, -1) / 255.0)
    assert np.array_equal(y, labels)


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.int32, np.float32, np.float64])
def test_idx_round_trip(tmp_path, dtype):
    arr = (np.arange(24).reshape(2, 3, 4) * 3).astype(dtype)
    write_idx(tmp_path / "a.idx", arr)
    back = read_idx(tmp_path / "a.idx")
    assert back.dtype == arr.dtype and np.array_equal(back, arr)


def test_idx_bad_magic(tmp_path):
    write_idx(tmp_path / "l.idx", np.zeros(3, np.uint8))
    with pytest.raises(DataError, match="magic"):
        load_idx(tmp_path / "l.idx", tmp_path / "l.idx")
    (tmp_path / "junk").write_bytes(b"\x01\x02\x03\x04")
    with pytest.raises(DataError):
        read_idx(tmp_path / "junk")


def test_idx_truncated(tmp_path):
    write_idx(tmp_path / "a.idx", np.zeros((4, 4), np.uint8))
    data = (tmp_path / "a.idx").read_bytes()
    (tmp_path / "a.idx").write_bytes(data[:-3])
    with pytest.raises(DataError):
        read_idx(tmp_path / "a.idx")


def test_two_moons_deterministic():
    a = two_moons(200, 0.1, 7)
    b = two_moons(200, 0.1, 7)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_csv_header_and_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,f2,label\n0.5,1.0,1\n2.0,3.0,0\n")
    x, y = load_csv(p, label_col="label")
    assert x.tolist() == [[0.5, 1.0], [2.0, 3.0]] and y.tolist() == [1, 0]
    p.write_text("0.5,1.0,1\n2.0,3.0,0\n")
    x, y = load_csv(p)
    assert x.shape == (2, 2) and y.tolist() == [1, 0]
    p.write_text("f1,f2,label\n0.5,abc,1\n")
    with pytest.raises(DataError, match="row 2, column f2"):
        load_csv(p, label_col="label")
    p.write_text("1,2,0\n1,2\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(p)
    p.write_text("1,2,0.5\n")
    with pytest.raises(DataError, match="label"):
        load_csv(p)


def test_csv_dataset_through_config(tmp_path):
    rows = "\n".join(f"{i * 0.1},{(i % 3) * 1.0},{i % 2}" for i in range(30))
    (tmp_path / "d.csv").write_text(rows + "\n")
    cfg = parse_config({"dataset": {"kind": "csv", "path": "d.csv", "test_fraction": 0.2}, "batch_size": 8}, base_dir=tmp_path)
    prob = build_problem(cfg)
    assert prob.data.x_train.shape == (24, 2) and prob.data.x_test.shape == (6, 2)


def test_data_seed_shared_across_run_seeds():
    a = parse_config({"dataset": {"kind": "two_moons", "n": 50}, "seed": 1, "data_seed": 9})
    b = parse_config({"dataset": {"kind": "two_moons", "n": 50}, "seed": 2, "data_seed": 9})
    da, db = load_dataset(a.dataset, a.resolved_data_seed), load_dataset(b.dataset, b.resolved_data_seed)
    assert np.array_equal(da.x_train, db.x_train)


def test_blobs():
    cfg = parse_config({"dataset": {"kind": "gaussian_blobs", "n": 60, "k": 4, "dim": 3, "test_n": 20}})
    d = load_dataset(cfg.dataset, 0)
    assert d.x_train.shape == (60, 3) and d.num_classes == 4 and d.x_test.shape == (20, 3)
