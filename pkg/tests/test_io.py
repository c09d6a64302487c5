import json

import numpy as np
import pytest

from cylcalc import io
from cylcalc.calculus import limit_operator
from cylcalc.quantize import quantize
from cylcalc.symbols import FullSymbol, laplace_symbol


def _complex_op(small):
    a = FullSymbol(lambda x, t, xi, tau: 1 + xi ** 2 + tau ** 2 + 0.5j * np.sin(x), 2.0, 0.0,
                   tau_degree=2)
    return quantize(a, small)


@pytest.mark.parametrize("kind", ["real", "complex"])
def test_binary_round_trip(tmp_path, small, kind):
    P = quantize(laplace_symbol(1.0), small) if kind == "real" else _complex_op(small)
    path = tmp_path / "k.bin"
    io.write_kernel_binary(path, P)
    raw = path.read_bytes()
    assert raw[:4] == b"CYLK"
    flag = int.from_bytes(raw[12:16], "little")
    assert flag == (io.FLAG_COMPLEX if kind == "complex" else io.FLAG_REAL)
    assert len(raw) == 16 + P.N ** 2 * (16 if kind == "complex" else 8)
    assert np.array_equal(io.read_kernel_binary(path), P.mat / P.weight)


def test_binary_rejects_bad_files(tmp_path, small):
    path = tmp_path / "k.bin"
    io.write_kernel_binary(path, quantize(laplace_symbol(1.0), small))
    raw = path.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        io.read_kernel_binary(tmp_path / "magic.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        io.read_kernel_binary(tmp_path / "short.bin")


def test_csv_round_trip(tmp_path, small):
    P = _complex_op(small)
    path = tmp_path / "k.csv"
    n = io.write_kernel_csv(path, P)
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert data.shape == (n, 4) and n == np.count_nonzero(P.mat)
    K = np.zeros(P.mat.shape, dtype=complex)
    K[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2] + 1j * data[:, 3]
    assert np.array_equal(K, P.mat / P.weight)


def test_indicial_csv(tmp_path, small):
    T = limit_operator(quantize(laplace_symbol(1.0), small), "left")
    taus = np.array([0.0, 0.5])
    path = tmp_path / "ind.csv"
    io.write_limit_csv(path, T, taus)
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert data.shape == (2 * T.dim ** 2, 5)
    M = T.hat(taus)
    sel = (data[:, 0] == 0.5) & (data[:, 1] == 2) & (data[:, 2] == 2)
    assert data[sel, 3][0] == M[1, 2, 2].real


def test_json_determinism_and_non_finite():
    obj = {"b": np.float64(1 / 3), "a": [np.inf, -np.inf, np.nan, 1 + 2j, np.int32(3), np.bool_(False)],
           "arr": np.arange(3.0), "none": None}
    text = io.dumps(obj)
    assert text == io.dumps(obj) and text.endswith("\n")
    back = json.loads(text)
    assert list(back) == ["b", "a", "arr", "none"]
    assert back["b"] == 1 / 3
    assert back["a"] == ["inf", "-inf", "nan", {"re": 1.0, "im": 2.0}, 3, False]
    with pytest.raises(TypeError):
        io.dumps({"x": object()})
