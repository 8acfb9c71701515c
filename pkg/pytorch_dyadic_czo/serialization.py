import json
import os
from typing import Dict, Union

import numpy as np
import torch

from pytorch_dyadic_czo.base_operator import BaseDyadicOperator
from pytorch_dyadic_czo.field import HaarKey
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.operators import DyadicShift
from pytorch_dyadic_czo.operators import PerfectDyadicCZO
from pytorch_dyadic_czo.tensor import HaarTensorOperator
from pytorch_dyadic_czo.utils import LayoutMismatch

from pytorch_dyadic_czo.utils import DTYPE

PathLike = Union[str, os.PathLike]

FORMAT_VERSION = 1


def _grid_text(shift) -> str:
    return "" if shift is None else shift.dumps()


def _grid_from_text(text: str):
    return ShiftStream.loads(text) if text.strip() else None


def _payload(tensor: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<c16"))


def save_field(f: MatrixField, path: PathLike) -> None:
    """npz with header keys n, L, d, grid and a little-endian complex128 payload."""
    np.savez(path, n=f.dim, L=f.level, d=f.size, grid=np.array(_grid_text(f.shift)),
             version=FORMAT_VERSION, values=_payload(f.values))


def load_field(path: PathLike) -> MatrixField:
    with np.load(path, allow_pickle=False) as data:
        n, level, d = int(data["n"]), int(data["L"]), int(data["d"])
        values = torch.as_tensor(data["values"], dtype=DTYPE)
        grid = _grid_from_text(str(data["grid"]))
    if tuple(values.shape) != (1 << level,) * n + (d, d):
        raise LayoutMismatch("payload shape {} does not match header (n={}, L={}, d={})".format(
            tuple(values.shape), n, level, d))
    return MatrixField(values, n, grid)


def field_to_json(f: MatrixField) -> str:
    values = f.values.reshape(-1)
    return json.dumps({"n": f.dim, "L": f.level, "d": f.size, "grid": _grid_text(f.shift),
                       "real": values.real.tolist(), "imag": values.imag.tolist()}, sort_keys=True)


def field_from_json(text: str) -> MatrixField:
    record = json.loads(text)
    n, level, d = record["n"], record["L"], record["d"]
    values = torch.tensor(record["real"], dtype=torch.float64) + 1j * torch.tensor(record["imag"], dtype=torch.float64)
    if values.numel() != (1 << (level * n)) * d * d:
        raise LayoutMismatch("JSON field has {} entries, header expects (n={}, L={}, d={})".format(
            values.numel(), n, level, d))
    return MatrixField(values.reshape((1 << level,) * n + (d, d)), n, _grid_from_text(record["grid"]))


def _key_text(key: HaarKey) -> str:
    return json.dumps([key.level, list(key.index), list(key.signature)])


def _key_from_text(text: str) -> HaarKey:
    level, index, signature = json.loads(text)
    return HaarKey(level, tuple(index), tuple(signature))


def save_operator(T: BaseDyadicOperator, path: PathLike) -> None:
    """Write ``<path>.json`` (kind tag and parameters) and ``<path>.npz`` (arrays)."""
    manifest = {"version": FORMAT_VERSION, "n": T.dim, "L": T.level, "d": T.size, "grid": _grid_text(T.shift)}
    arrays: Dict[str, np.ndarray] = {}
    if isinstance(T, PerfectDyadicCZO):
        manifest["kind"] = "perfect"
        arrays["b_col"] = _payload(T.b_col.values)
        arrays["b_row"] = _payload(T.b_row.values)
        for j, xi in enumerate(T.xi):
            arrays["xi_{}".format(j)] = _payload(xi)
    elif isinstance(T, DyadicShift):
        manifest["kind"] = "shift"
        for j, signs in enumerate(T.signs):
            arrays["signs_{}".format(j)] = signs.numpy().astype("<f8")
    elif isinstance(T, HaarTensorOperator):
        manifest["kind"] = "tensor"
        manifest["band"] = T.band
        manifest["entries"] = [[_key_text(row), _key_text(col)] for row, col in T.entries]
        arrays["values"] = _payload(torch.stack(list(T.entries.values()))) if T.entries \
            else np.zeros((0, T.size, T.size), dtype="<c16")
    else:
        raise TypeError("cannot serialize {}".format(type(T).__name__))
    with open("{}.json".format(path), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
    np.savez("{}.npz".format(path), **arrays)


def load_operator(path: PathLike) -> BaseDyadicOperator:
    with open("{}.json".format(path), encoding="utf-8") as handle:
        manifest = json.load(handle)
    n, level, d = manifest["n"], manifest["L"], manifest["d"]
    grid = _grid_from_text(manifest["grid"])
    with np.load("{}.npz".format(path), allow_pickle=False) as data:
        if manifest["kind"] == "perfect":
            b_col = MatrixField(torch.as_tensor(data["b_col"]), n, grid)
            b_row = MatrixField(torch.as_tensor(data["b_row"]), n, grid)
            xi = [torch.as_tensor(data["xi_{}".format(j)]) for j in range(level)]
            return PerfectDyadicCZO(xi, b_col, b_row)
        if manifest["kind"] == "shift":
            signs = [torch.as_tensor(data["signs_{}".format(j)]) for j in range(level)]
            return DyadicShift(signs, n, d, grid)
        if manifest["kind"] == "tensor":
            values = torch.as_tensor(data["values"])
            entries = {(_key_from_text(row), _key_from_text(col)): value
                       for (row, col), value in zip(manifest["entries"], values)}
            return HaarTensorOperator(entries, n, level, d, band=manifest["band"], shift=grid)
    raise LayoutMismatch("unknown operator kind {!r}".format(manifest["kind"]))
