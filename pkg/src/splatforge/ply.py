"""PLY point-cloud I/O (ASCII and binary little-endian).

Reads the vertex element of any conforming file: positions from x/y/z
(float or double), colors from red/green/blue (uchar or float), normals
from nx/ny/nz. Unknown fixed-size vertex properties are parsed and
dropped. Writes binary little-endian by default with float32 positions
and uchar colors; pass dtype="float64" for lossless positions.
"""

from __future__ import annotations

import os

import numpy as np

from splatforge.errors import MissingInput, ParseError, UnsupportedFormat
from splatforge.geometry import PointCloud

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(fh, path: str):
    """Parse the header; returns (format, elements, line_count).

    elements is a list of (name, count, [(prop_name, np_type_str)]).
    """
    line = fh.readline()
    line_no = 1
    if line.strip() != b"ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", path, 1)
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise ParseError("unexpected end of file inside header", path, line_no)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ASCII bytes in header", path, line_no) from None
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tokens = line.split()
        if tokens[0] == "format":
            if len(tokens) != 3:
                raise ParseError("malformed format line", path, line_no)
            if tokens[1] == "ascii":
                fmt = "ascii"
            elif tokens[1] == "binary_little_endian":
                fmt = "binary"
            else:
                raise UnsupportedFormat(
                    f"unsupported format {tokens[1]!r}", path, line_no
                )
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element line", path, line_no)
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError(
                    f"bad element count {tokens[2]!r}", path, line_no
                ) from None
            if count < 0:
                raise ParseError(f"negative element count {count}", path, line_no)
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, line_no)
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise ParseError("malformed list property", path, line_no)
                elements[-1][2].append((tokens[4], "list:" + tokens[2] + ":" + tokens[3]))
            else:
                if len(tokens) != 3:
                    raise ParseError("malformed property line", path, line_no)
                if tokens[1] not in _SCALAR_TYPES:
                    raise UnsupportedFormat(
                        f"unknown property type {tokens[1]!r}", path, line_no
                    )
                elements[-1][2].append((tokens[2], _SCALAR_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
        else:
            raise ParseError(f"unrecognized header line {line!r}", path, line_no)
    if fmt is None:
        raise ParseError("header has no format line", path, line_no)
    if not elements:
        raise ParseError("header declares no elements", path, line_no)
    return fmt, elements, line_no


def _vertex_dtype(props: list[tuple[str, str]], path: str) -> np.dtype:
    fields = []
    for i, (name, typ) in enumerate(props):
        if typ.startswith("list:"):
            raise UnsupportedFormat(
                f"list property {name!r} in vertex element", path
            )
        fields.append((f"f{i}__{name}", "<" + typ))
    return np.dtype(fields)


def read_ply(path: str) -> PointCloud:
    """Read the vertex element of a PLY file into a PointCloud."""
    if not os.path.isfile(path):
        raise MissingInput(f"no such file: {path}")
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh, path)
        names = [e[0] for e in elements]
        if "vertex" not in names:
            raise ParseError("no vertex element declared", path, header_lines)
        vertex_pos = names.index("vertex")
        data = None
        for ei, (name, count, props) in enumerate(elements):
            if ei > vertex_pos:
                break
            dtype = _vertex_dtype(props, path) if name == "vertex" else None
            if fmt == "binary":
                if name != "vertex":
                    # Skip a preceding fixed-size element.
                    skip_dtype = _vertex_dtype(props, path)
                    fh.seek(count * skip_dtype.itemsize, os.SEEK_CUR)
                    continue
                raw = fh.read(count * dtype.itemsize)
                if len(raw) != count * dtype.itemsize:
                    raise ParseError(
                        f"vertex data truncated: expected {count} records", path
                    )
                data = np.frombuffer(raw, dtype=dtype)
            else:
                rows = []
                for r in range(count):
                    raw_line = fh.readline()
                    if not raw_line:
                        raise ParseError(
                            f"{name} data truncated at record {r}",
                            path,
                            header_lines + r + 1,
                        )
                    if name != "vertex":
                        continue
                    parts = raw_line.split()
                    if len(parts) != len(props):
                        raise ParseError(
                            f"expected {len(props)} values, got {len(parts)}",
                            path,
                            header_lines + r + 1,
                        )
                    rows.append(tuple(p.decode("ascii", "replace") for p in parts))
                if name == "vertex":
                    if not rows:
                        data = np.empty(0, dtype=dtype)
                    else:
                        try:
                            data = np.array(rows, dtype=dtype)
                        except ValueError:
                            # Re-scan to report the offending line.
                            for r, row in enumerate(rows):
                                try:
                                    np.array([row], dtype=dtype)
                                except ValueError:
                                    raise ParseError(
                                        f"bad numeric value in {row}",
                                        path,
                                        header_lines + r + 1,
                                    ) from None
                            raise
    prop_names = [p[0] for p in elements[vertex_pos][2]]

    def column(prop: str) -> np.ndarray | None:
        if prop not in prop_names:
            return None
        i = prop_names.index(prop)
        return data[f"f{i}__{prop}"].astype(np.float64)

    xyz = [column(c) for c in ("x", "y", "z")]
    if any(c is None for c in xyz):
        raise ParseError("vertex element lacks x/y/z properties", path)
    positions = np.stack(xyz, axis=1)

    colors = None
    rgb = [column(c) for c in ("red", "green", "blue")]
    if all(c is not None for c in rgb):
        colors = np.stack(rgb, axis=1)
        # uchar colors arrive as 0..255; float colors are already 0..1
        idx = prop_names.index("red")
        if elements[vertex_pos][2][idx][1] == "u1":
            colors = colors / 255.0

    normals = None
    nxyz = [column(c) for c in ("nx", "ny", "nz")]
    if all(c is not None for c in nxyz):
        normals = np.stack(nxyz, axis=1)
        lens = np.linalg.norm(normals, axis=1)
        safe = np.where(lens > 0, lens, 1.0)
        normals = normals / safe[:, None]

    return PointCloud(positions, colors, normals)


def write_ply(
    cloud: PointCloud,
    path: str,
    binary: bool = True,
    dtype: str = "float32",
) -> None:
    """Write a cloud; colors as uchar, positions/normals as `dtype`."""
    if dtype not in ("float32", "float64"):
        raise ValueError(f"dtype must be float32 or float64, got {dtype!r}")
    ftype = {"float32": "float", "float64": "double"}[dtype]
    np_f = {"float32": "<f4", "float64": "<f8"}[dtype]
    n = len(cloud)
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {n}")
    fields = [("x", np_f), ("y", np_f), ("z", np_f)]
    for axis in "xyz":
        header.append(f"property {ftype} {axis}")
    if cloud.normals is not None:
        for axis in "xyz":
            header.append(f"property {ftype} n{axis}")
        fields += [("nx", np_f), ("ny", np_f), ("nz", np_f)]
    if cloud.colors is not None:
        for ch in ("red", "green", "blue"):
            header.append(f"property uchar {ch}")
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    header.append("end_header")

    rec = np.empty(n, dtype=np.dtype(fields))
    for i, axis in enumerate("xyz"):
        rec[axis] = cloud.positions[:, i]
    if cloud.normals is not None:
        for i, axis in enumerate("xyz"):
            rec["n" + axis] = cloud.normals[:, i]
    if cloud.colors is not None:
        quant = np.rint(cloud.colors * 255.0).astype(np.uint8)
        for i, ch in enumerate(("red", "green", "blue")):
            rec[ch] = quant[:, i]

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            float_cols = [f for f, _ in fields if not f.startswith(("red", "green", "blue"))]
            for row in rec:
                parts = [repr(float(row[f])) for f in float_cols]
                if cloud.colors is not None:
                    parts += [str(int(row[ch])) for ch in ("red", "green", "blue")]
                fh.write((" ".join(parts) + "\n").encode("ascii"))
