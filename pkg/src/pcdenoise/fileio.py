"""Point cloud and mesh files: PLY (ASCII / binary little-endian), OBJ, XYZ.

Also writes the run report (CSV or a plain-text table) and the ground-truth
label CSV used by the synthetic benchmark.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import DenoiseReport, PointCloud, TriangleMesh


class CloudFormatError(ValueError):
    pass


@dataclass
class LoadReport:
    path: str
    format: str
    rows_read: int = 0
    rejected_rows: int = 0
    rejected_lines: list[int] = field(default_factory=list)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def detect_format(path) -> str:
    ext = Path(path).suffix.lower().lstrip(".")
    if ext in ("ply", "obj", "xyz"):
        return ext
    if ext in ("txt", "pts"):
        return "xyz"
    raise CloudFormatError(f"{path}: unknown point cloud format '{ext}'")


def read_cloud(path, format: Optional[str] = None):
    """Read a cloud; returns ``(cloud, mesh_or_None, load_report)``.

    Rows with non-finite coordinates are dropped (and counted); faces that
    touch a dropped vertex are dropped with it.
    """
    fmt = (format or detect_format(path)).lower()
    if fmt == "ply":
        return _read_ply(path)
    if fmt == "obj":
        return _read_obj(path)
    if fmt == "xyz":
        return _read_xyz(path)
    raise CloudFormatError(f"unsupported format '{fmt}'")


def _finish(path, fmt, points, normals, labels, faces, line_of_row=None):
    report = LoadReport(str(path), fmt, rows_read=len(points))
    ok = np.all(np.isfinite(points), axis=1)
    if normals is not None:
        ok_n = np.all(np.isfinite(normals), axis=1)
        # keep unit normals only; anything else is dropped, not the point
        lens = np.linalg.norm(np.where(ok_n[:, None], normals, 0.0), axis=1)
        if not np.all(ok_n & (np.abs(lens - 1.0) <= 1e-6)):
            normals = None
    bad = np.flatnonzero(~ok)
    report.rejected_rows = len(bad)
    report.rejected_lines = [int(line_of_row[i]) if line_of_row is not None else int(i) for i in bad]
    if not ok.any():
        raise CloudFormatError(f"{path}: no valid points")
    remap = np.cumsum(ok) - 1
    points = points[ok]
    normals = None if normals is None else normals[ok]
    labels = None if labels is None else labels[ok]
    mesh = None
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(ok)):
            raise CloudFormatError(f"{path}: face index out of range")
        keep = ok[faces].all(axis=1)
        faces = remap[faces[keep]]
        faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])]
        mesh = TriangleMesh(points, faces)
    return PointCloud(points, normals, labels), mesh, report


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


# ---------------------------------------------------------------- XYZ

def _read_xyz(path):
    rows, lines = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) < 3:
                raise CloudFormatError(f"{path}:{lineno}: expected three coordinates")
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: malformed coordinate") from None
            lines.append(lineno)
    if not rows:
        raise CloudFormatError(f"{path}: no valid points")
    return _finish(path, "xyz", np.array(rows), None, None, None, lines)


def _write_xyz(cloud, path):
    np.savetxt(path, cloud.points, fmt="%.17g")


# ---------------------------------------------------------------- OBJ

def _obj_index(tok, nverts, path, lineno):
    try:
        i = int(tok.split("/")[0])
    except ValueError:
        raise CloudFormatError(f"{path}:{lineno}: malformed face index") from None
    return i - 1 if i > 0 else nverts + i


def _read_obj(path):
    verts, faces, lines = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise CloudFormatError(f"{path}:{lineno}: vertex needs three coordinates")
                try:
                    verts.append([float(v) for v in parts[1:4]])
                except ValueError:
                    raise CloudFormatError(f"{path}:{lineno}: malformed vertex") from None
                lines.append(lineno)
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise CloudFormatError(f"{path}:{lineno}: face needs three vertices")
                poly = [_obj_index(t, len(verts), path, lineno) for t in parts[1:]]
                faces.extend(_fan(poly))
    if not verts:
        raise CloudFormatError(f"{path}: no valid points")
    return _finish(path, "obj", np.array(verts), None, None, faces if faces else None, lines)


def _write_obj(cloud, path, mesh=None):
    with open(path, "w", encoding="utf-8") as fh:
        for p in cloud.points:
            fh.write("v %.17g %.17g %.17g\n" % tuple(p))
        if mesh is not None:
            for f in mesh.faces:
                fh.write("f %d %d %d\n" % tuple(f + 1))


# ---------------------------------------------------------------- PLY

@dataclass
class _PlyElement:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, ("list", count_t, item_t))


def _parse_ply_header(fh, path):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise CloudFormatError(f"{path}:1: not a PLY file")
    fmt, elements = None, []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise CloudFormatError(f"{path}:{lineno}: header has no end_header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise CloudFormatError(f"{path}:{lineno}: unsupported PLY format '{' '.join(parts[1:])}'")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: malformed element line")
            elements.append(_PlyElement(parts[1], int(parts[2])))
        elif key == "property":
            if not elements:
                raise CloudFormatError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}:{lineno}: malformed list property")
                elements[-1].props.append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}:{lineno}: unknown property type")
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise CloudFormatError(f"{path}:{lineno}: unexpected header keyword '{key}'")
    if fmt is None:
        raise CloudFormatError(f"{path}: PLY header lacks a format line")
    return fmt, elements, lineno


def _read_ply(path):
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        data = {}
        if fmt == "ascii":
            lines = fh.read().decode("ascii", errors="replace").splitlines()
            pos = 0
            for el in elements:
                data[el.name] = _ply_ascii_element(el, lines, pos, header_lines, path)
                pos += el.count
        else:
            for el in elements:
                data[el.name] = _ply_binary_element(el, fh, path)

    if "vertex" not in data:
        raise CloudFormatError(f"{path}: PLY has no vertex element")
    v = data["vertex"]
    for axis in "xyz":
        if axis not in v:
            raise CloudFormatError(f"{path}: vertex lacks property '{axis}'")
    points = np.column_stack([np.asarray(v[a], dtype=np.float64) for a in "xyz"])
    normals = None
    if all(a in v for a in ("nx", "ny", "nz")):
        normals = np.column_stack([np.asarray(v[a], dtype=np.float64) for a in ("nx", "ny", "nz")])
    labels = np.asarray(v["outlier"], dtype=np.uint8) if "outlier" in v else None
    faces = None
    if "face" in data:
        f = data["face"]
        key = "vertex_indices" if "vertex_indices" in f else "vertex_index" if "vertex_index" in f else None
        if key is not None:
            faces = [tri for poly in f[key] for tri in _fan(list(poly))]
    lines = np.arange(len(points)) + header_lines + 1 if fmt == "ascii" else None
    return _finish(path, "ply", points, normals, labels, faces if faces else None, lines)


def _ply_ascii_element(el, lines, start, header_lines, path):
    cols = {name: [] for name, _ in el.props}
    if start + el.count > len(lines):
        raise CloudFormatError(f"{path}: file ends before {el.count} '{el.name}' rows")
    for r in range(el.count):
        lineno = header_lines + start + r + 1
        toks = lines[start + r].split()
        i = 0
        try:
            for name, typ in el.props:
                if isinstance(typ, tuple):
                    cnt = int(toks[i])
                    cols[name].append([int(t) for t in toks[i + 1:i + 1 + cnt]])
                    if len(cols[name][-1]) != cnt:
                        raise IndexError
                    i += 1 + cnt
                else:
                    cols[name].append(float(toks[i]))
                    i += 1
        except (IndexError, ValueError):
            raise CloudFormatError(f"{path}:{lineno}: malformed '{el.name}' row") from None
    return cols


def _ply_binary_element(el, fh, path):
    if not any(isinstance(t, tuple) for _, t in el.props):
        dt = np.dtype([(name, "<" + t) for name, t in el.props])
        buf = fh.read(dt.itemsize * el.count)
        if len(buf) != dt.itemsize * el.count:
            raise CloudFormatError(f"{path}: truncated binary '{el.name}' data")
        arr = np.frombuffer(buf, dtype=dt)
        return {name: arr[name] for name, _ in el.props}
    cols = {name: [] for name, _ in el.props}
    for _ in range(el.count):
        for name, typ in el.props:
            if isinstance(typ, tuple):
                ct = np.dtype("<" + typ[1])
                it = np.dtype("<" + typ[2])
                raw = fh.read(ct.itemsize)
                if len(raw) != ct.itemsize:
                    raise CloudFormatError(f"{path}: truncated binary '{el.name}' data")
                cnt = int(np.frombuffer(raw, ct)[0])
                raw = fh.read(it.itemsize * cnt)
                if len(raw) != it.itemsize * cnt:
                    raise CloudFormatError(f"{path}: truncated binary '{el.name}' data")
                cols[name].append(np.frombuffer(raw, it).tolist())
            else:
                dt = np.dtype("<" + typ)
                raw = fh.read(dt.itemsize)
                if len(raw) != dt.itemsize:
                    raise CloudFormatError(f"{path}: truncated binary '{el.name}' data")
                cols[name].append(np.frombuffer(raw, dt)[0])
    return cols


def _write_ply(cloud, path, include_labels, mesh, binary):
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.normals is not None:
        fields += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
    with_labels = include_labels and cloud.labels is not None
    if with_labels:
        fields.append(("outlier", "u1"))
    ply_name = {"f8": "double", "u1": "uchar"}
    header = ["ply", "format %s 1.0" % ("binary_little_endian" if binary else "ascii"),
              "element vertex %d" % cloud.n]
    header += ["property %s %s" % (ply_name[t], name) for name, t in fields]
    if mesh is not None and len(mesh.faces):
        header += ["element face %d" % len(mesh.faces), "property list uchar int vertex_indices"]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            arr = np.empty(cloud.n, dtype=[(name, "<" + t) for name, t in fields])
            for d, a in enumerate("xyz"):
                arr[a] = cloud.points[:, d]
            if cloud.normals is not None:
                for d, a in enumerate(("nx", "ny", "nz")):
                    arr[a] = cloud.normals[:, d]
            if with_labels:
                arr["outlier"] = cloud.labels
            fh.write(arr.tobytes())
            if mesh is not None and len(mesh.faces):
                farr = np.empty(len(mesh.faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                farr["n"] = 3
                farr["v"] = mesh.faces
                fh.write(farr.tobytes())
        else:
            cols = [cloud.points]
            if cloud.normals is not None:
                cols.append(cloud.normals)
            table = np.hstack(cols)
            for r in range(cloud.n):
                row = " ".join("%.17g" % v for v in table[r])
                if with_labels:
                    row += " %d" % cloud.labels[r]
                fh.write((row + "\n").encode("ascii"))
            if mesh is not None:
                for f in mesh.faces:
                    fh.write(("3 %d %d %d\n" % tuple(f)).encode("ascii"))


def write_cloud(cloud: PointCloud, path, format: Optional[str] = None, include_labels: bool = False,
                mesh: Optional[TriangleMesh] = None, binary: bool = True) -> None:
    """Write ``cloud``; PLY gains a ``uchar outlier`` vertex property when labels are included."""
    if cloud.n == 0:
        raise CloudFormatError("refusing to write empty cloud")
    fmt = (format or detect_format(path)).lower()
    try:
        if fmt == "ply":
            _write_ply(cloud, path, include_labels, mesh, binary)
        elif fmt == "obj":
            _write_obj(cloud, path, mesh)
        elif fmt == "xyz":
            _write_xyz(cloud, path)
        else:
            raise CloudFormatError(f"unsupported format '{fmt}'")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------- labels and reports

def write_truth(labels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "outlier"])
        for i, v in enumerate(np.asarray(labels, dtype=np.uint8)):
            w.writerow([i, int(v)])


def read_truth(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "outlier" not in rows[0]:
        raise CloudFormatError(f"{path}: expected an 'outlier' column")
    if "index" in rows[0]:
        rows.sort(key=lambda r: int(r["index"]))
    return np.array([int(r["outlier"]) for r in rows], dtype=np.uint8)


def report_rows(report: DenoiseReport) -> list[tuple[str, str]]:
    bw = report.chosen_bandwidth
    rows = [
        ("input_count", str(report.input_count)),
        ("filtered_count", str(report.filtered_count)),
        ("t_bandwidth_s", "%.6f" % report.t_bandwidth),
        ("t_outlier_s", "%.6f" % report.t_outlier),
        ("t_smooth_s", "%.6f" % report.t_smooth),
        ("h1", "" if bw is None else repr(bw.h1)),
        ("h2", "" if bw is None else repr(bw.h2)),
        ("h3", "" if bw is None else repr(bw.h3)),
    ]
    for key in sorted(report.stage_parameters):
        val = report.stage_parameters[key]
        rows.append((key, val if isinstance(val, str) else json.dumps(val, sort_keys=True)))
    return rows


def write_report_csv(report: DenoiseReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        w.writerows(report_rows(report))


def format_report_table(report: DenoiseReport, name: str = "") -> str:
    """One row in the shape of a timing table: input, filtered, T_h, T_f, T_s."""
    head = ("Data", "Input points", "Filtered points", "T_h", "T_f", "T_s")
    row = (name or "-", _count(report.input_count), _count(report.filtered_count),
           _duration(report.t_bandwidth), _duration(report.t_outlier), _duration(report.t_smooth))
    widths = [max(len(a), len(b)) for a, b in zip(head, row)]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    return fmt.format(*head) + os.linesep + fmt.format(*row)


def _count(n: int) -> str:
    if n >= 1_000_000:
        return "%.1fM" % (n / 1e6)
    if n >= 1000:
        return "%dK" % round(n / 1e3)
    return str(n)


def _duration(t: float) -> str:
    if t >= 60:
        return "%dm %ds" % (t // 60, round(t % 60))
    return "%.2fs" % t
