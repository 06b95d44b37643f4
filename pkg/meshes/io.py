"""Readers and writers for OFF and ASCII PLY triangle meshes."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from meshes.geometry import TriangleMesh

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

MeshFormat = Literal["OFF", "PLY-ascii"]

SUFFIX_FORMATS: dict[str, MeshFormat] = {".off": "OFF", ".ply": "PLY-ascii"}


class MeshParseError(ValueError):
    """Malformed mesh file; the message names the offending line."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _content_lines(text: str) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line_number, tokens)`` skipping blanks and ``#`` comments."""

    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            yield number, stripped.split()


def _decode(data: bytes | str) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MeshParseError(f"not a text mesh file (byte offset {exc.start})") from exc
    return data


def _parse_floats(tokens: list[str], count: int, line: int, what: str) -> list[float]:
    if len(tokens) < count:
        raise MeshParseError(f"{what} needs {count} values, found {len(tokens)}", line)
    try:
        return [float(token) for token in tokens[:count]]
    except ValueError:
        raise MeshParseError(f"{what} has a non-numeric value: {' '.join(tokens)}", line) from None


def _parse_face(tokens: list[str], line: int, n_vertices: int) -> list[int]:
    try:
        values = [int(token) for token in tokens]
    except ValueError:
        raise MeshParseError(f"face has a non-integer value: {' '.join(tokens)}", line) from None
    if not values or values[0] != 3:
        raise MeshParseError(f"only triangular faces are supported, got {values[:1]} corners", line)
    if len(values) < 4:
        raise MeshParseError("triangular face needs 3 vertex indices", line)
    face = values[1:4]
    for index in face:
        if not 0 <= index < n_vertices:
            raise MeshParseError(f"vertex index {index} out of range (0..{n_vertices - 1})", line)
    return face


def _parse_off(text: str) -> TriangleMesh:
    lines = _content_lines(text)
    try:
        number, tokens = next(lines)
    except StopIteration:
        raise MeshParseError("empty OFF file", 1) from None
    if tokens[0] != "OFF":
        raise MeshParseError(f"expected 'OFF' header, found {tokens[0]!r}", number)
    counts = tokens[1:]
    if not counts:
        try:
            number, counts = next(lines)
        except StopIteration:
            raise MeshParseError("missing vertex/face counts", number) from None
    try:
        n_vertices, n_faces = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshParseError(f"malformed counts line: {' '.join(counts)}", number) from None

    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for number, tokens in lines:
        if len(vertices) < n_vertices:
            vertices.append(_parse_floats(tokens, 3, number, "vertex"))
        elif len(faces) < n_faces:
            faces.append(_parse_face(tokens, number, n_vertices))
        else:
            raise MeshParseError("unexpected data after the declared faces", number)
    if len(vertices) < n_vertices:
        raise MeshParseError(f"expected {n_vertices} vertices, found {len(vertices)}", number)
    if len(faces) < n_faces:
        raise MeshParseError(f"expected {n_faces} faces, found {len(faces)}", number)
    return TriangleMesh(np.asarray(vertices).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def _parse_ply(text: str) -> TriangleMesh:
    lines = _content_lines(text)
    try:
        number, tokens = next(lines)
    except StopIteration:
        raise MeshParseError("empty PLY file", 1) from None
    if tokens != ["ply"]:
        raise MeshParseError("expected 'ply' magic line", number)

    elements: list[tuple[str, int, list[str]]] = []
    seen_format = False
    for number, tokens in lines:
        keyword = tokens[0]
        if keyword == "format":
            if tokens[1:2] != ["ascii"]:
                raise MeshParseError(f"unsupported PLY format {' '.join(tokens[1:])}", number)
            seen_format = True
        elif keyword == "element":
            if len(tokens) != 3:
                raise MeshParseError("element line needs a name and a count", number)
            try:
                elements.append((tokens[1], int(tokens[2]), []))
            except ValueError:
                raise MeshParseError(f"bad element count {tokens[2]!r}", number) from None
        elif keyword == "property":
            if not elements:
                raise MeshParseError("property declared before any element", number)
            elements[-1][2].append(tokens[-1])
        elif keyword in ("comment", "obj_info"):
            continue
        elif keyword == "end_header":
            break
        else:
            raise MeshParseError(f"unknown header keyword {keyword!r}", number)
    else:
        raise MeshParseError("missing end_header", number)
    if not seen_format:
        raise MeshParseError("missing format line", number)

    declared = {name: (count, props) for name, count, props in elements}
    if "vertex" not in declared:
        raise MeshParseError("no vertex element declared", number)
    vertex_props = declared["vertex"][1]
    try:
        axes = [vertex_props.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise MeshParseError("vertex element lacks x/y/z properties", number) from None
    n_vertices = declared["vertex"][0]

    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for name, count, props in elements:
        for _ in range(count):
            try:
                number, tokens = next(lines)
            except StopIteration:
                raise MeshParseError(f"expected {count} {name} lines, file ended early", number) from None
            if name == "vertex":
                values = _parse_floats(tokens, len(props), number, "vertex")
                vertices.append([values[k] for k in axes])
            elif name == "face":
                faces.append(_parse_face(tokens, number, n_vertices))
    for number, _ in lines:
        raise MeshParseError("unexpected data after the declared elements", number)
    return TriangleMesh(np.asarray(vertices).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def load_mesh(data: bytes | str, fmt: MeshFormat) -> TriangleMesh:
    """Parse mesh bytes in the declared format; no normalisation is applied."""

    text = _decode(data)
    if fmt == "OFF":
        mesh = _parse_off(text)
    elif fmt == "PLY-ascii":
        mesh = _parse_ply(text)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    LOGGER.debug("parsed %s mesh: %d vertices, %d faces", fmt, mesh.n_vertices, mesh.n_faces)
    return mesh


def format_for(path: Path) -> MeshFormat:
    try:
        return SUFFIX_FORMATS[Path(path).suffix.lower()]
    except KeyError:
        raise ValueError(f"cannot infer mesh format from {path}") from None


def read_mesh(path: Path) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh not found: {path}")
    return load_mesh(path.read_bytes(), format_for(path))


def format_off(mesh: TriangleMesh) -> str:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    lines.extend(" ".join(repr(float(c)) for c in vertex) for vertex in mesh.vertices)
    lines.extend("3 " + " ".join(str(int(i)) for i in face) for face in mesh.faces)
    return "\n".join(lines) + "\n"


def write_off(mesh: TriangleMesh, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_off(mesh), encoding="utf-8")
    return path


__all__ = ["MeshFormat", "MeshParseError", "format_off", "load_mesh", "read_mesh", "write_off"]
