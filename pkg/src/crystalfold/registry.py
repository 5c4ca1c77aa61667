"""Builtin crystallographic groups and the JSON group-file format.

Every wallpaper group ships with one conventional fundamental polytope.
The polytopes of ``pg``, ``p3`` and ``I23`` are deliberately not exact;
all others are.
"""

import json
import logging
import re
from functools import lru_cache
from pathlib import Path

import numpy as np

from .group import CrystalGroup, Isometry, translation

logger = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)
SQUARE = ((1.0, 0.0), (0.0, 1.0))
HEXAGONAL = ((1.0, 0.0), (0.5, SQRT3 / 2.0))
CENTRED = ((0.5, 0.5), (-0.5, 0.5))

ALIASES = {
    "pmm": "p2mm",
    "pmg": "p2mg",
    "pgg": "p2gg",
    "cmm": "c2mm",
    "p4m": "p4mm",
    "p4g": "p4gm",
    "p6m": "p6mm",
}

token_pattern = re.compile(
    r"^(?P<sign>[+-]?)(?P<coeff>\d+(?:\.\d*)?|\.\d+)?"
    r"\*?(?:sqrt(?P<root>\d+))?(?:/(?P<den>\d+(?:\.\d*)?))?$"
)


def parse_token(value):
    """Parses a number or a quadratic-surd token such as ``"-sqrt3/2"``.

    Raises:
        ValueError: If the token is malformed.
    """
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).replace(" ", "")
    match = token_pattern.match(text)
    if not text or match is None or not (
        match.group("coeff") or match.group("root")
    ):
        logger.error(f"Cannot parse numeric token {value!r}")
        raise ValueError(f"Cannot parse numeric token {value!r}")
    number = float(match.group("coeff") or 1.0)
    if match.group("root"):
        number *= np.sqrt(float(match.group("root")))
    if match.group("den"):
        number /= float(match.group("den"))
    return -number if match.group("sign") == "-" else number


def rotation(angle, center=(0.0, 0.0)):
    """Planar rotation by ``angle`` radians about ``center``."""
    c, s = np.cos(angle), np.sin(angle)
    matrix = np.array([[c, -s], [s, c]])
    matrix[np.abs(matrix) < 1e-15] = 0.0
    center = np.asarray(center, dtype=float)
    return Isometry(matrix, center - matrix @ center)


def reflection(normal, point):
    """Reflection in the hyperplane through ``point`` normal to ``normal``."""
    u = np.asarray(normal, dtype=float)
    u = u / np.linalg.norm(u)
    matrix = np.eye(len(u)) - 2.0 * np.outer(u, u)
    return Isometry(matrix, 2.0 * np.dot(point, u) * u)


def isometry(matrix, shift):
    return Isometry(np.asarray(matrix, dtype=float), shift)


def _side_reflections(vertices):
    """Reflections in the sides of a polygon."""
    vertices = np.asarray(vertices, dtype=float)
    result = []
    for a, b in zip(vertices, np.roll(vertices, -1, axis=0)):
        edge = b - a
        result.append(reflection((-edge[1], edge[0]), a))
    return result


MINUS = [[-1, 0], [0, -1]]
MIRROR_X = [[-1, 0], [0, 1]]
QUARTER = [[0, -1], [1, 0]]
ANTI_DIAGONAL = [[0, -1], [-1, 0]]


def _wallpaper():
    t1, t2 = translation([1, 0]), translation([0, 1])
    c1, c2 = translation(CENTRED[0]), translation(CENTRED[1])
    a1 = translation(HEXAGONAL[0])
    third = 2.0 * np.pi / 3.0
    centre3 = (0.5, SQRT3 / 6.0)

    specs = [
        ("p1", [t1, t2], SQUARE, [(0, 0), (1, 0), (1, 1), (0, 1)]),
        (
            "p2",
            [t1, t2, isometry(MINUS, [0, 0])],
            SQUARE,
            [(0, 0), (0.5, 0), (0.5, 1), (0, 1)],
        ),
        (
            "pm",
            [t1, t2, isometry(MIRROR_X, [0, 0])],
            SQUARE,
            [(0, 0), (0.5, 0), (0.5, 1), (0, 1)],
        ),
        (
            "pg",
            [
                isometry([[1, 0], [0, -1]], [0.5, 1]),
                isometry([[1, 0], [0, -1]], [0.5, 0]),
            ],
            SQUARE,
            [(0, 0), (1, 0), (1, 0.5), (0, 0.5)],
        ),
        (
            "p2mm",
            [
                reflection((1, 0), (0, 0)),
                reflection((1, 0), (0.5, 0)),
                reflection((0, 1), (0, 0)),
                reflection((0, 1), (0, 0.5)),
            ],
            SQUARE,
            [(0, 0), (0.5, 0), (0.5, 0.5), (0, 0.5)],
        ),
        (
            "p2mg",
            [t1, t2, isometry(MINUS, [0, 0]), isometry(MIRROR_X, [0.5, 0])],
            SQUARE,
            [(0, 0), (0.25, 0), (0.25, 1), (0, 1)],
        ),
        (
            "p2gg",
            [
                t1,
                t2,
                isometry(MINUS, [0, 0]),
                isometry(MIRROR_X, [0.5, 0.5]),
            ],
            SQUARE,
            [(0, 0), (0.5, 0), (0.5, 0.5), (0, 0.5)],
        ),
        (
            "cm",
            [c1, c2, isometry(MIRROR_X, [0, 0])],
            CENTRED,
            [(0, 0), (0.5, 0), (0.5, 0.5), (0, 0.5)],
        ),
        (
            "c2mm",
            [
                c1,
                c2,
                isometry(MINUS, [0, 0]),
                isometry(MIRROR_X, [0, 0]),
            ],
            CENTRED,
            [(0, 0), (0.25, 0), (0.25, 0.5), (0, 0.5)],
        ),
        (
            "p4",
            [t1, t2, isometry(QUARTER, [0, 0])],
            SQUARE,
            [(0, 0), (0.5, 0), (0.5, 0.5), (0, 0.5)],
        ),
        (
            "p4mm",
            [
                t1,
                t2,
                isometry(QUARTER, [0, 0]),
                isometry(MIRROR_X, [0, 0]),
            ],
            SQUARE,
            [(0, 0), (0.5, 0), (0.5, 0.5)],
        ),
        (
            "p4gm",
            [
                t1,
                t2,
                isometry(QUARTER, [0, 0]),
                isometry(ANTI_DIAGONAL, [0.5, 0.5]),
            ],
            SQUARE,
            [(0, 0), (0.5, 0), (0, 0.5)],
        ),
        (
            "p3",
            [a1, rotation(third)],
            HEXAGONAL,
            [
                (0, 0),
                (0.5, SQRT3 / 6.0),
                (0.5, SQRT3 / 3.0),
                (0, SQRT3 / 3.0),
                (-0.25, SQRT3 / 12.0),
            ],
        ),
        (
            "p3m1",
            _side_reflections([(0, 0), centre3, (0, SQRT3 / 3.0)]),
            HEXAGONAL,
            [(0, 0), centre3, (0, SQRT3 / 3.0)],
        ),
        (
            "p31m",
            [a1, rotation(third), isometry([[1, 0], [0, -1]], [0, 0])],
            HEXAGONAL,
            [(0, 0), (1, 0), centre3],
        ),
        (
            "p6",
            [a1, rotation(np.pi / 3.0)],
            HEXAGONAL,
            [(0, 0), (1, 0), centre3],
        ),
        (
            "p6mm",
            _side_reflections([(0, 0), (0.5, 0), centre3]),
            HEXAGONAL,
            [(0, 0), (0.5, 0), centre3],
        ),
    ]
    return specs


def _i23_halfspaces():
    # Asymmetric unit: the cube [0, 1/2]^3 is fundamental for the sign
    # flips and the centring, and z <= min(x, y) picks one of the three
    # cyclic images. Faces on z = 0 are glued to split faces on x = 1/2
    # and y = 1/2, so the polytope is not exact.
    return np.array(
        [
            [1, 0, 0, 0.5],
            [0, 1, 0, 0.5],
            [0, 0, -1, 0],
            [-1, 0, 1, 0],  # z <= x
            [0, -1, 1, 0],  # z <= y
        ],
        dtype=float,
    )


@lru_cache(maxsize=None)
def _builtin(name):
    for group_name, generators, lattice, vertices in _wallpaper():
        if group_name == name:
            return CrystalGroup(
                group_name,
                2,
                generators,
                lattice,
                polytope_vertices=vertices,
                aliases=tuple(k for k, v in ALIASES.items() if v == name),
            )
    if name == "line-p1":
        return CrystalGroup(
            name, 1, [translation([1.0])], [[1.0]], [[0.0], [1.0]]
        )
    if name == "line-pm":
        return CrystalGroup(
            name,
            1,
            [translation([1.0]), Isometry([[-1.0]], [0.0])],
            [[1.0]],
            [[0.0], [0.5]],
        )
    if name == "P1":
        corners = np.array(np.meshgrid(*[[0, 1]] * 3)).T.reshape(-1, 3)
        return CrystalGroup(
            name,
            3,
            [translation(v) for v in np.eye(3)],
            np.eye(3),
            polytope_vertices=corners,
        )
    if name == "I23":
        return CrystalGroup(
            name,
            3,
            [
                Isometry(np.diag([-1.0, -1.0, 1.0]), np.zeros(3)),
                Isometry(
                    [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                    np.zeros(3),
                ),
                translation([0.5, 0.5, 0.5]),
            ],
            [[-0.5, 0.5, 0.5], [0.5, -0.5, 0.5], [0.5, 0.5, -0.5]],
            polytope_halfspaces=_i23_halfspaces(),
        )
    return None


WALLPAPER_GROUPS = (
    "p1", "p2", "pm", "pg", "p2mm", "p2mg", "p2gg", "cm", "c2mm",
    "p4", "p4mm", "p4gm", "p3", "p3m1", "p31m", "p6", "p6mm",
)  # fmt: skip
OTHER_GROUPS = ("line-p1", "line-pm", "P1", "I23")


def list_groups():
    """Names of all builtin groups, wallpaper groups first."""
    return list(WALLPAPER_GROUPS + OTHER_GROUPS)


def get_group(name):
    """Looks up a builtin group by name or alias.

    Raises:
        KeyError: If the name is unknown; the message lists valid names.
    """
    canonical = ALIASES.get(name, name)
    if canonical not in WALLPAPER_GROUPS + OTHER_GROUPS:
        valid = ", ".join(list_groups() + sorted(ALIASES))
        logger.error(f"Unknown group {name!r}")
        raise KeyError(f"Unknown group {name!r}; valid names: {valid}")
    return _builtin(canonical)


def group_from_dict(data):
    """Builds a group from the JSON group-file structure.

    Raises:
        ValueError: If a field is missing or malformed.
    """
    try:
        n = int(data["dimension"])
        generators = [
            Isometry(
                np.array(
                    [parse_token(v) for v in g["matrix"]], dtype=float
                ).reshape(n, n),
                [parse_token(v) for v in g["translation"]],
            )
            for g in data["generators"]
        ]
        lattice = [
            [parse_token(v) for v in row] for row in data["lattice_basis"]
        ]
        vertices = data.get("polytope_vertices")
        halfspaces = data.get("polytope_halfspaces")
        if vertices is not None:
            vertices = [[parse_token(v) for v in row] for row in vertices]
        if halfspaces is not None:
            halfspaces = [[parse_token(v) for v in row] for row in halfspaces]
        name = str(data["name"])
    except KeyError as error:
        logger.error(f"Group definition is missing field {error}")
        raise ValueError(f"Group definition is missing field {error}")
    if vertices is None and halfspaces is None:
        logger.error(f"Group {name} declares no polytope")
        raise ValueError(
            "Group definition needs polytope_vertices or polytope_halfspaces"
        )
    return CrystalGroup(
        name,
        n,
        generators,
        np.array(lattice, dtype=float).reshape(-1, n),
        polytope_vertices=vertices,
        polytope_halfspaces=halfspaces,
    )


def load_group_file(path):
    """Reads a group definition from a JSON file.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the content is not a valid group definition.
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Group file {path} not found")
        raise FileNotFoundError(f"Group file {path} not found")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as error:
        logger.error(f"Group file {path} is not valid JSON: {error}")
        raise ValueError(f"Group file {path} is not valid JSON: {error}")
    logger.info(f"Loaded group definition {data.get('name')} from {path}")
    return group_from_dict(data)


def group_to_dict(group):
    data = {
        "name": group.name,
        "dimension": group.dimension,
        "generators": [
            {
                "matrix": g.matrix.ravel().tolist(),
                "translation": g.translation.tolist(),
            }
            for g in group.generators
        ],
        "lattice_basis": group.lattice_basis.tolist(),
    }
    if group.polytope_vertices is not None:
        data["polytope_vertices"] = group.polytope_vertices.tolist()
    if group.polytope_halfspaces is not None:
        data["polytope_halfspaces"] = group.polytope_halfspaces.tolist()
    return data


def resolve_group(name_or_path):
    """A builtin group by name, or a group file when the argument is a path."""
    if str(name_or_path).endswith(".json") or Path(name_or_path).is_file():
        return load_group_file(name_or_path)
    return get_group(name_or_path)
