from pathlib import Path
from typing import Optional


def parse_levels(levels: Path | str | list[float] | None = None) -> Optional[list[float]]:
    """Converts the input into a list of capital levels.

    Args:
        levels (Path | str | list[float] | None, optional):
            The levels can be:
            - A `Path` to a file with one value per line (or comma separated).
            - A `str` of comma-separated values, or the path of such a file.
            - A `list` of numbers.
            - `None`, in which case the function will return `None`.

    Returns:
        Optional[list[float]]: The capital levels in the given order, or `None` if the input is empty.
    """
    if levels is None or (isinstance(levels, (str, list, tuple)) and len(levels) == 0):
        return None

    if isinstance(levels, str) and Path(levels).is_file():
        levels = Path(levels)

    if isinstance(levels, Path):
        levels = levels.read_text()

    if isinstance(levels, str):
        return parse_floats(levels)

    return [float(level) for level in levels]


def parse_floats(text: str) -> list[float]:
    """Parses numbers separated by commas, whitespace or newlines. Lines starting with ``#`` are skipped."""
    values = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        values.extend(float(token) for token in line.replace(",", " ").split())
    return values


def parse_ints(text: str) -> list[int]:
    """Like :func:`parse_floats` for integers; a ``start:stop:step`` token expands to a range."""
    values = []
    for token in text.replace(",", " ").split():
        if ":" in token:
            values.extend(range(*(int(part) for part in token.split(":"))))
        else:
            values.append(int(float(token)))
    return values
