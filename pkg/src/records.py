"""
On-disk formats: point-set CSV, SpaceSpec TOML, tour/report JSON and the
scaling records CSV with its wall-time companion file.
"""

import csv
import io
import json
import logging
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Hashable, List, Optional, Sequence, TextIO, Union

import numpy as np
import tomli_w
from filelock import FileLock

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

try:
    from .errors import PointsParseError, SpaceConfigError
    from .spaces import PointSet, SpaceSpec, space_from_toml_dict
except ImportError:
    from errors import PointsParseError, SpaceConfigError
    from spaces import PointSet, SpaceSpec, space_from_toml_dict

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ('space', 'd', 'solver', 'n', 'seed', 'trial', 'length', 'z', 'r',
                  'lower_bound', 'checks', 'error')
TIMING_COLUMNS = ('solver', 'n', 'trial', 'wall_time')
SCATTER_COLUMNS = ('n', 'ratio_nn', 'ratio_greedy', 'opt_scale')

PathLike = Union[str, Path]


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _writer(f: TextIO):
    return csv.writer(f, lineterminator='\n')


# --- point sets -------------------------------------------------------------

def points_to_csv_text(points: PointSet) -> str:
    buf = io.StringIO()
    writer = _writer(buf)
    writer.writerow([f'x{k}' for k in range(points.space.ambient_dim)])
    for row in points.points:
        writer.writerow([format(float(v), '.17g') for v in row])
    return buf.getvalue()


def save_points_csv(points: PointSet, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(points_to_csv_text(points))


def load_points_csv(path: PathLike, space: SpaceSpec) -> PointSet:
    """Read a CSV written by save_points_csv; the header fixes the dimension."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            rows = [row for row in csv.reader(f) if row]
    except FileNotFoundError as e:
        raise PointsParseError(f'points file not found: {path}') from e
    except (UnicodeDecodeError, csv.Error) as e:
        raise PointsParseError(f'{path}: {e}') from e

    if not rows:
        raise PointsParseError(f'{path} is empty')
    header = [h.strip() for h in rows[0]]
    if header != [f'x{k}' for k in range(len(header))]:
        raise PointsParseError(f'{path}: expected a header x0,x1,..., got {",".join(header)}')
    if len(header) != space.ambient_dim:
        raise PointsParseError(
            f'{path} has {len(header)} coordinates per point, space {space.tag} has {space.ambient_dim}'
        )

    coords: List[List[float]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise PointsParseError(f'{path}:{lineno}: expected {len(header)} values, got {len(row)}')
        try:
            coords.append([float(v) for v in row])
        except ValueError as e:
            raise PointsParseError(f'{path}:{lineno}: {e}') from e
    if not coords:
        raise PointsParseError(f'{path} has a header but no points')
    try:
        return PointSet(np.array(coords), space)
    except SpaceConfigError as e:
        raise PointsParseError(f'{path}: {e}') from e


# --- spaces -----------------------------------------------------------------

def save_space_toml(spec: SpaceSpec, path: PathLike):
    with open(path, 'wb') as f:
        tomli_w.dump({'space': spec.to_toml_dict()}, f)


def load_space_toml(path: PathLike) -> SpaceSpec:
    with open(path, 'rb') as f:
        data = tomllib.load(f)
    return space_from_toml_dict(data.get('space', data))


# --- json -------------------------------------------------------------------

def dumps_json(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + '\n'


def write_json(data: Any, path: Optional[PathLike] = None):
    """Write to path under a file lock, or to stdout when path is None."""
    text = dumps_json(data)
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + '.lock'):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)


# --- experiment records -----------------------------------------------------

@dataclass
class ExperimentRecord:
    space: str
    d: float
    solver: str
    n: int
    seed: int
    trial: int
    length: Optional[float] = None
    z: Optional[int] = None
    r: Optional[float] = None
    lower_bound: Optional[float] = None
    checks: Dict[str, bool] = field(default_factory=dict)
    error: Optional[str] = None
    wall_time: Optional[float] = None

    def row(self) -> List[str]:
        checks = ';'.join(f'{k}:{"pass" if ok else "fail"}' for k, ok in self.checks.items())
        return [_cell(getattr(self, c)) for c in RECORD_COLUMNS[:-2]] + [checks, _cell(self.error)]

    def timing_row(self) -> List[str]:
        return [self.solver, str(self.n), str(self.trial), _cell(self.wall_time)]


def timing_path_for(csv_path: PathLike) -> Path:
    path = Path(csv_path)
    return path.with_name(f'{path.stem}.timing.csv')


class OrderedRecordWriter:
    """
    Single appender for grid records. Cells finish in any order; rows reach
    the file in the order of `keys`, each cell written once every earlier
    cell has been written.
    """

    def __init__(self, csv_path: PathLike, keys: Sequence[Hashable], append: bool = False,
                 timing: bool = True):
        self.csv_path = Path(csv_path)
        self.timing_path = timing_path_for(self.csv_path) if timing else None
        self.keys = list(keys)
        self._next = 0
        self._pending: Dict[Hashable, List[ExperimentRecord]] = {}
        self._lock = threading.Lock()
        self.written = 0
        self.csv_path.parent.mkdir(parents=True, exist_ok=True)
        self._start(self.csv_path, RECORD_COLUMNS, append)
        if self.timing_path is not None:
            self._start(self.timing_path, TIMING_COLUMNS, append)

    @staticmethod
    def _start(path: Path, columns: Sequence[str], append: bool):
        with FileLock(str(path) + '.lock'):
            if append and path.exists() and path.stat().st_size > 0:
                with open(path, 'r', encoding='utf-8', newline='') as f:
                    header = next(csv.reader(f), [])
                if tuple(header) != tuple(columns):
                    raise PointsParseError(f'{path} has header {header}, expected {list(columns)}')
                return
            with open(path, 'w', encoding='utf-8', newline='') as f:
                _writer(f).writerow(columns)

    def _append(self, path: Path, rows: List[List[str]]):
        with FileLock(str(path) + '.lock'):
            with open(path, 'a', encoding='utf-8', newline='') as f:
                _writer(f).writerows(rows)

    def add(self, key: Hashable, records: Sequence[ExperimentRecord]):
        with self._lock:
            self._pending[key] = list(records)
            ready: List[ExperimentRecord] = []
            while self._next < len(self.keys) and self.keys[self._next] in self._pending:
                ready.extend(self._pending.pop(self.keys[self._next]))
                self._next += 1
            if ready:
                self._append(self.csv_path, [r.row() for r in ready])
                if self.timing_path is not None:
                    self._append(self.timing_path, [r.timing_row() for r in ready])
                self.written += len(ready)

    def close(self):
        with self._lock:
            if self._next < len(self.keys):
                missing = len(self.keys) - self._next
                logger.warning(f"{missing} grid cells never reported; writing the {len(self._pending)} "
                               f"buffered ones in key order")
                leftovers = [r for k in self.keys[self._next:] for r in self._pending.pop(k, [])]
                if leftovers:
                    self._append(self.csv_path, [r.row() for r in leftovers])
                    if self.timing_path is not None:
                        self._append(self.timing_path, [r.timing_row() for r in leftovers])
                    self.written += len(leftovers)
                self._next = len(self.keys)

    def __enter__(self) -> 'OrderedRecordWriter':
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_records_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))


def save_scatter_csv(rows: Sequence[Sequence[Any]], path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + '.lock'):
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = _writer(f)
            writer.writerow(SCATTER_COLUMNS)
            writer.writerows([_cell(v) for v in row] for row in rows)
