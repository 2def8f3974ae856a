"""CSV ingestion and output, trace archives, manifests and key=value run configs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .mcmc import ChainConfig, Draw, PosteriorTrace
from .model import ExpressionDataset, Hyperparams, ModelError, RawDataset, transform


class ParseError(ValueError):
    """Malformed input file; carries the file and 1-based line number."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


# ---------------------------------------------------------------------------
# delimited matrices


def _parse_token(token: str, path, line: int, col: str) -> float:
    t = token.strip()
    if t == "":
        return math.nan
    try:
        x = float(t)
    except ValueError:
        raise ParseError(path, line, f"non-numeric value {token!r} in column {col!r}") from None
    if not math.isfinite(x):
        raise ParseError(path, line, f"non-finite value {token!r} in column {col!r}; leave the field empty for missing")
    return x


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    """Header names and values of one CSV file; empty fields become ``nan``."""
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError:
        raise ParseError(path, None, "file is not valid UTF-8 text") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows or not any(field.strip() for field in rows[0]):
        raise ParseError(path, 1, "missing header row")
    header = [h.strip() for h in rows[0]]
    if any(h == "" for h in header):
        raise ParseError(path, 1, "empty column name in header")
    if len(set(header)) != len(header):
        raise ParseError(path, 1, "duplicate column names in header")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue  # blank line
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, found {len(row)}")
        values.append([_parse_token(tok, path, lineno, col) for tok, col in zip(row, header)])
    if not values:
        raise ParseError(path, None, "no data rows")
    return header, np.array(values, dtype=float)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_matrix(path, header, values) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in np.asarray(values, dtype=float):
            writer.writerow([_fmt(x) for x in row])


def read_cutoffs(path, markers, n_samples: int) -> np.ndarray:
    header, values = read_matrix(path)
    if header != list(markers):
        raise ParseError(path, 1, "cutoff header does not match the sample marker names")
    if len(values) != n_samples:
        raise ParseError(path, None, f"expected {n_samples} cutoff rows (one per sample), found {len(values)}")
    if np.isnan(values).any():
        r = int(np.argwhere(np.isnan(values))[0, 0])
        raise ParseError(path, r + 2, "cutoffs may not be empty")
    return values


def load_raw(paths, cutoff_path) -> RawDataset:
    markers, values = _read_samples(paths)
    return RawDataset(values, read_cutoffs(cutoff_path, markers, len(paths)), markers)


def _read_samples(paths):
    if not paths:
        raise ModelError("no sample files given")
    markers, values = None, []
    for p in paths:
        header, v = read_matrix(p)
        if markers is None:
            markers = header
        elif header != markers:
            raise ParseError(p, 1, f"header {header} does not match first sample's {markers}")
        values.append(v)
    return markers, values


def load_csv(paths, cutoffs=None) -> ExpressionDataset:
    """One CSV per sample (header = marker names, one row per cell).

    With a cutoff file the values are raw intensities and are log-transformed;
    otherwise they are taken as already transformed expressions.
    """
    if cutoffs is not None:
        return transform(load_raw(paths, cutoffs))
    markers, values = _read_samples(paths)
    return ExpressionDataset.from_samples(values, markers)


def write_csv(data: ExpressionDataset, directory, prefix: str = "sample") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i in range(data.I):
        p = directory / f"{prefix}_{i + 1}.csv"
        write_matrix(p, data.markers, data.sample_y(i))
        out.append(p)
    return out


def write_labels(path, labels, name: str = "label") -> None:
    with open(path, "w") as fh:
        fh.write(name + "\n")
        fh.writelines(f"{int(x)}\n" for x in labels)


# ---------------------------------------------------------------------------
# traces


_SLIM = ("Z", "w", "lam", "gam", "delta0", "delta1", "sigma2", "eps", "y_missing")
_FULL = ("v", "alpha", "eta0", "eta1")


def save_trace(path, trace: PosteriorTrace, data: ExpressionDataset, full_state: bool = False) -> None:
    """Write draws stacked along a leading axis, plus the data they were fitted to.

    Arrays: Z (B,J,K) int8, w (B,I,K), lam (B,N) int16, gam (B,N,J) int8,
    delta0 (B,L0), delta1 (B,L1), sigma2 (B,I), eps (B,I), y_missing (B,M)
    in row-major order of the missing mask; with ``full_state`` also v, alpha,
    eta0 and eta1.
    """
    arrays = {}
    for name in _SLIM + (_FULL if full_state else ()):
        arrays[name] = np.stack([np.asarray(getattr(d, name)) for d in trace.draws])
    arrays["Z"] = arrays["Z"].astype(np.int8)
    arrays["lam"] = arrays["lam"].astype(np.int16)
    arrays["gam"] = arrays["gam"].astype(np.int8)
    hyper = asdict(trace.hyper)
    np.savez_compressed(
        path, **arrays,
        iterations=trace.iterations, loglik=trace.loglik, seed=np.int64(trace.seed), beta=trace.beta,
        hyper=json.dumps(hyper), config=json.dumps(_config_dict(trace.config)),
        data_y=data.y, data_m=data.m, sizes=data.sizes, markers=np.array(data.markers),
        wall_time=np.float64(trace.wall_time),
    )


def _config_dict(cfg: ChainConfig | None):
    if cfg is None:
        return None
    d = asdict(cfg)
    d["fixed"] = sorted(cfg.fixed)
    return d


def load_trace(path) -> tuple[PosteriorTrace, ExpressionDataset]:
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ParseError(path, None, f"not a trace archive ({exc})") from None
    with z:
        missing = [k for k in _SLIM + ("hyper", "data_y", "data_m", "sizes", "markers") if k not in z]
        if missing:
            raise ParseError(path, None, f"trace archive lacks {missing}")
        arr = {k: z[k] for k in z.files}
    hyper = Hyperparams(**json.loads(str(arr["hyper"])))
    cfg = json.loads(str(arr["config"])) if "config" in arr else None
    config = ChainConfig(**{**cfg, "fixed": frozenset(cfg["fixed"])}) if cfg else None
    B = arr["Z"].shape[0]
    draws = []
    for b in range(B):
        kw = {k: arr[k][b] for k in _SLIM}
        kw["lam"] = kw["lam"].astype(np.intp)
        for k in _FULL:
            if k in arr:
                kw[k] = float(arr[k][b]) if k == "alpha" else arr[k][b]
        draws.append(Draw(**kw))
    data = ExpressionDataset.from_samples(np.split(arr["data_y"], np.cumsum(arr["sizes"])[:-1]),
                                          [str(m) for m in arr["markers"]],
                                          np.split(arr["data_m"], np.cumsum(arr["sizes"])[:-1]))
    trace = PosteriorTrace(draws=draws, iterations=arr["iterations"], seed=int(arr["seed"]), hyper=hyper,
                           beta=arr["beta"], loglik=arr["loglik"], config=config,
                           wall_time=float(arr.get("wall_time", 0.0)), sizes=arr["sizes"])
    return trace, data


def write_manifest(path, **entries) -> None:
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


# ---------------------------------------------------------------------------
# run configuration


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(path, lineno, f"expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(path, lineno, "empty key")
        if key in out:
            raise ParseError(path, lineno, f"duplicate key {key!r}")
        out[key] = value
    return out


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def parse_grid(text: str) -> list[int]:
    """``"2..8"`` or ``"2,3,5"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        grid = list(range(int(lo), int(hi) + 1))
    else:
        grid = [int(t) for t in text.split(",") if t.strip()]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
        raise ConfigError(f"K grid must be nonempty, positive and strictly increasing: {text!r}")
    return grid


def parse_anchors(text: str) -> np.ndarray:
    """``"-6:0.2, -4:0.8, -2:0.05"`` -> (3, 2)."""
    pts = []
    for part in text.split(","):
        if part.strip():
            y, r = part.split(":")
            pts.append((float(y), float(r)))
    if len(pts) != 3:
        raise ConfigError("anchors need exactly three y:rho pairs")
    return np.array(pts)


_HYPER_KEYS = [f.name for f in fields(Hyperparams) if f.name != "K"]


@dataclass
class RunConfig:
    samples: list = field(default_factory=list)
    cutoffs: str | None = None
    K: int = 5
    k_grid: list = field(default_factory=lambda: [5])
    n_iter: int = 4000
    burn_in: int = 1000
    thin: int = 2
    seed: int = 0
    proposal_sd: float = 0.5
    fixed: frozenset = frozenset()
    hyper: dict = field(default_factory=dict)
    beta: list | None = None
    anchors: list | None = None
    quantiles: tuple = (0.0, 0.25, 0.5)
    rho_targets: tuple = (0.05, 0.80, 0.05)
    preprocess: bool = False
    pos_frac: float = 0.9
    miss_frac: float = 0.9
    floor: float = -6.0
    out: str = "out"
    full_state: bool = False
    jobs: int = 1
    threshold: float = 0.01
    min_weight: float = 0.01

    @classmethod
    def from_mapping(cls, mapping: dict, base_dir=None) -> "RunConfig":
        cfg = cls()
        cfg.update(mapping, base_dir)
        return cfg

    def update(self, mapping: dict, base_dir=None) -> "RunConfig":
        """Apply string or typed values; relative paths resolve against ``base_dir``."""
        for key, value in mapping.items():
            if value is None:
                continue
            try:
                self._set(key, value, base_dir)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        self.validate()
        return self

    def _set(self, key, value, base_dir):
        text = value if isinstance(value, str) else None

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() or base_dir is None else Path(base_dir) / p)

        if key == "samples":
            items = [s.strip() for s in text.split(",")] if text is not None else list(value)
            self.samples = [resolve(s) for s in items if s]
        elif key == "cutoffs":
            self.cutoffs = resolve(value)
        elif key == "K":
            self.K = int(value)
            self.k_grid = [self.K]
        elif key == "k_grid":
            self.k_grid = parse_grid(text) if text is not None else [int(k) for k in value]
        elif key in ("n_iter", "burn_in", "thin", "seed", "jobs"):
            setattr(self, key, int(value))
        elif key in ("proposal_sd", "pos_frac", "miss_frac", "floor", "threshold", "min_weight"):
            setattr(self, key, float(value))
        elif key == "fixed":
            items = text.split(",") if text is not None else value
            self.fixed = frozenset(s.strip() for s in items if s.strip())
        elif key in _HYPER_KEYS:
            self.hyper[key] = float(value)
        elif key == "beta":
            self.beta = _floats(text) if text is not None else [float(x) for x in np.ravel(value)]
        elif key == "anchors":
            self.anchors = (parse_anchors(text) if text is not None else np.asarray(value, dtype=float)).tolist()
        elif key in ("quantiles", "rho_targets"):
            vals = tuple(_floats(text) if text is not None else value)
            if len(vals) != 3:
                raise ValueError("need three values")
            setattr(self, key, vals)
        elif key in ("preprocess", "full_state"):
            setattr(self, key, _bool(value))
        elif key == "out":
            self.out = resolve(value)
        else:
            raise ValueError("unknown key")

    def validate(self):
        if self.beta is not None and len(self.beta) % 3:
            raise ConfigError("beta needs three coefficients per sample")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        for k in self.hyper:
            if k in ("L0", "L1"):
                self.hyper[k] = int(self.hyper[k])
        self.chain_config()
        self.hyperparams(self.K)

    def chain_config(self, seed=None) -> ChainConfig:
        try:
            return ChainConfig(n_iter=self.n_iter, burn_in=self.burn_in, thin=self.thin,
                               seed=self.seed if seed is None else seed, proposal_sd=self.proposal_sd,
                               fixed=self.fixed)
        except ModelError as exc:
            raise ConfigError(str(exc)) from None

    def hyperparams(self, K) -> Hyperparams:
        try:
            return Hyperparams(K=K, **self.hyper)
        except (ModelError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> dict:
        d = asdict(self)
        d["fixed"] = sorted(self.fixed)
        return d


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")
