"""End-to-end runs: configuration, labeling modes, reports, exports and timing."""

from __future__ import annotations

import dataclasses
import json
import logging
import statistics
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anchors import kmeans
from .clustering import ClusterConfig, pseudo_label_anchors, run_clustering
from .cube import HsiCube, SpectralPCA, load_cube, max_abs_scale, save_labels
from .estimator import UNLABELED, AnchorGraphLabelPropagation
from .metrics import classification_metrics, clustering_metrics, format_table
from .noise import NoiseSpec, apply_noise
from .sparse_graph import anchor_kernel

log = logging.getLogger(__name__)

REPORT_SCHEMA = "hsiprop.report/1"

# Per-scene defaults; anchors m = 5 labels x classes for the truth-mode tables.
PRESETS = {
    "indian_pines": dict(d=30, theta=3000, sigma2=0.2, k=1000, m=80),
    "salinas": dict(d=40, theta=4000, sigma2=1.0, k=500, m=80, beta=35.0, h=25),
    "pavia": dict(d=50, theta=4000, sigma2=2.0, k=500, m=45, beta=25.0, h=110),
}


@dataclass
class RunConfig:
    cube: str | None = None
    labels: str | None = None
    preset: str | None = None
    d: int = 30
    theta: int = 3000
    sigma2: float = 0.2
    k: int = 1000
    alpha: float = 0.99
    m: int | None = None
    mode: str = "truth"  # truth | cluster
    anchor_strategy: str = "sample"  # sample | kmeans (truth mode)
    s: int = 5
    c: int | None = None
    beta: float = 35.0
    h: int = 25
    cluster_max_iter: int = 50
    noise: str | None = None
    noise_scale: float = 0.0
    seed: int = 0
    workers: int = 1
    solver: str = "cg"
    classify_background: bool = False

    def __post_init__(self):
        if self.preset:
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
            defaults = RunConfig()
            for key, value in PRESETS[self.preset].items():
                # explicit non-default values win over the preset
                if getattr(self, key) == getattr(defaults, key):
                    setattr(self, key, value)
        self.validate()

    def validate(self):
        if self.mode not in ("truth", "cluster"):
            raise ValueError(f"mode must be 'truth' or 'cluster', got {self.mode!r}")
        if self.anchor_strategy not in ("sample", "kmeans"):
            raise ValueError(f"anchor_strategy must be 'sample' or 'kmeans'")
        for name in ("d", "theta", "k", "s", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sigma2 <= 0 or not 0 < self.alpha < 1 or self.beta <= 0:
            raise ValueError("need sigma2 > 0, 0 < alpha < 1 and beta > 0")
        if self.noise is not None:
            NoiseSpec(self.noise, self.noise_scale, self.seed)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def noise_spec(self) -> NoiseSpec | None:
        if self.noise is None:
            return None
        return NoiseSpec(self.noise, float(self.noise_scale), int(self.seed))


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name, text):
    kind = str(_FIELD_TYPES[name])
    if text.lower() in ("none", ""):
        return None
    if "bool" in kind:
        return text.lower() in ("1", "true", "yes", "on")
    if "int" in kind:
        return int(text)
    if "float" in kind:
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown setting {key!r}")
        values[key] = _coerce(key, value)
    return values


def load_config(path=None, **overrides) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def sample_per_class(truth, rows, s: int, rng) -> np.ndarray:
    """Pick ``s`` rows per class; classes with fewer than ``s`` pixels give s // 2."""
    picked = []
    for cls in np.unique(truth[rows]):
        members = rows[truth[rows] == cls]
        take = s if members.size > s else max(1, min(s // 2, members.size - 1))
        picked.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.array([], dtype=np.int64)


class PipelineError(RuntimeError):
    """A module error annotated with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunResult:
    report: dict
    class_map: np.ndarray
    estimator: AnchorGraphLabelPropagation = field(repr=False)


class _Clock:
    def __init__(self):
        self.stages = {}
        self.current = "setup"

    def __call__(self, name):
        clock = self

        class _Span:
            def __enter__(self):
                clock.current = name
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.stages[name] = clock.stages.get(name, 0.0) + time.perf_counter() - self.t0

        return _Span()


def run_pipeline(config: RunConfig, cube: HsiCube | None = None) -> RunResult:
    """Load, normalise, reduce, pick and label anchors, propagate, score."""
    clock = _Clock()
    try:
        with warnings.catch_warnings(record=True) as records:
            warnings.simplefilter("always")
            result = _run(config, cube, clock)
    except Exception as exc:
        raise PipelineError(clock.current, exc) from exc
    for w in records:
        log.warning("%s", w.message)
    result.report["warnings"] = sorted({str(w.message) for w in records})
    return result


def _run(config, cube, clock):
    with clock("load"):
        if cube is None:
            if not config.cube:
                raise ValueError("no cube given")
            cube = load_cube(config.cube, config.labels)
    if cube.truth is None:
        raise ValueError("a truth raster is required for scoring and truth-mode labels")

    with clock("normalize"):
        values, peak = max_abs_scale(cube.values)
    noise = config.noise_spec
    if noise is not None:
        with clock("noise"):
            values = apply_noise(values, noise)

    truth = cube.truth.ravel()
    annotated = truth > 0
    rows = np.arange(truth.size) if config.classify_background else np.flatnonzero(annotated)
    pixels = values.reshape(-1, cube.bands)[rows]
    row_truth = truth[rows]

    with clock("pca"):
        pca = SpectralPCA(min(config.d, cube.bands)).fit(pixels[row_truth > 0])
        feats = pca.transform(pixels)

    rng = np.random.default_rng(config.seed)
    n_classes = int(config.c or cube.n_classes or truth.max())
    cluster_info = None
    with clock("anchors"):
        labeled_local = np.flatnonzero(row_truth > 0)
        if config.mode == "truth" and config.anchor_strategy == "sample":
            anchor_local = sample_per_class(row_truth, labeled_local, config.s, rng)
        else:
            m = config.m or config.s * n_classes
            pool = labeled_local if config.mode == "truth" else np.arange(rows.size)
            anchor_local = pool[kmeans(feats[pool], m, seed=config.seed).source_rows]

    with clock("labeling"):
        y = np.full(rows.size, UNLABELED)
        if config.mode == "truth":
            y[anchor_local] = row_truth[anchor_local]
        else:
            W_ll = anchor_kernel(feats[anchor_local], config.sigma2)
            cres = run_clustering(
                W_ll,
                ClusterConfig(n_classes, config.beta, config.h, config.cluster_max_iter),
            )
            pseudo_label_anchors(cres.labels, n_classes)
            y[anchor_local] = cres.labels + 1
            cluster_info = {
                "labels": (cres.labels + 1).tolist(),
                "n_iter": cres.n_iter,
                "converged": cres.converged,
                "repaired": cres.repaired,
                "beta": cres.beta,
                "trace": cres.trace,
            }

    with clock("propagation"):
        est = AnchorGraphLabelPropagation(
            sigma2=config.sigma2, k=config.k, alpha=config.alpha, theta=config.theta,
            solver=config.solver, n_jobs=config.workers,
        ).fit(feats, y)

    pred = est.transduction_
    class_map = np.zeros(truth.size, dtype=np.int64)
    class_map[rows] = pred
    class_map = class_map.reshape(cube.height, cube.width)

    with clock("metrics"):
        eval_mask = annotated.copy()
        eval_mask[rows[anchor_local]] = False
        if config.mode == "truth":
            metrics = classification_metrics(class_map, truth, eval_mask, n_classes)
        else:
            metrics = clustering_metrics(class_map, truth, eval_mask)

    stage_totals = {}
    for res in est.slice_results_:
        for key, value in res.timings.items():
            stage_totals[key] = stage_totals.get(key, 0.0) + value
    converged = est.converged_ and (cluster_info is None or cluster_info["converged"])
    anchor_pos = np.column_stack(np.unravel_index(rows[anchor_local], (cube.height, cube.width)))
    report = {
        "schema": REPORT_SCHEMA,
        "config": dataclasses.asdict(config),
        "scene": {
            "height": cube.height, "width": cube.width, "bands": cube.bands,
            "n_classes": n_classes, "n_pixels": int(rows.size), "scale": peak,
        },
        "pca": {"d": int(pca.n_components), "explained_variance_ratio": float(pca.explained_variance_ratio_.sum())},
        "anchors": {
            "m": int(anchor_local.size),
            "positions": anchor_pos.tolist(),
            "features": feats[anchor_local].tolist(),
            "labels": y[anchor_local].tolist(),
        },
        "clustering": cluster_info,
        "slices": [
            {"size": len(r), "k": res.k_used, "edges": res.n_edges, "cg_iterations": res.n_iter,
             "converged": res.converged}
            for r, res in zip(est.slice_plan_.slices, est.slice_results_)
        ],
        "metrics": metrics,
        "converged": bool(converged),
        "timings": {"stages": clock.stages, "propagation_stages": stage_totals},
    }
    return RunResult(report, class_map, est)


def strip_timings(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in ("timings",)}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def palette(n: int) -> np.ndarray:
    """Fixed RGB palette: index 0 is black, classes cycle through distinct hues."""
    import colorsys

    colors = [(0, 0, 0)]
    for i in range(1, n):
        hue = (i * 0.618033988749895) % 1.0
        sat = 0.65 + 0.35 * ((i // 7) % 2)
        r, g, b = colorsys.hsv_to_rgb(hue, sat, 0.95)
        colors.append((round(r * 255), round(g * 255), round(b * 255)))
    return np.array(colors, dtype=np.uint8)


def write_pgm(class_map: np.ndarray, path) -> None:
    """8-bit binary PGM whose grey levels are class ids (an indexed raster)."""
    class_map = np.asarray(class_map)
    if class_map.max(initial=0) > 255:
        raise ValueError("class ids above 255 do not fit an 8-bit preview")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{class_map.shape[1]} {class_map.shape[0]}\n255\n".encode())
        fh.write(class_map.astype(np.uint8).tobytes())


def write_palette(n: int, path) -> None:
    with open(path, "w") as fh:
        fh.write("# index red green blue (grey level in the .pgm = class id)\n")
        for i, (r, g, b) in enumerate(palette(n)):
            fh.write(f"{i} {r} {g} {b}\n")


def export(result: RunResult, out_prefix) -> dict:
    """Write <prefix>.hsl, .pgm, .palette.txt, .json and .metrics.txt."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "map": out_prefix.with_suffix(".hsl"),
        "preview": out_prefix.with_suffix(".pgm"),
        "palette": out_prefix.with_suffix(".palette.txt"),
        "report": out_prefix.with_suffix(".json"),
        "metrics": out_prefix.with_suffix(".metrics.txt"),
    }
    save_labels(result.class_map, paths["map"])
    write_pgm(result.class_map, paths["preview"])
    write_palette(int(result.class_map.max(initial=0)) + 1, paths["palette"])
    paths["report"].write_text(report_json(result.report))
    title = f"mode={result.report['config']['mode']} seed={result.report['config']['seed']}"
    paths["metrics"].write_text(format_table(result.report["metrics"], title))
    return {k: str(v) for k, v in paths.items()}


def bench(configs: list[tuple[str, RunConfig, HsiCube | None]], repeats: int = 3) -> list[dict]:
    """Median wall time per stage over ``repeats`` runs of each configuration."""
    if not configs:
        raise ValueError("bench needs at least one configuration")
    rows = []
    for name, cfg, cube in configs:
        samples = []
        maps = []
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            res = run_pipeline(cfg, cube)
            total = time.perf_counter() - t0
            stages = dict(res.report["timings"]["stages"])
            stages.update({f"prop.{k}": v for k, v in res.report["timings"]["propagation_stages"].items()})
            stages["total"] = total
            samples.append(stages)
            maps.append(res.class_map)
        keys = samples[0].keys()
        row = {"name": name, "workers": cfg.workers, "n_pixels": res.report["scene"]["n_pixels"]}
        row.update({k: statistics.median(s[k] for s in samples) for k in keys})
        row["graph_and_solve"] = sum(
            row.get(f"prop.{k}", 0.0) for k in ("anchor_graph", "prune", "sparse_graph", "normalize", "solve")
        )
        row["metric"] = res.report["metrics"].get("OA", res.report["metrics"].get("ACC"))
        row["deterministic"] = all(np.array_equal(maps[0], m) for m in maps[1:])
        rows.append(row)
    return rows


def format_bench(rows: list[dict]) -> str:
    cols = ["name", "workers", "n_pixels", "pca", "anchors", "prop.prune", "prop.sparse_graph",
            "prop.solve", "graph_and_solve", "total", "metric"]
    widths = {c: max(len(c), 10) for c in cols}
    head = "  ".join(c.rjust(widths[c]) for c in cols)
    lines = [head]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c, "")
            cells.append((f"{v:.3f}" if isinstance(v, float) else str(v)).rjust(widths[c]))
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
