"""End-to-end study orchestration with hashed, staleness-checked artifacts.

Every stage writes its files under the output directory and records them in
``manifest.json`` together with a fingerprint of the config sections it
depends on (chained through its upstream stages).  Downstream stages refuse
to run on missing, stale or modified upstream artifacts.  Wall-clock timings
go to ``timing.json``, which is the only non-deterministic output.
"""

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import StudyConfig
from .dataset import generate_dataset, load_dataset, load_sidecar, prepare, save_dataset, save_sidecar
from .emulator import cost_of
from .errors import ArtifactError
from .metrics import pareto_filter, relative_hv_loss
from .nsga3 import SearchSpace, run as nsga_run
from .problems import get_problem
from .rng import derive_int
from .surrogate import NetConfig, fit_surrogate, grid_search, load_net, save_net
from .verification import (LossRow, VerificationRun, build_loss_table, round_inputs,
                           summarize_repeats, verify_level)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TIMING = "timing.json"
MANIFEST_VERSION = 1
# A trace has plateaued once both best objectives stay within this relative
# distance of their final values.
PLATEAU_RTOL = 1e-3

# stage -> (config sections it depends on, upstream stages)
STAGES = {
    "gen-data": (("problem", "levels", "seed"), ()),
    "tune": (("tuning",), ("gen-data",)),
    "train": ((), ("tune",)),
    "optimize": (("nsga",), ("train",)),
    "verify": ((), ("optimize",)),
    "repeat": (("repeats",), ("verify",)),
    "cost-summary": ((), ("gen-data",)),
    "report": ((), ("tune", "train", "optimize", "verify", "repeat", "cost-summary")),
}
RUN_ALL_ORDER = ("gen-data", "tune", "train", "optimize", "verify", "repeat", "cost-summary", "report")


def level_tag(u):
    """Filename tag of an uncertainty level in percent: 0.075 -> 'u7.5'."""
    return f"u{100 * u:g}"


def plateau_generation(trace, rtol=PLATEAU_RTOL):
    """First generation from which every best-objective column stays within
    ``rtol`` (relative) of its final value."""
    trace = np.asarray(trace, dtype=float)
    vals = trace[:, 1:]
    final = vals[-1]
    ok = np.all(np.abs(vals - final) <= rtol * np.abs(final), axis=1)
    g = len(ok)
    while g > 0 and ok[g - 1]:
        g -= 1
    return int(trace[min(g, len(trace) - 1), 0])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _seeds(base, k, r):
    """Per-stage seeds for level index ``k`` and repeat ``r``."""
    return {
        "dataset": derive_int(base, "dataset", k, r),
        "split": derive_int(base, "split", k, r),
        "train": derive_int(base, "train", k, r),
        "optimize": derive_int(base, "optimize", k, r),
    }


def _one_repeat(args):
    """Full dataset -> train -> optimize -> verify pass for one repeat index."""
    cfg, configs, r = args
    problem = get_problem(cfg.problem)
    space = SearchSpace.from_problem(problem)
    candidates, verified = {}, {}
    for k, u in enumerate(cfg.levels):
        s = _seeds(cfg.seed, k, r)
        prep = prepare(generate_dataset(problem.name, u, s["dataset"]), s["split"])
        net, _ = fit_surrogate(prep, configs[u], s["train"])
        res = nsga_run(net.predict, space, cfg.nsga, s["optimize"])
        genes = round_inputs(res.ranked_population()[0], space)
        candidates[u] = genes
        verified[u] = verify_level(genes, problem.truth)
    rows = build_loss_table(VerificationRun(problem.name, candidates, verified, repeat=r, seed=cfg.seed))
    return r, rows


class Study:
    """Runs the stages of one study configuration inside ``config.out``."""

    def __init__(self, config: StudyConfig):
        self.cfg = config
        self.out = Path(config.out)
        self.problem = get_problem(config.problem)
        self.space = SearchSpace.from_problem(self.problem)

    # -- manifest -----------------------------------------------------------------

    def fingerprint(self, stage):
        sections, upstream = STAGES[stage]
        doc = {
            "stage": stage,
            "config": self.cfg.fingerprint(*sections) if sections else "",
            "upstream": {u: self.fingerprint(u) for u in upstream},
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def _manifest(self):
        path = self.out / MANIFEST
        if not path.exists():
            return {"version": MANIFEST_VERSION, "stages": {}}
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: corrupt manifest ({exc.msg})") from None
        if doc.get("version") != MANIFEST_VERSION:
            raise ArtifactError(f"{path}: unsupported manifest version {doc.get('version')!r}")
        return doc

    def stage_status(self, stage):
        """'missing', 'stale', 'modified' or 'ok' for a recorded stage."""
        entry = self._manifest()["stages"].get(stage)
        if entry is None:
            return "missing"
        if entry["fingerprint"] != self.fingerprint(stage):
            return "stale"
        for rel, digest in entry["files"].items():
            p = self.out / rel
            if not p.exists() or _sha(p) != digest:
                return "modified"
        return "ok"

    def require(self, stage):
        status = self.stage_status(stage)
        if status == "missing":
            raise ArtifactError(f"{stage} artifacts not found in {self.out}; run `tallyopt {stage}` first")
        if status == "stale":
            raise ArtifactError(f"{stage} artifacts in {self.out} are stale (config changed); "
                                f"re-run `tallyopt {stage}`")
        if status == "modified":
            raise ArtifactError(f"{stage} artifacts in {self.out} were modified or removed; "
                                f"re-run `tallyopt {stage}`")

    def _record(self, stage, files, seconds):
        doc = self._manifest()
        doc["stages"][stage] = {
            "fingerprint": self.fingerprint(stage),
            "files": {rel: _sha(self.out / rel) for rel in sorted(files)},
        }
        # The output directory and worker count do not affect any result.
        doc["config"] = {k: v for k, v in self.cfg.raw.items() if k not in ("out", "jobs")}
        self._write_json(MANIFEST, doc)
        tpath = self.out / TIMING
        timing = json.loads(tpath.read_text()) if tpath.exists() else {}
        timing[stage] = round(seconds, 3)
        tpath.write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n")

    def _write(self, rel, text):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return rel

    def _write_json(self, rel, doc):
        return self._write(rel, json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def _run_stage(self, stage, body):
        for up in STAGES[stage][1]:
            self.require(up)
        self.out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        log.info("stage %s: start", stage)
        files = body()
        self._record(stage, files, time.perf_counter() - t0)
        log.info("stage %s: wrote %d files", stage, len(files))
        return files

    # -- paths --------------------------------------------------------------------

    @staticmethod
    def dataset_path(u):
        return f"data/dataset_{level_tag(u)}.csv"

    @staticmethod
    def sidecar_path(u):
        return f"data/split_{level_tag(u)}.json"

    @staticmethod
    def model_path(u):
        return f"models/surrogate_{level_tag(u)}.json"

    def load_prepared(self, u):
        ds = load_dataset(self.out / self.dataset_path(u))
        return load_sidecar(self.out / self.sidecar_path(u), ds)

    def selected_configs(self):
        doc = json.loads((self.out / "tuning_selected.json").read_text())
        return {u: NetConfig.from_dict(doc[level_tag(u)]) for u in self.cfg.levels}

    # -- stages -------------------------------------------------------------------

    def gen_data(self):
        def body():
            files = []
            for k, u in enumerate(self.cfg.levels):
                s = _seeds(self.cfg.seed, k, 0)
                ds = generate_dataset(self.problem.name, u, s["dataset"])
                self.out.joinpath("data").mkdir(exist_ok=True)
                save_dataset(ds, self.out / self.dataset_path(u))
                save_sidecar(prepare(ds, s["split"]), self.out / self.sidecar_path(u))
                files += [self.dataset_path(u), self.sidecar_path(u)]
            return files
        return self._run_stage("gen-data", body)

    def tune(self):
        grid = self.cfg.grid()

        def body():
            rows, selected = [], {}
            for k, u in enumerate(self.cfg.levels):
                prep = self.load_prepared(u)
                log.info("tuning %s: %d configs", level_tag(u), len(grid))
                res = grid_search(prep, grid, derive_int(self.cfg.seed, "tune", k), jobs=self.cfg.jobs)
                selected[level_tag(u)] = res.best_config.to_dict()
                for i, (c, rep) in enumerate(zip(grid, res.reports)):
                    r2s = [math.nan, math.nan] if rep is None else rep.test_r2
                    rows.append([u, i, c.n_hidden_layers, c.neurons_per_layer, c.learning_rate, c.batch_size,
                                 "" if rep is None else rep.epochs_run, "" if rep is None else rep.best_epoch,
                                 r2s[0], r2s[1], math.nan if rep is None else rep.test_r2_aggregate,
                                 c.n_params(self.problem.n_inputs), int(i == res.best_index)])
            header = ["u_level", "config", "layers", "neurons", "learning_rate", "batch_size",
                      "epochs_run", "best_epoch", "r2_f1", "r2_f2", "r2", "n_params", "selected"]
            return [self._write("tuning.csv", csv_text(header, rows)),
                    self._write_json("tuning_selected.json", selected)]
        return self._run_stage("tune", body)

    def train(self):
        def body():
            configs = self.selected_configs()
            files, rows = [], []
            for k, u in enumerate(self.cfg.levels):
                prep = self.load_prepared(u)
                net, rep = fit_surrogate(prep, configs[u], _seeds(self.cfg.seed, k, 0)["train"])
                self.out.joinpath("models").mkdir(exist_ok=True)
                save_net(net, self.out / self.model_path(u))
                curve = [(e, a, b) for e, (a, b) in enumerate(zip(rep.train_mse_curve, rep.test_mse_curve))]
                files.append(self.model_path(u))
                files.append(self._write(f"train_curve_{level_tag(u)}.csv",
                                         csv_text(["epoch", "train_mse", "test_mse"], curve)))
                c = rep.config
                rows.append([u, c.n_hidden_layers, c.neurons_per_layer, c.learning_rate, c.batch_size,
                             rep.epochs_run, rep.best_epoch, rep.test_r2[0], rep.test_r2[1],
                             rep.test_r2_aggregate, rep.n_params])
            header = ["u_level", "layers", "neurons", "learning_rate", "batch_size", "epochs_run",
                      "best_epoch", "r2_f1", "r2_f2", "r2", "n_params"]
            files.append(self._write("training.csv", csv_text(header, rows)))
            return files
        return self._run_stage("train", body)

    def optimize(self):
        names = list(self.problem.feature_names)

        def body():
            files = []
            for k, u in enumerate(self.cfg.levels):
                net = load_net(self.out / self.model_path(u))
                res = nsga_run(net.predict, self.space, self.cfg.nsga, _seeds(self.cfg.seed, k, 0)["optimize"])
                genes, objs, rank = res.ranked_population()
                tag = level_tag(u)
                files.append(self._write(f"trace_{tag}.csv", csv_text(
                    ["generation", "best_f1", "best_f2"],
                    [(int(g), a, b) for g, a, b in res.trace])))
                files.append(self._write(f"front_predicted_{tag}.csv", csv_text(
                    ["rank", *names, "f1_pred", "f2_pred"],
                    [(int(r), *g, *o) for r, g, o in zip(rank, genes, objs)])))
            return files
        return self._run_stage("optimize", body)

    def _read_candidates(self, u):
        header, rows = read_csv(self.out / f"front_predicted_{level_tag(u)}.csv")
        d = self.problem.n_inputs
        return np.array([[float(v) for v in row[1:1 + d]] for row in rows])

    def verify(self):
        names = list(self.problem.feature_names)

        def body():
            candidates, verified = {}, {}
            for u in self.cfg.levels:
                genes = round_inputs(self._read_candidates(u), self.space)
                candidates[u] = genes
                verified[u] = verify_level(genes, self.problem.truth)
            run = VerificationRun(self.problem.name, candidates, verified, repeat=0, seed=self.cfg.seed)
            rows = build_loss_table(run)
            files = []
            for u in self.cfg.levels:
                norm = run.normalized[u]
                front = pareto_filter(norm).points
                on_front = [bool(np.any(np.all(p == front, axis=1))) for p in norm]
                files.append(self._write(f"front_verified_{level_tag(u)}.csv", csv_text(
                    [*names, "f1", "f2", "f1_norm", "f2_norm", "pareto"],
                    [(*g, *v, *n, int(f)) for g, v, n, f in zip(candidates[u], verified[u], norm, on_front)])))
            files.append(self._write("loss_table.csv", loss_table_text(rows)))
            files.append(self._write_json("normalization.json", run.bounds.to_dict()))
            return files
        return self._run_stage("verify", body)

    def repeat(self):
        """Repeat 0 is the main study; repeats 1.. rerun the whole pipeline
        with the tuned configs and fresh derived seeds."""
        def body():
            main = loss_rows_from_csv(self.out / "loss_table.csv")
            configs = self.selected_configs()
            tasks = [(self.cfg, configs, r) for r in range(1, self.cfg.repeats)]
            if self.cfg.jobs > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=self.cfg.jobs) as pool:
                    results = list(pool.map(_one_repeat, tasks))
            else:
                results = []
                for t in tasks:
                    log.info("repeat %d/%d", t[2], self.cfg.repeats - 1)
                    results.append(_one_repeat(t))
            tables = [main] + [rows for _, rows in sorted(results, key=lambda x: x[0])]
            per_rep = [(r, row.u_level, row.hv_polygon, row.hv_staircase, row.loss_polygon,
                        row.loss_staircase, row.front_size)
                       for r, t in enumerate(tables) for row in t]
            summary = summarize_repeats(tables)
            stair = summarize_repeats([[LossRow(x.u_level, x.hv_staircase, 0.0, x.loss_staircase, 0.0,
                                                x.front_size) for x in t] for t in tables])
            srows = [(u, hm, hs, lm, ls, s_hm, s_hs, s_lm, s_ls)
                     for (u, hm, hs, lm, ls), (_, s_hm, s_hs, s_lm, s_ls) in zip(summary.rows(), stair.rows())]
            return [
                self._write("repeats.csv", csv_text(
                    ["repeat", "u_level", "hv_polygon", "hv_staircase", "loss_polygon", "loss_staircase",
                     "front_size"], per_rep)),
                self._write("repeat_summary.csv", csv_text(
                    ["u_level", "hv_mean", "hv_std", "loss_mean", "loss_std", "hv_staircase_mean",
                     "hv_staircase_std", "loss_staircase_mean", "loss_staircase_std"], srows)),
            ]
        return self._run_stage("repeat", body)

    def cost_summary(self):
        def body():
            costs = {}
            for u in self.cfg.levels:
                ds = load_dataset(self.out / self.dataset_path(u))
                costs[u] = (len(ds), ds.total_cost)
            top = max(c for _, c in costs.values())
            rows = [(u, n, cost_of(u) * (2 if self.problem.name == "converter" else 1), c, c / top)
                    for u, (n, c) in costs.items()]
            return [self._write("cost_summary.csv", csv_text(
                ["u_level", "n_points", "cost_per_point", "total_cost", "ratio_to_max"], rows))]
        return self._run_stage("cost-summary", body)

    def report(self):
        def body():
            from . import plotting

            doc = self.build_report()
            files = [self._write_json("report.json", doc)]
            files += plotting.render_all(self, doc)
            return files
        return self._run_stage("report", body)

    def build_report(self):
        """Collect the report from the stored artifacts only."""
        levels = {}
        _, train_rows = read_csv(self.out / "training.csv")
        train = {float(r[0]): r for r in train_rows}
        loss = {r.u_level: r for r in loss_rows_from_csv(self.out / "loss_table.csv")}
        configs = self.selected_configs()
        for u in self.cfg.levels:
            tag = level_tag(u)
            ds = load_dataset(self.out / self.dataset_path(u))
            _, trace_rows = read_csv(self.out / f"trace_{tag}.csv")
            trace = np.array(trace_rows, dtype=float)
            t = train[u]
            row = loss[u]
            levels[tag] = {
                "u_level": u,
                "dataset_cost": ds.total_cost,
                "n_points": len(ds),
                "best_config": configs[u].to_dict(),
                "epochs_run": int(t[5]),
                "test_r2": [float(t[7]), float(t[8])],
                "test_r2_aggregate": float(t[9]),
                "final_best": [float(trace[-1, 1]), float(trace[-1, 2])],
                "plateau_generation": plateau_generation(trace),
                "hv_polygon": row.hv_polygon,
                "hv_staircase": row.hv_staircase,
                "loss_polygon": row.loss_polygon,
                "loss_staircase": row.loss_staircase,
                "front_size": row.front_size,
            }
        doc = {
            "problem": self.problem.name,
            "seed": self.cfg.seed,
            "levels": levels,
            "reference_level": min(self.cfg.levels),
            "artifacts": {s: e["files"] for s, e in self._manifest()["stages"].items() if s != "report"},
        }
        _, rows = read_csv(self.out / "repeat_summary.csv")
        doc["repeats"] = {
            "n": self.cfg.repeats,
            "levels": {level_tag(float(r[0])): {
                "hv_mean": float(r[1]), "hv_std": float(r[2]),
                "loss_mean": float(r[3]), "loss_std": float(r[4]),
                "hv_staircase_mean": float(r[5]), "hv_staircase_std": float(r[6]),
            } for r in rows},
        }
        _, rows = read_csv(self.out / "cost_summary.csv")
        doc["cost_ratio_to_max"] = {level_tag(float(r[0])): float(r[4]) for r in rows}
        # Wall time lives in timing.json so reruns stay byte-identical.
        doc["timing_file"] = TIMING
        return doc

    def run_stage(self, stage):
        method = {
            "gen-data": self.gen_data, "tune": self.tune, "train": self.train,
            "optimize": self.optimize, "verify": self.verify, "repeat": self.repeat,
            "cost-summary": self.cost_summary, "report": self.report,
        }[stage]
        return method()

    def run_all(self, resume=False):
        """Chain every stage.  With ``resume``, stages whose recorded
        artifacts are current and intact are skipped."""
        for stage in RUN_ALL_ORDER:
            if resume and self.stage_status(stage) == "ok":
                log.info("stage %s: up to date, skipped", stage)
                continue
            self.run_stage(stage)


def loss_table_text(rows):
    return csv_text(
        ["u_level", "hv_polygon", "hv_staircase", "loss_polygon", "loss_staircase", "front_size"],
        [(r.u_level, r.hv_polygon, r.hv_staircase, r.loss_polygon, r.loss_staircase, r.front_size)
         for r in rows])


def loss_rows_from_csv(path):
    _, rows = read_csv(path)
    return [LossRow(float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5])) for r in rows]


def degradation_check(summary_rows, n_repeats, high=None, low=None):
    """Mean-HV drop between the highest and lowest uncertainty levels.

    Returns (relative loss in percent, difference, pooled standard error).
    """
    by_u = {r[0]: r for r in summary_rows}
    high = max(by_u) if high is None else high
    low = min(by_u) if low is None else low
    hv_hi, sd_hi = by_u[high][1], by_u[high][2]
    hv_lo, sd_lo = by_u[low][1], by_u[low][2]
    se = math.sqrt(sd_hi ** 2 / n_repeats + sd_lo ** 2 / n_repeats)
    return relative_hv_loss(hv_hi, hv_lo), hv_lo - hv_hi, se
