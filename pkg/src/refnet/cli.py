"""Command-line entry point: ``refnet <subcommand> [flags]``.

Each stage writes its CSVs atomically into the output directory, every file
starting with a ``# refnet ...`` provenance line (stage, config digest, seed).
A stage whose inputs are unchanged is skipped on rerun; the experiment also
caches each (seed, model, feature set) unit so an interrupted run resumes.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import config as C
from . import embed
from .centrality import centrality_table
from .explain import run_attribution
from .graph import format_number
from .ingest import (load_consultations, load_physicians, physician_frame, role_census,
                     write_consultations, write_physicians)
from .linkpred import (ExperimentData, ExperimentRun, LinkExperimentReport, report_csv,
                       summarize)
from .netbuild import (build_professional_network, build_referral_network, extract_interactions,
                       fit_power_law_exponent, frame_csv, histogram_csv, interval_distribution,
                       physicians_per_patient_histogram, specialty_year_counts,
                       birth_decade_by_school)
from .numkit import derive_seed
from .synth import generate

log = logging.getLogger("refnet")

SUBCOMMANDS = ("synth", "ingest", "build-referral", "build-professional", "eda", "centrality",
               "embed", "experiment", "explain", "reproduce")
EXIT_FAILURE = 1
EXIT_CONFIG = 2


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


def _sha(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _file_sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()[:16]


def _tmp_path(path: Path) -> Path:
    return path.with_name(f".{path.name}.tmp{os.getpid()}")


def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = _tmp_path(path)
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def table2_csv(summary: pd.DataFrame, n_seeds: int) -> str:
    cols = ["model", "features", "loss_mean", "loss_sd", "accuracy_mean", "accuracy_sd",
            "auc_mean", "auc_sd"]
    buf = io.StringIO()
    buf.write(",".join(cols + ["n_seeds"]) + "\n")
    for row in summary[cols].itertuples(index=False):
        buf.write(",".join([row[0], row[1], *(format_number(v) for v in row[2:])])
                  + f",{n_seeds}\n")
    return buf.getvalue()


def _dated(frame: pd.DataFrame) -> pd.DataFrame:
    out = frame.copy()
    for col in ("pc_date", "sc_date"):
        out[col] = pd.to_datetime(out[col]).dt.strftime("%Y-%m-%d")
    return out


def _experiment_seed(args):
    data, seed, settings, units, digest = args
    run = ExperimentRun(data, seed, settings)
    out = []
    for model, fs in units:
        report, preds = run.run(model, fs, digest)
        out.append((model, fs, report, preds))
    return out


class Pipeline:
    """Lazily built stages over one resolved configuration."""

    def __init__(self, cfg: dict, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg["out_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / ".stages").mkdir(exist_ok=True)
        self.digest = C.config_digest(cfg)
        self.seed = cfg["seed"]
        self.summary: list[tuple[str, list[str]]] = []
        self._memo: dict = {}
        self._keys: dict = {}

    # -- bookkeeping --------------------------------------------------------

    def provenance(self, stage: str) -> str:
        return f"refnet stage={stage} digest={self.digest} seed={self.seed}"

    def _manifest_path(self, stage: str) -> Path:
        return self.out / ".stages" / f"{stage}.json"

    def _cached(self, stage: str, key: str):
        path = self._manifest_path(stage)
        if not path.exists():
            return None
        info = json.loads(path.read_text(encoding="utf-8"))
        if info.get("key") != key or not all((self.out / f).exists() for f in info["files"]):
            return None
        return info

    def _commit(self, stage: str, key: str, outputs: dict, notes: list[str]) -> None:
        """Write every output to a temp file first; publish all or none."""
        header = f"# {self.provenance(stage)}\n"
        staged = []
        try:
            for name, body in outputs.items():
                final = self.out / name
                tmp = _tmp_path(final)
                if callable(body):
                    body(tmp, self.provenance(stage))
                else:
                    with open(tmp, "w", encoding="utf-8", newline="") as fh:
                        fh.write(header + body)
                staged.append((tmp, final))
        except BaseException:
            for tmp, _ in staged:
                tmp.unlink(missing_ok=True)
            for name in outputs:
                _tmp_path(self.out / name).unlink(missing_ok=True)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        atomic_write(self._manifest_path(stage),
                     json.dumps({"key": key, "files": sorted(outputs), "summary": notes},
                                indent=1, sort_keys=True))

    def _stage(self, stage: str, key: str, compute):
        """Run ``compute() -> (outputs, notes)`` unless a matching manifest exists."""
        info = self._cached(stage, key)
        if info is not None:
            log.info("%s: up to date (%s)", stage, key)
            self.summary.append((stage, info["summary"]))
            return False
        t0 = time.perf_counter()
        try:
            outputs, notes = compute()
            self._commit(stage, key, outputs, notes)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        log.info("%s: done in %.1fs", stage, time.perf_counter() - t0)
        self.summary.append((stage, notes))
        return True

    def _section(self, *names):
        return {n: self.cfg[n] for n in names}

    def _guard(self, stage: str, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc

    # -- stages -------------------------------------------------------------

    def synth_key(self) -> str:
        return _sha("synth", self._section("seed", "study", "synth"))

    def synth(self) -> None:
        if self._memo.get("synth"):
            return
        self._memo["synth"] = True

        def compute():
            data = generate(C.synth_config(self.cfg))
            census = role_census(data.profiles)
            cum = interval_distribution(data.referrals).cumulative_at(30)
            notes = [
                f"physicians: {census}",
                f"consultations: {len(data.consultations)}",
                f"planted referrals: {len(data.referrals)}",
                f"planted referral gaps within 30 days: {cum:.4f}",
            ]
            return {
                "consultations.csv": lambda p, c: write_consultations(data.consultations, p, c),
                "physicians.csv": lambda p, c: write_physicians(data.profiles, p, c),
                "manifest.csv": frame_csv(data.manifest()),
                "propensity.csv": frame_csv(data.propensity),
                "planted_referrals.csv": frame_csv(_dated(data.referrals)),
            }, notes
        self._stage("synth", self.synth_key(), compute)

    def _sources(self):
        paths = self.cfg["paths"]
        if paths["consultations"]:
            return Path(paths["consultations"]), Path(paths["physicians"]), "files"
        self.synth()
        return self.out / "consultations.csv", self.out / "physicians.csv", "synthetic"

    def ingest_key(self) -> str:
        if "ingest" not in self._keys:
            cons, phys, kind = self._sources()
            upstream = self.synth_key() if kind == "synthetic" else [_file_sha(cons), _file_sha(phys)]
            self._keys["ingest"] = _sha("ingest", upstream, self.cfg["study"])
        return self._keys["ingest"]

    def ingest(self):
        """``(consultations table, profiles)`` read back from the cleaned outputs."""
        if "inputs" in self._memo:
            return self._memo["inputs"]
        cons, phys, _ = self._sources()
        study = self.cfg["study"]

        def compute():
            table, report = load_consultations(cons, C.study_window(self.cfg))
            profiles, census = load_physicians(phys, study["primary_care"], study["study_end_year"])
            census_csv = "role,count\n" + "".join(f"{k},{v}\n" for k, v in census.items())
            notes = [f"kept {len(table)} consultations, rejected {len(report)} rows "
                     f"{report.counts or ''}".rstrip(),
                     f"roles: {census}"]
            return {
                "consultations_clean.csv": lambda p, c: write_consultations(table, p, c),
                "physicians_clean.csv": lambda p, c: write_physicians(profiles, p, c),
                "rejections.csv": report.to_csv(),
                "role_census.csv": census_csv,
            }, notes
        self._stage("ingest", self.ingest_key(), compute)

        def load():
            table, _ = load_consultations(self.out / "consultations_clean.csv", C.study_window(self.cfg))
            profiles, _ = load_physicians(self.out / "physicians_clean.csv", study["primary_care"],
                                          study["study_end_year"])
            return table, profiles
        self._memo["inputs"] = self._guard("ingest", load)
        return self._memo["inputs"]

    def referral(self):
        """``(interactions, referral network)``."""
        if "referral" in self._memo:
            return self._memo["referral"]
        table, profiles = self.ingest()
        gap = self.cfg["study"]["max_gap_days"]

        def build():
            inter = extract_interactions(table, profiles, max_gap_days=gap)
            return inter, build_referral_network(inter)
        inter, net = self._memo["referral"] = self._guard("build-referral", build)

        def compute():
            out = _dated(inter)
            notes = [f"interactions: {len(inter)}", f"referral network: {net.node_count} nodes, "
                     f"{net.edge_count} edges, total weight {format_number(net.total_weight())}"]
            return {
                "interactions.csv": frame_csv(out),
                "referral_edges.csv": net.edges_csv(),
                "referral_nodes.csv": net.nodes_csv(),
            }, notes
        self._stage("build-referral", _sha("build-referral", self.ingest_key(), gap), compute)
        return inter, net

    def professional(self):
        if "professional" in self._memo:
            return self._memo["professional"]
        _, profiles = self.ingest()
        net = self._memo["professional"] = self._guard(
            "build-professional", lambda: build_professional_network(profiles))

        def compute():
            notes = [f"professional network: {net.node_count} nodes, {net.edge_count} edges"]
            return {"professional_edges.csv": net.edges_csv(),
                    "professional_nodes.csv": net.nodes_csv()}, notes
        self._stage("build-professional", _sha("build-professional", self.ingest_key()), compute)
        return net

    def centrality(self) -> dict:
        if "centrality" in self._memo:
            return self._memo["centrality"]
        prof = self.professional()
        table = self._memo["centrality"] = self._guard("centrality", lambda: centrality_table(prof))

        def compute():
            # physicians outside the professional network get zeros and a 0 flag
            _, referral = self.referral()
            index = prof.node_index()
            ids = sorted(set(prof.external_ids) | set(referral.external_ids))
            buf = io.StringIO()
            buf.write("node_id,degree,eigenvector,betweenness,in_professional_net\n")
            for pid in ids:
                i = index.get(pid)
                vals = [0.0, 0.0, 0.0] if i is None else [
                    table["degree"][i], table["eigenvector"][i], table["betweenness"][i]]
                buf.write(",".join([pid, *(format_number(v) for v in vals),
                                    "0" if i is None else "1"]) + "\n")
            top = np.argsort(-table["degree"], kind="stable")[:3]
            notes = ["highest degree: " + ", ".join(
                f"{prof.external_ids[i]} ({table['degree'][i]:.4f})" for i in top)]
            return {"centrality.csv": buf.getvalue()}, notes
        self._stage("centrality", _sha("centrality", self.ingest_key(),
                                       self.cfg["study"]["max_gap_days"]), compute)
        return table

    def eda(self) -> None:
        table, profiles = self.ingest()

        def compute():
            # gaps are not capped here so the distribution shows the whole tail
            inter = extract_interactions(table, profiles, max_gap_days=None)
            dist = interval_distribution(inter)
            hist = physicians_per_patient_histogram(table)
            exponent = fit_power_law_exponent(hist)
            stats = pd.DataFrame([
                ("interactions_uncapped", str(len(inter))),
                ("cumulative_within_30_days", format_number(dist.cumulative_at(30))),
                ("physicians_per_patient_power_law_exponent", format_number(exponent)),
            ], columns=["key", "value"])
            notes = [f"interactions within 30 days: {dist.cumulative_at(30):.4f} of all PC->SC pairs",
                     f"physicians-per-patient power-law exponent: {exponent:.3f}"]
            return {
                "interval_distribution.csv": dist.to_csv(),
                "physicians_per_patient.csv": histogram_csv(hist),
                "specialty_year.csv": frame_csv(specialty_year_counts(table, profiles)),
                "birth_decade_school.csv": frame_csv(birth_decade_by_school(profiles)),
                "eda_summary.csv": frame_csv(stats),
            }, notes
        self._stage("eda", _sha("eda", self.ingest_key()), compute)

    def experiment_data(self) -> ExperimentData:
        if "data" not in self._memo:
            _, profiles = self.ingest()
            _, referral = self.referral()
            prof = self.professional()
            table = self.centrality()
            people = physician_frame(profiles, self.cfg["study"]["study_end_year"])
            self._memo["data"] = ExperimentData(referral, prof, people,
                                                embed.social_lookup(prof, table))
        return self._memo["data"]

    def embed(self) -> None:
        model, fs = self.cfg["embed"]["model"], self.cfg["embed"]["features"]
        settings = C.experiment_settings(self.cfg)
        data = self.experiment_data()
        key = _sha("embed", self.ingest_key(), self.cfg["study"]["max_gap_days"], self.seed,
                   self.cfg["embed"], self.cfg["experiment"])

        def compute():
            net = data.referral
            if model == "node2vec":
                vectors, curve = embed.train_node2vec(net, settings.walk,
                                                      seed=derive_seed(self.seed, "node2vec"),
                                                      dim=settings.node2vec_dim)
            elif model == "graphsage":
                vectors, curve, _ = embed.train_graphsage(
                    net, data.features(fs), settings.sage, seed=derive_seed(self.seed, "graphsage", fs))
            else:
                vectors, curve, _ = embed.train_attri2vec(
                    net, data.features(fs), settings.attri2vec,
                    seed=derive_seed(self.seed, "attri2vec", fs))
            emb = embed.EmbeddingMatrix(tuple(net.external_ids), vectors, model, fs)
            curve_csv = "step,loss\n" + "".join(f"{i},{format_number(v)}\n"
                                                for i, v in enumerate(curve))
            notes = [f"{model}/{fs}: {emb.dim}-dimensional vectors for {len(emb.node_ids)} "
                     f"physicians, final loss {curve[-1]:.4f}"]
            return {
                f"embeddings_{model}_{fs}.csv": emb.to_csv(),
                f"pca_{model}_{fs}.csv": embed.pca_csv(emb, net, data.people),
                f"loss_{model}_{fs}.csv": curve_csv,
            }, notes
        self._stage(f"embed-{model}-{fs}", key, compute)

    def experiment(self) -> None:
        exp = self.cfg["experiment"]
        settings = C.experiment_settings(self.cfg)
        data = self.experiment_data()
        seeds = C.replicate_seeds(self.cfg)
        units = [(m, f) for m in exp["models"] for f in exp["feature_sets"]]
        base = _sha("experiment", self.ingest_key(), self.cfg["study"]["max_gap_days"], exp)
        key = _sha(base, seeds)
        unit_dir = self.out / ".cache" / "experiment"

        def unit_path(seed, model, fs):
            return unit_dir / f"{_sha(base, seed, model, fs)}.pkl"

        def compute():
            unit_dir.mkdir(parents=True, exist_ok=True)
            todo = {s: [u for u in units if not unit_path(s, *u).exists()] for s in seeds}
            jobs = [(data, s, settings, todo[s], self.digest) for s in seeds if todo[s]]
            workers = min(self.cfg["jobs"], len(jobs))
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    finished = list(zip(jobs, pool.map(_experiment_seed, jobs)))
            else:
                finished = [(j, _experiment_seed(j)) for j in jobs]
            for (_, s, *_rest), results in finished:
                for model, fs, report, preds in results:
                    path = unit_path(s, model, fs)
                    tmp = _tmp_path(path)
                    pd.to_pickle((report, preds), tmp)
                    os.replace(tmp, path)
            reports, frames = [], []
            for s in seeds:
                for model, fs in units:
                    report, preds = pd.read_pickle(unit_path(s, model, fs))
                    reports.append(LinkExperimentReport(**{**report.__dict__, "digest": self.digest}))
                    frames.append(preds)
            summary = summarize(reports)
            preds = pd.concat(frames, ignore_index=True)
            notes = []
            for row in summary.itertuples(index=False):
                notes.append(f"{row.model:10s} {row.features:15s} accuracy {row.accuracy_mean:.4f} "
                             f"+/- {row.accuracy_sd:.4f}  auc {row.auc_mean:.4f}")
            acc = {(r.model, r.features): r.accuracy_mean for r in summary.itertuples(index=False)}
            for m in exp["models"]:
                if (m, "with_social") in acc and (m, "without_social") in acc:
                    notes.append(f"{m}: accuracy gain from social features "
                                 f"{acc[(m, 'with_social')] - acc[(m, 'without_social')]:+.4f}")
            return {
                "link_results.csv": report_csv(reports),
                "table2_synthetic.csv": table2_csv(summary, len(seeds)),
                "predictions.csv": frame_csv(preds),
            }, notes
        self._stage("experiment", key, compute)

    def explain(self) -> None:
        ex = self.cfg["explain"]
        data = self.experiment_data()
        key = _sha("explain", self.ingest_key(), self.cfg["study"]["max_gap_days"], self.seed, ex)

        def compute():
            run = run_attribution(data, ex["feature_set"], seed=derive_seed(self.seed, "explain"),
                                  n_explain=ex["n_explain"], background_size=ex["background_size"],
                                  epochs=ex["epochs"])
            notes = [f"pair classifier ({ex['feature_set']} features): held-out AUC "
                     f"{run.heldout_auc:.4f} on {run.n_rows} rows",
                     *run.report.summary(top_k=min(ex["top_k"], len(run.report.features)))
                     .rstrip("\n").splitlines()]
            return {
                "shap_values.csv": run.report.values_csv(),
                "shap_ranking.csv": run.report.ranking_csv(),
            }, notes
        self._stage("explain", key, compute)

    # -- report -------------------------------------------------------------

    def write_summary(self, command: str) -> Path:
        lines = [f"# {self.provenance('summary')}", f"command: {command}",
                 f"config digest: {self.digest}", f"seed: {self.seed}", ""]
        for stage, notes in self.summary:
            lines.append(f"[{stage}]")
            lines.extend(f"  {n}" for n in notes)
            lines.append("")
        path = self.out / "summary.txt"
        atomic_write(path, "\n".join(lines))
        atomic_write(self.out / "config_resolved.yaml",
                     f"# {self.provenance('config')}\n" + C.dump_config(self.cfg))
        return path


def _run(pipe: Pipeline, command: str) -> None:
    if command == "synth":
        pipe.synth()
    elif command == "ingest":
        pipe.ingest()
    elif command == "build-referral":
        pipe.referral()
    elif command == "build-professional":
        pipe.professional()
    elif command == "eda":
        pipe.eda()
    elif command == "centrality":
        pipe.centrality()
    elif command == "embed":
        pipe.embed()
    elif command == "experiment":
        pipe.experiment()
    elif command == "explain":
        pipe.explain()
    elif command == "reproduce":
        pipe.eda()
        pipe.centrality()
        pipe.experiment()
        pipe.explain()
    pipe.write_summary(command)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (flags override it)")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--max-gap-days", type=float, help="PC->SC gap cap in days")
    common.add_argument("--model", choices=embed.MODELS, help="embedding model")
    common.add_argument("--features", help="feature set: with_social/without_social, "
                                           "or base/engineered for explain")
    common.add_argument("--alpha", type=float, help="synthetic shared-background weight")
    common.add_argument("--jobs", type=int, help="worker processes for per-seed work")
    common.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    parser = argparse.ArgumentParser(prog="refnet", description="Referral network analysis pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "synth": "generate synthetic consultations and physicians",
        "ingest": "validate and clean the input CSVs",
        "build-referral": "PC->SC interactions and the referral network",
        "build-professional": "shared-background professional network",
        "eda": "interval distribution and other descriptive tables",
        "centrality": "degree, eigenvector and betweenness of the professional network",
        "embed": "node embeddings plus a 2-D PCA export",
        "experiment": "link prediction with and without social features",
        "explain": "exact Shapley attributions for a pair classifier",
        "reproduce": "run every stage on the configured data",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _overrides(args) -> dict:
    out = {"seed": args.seed, "out_dir": args.out_dir, "study.max_gap_days": args.max_gap_days,
           "synth.alpha": args.alpha, "jobs": args.jobs}
    if args.model is not None:
        out["embed.model"] = args.model
        out["experiment.models"] = [args.model]
    if args.features is not None:
        if args.command == "explain":
            out["explain.feature_set"] = args.features
        else:
            out["embed.features"] = args.features
            out["experiment.feature_sets"] = [args.features]
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = C.load_config(args.config, _overrides(args))
    except C.ConfigError as exc:
        print(f"refnet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    pipe = Pipeline(cfg)
    try:
        _run(pipe, args.command)
    except StageError as exc:
        print(f"refnet: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"refnet {args.command}: outputs in {pipe.out} (digest {pipe.digest})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
