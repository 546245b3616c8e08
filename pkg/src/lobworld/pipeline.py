"""Stage-by-stage orchestration with content-hash caching.

Artifacts directory layout::

    manifest.json      stage keys and sha256 of every output
    config.json        resolved run configuration
    data/              dataset (CSV + manifest)
    corpus/            encoded latent chains
    checkpoints/       autoencoder, transition, reward, world extras, agents, classifier
    reports/           training curves, benchmark outputs, EvalReports, rankings

A stage is skipped when its key (config subset, seed, upstream output
hashes) matches the manifest and all its outputs still hash as recorded.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .agents import AgentConfig, RandomAgent, load_agent, mean_dream_return, train_agent
from .autoencoder import AEConfig, train_ae
from .benchmarks import (ClassifierConfig, MovementClassifier, StrategyEnvelope, bfs_optimal,
                         greedy_optimal, movement_labels, train_classifier)
from .config import RunConfig
from .data import Dataset, minmax_columns, sliding_feature_windows, state_chain
from .evaluation import (AgentPolicy, ClassifierStrategy, EvalReport, GreedyStrategy,
                         MomentumStrategy, compare_dream_vs_replay, rank_reports, replay_policy,
                         variance_report)
from .io import load_dataset, save_dataset
from .nn import TrainConfig
from .reward import RewardBounds, RewardConfig, train_reward
from .synthetic import GeneratorParams, generate_dataset
from .transition import TransitionConfig, train_mdn
from .world import (ChainLatents, WorldConfig, WorldModel, initial_states, reward_corpus,
                    save_world_extras, transition_corpus)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
ARTIFACTS_FORMAT = "lobworld-artifacts"
BENCHMARKS = ("momentum", "classifier", "greedy", "bfs")
STAGE_ORDER = ("gen-data", "train-ae", "encode", "train-transition", "train-reward",
               "train-agent", "run-benchmark", "evaluate", "compare")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class DependencyError(StageError):
    pass


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n")


def _train_cfg(section, seed: int) -> TrainConfig:
    return TrainConfig(lr=section.lr, batch_size=section.batch_size, epochs=section.epochs,
                       patience=section.patience, clip_norm=section.clip_norm, seed=seed)


def _chains_to_json(chains: list[ChainLatents]) -> list[dict]:
    return [{"z": c.z.tolist(), "emb": c.emb.tolist(), "flows": c.flows.tolist(),
             "mean_mids": c.mean_mids.tolist()} for c in chains]


def _chains_from_json(items: list[dict], m: int) -> list[ChainLatents]:
    return [ChainLatents(np.asarray(c["z"], dtype=np.float64).reshape(-1, m),
                         np.asarray(c["emb"], dtype=np.float64).reshape(len(c["flows"]), -1),
                         np.asarray(c["flows"], dtype=np.int64),
                         np.asarray(c["mean_mids"], dtype=np.float64)) for c in items]


class Pipeline:
    def __init__(self, config: RunConfig, out: str | Path):
        self.config = config
        self.root = Path(out)
        self.manifest = self._read_manifest()
        self._stages: dict[str, tuple[tuple[str, ...], tuple[str, ...], Callable[[], list[str]]]] = {
            "gen-data": ((), ("data", "lob"), self._gen_data),
            "train-ae": (("gen-data",), ("autoencoder", "lob"), self._train_ae),
            "encode": (("gen-data", "train-ae"), ("lob", "transition", "reward"), self._encode),
            "train-transition": (("encode",), ("transition",), self._train_transition),
            "train-reward": (("encode",), ("lob", "transition", "reward"), self._train_reward),
            "evaluate": (tuple(f"train-agent:{k}" for k in config.agent.kinds)
                         + ("gen-data", "train-ae", "train-transition", "train-reward",
                            "run-benchmark:classifier"),
                         ("lob", "reward", "benchmark", "evaluation"), self._evaluate),
            "compare": (("evaluate",), (), self._compare),
        }
        for kind in ("dqn", "pg", "a2c"):
            self._stages[f"train-agent:{kind}"] = (
                ("train-ae", "train-transition", "train-reward"), ("agent",),
                lambda kind=kind: self._train_agent(kind))
        for name in BENCHMARKS:
            deps = ("gen-data",)
            self._stages[f"run-benchmark:{name}"] = (
                deps, ("lob", "reward", "benchmark", "evaluation"),
                lambda name=name: self._benchmark(name))

    # ------------------------------------------------------------------ bookkeeping

    def path(self, rel: str) -> Path:
        return self.root / rel

    def _read_manifest(self) -> dict:
        p = self.root / MANIFEST
        if p.exists():
            doc = json.loads(p.read_text())
            if doc.get("format") == ARTIFACTS_FORMAT:
                return doc
        return {"format": ARTIFACTS_FORMAT, "version": 1, "stages": {}}

    def _write_manifest(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest["config"] = self.config.to_dict()
        _dump(self.root / MANIFEST, self.manifest)
        _dump(self.root / "config.json", self.config.to_dict())

    def _outputs_ok(self, record: dict) -> bool:
        for rel, digest in record.get("outputs", {}).items():
            p = self.path(rel)
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def stage_seed(self, name: str) -> int:
        digest = hashlib.sha256(f"{self.config.seed}:{name}".encode()).digest()
        return int.from_bytes(digest[:4], "little")

    def stage_key(self, name: str) -> str:
        deps, sections, _ = self._stages[name]
        upstream = {d: self.manifest["stages"][d]["outputs"] for d in deps}
        doc = {"stage": name, "version": __version__, "seed": self.config.seed,
               "config": self.config.section(*sections), "upstream": upstream}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def check_dependencies(self, name: str) -> None:
        deps = self._stages[name][0]
        for d in deps:
            rec = self.manifest["stages"].get(d)
            if rec is None or not self._outputs_ok(rec):
                raise DependencyError(name, f"requires stage {d} to have completed in {self.root}")

    def run_stage(self, name: str, force: bool = False) -> bool:
        """Run one stage; returns False when it was skipped as up to date."""
        if name not in self._stages:
            raise KeyError(f"unknown stage {name!r}")
        self.check_dependencies(name)
        key = self.stage_key(name)
        rec = self.manifest["stages"].get(name)
        if not force and rec is not None and rec.get("key") == key and self._outputs_ok(rec):
            logger.info("stage %s up to date, skipped", name)
            return False
        logger.info("stage %s running", name)
        for sub in ("data", "corpus", "checkpoints", "reports"):
            self.path(sub).mkdir(parents=True, exist_ok=True)
        try:
            outputs = self._stages[name][2]()
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - surfaced with the stage name
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        self.manifest["stages"][name] = {
            "key": key, "outputs": {rel: sha256_file(self.path(rel)) for rel in sorted(outputs)}}
        self._write_manifest()
        return True

    def stage_names(self, stage: str) -> list[str]:
        if stage == "train-agent":
            return [f"train-agent:{k}" for k in self.config.agent.kinds]
        if stage == "run-benchmark":
            return [f"run-benchmark:{b}" for b in BENCHMARKS]
        return [stage]

    def run(self, force: bool = False) -> dict[str, bool]:
        ran = {}
        for stage in STAGE_ORDER:
            for name in self.stage_names(stage):
                ran[name] = self.run_stage(name, force)
        return ran

    # ------------------------------------------------------------------ helpers

    def dataset(self, *splits: str) -> Dataset:
        return load_dataset(self.path("data"), splits=splits or None)

    def autoencoder(self):
        from .autoencoder import AutoEncoder
        return AutoEncoder.load(self.path("checkpoints/autoencoder.json"))

    def world(self) -> WorldModel:
        c = "checkpoints/"
        return WorldModel.from_files(self.path(c + "autoencoder.json"),
                                     self.path(c + "transition.json"),
                                     self.path(c + "reward.json"), self.path(c + "world.json"))

    def corpus(self) -> dict[str, list[ChainLatents]]:
        doc = json.loads(self.path("corpus/latents.json").read_text())
        m = self.config.autoencoder.m
        return {k: _chains_from_json(v, m) for k, v in doc.items()}

    # ------------------------------------------------------------------ stages

    def _gen_data(self) -> list[str]:
        d, L = self.config.data, self.config.lob.L
        target = self.path("data")
        for old in target.glob("*"):
            old.unlink()
        if d.source == "synthetic":
            params = GeneratorParams(n_levels=L, drift=d.drift, noise=d.noise,
                                     osc_amplitude=d.osc_amplitude, osc_period=d.osc_period,
                                     trade_rate=d.trade_rate, impact=d.impact,
                                     min_ticks=2 * self.config.lob.W)
            days = []
            for i, split in enumerate(("train", "validation", "test")):
                regimes = list(getattr(d, split))
                if regimes:
                    days += generate_dataset(self.stage_seed(f"gen-data:{split}"), regimes,
                                             d.n_ticks, params, [split] * len(regimes),
                                             prefix=f"{split}").days
            dataset = Dataset(tuple(days))
        else:
            dataset = load_dataset(d.source)
        save_dataset(dataset, target)
        return [f"data/{p.name}" for p in sorted(target.iterdir())]

    def _train_ae(self) -> list[str]:
        c, W = self.config.autoencoder, self.config.lob.W
        data = self.dataset("train", "validation")
        train = np.concatenate([sliding_feature_windows(day.lob, W, c.stride)
                                for day in data.split("train")])
        val_days = data.split("validation")
        if val_days:
            val = np.concatenate([sliding_feature_windows(day.lob, W, W) for day in val_days])
        else:
            cut = max(int(0.9 * len(train)), 1)
            train, val = train[:cut], train[cut:]
        cfg = AEConfig(window=W, n_features=4 * self.config.lob.L, latent_dim=c.m,
                       channels=c.channels, kernel=c.kernel, activation=c.activation,
                       seed=self.stage_seed("train-ae"))
        ae, rep = train_ae(train, cfg, _train_cfg(c.train, self.stage_seed("train-ae:fit")), val)
        ae.save(self.path("checkpoints/autoencoder.json"))
        _dump(self.path("reports/autoencoder.json"),
              {"initial_val_mse": rep.initial_val_mse, "final_val_mse": rep.final_val_mse,
               "val_mse_per_epoch": rep.val_mse_per_epoch,
               "train_mse_per_epoch": rep.fit.train_loss, "n_train": len(train),
               "n_val": len(val)})
        return ["checkpoints/autoencoder.json", "reports/autoencoder.json"]

    def _encode(self) -> list[str]:
        from .world import chain_latents
        lob, t = self.config.lob, self.config.transition
        ae = self.autoencoder()
        data = self.dataset("train", "validation")
        po_max = self.config.reward.po_max
        doc = {"train": _chains_to_json(chain_latents(data.split("train"), ae, lob.W, lob.U,
                                                      t.offsets, po_max)),
               "validation": _chains_to_json(chain_latents(data.split("validation"), ae, lob.W,
                                                           lob.U, (0,), po_max))}
        self.path("corpus/latents.json").write_text(json.dumps(doc, sort_keys=True))
        return ["corpus/latents.json"]

    def _train_transition(self) -> list[str]:
        t = self.config.transition
        corpus = self.corpus()
        X, Y = transition_corpus(corpus["train"], t.N)
        Xv = Yv = None
        if any(len(c) > t.N for c in corpus["validation"]):
            Xv, Yv = transition_corpus(corpus["validation"], t.N)
        cfg = TransitionConfig(latent_dim=self.config.autoencoder.m, n_components=t.K,
                               hidden=t.rnn_units, seq_len=t.N, temperature=t.temperature,
                               seed=self.stage_seed("train-transition"))
        model, res = train_mdn(X, Y, cfg, _train_cfg(t.train,
                                                     self.stage_seed("train-transition:fit")),
                               Xv, Yv)
        model.save(self.path("checkpoints/transition.json"))
        _dump(self.path("reports/transition.json"),
              {"initial_val_nll": res.initial_val, "val_nll_per_epoch": res.val_loss,
               "train_nll_per_epoch": res.train_loss, "n_sequences": len(X)})
        return ["checkpoints/transition.json", "reports/transition.json"]

    def _train_reward(self) -> list[str]:
        lob, t, r = self.config.lob, self.config.transition, self.config.reward
        corpus = self.corpus()
        zt, zt1, dm = reward_corpus(corpus["train"])
        val = None
        if any(len(c) >= 2 for c in corpus["validation"]):
            val = reward_corpus(corpus["validation"])
        cfg = RewardConfig(latent_dim=self.config.autoencoder.m, lstm_units=r.reward_lstm,
                           dense_units=r.reward_dense, seed=self.stage_seed("train-reward"))
        model, res = train_reward(zt, zt1, dm, cfg,
                                  _train_cfg(r.train, self.stage_seed("train-reward:fit")), val)
        bounds = RewardBounds.from_delta_mids(dm, r.po_max, tuple(r.squash_range))
        model.save(self.path("checkpoints/reward.json"), {"bounds": bounds.to_dict()})
        wcfg = WorldConfig(lob.W, lob.U, t.N, r.po_max, r.fees, tuple(r.squash_range),
                           t.temperature)
        pool = np.concatenate([c.emb for c in corpus["train"]])
        save_world_extras(self.path("checkpoints/world.json"),
                          initial_states(corpus["train"], t.N), pool, wcfg)
        report = {"initial_val_mse": res.initial_val, "val_mse_per_epoch": res.val_loss,
                  "train_mse_per_epoch": res.train_loss, "bounds": bounds.to_dict()}
        if val is not None:
            pred = model.predict_delta(val[0], val[1])
            report["val_sign_agreement"] = float(np.mean(np.sign(pred) == np.sign(val[2])))
        _dump(self.path("reports/reward.json"), report)
        return ["checkpoints/reward.json", "checkpoints/world.json", "reports/reward.json"]

    def agent_config(self, kind: str) -> AgentConfig:
        a = self.config.agent
        return AgentConfig(kind=kind, gamma=a.gamma, horizon=a.H, lr=a.lr, hidden=a.hidden,
                           seed=self.stage_seed(f"train-agent:{kind}"), iterations=a.iterations,
                           episodes_per_iteration=a.episodes_per_iteration, patience=a.patience,
                           temperature=self.config.transition.temperature,
                           target_period=a.target_period,
                           updates_per_iteration=a.updates_per_iteration,
                           epsilon_decay_iterations=a.epsilon_decay_iterations)

    def _train_agent(self, kind: str) -> list[str]:
        world = self.world()
        cfg = self.agent_config(kind)
        agent, curve = train_agent(kind, world, cfg)
        ck, lc = f"checkpoints/agent_{kind}.json", f"reports/learning_curve_{kind}.csv"
        agent.save(self.path(ck), {"agent_config": cfg.to_dict()})
        curve.to_csv(self.path(lc))
        rng = np.random.default_rng(cfg.seed + 1)
        n = cfg.episodes_per_iteration
        rep = {"best_iteration": curve.best_iteration, "stopped_early": curve.stopped_early,
               "random_return": mean_dream_return(RandomAgent(), world, cfg.horizon, n, rng,
                                                  cfg.gamma),
               "trained_return": mean_dream_return(agent, world, cfg.horizon, n, rng,
                                                   cfg.gamma, greedy=True)}
        _dump(self.path(f"reports/agent_{kind}.json"), rep)
        return [ck, lc, f"reports/agent_{kind}.json"]

    def _test_chains(self):
        lob, e = self.config.lob, self.config.evaluation
        return [(day, state_chain(day, lob.W, lob.U, e.max_states, po_max=self.config.reward.po_max))
                for day in self.dataset("test").split("test")]

    def _benchmark(self, name: str) -> list[str]:
        b, r = self.config.benchmark, self.config.reward
        if name == "classifier":
            return self._train_classifier()
        if name == "momentum":
            out_csv = "reports/envelope_momentum.csv"
            summary = {}
            with open(self.path(out_csv), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["day", "step", "lower", "upper"])
                for day, _ in self._test_chains():
                    curves, qs = [], list(range(100, 1001, 100))
                    for q in qs:
                        rep = replay_policy(MomentumStrategy(q, b.alpha), [day], r.fees,
                                            r.po_max, self.config.lob.W, self.config.lob.U,
                                            self.config.evaluation.max_states)
                        curves.append(rep.days[0].cum_pnl)
                    env = StrategyEnvelope(qs, np.array(curves))
                    summary[day.name] = {str(q): float(c[-1]) if len(c) else 0.0
                                         for q, c in zip(qs, curves)}
                    for row in env.to_rows():
                        w.writerow([day.name] + row)
            _dump(self.path("reports/benchmark_momentum.json"), summary)
            return [out_csv, "reports/benchmark_momentum.json"]
        if name == "greedy":
            out = {day.name: {"pnl": greedy_optimal(chain, po_max=r.po_max,
                                                    fee_rate=r.fees).pnl}
                   for day, chain in self._test_chains()}
            _dump(self.path("reports/benchmark_greedy.json"), out)
            return ["reports/benchmark_greedy.json"]
        if name == "bfs":
            out = {}
            h = b.bfs_horizon
            for day, chain in self._test_chains():
                mm = chain.mean_mids()[:h + 1]
                out[day.name] = {
                    "bfs": bfs_optimal(mm, b.bfs_actions, r.po_max, r.fees),
                    "greedy": greedy_optimal(mm, b.bfs_actions, r.po_max, r.fees).pnl}
            _dump(self.path("reports/benchmark_bfs.json"), out)
            return ["reports/benchmark_bfs.json"]
        raise ValueError(f"unknown benchmark {name!r}")

    def _classifier_data(self, days):
        lob, b = self.config.lob, self.config.benchmark
        X, y = [], []
        for day in days:
            chain = state_chain(day, lob.W, lob.U)
            if len(chain) < 2:
                continue
            X.append(minmax_columns(np.stack([w.features for w in chain.windows[:-1]])))
            y.append(movement_labels(np.diff(chain.mean_mids()), b.alpha))
        if not X:
            return None
        return np.concatenate(X), np.concatenate(y)

    def _train_classifier(self) -> list[str]:
        lob, b = self.config.lob, self.config.benchmark
        data = self.dataset("train", "validation")
        train = self._classifier_data(data.split("train"))
        val = self._classifier_data(data.split("validation"))
        cfg = ClassifierConfig(window=lob.W, n_features=4 * lob.L, alpha=b.alpha,
                               seed=self.stage_seed("classifier"))
        clf, report, res = train_classifier(train[0], train[1], cfg,
                                            _train_cfg(b.classifier,
                                                       self.stage_seed("classifier:fit")), val)
        clf.save(self.path("checkpoints/classifier.json"))
        _dump(self.path("reports/classifier_report.json"),
              {**report.to_dict(), "table": report.to_table(),
               "dominant_class": report.dominant_class, "val_loss_per_epoch": res.val_loss})
        return ["checkpoints/classifier.json", "reports/classifier_report.json"]

    def _evaluate(self) -> list[str]:
        lob, r, b, e = self.config.lob, self.config.reward, self.config.benchmark, \
            self.config.evaluation
        days = self.dataset("test").split("test")
        world = self.world()
        clf = MovementClassifier.load(self.path("checkpoints/classifier.json"))
        policies = []
        agents = {}
        for kind in self.config.agent.kinds:
            agent, _ = load_agent(self.path(f"checkpoints/agent_{kind}.json"))
            agents[kind] = agent
            policies.append(AgentPolicy(agent, world.autoencoder, f"rl-{kind}", r.po_max))
        policies += [MomentumStrategy(b.aggressive, b.alpha, "momentum-aggressive"),
                     MomentumStrategy(b.conservative, b.alpha, "momentum-conservative"),
                     ClassifierStrategy(clf, b.aggressive, "classifier-aggressive"),
                     ClassifierStrategy(clf, b.conservative, "classifier-conservative"),
                     GreedyStrategy(r.fees, r.po_max)]
        outputs, reports = [], {}
        for pol in policies:
            rep = replay_policy(pol, days, r.fees, r.po_max, lob.W, lob.U, e.max_states,
                                regime_window=e.regime_window,
                                regime_threshold=e.regime_threshold)
            reports[pol.name] = rep
            js, cs = f"reports/eval_{pol.name}.json", f"reports/eval_{pol.name}.csv"
            rep.to_json(self.path(js))
            rep.to_csv(self.path(cs))
            outputs += [js, cs]
        _dump(self.path("reports/variance.json"), variance_report(reports))
        outputs.append("reports/variance.json")
        need = self.config.transition.N + e.compare_horizon
        long_days = [d for d in days if len(d.lob) // lob.W >= need]
        for kind, agent in agents.items():
            if not long_days:
                break
            table = compare_dream_vs_replay(agent, world, long_days, e.compare_horizon,
                                            e.compare_days, e.compare_samples,
                                            self.stage_seed(f"compare:{kind}"))
            rel = f"reports/dream_vs_replay_{kind}.json"
            _dump(self.path(rel), table.to_dict())
            outputs.append(rel)
        return outputs

    def _compare(self) -> list[str]:
        reports = [EvalReport.from_json(p) for p in sorted(self.path("reports").glob("eval_*.json"))]
        rows = rank_reports(reports)
        write_ranking(rows, self.path("reports/ranking.json"), self.path("reports/ranking.csv"))
        return ["reports/ranking.json", "reports/ranking.csv"]


def write_ranking(rows: list[dict], json_path: Path, csv_path: Path | None = None) -> None:
    _dump(json_path, rows)
    if csv_path is not None:
        cols = ["rank", "strategy", "n_days", "mean_pnl", "var_pnl", "total_pnl",
                "total_pnl_no_fees"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow([row[c] for c in cols])


def run_pipeline(config: RunConfig, out: str | Path, force: bool = False) -> Path:
    """Run every stage in dependency order, skipping up-to-date ones; returns the directory."""
    Pipeline(config, out).run(force)
    return Path(out)


def artifact_hashes(out: str | Path) -> dict[str, str]:
    """sha256 of every file under the artifacts directory, keyed by relative path."""
    root = Path(out)
    return {str(p.relative_to(root)): sha256_file(p)
            for p in sorted(root.rglob("*")) if p.is_file()}


def with_overrides(config: RunConfig, **sections) -> RunConfig:
    return replace(config, **sections)
