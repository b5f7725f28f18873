"""Experiment configuration, per-seed metrics files and seed aggregation.

Config files are INI with an ``[experiment]`` and an ``[agent]`` section.
Any key can be overridden from the environment as ``AWMP_<SECTION>_<KEY>``,
e.g. ``AWMP_AGENT_ALPHA_PI=0.1`` or ``AWMP_EXPERIMENT_TOTAL_STEPS=20000``.

Metrics files, named ``<algorithm>_<env>_seed<k>.metrics.tsv``, are
tab-separated with one header row, then one row per evaluation, appended
and flushed as training proceeds.  Columns::

    step  mean_return  returns  loss_v  loss_q  loss_pi  loss_eta  mi  gating_entropy

``returns`` holds the per-episode returns joined by commas.  Floats are
written with ``repr`` so they read back exactly.  Wall-clock time is kept out
of the metrics file (it would break bit-identical reruns) and goes to a
``.timing.tsv`` sidecar instead.  A seed that diverges keeps its rows and
gets a trailing ``#`` comment naming the step.
"""

from __future__ import annotations

import configparser
import io
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .agent import AgentConfig
from .envs import ENVS, make_env, run_episode
from .networks import load_networks, restore, save_networks
from .training import ALGORITHMS, Streams, TrainingDiverged, make_agent, train

log = logging.getLogger(__name__)

ENV_PREFIX = "AWMP_"
METRIC_COLUMNS = ("step", "mean_return", "returns", "loss_v", "loss_q", "loss_pi",
                  "loss_eta", "mi", "gating_entropy")
EXPERIMENT_ALGORITHMS = tuple(ALGORITHMS) + ("oracle",)
BAND_NOTE = ("# band = mean +/- 0.5 * sample std across seeds (ddof = 1); "
             "a single seed gives a zero-width band")


@dataclass
class ExperimentConfig:
    algorithm: str = "sac-awmp"
    env_id: str = "bang1d"
    agent: AgentConfig = field(default_factory=AgentConfig)
    total_steps: int = 100_000
    eval_interval: int = 1000
    eval_episodes: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.algorithm not in EXPERIMENT_ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {EXPERIMENT_ALGORITHMS}")
        if self.env_id not in ENVS:
            raise ValueError(f"unknown env {self.env_id!r}; expected one of {tuple(ENVS)}")
        if self.eval_interval <= 0:
            raise ValueError("eval_interval must be > 0")
        if self.eval_episodes <= 0:
            raise ValueError("eval_episodes must be > 0")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be > 0")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")

    def with_seeds(self, seeds):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values["seeds"] = tuple(seeds)
        return ExperimentConfig(**values)


# -- INI rendering and parsing ----------------------------------------------

_EXPERIMENT_KEYS = ("algorithm", "env_id", "total_steps", "eval_interval", "eval_episodes",
                    "seeds", "out_dir")


def _render_value(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text, kind):
    text = text.strip()
    if kind == "tuple":
        return tuple(int(p) for p in text.replace(",", " ").split())
    if kind == "optional_int":
        return None if text.lower() in ("", "none") else int(text)
    if kind == "int":
        return int(float(text)) if "e" in text.lower() else int(text)
    if kind == "float":
        return float(text)
    return text


def _agent_kinds():
    kinds = {}
    for f in fields(AgentConfig):
        if f.name == "hidden":
            kinds[f.name] = "tuple"
        elif f.name == "policy_batch":
            kinds[f.name] = "optional_int"
        elif isinstance(f.default, str):
            kinds[f.name] = "str"
        else:
            kinds[f.name] = "int" if isinstance(f.default, int) else "float"
    return kinds


_KINDS = {
    "experiment": {"algorithm": "str", "env_id": "str", "total_steps": "int", "eval_interval": "int",
                   "eval_episodes": "int", "seeds": "tuple", "out_dir": "str"},
    "agent": _agent_kinds(),
}


def render_config(config):
    """INI text for ``config``; ``parse_config`` reads it back unchanged."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {k: _render_value(getattr(config, k)) for k in _EXPERIMENT_KEYS}
    parser["agent"] = {f.name: _render_value(getattr(config.agent, f.name)) for f in fields(AgentConfig)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text, environ=None):
    """Build an :class:`ExperimentConfig` from INI text plus env overrides.

    Unknown sections or keys are rejected so typos do not pass silently.
    """
    parser = configparser.ConfigParser()
    parser.read_string(text)
    raw = {section: dict(parser[section]) for section in parser.sections()}
    for section in raw:
        if section not in _KINDS:
            raise ValueError(f"unknown config section [{section}]")
    if environ is not None:
        for section, keys in _KINDS.items():
            for key in keys:
                env_key = f"{ENV_PREFIX}{section.upper()}_{key.upper()}"
                if env_key in environ:
                    raw.setdefault(section, {})[key] = environ[env_key]
    values = {}
    for section, items in raw.items():
        for key, text_value in items.items():
            if key not in _KINDS[section]:
                raise ValueError(f"unknown key '{key}' in [{section}]")
            try:
                values[(section, key)] = _parse_value(text_value, _KINDS[section][key])
            except ValueError:
                raise ValueError(f"[{section}] {key}: cannot parse {text_value!r}") from None
    agent = AgentConfig(**{k: v for (s, k), v in values.items() if s == "agent"})
    return ExperimentConfig(agent=agent, **{k: v for (s, k), v in values.items() if s == "experiment"})


def load_config(path, environ=None):
    return parse_config(Path(path).read_text(), os.environ if environ is None else environ)


# -- metrics files ------------------------------------------------------------

def run_stem(config, seed):
    return f"{config.algorithm}_{config.env_id}_seed{seed}"


def format_row(row):
    cells = [str(row.step), repr(float(row.mean_return)), ",".join(repr(float(r)) for r in row.returns)]
    cells += [repr(float(getattr(row, name))) for name in METRIC_COLUMNS[3:]]
    return "\t".join(cells)


def read_metrics(path):
    """Return ``{column: array}`` for a metrics file; ``returns`` is a 2-D array."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split("\t")
    if tuple(header) != METRIC_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    cols = {name: [] for name in header}
    for ln in lines[1:]:
        for name, cell in zip(header, ln.split("\t")):
            cols[name].append(cell)
    out = {name: np.array([float(c) for c in cells]) for name, cells in cols.items() if name != "returns"}
    out["step"] = out["step"].astype(np.int64)
    out["returns"] = np.array([[float(x) for x in cell.split(",")] for cell in cols["returns"]])
    return out


@dataclass
class SeedResult:
    seed: int
    metrics_path: Path
    checkpoint_path: Path | None
    rows: int
    error: str | None = None


def _oracle_rows(config, seed):
    """Evaluation rows for the analytic controller, on the usual grid."""
    from .training import MetricsRow

    env = make_env(config.env_id)
    streams = Streams(seed)
    for step in range(config.eval_interval, config.total_steps + 1, config.eval_interval):
        rng = streams.fresh("eval")
        returns = [run_episode(env, env.oracle_action, rng)[0] for _ in range(config.eval_episodes)]
        yield MetricsRow(step, float(np.mean(returns)), returns)


def run_seed(config, seed):
    """Train one seed, streaming rows to its metrics file.  Never raises on divergence."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = run_stem(config, seed)
    metrics_path = out / f"{stem}.metrics.tsv"
    timing_path = out / f"{stem}.timing.tsv"
    ckpt_path = out / f"{stem}.ckpt"
    (out / f"{stem}.ini").write_text(render_config(config.with_seeds([seed])))

    n_rows = 0
    with open(metrics_path, "w") as fh, open(timing_path, "w") as th:
        fh.write("\t".join(METRIC_COLUMNS) + "\n")
        fh.flush()
        th.write("step\twall_clock\n")

        def on_row(row):
            nonlocal n_rows
            fh.write(format_row(row) + "\n")
            fh.flush()
            th.write(f"{row.step}\t{row.wall_clock:.3f}\n")
            th.flush()
            n_rows += 1

        if config.algorithm == "oracle":
            for row in _oracle_rows(config, seed):
                on_row(row)
            save_networks(ckpt_path, {})
            return SeedResult(seed, metrics_path, ckpt_path, n_rows)
        try:
            agent, _, _ = train(config.env_id, config.agent, seed, config.algorithm,
                                total_steps=config.total_steps, eval_interval=config.eval_interval,
                                eval_episodes=config.eval_episodes, on_row=on_row)
        except TrainingDiverged as exc:
            fh.write(f"# aborted at env step {exc.step}: {exc}\n")
            fh.flush()
            log.error("seed %d aborted: %s", seed, exc)
            return SeedResult(seed, metrics_path, None, n_rows, str(exc))
    save_networks(ckpt_path, agent.networks())
    return SeedResult(seed, metrics_path, ckpt_path, n_rows)


def run_experiment(config):
    """One metrics file, checkpoint and config sidecar per seed."""
    return [run_seed(config, seed) for seed in config.seeds]


# -- evaluation of a saved run ------------------------------------------------

def load_agent(checkpoint):
    """Rebuild the agent saved at ``checkpoint`` using its ``.ini`` sidecar."""
    checkpoint = Path(checkpoint)
    config = parse_config(checkpoint.with_suffix(".ini").read_text())
    env = make_env(config.env_id)
    if config.algorithm == "oracle":
        return config, env, None
    agent = make_agent(config.algorithm, env, config.agent, Streams(config.seeds[0]))
    saved = load_networks(checkpoint)
    for name, net in agent.networks().items():
        if name not in saved:
            raise ValueError(f"{checkpoint}: no record for network '{name}'")
        restore(net, saved[name])
    return config, env, agent


def evaluate_checkpoint(checkpoint, episodes, seed=None):
    """Greedy returns and the trajectory of the first episode."""
    config, env, agent = load_agent(checkpoint)
    action_fn = env.oracle_action if agent is None else agent.act_greedy
    rng = Streams(config.seeds[0] if seed is None else seed).fresh("eval")
    returns, first = [], None
    for i in range(episodes):
        ret, _, traj = run_episode(env, action_fn, rng)
        returns.append(ret)
        if i == 0:
            first = traj
    return returns, first


# -- aggregation --------------------------------------------------------------

@dataclass
class Aggregate:
    step: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_seeds: int


def aggregate(paths):
    """Mean and half-sample-std band of ``mean_return`` across seed files.

    Values at each step are sorted before reducing, so the result does not
    depend on the order of ``paths``.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("aggregate needs at least one metrics file")
    runs = [read_metrics(p) for p in paths]
    ref = runs[0]["step"]
    bad = [str(p) for p, r in zip(paths, runs) if not np.array_equal(r["step"], ref)]
    if bad:
        raise ValueError(f"step grids differ from {paths[0]}: {', '.join(bad)}")
    values = np.sort(np.stack([r["mean_return"] for r in runs]), axis=0)
    mean = values.mean(axis=0)
    half = 0.5 * values.std(axis=0, ddof=1) if len(runs) > 1 else np.zeros_like(mean)
    return Aggregate(ref, mean, mean - half, mean + half, len(runs))


def format_aggregate(agg):
    lines = [BAND_NOTE, f"# seeds = {agg.n_seeds}", "step\tmean\tlo\thi"]
    lines += [f"{s}\t{m!r}\t{lo!r}\t{hi!r}" for s, m, lo, hi in
              zip(agg.step.tolist(), agg.mean.tolist(), agg.lo.tolist(), agg.hi.tolist())]
    return "\n".join(lines) + "\n"


def read_aggregate(path):
    rows = [ln.split("\t") for ln in Path(path).read_text().splitlines()
            if ln and not ln.startswith("#")][1:]
    arr = np.array([[float(c) for c in r] for r in rows]).reshape(-1, 4)
    return Aggregate(arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2], arr[:, 3], -1)


def write_aggregate(paths, out, plot=True, title=None):
    """Write the band table to ``out`` and, by default, a PNG beside it."""
    agg = aggregate(paths)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_aggregate(agg))
    png = None
    if plot:
        from .plotting import plot_band

        png = plot_band(agg, out.with_suffix(".png"), title=title)
    return agg, png


def final_mean(path, last=1):
    """Mean eval return over the last ``last`` rows of a metrics file."""
    m = read_metrics(path)["mean_return"]
    return float(np.mean(m[-last:])) if len(m) else math.nan
