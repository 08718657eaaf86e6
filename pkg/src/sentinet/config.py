"""Scenario configuration: JSON schema, validation, and context assembly.

One config file drives both case studies. It declares the model (spatial
region or river network, covariance components, priors), the anomaly
scenarios (p_a, lambda_a per scenario id, shared contamination
magnitude), the detector, Monte Carlo sizes, and the optimizer settings.
``build_space_and_model`` turns the declaration into the objects the
utility and optimizer modules consume.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anomaly import AnomalyGenParams
from .covariance import CovarianceSpec, Prior, PriorSpec
from .design import NetworkPathSpace, RectangleSpace
from .network import RiverNetwork, NetworkLocation, generate_network
from .utility import DetectorConfig, NetworkModel, SpatialModel, UtilityConfig


class ConfigError(ValueError):
    pass


_PRIOR_KEYS = ("sigma2_e", "rho_e", "sigma2_u", "alpha_u", "sigma2_d", "alpha_d", "sigma2_0")


def _parse_prior(d: dict, where: str) -> Prior:
    try:
        kind = d["dist"]
        if kind == "uniform":
            return Prior.uniform(float(d["low"]), float(d["high"]))
        if kind == "gamma":
            return Prior.gamma(float(d["shape"]), float(d["rate"]),
                               reciprocal=bool(d.get("reciprocal", False)))
        if kind == "fixed":
            return Prior.fixed(float(d["value"]))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unknown prior dist {kind!r}")


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return block[key]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    out_dir: str
    objective: str
    default_scenario: str
    scenarios: dict  # id -> AnomalyGenParams
    model_block: dict
    detector: DetectorConfig
    b_draws: int
    b_train: int
    opt_sweeps: int
    opt_starts: int
    opt_grid_points: int
    opt_b_emulator: int
    opt_b_test: int
    raw: dict
    base_dir: str

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def scenario_params(self, scenario_id: str) -> AnomalyGenParams:
        if scenario_id not in self.scenarios:
            raise ConfigError(f"unknown scenario id {scenario_id!r}; "
                              f"known: {sorted(self.scenarios)}")
        return self.scenarios[scenario_id]

    def utility_config(self, scenario_id: str | None = None,
                       objective: str | None = None,
                       b_draws: int | None = None) -> UtilityConfig:
        sid = scenario_id if scenario_id is not None else self.default_scenario
        return UtilityConfig(
            anomaly=self.scenario_params(sid),
            detector=self.detector,
            b_draws=b_draws if b_draws is not None else self.b_draws,
            b_train=self.b_train,
            objective=objective if objective is not None else self.objective,
        )

    def build_space_and_model(self):
        return build_space_and_model(self.model_block, self.base_dir)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw, base_dir=str(path.parent))


def parse_config(raw: dict, base_dir: str = ".") -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    name = str(raw.get("name", "run"))
    try:
        seed = int(_require(raw, "seed", "config"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.seed: {exc}") from exc
    out_dir = str(raw.get("out_dir", "runs"))
    objective = str(raw.get("objective", "dual"))

    anom = _require(raw, "anomaly", "config")
    mu_a = float(anom.get("mu_a", 0.0))
    if "sigma2_a" in anom:
        sigma_a = float(anom["sigma2_a"]) ** 0.5
    else:
        sigma_a = float(anom.get("sigma_a", 1.0))
    scen_block = _require(anom, "scenarios", "config.anomaly")
    if not scen_block:
        raise ConfigError("config.anomaly.scenarios must be nonempty")
    scenarios = {}
    for sid, sdef in scen_block.items():
        if sid in scenarios:
            raise ConfigError(f"duplicate scenario id {sid!r}")
        try:
            scenarios[str(sid)] = AnomalyGenParams(
                p_a=float(_require(sdef, "p_a", f"scenario {sid}")),
                lambda_a=float(_require(sdef, "lambda_a", f"scenario {sid}")),
                mu_a=mu_a, sigma_a=sigma_a)
        except ValueError as exc:
            raise ConfigError(f"scenario {sid}: {exc}") from exc
    default_scenario = str(raw.get("scenario", sorted(scenarios)[0]))

    det = _require(raw, "detector", "config")
    kind = _require(det, "kind", "config.detector")
    try:
        detector = DetectorConfig(
            kind=kind, k=int(det.get("k", 3)), tau_f=float(det.get("tau_f", 0.95)),
            n_extremes=int(det.get("n_extremes", 100_000)))
    except ValueError as exc:
        raise ConfigError(f"config.detector: {exc}") from exc

    util = raw.get("utility", {})
    opt = raw.get("optimizer", {})
    cfg = ScenarioConfig(
        name=name, seed=seed, out_dir=out_dir, objective=objective,
        default_scenario=default_scenario, scenarios=scenarios,
        model_block=_require(raw, "model", "config"), detector=detector,
        b_draws=int(util.get("b_draws", 500)), b_train=int(util.get("b_train", 100)),
        opt_sweeps=int(opt.get("sweeps", 10)), opt_starts=int(opt.get("starts", 3)),
        opt_grid_points=int(opt.get("grid_points", 20)),
        opt_b_emulator=int(opt.get("b_emulator", 200)),
        opt_b_test=int(opt.get("b_test", 150)),
        raw=raw, base_dir=base_dir,
    )
    # validate eagerly so bad configs fail at load time, not mid-run
    cfg.utility_config()
    cfg.build_space_and_model()
    return cfg


def _parse_priors(block: dict, where: str) -> PriorSpec:
    spatial = {}
    phi = Prior.fixed(0.0)
    beta = (0.0,)
    for key, val in block.items():
        if key == "phi":
            phi = _parse_prior(val, f"{where}.phi")
        elif key == "beta":
            beta = tuple(float(b) for b in val)
        elif key in _PRIOR_KEYS:
            spatial[key] = _parse_prior(val, f"{where}.{key}")
        else:
            raise ConfigError(f"{where}: unknown prior parameter {key!r}")
    return PriorSpec(spatial=spatial, phi=phi, beta=beta)


def build_network(block: dict, base_dir: str) -> RiverNetwork:
    if "file" in block:
        path = Path(block["file"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"network file not found: {path}")
        try:
            return RiverNetwork.from_json(path.read_text())
        except Exception as exc:
            raise ConfigError(f"network file {path}: {exc}") from exc
    if "segments" in block:
        return generate_network(int(block["segments"]), int(block.get("seed", 0)))
    raise ConfigError("model.network needs either 'file' or 'segments'")


def spread_prediction_sites(net: RiverNetwork, count: int) -> tuple:
    """Deterministic prediction sites: segment midpoints, evenly strided
    through the segments ordered by distance to the outlet."""
    segs = sorted(
        net.segments,
        key=lambda s: (net.distance_to_outlet(NetworkLocation(s.id, 0.5 * s.length)), s.id),
    )
    if count > len(segs):
        raise ConfigError(f"n_predictions {count} exceeds segment count {len(segs)}")
    idx = np.unique(np.round(np.linspace(0, len(segs) - 1, count)).astype(int))
    i = 0
    while len(idx) < count:  # fill collisions (tiny networks) with unused segments
        if i not in idx:
            idx = np.sort(np.append(idx, i))
        i += 1
    return tuple(NetworkLocation(segs[i].id, 0.5 * segs[i].length) for i in idx[:count])


def build_space_and_model(block: dict, base_dir: str = "."):
    kind = _require(block, "kind", "config.model")
    cov_block = _require(block, "covariance", "config.model")
    try:
        cov_spec = CovarianceSpec(components=tuple(_require(cov_block, "components",
                                                            "config.model.covariance")),
                                  nugget=bool(cov_block.get("nugget", True)))
    except ValueError as exc:
        raise ConfigError(f"config.model.covariance: {exc}") from exc
    prior = _parse_priors(_require(block, "priors", "config.model"), "config.model.priors")
    n_sensors = int(_require(block, "n_sensors", "config.model"))

    if kind == "spatial":
        region = _require(block, "region", "config.model")
        try:
            space = RectangleSpace(bounds=tuple((float(lo), float(hi)) for lo, hi in region),
                                   n_points=n_sensors)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.model.region: {exc}") from exc
        gx, gy = block.get("prediction_grid", [5, 5])
        (xlo, xhi), (ylo, yhi) = space.bounds
        xs = np.linspace(xlo, xhi, int(gx))
        ys = np.linspace(ylo, yhi, int(gy))
        grid = np.array([(x, y) for y in ys for x in xs])
        model = SpatialModel(prior=prior, cov_spec=cov_spec, pred_points=grid,
                             tau=float(block.get("tau", 1e-5)))
        return space, model

    if kind == "river":
        net = build_network(_require(block, "network", "config.model"), base_dir)
        space = NetworkPathSpace.from_network(net, n_sensors)
        preds = spread_prediction_sites(net, int(block.get("n_predictions", 10)))
        model = NetworkModel(prior=prior, cov_spec=cov_spec, network=net,
                             pred_locations=preds,
                             T=int(_require(block, "t_steps", "config.model")))
        return space, model

    raise ConfigError(f"config.model.kind must be 'spatial' or 'river', got {kind!r}")
