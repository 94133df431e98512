"""Run configuration: YAML loading, validation, built-in configs and digests."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml

from ..core.errors import ConfigError
from ..core.nn_math import Loss
from ..core.optim import OptimizerConfig, OptimizerKind, RegularizerConfig
from .logger import get_logger

logger = get_logger(__name__)

NETWORK_KINDS = ("fnn", "cnn", "rnn", "lstm")
DATA_SOURCES = ("synthetic", "idx", "delimited")


def _section(cls: Any, raw: Optional[Mapping[str, Any]], name: str) -> Any:
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(f"{name}: {e}") from e


@dataclass
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 32
    shuffle: bool = True
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise ConfigError(
                "training: epochs and batch_size must be positive, "
                "checkpoint_every >= 0"
            )


@dataclass
class DataConfig:
    """
    Where samples come from and how they are prepared.

    ``source`` is ``synthetic`` (``name`` plus ``params``), ``idx`` (``images``
    and ``labels`` paths) or ``delimited`` (``path``: one sample per line,
    comma-separated, the last ``target_columns`` columns are targets).
    ``encoding`` is ``{kind: one_hot, classes: K}`` or
    ``{kind: bins, count: C, lo: .., hi: ..}``.
    """

    source: str = "synthetic"
    name: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    images: Optional[str] = None
    labels: Optional[str] = None
    path: Optional[str] = None
    target_columns: int = 1
    limit: Optional[int] = None
    eval_fraction: float = 0.0
    centering: str = "none"
    regression: bool = False
    encoding: Optional[Dict[str, Any]] = None

    def __post_init__(self) -> None:
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"data: source must be one of {', '.join(DATA_SOURCES)}")
        if self.source == "synthetic" and not self.name:
            raise ConfigError("data: synthetic source needs a name")
        if self.source == "idx" and not (self.images and self.labels):
            raise ConfigError("data: idx source needs images and labels paths")
        if self.source == "delimited" and not self.path:
            raise ConfigError("data: delimited source needs a path")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError("data: eval_fraction must be in [0, 1)")


@dataclass
class GradCheckConfig:
    step: float = 1e-5
    threshold: float = 1e-5
    batch_size: int = 4

    def __post_init__(self) -> None:
        if not (self.step > 0 and self.threshold > 0 and self.batch_size >= 1):
            raise ConfigError(
                "gradcheck: step, threshold and batch_size must be positive"
            )


@dataclass
class RunConfig:
    """
    One validated run configuration.

    ``network`` stays a plain mapping (its layout depends on the network kind
    and is checked by the model builder); the other sections are typed.
    """

    name: str
    seed: int
    network: Dict[str, Any]
    loss: Loss
    optimizer: OptimizerConfig
    regularization: RegularizerConfig
    training: TrainingConfig
    data: DataConfig
    gradcheck: GradCheckConfig
    source: Optional[Path] = None

    @classmethod
    def from_dict(
        cls, raw: Mapping[str, Any], source: Optional[Path] = None
    ) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("a run configuration must be a mapping")
        allowed = {
            "name", "seed", "network", "loss", "optimizer", "regularization",
            "training", "data", "gradcheck",
        }
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ConfigError(f"unknown sections: {', '.join(unknown)}")

        network = dict(raw.get("network") or {})
        kind = network.get("kind")
        if kind not in NETWORK_KINDS:
            raise ConfigError(f"network.kind must be one of {', '.join(NETWORK_KINDS)}")

        loss_raw = dict(raw.get("loss") or {})
        loss = Loss.parse(
            loss_raw.get("kind", "cross_entropy"), int(loss_raw.get("bins") or 0)
        )

        opt_raw = dict(raw.get("optimizer") or {})
        try:
            opt_raw["kind"] = OptimizerKind(opt_raw.get("kind", "adam"))
        except ValueError as e:
            raise ConfigError(f"optimizer: {e}") from e

        return cls(
            name=str(raw.get("name") or (source.stem if source else "run")),
            seed=int(raw.get("seed", 0)),
            network=network,
            loss=loss,
            optimizer=_section(OptimizerConfig, opt_raw, "optimizer"),
            regularization=_section(
                RegularizerConfig, raw.get("regularization"), "regularization"
            ),
            training=_section(TrainingConfig, raw.get("training"), "training"),
            data=_section(DataConfig, raw.get("data"), "data"),
            gradcheck=_section(GradCheckConfig, raw.get("gradcheck"), "gradcheck"),
            source=source,
        )

    def to_dict(self) -> Dict[str, Any]:
        optimizer = asdict(self.optimizer)
        optimizer["kind"] = self.optimizer.kind.value
        return {
            "name": self.name,
            "seed": self.seed,
            "network": self.network,
            "loss": {"kind": self.loss.kind.value, "bins": self.loss.bins},
            "optimizer": optimizer,
            "regularization": asdict(self.regularization),
            "training": asdict(self.training),
            "data": asdict(self.data),
            "gradcheck": asdict(self.gradcheck),
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of the network and loss sections."""
        canonical = json.dumps(
            {"network": self.network, "loss": self.to_dict()["loss"]},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def uses_batch_norm(self) -> bool:
        net = self.network
        if net.get("batch_norm"):
            return True
        return any(bool(layer.get("batch_norm")) for layer in net.get("layers") or [])

    def dump(self, path: Path) -> Path:
        """Write the resolved configuration as YAML."""
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        logger.debug("Wrote resolved configuration to %s", path)
        return path


def builtin_names() -> List[str]:
    """Names of the configurations shipped with the package."""
    folder = resources.files("indexnet") / "configs"
    return sorted(
        entry.name[: -len(".yaml")]
        for entry in folder.iterdir()
        if entry.name.endswith(".yaml")
    )


def read_config_text(name_or_path: Union[str, Path]) -> tuple[str, Optional[Path]]:
    """
    Text of a configuration file, or of a built-in configuration by bare name.

    Raises:
        ConfigError: If neither a file nor a built-in configuration matches.
    """
    path = Path(name_or_path)
    if path.is_file():
        return path.read_text(encoding="utf-8"), path
    builtin = resources.files("indexnet") / "configs" / f"{name_or_path}.yaml"
    if builtin.is_file():
        logger.debug("Using built-in configuration %s", name_or_path)
        return builtin.read_text(encoding="utf-8"), None
    raise ConfigError(
        f"no configuration file or built-in named '{name_or_path}' "
        f"(built-ins: {', '.join(builtin_names())})"
    )


def load_config(
    name_or_path: Union[str, Path], seed: Optional[int] = None
) -> RunConfig:
    """
    Load, parse and validate a run configuration.

    Args:
        name_or_path: YAML file path or built-in configuration name
        seed: Overrides the configuration seed when given

    Raises:
        ConfigError: On unreadable YAML or invalid sections.
    """
    text, source = read_config_text(name_or_path)
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        logger.error("Error parsing configuration %s: %s", name_or_path, e)
        raise ConfigError(f"cannot parse {name_or_path}: {e}") from e
    config = RunConfig.from_dict(raw, source)
    if seed is not None:
        config.seed = seed
    logger.info(
        "Loaded configuration '%s' (digest %s)", config.name, config.digest()[:12]
    )
    return config
