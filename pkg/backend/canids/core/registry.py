import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Union

from ..models.schemas import RegistryEntry
from .errors import ConfigError
from .model import load_model
from .quant import load_qmodel
from .stream_bench import Predictor, predictor_kind
from .trace_io import AttackKind

logger = logging.getLogger(__name__)

ATTACKS = (AttackKind.DOS, AttackKind.FUZZY, AttackKind.RPM, AttackKind.GEAR)


class ModelRegistry:
    """One independently trained classifier per attack kind, found by file name.

    ``<attack>.qmodel`` wins over ``<attack>.model``. Models load on first use.
    """

    def __init__(self, model_dir: Union[str, Path]):
        self.model_dir = Path(model_dir)
        self._cache: Dict[AttackKind, Predictor] = {}
        self._lock = threading.Lock()

    def path_for(self, attack: AttackKind) -> Optional[Path]:
        for suffix in (".qmodel", ".model"):
            candidate = self.model_dir / f"{attack.value}{suffix}"
            if candidate.is_file():
                return candidate
        return None

    def get(self, attack: AttackKind) -> Predictor:
        if attack not in ATTACKS:
            raise ConfigError(f"no classifier exists for attack kind {attack.value!r}")
        with self._lock:
            if attack in self._cache:
                return self._cache[attack]
            path = self.path_for(attack)
            if path is None:
                raise FileNotFoundError(f"no model for {attack.value} in {self.model_dir}")
            predictor = load_qmodel(path) if path.suffix == ".qmodel" else load_model(path)
            if predictor.meta.attack is not attack:
                raise ConfigError(f"{path} was trained for {predictor.meta.attack.value}, not {attack.value}")
            self._cache[attack] = predictor
            logger.info(f"Registered {predictor_kind(predictor)} model for {attack.value} from {path}")
            return predictor

    def entries(self) -> List[RegistryEntry]:
        listed = []
        for attack in ATTACKS:
            if self.path_for(attack) is None:
                continue
            predictor = self.get(attack)
            listed.append(
                RegistryEntry(
                    attack=attack,
                    path=str(self.path_for(attack)),
                    model_kind=predictor_kind(predictor),
                    n=predictor.meta.n,
                    width=predictor.meta.width,
                )
            )
        return listed

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
