"""Run configuration: a JSON document validated by a DRF serializer."""
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional

from django.conf import settings
from rest_framework import serializers

from catalog.augment import AUGMENTATIONS
from flarecast.exceptions import ConfigError
from network.architecture import ARCHITECTURES
from network.model import INIT_SCHEMES

logger = logging.getLogger(__name__)

HALVING_EPOCHS = 5


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.001
    halve_every: int = HALVING_EPOCHS
    seed: int = 0
    architecture: str = 'tiny'
    input_size: Optional[int] = None
    init: str = 'uniform'
    augmentation: bool = True
    augmentations: List[str] = field(default_factory=lambda: list(AUGMENTATIONS))
    class_weighting: bool = True
    threshold: float = 0.5
    catalog: str = ''
    dataset: str = ''
    image_dir: str = ''
    output_dir: str = ''
    validation_partition: int = 1
    freeze: List[str] = field(default_factory=list)

    def learning_rate_at(self, epoch: int) -> float:
        """lr0 * 0.5^floor(epoch / halve_every), epochs counted from 0."""
        return self.learning_rate * 0.5 ** (epoch // self.halve_every)

    @property
    def training_partitions(self):
        return tuple(p for p in (1, 2, 3, 4) if p != self.validation_partition)

    def for_fold(self, partition: int) -> 'RunConfig':
        return replace(self, validation_partition=partition)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> 'RunConfig':
        serializer = RunConfigSerializer(data=data)
        if not serializer.is_valid():
            raise ConfigError(f"invalid run config: {_flatten(serializer.errors)}")
        return serializer.save()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        return path


def _flatten(errors) -> str:
    parts = []
    for name, messages in errors.items():
        if isinstance(messages, dict):
            messages = [_flatten(messages)]
        parts.append(f"{name}: {' '.join(str(m) for m in messages)}")
    return '; '.join(parts)


class RunConfigSerializer(serializers.Serializer):
    epochs = serializers.IntegerField(min_value=1, default=50)
    batch_size = serializers.IntegerField(min_value=1, default=64)
    learning_rate = serializers.FloatField(min_value=0.0, default=0.001)
    halve_every = serializers.IntegerField(min_value=1, default=HALVING_EPOCHS)
    seed = serializers.IntegerField(min_value=0, default=0)
    architecture = serializers.ChoiceField(choices=sorted(ARCHITECTURES), default='tiny')
    input_size = serializers.IntegerField(min_value=8, allow_null=True, default=None)
    init = serializers.ChoiceField(choices=INIT_SCHEMES, default='uniform')
    augmentation = serializers.BooleanField(default=True)
    augmentations = serializers.ListField(child=serializers.ChoiceField(choices=AUGMENTATIONS),
                                          default=list(AUGMENTATIONS))
    class_weighting = serializers.BooleanField(default=True)
    threshold = serializers.FloatField(min_value=0.0, max_value=1.0,
                                       default=lambda: settings.FLARECAST['DECISION_THRESHOLD'])
    catalog = serializers.CharField(allow_blank=True, default='')
    dataset = serializers.CharField(allow_blank=True, default='')
    image_dir = serializers.CharField(allow_blank=True, default='')
    output_dir = serializers.CharField(allow_blank=True, default='')
    validation_partition = serializers.IntegerField(min_value=1, max_value=4, default=1)
    freeze = serializers.ListField(child=serializers.CharField(), default=list)

    def validate_learning_rate(self, value):
        if value <= 0:
            raise serializers.ValidationError('learning rate must be positive')
        return value

    def validate(self, attrs):
        unknown = set(self.initial_data) - set(self.fields)
        if unknown:
            raise serializers.ValidationError({'unknown': sorted(unknown)})
        if attrs.get('augmentation') and not attrs.get('augmentations'):
            raise serializers.ValidationError({'augmentations': 'augmentation is on but no kinds are listed'})
        return attrs

    def create(self, validated_data):
        return RunConfig(**validated_data)


def with_path_defaults(config: RunConfig) -> RunConfig:
    """Empty paths fall back to the FLARECAST settings (and their environment overrides)."""
    defaults = settings.FLARECAST
    return replace(
        config,
        catalog=config.catalog or str(defaults['CATALOG']),
        dataset=config.dataset or str(Path(defaults['DATA_DIR']) / 'dataset.csv'),
        image_dir=config.image_dir or str(defaults['CACHE_DIR']),
        output_dir=config.output_dir or str(defaults['OUTPUT_DIR']),
    )


def load_config(path=None, **overrides) -> RunConfig:
    """RunConfig from a JSON file (or defaults), with ``overrides`` applied before validation."""
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"run config {path} must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    config = with_path_defaults(RunConfig.from_dict(data))
    logger.debug("run config %s", config.to_dict())
    return config
