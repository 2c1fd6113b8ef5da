import enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings
from app.services.ga_core import AlgebraSignature, Multivector


class TransformKind(str, enum.Enum):
    ROTATION = "rotation"
    REFLECTION = "reflection"


class ModelKind(str, enum.Enum):
    SPINOR = "spinor"
    VECTOR = "vector"


# Word transformations
class TransformSpec(BaseModel):
    """A rotation (plane + angle) or a reflection (axis). Unit checks happen in ``spinor``."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: TransformKind
    plane: Optional[Multivector] = None
    axis: Optional[Multivector] = None
    angle: float = 0.0

    @model_validator(mode="after")
    def check_operand(self) -> "TransformSpec":
        if self.kind == TransformKind.ROTATION and self.plane is None:
            raise ValueError("rotation needs a plane")
        if self.kind == TransformKind.REFLECTION and self.axis is None:
            raise ValueError("reflection needs an axis")
        return self

    @classmethod
    def rotation(cls, plane: Multivector, angle: float) -> "TransformSpec":
        return cls(kind=TransformKind.ROTATION, plane=plane, angle=angle)

    @classmethod
    def reflection(cls, axis: Multivector) -> "TransformSpec":
        return cls(kind=TransformKind.REFLECTION, axis=axis)


class PositionalConfig(BaseModel):
    """Planes are 1-based basis index pairs, e.g. (1, 2) for e12."""

    model_config = ConfigDict(frozen=True)

    planes: List[Tuple[int, int]] = Field(default_factory=list)
    base_frequency: float = Field(default_factory=lambda: settings.POSITIONAL_BASE_FREQUENCY, gt=0)
    frequency_decay: float = Field(default_factory=lambda: settings.POSITIONAL_DECAY, gt=0, le=1)

    @field_validator("planes")
    @classmethod
    def disjoint_planes(cls, planes: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        seen = set()
        for i, j in planes:
            if not 1 <= i < j:
                raise ValueError(f"plane ({i}, {j}) must satisfy 1 <= i < j")
            if i in seen or j in seen:
                raise ValueError(f"plane ({i}, {j}) shares an index with another plane")
            seen.update((i, j))
        return planes


# Training
class TrainConfig(BaseModel):
    seed: int = 0
    learning_rate: float = Field(default=0.3, gt=0)
    epochs: int = Field(default=30, ge=0)
    batch: int = Field(default=8, ge=2)
    p: int = Field(default=3, ge=0)
    q: int = Field(default=0, ge=0)
    heads: int = Field(default=1, ge=1)
    hidden: int = Field(default_factory=lambda: settings.FFW_HIDDEN, ge=1)
    init_scale: float = Field(default_factory=lambda: settings.INIT_SCALE, ge=0)
    grad_clip: float = Field(default_factory=lambda: settings.GRAD_CLIP, gt=0)

    @property
    def signature(self) -> AlgebraSignature:
        return AlgebraSignature(self.p, self.q)


class EpochReport(BaseModel):
    epoch: int
    train_perplexity: float
    validation_perplexity: float


class AblationRow(BaseModel):
    signature: str
    p: int
    q: int
    parameters: int
    final_validation_perplexity: float
    seconds: float


class AnalogyReport(BaseModel):
    accuracy: float
    loss: float
    iterations: int
    rotor: List[float]


class OrbitRow(BaseModel):
    step: int
    angle_deg: float
    one_sided_sign: int
    two_sided_identity: bool


# Persistence
class SignatureFile(BaseModel):
    p: int
    q: int


class HeadFile(BaseModel):
    """Row-major flattened maps; vector models reshape them to square matrices."""

    query: List[float]
    key: List[float]
    value: List[float]


class FeedForwardFile(BaseModel):
    w1: List[List[float]]
    b1: List[float]
    w2: List[List[float]]
    b2: List[float]


class AttentionFile(BaseModel):
    heads: List[HeadFile]
    ffw: FeedForwardFile


class MetadataFile(BaseModel):
    seed: int
    epochs: int
    window: int = Field(default=8, ge=2)


class ModelFile(BaseModel):
    format_version: int
    kind: ModelKind = ModelKind.SPINOR
    signature: SignatureFile
    vocab: List[str]
    generators: List[List[float]]
    positional: PositionalConfig
    attention: AttentionFile
    metadata: MetadataFile


class ProjectionRow(BaseModel):
    token: str
    x: float
    y: float
