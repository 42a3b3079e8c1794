# normunit/models/experiment.py
"""
Experiment file schema.

Every block forbids unknown keys so that a typo fails validation with its
field path instead of silently falling back to a default.
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

SCHEMA_VERSION = 1

NORMALIZER_TIERS = ('10min', '1hr', '10hr')


def tier_splits(tier):
    """Manifest splits making up a normalizer tier; tiers nest by union."""
    position = NORMALIZER_TIERS.index(tier)
    return [f"norm-{name}" for name in NORMALIZER_TIERS[:position + 1]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid')


class IntRange(StrictModel):
    min: int
    max: int


class FloatRange(StrictModel):
    min: float
    max: float


class SizesConfig(StrictModel):
    """Utterance (or pair) counts per split."""

    norm_10min: int = Field(40, ge=1)
    norm_1hr: int = Field(150, ge=1)
    norm_10hr: int = Field(600, ge=1)
    norm_dev: int = Field(60, ge=1)
    train: int = Field(2000, ge=1)
    mined: int = Field(3000, ge=0)
    dev: int = Field(100, ge=1)
    test: int = Field(100, ge=1)
    xspk: int = Field(400, ge=1)


class MinedConfig(StrictModel):
    """Simulated mining: score = base - penalty * misaligned + N(0, noise^2), clipped to range."""

    misalignment_rate: float = Field(0.3, ge=0.0, le=1.0)
    score_base: float = 1.08
    score_penalty: float = Field(0.04, ge=0.0)
    score_noise: float = Field(0.01, ge=0.0)
    score_range: FloatRange = FloatRange(min=1.0, max=1.2)


class WorldConfig(StrictModel):
    seed: int = 0
    vocab_size: int = Field(50, ge=10)
    inventory_size: int = Field(24, ge=20)
    onset_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    word_length: IntRange = IntRange(min=3, max=6)
    sentence_words: IntRange = IntRange(min=3, max=6)
    feature_dim: int = Field(16, ge=2)
    prototype_scale: float = Field(2.0, gt=0.0)
    min_separation: float = Field(4.0, gt=0.0)
    base_duration: IntRange = IntRange(min=2, max=5)
    speakers_per_language: int = Field(8, ge=2)
    speaker_embedding_dim: int = Field(4, ge=1)
    speaker_offset_scale: float = Field(0.25, ge=0.0)
    accent_fraction: FloatRange = FloatRange(min=0.1, max=0.3)
    accent_probability: FloatRange = FloatRange(min=0.3, max=0.6)
    duration_jitter: FloatRange = FloatRange(min=0.1, max=0.3)
    silence_rate: FloatRange = FloatRange(min=0.1, max=0.3)
    silence_length: IntRange = IntRange(min=3, max=8)
    noise_sigma: FloatRange = FloatRange(min=0.15, max=0.45)
    sizes: SizesConfig = SizesConfig()
    mined: MinedConfig = MinedConfig()


class CodebookConfig(StrictModel):
    k: int = Field(100, ge=2)
    tolerance: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(100, ge=1)
    sample_frames: int = Field(20000, ge=1)


class RecipeConfig(StrictModel):
    """Optimizer schedule shared by the training blocks."""

    peak_lr: float = Field(5e-4, gt=0.0)
    warmup_steps: int = Field(200, ge=1)
    decay_half_life: int = Field(2000, ge=1)
    batch_size: int = Field(8, ge=1)


class NormalizerConfig(StrictModel):
    language: Literal['src', 'tgt'] = 'tgt'
    tier: Literal['10min', '1hr', '10hr'] = '1hr'
    width: int = Field(64, ge=2)
    heads: int = Field(4, ge=1)
    depth: int = Field(4, ge=1)
    ffn: int = Field(128, ge=1)
    kernel_size: int = Field(3, ge=1)
    stride: int = Field(1, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    total_updates: int = Field(2500, ge=1)
    frozen_updates: int = Field(1000, ge=0)
    pretrain_steps: int = Field(500, ge=0)
    mask_probability: float = Field(0.05, ge=0.0, le=1.0)
    mask_span: int = Field(3, ge=1)
    eval_every: int = Field(250, ge=1)
    recipe: RecipeConfig = RecipeConfig()

    @model_validator(mode='before')
    @classmethod
    def drop_derived(cls, data):
        if isinstance(data, dict) and 'tier_splits' in data:
            data = {key: value for key, value in data.items() if key != 'tier_splits'}
        return data

    @computed_field
    @property
    def tier_splits(self) -> List[str]:
        return tier_splits(self.tier)


class S2utConfig(StrictModel):
    target: Literal['orig', 'norm'] = 'norm'
    aux_weight: float = Field(8.0, ge=0.0)
    aux_layer: int = Field(2, ge=1)
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)
    speaker_fusion: bool = False
    width: int = Field(64, ge=2)
    heads: int = Field(4, ge=1)
    encoder_layers: int = Field(3, ge=1)
    decoder_layers: int = Field(3, ge=1)
    aux_decoder_layers: int = Field(2, ge=1)
    ffn: int = Field(256, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    steps: int = Field(20000, ge=1)
    eval_every: int = Field(1000, ge=1)
    dev_limit: int = Field(50, ge=1)
    beam: int = Field(5, ge=1)
    recipe: RecipeConfig = RecipeConfig(peak_lr=5e-4, warmup_steps=800, decay_half_life=5000, batch_size=16)


class DurationConfig(StrictModel):
    width: int = Field(64, ge=1)
    kernel_size: int = Field(3, ge=1)
    steps: int = Field(2000, ge=1)
    weight: float = Field(1.0, gt=0.0)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    recipe: RecipeConfig = RecipeConfig(peak_lr=1e-3, warmup_steps=100, decay_half_life=1000, batch_size=16)


class DataConfig(StrictModel):
    use_mined: bool = False
    threshold: float = 1.06


class EvalConfig(StrictModel):
    seeds: List[int] = Field(default_factory=list)
    thresholds: List[float] = Field(default_factory=lambda: [1.0, 1.04, 1.06, 1.08, 1.1])
    parallel_sweep: bool = False
    proxy_level: Literal['unit', 'word'] = 'word'


class ExperimentConfig(StrictModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    world: WorldConfig = WorldConfig()
    codebook: CodebookConfig = CodebookConfig()
    normalizer: NormalizerConfig = NormalizerConfig()
    s2ut: S2utConfig = S2utConfig()
    duration: DurationConfig = DurationConfig()
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()
    notes: Optional[str] = None

    def run_seeds(self):
        return list(self.eval.seeds) or [self.seed]

    def to_dict(self):
        return self.model_dump(mode='json')
