"""Run configuration: hyperparameters, presets, and the key=value file format.

Field defaults mirror the full-scale training recipe; the ``desk`` preset
shrinks images and network widths so a complete run fits on a laptop CPU.
Config files are flat ``key = value`` lines; CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


def _tuple_field(*vals):
    return field(default_factory=lambda: tuple(vals))


@dataclass
class Config:
    # slot autoencoder
    num_slots: int = 5
    slot_size: int = 128  # 16 categoricals x 8 classes
    categoricals: int = 16
    classes: int = 8
    slot_attention_iterations: int = 4
    encoder_channels: tuple = _tuple_field(32, 64, 128, 128)
    decoder_channels: tuple = _tuple_field(64, 64, 64, 32)

    # transformer dynamics model
    transformer_embedding_size: int = 256
    transformer_layers: int = 10
    transformer_heads: int = 4
    transformer_feedforward_size: int = 1024
    latent_predictor_units: tuple = _tuple_field(512, 512, 512, 512)
    reward_predictor_units: tuple = _tuple_field(256, 256, 256, 256)
    discount_predictor_units: tuple = _tuple_field(256, 256, 256, 256)

    # causal policy and value networks
    causal_embedding_size: int = 256
    causal_layers: int = 10
    causal_heads: int = 4
    causal_feedforward_size: int = 512
    causal_predictor_units: tuple = _tuple_field(512, 512)

    # world model learning
    world_model_batch_size: int = 64
    history_length: int = 16
    discount_factor: float = 0.99
    coef_entropy: float = 5.0    # alpha_1, weight of the entropy term
    coef_cross: float = 0.03     # alpha_2, weight of the cross term
    coef_reward: float = 10.0    # beta_1, weight of the reward NLL
    coef_discount: float = 50.0  # beta_2, weight of the discount NLL
    world_model_lr: float = 1e-4

    # policy and value learning
    imagination_batch_size: int = 400
    imagination_horizon: int = 15
    policy_lr: float = 1e-4
    critic_lr: float = 1e-5
    gae_lambda: float = 0.95
    entropy_bonus: float = 1e-3

    # environment interaction
    environment_steps: int = 100_000
    image_size: int = 64
    action_repeat: int = 1
    max_episode_length: int = 100
    task: str = "object_goal"
    num_distractors: int = 3
    replay_capacity: int = 100_000

    # training loop mechanics
    seed: int = 0
    update_every: int = 1  # env steps per gradient step
    warmup_steps: int = 1000
    eval_every: int = 2000
    eval_episodes: int = 10
    checkpoint_every: int = 2000
    out_dir: str = "runs/default"

    # ablation flags
    no_causal_attention: bool = False
    no_background_removal: bool = False
    mlp_heads: bool = False
    mlp_head_units: tuple = _tuple_field(512, 512, 512)

    def validate(self):
        if self.slot_size != self.categoricals * self.classes:
            raise ValueError("slot_size must equal categoricals * classes")
        for name in ("num_slots", "image_size", "history_length", "imagination_horizon",
                     "world_model_batch_size", "imagination_batch_size",
                     "max_episode_length", "environment_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.transformer_embedding_size % self.transformer_heads:
            raise ValueError("embedding size must divide evenly into heads")
        if self.causal_embedding_size % self.causal_heads:
            raise ValueError("causal embedding size must divide evenly into heads")
        return self

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs).validate()

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _parse_value(field_type, raw, current):
    raw = raw.strip()
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw.replace("_", ""))
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(x) for x in raw.replace("(", "").replace(")", "").split(",") if x.strip())
    return raw


def load_config_file(path, base=None):
    """Parse flat ``key = value`` lines over a base config."""
    cfg = base or Config()
    values = dataclasses.asdict(cfg)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in values:
                raise KeyError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(None, raw, values[key])
    return Config.from_dict(values)


def save_config_file(path, cfg):
    with open(path, "w", encoding="utf-8") as f:
        for k, v in cfg.to_dict().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            f.write(f"{k} = {v}\n")


# -- presets -----------------------------------------------------------------

def paper_preset(**overrides):
    """Full-scale configuration (the published hyperparameter table)."""
    return Config().replace(**overrides).validate()


def desk_preset(**overrides):
    """Laptop-scale configuration used by the acceptance suite.

    32x32 observations, 128-wide transformers with 4 layers, imagination
    batch 64, 20K env steps. Widths, batch shapes, learning rates and the
    update cadence are re-tuned for the smaller budget.
    """
    cfg = Config(
        encoder_channels=(16, 32, 64),
        decoder_channels=(32, 32, 16),
        transformer_embedding_size=128,
        transformer_layers=4,
        transformer_heads=4,
        transformer_feedforward_size=256,
        latent_predictor_units=(256, 256),
        reward_predictor_units=(128, 128),
        discount_predictor_units=(128, 128),
        causal_embedding_size=128,
        causal_layers=4,
        causal_heads=4,
        causal_feedforward_size=256,
        causal_predictor_units=(128, 128),
        world_model_batch_size=16,
        history_length=8,
        world_model_lr=3e-4,
        imagination_batch_size=64,
        imagination_horizon=15,
        policy_lr=3e-4,
        critic_lr=3e-4,
        entropy_bonus=3e-3,
        environment_steps=20_000,
        image_size=32,
        replay_capacity=20_000,
        update_every=10,
        warmup_steps=1000,
        eval_every=2000,
        checkpoint_every=5000,
    )
    return cfg.replace(**overrides).validate()


PRESETS = {"paper": paper_preset, "desk": desk_preset}
