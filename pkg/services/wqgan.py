"""
WQGAN Module - adversarial training of a quaternion generator against a clipped critic.

Each outer iteration runs n_critic critic updates (RMSProp on
mean f(real) - mean f(fake), then weight clipping) followed by one generator
update on -mean f(g(z)). Evaluation uses the exact empirical QWD from the qwd
module, raw-feature FID, and IS under the dataset's own classifier.
"""

import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

import storage
from services.errors import InvalidConfigError, NumericAbortError
from services.metrics import feature_extract, fid, inception_score
from services.qnn import (
    NetworkSpec, QNetwork, RMSPropState, Tape, backward, clip_params,
    conv_critic_spec, conv_generator_spec, lipschitz_upper_bound, mean, mlp_critic_spec,
    mlp_generator_spec, neg, rmsprop_step, sub,
)
from services.qwd import DiscreteDistribution, js_divergence, qwd_primal

logger = logging.getLogger(__name__)

DATASETS = ("gaussian-mixture-q", "two-moons-q", "swatch8")
SIGN_CONVENTIONS = ("dual", "literal")

MIXTURE_CENTER = np.array([0.5, 0.5, 0.5, 0.5])
MIXTURE_STD = 0.1
MOONS_NOISE = 0.05
SWATCH_SIDE = 8
SWATCH_NOISE = 0.05
SWATCH_PALETTE = np.array([
    [0.8, -0.6, -0.6],
    [-0.6, 0.8, -0.6],
    [-0.6, -0.6, 0.8],
    [0.7, 0.7, -0.5],
])


@dataclass
class TrainConfig:
    iters: int = 2000
    batch: int = 64
    lr: float = 0.0002
    clip: float = 0.01
    n_critic: int = 5
    seed: int = 0
    eval_every: int = 200
    dataset: str = "gaussian-mixture-q"
    noise_dim: int = 4
    eval_samples: int = 64
    hidden: int = 16
    channels: int = 4
    sign_convention: str = "dual"

    def __post_init__(self):
        positive = ("batch", "n_critic", "eval_every", "noise_dim", "hidden", "channels")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(f"{name} must be a positive integer.")
        if self.iters < 0:
            raise InvalidConfigError("iters must be nonnegative.")
        if self.eval_samples < 2:
            raise InvalidConfigError("eval_samples must be at least 2.")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise InvalidConfigError("lr must be positive.")
        if not (self.clip > 0 and np.isfinite(self.clip)):
            raise InvalidConfigError("clip must be positive.")
        if self.dataset not in DATASETS:
            raise InvalidConfigError(f"Unknown dataset {self.dataset!r}; choose from {', '.join(DATASETS)}.")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise InvalidConfigError(f"sign_convention must be one of {SIGN_CONVENTIONS}.")

    @classmethod
    def from_mapping(cls, mapping: Dict) -> "TrainConfig":
        """Build from a mapping, ignoring None values; unknown keys are rejected."""
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise InvalidConfigError(f"Unknown training option(s): {', '.join(unknown)}.")
        values = {}
        for key, value in mapping.items():
            if value is None:
                continue
            default = getattr(cls, key)
            try:
                converted = type(default)(value)
            except (TypeError, ValueError):
                raise InvalidConfigError(f"Option {key} has invalid value {value!r}.") from None
            # int("2") is fine, but 2.7 must not truncate to 2
            if isinstance(default, int) and (isinstance(value, bool) or float(value) != converted):
                raise InvalidConfigError(f"Option {key} must be an integer, got {value!r}.")
            values[key] = converted
        return cls(**values)

    def to_dict(self) -> Dict:
        return asdict(self)


# Datasets

@dataclass(frozen=True)
class SyntheticDataset:
    """
    Desk-scale quaternion datasets scaled into [-1, 1] per component.

    gaussian-mixture-q: two isotropic Gaussians at +-(0.5, 0.5, 0.5, 0.5), n = 1.
    two-moons-q: interleaved half circles in the (i, j) plane, n = 1.
    swatch8: 8x8 patches of one palette colour, RGB in (i, j, k), zero real part, n = 64.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in DATASETS:
            raise InvalidConfigError(f"Unknown dataset {self.kind!r}.")

    @property
    def dim(self) -> int:
        return SWATCH_SIDE * SWATCH_SIDE if self.kind == "swatch8" else 1

    @property
    def classes(self) -> int:
        return {"gaussian-mixture-q": 2, "two-moons-q": 2, "swatch8": len(SWATCH_PALETTE)}[self.kind]

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == "gaussian-mixture-q":
            signs = rng.choice([-1.0, 1.0], size=count)
            points = signs[:, None] * MIXTURE_CENTER + rng.normal(0.0, MIXTURE_STD, size=(count, 4))
            return np.clip(points, -1.0, 1.0)[:, None, :]
        if self.kind == "two-moons-q":
            labels = rng.integers(0, 2, size=count)
            t = rng.uniform(0.0, np.pi, size=count)
            u, v = _moon_curve(labels, t)
            points = np.zeros((count, 4))
            points[:, 1] = u + rng.normal(0.0, MOONS_NOISE, size=count)
            points[:, 2] = v + rng.normal(0.0, MOONS_NOISE, size=count)
            return np.clip(points, -1.0, 1.0)[:, None, :]
        colours = SWATCH_PALETTE[rng.integers(0, len(SWATCH_PALETTE), size=count)]
        pixels = colours[:, None, :] + rng.normal(0.0, SWATCH_NOISE, size=(count, self.dim, 3))
        patches = np.zeros((count, self.dim, 4))
        patches[:, :, 1:] = np.clip(pixels, -1.0, 1.0)
        return patches

    def classify(self, samples: np.ndarray) -> np.ndarray:
        """Class posteriors used as the IS classifier."""
        samples = np.asarray(samples, dtype=float)
        if self.kind == "gaussian-mixture-q":
            x = samples[:, 0, :]
            centers = np.stack([-MIXTURE_CENTER, MIXTURE_CENTER])
            d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=-1)
            return softmax(-d2 / (2 * MIXTURE_STD ** 2), axis=1)
        if self.kind == "two-moons-q":
            grid = np.linspace(0.0, np.pi, 200)
            d2 = []
            for label in (0, 1):
                u, v = _moon_curve(np.full(grid.size, label), grid)
                du = samples[:, 0, 1][:, None] - u[None]
                dv = samples[:, 0, 2][:, None] - v[None]
                d2.append((du * du + dv * dv).min(axis=1))
            return softmax(-np.stack(d2, axis=1) / (2 * MOONS_NOISE ** 2), axis=1)
        rgb = samples[:, :, 1:].mean(axis=1)
        d2 = ((rgb[:, None, :] - SWATCH_PALETTE[None]) ** 2).sum(axis=-1)
        return softmax(-d2 / (2 * 0.1 ** 2), axis=1)


def _moon_curve(labels: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = np.where(labels == 0, np.cos(t), 1.0 - np.cos(t))
    v = np.where(labels == 0, np.sin(t), 0.5 - np.sin(t))
    # recentre the moons into [-1, 1]
    return (u - 0.5) / 1.5, (v - 0.25) / 1.5


def make_dataset(kind: str) -> SyntheticDataset:
    return SyntheticDataset(kind)


def build_networks(config: TrainConfig, dataset: SyntheticDataset,
                   rng: np.random.Generator) -> Tuple[QNetwork, QNetwork]:
    if dataset.kind == "swatch8":
        gen_spec = conv_generator_spec(config.noise_dim, config.channels, SWATCH_SIDE)
        critic_spec = conv_critic_spec(config.channels, SWATCH_SIDE)
    else:
        gen_spec = mlp_generator_spec(config.noise_dim, config.hidden, dataset.dim)
        critic_spec = mlp_critic_spec(dataset.dim, config.hidden)
    return QNetwork.create(gen_spec, "generator", rng), QNetwork.create(critic_spec, "critic", rng)


# Training

@dataclass
class LoopCounters:
    critic_steps: int = 0
    generator_steps: int = 0
    critic_per_generator: List[int] = field(default_factory=list)
    max_critic_abs: float = 0.0


@dataclass
class TrainRecord:
    iteration: int
    critic_loss: float
    generator_loss: float
    qwd_exact: float
    fid: float
    is_score: float
    is_std: float
    critic_estimate: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainReport:
    config: TrainConfig
    records: List[TrainRecord] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    counters: LoopCounters = field(default_factory=LoopCounters)
    wall_clock: float = 0.0
    generator: Optional[QNetwork] = None
    critic: Optional[QNetwork] = None

    def jsonl_records(self) -> List[Dict]:
        return [r.to_dict() for r in self.records]


def _noise(rng: np.random.Generator, count: int, noise_dim: int) -> np.ndarray:
    return rng.standard_normal((count, noise_dim, 4))


def critic_loss_value(critic: QNetwork, real: np.ndarray, fake: np.ndarray) -> float:
    return float(critic(real).mean() - critic(fake).mean())


def _critic_step(critic: QNetwork, real: np.ndarray, fake: np.ndarray, state: RMSPropState,
                 ascend: bool, clip: float) -> float:
    tape = Tape()
    loss = sub(tape, mean(tape, critic.forward(tape, tape.constant(real))),
               mean(tape, critic.forward(tape, tape.constant(fake))))
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericAbortError(f"Critic loss became non-finite ({value}).")
    rmsprop_step(state, critic.params, backward(tape, loss), ascend=ascend)
    clip_params(critic.params, clip)
    return value


def _generator_step(generator: QNetwork, critic: QNetwork, z: np.ndarray,
                    state: RMSPropState, ascend: bool) -> float:
    tape = Tape()
    scores = critic.forward(tape, generator.forward(tape, tape.constant(z)))
    loss = neg(tape, mean(tape, scores))
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericAbortError(f"Generator loss became non-finite ({value}).")
    grads = backward(tape, loss)
    rmsprop_step(state, generator.params, {k: v for k, v in grads.items() if k in generator.params},
                 ascend=ascend)
    return value


def evaluate(iteration: int, generator: QNetwork, critic: QNetwork, dataset: SyntheticDataset,
             real_eval: np.ndarray, noise_eval: np.ndarray) -> TrainRecord:
    """Score the generator on the fixed evaluation batch."""
    fake = generator(noise_eval)
    if not np.all(np.isfinite(fake)):
        raise NumericAbortError(f"Generator produced non-finite samples at iteration {iteration}.")
    critic_loss = critic_loss_value(critic, real_eval, fake)
    _, exact = qwd_primal(DiscreteDistribution.empirical(real_eval), DiscreteDistribution.empirical(fake))
    splits = min(10, fake.shape[0])
    is_mean, is_std = inception_score(fake, dataset.classify, splits)
    record = TrainRecord(
        iteration=iteration,
        critic_loss=critic_loss,
        generator_loss=-float(critic(fake).mean()),
        qwd_exact=exact,
        fid=fid(feature_extract(real_eval), feature_extract(fake)),
        is_score=is_mean,
        is_std=is_std,
        critic_estimate=critic_loss / lipschitz_upper_bound(critic),
    )
    for name in ("critic_loss", "generator_loss", "qwd_exact", "fid", "is_score", "critic_estimate"):
        if not np.isfinite(getattr(record, name)):
            raise NumericAbortError(f"Evaluation produced non-finite {name} at iteration {iteration}.")
    return record


def checkpoint_payload(config: TrainConfig, iteration: int, generator: QNetwork, critic: QNetwork) -> Dict:
    return {
        "format_version": storage.FORMAT_VERSION,
        "dataset": config.dataset,
        "noise_dim": config.noise_dim,
        "iteration": iteration,
        "seed": config.seed,
        "networks": {"generator": generator.to_dict(), "critic": critic.to_dict()},
    }


def train(config: TrainConfig, out_dir: Optional[str] = None,
          on_record: Optional[Callable[[TrainRecord], None]] = None) -> TrainReport:
    """
    Run the adversarial loop.

    Args:
        config: validated training configuration
        out_dir: where checkpoints and the JSON-lines report go (nothing is written when None)
        on_record: called with every evaluation record as it is produced

    Returns:
        TrainReport: records at iteration 0 (when iters > 0), every eval_every
        iterations and at the last iteration
    """
    started = time.perf_counter()
    init_seq, data_seq, noise_seq, eval_seq = np.random.SeedSequence(config.seed).spawn(4)
    data_rng = np.random.default_rng(data_seq)
    noise_rng = np.random.default_rng(noise_seq)
    eval_rng = np.random.default_rng(eval_seq)

    dataset = make_dataset(config.dataset)
    generator, critic = build_networks(config, dataset, np.random.default_rng(init_seq))
    clip_params(critic.params, config.clip)
    critic_state = RMSPropState(lr=config.lr)
    generator_state = RMSPropState(lr=config.lr)
    critic_ascends = config.sign_convention == "dual"

    real_eval = dataset.sample(eval_rng, config.eval_samples)
    noise_eval = _noise(eval_rng, config.eval_samples, config.noise_dim)
    report = TrainReport(config=config, generator=generator, critic=critic)
    counters = report.counters
    counters.max_critic_abs = critic.max_abs_param()

    def save(iteration: int, name: str) -> None:
        if out_dir is None:
            return
        path = os.path.join(out_dir, name)
        storage.save_checkpoint(path, checkpoint_payload(config, iteration, generator, critic))
        report.checkpoints.append(path)

    def emit(iteration: int) -> None:
        record = evaluate(iteration, generator, critic, dataset, real_eval, noise_eval)
        report.records.append(record)
        logger.info("iter %d: qwd %.5f fid %.5f is %.4f critic %.3e",
                    iteration, record.qwd_exact, record.fid, record.is_score, record.critic_loss)
        if on_record is not None:
            on_record(record)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    if config.iters > 0:
        emit(0)
    save(0, storage.checkpoint_name(0))

    for iteration in range(1, config.iters + 1):
        steps = 0
        for _ in range(config.n_critic):
            real = dataset.sample(data_rng, config.batch)
            fake = generator(_noise(noise_rng, config.batch, config.noise_dim))
            try:
                _critic_step(critic, real, fake, critic_state, critic_ascends, config.clip)
            except NumericAbortError as exc:
                raise NumericAbortError(f"Iteration {iteration}: {exc}") from None
            counters.critic_steps += 1
            counters.max_critic_abs = max(counters.max_critic_abs, critic.max_abs_param())
            steps += 1
        z = _noise(noise_rng, config.batch, config.noise_dim)
        try:
            _generator_step(generator, critic, z, generator_state, not critic_ascends)
        except NumericAbortError as exc:
            raise NumericAbortError(f"Iteration {iteration}: {exc}") from None
        counters.generator_steps += 1
        counters.critic_per_generator.append(steps)

        if iteration % config.eval_every == 0 or iteration == config.iters:
            emit(iteration)
            save(iteration, storage.checkpoint_name(iteration))

    if config.iters > 0:
        save(config.iters, storage.FINAL_CHECKPOINT)
    if out_dir is not None and config.iters > 0:
        storage.write_jsonl(os.path.join(out_dir, storage.REPORT_FILE), report.jsonl_records())
    report.wall_clock = time.perf_counter() - started
    logger.info("Training finished: %d iterations in %.2fs", config.iters, report.wall_clock)
    return report


# Checkpoint consumers

def restore_networks(checkpoint: Dict) -> Tuple[QNetwork, QNetwork]:
    storage.check_checkpoint_version(checkpoint)
    networks = checkpoint["networks"]
    return (QNetwork.from_dict(networks["generator"], "generator"),
            QNetwork.from_dict(networks["critic"], "critic"))


def sample_generator(checkpoint: Dict, count: int, seed: int) -> np.ndarray:
    """
    Deterministic generator samples.

    Returns:
        np.ndarray: shape (count, dim, 4)
    """
    generator, _ = restore_networks(checkpoint)
    if int(checkpoint["noise_dim"]) != generator.spec.input_shape[0]:
        raise InvalidConfigError("Checkpoint noise_dim does not match the generator input.")
    dim = generator.spec.output_shape[0]
    if count <= 0:
        return np.zeros((0, dim, 4))
    rng = np.random.default_rng(seed)
    return generator(_noise(rng, count, int(checkpoint["noise_dim"])))


def critic_as_potential(checkpoint, real_samples, fake_samples) -> float:
    """mean f(real) - mean f(fake) for the checkpoint's critic (a QNetwork or checkpoint dict)."""
    critic = checkpoint if isinstance(checkpoint, QNetwork) else restore_networks(checkpoint)[1]
    return critic_loss_value(critic, np.asarray(real_samples, dtype=float), np.asarray(fake_samples, dtype=float))


@dataclass
class PotentialTrace:
    step: int
    estimate: float
    normalized: float
    exact: float

    @property
    def ratio(self) -> float:
        return self.normalized / self.exact if self.exact > 0 else 0.0


def fit_critic(real_samples, fake_samples, spec: Optional[NetworkSpec] = None, steps: int = 200,
               lr: float = 0.01, clip: float = 0.01, seed: int = 0, every: int = 20) -> List[PotentialTrace]:
    """
    Train only the critic against fixed sample sets and track its potential.

    The normalized estimate divides by the critic's Lipschitz upper bound, so it
    never exceeds the exact empirical QWD.
    """
    real = np.asarray(real_samples, dtype=float)
    fake = np.asarray(fake_samples, dtype=float)
    if spec is None:
        spec = mlp_critic_spec(real.shape[1], 8)
    critic = QNetwork.create(spec, "critic", np.random.default_rng(seed))
    clip_params(critic.params, clip)
    _, exact = qwd_primal(DiscreteDistribution.empirical(real), DiscreteDistribution.empirical(fake))
    state = RMSPropState(lr=lr)
    trace = []
    for step in range(steps + 1):
        if step % every == 0 or step == steps:
            estimate = critic_loss_value(critic, real, fake)
            trace.append(PotentialTrace(step, estimate, estimate / lipschitz_upper_bound(critic), exact))
        if step < steps:
            _critic_step(critic, real, fake, state, True, clip)
    return trace


def js_contrast_sweep(offsets: Sequence[float] = tuple(np.linspace(0.1, 1.0, 10))) -> List[Dict]:
    """
    JS against exact QWD for a point mass at 0 and one shifted along the real axis.

    Supports stay disjoint for every positive offset, so JS stays at log 2 while
    QWD equals the offset.
    """
    origin = DiscreteDistribution.create(np.zeros((1, 1, 4)), [1.0])
    rows = []
    for offset in offsets:
        shifted = DiscreteDistribution.create(np.array([[[float(offset), 0.0, 0.0, 0.0]]]), [1.0])
        _, value = qwd_primal(origin, shifted)
        rows.append({"offset": float(offset), "js": js_divergence(origin, shifted), "qwd": value})
    return rows
