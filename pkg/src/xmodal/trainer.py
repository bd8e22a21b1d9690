"""Joint optimization of the text and image encoders with mined triplet terms.

The feature maps are fixed inputs (the backbone stays frozen at this scale),
so Weldon signatures are pooled once per image and cached; each step encodes
captions with dropout, mines the hardest negatives, backpropagates the
active hinge terms by hand and applies an Adam update. Everything is
deterministic given the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .corpus import Manifest, PairBatch, load_features, make_batches
from .embeddings import WordSpace
from .errors import TrainingError
from .image_encoder import (
    FeatureMap,
    ImageEncoderParams,
    default_k,
    encode_image_backward,
    encode_image_forward,
    encode_signature_backward,
    encode_signature_forward,
    init_image_encoder,
    weldon_pool,
)
from .loss import DEFAULT_MARGIN, mine_batch, mining_backward, triplet_loss
from .text_encoder import (
    TextEncoderParams,
    encode_backward,
    encode_forward,
    init_text_encoder,
    resolve_tokens,
)

STAGES = ("rnn_fc", "finetune_all")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Run hyperparameters.

    With precomputed feature maps both stages optimize the same parameter
    set (there is no backbone left to unfreeze); the stage tag is validated
    and recorded in checkpoints for provenance.
    """

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 2e-4
    lr_halving_epochs: int = 10
    margin: float = DEFAULT_MARGIN
    dropout: float = 0.25
    seed: int = 0
    stage: str = "rnn_fc"
    languages: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise TrainingError(
                f"batch_size must be >= 2 (mining sets would be empty), got {self.batch_size}"
            )
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_halving_epochs < 1:
            raise TrainingError("lr_halving_epochs must be >= 1")
        if self.margin <= 0:
            raise TrainingError(f"margin must be positive, got {self.margin}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.stage not in STAGES:
            raise TrainingError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.languages is not None:
            self.languages = tuple(self.languages)


@dataclass
class ModelDims:
    hidden_dim: int = 64
    joint_dim: int = 64
    k_pos: int | None = None  # None: max(1, H*W // 10) from the first feature map
    k_neg: int | None = None


@dataclass
class JointModel:
    text: TextEncoderParams
    image: ImageEncoderParams


def init_joint_model(
    embed_dim: int,
    channels: int,
    grid: tuple[int, int],
    dims: ModelDims,
    seed: int,
    dropout: float = 0.25,
) -> JointModel:
    rng = np.random.default_rng([seed, 3])
    k_pos = dims.k_pos if dims.k_pos is not None else default_k(*grid)
    k_neg = dims.k_neg if dims.k_neg is not None else default_k(*grid)
    return JointModel(
        text=init_text_encoder(embed_dim, dims.hidden_dim, dims.joint_dim, rng, dropout),
        image=init_image_encoder(channels, dims.joint_dim, rng, k_pos=k_pos, k_neg=k_neg),
    )


def named_parameters(model: JointModel) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i, layer in enumerate(model.text.layers):
        params[f"text.layer{i}.w_in"] = layer.w_in
        params[f"text.layer{i}.w_f"] = layer.w_f
        params[f"text.layer{i}.b_f"] = layer.b_f
        params[f"text.layer{i}.w_r"] = layer.w_r
        params[f"text.layer{i}.b_r"] = layer.b_r
    params["text.proj_w"] = model.text.proj_w
    params["text.proj_b"] = model.text.proj_b
    params["image.proj_w"] = model.image.proj_w
    params["image.proj_b"] = model.image.proj_b
    return params


def _zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _accumulate_text_grads(acc: dict[str, np.ndarray], grads: dict) -> None:
    for i in range(4):
        for key, val in grads[i].items():
            acc[f"text.layer{i}.{key}"] += val
    acc["text.proj_w"] += grads["proj_w"]
    acc["text.proj_b"] += grads["proj_b"]


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


@dataclass
class TrainResult:
    model: JointModel
    config: TrainConfig
    loss_curve: list[float]
    checkpoint_paths: list[Path] = field(default_factory=list)


def _step(
    model: JointModel,
    space: WordSpace,
    batch: PairBatch,
    signatures: dict[str, np.ndarray],
    alpha: float,
    rng_dropout: np.random.Generator,
    params: dict[str, np.ndarray],
    adam: Adam,
    lr: float,
) -> float:
    image_ids, img_slot = batch.image_slots()
    img_caches = []
    img_rows = []
    for iid in image_ids:
        out, cache = encode_signature_forward(signatures[iid], model.image)
        img_rows.append(out)
        img_caches.append(cache)
    img_embs = np.array(img_rows)

    cap_caches = []
    cap_rows = []
    for entry in batch.entries:
        vectors = resolve_tokens(entry.caption, space)
        out, cache = encode_forward(vectors, model.text, train=True, rng=rng_dropout)
        cap_rows.append(out)
        cap_caches.append(cache)
    cap_embs = np.array(cap_rows)

    total, terms = mine_batch(cap_embs, img_embs, img_slot, alpha)
    d_cap, d_img = mining_backward(terms, cap_embs, img_embs, img_slot)

    grads = _zero_grads(params)
    for a in range(len(batch)):
        if d_cap[a].any():
            text_grads, _ = encode_backward(cap_caches[a], d_cap[a])
            _accumulate_text_grads(grads, text_grads)
    for m in range(len(image_ids)):
        if d_img[m].any():
            img_grads, _ = encode_signature_backward(img_caches[m], d_img[m])
            grads["image.proj_w"] += img_grads["proj_w"]
            grads["image.proj_b"] += img_grads["proj_b"]

    adam.step(params, grads, lr)
    return total


def train(
    manifest: Manifest,
    space: WordSpace,
    config: TrainConfig,
    model: JointModel | None = None,
    dims: ModelDims | None = None,
    features: dict[str, FeatureMap] | None = None,
    out_dir=None,
    extra_config: dict | None = None,
) -> TrainResult:
    """Run the full schedule; returns the model and the per-epoch mean batch loss.

    A checkpoint is written after every epoch when out_dir is given. Aborts
    with diagnostics when the loss goes non-finite.
    """
    if len(manifest) < 2:
        raise TrainingError(f"corpus has {len(manifest)} images; need at least 2")
    if features is None:
        features = load_features(manifest)
    first = next(iter(features.values()))
    if model is None:
        model = init_joint_model(
            embed_dim=space.dim,
            channels=first.channels,
            grid=first.grid,
            dims=dims or ModelDims(),
            seed=config.seed,
            dropout=config.dropout,
        )
    model.text.dropout = config.dropout

    signatures = {
        iid: weldon_pool(fm, model.image.k_pos, model.image.k_neg)
        for iid, fm in features.items()
    }
    params = named_parameters(model)
    adam = Adam(params)
    rng_dropout = np.random.default_rng([config.seed, 7])

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    loss_curve: list[float] = []
    checkpoint_paths: list[Path] = []
    for epoch in range(config.epochs):
        lr = config.learning_rate * 0.5 ** (epoch // config.lr_halving_epochs)
        batches = make_batches(
            manifest,
            features,
            config.batch_size,
            seed=[config.seed, 1000 + epoch],
            languages=config.languages,
        )
        epoch_losses = []
        for bidx, batch in enumerate(batches):
            value = _step(
                model, space, batch, signatures, config.margin, rng_dropout, params, adam, lr
            )
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value!r} at epoch {epoch}, batch {bidx} "
                    f"(lr={lr:g}, batch_size={len(batch)})"
                )
            epoch_losses.append(value)
        loss_curve.append(float(np.mean(epoch_losses)))
        if out_path is not None:
            ckpt = out_path / f"checkpoint_epoch_{epoch:03d}.json"
            save_checkpoint(ckpt, model, config, epoch, loss_curve, extra_config)
            checkpoint_paths.append(ckpt)

    if out_path is not None:
        final = out_path / "checkpoint.json"
        save_checkpoint(final, model, config, config.epochs - 1, loss_curve, extra_config)
        checkpoint_paths.append(final)
    return TrainResult(model=model, config=config, loss_curve=loss_curve,
                       checkpoint_paths=checkpoint_paths)


# --- checkpoint serialization ---------------------------------------------


def save_checkpoint(
    path,
    model: JointModel,
    config: TrainConfig,
    epoch: int,
    loss_curve: list[float],
    extra_config: dict | None = None,
) -> None:
    params = named_parameters(model)
    payload = {
        "format": "xmodal-checkpoint-v1",
        "config": asdict(config),
        "seed": config.seed,
        "epoch": epoch,
        "loss_curve": list(loss_curve),
        "dims": {
            "embed_dim": model.text.embed_dim,
            "hidden_dim": model.text.hidden_dim,
            "joint_dim": model.text.joint_dim,
            "channels": model.image.channels,
            "k_pos": model.image.k_pos,
            "k_neg": model.image.k_neg,
            "dropout": model.text.dropout,
        },
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.items()
        },
    }
    if extra_config:
        payload["data"] = extra_config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


@dataclass
class Checkpoint:
    model: JointModel
    config: TrainConfig
    epoch: int
    loss_curve: list[float]
    data: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "xmodal-checkpoint-v1":
        raise TrainingError(f"{path}: not a recognized checkpoint file")
    dims = payload["dims"]

    def tensor(name):
        entry = payload["params"][name]
        return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])

    from .text_encoder import SruLayerParams  # local import avoids cycle at module load

    layers = [
        SruLayerParams(
            w_in=tensor(f"text.layer{i}.w_in"),
            w_f=tensor(f"text.layer{i}.w_f"),
            b_f=tensor(f"text.layer{i}.b_f"),
            w_r=tensor(f"text.layer{i}.w_r"),
            b_r=tensor(f"text.layer{i}.b_r"),
        )
        for i in range(4)
    ]
    model = JointModel(
        text=TextEncoderParams(
            layers=layers,
            proj_w=tensor("text.proj_w"),
            proj_b=tensor("text.proj_b"),
            dropout=dims.get("dropout", 0.25),
        ),
        image=ImageEncoderParams(
            k_pos=dims["k_pos"],
            k_neg=dims["k_neg"],
            proj_w=tensor("image.proj_w"),
            proj_b=tensor("image.proj_b"),
        ),
    )
    cfg_dict = dict(payload["config"])
    if cfg_dict.get("languages") is not None:
        cfg_dict["languages"] = tuple(cfg_dict["languages"])
    config = TrainConfig(**cfg_dict)
    return Checkpoint(
        model=model,
        config=config,
        epoch=payload["epoch"],
        loss_curve=list(payload["loss_curve"]),
        data=payload.get("data", {}),
    )


# --- gradient checking ------------------------------------------------------


@dataclass
class GradCheckReport:
    component: str
    tolerance: float
    max_rel_err: float
    n_checked: int
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.component}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tolerance:g}, {self.n_checked} values, worst at {self.worst})"
        )


FD_STEP = 1e-5


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def _fd_on_arrays(
    arrays: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eval_scalar,
    h: float = FD_STEP,
) -> tuple[float, int, str]:
    """Central finite differences over every element of every array."""
    max_err, n_checked, worst = 0.0, 0, "-"
    for name, arr in arrays.items():
        grad = analytic[name]
        flat = arr.ravel()
        gflat = np.asarray(grad).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_scalar()
            flat[i] = orig - h
            f_minus = eval_scalar()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = _rel_err(float(gflat[i]), numeric)
            n_checked += 1
            if err > max_err:
                max_err, worst = err, f"{name}[{i}]"
    return max_err, n_checked, worst


def _check_loss(seed: int, tolerance: float) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    alpha = DEFAULT_MARGIN
    while True:
        x, y, z = (v / np.linalg.norm(v) for v in rng.standard_normal((3, 6)))
        if alpha - x @ y + x @ z > 1e-3:  # active hinge away from the kink
            break
    arrays = {"x": x, "y": y, "z": z}
    analytic = {"x": z - y, "y": -x, "z": x.copy()}
    err, n, worst = _fd_on_arrays(arrays, analytic, lambda: triplet_loss(x, y, z, alpha))
    return GradCheckReport("loss", tolerance, err, n, worst)


def _check_text(seed: int, tolerance: float) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    params = init_text_encoder(embed_dim=4, hidden_dim=5, joint_dim=4, rng=rng)
    vectors = rng.standard_normal((3, 4))
    target = rng.standard_normal(4)
    target /= np.linalg.norm(target)

    out, cache = encode_forward(vectors, params)
    grads, _ = encode_backward(cache, target)

    named = {}
    analytic = {}
    for i, layer in enumerate(params.layers):
        for key in ("w_in", "w_f", "b_f", "w_r", "b_r"):
            named[f"layer{i}.{key}"] = getattr(layer, key)
            analytic[f"layer{i}.{key}"] = grads[i][key]
    named["proj_w"], analytic["proj_w"] = params.proj_w, grads["proj_w"]
    named["proj_b"], analytic["proj_b"] = params.proj_b, grads["proj_b"]

    def scalar():
        v, _ = encode_forward(vectors, params)
        return float(v @ target)

    err, n, worst = _fd_on_arrays(named, analytic, scalar)
    return GradCheckReport("text", tolerance, err, n, worst)


def _check_image(seed: int, tolerance: float) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    params = init_image_encoder(channels=4, joint_dim=4, rng=rng, k_pos=2, k_neg=2)
    fm_data = rng.standard_normal((4, 3, 3))  # random reals: top-k ties have measure zero
    target = rng.standard_normal(4)
    target /= np.linalg.norm(target)

    fm = FeatureMap(fm_data)
    out, cache = encode_image_forward(fm, params)
    grads, d_fm = encode_image_backward(cache, target)

    named = {"proj_w": params.proj_w, "proj_b": params.proj_b, "fm": fm_data}
    analytic = {"proj_w": grads["proj_w"], "proj_b": grads["proj_b"], "fm": d_fm}

    def scalar():
        v, _ = encode_image_forward(FeatureMap(fm_data), params)
        return float(v @ target)

    err, n, worst = _fd_on_arrays(named, analytic, scalar)
    return GradCheckReport("image", tolerance, err, n, worst)


def _composed_instance(seed: int):
    """A tiny batch whose mined selections are strict and hinges strictly active,
    so the composed objective is locally smooth."""
    from .embeddings import EmbeddingTable

    for attempt in range(64):
        rng = np.random.default_rng([seed, attempt])
        embed_dim, hidden, joint, channels = 4, 5, 4, 4
        vocab = {f"t{i}": i for i in range(6)}
        matrix = rng.standard_normal((6, embed_dim))
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
        table = EmbeddingTable(lang="xx", dim=embed_dim, vocab=vocab, matrix=matrix)
        space = WordSpace(pivot="xx", tables={"xx": table})

        rngp = np.random.default_rng([seed, 100 + attempt])
        model = JointModel(
            text=init_text_encoder(embed_dim, hidden, joint, rngp),
            image=init_image_encoder(channels, joint, rngp, k_pos=2, k_neg=2),
        )
        fms = [FeatureMap(rngp.standard_normal((channels, 3, 3))) for _ in range(3)]
        from .text_encoder import TokenSequence

        captions = [
            TokenSequence("xx", ("t0", "t1")),
            TokenSequence("xx", ("t2", "t3", "t4")),
            TokenSequence("xx", ("t5", "t0")),
            TokenSequence("xx", ("t1", "t4")),
        ]
        image_of_entry = [0, 1, 2, 0]  # image 0 carries two captions

        def batch_value():
            img_embs = np.array([encode_image_forward(fm, model.image)[0] for fm in fms])
            cap_embs = np.array(
                [encode_forward(resolve_tokens(c, space), model.text)[0] for c in captions]
            )
            return mine_batch(cap_embs, img_embs, np.array(image_of_entry), DEFAULT_MARGIN)

        total, terms = batch_value()
        img_embs = np.array([encode_image_forward(fm, model.image)[0] for fm in fms])
        cap_embs = np.array(
            [encode_forward(resolve_tokens(c, space), model.text)[0] for c in captions]
        )
        slots = np.array(image_of_entry)
        stable = all(t.value > 1e-3 for t in terms)
        if stable:
            # selections must be strict maxima so small perturbations keep them
            sim = img_embs @ cap_embs.T
            for t in terms:
                a, slot_a = t.anchor, slots[t.anchor]
                if t.kind == "caption_negative":
                    cand = np.where(slots != slot_a, sim[slot_a], -np.inf)
                else:
                    cand = np.where(np.arange(3) != slot_a, sim[:, a], -np.inf)
                top = np.sort(cand)[-2:]
                if np.isfinite(top[0]) and top[1] - top[0] < 1e-3:
                    stable = False
                    break
        if stable:
            return model, space, fms, captions, slots
    raise TrainingError("could not build a stable composed gradient-check instance")


def _check_composed(seed: int, tolerance: float) -> GradCheckReport:
    model, space, fms, captions, slots = _composed_instance(seed)
    params = named_parameters(model)

    def scalar():
        img_caches, img_rows = [], []
        for fm in fms:
            out, cache = encode_image_forward(fm, model.image)
            img_rows.append(out)
            img_caches.append(cache)
        cap_caches, cap_rows = [], []
        for c in captions:
            out, cache = encode_forward(resolve_tokens(c, space), model.text)
            cap_rows.append(out)
            cap_caches.append(cache)
        total, terms = mine_batch(np.array(cap_rows), np.array(img_rows), slots, DEFAULT_MARGIN)
        return total, terms, img_caches, cap_caches, np.array(cap_rows), np.array(img_rows)

    total, terms, img_caches, cap_caches, cap_embs, img_embs = scalar()
    d_cap, d_img = mining_backward(terms, cap_embs, img_embs, slots)
    grads = _zero_grads(params)
    for a in range(len(captions)):
        if d_cap[a].any():
            text_grads, _ = encode_backward(cap_caches[a], d_cap[a])
            _accumulate_text_grads(grads, text_grads)
    for m in range(len(fms)):
        if d_img[m].any():
            img_grads, d_fm = encode_image_backward(img_caches[m], d_img[m])
            grads["image.proj_w"] += img_grads["proj_w"]
            grads["image.proj_b"] += img_grads["proj_b"]

    err, n, worst = _fd_on_arrays(params, grads, lambda: scalar()[0])
    return GradCheckReport("composed", tolerance, err, n, worst)


def gradient_check(component: str, tolerance: float | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences (float64).

    Components: "loss" (hinge at an active non-kink point, default tol 1e-6),
    "text" and "image" (full encoder paths with a cosine readout) and
    "composed" (batch objective through mining and both encoders), default
    tol 1e-4.
    """
    checks = {
        "loss": (_check_loss, 1e-6),
        "text": (_check_text, 1e-4),
        "image": (_check_image, 1e-4),
        "composed": (_check_composed, 1e-4),
    }
    if component not in checks:
        raise TrainingError(f"unknown component {component!r}; pick from {sorted(checks)}")
    fn, default_tol = checks[component]
    return fn(seed, tolerance if tolerance is not None else default_tol)
