"""Two-phase trainer: identification pretraining, then verification.

Pretraining bolts a temporary softmax head onto the embedding and trains
speaker classification; the head is discarded afterwards.  Verification
training re-mines triplets every step at the scheduled difficulty and
minimizes the cosine triplet loss.

Determinism contract: every random draw comes from a substream keyed by
(seed, phase, epoch, batch), never from carried generator state, so a
resumed run replays the exact arithmetic of an uninterrupted one.  With
batches sized 150 frames the filterbank graph would not fit comfortably
in memory, so its forward runs without a graph and gradients are
recomputed per unit-chunk at backward time (identical arithmetic, units
are independent).
"""

import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import nd
from .audio import FRAME_UNITS, read_wav, frames_from_buffer
from .embedder import EmbedConfig, embed_features, init_embedder_params
from .filterbank import FilterbankConfig, init_filterbank_params, unit_responses
from .io import read_manifest, utt_id
from .loss import TripletLossConfig, cosine_triplet_loss
from .mining import MiningConfig, build_batch, mine_triplets, tau_schedule
from .nd.tensor import _node
from .rand import stream, stream_seed

log = logging.getLogger(__name__)

CHUNK_UNITS = 2500  # filterbank recompute granularity (memory knob, not semantics)


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; parameters were rolled back to the last good epoch."""

    def __init__(self, message, phase, epoch):
        super().__init__(message)
        self.phase = phase
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 50
    verify_epochs: int = 800
    scale_factor: float = 1.0
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0
    batches_per_epoch: int = 0  # 0 -> max(1, round(n_frames / batch_size))

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd_momentum', got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.scale_factor < 0:
            raise ValueError("scale_factor must be >= 0")
        if self.pretrain_epochs < 0 or self.verify_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


def scaled_epochs(base, scale):
    """Epoch budget after scaling: 0 stays 0, anything else is at least 1."""
    if base <= 0 or scale <= 0:
        return 0
    return max(1, math.ceil(base * scale))


# ---- optimizers ----

class Adam:
    name = "adam"

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.data = p.data - np.asarray(self.lr, dtype=p.data.dtype) * update

    def state_blocks(self):
        blocks = {"opt/t": np.float32(self.t)}
        for name in self.params:
            blocks[f"opt/m/{name}"] = self.m[name]
            blocks[f"opt/v/{name}"] = self.v[name]
        return blocks

    def load_state_blocks(self, blocks):
        if "opt/t" not in blocks:
            raise ValueError("checkpoint does not hold adam optimizer state")
        self.t = int(blocks["opt/t"])
        for name in self.params:
            self.m[name] = blocks[f"opt/m/{name}"].astype(np.float32).reshape(self.m[name].shape)
            self.v[name] = blocks[f"opt/v/{name}"].astype(np.float32).reshape(self.v[name].shape)


class SGDMomentum:
    name = "sgd_momentum"

    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.vel = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.vel[name] = self.momentum * self.vel[name] + p.grad
            p.data = p.data - np.asarray(self.lr, dtype=p.data.dtype) * self.vel[name]

    def state_blocks(self):
        return {f"opt/vel/{name}": self.vel[name] for name in self.params}

    def load_state_blocks(self, blocks):
        for name in self.params:
            if f"opt/vel/{name}" not in blocks:
                raise ValueError("checkpoint does not hold sgd_momentum optimizer state")
            self.vel[name] = blocks[f"opt/vel/{name}"].astype(np.float32).reshape(self.vel[name].shape)


def make_optimizer(cfg, params):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate)
    return SGDMomentum(params, cfg.learning_rate, cfg.momentum)


# ---- model forward (with filterbank gradient checkpointing) ----

def _units_view(frames):
    b = frames.shape[0]
    unit_len = frames.shape[1]
    return np.ascontiguousarray(
        frames.transpose(0, 2, 1).reshape(b * FRAME_UNITS, 1, unit_len)
    )


def filterbank_features(frames, params, fb_cfg, grad=True):
    """frames: np float32 [B, 160, 200] -> Tensor [B, C, 200].

    Forward runs graph-free; if grad is requested the returned node
    recomputes each unit-chunk with a graph at backward time and
    backpropagates the matching gradient slice into the parameters.
    Units are processed identically either way, so values are bit-equal.
    """
    frames = np.asarray(frames, dtype=np.float32)
    b = frames.shape[0]
    units = _units_view(frames)
    n_units = units.shape[0]

    def run_chunks(build_graph, seed_grad=None):
        outs = []
        for lo in range(0, n_units, CHUNK_UNITS):
            hi = min(lo + CHUNK_UNITS, n_units)
            x = nd.Tensor(units[lo:hi])
            if build_graph:
                r = unit_responses(x, params, fb_cfg)
                r.backward(seed=seed_grad[lo:hi], release=True)
            else:
                with nd.no_grad():
                    outs.append(unit_responses(x, params, fb_cfg).data)
        return outs

    values = np.concatenate(run_chunks(build_graph=False))  # [B*200, C]

    if grad and any(p.requires_grad for p in params.values()):
        parents = tuple(p for k, p in sorted(params.items()) if k.startswith("fb."))

        def backward(g):
            run_chunks(build_graph=True, seed_grad=np.ascontiguousarray(g))

        node = _node(values, "filterbank_checkpoint", parents, backward)
    else:
        node = nd.Tensor(values)
    node = nd.reshape(node, (b, FRAME_UNITS, fb_cfg.output_channels))
    return nd.transpose(node, (0, 2, 1))


def forward_embeddings(frames, params, fb_cfg, emb_cfg, training=False, step_seed=0,
                       grad=True):
    """frames [B, 160, 200] -> embedding Tensor [B, D]."""
    feats = filterbank_features(frames, params, fb_cfg, grad=grad)
    return embed_features(feats, params, emb_cfg, training=training, step_seed=step_seed)


def embed_frames_batched(frames, params, fb_cfg, emb_cfg, batch=64):
    """Inference-only embeddings as np [N, D], memory-bounded."""
    outs = []
    with nd.no_grad():
        for lo in range(0, frames.shape[0], batch):
            emb = forward_embeddings(frames[lo : lo + batch], params, fb_cfg, emb_cfg,
                                     training=False, grad=False)
            outs.append(emb.data.copy())
    return np.concatenate(outs) if outs else np.zeros((0, emb_cfg.embedding_dim), np.float32)


# ---- checkpoints ----

PHASE_CODES = {"id": 0.0, "ver": 1.0}


def _layer_block(spec):
    return np.array([spec.in_channels, spec.out_channels, spec.kernel_size,
                     spec.dilation, spec.stride, 1.0 if spec.bias else 0.0],
                    dtype=np.float32)


def _spec_from_block(block):
    vals = [int(v) for v in block]
    return nd.ConvSpec(vals[0], vals[1], vals[2], dilation=vals[3], stride=vals[4],
                       bias=bool(vals[5]))


def save_checkpoint(path, params, head, optimizer, phase, epoch, fb_cfg=None, emb_cfg=None):
    blocks = {"meta/phase": np.float32(PHASE_CODES[phase]), "meta/epoch": np.float32(epoch)}
    if fb_cfg is not None:
        for i, spec in enumerate(fb_cfg.layers):
            blocks[f"cfg/fb/l{i}"] = _layer_block(spec)
        blocks["cfg/fb/unit_length"] = np.float32(fb_cfg.unit_length)
    if emb_cfg is not None:
        for i, spec in enumerate(emb_cfg.layers):
            blocks[f"cfg/emb/l{i}"] = _layer_block(spec)
        blocks["cfg/emb/dim"] = np.float32(emb_cfg.embedding_dim)
        blocks["cfg/emb/dropout"] = np.float32(emb_cfg.dropout_p)
    for name, p in params.items():
        blocks[f"param/{name}"] = p.data
    for name, p in (head or {}).items():
        blocks[f"head/{name}"] = p.data
    if optimizer is not None:
        blocks["meta/opt"] = np.float32(0.0 if optimizer.name == "adam" else 1.0)
        blocks.update(optimizer.state_blocks())
    nd.save_blocks(path, blocks)


def _collect_layers(blocks, prefix):
    layers = []
    for i in range(256):
        key = f"{prefix}/l{i}"
        if key not in blocks:
            break
        layers.append(_spec_from_block(blocks[key]))
    return tuple(layers)


def load_checkpoint(path):
    blocks = nd.load_blocks(path)
    phase = "id" if float(blocks["meta/phase"]) == 0.0 else "ver"
    epoch = int(blocks["meta/epoch"])
    params = {k[len("param/"):]: v for k, v in blocks.items() if k.startswith("param/")}
    head = {k[len("head/"):]: v for k, v in blocks.items() if k.startswith("head/")}
    opt_blocks = {k: v for k, v in blocks.items() if k.startswith("opt/")}
    fb_cfg = emb_cfg = None
    fb_layers = _collect_layers(blocks, "cfg/fb")
    if fb_layers:
        fb_cfg = FilterbankConfig(
            layers=fb_layers,
            unit_length=int(blocks["cfg/fb/unit_length"]),
            output_channels=fb_layers[-1].out_channels,
        )
    emb_layers = _collect_layers(blocks, "cfg/emb")
    if emb_layers:
        emb_cfg = EmbedConfig(
            layers=emb_layers,
            embedding_dim=int(blocks["cfg/emb/dim"]),
            dropout_p=float(blocks["cfg/emb/dropout"]),
        )
    return {"phase": phase, "epoch": epoch, "params": params, "head": head,
            "opt_blocks": opt_blocks, "fb_cfg": fb_cfg, "emb_cfg": emb_cfg}


def checkpoint_params_into(target, stored):
    for name, p in target.items():
        if name not in stored:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if tuple(stored[name].shape) != tuple(p.data.shape):
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {stored[name].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = stored[name].astype(np.float32).copy()


# ---- corpus loading ----

def load_corpus_frames(manifest_path, energy_floor_db=-30.0, min_segment_ms=100.0):
    """Manifest -> (frames float32 [N,160,200], subject labels, frame utterance ids)."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    frames, subjects, utts = [], [], []
    for rel, speaker, _dur in read_manifest(manifest_path):
        buf = read_wav(os.path.join(root, rel))
        for fr in frames_from_buffer(buf, source_id=speaker, utt_id=utt_id(rel),
                                     energy_floor_db=energy_floor_db,
                                     min_segment_ms=min_segment_ms):
            frames.append(fr.units.astype(np.float32))
            subjects.append(speaker)
            utts.append(utt_id(rel))
    if not frames:
        raise ValueError(f"no usable frames in corpus {manifest_path}")
    return np.stack(frames), subjects, utts


def group_by_subject(subjects):
    groups = {}
    for i, s in enumerate(subjects):
        groups.setdefault(s, []).append(i)
    return groups


# ---- training loops ----

def _log_line(lines, epoch, phase, loss, tau, mean_neg_sim, triplets):
    line = (f"epoch={epoch} phase={phase} loss={loss!r} tau={tau!r} "
            f"mean_neg_sim={mean_neg_sim!r} triplets={triplets}")
    lines.append(line)
    log.info("%s", line)
    return line


def _effective_mining(mining_cfg, groups):
    eligible = sum(1 for ids in groups.values() if len(ids) >= mining_cfg.samples_per_subject)
    if eligible < 2:
        raise ValueError(
            f"insufficient data: only {eligible} subject(s) have "
            f">= {mining_cfg.samples_per_subject} frames"
        )
    if eligible < mining_cfg.subjects_per_batch:
        log.warning("only %d eligible subjects; shrinking batch from %d subjects",
                    eligible, mining_cfg.subjects_per_batch)
        return replace(mining_cfg, subjects_per_batch=eligible)
    return mining_cfg


class _Phase:
    """Shared epoch/batch scaffolding for both phases."""

    def __init__(self, run, phase_name, epochs):
        self.run = run
        self.name = phase_name
        self.epochs = epochs

    def loop(self, start_epoch, step_fn, lines):
        run = self.run
        for epoch in range(start_epoch, self.epochs):
            snapshot = run.snapshot()
            tau = tau_schedule(epoch, run.mining_cfg) if self.name == "ver" else 0.0
            losses, sims, n_triplets = [], [], 0
            try:
                for b in range(run.batches_per_epoch):
                    batch_rng = stream(run.cfg.seed, self.name, epoch, b)
                    idx, labels = build_batch(run.groups, run.mining_cfg, batch_rng)
                    step_seed = stream_seed(run.cfg.seed, self.name, "step", epoch, b)
                    loss_val, sim, count = step_fn(epoch, b, idx, labels, tau, step_seed)
                    losses.append(loss_val)
                    if not math.isnan(sim):
                        sims.append(sim)
                    n_triplets += count
            except nd.NonFiniteError as err:
                run.restore(snapshot)
                if run.out_dir:
                    save_checkpoint(run.path("last_good.dvck"), run.params, run.head,
                                    run.optimizer, self.name, epoch,
                                    run.fb_cfg, run.emb_cfg)
                raise TrainingDiverged(
                    f"non-finite loss in phase {self.name} epoch {epoch + 1}: {err}; "
                    f"parameters rolled back to end of epoch {epoch}",
                    self.name, epoch,
                ) from err
            mean_loss = float(np.mean(losses))
            mean_sim = float(np.mean(sims)) if sims else float("nan")
            _log_line(lines, epoch + 1, self.name, mean_loss, tau, mean_sim, n_triplets)
            if run.out_dir:
                save_checkpoint(run.path("last.dvck"), run.params, run.head,
                                run.optimizer, self.name, epoch + 1,
                                run.fb_cfg, run.emb_cfg)


class TrainingRun:
    """Owns parameters, optimizer, data grouping, and checkpoint plumbing."""

    def __init__(self, frames, subjects, train_cfg=TrainConfig(),
                 fb_cfg=FilterbankConfig(), emb_cfg=EmbedConfig(),
                 mining_cfg=MiningConfig(), loss_cfg=TripletLossConfig(),
                 out_dir=None):
        self.frames = np.asarray(frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be [N, unit, {FRAME_UNITS}], got {self.frames.shape}")
        self.subjects = list(subjects)
        if len(self.subjects) != self.frames.shape[0]:
            raise ValueError("one subject label per frame required")
        self.cfg = train_cfg
        self.fb_cfg = fb_cfg
        self.emb_cfg = emb_cfg
        self.loss_cfg = loss_cfg
        self.out_dir = out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

        self.groups = group_by_subject(self.subjects)
        self.mining_cfg = _effective_mining(mining_cfg, self.groups)
        self.class_names = sorted(self.groups)
        self.class_index = {s: i for i, s in enumerate(self.class_names)}

        self.params = {}
        self.params.update(init_filterbank_params(fb_cfg, train_cfg.seed))
        self.params.update(init_embedder_params(emb_cfg, train_cfg.seed))
        self.head = self._init_head()
        self.optimizer = None

        n = self.frames.shape[0]
        self.batches_per_epoch = train_cfg.batches_per_epoch or max(
            1, round(n / self.mining_cfg.batch_size))

    def _init_head(self):
        rng = stream(self.cfg.seed, "init", "head")
        n_cls = len(self.class_names)
        dim = self.emb_cfg.embedding_dim
        w = rng.normal(0.0, dim**-0.5, (n_cls, dim)).astype(np.float32)
        return {"head.w": nd.Tensor(w, requires_grad=True),
                "head.b": nd.Tensor(np.zeros(n_cls, np.float32), requires_grad=True)}

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def snapshot(self):
        return {
            "params": {k: p.data.copy() for k, p in self.params.items()},
            "head": {k: p.data.copy() for k, p in self.head.items()},
            "opt": {k: v.copy() for k, v in (self.optimizer.state_blocks() if self.optimizer else {}).items()},
        }

    def restore(self, snap):
        for k, p in self.params.items():
            p.data = snap["params"][k]
        for k, p in self.head.items():
            p.data = snap["head"][k]
        if self.optimizer and snap["opt"]:
            self.optimizer.load_state_blocks(snap["opt"])

    # ---- phase steps ----

    def _id_step(self, epoch, b, idx, labels, tau, step_seed):
        nd.zero_grads(self.params)
        nd.zero_grads(self.head)
        emb = forward_embeddings(self.frames[idx], self.params, self.fb_cfg, self.emb_cfg,
                                 training=True, step_seed=step_seed)
        logits = nd.linear(emb, self.head["head.w"], self.head["head.b"])
        y = np.array([self.class_index[s] for s in labels], dtype=np.intp)
        loss = nd.softmax_cross_entropy(logits, y)
        value = loss.item()
        loss.backward(release=True)
        self.optimizer.step()
        return value, float("nan"), 0

    def _ver_step(self, epoch, b, idx, labels, tau, step_seed):
        nd.zero_grads(self.params)
        emb = forward_embeddings(self.frames[idx], self.params, self.fb_cfg, self.emb_cfg,
                                 training=True, step_seed=step_seed)
        triplets, mean_sim = mine_triplets(emb.data, labels, tau, return_similarity=True)
        if not triplets:
            raise ValueError("mining produced no triplets; batch has no usable subjects")
        a = nd.take_rows(emb, [t.anchor_idx for t in triplets])
        p = nd.take_rows(emb, [t.positive_idx for t in triplets])
        n = nd.take_rows(emb, [t.negative_idx for t in triplets])
        loss = cosine_triplet_loss(a, p, n, self.loss_cfg)
        value = loss.item()
        loss.backward(release=True)
        self.optimizer.step()
        return value, mean_sim, len(triplets)

    # ---- public API ----

    def pretrain(self, lines, start_epoch=0, opt_blocks=None):
        epochs = scaled_epochs(self.cfg.pretrain_epochs, self.cfg.scale_factor)
        if epochs == 0 or start_epoch >= epochs:
            return
        self.optimizer = make_optimizer(self.cfg, {**self.params, **self.head})
        if opt_blocks:
            self.optimizer.load_state_blocks(opt_blocks)
        _Phase(self, "id", epochs).loop(start_epoch, self._id_step, lines)
        if self.out_dir:
            save_checkpoint(self.path("pretrain.dvck"), self.params, self.head,
                            self.optimizer, "id", epochs, self.fb_cfg, self.emb_cfg)
        self.optimizer = None

    def train_verification(self, lines, start_epoch=0, opt_blocks=None):
        epochs = scaled_epochs(self.cfg.verify_epochs, self.cfg.scale_factor)
        if epochs == 0 or start_epoch >= epochs:
            return
        self.optimizer = make_optimizer(self.cfg, self.params)
        if opt_blocks:
            self.optimizer.load_state_blocks(opt_blocks)
        _Phase(self, "ver", epochs).loop(start_epoch, self._ver_step, lines)
        if self.out_dir:
            save_checkpoint(self.path("final.dvck"), self.params, None,
                            self.optimizer, "ver", epochs, self.fb_cfg, self.emb_cfg)
        self.optimizer = None

    def training_accuracy(self):
        """Classification accuracy of the current head over all frames."""
        emb = embed_frames_batched(self.frames, self.params, self.fb_cfg, self.emb_cfg)
        logits = emb @ self.head["head.w"].data.T + self.head["head.b"].data
        pred = logits.argmax(axis=1)
        truth = np.array([self.class_index[s] for s in self.subjects])
        return float((pred == truth).mean())

    def run(self, resume=None):
        """Full schedule (optionally resumed).  Returns the log lines."""
        lines = []
        if resume is None:
            self.pretrain(lines)
            self.train_verification(lines)
            return lines
        state = load_checkpoint(resume) if isinstance(resume, (str, os.PathLike)) else resume
        checkpoint_params_into(self.params, state["params"])
        if state["phase"] == "id":
            if state["head"]:
                checkpoint_params_into(self.head, state["head"])
            self.pretrain(lines, start_epoch=state["epoch"], opt_blocks=state["opt_blocks"])
            self.train_verification(lines)
        else:
            self.train_verification(lines, start_epoch=state["epoch"],
                                    opt_blocks=state["opt_blocks"])
        return lines
