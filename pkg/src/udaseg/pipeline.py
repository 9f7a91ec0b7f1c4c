"""Hybrid self-training loop.

One step, in order:

1. style-transfer the source images;
2. fuse original and transferred source (none / CNN / efficient);
3. supervised loss on the fused images against the source labels;
4. teacher pseudo-labels on the target images and their quality weight;
5. per-pixel target weights (boundary-boosted when PRW is on);
6. weighted pseudo-label loss on the target images;
7. backward through the student (and the fusion conv);
8. AdamW step;
9. EMA update of the teacher.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, data, grid, metrics
from .config import RunConfig
from .errors import ConfigError, NumericError
from .fusion import cnn_fuse, cnn_fuse_backward, efficient_fuse, init_fusion_conv
from .model import OptimState, SegNet, optimizer_step
from .superpixel import prw_boundary, regional_weight_map
from .teacher import TeacherState, ema_update, pseudo_label, quality_scalar
from .transfer import transfer

log = logging.getLogger(__name__)

LOSS_HEADER = ["step", "L_S_mix", "L_T_adj", "L_total", "lr"]

# stream ids for per-step seeds
_SHUFFLE, _TRANSFER, _AUG_SRC, _AUG_TGT = 0, 1, 2, 3


@dataclass
class TrainState:
    student: dict
    opt: OptimState
    teacher: TeacherState
    fusion: dict | None = None
    step: int = 0
    history: list = field(default_factory=list)


@dataclass
class StepLosses:
    L_S_mix: float
    L_T_adj: float
    L_total: float


def _check_finite(value: float, term: str, step: int) -> None:
    if not np.isfinite(value):
        raise NumericError(f"step {step}: loss term {term} is not finite ({value})")


class Trainer:
    """Owns the datasets, network and PRW cache for one run."""

    def __init__(self, cfg: RunConfig, source: data.DomainDataset, target: data.DomainDataset,
                 target_eval: data.DomainDataset | None = None):
        if source.labels is None:
            raise ConfigError("source dataset needs labels")
        self.cfg = cfg
        self.source = source
        self.target = target
        self.target_eval = target_eval
        self.net = SegNet(cfg.net)
        self._boundary_cache: dict[int, np.ndarray] = {}

    # -- setup -----------------------------------------------------------------

    def init_state(self) -> TrainState:
        cfg = self.cfg
        student = self.net.init_params(cfg.seed, np.float32)
        fusion = None
        encoder_names = frozenset()
        if cfg.fusion_variant == "cnn":
            fusion = init_fusion_conv(cfg.net.input_channels, np.float32)
            encoder_names = frozenset(fusion)
        o = cfg.optim
        opt = OptimState(
            lr_encoder=o.lr_encoder, lr_decoder=o.lr_decoder, weight_decay=o.weight_decay,
            warmup_steps=o.warmup_steps, total_steps=cfg.total_steps,
            beta1=o.beta1, beta2=o.beta2, eps=o.eps, encoder_names=encoder_names,
        )
        teacher = TeacherState.from_student(student, cfg.ema_alpha)
        return TrainState(student, opt, teacher, fusion, 0, [])

    def batch_indices(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        """Seeded epoch-wise shuffling, independent per domain."""
        b = self.cfg.per_domain_batch
        out = []
        for domain, n in ((0, len(self.source)), (1, len(self.target))):
            idx = []
            for j in range(b):
                pos = step * b + j
                epoch, off = divmod(pos, n)
                perm = np.random.default_rng([self.cfg.seed, _SHUFFLE, domain, epoch]).permutation(n)
                idx.append(int(perm[off]))
            out.append(np.array(idx))
        return out[0], out[1]

    def boundary(self, i: int) -> np.ndarray:
        mb = self._boundary_cache.get(i)
        if mb is None:
            mb = prw_boundary(self.target.images[i], self.cfg.prw, self.cfg.seed)
            self._boundary_cache[i] = mb
        return mb

    # -- one step ----------------------------------------------------------------

    def _seed(self, step: int, stream: int, i: int):
        return [self.cfg.seed, stream, step, i]

    def _augment(self, x, seed):
        a = self.cfg.augment
        if not a.enabled:
            return x
        return data.augment(x, seed, a.jitter, a.blur_prob, (a.sigma_min, a.sigma_max))

    def train_step(self, state: TrainState, src_idx, tgt_idx) -> StepLosses:
        cfg = self.cfg
        net = self.net
        step = state.step

        # 1-2: transfer and fuse the source images
        xs, xsts = [], []
        for j, i in enumerate(src_idx):
            x_s = self.source.images[i]
            x_st = transfer(cfg.transfer, x_s, self.target.images, self._seed(step, _TRANSFER, j),
                            self.source.stems[i], cfg.precomputed_dir)
            aseed = self._seed(step, _AUG_SRC, j)
            xs.append(self._augment(x_s, aseed))
            xsts.append(self._augment(x_st, aseed))
        fuse_cache = None
        if cfg.fusion_variant == "efficient":
            x_mix = np.stack([
                efficient_fuse(net, state.student, a, b, cfg.fusion)[0] for a, b in zip(xs, xsts)
            ])
        elif cfg.fusion_variant == "cnn":
            x_mix, fuse_cache = cnn_fuse(state.fusion, np.stack(xs), np.stack(xsts))
        else:
            x_mix = np.stack(xs)
        y_s = np.stack([self.source.labels[i] for i in src_idx])

        # 3: source loss
        logits_s, cache_s = net.forward(state.student, x_mix)
        loss_s, g_s = grid.weighted_cross_entropy(
            grid.softmax_channels(logits_s), y_s, np.ones(y_s.shape, dtype=np.float32)
        )
        _check_finite(loss_s, "L_S_mix", step)
        grads, g_in = net.backward(state.student, cache_s, g_s, input_grad=fuse_cache is not None)

        # 4-6: target loss
        loss_t = 0.0
        if cfg.target_loss_weight > 0:
            x_t = np.stack([self.target.images[i] for i in tgt_idx])
            y_t, p_t = pseudo_label(net, state.teacher, x_t)
            weights = []
            for j, i in enumerate(tgt_idx):
                w_base = quality_scalar(p_t[j], cfg.quality_threshold)
                if cfg.prw_enabled:
                    weights.append(regional_weight_map(w_base, self.boundary(i), cfg.prw.beta))
                else:
                    weights.append(np.full(y_t.shape[1:], w_base))
            w_t = cfg.target_loss_weight * np.stack(weights)
            x_t_student = np.stack([
                self._augment(x, self._seed(step, _AUG_TGT, j)) for j, x in enumerate(x_t)
            ])
            logits_t, cache_t = net.forward(state.student, x_t_student)
            loss_t, g_t = grid.weighted_cross_entropy(grid.softmax_channels(logits_t), y_t, w_t)
            _check_finite(loss_t, "L_T_adj", step)
            grads_t, _ = net.backward(state.student, cache_t, g_t, input_grad=False)
            for k in grads:
                grads[k] = grads[k] + grads_t[k]

        # 7-8: backward into the fusion conv, optimizer step
        all_params = dict(state.student)
        if fuse_cache is not None:
            fgrads, _, _ = cnn_fuse_backward(state.fusion, fuse_cache, g_in)
            grads.update(fgrads)
            all_params.update(state.fusion)
        new = optimizer_step(state.opt, all_params, grads)
        state.student = {k: new[k] for k in state.student}
        if state.fusion is not None:
            state.fusion = {k: new[k] for k in state.fusion}

        # 9: EMA
        state.teacher = ema_update(state.teacher, state.student)
        state.step += 1
        total = loss_s + loss_t
        _check_finite(total, "L_total", step)
        return StepLosses(loss_s, loss_t, total)

    # -- evaluation ----------------------------------------------------------------

    def evaluate(self, params: dict, dataset: data.DomainDataset | None = None, batch: int = 16):
        ds = dataset if dataset is not None else self.target_eval
        if ds is None or ds.labels is None:
            raise ConfigError("evaluation needs a labelled target split")
        cm = metrics.new_confusion(self.cfg.net.classes)
        for s in range(0, len(ds), batch):
            x = np.stack(ds.images[s : s + batch])
            logits, _ = self.net.forward(params, x)
            cm = metrics.accumulate(cm, grid.argmax_labels(logits), np.stack(ds.labels[s : s + batch]))
        return cm, metrics.iou_f1(cm)


# --- persistence ----------------------------------------------------------------


def save_state(path, state: TrainState, cfg: RunConfig) -> None:
    tensors = {}
    tensors.update(checkpoint.prefixed(state.student, "student"))
    tensors.update(checkpoint.prefixed(state.teacher.params, "teacher"))
    if state.fusion is not None:
        tensors.update(checkpoint.prefixed(state.fusion, "fusion"))
    tensors.update(checkpoint.prefixed(state.opt.m, "adam_m"))
    tensors.update(checkpoint.prefixed(state.opt.v, "adam_v"))
    cfg_dict = cfg.to_dict()
    cfg_dict.pop("output_dir")
    meta = {
        "step": state.step,
        "opt_step": state.opt.step,
        "teacher_alpha": state.teacher.alpha,
        "teacher_steps_seen": state.teacher.steps_seen,
        "config": cfg_dict,
    }
    checkpoint.save(path, tensors, meta)


def load_state(path, trainer: Trainer) -> TrainState:
    tensors, meta = checkpoint.load(path)
    state = trainer.init_state()
    state.student = checkpoint.unprefixed(tensors, "student")
    state.teacher = TeacherState(checkpoint.unprefixed(tensors, "teacher"), meta["teacher_alpha"],
                                 meta["teacher_steps_seen"])
    fusion = checkpoint.unprefixed(tensors, "fusion")
    state.fusion = fusion or None
    state.opt.m = checkpoint.unprefixed(tensors, "adam_m")
    state.opt.v = checkpoint.unprefixed(tensors, "adam_v")
    state.opt.step = meta["opt_step"]
    state.step = meta["step"]
    return state


def load_params(path, which: str = "teacher") -> dict:
    """Network parameters from a training checkpoint or a bare parameter file."""
    tensors, _ = checkpoint.load(path)
    params = checkpoint.unprefixed(tensors, which)
    return params or tensors


# --- datasets ---------------------------------------------------------------------


def resolve_datasets(cfg: RunConfig):
    d = cfg.data
    if d.root is None:
        return data.generate_synthetic_pair(d.seed, d.classes, d.n_images, d.size, d.n_eval)
    return data.load_source(d.root), data.load_target_train(d.root), data.load_target_eval(d.root)


# --- full run ---------------------------------------------------------------------


@dataclass
class RunResult:
    state: TrainState
    report: metrics.SegReport
    confusion: np.ndarray
    output_dir: Path
    eval_history: list


def _format(x: float) -> str:
    return repr(float(x))


def train(cfg: RunConfig, datasets=None, resume_from=None, stop_after: int | None = None,
          figures: bool = True) -> RunResult:
    """Run the loop to ``cfg.total_steps`` (or ``stop_after``) and write artifacts.

    Writes to ``cfg.output_dir``: ``checkpoint.bin``, ``loss.csv``,
    ``metrics.csv``, ``eval_history.csv`` and, with ``figures``, PNG plots.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    source, target, target_eval = datasets if datasets is not None else resolve_datasets(cfg)
    trainer = Trainer(cfg, source, target, target_eval)
    state = load_state(resume_from, trainer) if resume_from else trainer.init_state()
    end = cfg.total_steps if stop_after is None else min(stop_after, cfg.total_steps)

    loss_path = out / "loss.csv"
    rows = []
    if resume_from and loss_path.is_file():
        with loss_path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh)][1:]
        rows = [r for r in rows if int(r[0]) < state.step]
    eval_history = []
    try:
        while state.step < end:
            si, ti = trainer.batch_indices(state.step)
            step = state.step
            losses = trainer.train_step(state, si, ti)
            lr = state.opt.lr_for("head.w", state.opt.step)
            rows.append([str(step), _format(losses.L_S_mix), _format(losses.L_T_adj),
                         _format(losses.L_total), _format(lr)])
            state.history.append(losses)
            if cfg.eval_interval and state.step % cfg.eval_interval == 0 and target_eval is not None:
                _, rep = trainer.evaluate(state.teacher.params)
                eval_history.append((state.step, rep.miou, rep.mf1))
                log.info("step %d: target mIoU %.4f", state.step, rep.miou)
            if cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
                save_state(out / f"checkpoint_{state.step:06d}.bin", state, cfg)
    finally:
        with loss_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOSS_HEADER)
            w.writerows(rows)
    save_state(out / "checkpoint.bin", state, cfg)

    cm, report = trainer.evaluate(state.teacher.params)
    metrics.write_report(out / "metrics.csv", report)
    with (out / "eval_history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "miou", "mf1"])
        w.writerows([[s, _format(a), _format(b)] for s, a, b in eval_history])
    if figures:
        from . import plotting

        plotting.plot_losses(loss_path, out / "loss.png")
        plotting.plot_class_scores(report, out / "metrics.png")
    return RunResult(state, report, cm, out, eval_history)


def read_loss_csv(path) -> list[list[float]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return [[float(v) for v in r] for r in rows[1:]]
