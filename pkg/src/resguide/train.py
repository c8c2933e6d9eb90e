"""Deep-supervised training and per-block evaluation."""

from __future__ import annotations

import datetime as _dt
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import Tape, Variable, backward, zero_grads
from .config import RunConfig
from .data import (DataError, PatchSampler, add_gaussian_noise, derive_seed, load_corpus,
                   sample_patches, split_corpus)
from .losses import total_loss
from .metrics import SsimConfig, format_psnr, psnr, ssim
from .model import ResGuideModel, forward, infer, save
from .optim import RMSProp

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Raised when the training loss stops being finite."""


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RESGUIDE_THREADS", "1")))
    except ValueError:
        return 1


def log_header(m: int) -> str:
    return ",".join(["iter", "L_total", *[f"L_B{k}" for k in range(1, m + 1)], "L_merge", "clamp_events"])


@dataclass
class TrainState:
    model: ResGuideModel
    optimizer: RMSProp
    history: list = field(default_factory=list)


def train_model(cfg: RunConfig, pairs: Sequence[tuple], *, model: Optional[ResGuideModel] = None,
                on_iteration: Optional[Callable[[int, list, int], None]] = None,
                on_checkpoint: Optional[Callable[[int, ResGuideModel], None]] = None) -> TrainState:
    """Run ``cfg.iterations`` RMSProp steps on random aligned patches from ``pairs``.

    ``history`` collects ``[total, L_B1..L_BM, L_merge]`` per iteration.
    """
    if model is None:
        model = ResGuideModel.initialized(cfg.model_config(), cfg.seed, cfg.precision)
    params = model.variables()
    opt = RMSProp(params, lr=cfg.schedule(), rho=cfg.rho, eps=cfg.eps)
    sampler = PatchSampler(cfg.patch_size, seed=cfg.seed)
    loss_cfg = cfg.loss_config()
    state = TrainState(model, opt)
    for it in range(cfg.iterations):
        rainy, clean, _ = sample_patches(pairs, sampler, cfg.batch_size)
        with Tape():
            res = forward(Variable(rainy), model)
            terms = total_loss(res.reconstructions, res.merged, clean, loss_cfg)
        values = terms.values()
        if not all(math.isfinite(v) for v in values):
            raise NumericError(f"non-finite loss at iteration {it}: {values}")
        backward(terms.total)
        if not opt.step():
            log.warning("iteration %d: non-finite gradient, update skipped", it)
        zero_grads(params)
        state.history.append(values)
        if on_iteration is not None:
            on_iteration(it, values, terms.clamp_events)
        if on_checkpoint is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(it + 1, model)
    return state


def degraded_pairs(cfg: RunConfig, pairs: Sequence[tuple], indices: Sequence[int]) -> list[tuple]:
    """Training/eval pairs; in denoising mode the rainy image is replaced by a noisy clean one."""
    out = []
    for i in indices:
        rainy, clean = pairs[i]
        if cfg.noise_sigma > 0:
            rainy = add_gaussian_noise(clean, cfg.noise_sigma, derive_seed(cfg.seed, i))
        out.append((rainy, clean))
    return out


@dataclass
class EvalRow:
    image: str
    block: str
    ssim: float
    psnr: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    input_ssim: float
    input_psnr: float

    def mean(self, block: str) -> tuple[float, float]:
        sel = [r for r in self.rows if r.block == block]
        if not sel:
            raise KeyError(block)
        return float(np.mean([r.ssim for r in sel])), float(np.mean([r.psnr for r in sel]))

    @property
    def blocks(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.block not in seen:
                seen.append(r.block)
        return seen

    def to_csv(self) -> str:
        lines = ["image,block,ssim,psnr"]
        for r in self.rows:
            lines.append(f"{r.image},{r.block},{r.ssim:.6f},{format_psnr(r.psnr)}")
        lines.append(f"# mean,input,{self.input_ssim:.6f},{format_psnr(self.input_psnr)}")
        for b in self.blocks:
            s, p = self.mean(b)
            lines.append(f"# mean,{b},{s:.6f},{format_psnr(p)}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> list[EvalRow]:
    rows = []
    for line in text.splitlines()[1:]:
        if not line or line.startswith("#"):
            continue
        image, block, s, p = line.split(",")
        rows.append(EvalRow(image, block, float(s), float(p)))
    return rows


def evaluate(model: ResGuideModel, pairs: Sequence[tuple], names: Sequence[str], per_block: bool = True,
             k_max: Optional[int] = None, ssim_cfg: SsimConfig = SsimConfig()) -> EvalReport:
    """SSIM/PSNR of clamped outputs against the clean images.

    With ``per_block`` every block output is scored in addition to the final
    (merged when all blocks run) output.
    """
    m = model.config.blocks
    k = m if k_max is None else k_max

    def score(idx):
        rainy, clean = pairs[idx]
        out = infer(model, rainy, k)
        rows = []
        if per_block:
            for b, y in enumerate(out["blocks"], 1):
                rows.append(EvalRow(names[idx], str(b), ssim(y, clean, ssim_cfg), psnr(y, clean)))
        if out["merged"] is not None:
            y = out["merged"]
            rows.append(EvalRow(names[idx], "merged", ssim(y, clean, ssim_cfg), psnr(y, clean)))
        elif not per_block:
            y = out["blocks"][-1]
            rows.append(EvalRow(names[idx], str(k), ssim(y, clean, ssim_cfg), psnr(y, clean)))
        return rows, ssim(rainy, clean, ssim_cfg), psnr(rainy, clean)

    workers = min(worker_count(), max(1, len(pairs)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(score, range(len(pairs))))
    else:
        results = [score(i) for i in range(len(pairs))]
    rows = [r for res in results for r in res[0]]
    in_s = float(np.mean([res[1] for res in results])) if results else float("nan")
    in_p = float(np.mean([res[2] for res in results])) if results else float("nan")
    return EvalReport(rows, in_s, in_p)


@dataclass
class TrainResult:
    model: ResGuideModel
    report: EvalReport
    history: list
    out_dir: Path


def run_training(cfg: RunConfig, data_dir, out_dir) -> TrainResult:
    """The ``train`` command: corpus in, checkpoints, log and held-out report out."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs, names, missing = load_corpus(data_dir, cfg.precision)
    for name in missing:
        log.warning("pair %s is missing from %s; skipped", name, data_dir)
    if not pairs:
        raise DataError(f"no usable pairs in {data_dir}")
    train_idx, test_idx = split_corpus(len(pairs), cfg.train_fraction)
    if not train_idx:
        raise DataError("training split is empty")
    (out_dir / "config.txt").write_text(cfg.dumps(), encoding="utf-8")

    model_path = out_dir / "model.rgn"
    log_path = out_dir / "train_log.csv"
    eval_idx = test_idx or train_idx
    test_pairs = degraded_pairs(cfg, pairs, eval_idx)
    test_names = [names[i] for i in eval_idx]
    ssim_cfg = cfg.loss_config().ssim
    history_lines = ["iter,block,ssim,psnr"]
    with open(log_path, "w", encoding="utf-8") as fh:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        fh.write(f"# started {stamp}\n")
        fh.write(log_header(cfg.blocks) + "\n")

        def on_iteration(it, values, clamps):
            fh.write(",".join([str(it), *(f"{v:.8g}" for v in values), str(clamps)]) + "\n")
            if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
                rep = evaluate(model, test_pairs, test_names, per_block=True, ssim_cfg=ssim_cfg)
                for b in rep.blocks:
                    s_, p_ = rep.mean(b)
                    history_lines.append(f"{it + 1},{b},{s_:.6f},{format_psnr(p_)}")
                (out_dir / "eval_history.csv").write_text("\n".join(history_lines) + "\n")

        def on_checkpoint(it, model):
            save(model, model_path)

        model = ResGuideModel.initialized(cfg.model_config(), cfg.seed, cfg.precision)
        if cfg.iterations == 0 or cfg.checkpoint_every:
            save(model, model_path)
        state = train_model(cfg, degraded_pairs(cfg, pairs, train_idx), model=model,
                            on_iteration=on_iteration, on_checkpoint=on_checkpoint)
    save(state.model, model_path)

    report = evaluate(state.model, test_pairs, test_names, per_block=True, ssim_cfg=ssim_cfg)
    (out_dir / "eval_report.csv").write_text(report.to_csv())
    return TrainResult(state.model, report, state.history, out_dir)
